//! Prints the JSON document of a small custom architecture.

fn main() {
    let arch = neuralscale::arch::ArchSpec {
        name: "tiny-conv".into(),
        family: neuralscale::arch::Family::FeedforwardConv,
        layers: vec![neuralscale::arch::LayerSpec {
            kind: neuralscale::arch::LayerKind::Conv { kernel: (3, 3) },
            width: neuralscale::arch::WidthRule::Prunable { default: 8 },
            has_norm_gate: true,
            block_id: None,
            stride: 1,
            pool_after: true,
        }],
        input_shape: neuralscale::arch::InputShape::Image { channels: 3, height: 16, width: 16 },
        num_classes: 3,
        expansion_factor: None,
    };
    let dir = std::env::temp_dir().join("arch_example.json");
    neuralscale::io::save_arch(&dir, &arch).unwrap();
    println!("{}", std::fs::read_to_string(&dir).unwrap());
}
