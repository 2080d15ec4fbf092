//! End-to-end library pipeline on convolutional families: prune a small
//! network, fit the growth rule, and regenerate at a budget. Exercises the
//! trajectory bookkeeping (exact recounts, strict decrease) on architectures
//! with derived widths and shortcuts, not just dense chains.

use neuralscale::arch::{
    count_params, ArchSpec, Family, InputShape, LayerKind, LayerSpec, WidthConfig, WidthRule,
};
use neuralscale::dataset::textures;
use neuralscale::powerlaw::{build_design, solve_theta};
use neuralscale::prune::{iterative_prune, PruneConfig, PruneCount};
use neuralscale::scaler::{generate_widths, TauDescentOpts};

fn conv(width: usize, block: Option<usize>, stride: usize) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv { kernel: (3, 3) },
        width: WidthRule::Prunable { default: width },
        has_norm_gate: true,
        block_id: block,
        stride,
        pool_after: false,
    }
}

fn small_conv_chain() -> ArchSpec {
    ArchSpec {
        name: "pipe-conv".into(),
        family: Family::FeedforwardConv,
        layers: vec![conv(10, None, 1), conv(14, None, 2), conv(12, None, 1)],
        input_shape: InputShape::Image { channels: 3, height: 8, width: 8 },
        num_classes: 3,
        expansion_factor: None,
    }
}

fn small_bottleneck() -> ArchSpec {
    let mut layers = vec![conv(8, None, 1)];
    for (b, (out, stride)) in [(10usize, 1usize), (12, 2)].into_iter().enumerate() {
        layers.push(LayerSpec {
            kind: LayerKind::PointwiseConv,
            width: WidthRule::Expansion { factor: 3 },
            has_norm_gate: true,
            block_id: Some(b),
            stride: 1,
            pool_after: false,
        });
        layers.push(LayerSpec {
            kind: LayerKind::DepthwiseConv { kernel: (3, 3) },
            width: WidthRule::MatchInput,
            has_norm_gate: true,
            block_id: Some(b),
            stride,
            pool_after: false,
        });
        layers.push(LayerSpec {
            kind: LayerKind::PointwiseConv,
            width: WidthRule::Prunable { default: out },
            has_norm_gate: true,
            block_id: Some(b),
            stride: 1,
            pool_after: false,
        });
    }
    ArchSpec {
        name: "pipe-btl".into(),
        family: Family::InvertedBottleneck,
        layers,
        input_shape: InputShape::Image { channels: 3, height: 8, width: 8 },
        num_classes: 3,
        expansion_factor: Some(3),
    }
}

fn quick_cfg(seed: u64) -> PruneConfig {
    PruneConfig {
        pretrain_epochs: 1,
        q_iters: 1,
        prune_per_step: PruneCount::Absolute(2),
        batch_size: 16,
        seed,
        ..Default::default()
    }
}

fn check_family_pipeline(arch: ArchSpec, seed: u64) {
    arch.validate().unwrap();
    let data = textures(arch.num_classes, 48, 24, 8, seed);
    let outcome = iterative_prune(&arch, &arch.default_widths(), &data, &quick_cfg(seed)).unwrap();

    // Exact recount of every record, including derived expansion widths and
    // shortcut projections, and strict decrease of tau.
    for rec in &outcome.trajectory.records {
        assert_eq!(
            rec.tau,
            count_params(&arch, &WidthConfig::new(rec.phi.clone())).unwrap(),
            "{}: stored tau must recount exactly",
            arch.name
        );
    }
    for pair in outcome.trajectory.records.windows(2) {
        assert!(pair[1].tau < pair[0].tau, "{}: tau must strictly decrease", arch.name);
    }
    assert!(outcome.trajectory.records.len() >= 2, "{}: need a fittable trajectory", arch.name);

    // Fit and regenerate somewhere inside the harvested range.
    let dm = build_design(&outcome.trajectory).unwrap();
    let params = solve_theta(&dm).unwrap();
    let taus: Vec<u64> = outcome.trajectory.records.iter().map(|r| r.tau).collect();
    let target = (taus[0] + taus[taus.len() - 1]) / 2;
    let opts = TauDescentOpts { rel_tol: 0.01, ..Default::default() };
    let cfg = generate_widths(&params, &arch, target, &opts).unwrap();
    assert!(cfg.converged, "{}: achieved {} vs target {target}", arch.name, cfg.achieved_params);
    assert_eq!(
        cfg.achieved_params,
        count_params(&arch, &cfg.widths).unwrap(),
        "{}: emitted config must recount exactly",
        arch.name
    );
    assert!(neuralscale::arch::validate_widths(&arch, &cfg.widths).is_valid());
}

#[test]
fn conv_chain_pipeline_round_trip() {
    check_family_pipeline(small_conv_chain(), 31);
}

#[test]
fn bottleneck_pipeline_round_trip() {
    check_family_pipeline(small_bottleneck(), 37);
}

#[test]
fn training_is_bit_identical_across_execution_modes() {
    // The concurrency contract: every parallel loop owns disjoint output
    // slices with fixed-order reductions, so rayon and sequential execution
    // must produce the same bits, not just close numbers.
    let arch = small_conv_chain();
    let data = textures(arch.num_classes, 64, 32, 8, 5);
    let sched = neuralscale::train::TrainSchedule {
        epochs: 2,
        decay_epochs: vec![],
        batch_size: 16,
        seed: 5,
        ..Default::default()
    };
    let run = |parallel: bool| {
        neuralscale::exec::set_parallel(parallel);
        let mut net =
            neuralscale::network::Network::init(&arch, &arch.default_widths(), 5).unwrap();
        let hist = neuralscale::train::train(&mut net, &data, &sched).unwrap();
        let (acc, loss) = neuralscale::train::evaluate(&mut net, &data.val).unwrap();
        neuralscale::exec::set_parallel(true);
        let mut bits: Vec<u64> = hist.iter().map(|x| x.to_bits()).collect();
        bits.push(acc.to_bits());
        bits.push(loss.to_bits());
        for p in net.params() {
            bits.extend(p.data.iter().map(|x| x.to_bits()));
        }
        bits
    };
    assert_eq!(run(false), run(true));
}
