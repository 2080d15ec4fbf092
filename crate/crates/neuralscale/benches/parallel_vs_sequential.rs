//! Rayon vs sequential execution of the data-parallel inner loops.
//!
//! Both paths produce bit-identical results (fixed-order reductions inside
//! owned output slices); this bench measures what the parallel feature buys
//! on the two hot workloads: batch forward/backward and the power-law fit.
//!
//! Run with: cargo bench -p neuralscale

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use neuralscale::arch::{mlp_with_widths, preset, uniform_widths, InputShape};
use neuralscale::dataset::{gaussian_blobs, textures};
use neuralscale::exec;
use neuralscale::network::{gather_batch, softmax_cross_entropy, Mode, Network};
use neuralscale::powerlaw::{solve_theta, DesignMatrices};

fn conv_batch_step(c: &mut Criterion) {
    let arch = preset("vgg11").unwrap();
    let widths = uniform_widths(&arch, 0.25).unwrap();
    let data = textures(10, 64, 32, 16, 3);
    let idxs: Vec<usize> = (0..32).collect();
    let (x, labels) = gather_batch(&data.train, &idxs);

    let mut group = c.benchmark_group("conv_batch_forward_backward");
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_function(name, |b| {
            exec::set_parallel(parallel);
            let mut net = Network::init(&arch, &widths, 7).unwrap();
            let mut ws = net.make_workspace();
            b.iter(|| {
                net.zero_grads();
                let out = net.forward(&mut ws, black_box(&x), Mode::Train);
                let (loss, dlogits) = softmax_cross_entropy(ws.logits(out), &labels);
                net.backward(&mut ws, &dlogits);
                black_box(loss)
            });
            exec::set_parallel(true);
        });
    }
    group.finish();
}

fn mlp_batch_step(c: &mut Criterion) {
    let arch = mlp_with_widths("bench", InputShape::Features { dim: 64 }, 10, &[256, 256, 128]);
    let widths = arch.default_widths();
    let data = gaussian_blobs(64, 10, 128, 64, 3.0, 5);
    let idxs: Vec<usize> = (0..64).collect();
    let (x, labels) = gather_batch(&data.train, &idxs);

    let mut group = c.benchmark_group("mlp_batch_forward_backward");
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_function(name, |b| {
            exec::set_parallel(parallel);
            let mut net = Network::init(&arch, &widths, 7).unwrap();
            let mut ws = net.make_workspace();
            b.iter(|| {
                net.zero_grads();
                let out = net.forward(&mut ws, black_box(&x), Mode::Train);
                let (loss, dlogits) = softmax_cross_entropy(ws.logits(out), &labels);
                net.backward(&mut ws, &dlogits);
                black_box(loss)
            });
            exec::set_parallel(true);
        });
    }
    group.finish();
}

fn powerlaw_fit(c: &mut Criterion) {
    let mut rng = neuralscale::rng::Rng::from_seed(11);
    let n = 200;
    let layers = 17;
    let taus: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.uniform_in(3.0, 7.0))).collect();
    let dm = DesignMatrices {
        ln_tau: taus.iter().map(|t| t.ln()).collect(),
        ln_phi: taus
            .iter()
            .map(|t| {
                (0..layers)
                    .map(|l| ((1.0 + l as f64) * t.powf(0.3 + 0.02 * l as f64)).ln())
                    .collect()
            })
            .collect(),
    };
    c.bench_function("powerlaw_fit_200x17", |b| {
        b.iter(|| solve_theta(black_box(&dm)).unwrap())
    });
}

criterion_group!(benches, conv_batch_step, mlp_batch_step, powerlaw_fit);
criterion_main!(benches);
