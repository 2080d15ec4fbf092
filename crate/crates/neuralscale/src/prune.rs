//! Iterative gated pruning: pre-train, then alternate short training with
//! importance-ranked structured pruning, recording the (total parameter
//! count, width vector) trajectory.
//!
//! Importance of a channel is the squared gradient of the loss with respect
//! to its gate, averaged over the training iterations between prune steps.
//! Recording starts once every prunable layer has lost at least one channel;
//! the loop stops when the alive-gate count drops below a fixed fraction of
//! the initial total (default 5%), with every layer floored at one channel.

use crate::arch::{count_params, ArchSpec, WidthConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::{Network, Workspace};
use crate::train::{train_batch, BatchSampler};

/// How many gates to remove per prune step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneCount {
    Absolute(usize),
    /// Fraction of the initial total gate count, floored at one.
    Fraction(f64),
}

impl PruneCount {
    pub fn resolve(&self, total_gates: usize) -> usize {
        match self {
            PruneCount::Absolute(k) => (*k).max(1),
            PruneCount::Fraction(f) => ((f * total_gates as f64).round() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    /// Pre-training epochs before any pruning.
    pub pretrain_epochs: usize,
    /// Initial learning rate; divides by `pretrain_decay_factor` every 10
    /// epoch-equivalents, counting on through the prune loop.
    pub pretrain_lr: f64,
    pub pretrain_decay_factor: f64,
    /// Training iterations between prune steps.
    pub q_iters: usize,
    pub prune_per_step: PruneCount,
    /// Stop once alive gates fall below this fraction of the initial total.
    pub epsilon_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            pretrain_epochs: 10,
            pretrain_lr: 0.1,
            pretrain_decay_factor: 10.0,
            q_iters: 30,
            prune_per_step: PruneCount::Fraction(0.02),
            epsilon_fraction: 0.05,
            momentum: 0.5,
            weight_decay: 5e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_iters < 1 {
            return Err(Error::InvalidArgument("q_iters must be >= 1".into()));
        }
        if self.epsilon_fraction.is_nan() || self.epsilon_fraction <= 0.0 || self.epsilon_fraction >= 1.0 {
            return Err(Error::InvalidArgument(
                "epsilon_fraction must be in (0, 1)".into(),
            ));
        }
        if self.pretrain_lr.is_nan() || self.pretrain_lr <= 0.0 {
            return Err(Error::InvalidArgument("pretrain_lr must be > 0".into()));
        }
        if let PruneCount::Fraction(f) = self.prune_per_step {
            if f.is_nan() || f <= 0.0 || f >= 1.0 {
                return Err(Error::InvalidArgument(
                    "prune fraction must be in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    /// Learning rate after `epoch_equivalents` passes over the data.
    fn lr_at(&self, epoch_equivalents: usize) -> f64 {
        self.pretrain_lr / self.pretrain_decay_factor.powi((epoch_equivalents / 10) as i32)
    }
}

/// One recorded (tau, phi) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub tau: u64,
    pub phi: Vec<usize>,
}

/// Echo of the run configuration carried with a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub arch_name: String,
    pub layer_count: usize,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub q_iters: usize,
    pub prune_per_step: usize,
    pub epsilon_fraction: f64,
    pub initial_gates: usize,
}

/// Ordered (tau, phi) records harvested during iterative pruning.
/// tau strictly decreases along the list and always equals the exact
/// parameter count of its phi.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneStepOutcome {
    /// The (layer, channel) pairs removed this step.
    Removed(Vec<(usize, usize)>),
    /// Fewer than k gates can be removed without emptying a layer.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStepEvent {
    pub step: usize,
    pub removed: Vec<(usize, usize)>,
    pub alive_after: Vec<usize>,
    pub recorded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Alive gates fell below the epsilon fraction of the initial total.
    EpsilonReached,
    /// The per-layer floor made further pruning impossible.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct IterativePruneOutcome {
    pub trajectory: PruneTrajectory,
    pub steps: Vec<PruneStepEvent>,
    pub final_alive: usize,
    pub stop: StopReason,
}

/// Train for `q` mini-batch iterations, accumulating per-gate importance:
/// the squared gate gradient averaged over the q batches. Dead gates score
/// negative infinity so they can never be selected as an alive minimum.
pub fn gate_importance(
    net: &mut Network,
    ws: &mut Workspace,
    data: &Dataset,
    sampler: &mut BatchSampler,
    q: usize,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<Vec<Vec<f64>>> {
    if q < 1 {
        return Err(Error::InvalidArgument("q must be >= 1".into()));
    }
    let mut acc: Vec<Vec<f64>> = (0..net.gate_layers())
        .map(|l| vec![0.0; net.gate(l).z.len()])
        .collect();
    for it in 0..q {
        let idxs = sampler.next_batch();
        let (loss, gate_grads) =
            train_batch(net, ws, &data.train, &idxs, lr, momentum, weight_decay);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step: it });
        }
        for (a, g) in acc.iter_mut().zip(&gate_grads) {
            for (av, gv) in a.iter_mut().zip(g) {
                *av += gv * gv;
            }
        }
    }
    for (l, a) in acc.iter_mut().enumerate() {
        for (c, av) in a.iter_mut().enumerate() {
            if net.gate(l).alive[c] {
                *av /= q as f64;
            } else {
                *av = f64::NEG_INFINITY;
            }
        }
    }
    Ok(acc)
}

/// Remove the k alive gates with globally lowest importance, skipping any
/// gate whose removal would empty its layer (the next-lowest substitutes).
pub fn prune_step(
    net: &mut Network,
    scores: &[Vec<f64>],
    k: usize,
) -> Result<PruneStepOutcome> {
    let layers = net.gate_layers();
    if scores.len() != layers {
        return Err(Error::InvalidArgument(format!(
            "score table has {} layers, network has {layers}",
            scores.len()
        )));
    }
    let mut alive_per_layer: Vec<usize> = (0..layers).map(|l| net.gate(l).alive_count()).collect();
    let removable: usize = alive_per_layer.iter().map(|&a| a.saturating_sub(1)).sum();
    if removable < k {
        return Ok(PruneStepOutcome::Exhausted);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for l in 0..layers {
        let g = net.gate(l);
        for c in 0..g.z.len() {
            if g.alive[c] {
                let s = scores[l][c];
                if s.is_nan() {
                    return Err(Error::NonFinite(format!("importance score at ({l}, {c})")));
                }
                candidates.push((s, l, c));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut removed = Vec::with_capacity(k);
    for (_, l, c) in candidates {
        if removed.len() == k {
            break;
        }
        if alive_per_layer[l] <= 1 {
            continue; // floor rule: never empty a layer
        }
        net.prune_gate(l, c);
        alive_per_layer[l] -= 1;
        removed.push((l, c));
    }
    debug_assert_eq!(removed.len(), k);
    Ok(PruneStepOutcome::Removed(removed))
}

/// The full iterative pruning procedure, starting from `start_widths`.
pub fn iterative_prune(
    arch: &ArchSpec,
    start_widths: &WidthConfig,
    data: &Dataset,
    cfg: &PruneConfig,
) -> Result<IterativePruneOutcome> {
    cfg.validate()?;
    data.validate()?;
    let mut net = Network::init(arch, start_widths, cfg.seed)?;
    let mut ws = net.make_workspace();
    let mut sampler = BatchSampler::new(data.train.n, cfg.batch_size, cfg.seed);
    let batches_per_epoch = sampler.batches_per_epoch();

    // Pre-training phase.
    let mut iterations_done = 0usize;
    for epoch in 0..cfg.pretrain_epochs {
        let lr = cfg.lr_at(epoch);
        for _ in 0..batches_per_epoch {
            let idxs = sampler.next_batch();
            let (loss, _) = train_batch(
                &mut net,
                &mut ws,
                &data.train,
                &idxs,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step: iterations_done });
            }
            iterations_done += 1;
        }
    }

    let total_gates = net.total_gates();
    let layers = net.gate_layers();
    let threshold = cfg.epsilon_fraction * total_gates as f64;
    let k = cfg.prune_per_step.resolve(total_gates);

    let mut touched = vec![0usize; layers];
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    let mut events: Vec<PruneStepEvent> = Vec::new();
    let mut step = 0usize;
    let mut stop = StopReason::EpsilonReached;

    while (net.alive_gates() as f64) >= threshold {
        let epoch_eq = cfg.pretrain_epochs + iterations_done / batches_per_epoch.max(1);
        let lr = cfg.lr_at(epoch_eq);
        let scores = gate_importance(
            &mut net,
            &mut ws,
            data,
            &mut sampler,
            cfg.q_iters,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        )?;
        iterations_done += cfg.q_iters;
        match prune_step(&mut net, &scores, k)? {
            PruneStepOutcome::Exhausted => {
                stop = StopReason::Exhausted;
                break;
            }
            PruneStepOutcome::Removed(removed) => {
                for &(l, _) in &removed {
                    touched[l] += 1;
                }
                let all_touched = touched.iter().all(|&t| t >= 1);
                let alive = net.alive_widths();
                let mut recorded = false;
                if all_touched {
                    let tau = count_params(arch, &alive)?;
                    if let Some(last) = records.last() {
                        debug_assert!(tau < last.tau);
                    }
                    records.push(TrajectoryRecord { step, tau, phi: alive.widths.clone() });
                    recorded = true;
                }
                events.push(PruneStepEvent {
                    step,
                    removed,
                    alive_after: alive.widths,
                    recorded,
                });
                step += 1;
            }
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(IterativePruneOutcome {
        trajectory: PruneTrajectory {
            meta: TrajectoryMeta {
                arch_name: arch.name.clone(),
                layer_count: layers,
                seed: cfg.seed,
                pretrain_epochs: cfg.pretrain_epochs,
                q_iters: cfg.q_iters,
                prune_per_step: k,
                epsilon_fraction: cfg.epsilon_fraction,
                initial_gates: total_gates,
            },
            records,
        },
        steps: events,
        final_alive: net.alive_gates(),
        stop,
    })
}
