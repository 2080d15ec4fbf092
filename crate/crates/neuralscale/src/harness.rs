//! Matched-budget comparison protocol: derive a width configuration per
//! (method, budget), train fresh networks from scratch over several seeds,
//! and aggregate best-epoch validation accuracy.
//!
//! Methods: uniform width scaling found by grid search, a prune-to-half
//! then uniformly rescale baseline, and the full prune/fit/regenerate
//! refinement at a chosen iteration count. Cells are independent, so the
//! training fan-out runs data-parallel with keyed, order-independent results.

use std::fs;
use std::path::Path;

use crate::arch::{count_params, ArchSpec, WidthConfig};
use crate::dataset::Dataset;
use crate::descent::{architecture_descent, DescentConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::network::Network;
use crate::prune::{gate_importance, prune_step, PruneConfig, PruneStepOutcome};
use crate::scaler::TauDescentOpts;
use crate::train::{evaluate, train, BatchSampler, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Uniform,
    MorphnetTaylor,
    NeuralScale { iterations: usize },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Uniform => "uniform".into(),
            Method::MorphnetTaylor => "morphnet-taylor".into(),
            Method::NeuralScale { iterations } => format!("neuralscale-iter{iterations}"),
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        if s == "uniform" {
            return Ok(Method::Uniform);
        }
        if s == "morphnet-taylor" {
            return Ok(Method::MorphnetTaylor);
        }
        if let Some(rest) = s.strip_prefix("neuralscale-iter") {
            let iterations: usize = rest
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad method '{s}'")))?;
            if iterations < 1 {
                return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
            }
            return Ok(Method::NeuralScale { iterations });
        }
        Err(Error::InvalidArgument(format!(
            "unknown method '{s}' (expected uniform, morphnet-taylor, or neuralscale-iterN)"
        )))
    }
}

/// Closest-count integer configuration from scaling a width vector by a
/// searched constant multiplier, floors at 1 per layer.
fn match_scaled(
    arch: &ArchSpec,
    base: &WidthConfig,
    tau_hat: u64,
) -> Result<(WidthConfig, u64, f64)> {
    let scaled = |m: f64| -> WidthConfig {
        WidthConfig::new(
            base.widths
                .iter()
                .map(|&w| crate::arch::round_width(w as f64 * m))
                .collect(),
        )
    };
    let count_at = |m: f64| -> Result<u64> { count_params(arch, &scaled(m)) };
    let minimum = count_params(arch, &WidthConfig::new(vec![1; base.len()]))?;
    if tau_hat < minimum {
        return Err(Error::InfeasibleBudget { target: tau_hat, minimum });
    }
    let target = tau_hat as f64;
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    let c1 = count_at(1.0)?;
    let mut best = ((c1 as f64 - target).abs(), 1.0f64, c1);
    if (c1 as f64) < target {
        let mut ok = false;
        for _ in 0..60 {
            hi *= 2.0;
            let c = count_at(hi)?;
            if (c as f64 - target).abs() < best.0 {
                best = ((c as f64 - target).abs(), hi, c);
            }
            if c as f64 >= target {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::NoBracket("multiplier search exceeded 2^60".into()));
        }
    } else {
        let mut ok = false;
        for _ in 0..60 {
            lo /= 2.0;
            let c = count_at(lo)?;
            if (c as f64 - target).abs() < best.0 {
                best = ((c as f64 - target).abs(), lo, c);
            }
            if c as f64 <= target {
                ok = true;
                break;
            }
        }
        if !ok {
            // The all-ones floor guarantees this terminates above; keep the
            // best candidate anyway.
            ok = best.2 >= minimum;
            if !ok {
                return Err(Error::NoBracket("multiplier search underflow".into()));
            }
        }
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        let c = count_at(mid)?;
        let err = (c as f64 - target).abs();
        if err < best.0 || (err == best.0 && c < best.2) {
            best = (err, mid, c);
        }
        if c as f64 >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (_, m, achieved) = best;
    Ok((scaled(m), achieved, m))
}

/// Uniform-scaling baseline: search the constant width multiplier whose
/// integer-rounded configuration counts closest to the budget.
pub fn uniform_match(arch: &ArchSpec, tau_hat: u64) -> Result<WidthConfig> {
    let defaults = arch.default_widths();
    let (w, _, _) = match_scaled(arch, &defaults, tau_hat)?;
    Ok(w)
}

/// Uniform match that also reports the achieved count and ratio.
pub fn uniform_match_detailed(arch: &ArchSpec, tau_hat: u64) -> Result<(WidthConfig, u64, f64)> {
    match_scaled(arch, &arch.default_widths(), tau_hat)
}

/// Survivors of pruning a fresh network until exactly half the gates remain.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfPruneState {
    pub survivor_widths: WidthConfig,
    pub survivor_alive: usize,
    pub initial_gates: usize,
}

/// Prune a freshly trained network until exactly ceil(50%) of its gates
/// survive, ignoring the epsilon stop.
pub fn prune_to_half(
    arch: &ArchSpec,
    widths: &WidthConfig,
    data: &Dataset,
    cfg: &PruneConfig,
) -> Result<HalfPruneState> {
    cfg.validate()?;
    data.validate()?;
    let mut net = Network::init(arch, widths, cfg.seed)?;
    let mut ws = net.make_workspace();
    let mut sampler = BatchSampler::new(data.train.n, cfg.batch_size, cfg.seed);
    let batches = sampler.batches_per_epoch();
    for epoch in 0..cfg.pretrain_epochs {
        let lr = cfg.pretrain_lr / cfg.pretrain_decay_factor.powi((epoch / 10) as i32);
        for _ in 0..batches {
            let idxs = sampler.next_batch();
            let (loss, _) = crate::train::train_batch(
                &mut net,
                &mut ws,
                &data.train,
                &idxs,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step: 0 });
            }
        }
    }
    let total = net.total_gates();
    let target_alive = total.div_ceil(2);
    let k_cfg = cfg.prune_per_step.resolve(total);
    while net.alive_gates() > target_alive {
        let lr = cfg.pretrain_lr / cfg.pretrain_decay_factor.powi((cfg.pretrain_epochs / 10) as i32);
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
        let k = k_cfg.min(net.alive_gates() - target_alive);
        match prune_step(&mut net, &scores, k)? {
            PruneStepOutcome::Removed(_) => {}
            PruneStepOutcome::Exhausted => break,
        }
    }
    Ok(HalfPruneState {
        survivor_widths: net.alive_widths(),
        survivor_alive: net.alive_gates(),
        initial_gates: total,
    })
}

/// The prune-to-half baseline configuration at a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphnetConfig {
    pub widths: WidthConfig,
    pub achieved: u64,
    pub multiplier: f64,
    pub half_state: HalfPruneState,
}

/// Prune a fresh network to 50% surviving gates, then uniformly rescale the
/// survivor widths to meet the budget.
pub fn morphnet_taylor(
    arch: &ArchSpec,
    data: &Dataset,
    tau_hat: u64,
    cfg: &PruneConfig,
) -> Result<MorphnetConfig> {
    let half = prune_to_half(arch, &arch.default_widths(), data, cfg)?;
    scale_survivors(arch, &half, tau_hat)
}

/// Rescale previously harvested survivors to a budget.
pub fn scale_survivors(
    arch: &ArchSpec,
    half: &HalfPruneState,
    tau_hat: u64,
) -> Result<MorphnetConfig> {
    let (widths, achieved, multiplier) = match_scaled(arch, &half.survivor_widths, tau_hat)?;
    Ok(MorphnetConfig { widths, achieved, multiplier, half_state: half.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub budgets: Vec<u64>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub base_seed: u64,
    pub train: TrainSchedule,
    pub prune: PruneConfig,
    pub scale: TauDescentOpts,
}

/// One (method, budget) row of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCell {
    pub method: String,
    pub budget: u64,
    pub widths: WidthConfig,
    pub achieved: u64,
    /// (seed, best validation accuracy) per repeat.
    pub seed_accuracies: Vec<(u64, f64)>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// ceil(50%) alive-gate count of the morphnet intermediate state.
    pub halfway_alive: Option<usize>,
    pub infeasible: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub arch_name: String,
    pub repeats: usize,
    pub cells: Vec<MethodCell>,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    pub fn cell(&self, method: &str, budget: u64) -> Option<&MethodCell> {
        self.cells.iter().find(|c| c.method == method && c.budget == budget)
    }
}

/// Train one fresh network from scratch and track the best validation
/// accuracy over the epochs.
fn best_val_accuracy(
    arch: &ArchSpec,
    widths: &WidthConfig,
    data: &Dataset,
    sched: &TrainSchedule,
    seed: u64,
) -> Result<f64> {
    let mut net = Network::init(arch, widths, seed)?;
    let mut best = 0.0f64;
    for epoch in 0..sched.epochs {
        let mut one = sched.clone();
        one.epochs = 1;
        one.learning_rate = sched.lr_at(epoch);
        one.decay_epochs = vec![];
        one.seed = seed.wrapping_add(epoch as u64);
        train(&mut net, data, &one)?;
        let (acc, _) = evaluate(&mut net, &data.val)?;
        best = best.max(acc);
    }
    Ok(best)
}

/// Run the full comparison: derive configurations, train `repeats` fresh
/// networks per cell, and aggregate mean/min/max of best-epoch accuracy.
pub fn compare(arch: &ArchSpec, data: &Dataset, cfg: &CompareConfig) -> Result<ComparisonReport> {
    if cfg.repeats < 1 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    if cfg.budgets.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidArgument("need at least one budget and method".into()));
    }
    data.validate()?;

    // Share the prune-to-half survivors across budgets; they are
    // budget-independent.
    let mut half_state: Option<HalfPruneState> = None;
    if cfg.methods.contains(&Method::MorphnetTaylor) {
        let mut pcfg = cfg.prune.clone();
        pcfg.seed = cfg.base_seed ^ 0x4A11;
        half_state = Some(prune_to_half(arch, &arch.default_widths(), data, &pcfg)?);
    }

    let mut cells: Vec<MethodCell> = Vec::new();
    for method in &cfg.methods {
        for &budget in &cfg.budgets {
            let derived: Result<(WidthConfig, u64, Option<usize>)> = match method {
                Method::Uniform => {
                    uniform_match_detailed(arch, budget).map(|(w, c, _)| (w, c, None))
                }
                Method::MorphnetTaylor => {
                    let half = half_state.as_ref().expect("derived above");
                    scale_survivors(arch, half, budget)
                        .map(|m| (m.widths, m.achieved, Some(m.half_state.survivor_alive)))
                }
                Method::NeuralScale { iterations } => {
                    let mut dcfg = DescentConfig::new(budget);
                    dcfg.max_iters = *iterations;
                    dcfg.convergence_consecutive = usize::MAX; // always run all K
                    dcfg.prune = cfg.prune.clone();
                    dcfg.scale = cfg.scale;
                    dcfg.base_seed = cfg.base_seed ^ 0x5CA1E;
                    architecture_descent(arch, data, &dcfg, None).map(|h| {
                        let last = h.iterations.last().expect("max_iters >= 1");
                        (last.config.widths.clone(), last.config.achieved_params, None)
                    })
                }
            };
            match derived {
                Ok((widths, achieved, halfway_alive)) => cells.push(MethodCell {
                    method: method.name(),
                    budget,
                    widths,
                    achieved,
                    seed_accuracies: Vec::new(),
                    mean: 0.0,
                    min: 0.0,
                    max: 0.0,
                    halfway_alive,
                    infeasible: None,
                }),
                Err(Error::InfeasibleBudget { target, minimum }) => cells.push(MethodCell {
                    method: method.name(),
                    budget,
                    widths: WidthConfig::new(vec![]),
                    achieved: 0,
                    seed_accuracies: Vec::new(),
                    mean: 0.0,
                    min: 0.0,
                    max: 0.0,
                    halfway_alive: None,
                    infeasible: Some(format!(
                        "budget {target} below minimum achievable {minimum}"
                    )),
                }),
                Err(e) => return Err(e),
            }
        }
    }

    // Training fan-out: every (cell, repeat) job is independent.
    struct Job {
        cell: usize,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        if cell.infeasible.is_none() {
            for r in 0..cfg.repeats {
                jobs.push(Job { cell: ci, seed: cfg.base_seed + 1000 * (r as u64 + 1) + ci as u64 });
            }
        }
    }
    let results: Vec<Result<f64>> = exec::map_indexed(jobs.len(), |j| {
        let job = &jobs[j];
        best_val_accuracy(arch, &cells[job.cell].widths, data, &cfg.train, job.seed)
    });
    for (job, res) in jobs.iter().zip(results) {
        let acc = res?;
        cells[job.cell].seed_accuracies.push((job.seed, acc));
    }
    for cell in &mut cells {
        if cell.infeasible.is_some() {
            continue;
        }
        let accs: Vec<f64> = cell.seed_accuracies.iter().map(|(_, a)| *a).collect();
        cell.mean = accs.iter().sum::<f64>() / accs.len() as f64;
        cell.min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        cell.max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }

    let mut notes = Vec::new();
    // Budget fairness: achieved counts per budget row must sit together.
    for &budget in &cfg.budgets {
        let row: Vec<&MethodCell> = cells
            .iter()
            .filter(|c| c.budget == budget && c.infeasible.is_none())
            .collect();
        for a in &row {
            for b in &row {
                let dev = (a.achieved as f64 - b.achieved as f64).abs() / budget as f64;
                if dev > 0.02 {
                    notes.push(format!(
                        "budget {budget}: {} ({}) and {} ({}) differ by {:.2}% of budget",
                        a.method,
                        a.achieved,
                        b.method,
                        b.achieved,
                        dev * 100.0
                    ));
                }
            }
        }
    }
    // Descriptive parameter-efficiency note at the smallest budget.
    if let Some(&smallest) = cfg.budgets.iter().min() {
        let uniform = cells
            .iter()
            .find(|c| c.method == "uniform" && c.budget == smallest && c.infeasible.is_none());
        let ns = cells
            .iter()
            .filter(|c| c.method.starts_with("neuralscale-iter") && c.budget == smallest)
            .max_by_key(|c| c.method.len());
        if let (Some(u), Some(n)) = (uniform, ns) {
            notes.push(format!(
                "parameter-efficiency note: at the smallest budget {smallest}, {} mean accuracy \
                 {:.4} vs uniform {:.4} (delta {:+.4}); favourable = {}",
                n.method,
                n.mean,
                u.mean,
                n.mean - u.mean,
                n.mean >= u.mean
            ));
        }
    }

    Ok(ComparisonReport { arch_name: arch.name.clone(), repeats: cfg.repeats, cells, notes })
}

/// Write `report.txt` and `accuracy_vs_params.csv` (columns: params, mean,
/// min, max, method) into a directory.
pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut txt = String::new();
    txt.push_str(&format!(
        "comparison report: arch {}, {} repeats per cell\n\n",
        report.arch_name, report.repeats
    ));
    txt.push_str("method budget achieved mean min max\n");
    for c in &report.cells {
        match &c.infeasible {
            Some(reason) => {
                txt.push_str(&format!("{} {} infeasible: {}\n", c.method, c.budget, reason));
            }
            None => {
                txt.push_str(&format!(
                    "{} {} {} {:.6} {:.6} {:.6}\n",
                    c.method, c.budget, c.achieved, c.mean, c.min, c.max
                ));
            }
        }
    }
    txt.push_str("\nper-seed accuracies\n");
    for c in &report.cells {
        if c.infeasible.is_some() {
            continue;
        }
        txt.push_str(&format!("{} {}:", c.method, c.budget));
        for (seed, acc) in &c.seed_accuracies {
            txt.push_str(&format!(" seed={seed} acc={acc:.6}"));
        }
        if let Some(h) = c.halfway_alive {
            txt.push_str(&format!(" halfway_alive={h}"));
        }
        txt.push('\n');
    }
    if !report.notes.is_empty() {
        txt.push_str("\nnotes\n");
        for n in &report.notes {
            txt.push_str(n);
            txt.push('\n');
        }
    }
    fs::write(dir.join("report.txt"), txt)?;

    let mut csv = String::from("params,mean,min,max,method\n");
    for c in &report.cells {
        if c.infeasible.is_some() {
            continue;
        }
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            c.achieved, c.mean, c.min, c.max, c.method
        ));
    }
    fs::write(dir.join("accuracy_vs_params.csv"), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{mlp_with_widths, preset, uniform_widths, InputShape};
    use crate::dataset::gaussian_blobs;
    use crate::prune::PruneCount;

    #[test]
    fn uniform_match_finds_exact_ratio_configs() {
        let arch = preset("vgg11").unwrap();
        let w1 = arch.default_widths();
        let t1 = count_params(&arch, &w1).unwrap();
        assert_eq!(uniform_match(&arch, t1).unwrap(), w1);

        let quarter = uniform_widths(&arch, 0.25).unwrap();
        let tq = count_params(&arch, &quarter).unwrap();
        let got = uniform_match(&arch, tq).unwrap();
        assert_eq!(got, quarter);
        assert!((tq as f64 - 0.58e6).abs() / 0.58e6 < 0.02);
    }

    #[test]
    fn uniform_match_is_idempotent() {
        let arch = preset("mlp").unwrap();
        let w = uniform_match(&arch, 37_000).unwrap();
        let achieved = count_params(&arch, &w).unwrap();
        assert_eq!(uniform_match(&arch, achieved).unwrap(), w);
    }

    #[test]
    fn uniform_match_beats_a_fine_ratio_grid() {
        // Grid-enumeration oracle: no ratio on a fine grid may land closer
        // to the target than the binary-search result.
        let arch = mlp_with_widths("t", InputShape::Features { dim: 9 }, 5, &[40, 28, 12]);
        for target in [3_000u64, 9_000, 21_000] {
            let got = uniform_match(&arch, target).unwrap();
            let err_got =
                (count_params(&arch, &got).unwrap() as f64 - target as f64).abs();
            for i in 1..2000 {
                let r = i as f64 * 0.002;
                let w = uniform_widths(&arch, r).unwrap();
                let err = (count_params(&arch, &w).unwrap() as f64 - target as f64).abs();
                assert!(
                    err_got <= err,
                    "target {target}: grid ratio {r} gives err {err} < {err_got}"
                );
            }
        }
    }

    #[test]
    fn uniform_match_rejects_infeasible_budgets() {
        let arch = preset("mlp").unwrap();
        assert!(matches!(
            uniform_match(&arch, 10),
            Err(Error::InfeasibleBudget { .. })
        ));
    }

    fn quick_prune_cfg(seed: u64) -> PruneConfig {
        PruneConfig {
            pretrain_epochs: 1,
            q_iters: 2,
            prune_per_step: PruneCount::Absolute(3),
            batch_size: 32,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn prune_to_half_keeps_exactly_ceil_half() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[41, 30, 30]);
        let data = gaussian_blobs(8, 3, 96, 48, 3.0, 3);
        let half = prune_to_half(&arch, &arch.default_widths(), &data, &quick_prune_cfg(3)).unwrap();
        assert_eq!(half.initial_gates, 101);
        assert_eq!(half.survivor_alive, 51); // ceil(101/2)
        assert_eq!(
            half.survivor_widths.widths.iter().sum::<usize>(),
            half.survivor_alive
        );
    }

    #[test]
    fn morphnet_multiplier_is_one_at_its_own_count() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[40, 30, 30]);
        let data = gaussian_blobs(8, 3, 96, 48, 3.0, 5);
        let half = prune_to_half(&arch, &arch.default_widths(), &data, &quick_prune_cfg(5)).unwrap();
        let own = count_params(&arch, &half.survivor_widths).unwrap();
        let cfg = scale_survivors(&arch, &half, own).unwrap();
        assert_eq!(cfg.widths, half.survivor_widths);
        assert_eq!(cfg.achieved, own);
    }

    #[test]
    fn morphnet_multiplier_near_two_for_quadratic_growth() {
        // On a conv-dominated architecture the parameter count grows about
        // quadratically in the multiplier, so a 4x budget needs roughly 2x.
        let arch = preset("vgg11").unwrap();
        let base = uniform_widths(&arch, 0.25).unwrap();
        let half = HalfPruneState {
            survivor_widths: base.clone(),
            survivor_alive: base.widths.iter().sum(),
            initial_gates: 2 * base.widths.iter().sum::<usize>(),
        };
        let own = count_params(&arch, &base).unwrap();
        let cfg = scale_survivors(&arch, &half, 4 * own).unwrap();
        assert!(
            (cfg.multiplier - 2.0).abs() <= 0.2,
            "multiplier {}",
            cfg.multiplier
        );
        let recount = count_params(&arch, &cfg.widths).unwrap();
        assert_eq!(recount, cfg.achieved);
        assert!((recount as f64 - 4.0 * own as f64).abs() / (4.0 * own as f64) <= 0.01);
    }

    fn quick_compare_cfg(methods: Vec<Method>, budgets: Vec<u64>, repeats: usize) -> CompareConfig {
        CompareConfig {
            budgets,
            methods,
            repeats,
            base_seed: 11,
            train: TrainSchedule {
                epochs: 3,
                decay_epochs: vec![2],
                batch_size: 32,
                ..Default::default()
            },
            prune: quick_prune_cfg(11),
            scale: TauDescentOpts { rel_tol: 0.01, ..Default::default() },
        }
    }

    #[test]
    fn single_cell_report() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[32, 24]);
        let data = gaussian_blobs(8, 3, 96, 48, 3.0, 7);
        let budget = count_params(&arch, &uniform_widths(&arch, 0.5).unwrap()).unwrap();
        let report = compare(
            &arch,
            &data,
            &quick_compare_cfg(vec![Method::Uniform], vec![budget], 1),
        )
        .unwrap();
        assert_eq!(report.cells.len(), 1);
        let c = &report.cells[0];
        assert!((0.0..=1.0).contains(&c.mean));
        assert_eq!(c.seed_accuracies.len(), 1);
    }

    #[test]
    fn matched_budgets_stay_within_two_percent() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[40, 30, 20]);
        let data = gaussian_blobs(8, 3, 96, 48, 3.0, 9);
        let budget = count_params(&arch, &uniform_widths(&arch, 0.6).unwrap()).unwrap();
        let report = compare(
            &arch,
            &data,
            &quick_compare_cfg(
                vec![Method::Uniform, Method::MorphnetTaylor],
                vec![budget],
                1,
            ),
        )
        .unwrap();
        let cells: Vec<_> = report.cells.iter().filter(|c| c.infeasible.is_none()).collect();
        assert_eq!(cells.len(), 2);
        let dev = (cells[0].achieved as f64 - cells[1].achieved as f64).abs() / budget as f64;
        assert!(dev <= 0.02, "deviation {dev}");
    }

    #[test]
    fn aggregates_recompute_from_per_seed_values() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[32, 24]);
        let data = gaussian_blobs(8, 3, 96, 48, 2.0, 13);
        let budget = count_params(&arch, &uniform_widths(&arch, 0.5).unwrap()).unwrap();
        let report = compare(
            &arch,
            &data,
            &quick_compare_cfg(
                vec![Method::Uniform, Method::NeuralScale { iterations: 1 }],
                vec![budget],
                5,
            ),
        )
        .unwrap();
        for c in &report.cells {
            let accs: Vec<f64> = c.seed_accuracies.iter().map(|(_, a)| *a).collect();
            assert_eq!(accs.len(), 5);
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(c.mean.to_bits(), mean.to_bits());
            assert_eq!(c.min.to_bits(), min.to_bits());
            assert_eq!(c.max.to_bits(), max.to_bits());
            assert!(c.max >= c.min);
        }
        // The min/max band exists in the report (width >= 0 by construction).
        assert!(report.notes.iter().any(|n| n.contains("parameter-efficiency note")));
    }

    #[test]
    fn infeasible_budget_rows_are_marked_not_fatal() {
        let arch = mlp_with_widths("t", InputShape::Features { dim: 8 }, 3, &[32, 24]);
        let data = gaussian_blobs(8, 3, 96, 48, 3.0, 15);
        let ok_budget = count_params(&arch, &uniform_widths(&arch, 0.5).unwrap()).unwrap();
        let report = compare(
            &arch,
            &data,
            &quick_compare_cfg(vec![Method::Uniform], vec![10, ok_budget], 1),
        )
        .unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells[0].infeasible.is_some());
        assert!(report.cells[1].infeasible.is_none());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!(Method::parse("uniform").unwrap(), Method::Uniform);
        assert_eq!(Method::parse("morphnet-taylor").unwrap(), Method::MorphnetTaylor);
        assert_eq!(
            Method::parse("neuralscale-iter15").unwrap(),
            Method::NeuralScale { iterations: 15 }
        );
        assert!(Method::parse("magic").is_err());
    }
}
