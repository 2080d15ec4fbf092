//! The outer refinement loop: prune, fit, regenerate at a fixed budget,
//! feeding each iteration's emitted configuration into the next as its
//! starting point. Every iteration re-initializes and retrains from scratch
//! with seed `base_seed + iteration`, so a history reproduces bit-exactly
//! and can resume from the last completed iteration after an interruption.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, WidthConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::harness::uniform_match;
use crate::io;
use crate::powerlaw::{build_design, solve_theta, ScalingParams};
use crate::prune::{iterative_prune, PruneConfig};
use crate::scaler::{generate_widths, ScaledConfig, TauDescentOpts};

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    pub tau_hat: u64,
    pub max_iters: usize,
    /// Relative width-change threshold treated as "minuscule".
    pub convergence_threshold: f64,
    /// Consecutive below-threshold iterations required to stop.
    pub convergence_consecutive: usize,
    pub prune: PruneConfig,
    pub scale: TauDescentOpts,
    pub base_seed: u64,
}

impl DescentConfig {
    pub fn new(tau_hat: u64) -> Self {
        DescentConfig {
            tau_hat,
            max_iters: 15,
            convergence_threshold: 0.02,
            convergence_consecutive: 2,
            prune: PruneConfig::default(),
            scale: TauDescentOpts::default(),
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentIteration {
    pub index: usize,
    pub seed: u64,
    pub start_widths: WidthConfig,
    pub params: ScalingParams,
    pub config: ScaledConfig,
    /// Relative width change against the iteration's starting configuration
    /// (the previous iteration's output, or the uniform match for iteration 0).
    pub delta: f64,
    pub trajectory_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentHistory {
    pub arch_name: String,
    pub tau_hat: u64,
    pub base_seed: u64,
    pub iterations: Vec<DescentIteration>,
    pub converged: bool,
}

/// Total relative width movement: sum |next - prev| / sum prev.
pub fn convergence_delta(prev: &WidthConfig, next: &WidthConfig) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::WidthLengthMismatch { expected: prev.len(), got: next.len() });
    }
    let num: f64 = prev
        .widths
        .iter()
        .zip(&next.widths)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    let den: f64 = prev.widths.iter().map(|&a| a as f64).sum();
    Ok(num / den)
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryManifest {
    schema: String,
    arch_name: String,
    tau_hat: u64,
    base_seed: u64,
    completed: usize,
    converged: bool,
}

const HISTORY_SCHEMA: &str = "neuralscale/history/1";

fn iter_dir(out_dir: &Path, i: usize) -> PathBuf {
    out_dir.join(format!("iter_{i:03}"))
}

fn write_iteration(out_dir: &Path, arch: &ArchSpec, it: &DescentIteration) -> Result<PathBuf> {
    let dir = iter_dir(out_dir, it.index);
    fs::create_dir_all(&dir)?;
    io::save_scaling(&dir.join("scaling.txt"), &arch.name, &it.params)?;
    io::save_widths(&dir.join("widths.txt"), &arch.name, &it.config)?;
    let m = serde_json::json!({
        "schema": "neuralscale/history-iteration/1",
        "index": it.index,
        "seed": it.seed,
        "start_widths": it.start_widths.widths,
        "delta": it.delta,
    });
    fs::write(dir.join("iteration.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(dir)
}

fn load_iteration(out_dir: &Path, i: usize) -> Result<Option<DescentIteration>> {
    let dir = iter_dir(out_dir, i);
    let meta_path = dir.join("iteration.json");
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    let (_, params) = io::load_scaling(&dir.join("scaling.txt"))?;
    let saved = io::load_widths(&dir.join("widths.txt"))?;
    let start_widths: Vec<usize> = meta["start_widths"]
        .as_array()
        .ok_or_else(|| Error::Parse { line: 0, msg: "start_widths missing".into() })?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    let traj = dir.join("trajectory.txt");
    Ok(Some(DescentIteration {
        index: i,
        seed: meta["seed"].as_u64().unwrap_or(0),
        start_widths: WidthConfig::new(start_widths),
        params,
        config: saved.config,
        delta: meta["delta"].as_f64().unwrap_or(f64::NAN),
        trajectory_path: traj.exists().then_some(traj),
    }))
}

fn write_history_manifest(out_dir: &Path, h: &DescentHistory) -> Result<()> {
    let m = HistoryManifest {
        schema: HISTORY_SCHEMA.into(),
        arch_name: h.arch_name.clone(),
        tau_hat: h.tau_hat,
        base_seed: h.base_seed,
        completed: h.iterations.len(),
        converged: h.converged,
    };
    fs::write(out_dir.join("history.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

/// Run (or resume) architecture descent.
///
/// Iteration 0 starts from the defaults uniformly matched to the budget; each
/// iteration prunes a fresh network from its starting widths, fits the
/// scaling rule, and regenerates at the same budget. With an output
/// directory, completed iterations are serialized as they finish and an
/// interrupted run picks up after the last completed one.
pub fn architecture_descent(
    arch: &ArchSpec,
    data: &Dataset,
    cfg: &DescentConfig,
    out_dir: Option<&Path>,
) -> Result<DescentHistory> {
    if cfg.max_iters < 1 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    cfg.prune.validate()?;
    cfg.scale.validate()?;

    let mut history = DescentHistory {
        arch_name: arch.name.clone(),
        tau_hat: cfg.tau_hat,
        base_seed: cfg.base_seed,
        iterations: Vec::new(),
        converged: false,
    };

    // Resume from a previous run when the output directory already has one.
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let manifest_path = dir.join("history.json");
        if manifest_path.exists() {
            let m: HistoryManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
            if m.schema != HISTORY_SCHEMA {
                return Err(Error::SchemaMismatch { expected: HISTORY_SCHEMA.into(), got: m.schema });
            }
            if m.arch_name != arch.name || m.tau_hat != cfg.tau_hat || m.base_seed != cfg.base_seed
            {
                return Err(Error::InvalidArgument(format!(
                    "existing history at {} was produced by a different run \
                     (arch {}, target {}, seed {})",
                    dir.display(),
                    m.arch_name,
                    m.tau_hat,
                    m.base_seed
                )));
            }
            for i in 0..m.completed {
                match load_iteration(dir, i)? {
                    Some(it) => history.iterations.push(it),
                    None => break,
                }
            }
            history.converged = m.converged && history.iterations.len() == m.completed;
        }
    }

    let mut current = match history.iterations.last() {
        Some(it) => it.config.widths.clone(),
        None => uniform_match(arch, cfg.tau_hat)?,
    };

    while history.iterations.len() < cfg.max_iters && !history.converged {
        let index = history.iterations.len();
        let seed = cfg.base_seed + index as u64;
        let mut prune_cfg = cfg.prune.clone();
        prune_cfg.seed = seed;

        let outcome = iterative_prune(arch, &current, data, &prune_cfg)?;
        let dm = build_design(&outcome.trajectory)?;
        let params = solve_theta(&dm)?;
        let config = generate_widths(&params, arch, cfg.tau_hat, &cfg.scale)?;
        let delta = convergence_delta(&current, &config.widths)?;

        let mut it = DescentIteration {
            index,
            seed,
            start_widths: current.clone(),
            params,
            config,
            delta,
            trajectory_path: None,
        };
        if let Some(dir) = out_dir {
            let idir = write_iteration(dir, arch, &it)?;
            let tpath = idir.join("trajectory.txt");
            io::save_trajectory(&tpath, &outcome.trajectory)?;
            it.trajectory_path = Some(tpath);
        }
        current = it.config.widths.clone();
        history.iterations.push(it);

        let n = history.iterations.len();
        if n >= cfg.convergence_consecutive {
            let tail = &history.iterations[n - cfg.convergence_consecutive..];
            history.converged = tail.iter().all(|it| it.delta <= cfg.convergence_threshold);
        }
        if let Some(dir) = out_dir {
            write_history_manifest(dir, &history)?;
        }
    }
    Ok(history)
}
