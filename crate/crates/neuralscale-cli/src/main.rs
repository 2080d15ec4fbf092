//! Command-line surface for the width-scaling pipeline.
//!
//! Subcommands mirror the pipeline stages: `prune` harvests a trajectory,
//! `fit` turns it into per-layer scaling parameters, `scale` emits a width
//! configuration for a parameter budget, `descend` runs the full refinement
//! loop, `compare` benchmarks methods at matched budgets, `count` evaluates
//! the parameter-count model, and `sweep-pretrain` repeats `descend` across
//! pre-training epoch settings.
//!
//! Exit codes: 0 success, 2 usage, 3 domain error, 4 numerical error,
//! 5 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use neuralscale::arch::{count_params, uniform_widths, ArchSpec, Family, InputShape};
use neuralscale::dataset::{gaussian_blobs, load_dataset, textures, Dataset};
use neuralscale::descent::{architecture_descent, DescentConfig};
use neuralscale::error::{Error, ErrorClass};
use neuralscale::harness::{compare, write_report, CompareConfig, Method};
use neuralscale::io::{
    load_scaling, load_trajectory, load_widths, resolve_arch, save_scaling, save_trajectory,
    save_widths, write_manifest, RunManifest,
};
use neuralscale::powerlaw::{build_design, predict_width, solve_theta};
use neuralscale::prune::{iterative_prune, PruneConfig, PruneCount};
use neuralscale::scaler::{generate_widths, TauDescentOpts, TauMethod};
use neuralscale::train::TrainSchedule;

#[derive(Parser)]
#[command(name = "neuralscale", version, about = "Width scaling by pruning proxy")]
struct Cli {
    /// Base seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Built-in preset (vgg11, resnet18, mobilenetv2, mlp) or a path to an
    /// architecture document.
    #[arg(long, global = true, default_value = "mlp")]
    arch: String,
    /// Force sequential execution of the data-parallel inner loops.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct DataOpts {
    /// Dataset: "blobs", "textures", a .nsds file path, or "auto"
    /// (blobs for dense architectures, textures for convolutional ones).
    #[arg(long, default_value = "auto")]
    data: String,
    #[arg(long, default_value_t = 512)]
    n_train: usize,
    #[arg(long, default_value_t = 256)]
    n_val: usize,
    /// Class-mean separation of the blob generator.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
}

#[derive(Args, Clone)]
struct PruneOpts {
    /// Pre-training epochs before pruning starts.
    #[arg(long, default_value_t = 10)]
    pretrain_epochs: usize,
    /// Training iterations between prune steps.
    #[arg(long, default_value_t = 30)]
    q_iters: usize,
    /// Gates removed per step, as a fraction of the initial total.
    #[arg(long, default_value_t = 0.02)]
    prune_frac: f64,
    /// Stop once alive gates fall below this fraction of the initial total.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

impl PruneOpts {
    fn to_config(&self, seed: u64) -> PruneConfig {
        PruneConfig {
            pretrain_epochs: self.pretrain_epochs,
            pretrain_lr: self.lr,
            pretrain_decay_factor: 10.0,
            q_iters: self.q_iters,
            prune_per_step: PruneCount::Fraction(self.prune_frac),
            epsilon_fraction: self.epsilon,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate the exact parameter count of a configuration.
    Count {
        /// Uniform width multiplier applied to the preset defaults.
        #[arg(long)]
        ratio: Option<f64>,
        /// Width-configuration file to recount instead.
        #[arg(long)]
        widths: Option<PathBuf>,
    },
    /// Run iterative pruning and write the (tau, phi) trajectory.
    Prune {
        /// Starting widths as a uniform multiple of the defaults.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        prune: PruneOpts,
    },
    /// Fit per-layer scaling parameters from a trajectory file.
    Fit {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Emit an integer width configuration meeting a parameter budget.
    Scale {
        /// Scaling-parameters file produced by `fit`.
        #[arg(long)]
        params: PathBuf,
        /// Target parameter count (plain or scientific, e.g. 1e6).
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "bisection")]
        method: String,
        #[arg(long, default_value_t = 0.005)]
        rel_tol: f64,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Iterate prune -> fit -> regenerate at a fixed budget.
    Descend {
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 15)]
        iters: usize,
        #[arg(long, default_value_t = 0.005)]
        rel_tol: f64,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        prune: PruneOpts,
    },
    /// Train methods at matched budgets and write a comparison report.
    Compare {
        /// Comma-separated parameter budgets (plain or scientific).
        #[arg(long)]
        budgets: String,
        /// Comma-separated methods: uniform, morphnet-taylor, neuralscale-iterN.
        #[arg(long, default_value = "uniform,morphnet-taylor,neuralscale-iter1")]
        methods: String,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Training epochs per repeat.
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        prune: PruneOpts,
    },
    /// Repeat `descend` across a list of pre-training epoch counts.
    SweepPretrain {
        #[arg(long)]
        target: String,
        /// Comma-separated pre-training epoch values, e.g. 0,2,5,10.
        #[arg(long)]
        p_values: String,
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        prune: PruneOpts,
    },
}

const MAX_TARGET: u64 = 1_000_000_000_000_000;

fn parse_count(s: &str) -> Result<u64, Error> {
    let v = if let Ok(v) = s.parse::<u64>() {
        v
    } else {
        let f: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("'{s}' is not a count")))?;
        if f.is_nan() || f < 1.0 || !f.is_finite() {
            return Err(Error::InvalidArgument(format!("count '{s}' must be >= 1")));
        }
        f.round() as u64
    };
    if v > MAX_TARGET {
        return Err(Error::InvalidArgument(format!(
            "count '{s}' exceeds the supported maximum {MAX_TARGET}"
        )));
    }
    Ok(v)
}

fn parse_count_list(s: &str) -> Result<Vec<u64>, Error> {
    s.split(',').map(|t| parse_count(t.trim())).collect()
}

fn resolve_data(opts: &DataOpts, arch: &ArchSpec, seed: u64) -> Result<Dataset, Error> {
    let kind = if opts.data == "auto" {
        match arch.family {
            Family::Dense => "blobs",
            _ => "textures",
        }
    } else {
        opts.data.as_str()
    };
    match kind {
        "blobs" => {
            let dim = match arch.input_shape {
                InputShape::Features { dim } => dim,
                InputShape::Image { .. } => {
                    return Err(Error::InvalidArgument(
                        "blobs data needs a dense architecture; use textures".into(),
                    ))
                }
            };
            Ok(gaussian_blobs(dim, arch.num_classes, opts.n_train, opts.n_val, opts.separation, seed))
        }
        "textures" => match arch.input_shape {
            InputShape::Image { channels: 3, .. } => {
                Ok(textures(arch.num_classes, opts.n_train, opts.n_val, 16, seed))
            }
            _ => Err(Error::InvalidArgument(
                "textures data needs a 3-channel convolutional architecture".into(),
            )),
        },
        path => load_dataset(Path::new(path)),
    }
}

fn out_dir(cli_out: &Option<PathBuf>, command: &str) -> PathBuf {
    cli_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn parse_method(s: &str) -> Result<TauMethod, Error> {
    match s {
        "bisection" => Ok(TauMethod::Bisection),
        "plain-sgd" => Ok(TauMethod::PlainSgd),
        "exact-sgd" => Ok(TauMethod::ExactSgd),
        other => Err(Error::InvalidArgument(format!(
            "unknown method '{other}' (bisection, plain-sgd, exact-sgd)"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.deterministic {
        neuralscale::exec::set_parallel(false);
    }
    let arch = resolve_arch(&cli.arch)?;
    let argv: Vec<String> = std::env::args().collect();
    match cli.cmd {
        Cmd::Count { ratio, widths } => {
            let (config, label) = match (ratio, widths) {
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidArgument(
                        "pass either --ratio or --widths, not both".into(),
                    ))
                }
                (None, Some(path)) => {
                    let saved = load_widths(&path)?;
                    (saved.config.widths, format!("{}", path.display()))
                }
                (r, None) => {
                    let r = r.unwrap_or(1.0);
                    (uniform_widths(&arch, r)?, format!("ratio {r}"))
                }
            };
            let n = count_params(&arch, &config)?;
            println!("{n} ({:.2}M) [{} @ {label}]", n as f64 / 1e6, arch.name);
            Ok(())
        }
        Cmd::Prune { ratio, data, prune } => {
            let dir = out_dir(&cli.out, "prune");
            std::fs::create_dir_all(&dir)?;
            let dataset = resolve_data(&data, &arch, cli.seed)?;
            let start = uniform_widths(&arch, ratio)?;
            let cfg = prune.to_config(cli.seed);
            let outcome = iterative_prune(&arch, &start, &dataset, &cfg)?;
            let tpath = dir.join("trajectory.txt");
            save_trajectory(&tpath, &outcome.trajectory)?;
            let mut manifest = RunManifest::new(
                "prune",
                argv,
                serde_json::json!({
                    "arch": arch.name,
                    "ratio": ratio,
                    "pretrain_epochs": cfg.pretrain_epochs,
                    "q_iters": cfg.q_iters,
                    "epsilon_fraction": cfg.epsilon_fraction,
                    "records": outcome.trajectory.records.len(),
                    "final_alive": outcome.final_alive,
                }),
                vec![cli.seed],
            );
            manifest.artifacts.push(tpath.clone());
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            println!(
                "wrote {} ({} records, final alive {})",
                tpath.display(),
                outcome.trajectory.records.len(),
                outcome.final_alive
            );
            Ok(())
        }
        Cmd::Fit { trajectory } => {
            let dir = out_dir(&cli.out, "fit");
            std::fs::create_dir_all(&dir)?;
            let traj = load_trajectory(&trajectory)?;
            let dm = build_design(&traj)?;
            let params = solve_theta(&dm)?;
            let spath = dir.join("scaling.txt");
            save_scaling(&spath, &traj.meta.arch_name, &params)?;
            // Figure-style curve data: observed and fitted widths per layer.
            let mut csv = String::from("layer,tau,observed,fitted\n");
            for rec in &traj.records {
                for (l, &w) in rec.phi.iter().enumerate() {
                    let fit = predict_width(&params, l, rec.tau as f64)?;
                    csv.push_str(&format!("{l},{},{w},{fit:.6}\n", rec.tau));
                }
            }
            std::fs::write(dir.join("fit_curves.csv"), csv)?;
            let mut manifest = RunManifest::new(
                "fit",
                argv,
                serde_json::json!({
                    "trajectory": trajectory.display().to_string(),
                    "n_used": params.n_used,
                    "layer_count": params.layer_count(),
                }),
                vec![],
            );
            manifest.artifacts.push(spath.clone());
            manifest.artifacts.push(dir.join("fit_curves.csv"));
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            println!(
                "wrote {} ({} layers over {} records)",
                spath.display(),
                params.layer_count(),
                params.n_used
            );
            Ok(())
        }
        Cmd::Scale { params, target, method, rel_tol, eta } => {
            let dir = out_dir(&cli.out, "scale");
            std::fs::create_dir_all(&dir)?;
            let (arch_name, scaling) = load_scaling(&params)?;
            let tau_hat = parse_count(&target)?;
            let opts = TauDescentOpts {
                eta,
                max_iters: 200,
                rel_tol,
                method: parse_method(&method)?,
            };
            let cfg = generate_widths(&scaling, &arch, tau_hat, &opts)?;
            let wpath = dir.join("widths.txt");
            save_widths(&wpath, &arch_name, &cfg)?;
            let mut manifest = RunManifest::new(
                "scale",
                argv,
                serde_json::json!({
                    "params": params.display().to_string(),
                    "target": tau_hat,
                    "achieved": cfg.achieved_params,
                    "tau_star": cfg.tau_star,
                    "converged": cfg.converged,
                    "method": method,
                }),
                vec![],
            );
            manifest.artifacts.push(wpath.clone());
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            println!(
                "wrote {} (target {}, achieved {}, converged {})",
                wpath.display(),
                tau_hat,
                cfg.achieved_params,
                cfg.converged
            );
            Ok(())
        }
        Cmd::Descend { target, iters, rel_tol, data, prune } => {
            let dir = out_dir(&cli.out, "descend");
            std::fs::create_dir_all(&dir)?;
            let dataset = resolve_data(&data, &arch, cli.seed)?;
            let tau_hat = parse_count(&target)?;
            let mut cfg = DescentConfig::new(tau_hat);
            cfg.max_iters = iters;
            cfg.prune = prune.to_config(cli.seed);
            cfg.scale.rel_tol = rel_tol;
            cfg.base_seed = cli.seed;
            let history = architecture_descent(&arch, &dataset, &cfg, Some(&dir))?;
            let manifest = RunManifest::new(
                "descend",
                argv,
                serde_json::json!({
                    "arch": arch.name,
                    "target": tau_hat,
                    "iterations": history.iterations.len(),
                    "converged": history.converged,
                }),
                vec![cli.seed],
            );
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            for it in &history.iterations {
                println!(
                    "iter {}: achieved {} delta {:.4}",
                    it.index, it.config.achieved_params, it.delta
                );
            }
            Ok(())
        }
        Cmd::Compare { budgets, methods, repeats, epochs, data, prune } => {
            let dir = out_dir(&cli.out, "compare");
            std::fs::create_dir_all(&dir)?;
            let dataset = resolve_data(&data, &arch, cli.seed)?;
            let budgets = parse_count_list(&budgets)?;
            let methods = methods
                .split(',')
                .map(|m| Method::parse(m.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = CompareConfig {
                budgets: budgets.clone(),
                methods,
                repeats,
                base_seed: cli.seed,
                train: TrainSchedule {
                    epochs,
                    decay_epochs: vec![epochs / 2, epochs * 5 / 6],
                    batch_size: prune.batch_size,
                    learning_rate: prune.lr,
                    momentum: prune.momentum,
                    weight_decay: prune.weight_decay,
                    decay_factor: 10.0,
                    seed: cli.seed,
                },
                prune: prune.to_config(cli.seed),
                scale: TauDescentOpts::default(),
            };
            let report = compare(&arch, &dataset, &cfg)?;
            write_report(&dir, &report)?;
            let manifest = RunManifest::new(
                "compare",
                argv,
                serde_json::json!({
                    "arch": arch.name,
                    "budgets": budgets,
                    "repeats": repeats,
                    "cells": report.cells.len(),
                }),
                vec![cli.seed],
            );
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            println!("wrote {}", dir.join("report.txt").display());
            for n in &report.notes {
                println!("{n}");
            }
            Ok(())
        }
        Cmd::SweepPretrain { target, p_values, iters, data, prune } => {
            let dir = out_dir(&cli.out, "sweep-pretrain");
            std::fs::create_dir_all(&dir)?;
            let dataset = resolve_data(&data, &arch, cli.seed)?;
            let tau_hat = parse_count(&target)?;
            let ps: Vec<usize> = p_values
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidArgument(format!("bad pretrain epochs '{t}'")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if ps.is_empty() {
                return Err(Error::InvalidArgument("need at least one p value".into()));
            }
            let mut summaries = Vec::new();
            for &p in &ps {
                let pdir = dir.join(format!("p_{p:03}"));
                let mut cfg = DescentConfig::new(tau_hat);
                cfg.max_iters = iters;
                cfg.prune = prune.to_config(cli.seed);
                cfg.prune.pretrain_epochs = p;
                cfg.base_seed = cli.seed;
                let history = architecture_descent(&arch, &dataset, &cfg, Some(&pdir))?;
                let last = history.iterations.last().expect("at least one iteration");
                summaries.push(format!(
                    "p={p}: final widths {:?} achieved {}",
                    last.config.widths.widths, last.config.achieved_params
                ));
            }
            let manifest = RunManifest::new(
                "sweep-pretrain",
                argv,
                serde_json::json!({
                    "arch": arch.name,
                    "target": tau_hat,
                    "p_values": ps,
                    "iters": iters,
                }),
                vec![cli.seed],
            );
            write_manifest(&dir.join("manifest.json"), &manifest)?;
            for s in &summaries {
                println!("{s}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Domain => 3,
                ErrorClass::Numerical => 4,
                ErrorClass::Io => 5,
            };
            ExitCode::from(code)
        }
    }
}
