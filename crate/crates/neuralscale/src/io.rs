//! Text artifact formats and run manifests.
//!
//! Every artifact is self-describing: line one is a JSON header carrying a
//! schema tag, the architecture name, and the layer count; the remaining
//! lines are whitespace-separated records. Integers round-trip exactly;
//! floats are written with 17 significant digits so parsing reproduces the
//! original bit pattern.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::powerlaw::{LayerFit, ScalingParams};
use crate::prune::{PruneTrajectory, TrajectoryMeta, TrajectoryRecord};
use crate::scaler::ScaledConfig;

pub const TRAJECTORY_SCHEMA: &str = "neuralscale/trajectory/1";
pub const SCALING_SCHEMA: &str = "neuralscale/scaling/1";
pub const WIDTHS_SCHEMA: &str = "neuralscale/widths/1";
pub const ARCH_SCHEMA: &str = "neuralscale/arch/1";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn f64_full(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryHeader {
    schema: String,
    arch_name: String,
    layer_count: usize,
    seed: u64,
    pretrain_epochs: usize,
    q_iters: usize,
    prune_per_step: usize,
    epsilon_fraction: f64,
    initial_gates: usize,
}

/// Line-delimited records `step tau phi_1 .. phi_L` under a JSON header.
pub fn save_trajectory(path: &Path, traj: &PruneTrajectory) -> Result<()> {
    let header = TrajectoryHeader {
        schema: TRAJECTORY_SCHEMA.into(),
        arch_name: traj.meta.arch_name.clone(),
        layer_count: traj.meta.layer_count,
        seed: traj.meta.seed,
        pretrain_epochs: traj.meta.pretrain_epochs,
        q_iters: traj.meta.q_iters,
        prune_per_step: traj.meta.prune_per_step,
        epsilon_fraction: traj.meta.epsilon_fraction,
        initial_gates: traj.meta.initial_gates,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for rec in &traj.records {
        out.push_str(&rec.step.to_string());
        out.push(' ');
        out.push_str(&rec.tau.to_string());
        for w in &rec.phi {
            out.push(' ');
            out.push_str(&w.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<PruneTrajectory> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected JSON header"))?;
    let header: TrajectoryHeader = serde_json::from_str(header_line)
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.schema != TRAJECTORY_SCHEMA {
        return Err(Error::SchemaMismatch {
            expected: TRAJECTORY_SCHEMA.into(),
            got: header.schema,
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let step: usize = it
            .next()
            .ok_or_else(|| parse_err(lineno, "missing step index"))?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad step index: {e}")))?;
        let tau: u64 = it
            .next()
            .ok_or_else(|| parse_err(lineno, "missing tau"))?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad tau: {e}")))?;
        let phi: Vec<usize> = it
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad width '{tok}': {e}")))
            })
            .collect::<Result<_>>()?;
        if phi.len() != header.layer_count {
            return Err(parse_err(
                lineno,
                format!(
                    "record has {} widths, header declares {} layers",
                    phi.len(),
                    header.layer_count
                ),
            ));
        }
        records.push(TrajectoryRecord { step, tau, phi });
    }
    Ok(PruneTrajectory {
        meta: TrajectoryMeta {
            arch_name: header.arch_name,
            layer_count: header.layer_count,
            seed: header.seed,
            pretrain_epochs: header.pretrain_epochs,
            q_iters: header.q_iters,
            prune_per_step: header.prune_per_step,
            epsilon_fraction: header.epsilon_fraction,
            initial_gates: header.initial_gates,
        },
        records,
    })
}

// ---------------------------------------------------------------------------
// Scaling parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingHeader {
    schema: String,
    arch_name: String,
    layer_count: usize,
    n_used: usize,
}

/// Per-layer `layer alpha beta log_rss` lines, full float precision.
pub fn save_scaling(path: &Path, arch_name: &str, params: &ScalingParams) -> Result<()> {
    let header = ScalingHeader {
        schema: SCALING_SCHEMA.into(),
        arch_name: arch_name.into(),
        layer_count: params.layer_count(),
        n_used: params.n_used,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (l, f) in params.layers.iter().enumerate() {
        out.push_str(&format!(
            "{l} {} {} {}\n",
            f64_full(f.alpha),
            f64_full(f.beta),
            f64_full(f.log_rss)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_scaling(path: &Path) -> Result<(String, ScalingParams)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected JSON header"))?;
    let header: ScalingHeader = serde_json::from_str(header_line)
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.schema != SCALING_SCHEMA {
        return Err(Error::SchemaMismatch { expected: SCALING_SCHEMA.into(), got: header.schema });
    }
    let mut layers = vec![None; header.layer_count];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(lineno, "expected 'layer alpha beta log_rss'"));
        }
        let l: usize = toks[0]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad layer index: {e}")))?;
        if l >= header.layer_count {
            return Err(parse_err(lineno, format!("layer {l} out of range")));
        }
        let nums: Vec<f64> = toks[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad float '{t}': {e}")))
            })
            .collect::<Result<_>>()?;
        layers[l] = Some(LayerFit { alpha: nums[0], beta: nums[1], log_rss: nums[2] });
    }
    let layers: Vec<LayerFit> = layers
        .into_iter()
        .enumerate()
        .map(|(l, f)| f.ok_or_else(|| parse_err(0, format!("missing layer {l}"))))
        .collect::<Result<_>>()?;
    Ok((header.arch_name, ScalingParams { layers, n_used: header.n_used }))
}

// ---------------------------------------------------------------------------
// Width configurations
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WidthsHeader {
    schema: String,
    arch_name: String,
    layer_count: usize,
    target: u64,
    achieved: u64,
    tau_star: f64,
    iterations_used: usize,
    converged: bool,
    rel_tol: f64,
}

/// A saved width configuration plus its budget bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedWidths {
    pub arch_name: String,
    pub config: ScaledConfig,
}

pub fn save_widths(path: &Path, arch_name: &str, cfg: &ScaledConfig) -> Result<()> {
    let header = WidthsHeader {
        schema: WIDTHS_SCHEMA.into(),
        arch_name: arch_name.into(),
        layer_count: cfg.widths.len(),
        target: cfg.target,
        achieved: cfg.achieved_params,
        tau_star: cfg.tau_star,
        iterations_used: cfg.iterations_used,
        converged: cfg.converged,
        rel_tol: cfg.rel_tol,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (l, w) in cfg.widths.widths.iter().enumerate() {
        out.push_str(&format!("{l} {w}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_widths(path: &Path) -> Result<SavedWidths> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected JSON header"))?;
    let header: WidthsHeader = serde_json::from_str(header_line)
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.schema != WIDTHS_SCHEMA {
        return Err(Error::SchemaMismatch { expected: WIDTHS_SCHEMA.into(), got: header.schema });
    }
    let mut widths = vec![None; header.layer_count];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(lineno, "expected 'layer width'"));
        }
        let l: usize = toks[0]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad layer index: {e}")))?;
        let w: usize = toks[1]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad width: {e}")))?;
        if l >= header.layer_count {
            return Err(parse_err(lineno, format!("layer {l} out of range")));
        }
        widths[l] = Some(w);
    }
    let widths: Vec<usize> = widths
        .into_iter()
        .enumerate()
        .map(|(l, w)| w.ok_or_else(|| parse_err(0, format!("missing layer {l}"))))
        .collect::<Result<_>>()?;
    Ok(SavedWidths {
        arch_name: header.arch_name,
        config: ScaledConfig {
            widths: crate::arch::WidthConfig::new(widths),
            achieved_params: header.achieved,
            target: header.target,
            tau_star: header.tau_star,
            iterations_used: header.iterations_used,
            converged: header.converged,
            rel_tol: header.rel_tol,
        },
    })
}

// ---------------------------------------------------------------------------
// Architecture files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    schema: String,
    #[serde(flatten)]
    arch: ArchSpec,
}

pub fn save_arch(path: &Path, arch: &ArchSpec) -> Result<()> {
    let file = ArchFile { schema: ARCH_SCHEMA.into(), arch: arch.clone() };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

/// Load an architecture document; unknown fields are rejected.
pub fn load_arch(path: &Path) -> Result<ArchSpec> {
    let text = fs::read_to_string(path)?;
    let file: ArchFile = serde_json::from_str(&text)?;
    if file.schema != ARCH_SCHEMA {
        return Err(Error::SchemaMismatch { expected: ARCH_SCHEMA.into(), got: file.schema });
    }
    file.arch.validate()?;
    Ok(file.arch)
}

/// Resolve `--arch`: a built-in preset name or a path to an arch document.
pub fn resolve_arch(name_or_path: &str) -> Result<ArchSpec> {
    if crate::arch::PRESET_NAMES.contains(&name_or_path) {
        return crate::arch::preset(name_or_path);
    }
    let p = Path::new(name_or_path);
    if p.exists() {
        return load_arch(p);
    }
    Err(Error::InvalidArgument(format!(
        "'{name_or_path}' is neither a preset ({:?}) nor an existing file",
        crate::arch::PRESET_NAMES
    )))
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

/// Record of one CLI run: enough to re-run the command bit-identically in
/// deterministic mode. Timestamps live only here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.into(),
            argv,
            config,
            seeds,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::WidthConfig;

    fn sample_traj() -> PruneTrajectory {
        PruneTrajectory {
            meta: TrajectoryMeta {
                arch_name: "mlp".into(),
                layer_count: 3,
                seed: 9,
                pretrain_epochs: 2,
                q_iters: 10,
                prune_per_step: 4,
                epsilon_fraction: 0.05,
                initial_gates: 200,
            },
            records: (0..100)
                .map(|i| TrajectoryRecord {
                    step: i,
                    tau: 100_000 - 731 * i as u64,
                    phi: vec![80 - i / 2, 70 - i / 3, 50 - i / 4],
                })
                .collect(),
        }
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let traj = sample_traj();
        save_trajectory(&path, &traj).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn trajectory_load_accepts_empty_record_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let mut traj = sample_traj();
        traj.records.clear();
        save_trajectory(&path, &traj).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert!(back.records.is_empty());
    }

    #[test]
    fn trajectory_rejects_width_count_mismatch_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let traj = sample_traj();
        save_trajectory(&path, &traj).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        // Truncate one width from the record on line 3.
        let lines: Vec<&str> = text.lines().collect();
        let mut bad = lines.clone();
        let l3: Vec<&str> = lines[2].split_whitespace().collect();
        let shorter = l3[..l3.len() - 1].join(" ");
        bad[2] = &shorter;
        text = bad.join("\n");
        std::fs::write(&path, text).unwrap();
        match load_trajectory(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_rejects_wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(
            &path,
            "{\"schema\":\"neuralscale/trajectory/999\",\"arch_name\":\"x\",\"layer_count\":1,\"seed\":0,\"pretrain_epochs\":0,\"q_iters\":1,\"prune_per_step\":1,\"epsilon_fraction\":0.05,\"initial_gates\":10}\n",
        )
        .unwrap();
        assert!(matches!(load_trajectory(&path), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn scaling_round_trips_to_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaling.txt");
        let params = ScalingParams {
            layers: vec![
                LayerFit { alpha: 1.234567890123456e-3, beta: 0.4999999999999999, log_rss: 1e-17 },
                LayerFit { alpha: 98765.43210987654, beta: -0.123456789012345, log_rss: 0.25 },
            ],
            n_used: 42,
        };
        save_scaling(&path, "mlp", &params).unwrap();
        let (name, back) = load_scaling(&path).unwrap();
        assert_eq!(name, "mlp");
        assert_eq!(back.n_used, 42);
        for (a, b) in params.layers.iter().zip(&back.layers) {
            assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
            assert_eq!(a.beta.to_bits(), b.beta.to_bits());
            assert_eq!(a.log_rss.to_bits(), b.log_rss.to_bits());
        }
    }

    #[test]
    fn widths_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("widths.txt");
        let cfg = ScaledConfig {
            widths: WidthConfig::new(vec![12, 7, 33]),
            achieved_params: 12345,
            target: 12400,
            tau_star: 9876.54321,
            iterations_used: 17,
            converged: true,
            rel_tol: 0.005,
        };
        save_widths(&path, "mlp", &cfg).unwrap();
        let back = load_widths(&path).unwrap();
        assert_eq!(back.arch_name, "mlp");
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn arch_file_round_trip_and_unknown_field_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arch.json");
        let arch = crate::arch::preset("vgg11").unwrap();
        save_arch(&path, &arch).unwrap();
        let back = load_arch(&path).unwrap();
        assert_eq!(arch, back);
        // Injecting an unknown field must fail the load.
        let text = std::fs::read_to_string(&path).unwrap();
        let hacked = text.replacen("{", "{\n  \"surprise\": 1,", 1);
        std::fs::write(&path, hacked).unwrap();
        assert!(load_arch(&path).is_err());
    }

    #[test]
    fn resolve_arch_prefers_presets() {
        let a = resolve_arch("mlp").unwrap();
        assert_eq!(a.name, "mlp");
        assert!(resolve_arch("no-such-thing").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new(
            "prune",
            vec!["prune".into(), "--arch".into(), "mlp".into()],
            serde_json::json!({"q_iters": 10}),
            vec![7],
        );
        m.artifacts.push(PathBuf::from("trajectory.txt"));
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.command, "prune");
        assert_eq!(back.seeds, vec![7]);
        assert_eq!(back.artifacts, vec![PathBuf::from("trajectory.txt")]);
    }
}
