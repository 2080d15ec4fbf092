//! Per-layer power-law fit of width versus total parameter count.
//!
//! A trajectory linearizes in log-log space: `ln phi_l = ln alpha_l +
//! beta_l * ln tau`. All layers share one design matrix (an intercept column
//! plus ln tau), so the fit is L independent two-parameter least-squares
//! solves. Two solve paths exist, the normal equations and a centered
//! (QR-equivalent) formulation, and they must agree on well-conditioned
//! designs; the public entry point falls back to the centered path when the
//! normal-equations condition number passes 1e10.

use crate::error::{Error, Result};
use crate::prune::PruneTrajectory;

/// Log-log design: row n is (1, ln_tau[n]); the response matrix holds
/// ln phi per layer column. Row order follows the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub ln_tau: Vec<f64>,
    /// `ln_phi[n][l]`
    pub ln_phi: Vec<Vec<f64>>,
}

impl DesignMatrices {
    pub fn rows(&self) -> usize {
        self.ln_tau.len()
    }

    pub fn layer_count(&self) -> usize {
        self.ln_phi.first().map_or(0, Vec::len)
    }
}

/// One layer's fitted growth rule `phi(tau) = alpha * tau^beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerFit {
    pub alpha: f64,
    pub beta: f64,
    /// Residual sum of squares in log space.
    pub log_rss: f64,
}

/// The fitted per-layer scaling rule plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub layers: Vec<LayerFit>,
    pub n_used: usize,
}

impl ScalingParams {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    NormalEquations,
    Qr,
}

/// Convert a trajectory to design matrices: exact elementwise natural logs,
/// row order preserved.
pub fn build_design(traj: &PruneTrajectory) -> Result<DesignMatrices> {
    let n = traj.records.len();
    if n < 2 {
        return Err(Error::InsufficientData { n });
    }
    let l = traj.meta.layer_count;
    let mut ln_tau = Vec::with_capacity(n);
    let mut ln_phi = Vec::with_capacity(n);
    for rec in &traj.records {
        if rec.tau < 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory tau {} < 1 cannot be fit in log space",
                rec.tau
            )));
        }
        if rec.phi.len() != l {
            return Err(Error::WidthLengthMismatch { expected: l, got: rec.phi.len() });
        }
        if let Some(&bad) = rec.phi.iter().find(|&&w| w < 1) {
            return Err(Error::InvalidWidth { layer: 0, value: bad as i64 });
        }
        ln_tau.push((rec.tau as f64).ln());
        ln_phi.push(rec.phi.iter().map(|&w| (w as f64).ln()).collect());
    }
    Ok(DesignMatrices { ln_tau, ln_phi })
}

fn check_finite(dm: &DesignMatrices) -> Result<()> {
    if dm.ln_tau.iter().any(|x| !x.is_finite())
        || dm.ln_phi.iter().flatten().any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("design matrix entries".into()));
    }
    Ok(())
}

/// Condition number of the 2x2 normal-equations matrix.
fn normal_eq_condition(n: f64, sx: f64, sxx: f64) -> f64 {
    let tr = n + sxx;
    let disc = ((n - sxx).powi(2) + 4.0 * sx * sx).sqrt();
    let lo = (tr - disc) / 2.0;
    let hi = (tr + disc) / 2.0;
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Least-squares solve of the per-layer log-log fit via an explicit path.
pub fn solve_theta_via(dm: &DesignMatrices, path: SolvePath) -> Result<ScalingParams> {
    let n = dm.rows();
    if n < 2 {
        return Err(Error::InsufficientData { n });
    }
    check_finite(dm)?;
    let distinct = {
        let mut xs = dm.ln_tau.clone();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Err(Error::SingularDesign);
    }
    let nf = n as f64;
    let sx: f64 = dm.ln_tau.iter().sum();
    let sxx: f64 = dm.ln_tau.iter().map(|x| x * x).sum();
    let layer_count = dm.layer_count();
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let sy: f64 = dm.ln_phi.iter().map(|row| row[l]).sum();
        let sxy: f64 = dm.ln_tau.iter().zip(&dm.ln_phi).map(|(x, row)| x * row[l]).sum();
        let (intercept, beta) = match path {
            SolvePath::NormalEquations => {
                let det = nf * sxx - sx * sx;
                if det.abs() <= f64::EPSILON * nf * sxx.max(1.0) {
                    return Err(Error::SingularDesign);
                }
                ((sxx * sy - sx * sxy) / det, (nf * sxy - sx * sy) / det)
            }
            SolvePath::Qr => {
                // Centered formulation: numerically the thin-QR solution of
                // the two-column design.
                let xbar = sx / nf;
                let ybar = sy / nf;
                let mut sxx_c = 0.0;
                let mut sxy_c = 0.0;
                for (x, row) in dm.ln_tau.iter().zip(&dm.ln_phi) {
                    let dx = x - xbar;
                    sxx_c += dx * dx;
                    sxy_c += dx * (row[l] - ybar);
                }
                if sxx_c <= 0.0 {
                    return Err(Error::SingularDesign);
                }
                let beta = sxy_c / sxx_c;
                (ybar - beta * xbar, beta)
            }
        };
        if !intercept.is_finite() || !beta.is_finite() {
            return Err(Error::NonFinite("least-squares solve".into()));
        }
        let alpha = intercept.exp();
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::NonFinite("alpha out of range".into()));
        }
        let rss: f64 = dm
            .ln_tau
            .iter()
            .zip(&dm.ln_phi)
            .map(|(x, row)| {
                let r = row[l] - (intercept + beta * x);
                r * r
            })
            .sum();
        layers.push(LayerFit { alpha, beta, log_rss: rss });
    }
    Ok(ScalingParams { layers, n_used: n })
}

/// Solve the fit: normal equations, falling back to the centered path when
/// the normal-equations matrix is badly conditioned.
pub fn solve_theta(dm: &DesignMatrices) -> Result<ScalingParams> {
    let n = dm.rows() as f64;
    let sx: f64 = dm.ln_tau.iter().sum();
    let sxx: f64 = dm.ln_tau.iter().map(|x| x * x).sum();
    if normal_eq_condition(n, sx, sxx) > 1e10 {
        solve_theta_via(dm, SolvePath::Qr)
    } else {
        solve_theta_via(dm, SolvePath::NormalEquations)
    }
}

/// Evaluate the fitted rule for one layer at a budget value, unrounded.
pub fn predict_width(params: &ScalingParams, layer: usize, tau: f64) -> Result<f64> {
    if layer >= params.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {} fitted layers",
            params.layers.len()
        )));
    }
    if tau.is_nan() || tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let f = params.layers[layer];
    Ok(f.alpha * tau.powf(f.beta))
}

/// Continuous width vector at a budget value.
pub fn predict_widths(params: &ScalingParams, tau: f64) -> Result<Vec<f64>> {
    (0..params.layer_count()).map(|l| predict_width(params, l, tau)).collect()
}
