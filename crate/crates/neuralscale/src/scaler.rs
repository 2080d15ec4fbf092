//! Budget-constrained scaling: find the budget variable tau whose predicted
//! width configuration counts as close as possible to a target parameter
//! total, then emit the integer configuration.
//!
//! Three descent methods coexist. The gradient update
//! `tau -= eta * (h - target) * sum_l beta_l alpha_l tau^(beta_l - 1)`
//! is kept verbatim; a second variant additionally weighs each layer by the
//! analytic dh/dphi_l, since the plain update drops that chain-rule factor;
//! bisection exploits monotonicity of h along the fitted curve and is the
//! default. Inside the loop h is evaluated on continuous widths; rounding
//! happens once at emission, followed by a minimal +-1 repair only when the
//! rounded configuration misses the declared tolerance.

use crate::arch::{count_params, count_params_real, param_count_gradient, ArchSpec, WidthConfig};
use crate::error::{Error, Result};
use crate::powerlaw::{predict_widths, ScalingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMethod {
    /// The verbatim gradient update (chain-rule factor dh/dphi omitted).
    PlainSgd,
    /// Gradient update with the analytic dh/dphi factor restored.
    ExactSgd,
    /// Bracketing bisection on h(phi(tau)) - target.
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauDescentOpts {
    /// Step size for the SGD methods. `None` picks 0.5 / sum_l beta_l
    /// alpha_l target^(beta_l - 1), scaling the first step sensibly.
    pub eta: Option<f64>,
    pub max_iters: usize,
    /// Relative budget tolerance.
    pub rel_tol: f64,
    pub method: TauMethod,
}

impl Default for TauDescentOpts {
    fn default() -> Self {
        TauDescentOpts { eta: None, max_iters: 100, rel_tol: 0.005, method: TauMethod::Bisection }
    }
}

impl TauDescentOpts {
    pub fn validate(&self) -> Result<()> {
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::InvalidArgument("rel_tol must be > 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if let Some(eta) = self.eta {
            if eta.is_nan() || eta <= 0.0 || !eta.is_finite() {
                return Err(Error::InvalidArgument("eta must be finite and > 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-iteration (tau, h) pairs of a descent run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TauTrace {
    pub steps: Vec<(f64, f64)>,
}

/// An emitted integer configuration with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledConfig {
    pub widths: WidthConfig,
    pub achieved_params: u64,
    pub target: u64,
    pub tau_star: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub rel_tol: f64,
}

/// The descent starts from the target itself.
pub fn init_tau(_params: &ScalingParams, tau_hat: u64) -> f64 {
    tau_hat as f64
}

/// h along the fitted curve: parameter count of the continuous widths at tau.
pub fn h_of_tau(params: &ScalingParams, arch: &ArchSpec, tau: f64) -> Result<f64> {
    let phi = predict_widths(params, tau)?;
    count_params_real(arch, &phi)
}

/// d phi_l / d tau summed over layers, the slope factor of the update rule.
fn curve_slope_sum(params: &ScalingParams, tau: f64) -> f64 {
    params
        .layers
        .iter()
        .map(|f| f.beta * f.alpha * tau.powf(f.beta - 1.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdStepInfo {
    pub new_tau: f64,
    pub h: f64,
    /// The summed slope factor actually used (with dh/dphi for the exact method).
    pub slope: f64,
}

/// The slope factor of the update rule for a method at a given tau.
fn slope_at(params: &ScalingParams, arch: &ArchSpec, tau: f64, method: TauMethod) -> Result<f64> {
    match method {
        TauMethod::PlainSgd => Ok(curve_slope_sum(params, tau)),
        TauMethod::ExactSgd => {
            let phi = predict_widths(params, tau)?;
            let grad = param_count_gradient(arch, &phi)?;
            Ok(params
                .layers
                .iter()
                .zip(&grad)
                .map(|(f, dh)| dh * f.beta * f.alpha * tau.powf(f.beta - 1.0))
                .sum())
        }
        TauMethod::Bisection => Err(Error::InvalidArgument(
            "bisection has no gradient step".into(),
        )),
    }
}

/// One gradient update of tau. Exposed so the fixed-point and
/// descent-direction behavior can be asserted exactly.
pub fn sgd_update_step(
    params: &ScalingParams,
    arch: &ArchSpec,
    tau: f64,
    tau_hat: f64,
    eta: f64,
    method: TauMethod,
) -> Result<SgdStepInfo> {
    let h = h_of_tau(params, arch, tau)?;
    let slope = slope_at(params, arch, tau, method)?;
    let new_tau = tau - eta * (h - tau_hat) * slope;
    if !new_tau.is_finite() {
        return Err(Error::NonFinite(
            "tau update (try a smaller eta)".to_string(),
        ));
    }
    Ok(SgdStepInfo { new_tau, h, slope })
}

/// Find tau whose continuous configuration meets the target within the
/// relative tolerance. Returns (tau_star, trace, iterations_used).
pub fn tau_descent(
    params: &ScalingParams,
    arch: &ArchSpec,
    tau_hat: u64,
    opts: &TauDescentOpts,
) -> Result<(f64, TauTrace, usize)> {
    opts.validate()?;
    if tau_hat < 1 {
        return Err(Error::InvalidArgument("target must be >= 1".into()));
    }
    let target = tau_hat as f64;
    let tau0 = init_tau(params, tau_hat);
    let mut trace = TauTrace::default();
    let h0 = h_of_tau(params, arch, tau0)?;
    trace.steps.push((tau0, h0));
    if (h0 - target).abs() <= opts.rel_tol * target {
        return Ok((tau0, trace, 0));
    }

    match opts.method {
        TauMethod::Bisection => {
            // Bracket the target by doubling away from tau0, at most 60 times.
            let (mut lo, mut hi);
            if h0 > target {
                hi = tau0;
                lo = tau0;
                let mut ok = false;
                for _ in 0..60 {
                    lo /= 2.0;
                    let h = h_of_tau(params, arch, lo)?;
                    trace.steps.push((lo, h));
                    if h <= target {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::NoBracket(format!(
                        "h stayed above {target} down to tau {lo:.3e}"
                    )));
                }
            } else {
                lo = tau0;
                hi = tau0;
                let mut ok = false;
                for _ in 0..60 {
                    hi *= 2.0;
                    let h = h_of_tau(params, arch, hi)?;
                    trace.steps.push((hi, h));
                    if h >= target {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::NoBracket(format!(
                        "h stayed below {target} up to tau {hi:.3e}"
                    )));
                }
            }
            let mut best = (f64::INFINITY, tau0);
            let mut iters = 0;
            for _ in 0..opts.max_iters {
                iters += 1;
                let mid = (lo * hi).sqrt();
                let h = h_of_tau(params, arch, mid)?;
                trace.steps.push((mid, h));
                let err = (h - target).abs();
                if err < best.0 {
                    best = (err, mid);
                }
                if err <= opts.rel_tol * target {
                    return Ok((mid, trace, iters));
                }
                if h < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok((best.1, trace, iters))
        }
        method => {
            let slope0 = slope_at(params, arch, target, method)?;
            if slope0 == 0.0 {
                // Every beta is zero: the curve cannot move; report the fixed
                // configuration and let the caller flag non-convergence.
                return Ok((tau0, trace, 0));
            }
            // Default step size: half the budget gap per step for the plain
            // update; half a Gauss-Newton step once dh/dphi enters the slope.
            let eta = opts.eta.unwrap_or(match method {
                TauMethod::PlainSgd => 0.5 / slope0.abs(),
                _ => 0.5 / (slope0 * slope0),
            });
            let mut tau = tau0;
            let mut best = ((h0 - target).abs(), tau0);
            let mut iters = 0;
            for _ in 0..opts.max_iters {
                iters += 1;
                let step = sgd_update_step(params, arch, tau, target, eta, method)?;
                if step.new_tau.is_nan() || step.new_tau <= 0.0 {
                    return Err(Error::NonFinite(format!(
                        "tau update left the domain at iteration {iters} (try a smaller eta)"
                    )));
                }
                tau = step.new_tau;
                let h = h_of_tau(params, arch, tau)?;
                trace.steps.push((tau, h));
                let err = (h - target).abs();
                if err < best.0 {
                    best = (err, tau);
                }
                if err <= opts.rel_tol * target {
                    return Ok((tau, trace, iters));
                }
            }
            Ok((best.1, trace, iters))
        }
    }
}

fn emit_widths(params: &ScalingParams, tau: f64) -> Result<WidthConfig> {
    let phi = predict_widths(params, tau)?;
    Ok(WidthConfig::new(phi.iter().map(|&p| crate::arch::round_width(p)).collect()))
}

/// Run the descent and emit the integer configuration:
/// `width_l = max(1, round(alpha_l tau*^beta_l))`. When integer rounding
/// pushes the recount outside the tolerance, single-width +-1 moves repair it
/// greedily; if the tolerance still cannot be met the config is flagged
/// non-converged.
pub fn generate_widths(
    params: &ScalingParams,
    arch: &ArchSpec,
    tau_hat: u64,
    opts: &TauDescentOpts,
) -> Result<ScaledConfig> {
    if params.layer_count() != arch.prunable_count() {
        return Err(Error::WidthLengthMismatch {
            expected: arch.prunable_count(),
            got: params.layer_count(),
        });
    }
    let (tau_star, _trace, iterations_used) = tau_descent(params, arch, tau_hat, opts)?;
    let mut widths = emit_widths(params, tau_star)?;
    let mut achieved = count_params(arch, &widths)?;
    let target = tau_hat as f64;
    let tol_abs = opts.rel_tol * target;

    if (achieved as f64 - target).abs() > tol_abs {
        // Greedy repair: apply the single +-1 width move that most reduces
        // the budget error, until within tolerance or no move helps.
        let max_moves = 64 * widths.len().max(1);
        for _ in 0..max_moves {
            let err = (achieved as f64 - target).abs();
            if err <= tol_abs {
                break;
            }
            let mut best: Option<(f64, usize, i64, u64)> = None;
            for l in 0..widths.len() {
                for delta in [-1i64, 1] {
                    let cur = widths.widths[l] as i64;
                    if cur + delta < 1 {
                        continue;
                    }
                    let mut cand = widths.clone();
                    cand.widths[l] = (cur + delta) as usize;
                    let c = count_params(arch, &cand)?;
                    let e = (c as f64 - target).abs();
                    if e < err && best.as_ref().is_none_or(|b| e < b.0) {
                        best = Some((e, l, delta, c));
                    }
                }
            }
            match best {
                Some((_, l, delta, c)) => {
                    widths.widths[l] = (widths.widths[l] as i64 + delta) as usize;
                    achieved = c;
                }
                None => break,
            }
        }
    }

    let converged = (achieved as f64 - target).abs() <= tol_abs;
    Ok(ScaledConfig {
        widths,
        achieved_params: achieved,
        target: tau_hat,
        tau_star,
        iterations_used,
        converged,
        rel_tol: opts.rel_tol,
    })
}
