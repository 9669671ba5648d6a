//! Checkpoint reconstruction by backward (implicit) gradient steps.
//!
//! One backward step solves `theta = theta_next + eta * grad f_D(theta)`,
//! computed as the minimiser of `-f_D(x) + ||x - theta_next||^2 / (2 eta)`.
//! For `eta < 1/L` that objective is `(1/eta - L)`-strongly convex.

use crate::error::{Error, Result};
use crate::model::{empirical_grad_into, norm, Dataset, LossModel, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    /// Stop once `||x - theta_next - eta grad f_D(x)|| <= tol_scale * (1 + ||theta_next||)`.
    pub tol_scale: f64,
    pub max_iterations: usize,
    /// Inner gradient step; `None` means `1 / (1/eta + L)`.
    pub inner_step: Option<f64>,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            tol_scale: 1e-10,
            max_iterations: 100_000,
            inner_step: None,
        }
    }
}

impl ProxConfig {
    pub fn tolerance(&self, theta_next: &[f64]) -> f64 {
        self.tol_scale * (1.0 + norm(theta_next))
    }

    fn validate(&self, eta: f64, smoothness: f64) -> Result<f64> {
        if !(self.tol_scale > 0.0 && self.tol_scale.is_finite()) {
            return Err(Error::invalid("prox tolerance must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("prox iteration cap must be >= 1"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be > 0, got {eta}")));
        }
        let limit = 1.0 / smoothness;
        if eta >= limit {
            return Err(Error::SubproblemNotConvex { eta, limit });
        }
        let max_step = 1.0 / (1.0 / eta + smoothness);
        match self.inner_step {
            None => Ok(max_step),
            Some(s) if s > 0.0 && s <= max_step * (1.0 + 1e-12) => Ok(s),
            Some(s) => Err(Error::invalid(format!(
                "inner step {s} must lie in (0, {max_step}]"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewindStats {
    /// One entry per backward step, from `theta_T` towards `theta_{T-K}`.
    pub steps: Vec<StepStats>,
}

impl RewindStats {
    pub fn inner_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    /// Per-sample gradient evaluations: one full gradient per inner iteration.
    pub fn grad_evals(&self, n: usize) -> u64 {
        self.steps.iter().map(|s| (s.iterations as u64 + 1) * n as u64).sum()
    }
}

/// One backward step from `theta_next`. Requires `eta < 1/L` strictly.
pub fn rewind_step<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_next: &ParamVector,
    eta: f64,
    cfg: &ProxConfig,
) -> Result<(ParamVector, StepStats)> {
    let smoothness = model.constants().smoothness;
    let step = cfg.validate(eta, smoothness)?;
    let target = theta_next.as_slice();
    let tolerance = cfg.tolerance(target);
    let d = target.len();
    let mut grad = vec![0.0; d];
    let mut resid = vec![0.0; d];

    // Explicit backward-Euler guess.
    empirical_grad_into(model, data, target, &mut grad)?;
    let mut x: Vec<f64> = target.iter().zip(&grad).map(|(t, g)| t + eta * g).collect();

    // Gradient of the subproblem objective is resid / eta, so the inner update
    // is x -= (step / eta) * resid.
    let scale = step / eta;
    let mut iterations = 0;
    loop {
        empirical_grad_into(model, data, &x, &mut grad).map_err(|e| match e {
            Error::NonFinite { .. } => Error::ProxNotConverged {
                iterations,
                residual: f64::INFINITY,
                tolerance,
            },
            other => other,
        })?;
        for j in 0..d {
            resid[j] = x[j] - target[j] - eta * grad[j];
        }
        let r = norm(&resid);
        if !r.is_finite() {
            return Err(Error::ProxNotConverged {
                iterations,
                residual: r,
                tolerance,
            });
        }
        if r <= tolerance {
            let stats = StepStats {
                iterations,
                residual: r,
                tolerance,
            };
            return Ok((ParamVector::new(x)?, stats));
        }
        if iterations == cfg.max_iterations {
            return Err(Error::ProxNotConverged {
                iterations,
                residual: r,
                tolerance,
            });
        }
        for j in 0..d {
            x[j] -= scale * resid[j];
        }
        iterations += 1;
    }
}

/// `K` composed backward steps from `theta_T`. `K = 0` returns `theta_T`.
pub fn rewind<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_t: &ParamVector,
    eta: f64,
    k: usize,
    cfg: &ProxConfig,
) -> Result<(ParamVector, RewindStats)> {
    let mut stats = RewindStats::default();
    if k == 0 {
        cfg.validate(eta, model.constants().smoothness)?;
        return Ok((theta_t.clone(), stats));
    }
    let mut theta = theta_t.clone();
    for _ in 0..k {
        let (prev, s) = rewind_step(model, data, &theta, eta, cfg)?;
        stats.steps.push(s);
        theta = prev;
    }
    Ok((theta, stats))
}

/// Tolerance used by the forward-replay round-trip: `10 tau (1 + eta L)^K`.
pub fn round_trip_tolerance(tau: f64, eta: f64, smoothness: f64, k: usize) -> f64 {
    10.0 * tau * (1.0 + eta * smoothness).powi(k as i32)
}
