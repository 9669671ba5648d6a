//! Closed-form bounds and Gaussian-mechanism arithmetic.

use crate::error::{Error, Result};
use crate::unlearn::Calibration;

/// `sqrt(2 ln(1.25/delta))`.
pub fn mechanism_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Noise standard deviation making two outputs at distance `sensitivity`
/// `(epsilon, delta)`-indistinguishable.
pub fn gaussian_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> f64 {
    if sensitivity == 0.0 {
        return 0.0;
    }
    sensitivity * mechanism_factor(delta) / epsilon
}

/// The epsilon certified for a measured distance at noise level `sigma`.
/// Infinite when `sigma = 0` and the distance is positive.
pub fn achieved_epsilon(distance: f64, sigma: f64, delta: f64) -> f64 {
    if distance == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    distance * mechanism_factor(delta) / sigma
}

/// `||theta_t - theta'_t|| <= 2 G m / (L n) ((1 + eta L n/(n-m))^t - 1)`.
pub fn bound_learning_divergence(t: usize, eta: f64, smoothness: f64, grad_bound: f64, n: usize, m: usize) -> Result<f64> {
    if m >= n {
        return Err(Error::EmptyRetainSet { n });
    }
    if m == 0 || t == 0 {
        return Ok(0.0);
    }
    let (n_f, m_f) = (n as f64, m as f64);
    let growth = (t as f64 * (eta * smoothness * n_f / (n_f - m_f)).ln_1p()).exp_m1();
    Ok(2.0 * grad_bound * m_f / (smoothness * n_f) * growth)
}

/// `distance (1 + eta L)^k`.
pub fn bound_unlearn_coupling(distance: f64, eta: f64, smoothness: f64, k: usize) -> f64 {
    if distance == 0.0 {
        return 0.0;
    }
    distance * (k as f64 * (eta * smoothness).ln_1p()).exp()
}

fn require_steps(cal: &Calibration, k: usize) -> Result<()> {
    cal.validate()?;
    if cal.steps == 0 {
        return Err(Error::invalid("T must be >= 1"));
    }
    if k > cal.steps {
        return Err(Error::invalid(format!("K = {k} exceeds T = {}", cal.steps)));
    }
    Ok(())
}

/// Forget-set drift per learning step, `2 G^2 m/(n-m) + 2 L eta G m/(n-m)`.
fn drift(cal: &Calibration) -> f64 {
    let (g, m, r) = (cal.grad_bound, cal.m as f64, (cal.n - cal.m) as f64);
    2.0 * g * g * m / r + 2.0 * cal.smoothness * cal.eta * g * m / r
}

/// Right-hand side of the averaged squared-gradient-norm bound, with the
/// drift term weighted by `(T - K - 1)/T` as stated.
pub fn gradnorm_bound(cal: &Calibration, k: usize, f_start: f64, f_end: f64) -> Result<f64> {
    require_steps(cal, k)?;
    Ok(gradnorm_progress(cal, f_start, f_end) + (cal.steps as f64 - k as f64 - 1.0) / cal.steps as f64 * drift(cal))
}

/// Same bound with the drift weighted by `(T - K)/T`, the number of learning
/// terms actually summed.
pub fn gradnorm_bound_full_tally(cal: &Calibration, k: usize, f_start: f64, f_end: f64) -> Result<f64> {
    require_steps(cal, k)?;
    Ok(gradnorm_progress(cal, f_start, f_end) + (cal.steps - k) as f64 / cal.steps as f64 * drift(cal))
}

fn gradnorm_progress(cal: &Calibration, f_start: f64, f_end: f64) -> f64 {
    let (n, r) = (cal.n as f64, (cal.n - cal.m) as f64);
    2.0 * n * (f_start - f_end) / (cal.steps as f64 * cal.eta * r)
}

/// Noise-free PL bound on `f_D'(theta''_K) - f*`.
pub fn pl_clean_bound(cal: &Calibration, k: usize, mu: f64, initial_gap: f64) -> Result<f64> {
    require_steps(cal, k)?;
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::invalid(format!("PL constant must be > 0, got {mu}")));
    }
    let (n, m, r) = (cal.n as f64, cal.m as f64, (cal.n - cal.m) as f64);
    let (eta, g, l) = (cal.eta, cal.grad_bound, cal.smoothness);
    let learn = (1.0 - eta * mu * r / n).powi((cal.steps - k) as i32);
    let unlearn = (1.0 - eta * mu).powi(k as i32);
    Ok(learn * unlearn * initial_gap + unlearn * (g * g * m + l * eta * g * m) / (mu * r))
}

/// `L sqrt(d) sigma`.
pub fn noise_term(smoothness: f64, dim: usize, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    smoothness * (dim as f64).sqrt() * sigma
}

/// PL bound on `E[f_D'(theta''_K + xi)] - f*`.
pub fn pl_risk_bound(cal: &Calibration, k: usize, mu: f64, initial_gap: f64, dim: usize, sigma: f64) -> Result<f64> {
    Ok(noise_term(cal.smoothness, dim, sigma) + pl_clean_bound(cal, k, mu, initial_gap)?)
}

/// Bound on the excess population risk of the perturbed unlearned model.
pub fn generalization_bound(cal: &Calibration, k: usize, mu: f64, initial_gap: f64, dim: usize, sigma: f64) -> Result<f64> {
    let r = (cal.n - cal.m) as f64;
    let g = cal.grad_bound;
    Ok(noise_term(cal.smoothness, dim, sigma)
        + 2.0 * g * g / (r * mu)
        + cal.smoothness / (2.0 * mu) * pl_clean_bound(cal, k, mu, initial_gap)?)
}
