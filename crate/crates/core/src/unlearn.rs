//! Rewind-then-descend unlearning and the noise calibration behind it.

use std::fmt::Write as _;

use crate::certify::bounds::{gaussian_sigma, mechanism_factor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{format_f64, split, Dataset, LossModel, ParamVector, SplitSpec};
use crate::noise::{perturb, NoiseStream};
use crate::train::gradient_descent;

/// Exponent beyond which `h(K)` is reported as infinite.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    /// The classical Gaussian-mechanism constant is only proven for `epsilon <= 1`.
    pub fn warning(&self) -> Option<String> {
        (self.epsilon > 1.0).then(|| {
            format!(
                "epsilon = {} > 1: the Gaussian mechanism constant sqrt(2 ln(1.25/delta))/epsilon is only guaranteed for epsilon <= 1",
                self.epsilon
            )
        })
    }
}

/// Everything the noise calibration depends on apart from `K` and the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub grad_bound: f64,
    pub smoothness: f64,
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub steps: usize,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if self.m >= self.n {
            return Err(Error::EmptyRetainSet { n: self.n });
        }
        for (name, v) in [("eta", self.eta), ("L", self.smoothness)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.grad_bound >= 0.0 && self.grad_bound.is_finite()) {
            return Err(Error::invalid(format!("G must be >= 0, got {}", self.grad_bound)));
        }
        Ok(())
    }

    pub fn h(&self, k: usize) -> Result<f64> {
        h_of_k(self.eta, self.smoothness, self.n, self.m, self.steps, k)
    }

    /// `B(K) = 2 m G h(K) / (L n)`; zero whenever `m = 0` or `K = T`.
    pub fn distance_bound(&self, k: usize) -> Result<f64> {
        self.validate()?;
        let h = self.h(k)?;
        if self.m == 0 || h == 0.0 || self.grad_bound == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * self.m as f64 * self.grad_bound * h / (self.smoothness * self.n as f64))
    }

    pub fn sigma(&self, budget: &PrivacyBudget, k: usize) -> Result<f64> {
        Ok(gaussian_sigma(self.distance_bound(k)?, budget.epsilon, budget.delta))
    }

    pub fn certificate(&self, budget: &PrivacyBudget, k: usize) -> Result<Certificate> {
        calibrate_sigma(budget, self, k)
    }
}

/// `h(K) = ((1 + eta L n/(n-m))^(T-K) - 1) (1 + eta L)^K`, or `+inf` once the
/// exponent passes [`OVERFLOW_EXPONENT`].
pub fn h_of_k(eta: f64, smoothness: f64, n: usize, m: usize, steps: usize, k: usize) -> Result<f64> {
    if k > steps {
        return Err(Error::invalid(format!("K = {k} exceeds T = {steps}")));
    }
    if m >= n {
        return Err(Error::EmptyRetainSet { n });
    }
    if !(eta > 0.0 && smoothness > 0.0 && eta.is_finite() && smoothness.is_finite()) {
        return Err(Error::invalid("eta and L must be positive and finite"));
    }
    if k == steps {
        return Ok(0.0);
    }
    let el = eta * smoothness;
    let growth = (steps - k) as f64 * (el * n as f64 / (n - m) as f64).ln_1p();
    let tail = k as f64 * el.ln_1p();
    if growth + tail > OVERFLOW_EXPONENT {
        return Ok(f64::INFINITY);
    }
    Ok(growth.exp_m1() * tail.exp())
}

/// Gaussian noise scale `sigma = B sqrt(2 ln(1.25/delta)) / epsilon` for rewind depth `k`.
pub fn calibrate_sigma(budget: &PrivacyBudget, cal: &Calibration, k: usize) -> Result<Certificate> {
    cal.validate()?;
    let h = cal.h(k)?;
    let bound = cal.distance_bound(k)?;
    Ok(Certificate {
        epsilon: budget.epsilon,
        delta: budget.delta,
        sigma: gaussian_sigma(bound, budget.epsilon, budget.delta),
        k,
        steps: cal.steps,
        m: cal.m,
        n: cal.n,
        eta: cal.eta,
        grad_bound: cal.grad_bound,
        smoothness: cal.smoothness,
        h,
        bound,
    })
}

/// Smallest `K` in `[0, T]` with `sigma(K) <= sigma_max`.
pub fn min_rewind_for_noise(sigma_max: f64, budget: &PrivacyBudget, cal: &Calibration) -> Result<usize> {
    if sigma_max.is_nan() || sigma_max < 0.0 {
        return Err(Error::invalid(format!("sigma_max must be >= 0, got {sigma_max}")));
    }
    cal.validate()?;
    let (mut lo, mut hi) = (0usize, cal.steps);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if cal.sigma(budget, mid)? <= sigma_max {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub k: usize,
    pub steps: usize,
    pub m: usize,
    pub n: usize,
    pub eta: f64,
    pub grad_bound: f64,
    pub smoothness: f64,
    pub h: f64,
    /// Analytic distance bound `B = 2 m G h(K) / (L n)`.
    pub bound: f64,
}

impl Certificate {
    /// The bound overflowed, so no finite noise level certifies this run.
    pub fn vacuous(&self) -> bool {
        self.h.is_infinite()
    }

    /// `sigma == B sqrt(2 ln(1.25/delta)) / epsilon` to relative `1e-12`.
    pub fn is_consistent(&self) -> bool {
        let expected = self.bound * mechanism_factor(self.delta) / self.epsilon;
        if expected.is_infinite() || self.sigma.is_infinite() {
            return expected == self.sigma;
        }
        (self.sigma - expected).abs() <= 1e-12 * expected.abs() && self.k <= self.steps && self.m < self.n
    }

    pub fn warning(&self) -> Option<String> {
        PrivacyBudget {
            epsilon: self.epsilon,
            delta: self.delta,
        }
        .warning()
    }

    fn fields(&self) -> [(&'static str, String); 13] {
        [
            ("epsilon", format_f64(self.epsilon)),
            ("delta", format_f64(self.delta)),
            ("sigma", format_f64(self.sigma)),
            ("K", self.k.to_string()),
            ("T", self.steps.to_string()),
            ("m", self.m.to_string()),
            ("n", self.n.to_string()),
            ("eta", format_f64(self.eta)),
            ("G", format_f64(self.grad_bound)),
            ("L", format_f64(self.smoothness)),
            ("h", format_f64(self.h)),
            ("bound", format_f64(self.bound)),
            ("vacuous", self.vacuous().to_string()),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    pub fn csv_header() -> String {
        "epsilon,delta,sigma,K,T,m,n,eta,G,L,h,bound,vacuous".to_string()
    }

    pub fn csv_row(&self) -> String {
        self.fields().iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(",")
    }

    pub fn parse_report(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("certificate line without '=': {line}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("certificate missing {k}")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("certificate field {k} is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("certificate field {k} is not an integer")))
        };
        Ok(Self {
            epsilon: real("epsilon")?,
            delta: real("delta")?,
            sigma: real("sigma")?,
            k: int("K")?,
            steps: int("T")?,
            m: int("m")?,
            n: int("n")?,
            eta: real("eta")?,
            grad_bound: real("G")?,
            smoothness: real("L")?,
            h: real("h")?,
            bound: real("bound")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnOutput {
    /// `theta''_K`, before perturbation.
    pub theta_clean: ParamVector,
    /// `theta''_K + xi`.
    pub theta_noisy: ParamVector,
    /// Per-sample gradient evaluations: `K (n - m)`.
    pub grad_evals: u64,
}

/// `K` gradient steps on the retain set from the checkpoint, then Gaussian
/// noise with standard deviation `sigma`. The step size is the checkpoint's.
pub fn unlearn<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    forget: &SplitSpec,
    ckpt: &Checkpoint,
    k: usize,
    sigma: f64,
    noise: &mut NoiseStream,
) -> Result<UnlearnOutput> {
    ckpt.check_dataset(data)?;
    let (retain, _) = split(data, forget)?;
    unlearn_retain(model, &retain, ckpt, k, sigma, noise)
}

/// Like [`unlearn`] for an already-split retain set; the caller is
/// responsible for the checkpoint/dataset match.
pub fn unlearn_retain<M: LossModel + ?Sized>(
    model: &M,
    retain: &Dataset,
    ckpt: &Checkpoint,
    k: usize,
    sigma: f64,
    noise: &mut NoiseStream,
) -> Result<UnlearnOutput> {
    let clean = gradient_descent(model, retain, &ckpt.theta, ckpt.eta, k)?;
    let theta_clean = ParamVector::new(clean)?;
    let theta_noisy = perturb(&theta_clean, sigma, noise)?;
    Ok(UnlearnOutput {
        theta_clean,
        theta_noisy,
        grad_evals: (k * retain.len()) as u64,
    })
}

#[derive(Debug, Clone)]
pub struct SequentialOutput {
    pub certificates: Vec<Certificate>,
    pub theta: ParamVector,
    pub grad_evals: u64,
}

/// Serves requests in order. Each one restarts from the same checkpoint on
/// the data minus every sample forgotten so far, with noise recalibrated for
/// the cumulative forget count.
#[allow(clippy::too_many_arguments)]
pub fn sequential_unlearn<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    ckpt: &Checkpoint,
    requests: &[SplitSpec],
    budget: &PrivacyBudget,
    steps: usize,
    k: usize,
    noise: &mut NoiseStream,
) -> Result<SequentialOutput> {
    ckpt.check_dataset(data)?;
    let c = model.constants();
    let mut cumulative = SplitSpec::none();
    let mut certificates = Vec::with_capacity(requests.len());
    let mut grad_evals = 0;
    let mut theta = None;
    for req in requests {
        req.validate(data.len())?;
        cumulative = cumulative.union(req);
        if cumulative.m() >= data.len() {
            return Err(Error::EmptyRetainSet { n: data.len() });
        }
        let cert = calibrate_sigma(
            budget,
            &Calibration {
                grad_bound: c.grad_bound,
                smoothness: c.smoothness,
                n: data.len(),
                m: cumulative.m(),
                eta: ckpt.eta,
                steps,
            },
            k,
        )?;
        let out = unlearn(model, data, &cumulative, ckpt, k, cert.sigma, noise)?;
        grad_evals += out.grad_evals;
        theta = Some(out.theta_noisy);
        certificates.push(cert);
    }
    let theta = match theta {
        Some(t) => t,
        None => ParamVector::new(gradient_descent(model, data, &ckpt.theta, ckpt.eta, k)?)?,
    };
    Ok(SequentialOutput {
        certificates,
        theta,
        grad_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal(m: usize) -> Calibration {
        Calibration {
            grad_bound: 1.0,
            smoothness: 1.0,
            n: 100,
            m,
            eta: 0.01,
            steps: 50,
        }
    }

    #[test]
    fn h_examples() {
        assert!((h_of_k(1.0, 1.0, 2, 1, 2, 1).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(h_of_k(0.1, 2.0, 10, 3, 7, 7).unwrap(), 0.0);
        assert!(h_of_k(0.1, 1.0, 10, 1, 5, 6).is_err());
        assert!(h_of_k(0.1, 1.0, 10, 10, 5, 1).is_err());
    }

    #[test]
    fn h_overflow_is_infinite() {
        let h = h_of_k(0.5, 1.0, 10, 5, 2000, 0).unwrap();
        assert!(h.is_infinite());
        let c = calibrate_sigma(&PrivacyBudget::new(1.0, 1e-5).unwrap(), &Calibration { eta: 0.5, steps: 2000, n: 10, m: 5, ..cal(1) }, 0).unwrap();
        assert!(c.vacuous());
        assert!(c.sigma.is_infinite());
        assert!(c.is_consistent());
    }

    #[test]
    fn sigma_zero_cases() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        assert_eq!(cal(0).sigma(&b, 3).unwrap(), 0.0);
        assert_eq!(cal(4).sigma(&b, 50).unwrap(), 0.0);
        assert!(cal(4).sigma(&b, 0).unwrap() > 0.0);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 0.5).unwrap().warning().is_none());
        assert!(PrivacyBudget::new(2.0, 0.5).unwrap().warning().is_some());
    }

    #[test]
    fn min_rewind_matches_scan() {
        let b = PrivacyBudget::new(0.5, 1e-5).unwrap();
        let c = cal(3);
        let sigmas: Vec<f64> = (0..=c.steps).map(|k| c.sigma(&b, k).unwrap()).collect();
        for &target in &[0.0, 1e-6, 1e-3, sigmas[10], sigmas[0], sigmas[0] * 2.0] {
            let k = min_rewind_for_noise(target, &b, &c).unwrap();
            let scan = sigmas.iter().position(|&s| s <= target).unwrap();
            assert_eq!(k, scan, "target {target}");
        }
        assert_eq!(min_rewind_for_noise(0.0, &b, &c).unwrap(), c.steps);
    }

    #[test]
    fn report_round_trip() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let cert = cal(2).certificate(&b, 10).unwrap();
        assert!(cert.is_consistent());
        let back = Certificate::parse_report(&cert.to_report()).unwrap();
        assert_eq!(back, cert);
        assert_eq!(cert.csv_row().split(',').count(), Certificate::csv_header().split(',').count());
    }
}
