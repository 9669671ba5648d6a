//! Utility guarantees checked against Monte-Carlo measurements.

use super::bounds::{generalization_bound, gradnorm_bound, gradnorm_bound_full_tally, noise_term, pl_clean_bound, pl_risk_bound};
use super::coupling::{run_coupling, within, CouplingRun};
use crate::error::{Error, Result};
use crate::model::{empirical_grad, empirical_loss, split, Constants, Dataset, LossModel, SplitSpec};
use crate::noise::NoiseStream;
use crate::problems::{Ball, ProblemSpec};
use crate::train::init_theta;
use crate::unlearn::{calibrate_sigma, PrivacyBudget};

/// Minimum number of noise draws for the perturbed gradient-norm term.
pub const MIN_GRADNORM_DRAWS: usize = 1000;

/// Number of standard errors added to a bound before declaring a failure.
pub const MC_STANDARD_ERRORS: f64 = 3.0;

/// Sample mean and standard error of `f(base + sigma xi)`.
/// With `sigma = 0` this is `f(base)` exactly with zero error.
pub fn monte_carlo(
    base: &[f64],
    sigma: f64,
    draws: usize,
    noise: &mut NoiseStream,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(f64, f64)> {
    if sigma == 0.0 {
        return Ok((f(base)?, 0.0));
    }
    if draws < 2 {
        return Err(Error::invalid("Monte-Carlo estimate needs at least 2 draws"));
    }
    let mut point = vec![0.0; base.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        noise.fill_standard_normal(&mut point);
        for (p, b) in point.iter_mut().zip(base) {
            *p = b + sigma * *p;
        }
        let v = f(&point)?;
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

fn grad_sq<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<f64> {
    Ok(empirical_grad(model, data, theta)?.iter().map(|g| g * g).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradNormReport {
    /// Averaged squared gradient norms as stated: learning terms
    /// `t < T-K`, unlearning terms `t < K`, and the perturbed final term.
    pub lhs: f64,
    /// The tally with unlearning terms `t <= K` plus the perturbed term.
    pub lhs_full_tally: f64,
    pub rhs: f64,
    /// Right-hand side with the drift weighted by `(T-K)/T`.
    pub rhs_full_tally: f64,
    /// Monte-Carlo mean of `||grad f_D'(theta''_K + xi)||^2`.
    pub perturbed_mean: f64,
    /// Standard error of `lhs`.
    pub standard_error: f64,
    pub draws: usize,
}

impl GradNormReport {
    pub fn pass(&self) -> bool {
        within(self.lhs, self.rhs + MC_STANDARD_ERRORS * self.standard_error)
    }

    pub fn pass_full_tally(&self) -> bool {
        within(self.lhs_full_tally, self.rhs_full_tally + MC_STANDARD_ERRORS * self.standard_error)
    }
}

/// Averaged squared gradient norms on `D'` over the learning prefix, the
/// unlearning iterates and the perturbed output, against their bound.
pub fn gradnorm_report<M: LossModel + ?Sized>(
    model: &M,
    retain: &Dataset,
    run: &CouplingRun,
    constants: &Constants,
    sigma: f64,
    draws: usize,
    noise: &mut NoiseStream,
) -> Result<GradNormReport> {
    if sigma > 0.0 && draws < MIN_GRADNORM_DRAWS {
        return Err(Error::invalid(format!(
            "gradient-norm report needs at least {MIN_GRADNORM_DRAWS} noise draws, got {draws}"
        )));
    }
    let steps = run.steps();
    let k = run.k;
    let mut learn = 0.0;
    for theta in &run.train[..steps - k] {
        learn += grad_sq(model, retain, theta)?;
    }
    let mut unlearn = 0.0;
    for theta in &run.unlearn[..k] {
        unlearn += grad_sq(model, retain, theta)?;
    }
    let last_clean = grad_sq(model, retain, run.theta_unlearned())?;
    let (perturbed_mean, se) = monte_carlo(run.theta_unlearned(), sigma, draws, noise, |p| grad_sq(model, retain, p))?;
    let t = steps as f64;
    let cal = run.calibration(constants);
    let f_start = empirical_loss(model, retain, &run.train[0])?;
    let f_end = empirical_loss(model, retain, run.theta_unlearned())?;
    Ok(GradNormReport {
        lhs: (learn + unlearn + perturbed_mean) / t,
        lhs_full_tally: (learn + unlearn + last_clean + perturbed_mean) / t,
        rhs: gradnorm_bound(&cal, k, f_start, f_end)?,
        rhs_full_tally: gradnorm_bound_full_tally(&cal, k, f_start, f_end)?,
        perturbed_mean,
        standard_error: se / t,
        draws: if sigma == 0.0 { 0 } else { draws },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlUtilityReport {
    pub bound: f64,
    /// The bound without the `L sqrt(d) sigma` term.
    pub clean_bound: f64,
    pub noise_term: f64,
    /// Monte-Carlo mean of `f_D'(theta''_K + xi) - f*`.
    pub measured: f64,
    pub standard_error: f64,
    /// `f_D'(theta''_K) - f*`.
    pub measured_clean: f64,
}

impl PlUtilityReport {
    pub fn pass(&self) -> bool {
        within(self.measured, self.bound + MC_STANDARD_ERRORS * self.standard_error)
    }

    pub fn pass_clean(&self) -> bool {
        within(self.measured_clean, self.clean_bound)
    }

    /// The failure is confined to the noise term: the noise-free part holds
    /// and only the perturbation pushes the measurement over.
    pub fn noise_term_flag(&self) -> bool {
        !self.pass() && self.pass_clean()
    }
}

/// Expected excess empirical risk of the perturbed output on a PL problem.
/// `mu` and `f_star` default to the model's declared values.
#[allow(clippy::too_many_arguments)]
pub fn pl_utility_report<M: LossModel + ?Sized>(
    model: &M,
    retain: &Dataset,
    run: &CouplingRun,
    constants: &Constants,
    sigma: f64,
    mu: Option<f64>,
    f_star: Option<f64>,
    draws: usize,
    noise: &mut NoiseStream,
) -> Result<PlUtilityReport> {
    let mu = mu.or(constants.pl).ok_or(Error::NotPl("no PL constant"))?;
    let f_star = f_star
        .or_else(|| model.optimal_value(retain))
        .ok_or(Error::NotPl("optimal value unknown"))?;
    let cal = run.calibration(constants);
    let dim = run.train[0].len();
    let gap0 = empirical_loss(model, retain, &run.train[0])? - f_star;
    let theta = run.theta_unlearned();
    let (mean, se) = monte_carlo(theta, sigma, draws, noise, |p| empirical_loss(model, retain, p))?;
    Ok(PlUtilityReport {
        bound: pl_risk_bound(&cal, run.k, mu, gap0, dim, sigma)?,
        clean_bound: pl_clean_bound(&cal, run.k, mu, gap0)?,
        noise_term: noise_term(cal.smoothness, dim, sigma),
        measured: mean - f_star,
        standard_error: se,
        measured_clean: empirical_loss(model, retain, theta)? - f_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationConfig {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub steps: usize,
    pub k: usize,
    pub redraws: usize,
    pub draws: usize,
    /// Fresh population samples per noise draw for the sampled estimate.
    pub fresh_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    /// Bound averaged over dataset redraws.
    pub bound: f64,
    /// Mean excess population risk from the closed-form risk.
    pub gap: f64,
    pub standard_error: f64,
    /// Same quantity estimated from fresh population samples.
    pub sampled_gap: f64,
    pub mean_sigma: f64,
    pub redraws: usize,
    pub draws: usize,
}

impl GeneralizationReport {
    pub fn pass(&self) -> bool {
        within(self.gap, self.bound + MC_STANDARD_ERRORS * self.standard_error)
    }
}

/// Excess population risk of the perturbed unlearned model averaged over
/// dataset redraws and noise draws.
pub fn generalization_report(spec: &ProblemSpec, budget: &PrivacyBudget, cfg: &GeneralizationConfig) -> Result<GeneralizationReport> {
    let population = spec.population().ok_or_else(|| Error::NoPopulation(spec.name().to_string()))?;
    if cfg.redraws == 0 || cfg.draws < 2 {
        return Err(Error::invalid("need at least one redraw and two noise draws"));
    }
    let d = spec.param_dim();
    let f_pop = population.optimal_risk();
    let mut per_redraw = Vec::with_capacity(cfg.redraws);
    let (mut bound_sum, mut sampled_sum, mut sigma_sum) = (0.0, 0.0, 0.0);
    for r in 0..cfg.redraws {
        let seed = cfg.seed.wrapping_add(r as u64);
        let data = population.draw(cfg.n, seed)?;
        let forget = SplitSpec::sample(cfg.n, cfg.m, seed)?;
        let (retain, _) = split(&data, &forget)?;
        let theta0 = init_theta(d, seed);
        let probe = spec.model(Constants {
            smoothness: 1.0,
            grad_bound: 1.0,
            pl: None,
        });
        let run = run_coupling(&probe, &data, &forget, &theta0, cfg.eta, cfg.steps, cfg.k)?;
        let constants = spec.certify_constants(&data, &run.tube(), seed)?;
        let model = spec.model(constants);
        let mu = constants.pl.ok_or(Error::NotPl("no PL constant"))?;
        let cert = calibrate_sigma(budget, &run.calibration(&constants), cfg.k)?;
        let f_star = model.optimal_value(&retain).ok_or(Error::NotPl("optimal value unknown"))?;
        let gap0 = empirical_loss(&model, &retain, &theta0)? - f_star;
        bound_sum += generalization_bound(&run.calibration(&constants), cfg.k, mu, gap0, d, cert.sigma)?;
        sigma_sum += cert.sigma;

        let theta = run.theta_unlearned();
        let mut noise = NoiseStream::indexed(cfg.seed, "generalization", r as u64);
        let (risk, _) = monte_carlo(theta, cert.sigma, cfg.draws, &mut noise, |p| Ok(population.risk(p)))?;
        per_redraw.push(risk - f_pop);

        if cfg.fresh_samples > 0 {
            let fresh = population.draw(cfg.fresh_samples, seed ^ 0x5eed_f00d_0000_0000)?;
            let mut noise = NoiseStream::indexed(cfg.seed, "generalization", r as u64);
            let (risk, _) = monte_carlo(theta, cert.sigma, cfg.draws, &mut noise, |p| empirical_loss(&model, &fresh, p))?;
            sampled_sum += risk - f_pop;
        }
    }
    let k = cfg.redraws as f64;
    let gap = per_redraw.iter().sum::<f64>() / k;
    let se = if cfg.redraws > 1 {
        let var = per_redraw.iter().map(|g| (g - gap) * (g - gap)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(GeneralizationReport {
        bound: bound_sum / k,
        gap,
        standard_error: se,
        sampled_gap: sampled_sum / k,
        mean_sigma: sigma_sum / k,
        redraws: cfg.redraws,
        draws: cfg.draws,
    })
}

/// Constants for the tube around every iterate of the given runs.
pub fn tube_constants(spec: &ProblemSpec, data: &Dataset, tube: &Ball, seed: u64, g_scale: f64) -> Result<Constants> {
    let mut c = spec.certify_constants(data, tube, seed)?;
    c.grad_bound *= g_scale;
    Ok(c)
}
