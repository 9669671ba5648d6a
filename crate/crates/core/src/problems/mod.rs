//! Built-in test problems with certified constants.
//!
//! Only `logistic` has a globally bounded gradient. For the others `G` is
//! certified over a [`Ball`] (usually the training tube, see
//! [`Ball::training_tube`]), and every bound check is interpreted on that
//! region.

mod losses;
pub mod oracles;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{norm, Constants, Dataset, LossModel, Sample};
use crate::noise::NoiseStream;

pub use oracles::{
    convexity_gap, finite_diff_grad, hessian_norm_estimate, pl_check, verify_constants, Ball,
    ConstantsReport, PlReport,
};

/// PL constant declared for `sine_pl` data drawn from `U(-0.25, 0.25)`.
/// A dense grid on [-10, 10] gives about 0.18 for a single centre and larger
/// values for spread-out centres.
pub const SINE_PL_MU: f64 = 0.15;

const SINE_PL_SPREAD: f64 = 0.25;
const MLP_HIDDEN: usize = 8;
/// Inflation applied to sampled estimates of `G` and `L` for `tiny_mlp`.
pub const MLP_SAFETY: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    ScalarQuadratic,
    LeastSquares,
    Logistic,
    SinePl,
    TinyMlp,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::ScalarQuadratic,
        ProblemKind::LeastSquares,
        ProblemKind::Logistic,
        ProblemKind::SinePl,
        ProblemKind::TinyMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::ScalarQuadratic => "scalar_quadratic",
            ProblemKind::LeastSquares => "least_squares",
            ProblemKind::Logistic => "logistic",
            ProblemKind::SinePl => "sine_pl",
            ProblemKind::TinyMlp => "tiny_mlp",
        }
    }

    fn default_inputs(self) -> usize {
        match self {
            ProblemKind::ScalarQuadratic | ProblemKind::SinePl => 1,
            ProblemKind::LeastSquares | ProblemKind::Logistic => 5,
            ProblemKind::TinyMlp => 3,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

/// A problem family: data generator, loss, and the recipe for its constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    kind: ProblemKind,
    inputs: usize,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        Self {
            kind,
            inputs: kind.default_inputs(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    /// Feature dimension of the generated data. For `tiny_mlp` this is the
    /// network's input width and must keep the weight count at or below 64.
    pub fn with_inputs(mut self, inputs: usize) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if self.kind == ProblemKind::TinyMlp && losses::mlp::param_count(inputs, MLP_HIDDEN) > 64 {
            return Err(Error::invalid(format!(
                "tiny_mlp with {inputs} inputs exceeds 64 weights"
            )));
        }
        self.inputs = inputs;
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            ProblemKind::TinyMlp => losses::mlp::param_count(self.inputs, MLP_HIDDEN),
            _ => self.inputs,
        }
    }

    pub fn is_pl(&self) -> bool {
        matches!(self.kind, ProblemKind::ScalarQuadratic | ProblemKind::SinePl)
    }

    /// Draws `n` samples with a seeded generator.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut noise = NoiseStream::new(seed, &format!("data:{}", self.name()));
        let d = self.inputs;
        let scale = 1.0 / (d as f64).sqrt();
        let mut teacher = vec![0.0; d];
        noise.fill_standard_normal(&mut teacher);
        let mut x = vec![0.0; d];
        let rows = (0..n)
            .map(|_| {
                let y = match self.kind {
                    ProblemKind::ScalarQuadratic => {
                        noise.fill_standard_normal(&mut x);
                        0.0
                    }
                    ProblemKind::LeastSquares => {
                        noise.fill_standard_normal(&mut x);
                        x.iter_mut().for_each(|v| *v *= scale);
                        dot(&x, &teacher) + 0.1 * noise.standard_normal()
                    }
                    ProblemKind::Logistic => {
                        noise.fill_standard_normal(&mut x);
                        x.iter_mut().for_each(|v| *v *= scale);
                        if dot(&x, &teacher) + 0.3 * noise.standard_normal() >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    ProblemKind::SinePl => {
                        for v in x.iter_mut() {
                            *v = SINE_PL_SPREAD * (2.0 * uniform(&mut noise) - 1.0);
                        }
                        0.0
                    }
                    ProblemKind::TinyMlp => {
                        for v in x.iter_mut() {
                            *v = 2.0 * uniform(&mut noise) - 1.0;
                        }
                        (dot(&x, &teacher) * scale).tanh() + 0.1 * noise.standard_normal()
                    }
                };
                (x.clone(), y)
            })
            .collect();
        Dataset::new(rows)
    }

    pub fn model(&self, constants: Constants) -> Problem {
        Problem {
            spec: *self,
            constants,
        }
    }

    /// Constants certified over `region`. Closed-form for every problem except
    /// `tiny_mlp`, whose `G` and `L` are sampled estimates inflated by
    /// [`MLP_SAFETY`].
    pub fn certify_constants(&self, data: &Dataset, region: &Ball, seed: u64) -> Result<Constants> {
        check_width(self, data)?;
        let r = region.radius;
        let c = &region.center[..];
        let constants = match self.kind {
            ProblemKind::ScalarQuadratic => Constants {
                smoothness: 1.0,
                grad_bound: data
                    .iter()
                    .map(|s| crate::model::distance(c, s.x) + r)
                    .fold(0.0, f64::max),
                pl: Some(1.0),
            },
            ProblemKind::LeastSquares => Constants {
                smoothness: max_sq_norm(data),
                grad_bound: data
                    .iter()
                    .map(|s| {
                        let xn = norm(s.x);
                        ((dot(s.x, c) - s.y).abs() + r * xn) * xn
                    })
                    .fold(0.0, f64::max),
                pl: None,
            },
            ProblemKind::Logistic => Constants {
                smoothness: max_sq_norm(data) / 4.0,
                grad_bound: max_sq_norm(data).sqrt(),
                pl: None,
            },
            ProblemKind::SinePl => {
                let root_d = (self.inputs as f64).sqrt();
                Constants {
                    smoothness: 8.0,
                    grad_bound: data
                        .iter()
                        .map(|s| {
                            let u = crate::model::distance(c, s.x) + r;
                            2.0 * u + 3.0 * root_d.min(2.0 * u)
                        })
                        .fold(0.0, f64::max),
                    pl: Some(SINE_PL_MU),
                }
            }
            ProblemKind::TinyMlp => {
                let probe = self.model(Constants {
                    smoothness: f64::INFINITY,
                    grad_bound: f64::INFINITY,
                    pl: None,
                });
                let (g, l) = oracles::estimate_constants(&probe, data, region, seed);
                Constants {
                    smoothness: MLP_SAFETY * l,
                    grad_bound: MLP_SAFETY * g,
                    pl: None,
                }
            }
        };
        if constants.smoothness <= 0.0 || constants.grad_bound <= 0.0 {
            return Err(Error::invalid(format!(
                "degenerate constants for {}: {constants:?}",
                self.name()
            )));
        }
        Ok(constants)
    }

    /// Constants over the unit ball around `center`, used to pick a step size
    /// before any trajectory exists.
    pub fn nominal_constants(&self, data: &Dataset, center: &[f64], seed: u64) -> Result<Constants> {
        self.certify_constants(data, &Ball::new(center.to_vec(), 1.0), seed)
    }

    pub fn population(&self) -> Option<Population> {
        match self.kind {
            ProblemKind::ScalarQuadratic => Some(Population { spec: *self }),
            _ => None,
        }
    }
}

/// Largest step allowed by the learning/unlearning analysis:
/// `min(1/L, n / (2 (n - m) L))`.
pub fn max_step_size(smoothness: f64, n: usize, m: usize) -> f64 {
    let n_f = n as f64;
    let retained = (n - m) as f64;
    (1.0 / smoothness).min(n_f / (2.0 * retained * smoothness))
}

/// Half of [`max_step_size`].
pub fn recommended_eta(constants: &Constants, n: usize, m: usize) -> f64 {
    0.5 * max_step_size(constants.smoothness, n, m)
}

fn check_width(spec: &ProblemSpec, data: &Dataset) -> Result<()> {
    if data.feature_width() != spec.inputs {
        return Err(Error::DimensionMismatch {
            expected: spec.inputs,
            got: data.feature_width(),
        });
    }
    Ok(())
}

fn uniform(noise: &mut NoiseStream) -> f64 {
    use rand::Rng;
    noise.rng().random::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_sq_norm(data: &Dataset) -> f64 {
    data.iter().map(|s| dot(s.x, s.x)).fold(0.0, f64::max)
}

/// A built-in problem bound to declared constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    spec: ProblemSpec,
    constants: Constants,
}

impl Problem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn with_constants(&self, constants: Constants) -> Problem {
        Problem {
            spec: self.spec,
            constants,
        }
    }
}

impl LossModel for Problem {
    fn dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn sample_loss(&self, s: Sample<'_>, t: &[f64]) -> f64 {
        match self.spec.kind {
            ProblemKind::ScalarQuadratic => losses::quadratic::loss(s, t),
            ProblemKind::LeastSquares => losses::least_squares::loss(s, t),
            ProblemKind::Logistic => losses::logistic::loss(s, t),
            ProblemKind::SinePl => losses::sine_pl::loss(s, t),
            ProblemKind::TinyMlp => losses::mlp::loss(self.spec.inputs, MLP_HIDDEN, s, t),
        }
    }

    fn add_sample_grad(&self, s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        match self.spec.kind {
            ProblemKind::ScalarQuadratic => losses::quadratic::add_grad(s, t, out),
            ProblemKind::LeastSquares => losses::least_squares::add_grad(s, t, out),
            ProblemKind::Logistic => losses::logistic::add_grad(s, t, out),
            ProblemKind::SinePl => losses::sine_pl::add_grad(s, t, out),
            ProblemKind::TinyMlp => {
                losses::mlp::add_grad(self.spec.inputs, MLP_HIDDEN, s, t, out)
            }
        }
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn name(&self) -> &str {
        self.spec.name()
    }

    fn optimal_value(&self, data: &Dataset) -> Option<f64> {
        if data.is_empty() {
            return None;
        }
        let d = self.spec.inputs;
        let column = |j: usize| data.iter().map(|s| s.x[j]).collect::<Vec<f64>>();
        match self.spec.kind {
            ProblemKind::ScalarQuadratic => {
                let n = data.len() as f64;
                let mut total = 0.0;
                for j in 0..d {
                    let col = column(j);
                    let mean = col.iter().sum::<f64>() / n;
                    total += col.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
                }
                Some(0.5 * total)
            }
            ProblemKind::SinePl => Some((0..d).map(|j| losses::sine_pl::coord_min(&column(j))).sum()),
            _ => None,
        }
    }
}

/// Sampling distribution of a problem, for population-risk estimates.
#[derive(Debug, Clone, Copy)]
pub struct Population {
    spec: ProblemSpec,
}

impl Population {
    pub fn draw(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.spec.generate(n, seed)
    }

    /// `F* = min_theta E_z f_z(theta)`.
    pub fn optimal_risk(&self) -> f64 {
        match self.spec.kind {
            // z ~ N(0, I_d): F(theta) = ||theta||^2 / 2 + d / 2.
            ProblemKind::ScalarQuadratic => 0.5 * self.spec.inputs as f64,
            _ => unreachable!("population only defined for scalar_quadratic"),
        }
    }

    /// Closed-form `F(theta)`.
    pub fn risk(&self, theta: &[f64]) -> f64 {
        match self.spec.kind {
            ProblemKind::ScalarQuadratic => 0.5 * dot(theta, theta) + 0.5 * self.spec.inputs as f64,
            _ => unreachable!("population only defined for scalar_quadratic"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{empirical_grad, empirical_loss};

    #[test]
    fn names_round_trip() {
        for k in ProblemKind::ALL {
            assert_eq!(k.name().parse::<ProblemKind>().unwrap(), k);
        }
        assert!("nope".parse::<ProblemKind>().is_err());
    }

    #[test]
    fn mlp_is_small() {
        let spec = ProblemSpec::new(ProblemKind::TinyMlp);
        assert!(spec.param_dim() <= 64);
        assert!(spec.with_inputs(10).is_err());
    }

    #[test]
    fn generation_is_seeded() {
        for k in ProblemKind::ALL {
            let spec = ProblemSpec::new(k);
            let a = spec.generate(20, 3).unwrap();
            assert_eq!(a, spec.generate(20, 3).unwrap());
            assert_ne!(a, spec.generate(20, 4).unwrap());
            assert_eq!(a.feature_width(), spec.inputs());
        }
    }

    #[test]
    fn quadratic_optimal_value_matches_loss_at_mean() {
        let spec = ProblemSpec::new(ProblemKind::ScalarQuadratic);
        let data = spec.generate(30, 1).unwrap();
        let model = spec.model(Constants {
            smoothness: 1.0,
            grad_bound: 1.0,
            pl: Some(1.0),
        });
        let mean = data.iter().map(|s| s.x[0]).sum::<f64>() / 30.0;
        let at_mean = empirical_loss(&model, &data, &[mean]).unwrap();
        assert!((model.optimal_value(&data).unwrap() - at_mean).abs() < 1e-14);
    }

    #[test]
    fn sine_optimal_value_is_stationary_minimum() {
        let spec = ProblemSpec::new(ProblemKind::SinePl);
        let data = spec.generate(50, 2).unwrap();
        let model = spec.model(Constants {
            smoothness: 8.0,
            grad_bound: 1.0,
            pl: Some(SINE_PL_MU),
        });
        let f_star = model.optimal_value(&data).unwrap();
        // Brute-force oracle on a fine grid.
        let grid_min = (0..=200_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
            .map(|x| empirical_loss(&model, &data, &[x]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(f_star <= grid_min + 1e-12);
        assert!(grid_min - f_star < 1e-7);
        let _ = empirical_grad(&model, &data, &[0.0]).unwrap();
    }

    #[test]
    fn logistic_constants_are_global() {
        let spec = ProblemSpec::new(ProblemKind::Logistic);
        let data = spec.generate(40, 0).unwrap();
        let a = spec
            .certify_constants(&data, &Ball::new(vec![0.0; 5], 0.1), 0)
            .unwrap();
        let b = spec
            .certify_constants(&data, &Ball::new(vec![3.0; 5], 100.0), 0)
            .unwrap();
        assert_eq!(a, b);
        assert!((a.smoothness - a.grad_bound.powi(2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn step_size_limit() {
        assert_eq!(max_step_size(1.0, 10, 0), 0.5);
        assert_eq!(max_step_size(2.0, 10, 6), 0.5);
        assert_eq!(max_step_size(1.0, 10, 5), 1.0);
    }

    #[test]
    fn population_risk_closed_form() {
        let pop = ProblemSpec::new(ProblemKind::ScalarQuadratic).population().unwrap();
        assert_eq!(pop.optimal_risk(), 0.5);
        assert_eq!(pop.risk(&[0.0]), 0.5);
        assert_eq!(pop.risk(&[2.0]), 2.5);
        assert!(ProblemSpec::new(ProblemKind::Logistic).population().is_none());
    }
}
