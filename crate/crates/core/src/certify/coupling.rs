//! Coupled noise-free trajectories: learning on `D`, retraining on `D'` and
//! unlearning from the learning checkpoint.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::bounds::{bound_learning_divergence, bound_unlearn_coupling};
use crate::error::{Error, Result};
use crate::model::{distance, format_f64, split, Constants, Dataset, LossModel, ParamVector, SplitSpec};
use crate::problems::Ball;
use crate::train::gradient_descent_path;
use crate::unlearn::Calibration;

/// Relative slack for comparing a measurement with its bound.
pub const BOUND_RTOL: f64 = 1e-12;

pub(crate) fn within(measured: f64, bound: f64) -> bool {
    measured <= bound * (1.0 + BOUND_RTOL)
}

#[derive(Debug, Clone)]
pub struct CouplingRun {
    pub eta: f64,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    /// `theta_0..=theta_T` on `D`.
    pub train: Arc<Vec<Vec<f64>>>,
    /// `theta'_0..=theta'_T` on `D'`.
    pub retrain: Arc<Vec<Vec<f64>>>,
    /// `theta''_0..=theta''_K` on `D'` from `theta_{T-K}`.
    pub unlearn: Vec<Vec<f64>>,
    /// `||theta_t - theta'_t||` for `t = 0..=T`.
    pub delta: Vec<f64>,
    /// `||theta'_{T-K+t} - theta''_t||` for `t = 0..=K`.
    pub delta_unlearn: Vec<f64>,
}

impl CouplingRun {
    pub fn steps(&self) -> usize {
        self.train.len() - 1
    }

    pub fn final_distance(&self) -> f64 {
        *self.delta_unlearn.last().unwrap()
    }

    pub fn theta_unlearned(&self) -> &[f64] {
        self.unlearn.last().unwrap()
    }

    pub fn calibration(&self, constants: &Constants) -> Calibration {
        Calibration {
            grad_bound: constants.grad_bound,
            smoothness: constants.smoothness,
            n: self.n,
            m: self.m,
            eta: self.eta,
            steps: self.steps(),
        }
    }

    /// Ball around `theta_0` with twice the largest excursion of any iterate.
    pub fn tube(&self) -> Ball {
        tube_of([self], &self.train[0])
    }
}

/// Training tube covering every iterate of the given runs.
pub fn tube_of<'a>(runs: impl IntoIterator<Item = &'a CouplingRun>, theta0: &[f64]) -> Ball {
    let mut paths: Vec<&[f64]> = Vec::new();
    for run in runs {
        paths.extend(run.train.iter().map(Vec::as_slice));
        paths.extend(run.retrain.iter().map(Vec::as_slice));
        paths.extend(run.unlearn.iter().map(Vec::as_slice));
    }
    Ball::training_tube(theta0, paths)
}

/// One coupled experiment for rewind depth `k`.
pub fn run_coupling<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    forget: &SplitSpec,
    theta0: &ParamVector,
    eta: f64,
    steps: usize,
    k: usize,
) -> Result<CouplingRun> {
    Ok(run_coupling_sweep(model, data, forget, theta0, eta, steps, &[k])?.remove(0))
}

/// Coupled experiments for several rewind depths sharing the learning and
/// retraining trajectories.
pub fn run_coupling_sweep<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    forget: &SplitSpec,
    theta0: &ParamVector,
    eta: f64,
    steps: usize,
    ks: &[usize],
) -> Result<Vec<CouplingRun>> {
    if let Some(&k) = ks.iter().find(|&&k| k > steps) {
        return Err(Error::invalid(format!("K = {k} exceeds T = {steps}")));
    }
    let (retain, _) = split(data, forget)?;
    let train = Arc::new(gradient_descent_path(model, data, theta0, eta, steps)?);
    let retrain = Arc::new(gradient_descent_path(model, &retain, theta0, eta, steps)?);
    let delta: Vec<f64> = train.iter().zip(retrain.iter()).map(|(a, b)| distance(a, b)).collect();
    ks.iter()
        .map(|&k| {
            let unlearn = gradient_descent_path(model, &retain, &train[steps - k], eta, k)?;
            let delta_unlearn = unlearn
                .iter()
                .enumerate()
                .map(|(t, u)| distance(&retrain[steps - k + t], u))
                .collect();
            Ok(CouplingRun {
                eta,
                k,
                n: data.len(),
                m: forget.m(),
                train: Arc::clone(&train),
                retrain: Arc::clone(&retrain),
                unlearn,
                delta: delta.clone(),
                delta_unlearn,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCheck {
    /// `learn` for `||theta_t - theta'_t||`, `unlearn` for the rewound phase.
    pub phase: &'static str,
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
}

impl StepCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.measured
    }

    pub fn pass(&self) -> bool {
        within(self.measured, self.bound)
    }
}

/// Every distance of a run against its analytic bound.
#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub steps: Vec<StepCheck>,
    pub final_measured: f64,
    /// `2 m G h(K) / (L n)`.
    pub final_bound: f64,
}

impl CouplingReport {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| !s.pass()).count() + usize::from(!within(self.final_measured, self.final_bound))
    }

    pub fn pass(&self) -> bool {
        self.violations() == 0
    }

    /// Largest measured/bound ratio over steps with a positive bound. The
    /// unlearning phase at `t = 0` is its own starting point and is skipped.
    pub fn worst_ratio(&self) -> f64 {
        self.steps
            .iter()
            .filter(|s| !(s.phase == "unlearn" && s.t == 0))
            .map(|s| (s.measured, s.bound))
            .chain(std::iter::once((self.final_measured, self.final_bound)))
            .filter(|(_, b)| *b > 0.0)
            .map(|(m, b)| m / b)
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "phase,t,delta_measured,delta_bound,margin").unwrap();
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.phase,
                s.t,
                format_f64(s.measured),
                format_f64(s.bound),
                format_f64(s.margin())
            )
            .unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Checks the learning-phase bound at every step, the unlearning-phase bound
/// started from the measured `Delta_{T-K}`, and the final distance bound.
pub fn check_coupling(run: &CouplingRun, constants: &Constants) -> Result<CouplingReport> {
    let (eta, l, g) = (run.eta, constants.smoothness, constants.grad_bound);
    let mut steps = Vec::with_capacity(run.delta.len() + run.delta_unlearn.len());
    for (t, &measured) in run.delta.iter().enumerate() {
        steps.push(StepCheck {
            phase: "learn",
            t,
            measured,
            bound: bound_learning_divergence(t, eta, l, g, run.n, run.m)?,
        });
    }
    let start = run.delta[run.steps() - run.k];
    for (t, &measured) in run.delta_unlearn.iter().enumerate() {
        steps.push(StepCheck {
            phase: "unlearn",
            t,
            measured,
            bound: bound_unlearn_coupling(start, eta, l, t),
        });
    }
    Ok(CouplingReport {
        steps,
        final_measured: run.final_distance(),
        final_bound: run.calibration(constants).distance_bound(run.k)?,
    })
}
