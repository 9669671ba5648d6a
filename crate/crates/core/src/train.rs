//! Full-batch gradient descent with checkpoint capture and trajectory logs.

use std::io::Write;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{empirical_grad_into, empirical_loss, format_f64, norm, Dataset, LossModel, ParamVector};
use crate::noise::NoiseStream;
use crate::problems::max_step_size;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    /// Total iterations `T`.
    pub steps: usize,
    /// Rewind depth `K`; the checkpoint is taken at step `T - K`.
    pub rewind: usize,
    pub seed: u64,
    pub record_stride: usize,
    /// Size `m` of the forget set the step size must accommodate.
    pub planned_forget: usize,
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize, rewind: usize) -> Self {
        Self {
            eta,
            steps,
            rewind,
            seed: 0,
            record_stride: 1,
            planned_forget: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_planned_forget(mut self, m: usize) -> Self {
        self.planned_forget = m;
        self
    }

    /// Full trajectories for small runs, otherwise about 10^4 recorded rows.
    pub fn default_stride(dim: usize, steps: usize) -> usize {
        if dim <= 100 && steps <= 10_000 {
            1
        } else {
            (steps / 10_000).max(1)
        }
    }

    pub fn checkpoint_step(&self) -> usize {
        self.steps - self.rewind
    }

    pub fn validate(&self, smoothness: f64, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be > 0, got {}", self.eta)));
        }
        if self.rewind > self.steps {
            return Err(Error::invalid(format!(
                "rewind depth K = {} exceeds T = {}",
                self.rewind, self.steps
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record stride must be >= 1"));
        }
        if self.planned_forget >= n {
            return Err(Error::EmptyRetainSet { n });
        }
        check_step_size(self.eta, smoothness, n, self.planned_forget)
    }
}

/// `eta <= min(1/L, n / (2 (n - m) L))`.
pub fn check_step_size(eta: f64, smoothness: f64, n: usize, m: usize) -> Result<()> {
    let limit = max_step_size(smoothness, n, m);
    if eta > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { eta, limit });
    }
    Ok(())
}

/// Scaled standard-normal start: entries `N(0, 1/d)`.
pub fn init_theta(dim: usize, seed: u64) -> ParamVector {
    let mut noise = NoiseStream::new(seed, "theta0");
    let scale = 1.0 / (dim as f64).sqrt();
    let mut v = vec![0.0; dim];
    noise.fill_standard_normal(&mut v);
    v.iter_mut().for_each(|x| *x *= scale);
    ParamVector::new(v).expect("normal draws are finite")
}

/// Per-step logs plus the recorded iterates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `f_D(theta_t)` for `t = 0..=T`.
    pub losses: Vec<f64>,
    /// `||grad f_D(theta_t)||` for `t = 0..=T`.
    pub grad_norms: Vec<f64>,
    /// Strictly increasing recorded step indices; always holds 0, `T - K` and `T`.
    pub recorded_steps: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    /// Per-sample gradient evaluations spent on update steps.
    pub grad_evals: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.losses.len().saturating_sub(1)
    }

    pub fn iterate_at(&self, step: usize) -> Option<&[f64]> {
        self.recorded_steps
            .binary_search(&step)
            .ok()
            .map(|i| self.iterates[i].as_slice())
    }

    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("trajectory always records theta_T")
    }

    /// CSV with columns `step,loss,grad_norm` and, when `with_theta`, the
    /// parameter entries of recorded steps.
    pub fn write_csv(&self, path: impl AsRef<Path>, with_theta: bool) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let dim = self.iterates.first().map_or(0, Vec::len);
        let mut header = String::from("step,loss,grad_norm");
        if with_theta {
            for j in 0..dim {
                header.push_str(&format!(",theta_{j}"));
            }
        }
        writeln!(out, "{header}").unwrap();
        let rows: Box<dyn Iterator<Item = usize>> = if with_theta {
            Box::new(self.recorded_steps.iter().copied())
        } else {
            Box::new(0..self.losses.len())
        };
        for t in rows {
            let mut line = format!(
                "{t},{},{}",
                format_f64(self.losses[t]),
                format_f64(self.grad_norms[t])
            );
            if with_theta {
                for v in self.iterate_at(t).unwrap() {
                    line.push(',');
                    line.push_str(&format_f64(*v));
                }
            }
            writeln!(out, "{line}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub theta_final: ParamVector,
    pub checkpoint: Checkpoint,
    pub trajectory: Trajectory,
}

/// Runs exactly `T` deterministic gradient-descent steps on `f_D`. No noise is
/// added; see [`crate::noise::perturb`].
pub fn train<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta0: &ParamVector,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate(model.constants().smoothness, data.len())?;
    let ckpt_step = cfg.checkpoint_step();
    let mut trajectory = Trajectory::default();
    let record = |t: usize| t.is_multiple_of(cfg.record_stride) || t == ckpt_step || t == cfg.steps;
    let theta = descend(model, data, theta0.as_slice().to_vec(), cfg.eta, cfg.steps, |t, theta, loss, gnorm| {
        trajectory.losses.push(loss);
        trajectory.grad_norms.push(gnorm);
        if record(t) {
            trajectory.recorded_steps.push(t);
            trajectory.iterates.push(theta.to_vec());
        }
    })?;
    trajectory.grad_evals = (cfg.steps * data.len()) as u64;
    let checkpoint = Checkpoint::new(
        ParamVector::new(trajectory.iterate_at(ckpt_step).unwrap().to_vec())?,
        ckpt_step as u64,
        cfg.eta,
        data.fingerprint(),
        model.name(),
    );
    Ok(TrainOutput {
        theta_final: ParamVector::new(theta)?,
        checkpoint,
        trajectory,
    })
}

/// `theta_{t+1} = theta_t - eta grad f_D(theta_t)` for `steps` steps.
///
/// `observe(t, theta_t, f_D(theta_t), ||grad f_D(theta_t)||)` is called for
/// `t = 0..=steps`. The loss and gradient norm of the final iterate are logged
/// but not used for an update.
pub(crate) fn descend<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    mut theta: Vec<f64>,
    eta: f64,
    steps: usize,
    mut observe: impl FnMut(usize, &[f64], f64, f64),
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; theta.len()];
    for t in 0..=steps {
        let as_divergence = |e: Error| match e {
            Error::NonFinite { .. } => Error::Divergence { step: t },
            other => other,
        };
        let loss = empirical_loss(model, data, &theta).map_err(as_divergence)?;
        empirical_grad_into(model, data, &theta, &mut grad).map_err(as_divergence)?;
        observe(t, &theta, loss, norm(&grad));
        if t == steps {
            break;
        }
        for (x, g) in theta.iter_mut().zip(&grad) {
            *x -= eta * g;
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
    }
    Ok(theta)
}

/// Plain gradient descent without logging; returns the final iterate.
pub fn gradient_descent<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    start: &[f64],
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut theta = start.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for t in 0..steps {
        empirical_grad_into(model, data, &theta, &mut grad).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence { step: t },
            other => other,
        })?;
        for (x, g) in theta.iter_mut().zip(&grad) {
            *x -= eta * g;
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
    }
    Ok(theta)
}

/// Every iterate `theta_0..=theta_steps` of gradient descent.
pub fn gradient_descent_path<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    start: &[f64],
    eta: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut path = Vec::with_capacity(steps + 1);
    path.push(start.to_vec());
    let mut grad = vec![0.0; start.len()];
    for t in 0..steps {
        let cur = &path[t];
        empirical_grad_into(model, data, cur, &mut grad).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence { step: t },
            other => other,
        })?;
        let next: Vec<f64> = cur.iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
        path.push(next);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Constants, Sample};

    struct Quad;

    impl LossModel for Quad {
        fn dim(&self) -> usize {
            1
        }
        fn sample_loss(&self, s: Sample<'_>, t: &[f64]) -> f64 {
            0.5 * (t[0] - s.x[0]).powi(2)
        }
        fn add_sample_grad(&self, s: Sample<'_>, t: &[f64], out: &mut [f64]) {
            out[0] += t[0] - s.x[0];
        }
        fn constants(&self) -> Constants {
            Constants {
                smoothness: 1.0,
                grad_bound: 10.0,
                pl: Some(1.0),
            }
        }
    }

    fn zero_data() -> Dataset {
        Dataset::new(vec![(vec![0.0], 0.0)]).unwrap()
    }

    #[test]
    fn closed_form_two_steps() {
        let out = train(&Quad, &zero_data(), &ParamVector::new(vec![1.0]).unwrap(), &TrainConfig::new(0.5, 2, 1)).unwrap();
        // (1 - eta)^T theta0
        assert_eq!(out.theta_final.as_slice(), &[0.25]);
        assert_eq!(out.checkpoint.theta.as_slice(), &[0.5]);
        assert_eq!(out.checkpoint.step_index, 1);
        assert_eq!(out.trajectory.grad_evals, 2);
    }

    #[test]
    fn zero_steps_returns_start() {
        let theta0 = ParamVector::new(vec![0.7]).unwrap();
        let out = train(&Quad, &zero_data(), &theta0, &TrainConfig::new(0.5, 0, 0)).unwrap();
        assert_eq!(out.theta_final, theta0);
        assert_eq!(out.checkpoint.theta, theta0);
        assert_eq!(out.trajectory.recorded_steps, vec![0]);
    }

    #[test]
    fn step_size_violation() {
        let theta0 = ParamVector::new(vec![0.7]).unwrap();
        let err = train(&Quad, &zero_data(), &theta0, &TrainConfig::new(2.0, 3, 0)).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
        let err = train(&Quad, &zero_data(), &theta0, &TrainConfig::new(0.5, 3, 4)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn divergence_names_step() {
        struct Exploding;
        impl LossModel for Exploding {
            fn dim(&self) -> usize {
                1
            }
            fn sample_loss(&self, _s: Sample<'_>, t: &[f64]) -> f64 {
                t[0].exp()
            }
            fn add_sample_grad(&self, _s: Sample<'_>, t: &[f64], out: &mut [f64]) {
                out[0] -= 1e300 * t[0].abs().max(1.0);
            }
            fn constants(&self) -> Constants {
                Quad.constants()
            }
        }
        let err = train(&Exploding, &zero_data(), &ParamVector::new(vec![1.0]).unwrap(), &TrainConfig::new(0.5, 10, 0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn stride_keeps_required_steps() {
        let cfg = TrainConfig::new(0.1, 10, 3).with_record_stride(4);
        let out = train(&Quad, &zero_data(), &ParamVector::new(vec![1.0]).unwrap(), &cfg).unwrap();
        assert_eq!(out.trajectory.recorded_steps, vec![0, 4, 7, 8, 10]);
        assert_eq!(out.trajectory.losses.len(), 11);
        assert_eq!(out.trajectory.last(), out.theta_final.as_slice());
    }

    #[test]
    fn trajectory_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&Quad, &zero_data(), &ParamVector::new(vec![1.0]).unwrap(), &TrainConfig::new(0.5, 2, 0)).unwrap();
        let p = dir.path().join("t.csv");
        out.trajectory.write_csv(&p, true).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,grad_norm,theta_0");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("2,"));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(init_theta(4, 1), init_theta(4, 1));
        assert_ne!(init_theta(4, 1), init_theta(4, 2));
    }
}
