//! Independent checks that ground the declared constants: finite differences,
//! sampled gradient/smoothness bounds, and the PL inequality.

use crate::error::{Error, Result};
use crate::model::{distance, empirical_grad, empirical_loss, norm, Dataset, LossModel, ParamVector, Sample};
use crate::noise::NoiseStream;

/// Closed Euclidean ball; the region over which constants are certified.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius >= 0.0 && radius.is_finite(), "ball radius must be finite and >= 0");
        Self { center, radius }
    }

    /// Ball around `theta0` with twice the largest excursion of any iterate.
    pub fn training_tube<'a>(theta0: &[f64], iterates: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let reach = iterates
            .into_iter()
            .map(|t| distance(theta0, t))
            .fold(0.0, f64::max);
        Self::new(theta0.to_vec(), 2.0 * reach)
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        distance(&self.center, theta) <= self.radius * (1.0 + 1e-12)
    }

    /// Uniform sample from the ball.
    pub fn sample(&self, noise: &mut NoiseStream) -> Vec<f64> {
        use rand::Rng;
        let d = self.center.len();
        let mut dir = vec![0.0; d];
        noise.fill_standard_normal(&mut dir);
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let r = self.radius * noise.rng().random::<f64>().powf(1.0 / d as f64);
        self.center
            .iter()
            .zip(&dir)
            .map(|(c, u)| c + r * u / len)
            .collect()
    }
}

/// Central differences of the empirical loss, one coordinate at a time.
pub fn finite_diff_grad<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = empirical_loss(model, data, &probe)?;
        probe[i] = theta[i] - h;
        let minus = empirical_loss(model, data, &probe)?;
        probe[i] = theta[i];
        out.push((plus - minus) / (2.0 * h));
    }
    ParamVector::new(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub trials: usize,
    pub max_grad_norm: f64,
    pub max_grad_ratio: f64,
    pub grad_bound: f64,
    pub smoothness: f64,
    pub grad_ok: bool,
    pub smoothness_ok: bool,
}

impl ConstantsReport {
    pub fn pass(&self) -> bool {
        self.grad_ok && self.smoothness_ok
    }
}

/// Relative slack allowed when comparing sampled maxima to declared constants.
pub const CONSTANTS_SLACK: f64 = 0.01;

/// Samples `trials` points of `region`, a random sample per point, and a nearby
/// or distant partner point; compares the largest gradient norm against `G` and
/// the largest gradient difference quotient against `L`.
pub fn verify_constants<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    region: &Ball,
    trials: usize,
    seed: u64,
) -> Result<ConstantsReport> {
    use rand::Rng;
    if trials == 0 {
        return Err(Error::invalid("verify_constants needs at least one trial"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut noise = NoiseStream::new(seed, "verify-constants");
    let scale = region.radius.max(1e-3);
    let d = model.dim();
    let mut max_grad: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut dir = vec![0.0; d];
    for _ in 0..trials {
        let t1 = region.sample(&mut noise);
        let s = data.sample(noise.rng().random_range(0..data.len()));
        let g1 = model.sample_grad(s, &t1);
        max_grad = max_grad.max(norm(&g1));

        noise.fill_standard_normal(&mut dir);
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let step = scale * 10f64.powf(-4.0 * noise.rng().random::<f64>());
        let t2: Vec<f64> = t1.iter().zip(&dir).map(|(a, u)| a + step * u / len).collect();
        let g2 = model.sample_grad(s, &t2);
        let gap = distance(&t1, &t2);
        if gap > 0.0 {
            max_ratio = max_ratio.max(distance(&g1, &g2) / gap);
        }
    }
    let c = model.constants();
    Ok(ConstantsReport {
        trials,
        max_grad_norm: max_grad,
        max_grad_ratio: max_ratio,
        grad_bound: c.grad_bound,
        smoothness: c.smoothness,
        grad_ok: max_grad <= c.grad_bound * (1.0 + CONSTANTS_SLACK),
        smoothness_ok: max_ratio <= c.smoothness * (1.0 + CONSTANTS_SLACK),
    })
}

/// Largest-magnitude Hessian eigenvalue of one per-sample loss, by power
/// iteration on finite-difference Hessian-vector products.
pub fn hessian_norm_estimate<M: LossModel + ?Sized>(
    model: &M,
    sample: Sample<'_>,
    theta: &[f64],
    iterations: usize,
    noise: &mut NoiseStream,
) -> f64 {
    let d = theta.len();
    let eps = 1e-5 * (1.0 + norm(theta));
    let mut v = vec![0.0; d];
    noise.fill_standard_normal(&mut v);
    let len = norm(&v).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= len);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        for i in 0..d {
            plus[i] = theta[i] + eps * v[i];
            minus[i] = theta[i] - eps * v[i];
        }
        let gp = model.sample_grad(sample, &plus);
        let gm = model.sample_grad(sample, &minus);
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        lambda = norm(&hv);
        if lambda == 0.0 {
            return 0.0;
        }
        v = hv.into_iter().map(|x| x / lambda).collect();
    }
    lambda
}

/// Sampled `(max ||grad f_z||, max local curvature)` over `region`; used for
/// models without closed-form constants.
pub(crate) fn estimate_constants<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    region: &Ball,
    seed: u64,
) -> (f64, f64) {
    use rand::Rng;
    let mut noise = NoiseStream::new(seed, "estimate-constants");
    let mut g_max: f64 = 0.0;
    let mut points = vec![region.center.clone()];
    points.extend((0..400).map(|_| region.sample(&mut noise)));
    for p in &points {
        for s in data.iter() {
            g_max = g_max.max(norm(&model.sample_grad(s, p)));
        }
    }
    let mut l_max: f64 = 0.0;
    for p in points.iter().take(48) {
        for _ in 0..6 {
            let s = data.sample(noise.rng().random_range(0..data.len()));
            l_max = l_max.max(hessian_norm_estimate(model, s, p, 30, &mut noise));
        }
    }
    let sampled = verify_constants(model, data, region, 2000, seed ^ 0x5eed).map(|r| r.max_grad_ratio);
    (g_max, l_max.max(sampled.unwrap_or(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlReport {
    /// Smallest `0.5 ||grad f||^2 - mu (f - f*)` over the checked points.
    pub min_slack: f64,
    pub worst_point: Vec<f64>,
    pub points: usize,
    pub pass: bool,
}

/// Checks `0.5 ||grad f_D(x)||^2 >= mu (f_D(x) - f*)` at every point.
pub fn pl_check<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    mu: f64,
    f_star: f64,
    points: &[Vec<f64>],
) -> Result<PlReport> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::invalid(format!("PL constant must be > 0, got {mu}")));
    }
    let mut min_slack = f64::INFINITY;
    let mut worst_point = Vec::new();
    let mut pass = true;
    for x in points {
        let f = empirical_loss(model, data, x)?;
        let g = empirical_grad(model, data, x)?;
        let lhs = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
        let rhs = mu * (f - f_star);
        let slack = lhs - rhs;
        // Rounding near the minimiser makes exact PL equality (quadratics)
        // come out a few ulps negative.
        let tol = 1e-12 * (1.0 + lhs.abs() + rhs.abs() + mu * f.abs());
        if slack < -tol {
            pass = false;
        }
        if slack < min_slack {
            min_slack = slack;
            worst_point = x.clone();
        }
    }
    Ok(PlReport {
        min_slack,
        worst_point,
        points: points.len(),
        pass,
    })
}

/// Evenly spaced one-dimensional points on `[lo, hi]`.
pub fn line_grid(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    assert!(count >= 2);
    (0..count)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (count - 1) as f64])
        .collect()
}

/// `f((a + b) / 2) - (f(a) + f(b)) / 2`; positive values witness nonconvexity.
pub fn convexity_gap(f: impl Fn(&[f64]) -> f64, a: &[f64], b: &[f64]) -> f64 {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    f(&mid) - 0.5 * (f(a) + f(b))
}
