//! Per-sample losses and hand-derived gradients for the built-in problems.

use crate::model::Sample;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `0.5 * ||theta - z||^2`
pub(super) mod quadratic {
    use super::*;

    pub fn loss(s: Sample<'_>, t: &[f64]) -> f64 {
        0.5 * t.iter().zip(s.x).map(|(a, z)| (a - z) * (a - z)).sum::<f64>()
    }

    pub fn add_grad(s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        for ((o, a), z) in out.iter_mut().zip(t).zip(s.x) {
            *o += a - z;
        }
    }
}

/// `0.5 * (<x, theta> - y)^2`
pub(super) mod least_squares {
    use super::*;

    pub fn loss(s: Sample<'_>, t: &[f64]) -> f64 {
        let r = dot(s.x, t) - s.y;
        0.5 * r * r
    }

    pub fn add_grad(s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        let r = dot(s.x, t) - s.y;
        for (o, x) in out.iter_mut().zip(s.x) {
            *o += r * x;
        }
    }
}

/// `log(1 + exp(-y <x, theta>))` with labels in {-1, +1}.
pub(super) mod logistic {
    use super::*;

    pub fn loss(s: Sample<'_>, t: &[f64]) -> f64 {
        let margin = s.y * dot(s.x, t);
        // log1p(exp(-m)) without overflow for large negative margins.
        if margin > 0.0 {
            (-margin).exp().ln_1p()
        } else {
            -margin + margin.exp().ln_1p()
        }
    }

    /// `-y * x * sigmoid(-y <x, theta>)`
    pub fn add_grad(s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        let margin = s.y * dot(s.x, t);
        let w = if margin > 0.0 {
            let e = (-margin).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + margin.exp())
        };
        for (o, x) in out.iter_mut().zip(s.x) {
            *o -= s.y * w * x;
        }
    }
}

/// Coordinate-separable `sum_j (u_j^2 + 3 sin^2 u_j)` with `u = theta - z`.
pub(super) mod sine_pl {
    use super::*;

    pub fn loss(s: Sample<'_>, t: &[f64]) -> f64 {
        t.iter()
            .zip(s.x)
            .map(|(a, z)| {
                let u = a - z;
                let sn = u.sin();
                u * u + 3.0 * sn * sn
            })
            .sum()
    }

    pub fn add_grad(s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        for ((o, a), z) in out.iter_mut().zip(t).zip(s.x) {
            let u = a - z;
            *o += 2.0 * u + 3.0 * (2.0 * u).sin();
        }
    }

    /// One coordinate of the mean loss over the given centres.
    pub fn coord_loss(x: f64, zs: &[f64]) -> f64 {
        zs.iter()
            .map(|z| {
                let u = x - z;
                let sn = u.sin();
                u * u + 3.0 * sn * sn
            })
            .sum::<f64>()
            / zs.len() as f64
    }

    /// Global minimum of `coord_loss` by dense grid search then golden-section
    /// refinement. The minimiser lies within `sqrt(3 + var)` of the mean.
    pub fn coord_min(zs: &[f64]) -> f64 {
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / zs.len() as f64;
        let half = (3.0 + var).sqrt() + 0.5;
        let steps = 4000;
        let h = 2.0 * half / steps as f64;
        let (mut best_x, mut best_f) = (mean, coord_loss(mean, zs));
        for i in 0..=steps {
            let x = mean - half + h * i as f64;
            let f = coord_loss(x, zs);
            if f < best_f {
                best_x = x;
                best_f = f;
            }
        }
        let (mut a, mut b) = (best_x - h, best_x + h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if coord_loss(c, zs) < coord_loss(d, zs) {
                b = d;
            } else {
                a = c;
            }
        }
        coord_loss(0.5 * (a + b), zs).min(best_f)
    }
}

/// One-hidden-layer tanh network with squared loss.
///
/// Parameter layout: `W1` (hidden x inputs, row-major), `b1` (hidden),
/// `w2` (hidden), `b2`.
pub(super) mod mlp {
    use super::*;

    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + 2 * hidden + 1
    }

    fn forward(inputs: usize, hidden: usize, x: &[f64], t: &[f64], act: &mut [f64]) -> f64 {
        let (w1, rest) = t.split_at(hidden * inputs);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden);
        let mut out = b2[0];
        for k in 0..hidden {
            let a = dot(&w1[k * inputs..(k + 1) * inputs], x) + b1[k];
            act[k] = a.tanh();
            out += w2[k] * act[k];
        }
        out
    }

    pub fn loss(inputs: usize, hidden: usize, s: Sample<'_>, t: &[f64]) -> f64 {
        let mut act = [0.0; 64];
        let r = forward(inputs, hidden, s.x, t, &mut act[..hidden]) - s.y;
        0.5 * r * r
    }

    pub fn add_grad(inputs: usize, hidden: usize, s: Sample<'_>, t: &[f64], out: &mut [f64]) {
        let mut act = [0.0; 64];
        let r = forward(inputs, hidden, s.x, t, &mut act[..hidden]) - s.y;
        let w2 = &t[hidden * inputs + hidden..hidden * inputs + 2 * hidden];
        let (g_w1, rest) = out.split_at_mut(hidden * inputs);
        let (g_b1, rest) = rest.split_at_mut(hidden);
        let (g_w2, g_b2) = rest.split_at_mut(hidden);
        g_b2[0] += r;
        for k in 0..hidden {
            let tk = act[k];
            g_w2[k] += r * tk;
            let back = r * w2[k] * (1.0 - tk * tk);
            g_b1[k] += back;
            for (g, x) in g_w1[k * inputs..(k + 1) * inputs].iter_mut().zip(s.x) {
                *g += back * x;
            }
        }
    }
}
