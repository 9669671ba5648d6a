use astro_float_num::{BigFloat, Consts, RoundingMode};
use proptest::prelude::*;
use r2d::certify::{pl_clean_bound, pl_risk_bound};
use r2d::unlearn::{calibrate_sigma, h_of_k, min_rewind_for_noise, Calibration, PrivacyBudget};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

/// High-precision evaluation of sigma with no shared code paths.
struct Exact {
    cc: Consts,
}

impl Exact {
    fn new() -> Self {
        Self { cc: Consts::new().unwrap() }
    }

    fn f(x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    fn n(x: usize) -> BigFloat {
        BigFloat::from_f64(x as f64, P)
    }

    fn to_f64(x: &BigFloat) -> f64 {
        x.to_string().parse().unwrap()
    }

    fn h(&mut self, c: &Calibration, k: usize) -> BigFloat {
        let one = Self::f(1.0);
        let el = Self::f(c.eta).mul(&Self::f(c.smoothness), P, RM);
        let ratio = Self::n(c.n).div(&Self::n(c.n - c.m), P, RM);
        let a = one.add(&el.mul(&ratio, P, RM), P, RM);
        let b = one.add(&el, P, RM);
        a.powi(c.steps - k, P, RM).sub(&one, P, RM).mul(&b.powi(k, P, RM), P, RM)
    }

    fn sigma(&mut self, c: &Calibration, b: &PrivacyBudget, k: usize) -> f64 {
        let h = self.h(c, k);
        let two = Self::f(2.0);
        let log = Self::f(1.25).div(&Self::f(b.delta), P, RM).ln(P, RM, &mut self.cc);
        let root = two.mul(&log, P, RM).sqrt(P, RM);
        let num = two
            .mul(&Self::n(c.m), P, RM)
            .mul(&Self::f(c.grad_bound), P, RM)
            .mul(&h, P, RM)
            .mul(&root, P, RM);
        let den = Self::f(c.smoothness).mul(&Self::n(c.n), P, RM).mul(&Self::f(b.epsilon), P, RM);
        Self::to_f64(&num.div(&den, P, RM))
    }

    fn pl(&mut self, c: &Calibration, k: usize, mu: f64, gap: f64, dim: usize, sigma: f64) -> f64 {
        let one = Self::f(1.0);
        let (n, m, r) = (Self::n(c.n), Self::n(c.m), Self::n(c.n - c.m));
        let (eta, g, l, mu) = (Self::f(c.eta), Self::f(c.grad_bound), Self::f(c.smoothness), Self::f(mu));
        let em = eta.mul(&mu, P, RM);
        let learn = one.sub(&em.mul(&r, P, RM).div(&n, P, RM), P, RM).powi(c.steps - k, P, RM);
        let unlearn = one.sub(&em, P, RM).powi(k, P, RM);
        let drift = g
            .mul(&g, P, RM)
            .mul(&m, P, RM)
            .add(&l.mul(&eta, P, RM).mul(&g, P, RM).mul(&m, P, RM), P, RM)
            .div(&mu.mul(&r, P, RM), P, RM);
        let noise = l
            .mul(&Self::n(dim).sqrt(P, RM), P, RM)
            .mul(&Self::f(sigma), P, RM);
        let total = noise
            .add(&learn.mul(&unlearn, P, RM).mul(&Self::f(gap), P, RM), P, RM)
            .add(&unlearn.mul(&drift, P, RM), P, RM);
        Self::to_f64(&total)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn sigma_matches_high_precision() {
    let mut exact = Exact::new();
    let budget = PrivacyBudget::new(0.7, 1e-6).unwrap();
    for (n, m, steps, eta, l, g) in [
        (50, 1, 50, 0.002, 1.0, 3.2),
        (200, 5, 200, 1e-4, 8.0, 7.5),
        (1000, 37, 500, 0.01, 2.5, 0.8),
        (20, 19, 30, 0.04, 1.0, 1.0),
    ] {
        let c = Calibration {
            grad_bound: g,
            smoothness: l,
            n,
            m,
            eta,
            steps,
        };
        for k in [0, 1, steps / 3, steps - 1] {
            let ours = calibrate_sigma(&budget, &c, k).unwrap().sigma;
            let theirs = exact.sigma(&c, &budget, k);
            assert!(rel(ours, theirs) <= 1e-12, "n={n} m={m} k={k}: {ours} vs {theirs}");
        }
    }
}

#[test]
fn pl_bound_matches_high_precision() {
    let mut exact = Exact::new();
    let c = Calibration {
        grad_bound: 4.1,
        smoothness: 8.0,
        n: 200,
        m: 5,
        eta: 2.5e-4,
        steps: 200,
    };
    for k in [0, 50, 100, 200] {
        let ours = pl_risk_bound(&c, k, 0.15, 1.3, 1, 0.07).unwrap();
        let theirs = exact.pl(&c, k, 0.15, 1.3, 1, 0.07);
        assert!(rel(ours, theirs) <= 1e-12, "k={k}: {ours} vs {theirs}");
        let clean = pl_clean_bound(&c, k, 0.15, 1.3).unwrap();
        assert!(rel(clean, exact.pl(&c, k, 0.15, 1.3, 1, 0.0)) <= 1e-12);
    }
}

#[test]
fn sigma_vanishes_at_full_retrain_and_empty_forget() {
    let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
    let c = Calibration {
        grad_bound: 2.0,
        smoothness: 1.0,
        n: 100,
        m: 3,
        eta: 0.01,
        steps: 80,
    };
    assert_eq!(calibrate_sigma(&budget, &c, 80).unwrap().sigma, 0.0);
    for k in 0..=80 {
        assert_eq!(calibrate_sigma(&budget, &Calibration { m: 0, ..c }, k).unwrap().sigma, 0.0);
    }
}

#[test]
fn sequential_equals_one_shot_formula() {
    let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
    let base = Calibration {
        grad_bound: 2.0,
        smoothness: 1.0,
        n: 100,
        m: 0,
        eta: 0.01,
        steps: 60,
    };
    let one_shot = calibrate_sigma(&budget, &Calibration { m: 7, ..base }, 20).unwrap();
    let second = calibrate_sigma(&budget, &Calibration { m: 3 + 4, ..base }, 20).unwrap();
    assert_eq!(one_shot, second);
}

fn calibration() -> impl Strategy<Value = Calibration> {
    (2usize..400, 1usize..300, 1e-4f64..0.5, 0.1f64..10.0, 0.1f64..10.0)
        .prop_flat_map(|(n, steps, el, l, g)| {
            (0..n).prop_map(move |m| Calibration {
                grad_bound: g,
                smoothness: l,
                n,
                m,
                eta: el / l,
                steps,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn h_strictly_decreasing(c in calibration()) {
        let mut exact = Exact::new();
        let mut prev = f64::INFINITY;
        let mut prev_exact = f64::INFINITY;
        for k in 0..=c.steps {
            let h = h_of_k(c.eta, c.smoothness, c.n, c.m, c.steps, k).unwrap();
            let h_exact = Exact::to_f64(&exact.h(&c, k));
            if prev.is_finite() {
                prop_assert!(h <= prev * (1.0 + 1e-13), "k={} h={} prev={}", k, h, prev);
                // strict wherever the true step is resolvable in f64
                if prev_exact - h_exact > 1e-12 * prev_exact {
                    prop_assert!(h < prev, "k={} h={} prev={}", k, h, prev);
                }
            }
            prev = h;
            prev_exact = h_exact;
        }
        prop_assert_eq!(prev, 0.0);
    }

    #[test]
    fn sigma_monotone_in_parameters(c in calibration(), eps in 0.05f64..2.0) {
        prop_assume!(c.m >= 1 && c.m + 1 < c.n && c.steps >= 2);
        let b = PrivacyBudget::new(eps, 1e-5).unwrap();
        let k = c.steps / 2;
        let s = c.sigma(&b, k).unwrap();
        prop_assume!(s.is_finite() && s > 0.0);
        prop_assert!(c.sigma(&b, k + 1).unwrap() < s);
        let more_forget = Calibration { m: c.m + 1, ..c };
        let more_data = Calibration { n: c.n + 1, ..c };
        prop_assert!(more_forget.sigma(&b, k).unwrap() > s);
        prop_assert!(more_data.sigma(&b, k).unwrap() < s);
        prop_assert!(c.sigma(&PrivacyBudget::new(eps / 2.0, 1e-5).unwrap(), k).unwrap() > s);
    }

    #[test]
    fn certificates_are_consistent(c in calibration(), eps in 0.05f64..3.0, delta in 1e-9f64..0.5) {
        let b = PrivacyBudget::new(eps, delta).unwrap();
        for k in [0, c.steps / 2, c.steps] {
            let cert = calibrate_sigma(&b, &c, k).unwrap();
            prop_assert!(cert.is_consistent(), "{:?}", cert);
        }
    }

    #[test]
    fn min_rewind_agrees_with_scan(c in calibration(), frac in 0.0f64..1.2) {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let sigmas: Vec<f64> = (0..=c.steps).map(|k| c.sigma(&b, k).unwrap()).collect();
        let target = if sigmas[0].is_finite() { sigmas[0] * frac } else { frac };
        let k = min_rewind_for_noise(target, &b, &c).unwrap();
        prop_assert!(sigmas[k] <= target);
        if k > 0 {
            prop_assert!(sigmas[k - 1] > target);
        }
    }
}
