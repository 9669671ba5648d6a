//! Parameter sweeps over coupled runs, shared by the CLI and the test suite.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::bounds::achieved_epsilon;
use super::coupling::{check_coupling, run_coupling_sweep, tube_of, StepCheck};
use super::utility::{gradnorm_report, pl_utility_report, tube_constants, GradNormReport, PlUtilityReport};
use crate::error::{Error, Result};
use crate::model::{format_f64, split, Constants, SplitSpec};
use crate::noise::NoiseStream;
use crate::problems::{max_step_size, ProblemKind, ProblemSpec};
use crate::train::init_theta;
use crate::unlearn::{calibrate_sigma, PrivacyBudget};

/// Default `eta L`. Small enough that the calibrated noise stays moderate
/// over the whole sweep, so the noise-dependent utility bounds are testable.
pub const DEFAULT_ETA_FRACTION: f64 = 0.002;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub problems: Vec<ProblemSpec>,
    pub seeds: Vec<u64>,
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub steps: Vec<usize>,
    /// Rewind depths as fractions `num/den` of `T`.
    pub rewinds: Vec<(usize, usize)>,
    /// Step size as a multiple of `1/L` for the nominal `L`.
    pub eta_fraction: f64,
    pub budget: PrivacyBudget,
    /// Noise draws for the utility reports; 0 skips them.
    pub draws: usize,
    /// Multiplier applied to the certified `G` (fault injection below 1).
    pub g_scale: f64,
    /// Keep per-step checks in each case.
    pub keep_steps: bool,
}

impl SweepConfig {
    /// Every built-in problem over `n in {50, 200}`, `m in {1, 5}`,
    /// `T in {50, 200}`, `K in {0, T/4, T/2, T}`.
    pub fn full(seeds: usize) -> Self {
        Self {
            problems: ProblemKind::ALL.iter().map(|&k| ProblemSpec::new(k)).collect(),
            seeds: (0..seeds as u64).collect(),
            ns: vec![50, 200],
            ms: vec![1, 5],
            steps: vec![50, 200],
            rewinds: vec![(0, 4), (1, 4), (2, 4), (4, 4)],
            eta_fraction: DEFAULT_ETA_FRACTION,
            budget: PrivacyBudget::new(1.0, 1e-5).unwrap(),
            draws: 1000,
            g_scale: 1.0,
            keep_steps: false,
        }
    }

    pub fn rewind_depths(&self, steps: usize) -> Vec<usize> {
        let mut ks: Vec<usize> = self.rewinds.iter().map(|&(a, b)| steps * a / b).collect();
        ks.dedup();
        ks
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta_fraction > 0.0 && self.eta_fraction <= 1.0) {
            return Err(Error::invalid(format!("eta fraction must lie in (0, 1], got {}", self.eta_fraction)));
        }
        if !(self.g_scale > 0.0 && self.g_scale.is_finite()) {
            return Err(Error::invalid("G scale must be positive"));
        }
        if self.rewinds.iter().any(|&(a, b)| b == 0 || a > b) {
            return Err(Error::invalid("rewind fractions must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub problem: &'static str,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub k: usize,
    pub eta: f64,
    pub constants: Constants,
    pub step_size_ok: bool,
    pub sigma: f64,
    pub target_epsilon: f64,
    pub coupling_violations: usize,
    pub worst_ratio: f64,
    pub final_measured: f64,
    pub final_bound: f64,
    pub achieved_epsilon: f64,
    pub gradnorm: Option<GradNormReport>,
    pub pl: Option<PlUtilityReport>,
    pub step_checks: Option<Vec<StepCheck>>,
    /// Per-sample gradient evaluations for unlearning and for retraining.
    pub unlearn_grad_evals: u64,
    pub retrain_grad_evals: u64,
}

impl CaseResult {
    pub fn coupling_pass(&self) -> bool {
        self.coupling_violations == 0
    }

    /// Checked only on runs whose coupling bounds hold.
    pub fn epsilon_pass(&self) -> bool {
        !self.coupling_pass() || self.achieved_epsilon <= self.target_epsilon * (1.0 + 1e-12)
    }

    pub fn pass(&self) -> bool {
        self.pass_except_gradnorm() && self.gradnorm.as_ref().is_none_or(GradNormReport::pass)
    }

    /// As [`CaseResult::pass`], judging the gradient-norm bound by its full tally.
    pub fn pass_full_tally(&self) -> bool {
        self.pass_except_gradnorm() && self.gradnorm.as_ref().is_none_or(GradNormReport::pass_full_tally)
    }

    fn pass_except_gradnorm(&self) -> bool {
        self.step_size_ok
            && self.coupling_pass()
            && self.epsilon_pass()
            && self.pl.as_ref().is_none_or(|p| p.pass() && p.pass_clean())
    }

    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), format_f64);
        let flag = |v: Option<bool>| v.map_or_else(|| "n/a".to_string(), |b| b.to_string());
        let g = self.gradnorm.as_ref();
        let p = self.pl.as_ref();
        [
            self.problem.to_string(),
            self.seed.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            self.steps.to_string(),
            self.k.to_string(),
            format_f64(self.eta),
            format_f64(self.constants.grad_bound),
            format_f64(self.constants.smoothness),
            format_f64(self.sigma),
            self.coupling_violations.to_string(),
            format_f64(self.worst_ratio),
            format_f64(self.final_measured),
            format_f64(self.final_bound),
            format_f64(self.achieved_epsilon),
            opt(g.map(|r| r.lhs)),
            opt(g.map(|r| r.rhs)),
            flag(g.map(GradNormReport::pass)),
            flag(g.map(GradNormReport::pass_full_tally)),
            opt(p.map(|r| r.measured)),
            opt(p.map(|r| r.bound)),
            flag(p.map(PlUtilityReport::pass)),
            flag(p.map(PlUtilityReport::pass_clean)),
            self.pass().to_string(),
        ]
        .join(",")
    }
}

const CASE_HEADER: &str = "problem,seed,n,m,T,K,eta,G,L,sigma,coupling_violations,worst_ratio,final_measured,final_bound,achieved_epsilon,gradnorm_lhs,gradnorm_rhs,gradnorm_pass,gradnorm_full_tally_pass,pl_measured,pl_bound,pl_pass,pl_clean_pass,pass";

/// Outcome of a sweep; `pass` iff every checked inequality held.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub cases: Vec<CaseResult>,
    pub seconds: f64,
}

impl VerificationReport {
    pub fn coupling_violations(&self) -> usize {
        self.cases.iter().map(|c| c.coupling_violations).sum()
    }

    pub fn epsilon_violations(&self) -> usize {
        self.cases.iter().filter(|c| !c.epsilon_pass()).count()
    }

    pub fn step_size_violations(&self) -> usize {
        self.cases.iter().filter(|c| !c.step_size_ok).count()
    }

    pub fn gradnorm_failures(&self) -> usize {
        self.cases.iter().filter(|c| c.gradnorm.as_ref().is_some_and(|g| !g.pass())).count()
    }

    pub fn gradnorm_full_tally_failures(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| c.gradnorm.as_ref().is_some_and(|g| !g.pass_full_tally()))
            .count()
    }

    pub fn pl_failures(&self) -> usize {
        self.cases.iter().filter(|c| c.pl.as_ref().is_some_and(|p| !p.pass())).count()
    }

    pub fn pl_clean_failures(&self) -> usize {
        self.cases.iter().filter(|c| c.pl.as_ref().is_some_and(|p| !p.pass_clean())).count()
    }

    pub fn pass(&self) -> bool {
        self.cases.iter().all(CaseResult::pass)
    }

    pub fn pass_full_tally(&self) -> bool {
        self.cases.iter().all(CaseResult::pass_full_tally)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let gradnorm_checked = self.cases.iter().filter(|c| c.gradnorm.is_some()).count();
        let pl_checked = self.cases.iter().filter(|c| c.pl.is_some()).count();
        let worst = self.cases.iter().map(|c| c.worst_ratio).fold(0.0, f64::max);
        let na = |checked: usize, v: usize| if checked == 0 { "n/a".to_string() } else { v.to_string() };
        for (k, v) in [
            ("cases", self.cases.len().to_string()),
            ("coupling_violations", self.coupling_violations().to_string()),
            ("worst_ratio", format_f64(worst)),
            ("epsilon_violations", self.epsilon_violations().to_string()),
            ("step_size_violations", self.step_size_violations().to_string()),
            ("gradnorm_checked", gradnorm_checked.to_string()),
            ("gradnorm_failures", na(gradnorm_checked, self.gradnorm_failures())),
            ("gradnorm_full_tally_failures", na(gradnorm_checked, self.gradnorm_full_tally_failures())),
            ("pl_checked", pl_checked.to_string()),
            ("pl_failures", na(pl_checked, self.pl_failures())),
            ("pl_clean_failures", na(pl_checked, self.pl_clean_failures())),
            ("seconds", format!("{:.3}", self.seconds)),
            ("pass", self.pass().to_string()),
            ("pass_full_tally", self.pass_full_tally().to_string()),
        ] {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    /// One row per recorded step of every case kept with `keep_steps`.
    pub fn write_steps_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "problem,seed,n,m,T,K,phase,t,delta_measured,delta_bound,margin").map_err(io)?;
        for c in &self.cases {
            for s in c.step_checks.iter().flatten() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    c.problem,
                    c.seed,
                    c.n,
                    c.m,
                    c.steps,
                    c.k,
                    s.phase,
                    s.t,
                    format_f64(s.measured),
                    format_f64(s.bound),
                    format_f64(s.margin())
                )
                .map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn write_cases_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "{CASE_HEADER}").unwrap();
        for c in &self.cases {
            writeln!(out, "{}", c.csv_row()).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

struct Group {
    spec: ProblemSpec,
    seed: u64,
    n: usize,
    m: usize,
    steps: usize,
}

/// Runs every configuration in parallel; results are in a fixed order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut groups = Vec::new();
    for &spec in &cfg.problems {
        for &n in &cfg.ns {
            for &m in &cfg.ms {
                for &steps in &cfg.steps {
                    for &seed in &cfg.seeds {
                        groups.push(Group { spec, seed, n, m, steps });
                    }
                }
            }
        }
    }
    let results: Vec<Vec<CaseResult>> = groups.par_iter().map(|g| run_group(cfg, g)).collect::<Result<_>>()?;
    Ok(VerificationReport {
        cases: results.into_iter().flatten().collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_group(cfg: &SweepConfig, g: &Group) -> Result<Vec<CaseResult>> {
    let Group { spec, seed, n, m, steps } = *g;
    let data = spec.generate(n, seed)?;
    let forget = SplitSpec::sample(n, m, seed)?;
    let (retain, _) = split(&data, &forget)?;
    let theta0 = init_theta(spec.param_dim(), seed);
    let nominal = spec.nominal_constants(&data, &theta0, seed)?;
    let eta = (cfg.eta_fraction / nominal.smoothness).min(max_step_size(nominal.smoothness, n, m));
    let probe = spec.model(nominal);
    let ks = cfg.rewind_depths(steps);
    let runs = run_coupling_sweep(&probe, &data, &forget, &theta0, eta, steps, &ks)?;
    let tube = tube_of(&runs, &theta0);
    let constants = tube_constants(&spec, &data, &tube, seed, cfg.g_scale)?;
    let model = spec.model(constants);
    let step_size_ok = eta <= max_step_size(constants.smoothness, n, m) * (1.0 + 1e-12);

    runs.iter()
        .map(|run| {
            let k = run.k;
            let coupling = check_coupling(run, &constants)?;
            let cert = calibrate_sigma(&cfg.budget, &run.calibration(&constants), k)?;
            let stream = format!("mc:{}:{n}:{m}:{steps}:{k}", spec.name());
            let (gradnorm, pl) = if cfg.draws > 0 {
                let mut noise = NoiseStream::indexed(seed, &stream, 0);
                let gn = gradnorm_report(&model, &retain, run, &constants, cert.sigma, cfg.draws, &mut noise)?;
                let pl = if spec.is_pl() {
                    let mut noise = NoiseStream::indexed(seed, &stream, 1);
                    Some(pl_utility_report(&model, &retain, run, &constants, cert.sigma, None, None, cfg.draws, &mut noise)?)
                } else {
                    None
                };
                (Some(gn), pl)
            } else {
                (None, None)
            };
            Ok(CaseResult {
                problem: spec.name(),
                seed,
                n,
                m,
                steps,
                k,
                eta,
                constants,
                step_size_ok,
                sigma: cert.sigma,
                target_epsilon: cfg.budget.epsilon,
                coupling_violations: coupling.violations(),
                worst_ratio: coupling.worst_ratio(),
                final_measured: coupling.final_measured,
                final_bound: coupling.final_bound,
                achieved_epsilon: achieved_epsilon(coupling.final_measured, cert.sigma, cfg.budget.delta),
                gradnorm,
                pl,
                step_checks: cfg.keep_steps.then(|| coupling.steps.clone()),
                unlearn_grad_evals: (k * (n - m)) as u64,
                retrain_grad_evals: (steps * (n - m)) as u64,
            })
        })
        .collect()
}
