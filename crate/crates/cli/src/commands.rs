use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use r2d::certify::{achieved_epsilon, run_sweep, SweepConfig};
use r2d::model::format_f64;
use r2d::problems::recommended_eta;
use r2d::train::gradient_descent;
use r2d::{
    calibrate_sigma, empirical_loss, init_theta, rewind as rewind_steps, unlearn as unlearn_from, Calibration,
    Certificate, Checkpoint, Constants, Dataset, Error, NoiseStream, ParamVector, PrivacyBudget, ProblemSpec,
    ProxConfig, SplitSpec, TrainConfig,
};

use crate::{BenchArgs, CalibrateArgs, CliError, DataArgs, RewindArgs, Tally, TrainArgs, UnlearnArgs, VerifyArgs};

type Echo = [(String, String)];

fn load_data(a: &DataArgs) -> Result<(ProblemSpec, Dataset), CliError> {
    let mut spec = a.problem;
    if let Some(d) = a.d {
        spec = spec.with_inputs(d).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let data = match (&a.data, a.n) {
        (Some(path), _) => {
            let data = Dataset::read_csv(path)?;
            if a.d.is_none() && data.feature_width() != spec.inputs() {
                spec = spec.with_inputs(data.feature_width())?;
            }
            data
        }
        (None, Some(n)) => spec.generate(n, a.seed)?,
        (None, None) => return Err(CliError::Usage("--n is required unless --data is given".into())),
    };
    Ok((spec, data))
}

/// Declared constants, derived over the unit ball around `theta0` unless overridden.
fn constants(a: &DataArgs, spec: &ProblemSpec, data: &Dataset, theta0: &ParamVector) -> Result<Constants, CliError> {
    let mut c = spec.nominal_constants(data, theta0.as_slice(), a.seed)?;
    if let Some(g) = a.grad_bound {
        c.grad_bound = positive("--grad-bound", g)?;
    }
    if let Some(l) = a.smoothness {
        c.smoothness = positive("--smoothness", l)?;
    }
    Ok(c)
}

fn positive(flag: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{flag} must be a positive number, got {v}")))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").unwrap();
    }
    out
}

fn echo_block(echo: &Echo) -> String {
    key_values(echo.iter().map(|(k, v)| (k.as_str(), v.clone())))
}

pub fn train(a: &TrainArgs, echo: &Echo) -> Result<(), CliError> {
    let (spec, data) = load_data(&a.data)?;
    let theta0 = init_theta(spec.param_dim(), a.data.seed);
    let c = constants(&a.data, &spec, &data, &theta0)?;
    let model = spec.model(c);
    let stride = a
        .record_stride
        .unwrap_or_else(|| TrainConfig::default_stride(spec.param_dim(), a.steps));
    let cfg = TrainConfig::new(a.eta, a.steps, a.rewind)
        .with_seed(a.data.seed)
        .with_planned_forget(a.m)
        .with_record_stride(stride);
    let out = r2d::train(&model, &data, &theta0, &cfg)?;

    create_dir(&a.out)?;
    let ckpt_path = a.out.join("checkpoint.ckpt");
    out.checkpoint.save(&ckpt_path)?;
    Checkpoint::new(out.theta_final.clone(), a.steps as u64, a.eta, data.fingerprint(), spec.name())
        .save(a.out.join("final.ckpt"))?;
    out.trajectory.write_csv(a.out.join("trajectory.csv"), a.with_theta)?;
    data.write_csv(a.out.join("data.csv"))?;

    let final_loss = empirical_loss(&model, &data, out.theta_final.as_slice())?;
    let results = key_values([
        ("G", format_f64(c.grad_bound)),
        ("L", format_f64(c.smoothness)),
        ("checkpoint_step", out.checkpoint.step_index.to_string()),
        ("grad_evals", out.trajectory.grad_evals.to_string()),
        ("final_loss", format_f64(final_loss)),
        ("checkpoint", ckpt_path.display().to_string()),
    ]);
    write_text(&a.out.join("summary.txt"), &(echo_block(echo) + &results))?;
    print!("{results}");
    Ok(())
}

pub fn rewind(a: &RewindArgs) -> Result<(), CliError> {
    let (spec, data) = load_data(&a.data)?;
    let weights = Checkpoint::load(&a.weights)?;
    weights.check_dataset(&data)?;
    if weights.theta.dim() != spec.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_dim(),
            got: weights.theta.dim(),
        }
        .into());
    }
    let step = weights.step_index.checked_sub(a.rewind as u64).ok_or_else(|| {
        CliError::Runtime(format!("K = {} exceeds the weights' step {}", a.rewind, weights.step_index))
    })?;
    let eta = a.eta.unwrap_or(weights.eta);
    let theta0 = init_theta(spec.param_dim(), a.data.seed);
    let model = spec.model(constants(&a.data, &spec, &data, &theta0)?);
    let cfg = ProxConfig {
        tol_scale: a.tol_scale,
        max_iterations: a.max_iterations,
        inner_step: None,
    };
    let (theta, stats) = rewind_steps(&model, &data, &weights.theta, eta, a.rewind, &cfg)?;
    Checkpoint::new(theta, step, eta, data.fingerprint(), spec.name())
        .mark_reconstructed()
        .save(&a.checkpoint_out)?;
    print!(
        "{}",
        key_values([
            ("step", step.to_string()),
            ("residual", format_f64(stats.max_residual())),
            ("inner_iterations", stats.inner_iterations().to_string()),
            ("grad_evals", stats.grad_evals(data.len()).to_string()),
            ("checkpoint", a.checkpoint_out.display().to_string()),
        ])
    );
    Ok(())
}

fn forget_set(a: &UnlearnArgs, n: usize) -> Result<SplitSpec, CliError> {
    let spec = match &a.forget {
        Some(idx) => {
            let mut idx = idx.clone();
            idx.sort_unstable();
            idx.dedup();
            SplitSpec::new(idx)?
        }
        None => SplitSpec::sample(n, a.m.unwrap_or(0), a.data.seed)?,
    };
    spec.validate(n)?;
    Ok(spec)
}

pub fn unlearn(a: &UnlearnArgs, echo: &Echo) -> Result<(), CliError> {
    let (spec, data) = load_data(&a.data)?;
    let ckpt = Checkpoint::load_for(&a.checkpoint, &data)?;
    let n = data.len();
    let k = match a.rewind {
        Some(k) if k > a.steps => return Err(CliError::Usage(format!("K = {k} exceeds T = {}", a.steps))),
        Some(k) => k,
        None => a.steps.saturating_sub(ckpt.step_index as usize),
    };
    let expected = (a.steps - k) as u64;
    if ckpt.step_index != expected {
        return Err(Error::CheckpointStep {
            step: ckpt.step_index,
            expected,
        }
        .into());
    }
    let forget = forget_set(a, n)?;
    let eta = a.eta.unwrap_or(ckpt.eta);
    let theta0 = init_theta(spec.param_dim(), a.data.seed);
    let c = constants(&a.data, &spec, &data, &theta0)?;
    let model = spec.model(c);
    let cal = Calibration {
        grad_bound: c.grad_bound,
        smoothness: c.smoothness,
        n,
        m: forget.m(),
        eta,
        steps: a.steps,
    };
    let cert = match a.sigma {
        Some(sigma) => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(CliError::Usage(format!("--sigma must be finite and >= 0, got {sigma}")));
            }
            let bound = cal.distance_bound(k)?;
            Certificate {
                epsilon: achieved_epsilon(bound, sigma, a.delta),
                delta: a.delta,
                sigma,
                k,
                steps: a.steps,
                m: cal.m,
                n,
                eta,
                grad_bound: c.grad_bound,
                smoothness: c.smoothness,
                h: cal.h(k)?,
                bound,
            }
        }
        None => {
            let budget = PrivacyBudget::new(a.epsilon.unwrap_or(1.0), a.delta)?;
            calibrate_sigma(&budget, &cal, k)?
        }
    };
    if let Some(w) = cert.warning() {
        eprintln!("warning: {w}");
    }
    let mut noise = NoiseStream::new(a.noise_seed.unwrap_or(a.data.seed), "unlearn");
    let out = unlearn_from(&model, &data, &forget, &ckpt, k, cert.sigma, &mut noise)?;

    create_dir(&a.out)?;
    let weights = a.out.join("unlearned.ckpt");
    Checkpoint::new(out.theta_noisy, a.steps as u64, eta, data.fingerprint(), spec.name()).save(&weights)?;
    let report = cert.to_report();
    write_text(&a.out.join("certificate.txt"), &report)?;
    let forgotten: Vec<String> = forget.forget_indices().iter().map(ToString::to_string).collect();
    let extra = key_values([
        ("forget", forgotten.join(",")),
        ("grad_evals", out.grad_evals.to_string()),
        ("weights", weights.display().to_string()),
    ]);
    write_text(&a.out.join("summary.txt"), &(echo_block(echo) + &report + &extra))?;
    print!("{report}{extra}");
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let (grad_bound, smoothness) = match (a.grad_bound, a.smoothness, a.problem) {
        (Some(g), Some(l), _) => (positive("--grad-bound", g)?, positive("--smoothness", l)?),
        (g, l, Some(spec)) => {
            let spec = match a.d {
                Some(d) => spec.with_inputs(d).map_err(|e| CliError::Usage(e.to_string()))?,
                None => spec,
            };
            let data = spec.generate(a.n, a.seed)?;
            let theta0 = init_theta(spec.param_dim(), a.seed);
            let c = spec.nominal_constants(&data, theta0.as_slice(), a.seed)?;
            (g.unwrap_or(c.grad_bound), l.unwrap_or(c.smoothness))
        }
        _ => {
            return Err(CliError::Usage(
                "calibrate needs --grad-bound and --smoothness, or --problem".into(),
            ))
        }
    };
    let budget = PrivacyBudget::new(a.epsilon, a.delta)?;
    let cal = Calibration {
        grad_bound,
        smoothness,
        n: a.n,
        m: a.m,
        eta: a.eta,
        steps: a.steps,
    };
    let mut table = String::from("K,h,sigma,bound\n");
    for k in 0..=a.steps {
        let cert = calibrate_sigma(&budget, &cal, k)?;
        writeln!(
            table,
            "{k},{},{},{}",
            format_f64(cert.h),
            format_f64(cert.sigma),
            format_f64(cert.bound)
        )
        .unwrap();
    }
    match &a.out {
        Some(path) => write_text(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

pub fn verify(a: &VerifyArgs, echo: &Echo) -> Result<(), CliError> {
    let mut cfg = SweepConfig::full(a.seeds);
    if let Some(problems) = &a.problems {
        cfg.problems = problems.clone();
    }
    cfg.ns = a.ns.clone();
    cfg.ms = a.ms.clone();
    cfg.steps = a.steps.clone();
    cfg.draws = a.draws;
    cfg.eta_fraction = a.eta_fraction;
    cfg.g_scale = a.g_scale;
    cfg.budget = PrivacyBudget::new(a.epsilon, a.delta)?;
    cfg.keep_steps = true;
    let report = run_sweep(&cfg)?;

    create_dir(&a.out)?;
    report.write_steps_csv(a.out.join("steps.csv"))?;
    report.write_cases_csv(a.out.join("cases.csv"))?;
    // wall-clock time goes to a sidecar so the summary is reproducible
    let summary: String = report
        .summary()
        .lines()
        .filter(|l| !l.starts_with("seconds="))
        .map(|l| format!("{l}\n"))
        .collect();
    write_text(&a.out.join("summary.txt"), &(echo_block(echo) + &summary))?;
    write_text(&a.out.join("timing.txt"), &format!("seconds={:.3}\n", report.seconds))?;
    print!("{summary}");
    let pass = match a.tally {
        Tally::Printed => report.pass(),
        Tally::Full => report.pass_full_tally(),
    };
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

fn median(mut times: Vec<Duration>) -> f64 {
    times.sort_unstable();
    times[times.len() / 2].as_secs_f64()
}

pub fn bench(a: &BenchArgs, echo: &Echo) -> Result<(), CliError> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".into()));
    }
    let (spec, data) = load_data(&a.data)?;
    let n = data.len();
    let seed = a.data.seed;
    let theta0 = init_theta(spec.param_dim(), seed);
    let c = constants(&a.data, &spec, &data, &theta0)?;
    let model = spec.model(c);
    let forget = SplitSpec::sample(n, a.m, seed)?;
    let eta = a.eta.unwrap_or_else(|| recommended_eta(&c, n, a.m));
    let cfg = TrainConfig::new(eta, a.steps, a.rewind)
        .with_seed(seed)
        .with_planned_forget(a.m);
    let trained = r2d::train(&model, &data, &theta0, &cfg)?;

    let mut retrain_times = Vec::with_capacity(a.reps);
    let mut unlearn_times = Vec::with_capacity(a.reps);
    let mut unlearn_evals = 0;
    for _ in 0..a.reps {
        let t = Instant::now();
        gradient_descent(&model, &data, &theta0, eta, a.steps)?;
        retrain_times.push(t.elapsed());
        let t = Instant::now();
        let u = unlearn_from(&model, &data, &forget, &trained.checkpoint, a.rewind, 0.0, &mut NoiseStream::new(seed, "bench"))?;
        unlearn_times.push(t.elapsed());
        unlearn_evals = u.grad_evals;
    }
    let retrain_evals = trained.trajectory.grad_evals;
    let (retrain_s, unlearn_s) = (median(retrain_times), median(unlearn_times));

    let mut pairs = vec![
        ("unlearn_grad_evals", unlearn_evals.to_string()),
        ("retrain_grad_evals", retrain_evals.to_string()),
        ("ratio_k_over_t", format_f64(a.rewind as f64 / a.steps as f64)),
        ("grad_eval_ratio", format_f64(unlearn_evals as f64 / retrain_evals as f64)),
        ("unlearn_seconds", format_f64(unlearn_s)),
        ("retrain_seconds", format_f64(retrain_s)),
        ("time_ratio", format_f64(unlearn_s / retrain_s)),
    ];
    if eta < 1.0 / c.smoothness {
        let mut times = Vec::with_capacity(a.reps);
        let mut stats = None;
        for _ in 0..a.reps {
            let t = Instant::now();
            stats = Some(rewind_steps(&model, &data, &trained.theta_final, eta, a.rewind, &ProxConfig::default())?.1);
            times.push(t.elapsed());
        }
        let stats = stats.expect("reps >= 1");
        pairs.push(("rewind_inner_iterations", stats.inner_iterations().to_string()));
        pairs.push(("rewind_grad_evals", stats.grad_evals(n).to_string()));
        pairs.push(("rewind_max_residual", format_f64(stats.max_residual())));
        pairs.push(("rewind_seconds", format_f64(median(times))));
    } else {
        pairs.push(("rewind_inner_iterations", "n/a".into()));
    }
    let report = echo_block(echo) + &key_values([("eta_used", format_f64(eta))]) + &key_values(pairs);
    if let Some(path) = &a.out {
        write_text(path, &report)?;
    }
    print!("{report}");
    Ok(())
}
