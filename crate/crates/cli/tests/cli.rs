use std::path::Path;
use std::process::{Command, Output};

use r2d::model::format_f64;
use r2d::{calibrate_sigma, init_theta, Calibration, Certificate, Checkpoint, Dataset, PrivacyBudget, ProblemSpec};

fn r2d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2d")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train_logistic(dir: &Path, k: &str) -> Output {
    r2d(&[
        "train", "--problem", "logistic", "--n", "40", "--T", "30", "--K", k, "--eta", "0.05", "--m", "3", "--seed", "2",
        "--out", p(dir),
    ])
}

#[test]
fn train_writes_checkpoint_at_t_minus_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = r2d(&[
        "train", "--problem", "scalar_quadratic", "--n", "1", "--T", "2", "--K", "1", "--eta", "0.5", "--seed", "7",
        "--out", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = Checkpoint::load(dir.path().join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt.step_index, 1);
    assert!(!ckpt.reconstructed);
    assert_eq!(Checkpoint::load(dir.path().join("final.ckpt")).unwrap().step_index, 2);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,loss,grad_norm"));
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(value(&summary, "eta"), "0.5");
    assert_eq!(value(&summary, "problem"), "scalar_quadratic");
    assert!(stdout(&out).contains("final_loss="));
}

#[test]
fn usage_and_runtime_exit_codes() {
    let missing_eta = r2d(&["train", "--problem", "scalar_quadratic", "--n", "1", "--T", "2"]);
    assert_eq!(missing_eta.status.code(), Some(2));
    let bad_eta = r2d(&["train", "--problem", "scalar_quadratic", "--n", "1", "--T", "2", "--eta", "0.9", "--out", "unused"]);
    assert_eq!(bad_eta.status.code(), Some(1));
    assert!(stderr(&bad_eta).contains("step-size constraint"));
    assert_eq!(r2d(&["train", "--problem", "resnet", "--n", "1", "--T", "2", "--eta", "0.1"]).status.code(), Some(2));
    assert_eq!(r2d(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(r2d(&["--help"]).status.code(), Some(0));
}

#[test]
fn rewind_zero_is_identity_and_feeds_unlearn() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(train_logistic(d, "5").status.success());
    let data = p(&d.join("data.csv")).to_string();
    let weights = p(&d.join("final.ckpt")).to_string();

    let same = d.join("same.ckpt");
    let out = r2d(&["rewind", "--problem", "logistic", "--data", &data, "--weights", &weights, "--K", "0", "--checkpoint-out", p(&same)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let same = Checkpoint::load(&same).unwrap();
    let fin = Checkpoint::load(&weights).unwrap();
    assert!(same.reconstructed);
    assert_eq!(same.theta, fin.theta);

    let rec = d.join("rec.ckpt");
    let out = r2d(&["rewind", "--problem", "logistic", "--data", &data, "--weights", &weights, "--K", "5", "--checkpoint-out", p(&rec)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let residual: f64 = value(&stdout(&out), "residual").parse().unwrap();
    assert!(residual > 0.0 && residual < 1e-9);
    let rec_ckpt = Checkpoint::load(&rec).unwrap();
    assert_eq!(rec_ckpt.step_index, 25);
    let saved = Checkpoint::load(d.join("checkpoint.ckpt")).unwrap();
    assert!(rec_ckpt.theta.distance(&saved.theta) < 1e-8);

    // unlearning from the reconstructed and the saved checkpoint must agree
    let mut certs = Vec::new();
    for (name, ckpt) in [("a", rec.clone()), ("b", d.join("checkpoint.ckpt"))] {
        let out_dir = d.join(name);
        let out = r2d(&[
            "unlearn", "--problem", "logistic", "--data", &data, "--checkpoint", p(&ckpt), "--T", "30", "--m", "3",
            "--seed", "2", "--epsilon", "1", "--out", p(&out_dir),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let cert = Certificate::parse_report(&std::fs::read_to_string(out_dir.join("certificate.txt")).unwrap()).unwrap();
        let theta = Checkpoint::load(out_dir.join("unlearned.ckpt")).unwrap().theta;
        certs.push((cert, theta));
    }
    assert_eq!(certs[0].0, certs[1].0);
    assert!(certs[0].1.distance(&certs[1].1) < 1e-8);
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_logistic(dir.path(), "2").status.success());
    let out = r2d(&[
        "rewind", "--problem", "logistic", "--data", p(&dir.path().join("nope.csv")), "--weights",
        p(&dir.path().join("final.ckpt")), "--K", "1", "--checkpoint-out", p(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unlearn_nothing_reproduces_final_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(train_logistic(d, "4").status.success());
    let out = r2d(&[
        "unlearn", "--problem", "logistic", "--data", p(&d.join("data.csv")), "--checkpoint", p(&d.join("checkpoint.ckpt")),
        "--T", "30", "--m", "0", "--out", p(&d.join("u")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(value(&stdout(&out), "sigma"), format_f64(0.0));
    let got = Checkpoint::load(d.join("u/unlearned.ckpt")).unwrap();
    let fin = Checkpoint::load(d.join("final.ckpt")).unwrap();
    for (a, b) in got.theta.iter().zip(fin.theta.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn unlearn_certificate_matches_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(train_logistic(d, "6").status.success());
    let out = r2d(&[
        "unlearn", "--problem", "logistic", "--data", p(&d.join("data.csv")), "--checkpoint", p(&d.join("checkpoint.ckpt")),
        "--T", "30", "--m", "3", "--seed", "2", "--epsilon", "1", "--delta", "1e-5", "--out", p(&d.join("u")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cert = Certificate::parse_report(&stdout(&out)).unwrap();

    let data = Dataset::read_csv(d.join("data.csv")).unwrap();
    let spec = ProblemSpec::by_name("logistic").unwrap();
    let c = spec.nominal_constants(&data, init_theta(spec.param_dim(), 2).as_slice(), 2).unwrap();
    let cal = Calibration {
        grad_bound: c.grad_bound,
        smoothness: c.smoothness,
        n: 40,
        m: 3,
        eta: 0.05,
        steps: 30,
    };
    let expected = calibrate_sigma(&PrivacyBudget::new(1.0, 1e-5).unwrap(), &cal, 6).unwrap();
    assert_eq!(cert.sigma.to_bits(), expected.sigma.to_bits());
    assert_eq!(cert, expected);
    assert_eq!(value(&stdout(&out), "grad_evals"), (6 * 37).to_string());
}

#[test]
fn unlearn_rejects_conflicts_and_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(train_logistic(d, "6").status.success());
    let ckpt = p(&d.join("checkpoint.ckpt")).to_string();
    let data = p(&d.join("data.csv")).to_string();
    let base = ["unlearn", "--problem", "logistic", "--checkpoint", &ckpt, "--T", "30", "--m", "3"];

    let both: Vec<&str> = base.iter().copied().chain(["--data", &data, "--sigma", "0.1", "--epsilon", "1"]).collect();
    assert_eq!(r2d(&both).status.code(), Some(2));

    let other = r2d(&base.iter().copied().chain(["--n", "40", "--seed", "9"]).collect::<Vec<_>>());
    assert_eq!(other.status.code(), Some(1));
    assert!(stderr(&other).contains("checkpoint/dataset mismatch"));

    let all = r2d(&["unlearn", "--problem", "logistic", "--checkpoint", &ckpt, "--T", "30", "--m", "40", "--data", &data]);
    assert_eq!(all.status.code(), Some(1));

    let wrong_k = r2d(&base.iter().copied().chain(["--data", &data, "--K", "3"]).collect::<Vec<_>>());
    assert_eq!(wrong_k.status.code(), Some(1));
}

fn calibrate(extra: &[&str]) -> Vec<Vec<f64>> {
    let mut args = vec!["calibrate", "--grad-bound", "2", "--smoothness", "1", "--n", "100", "--eta", "0.01", "--T", "40"];
    args.extend_from_slice(extra);
    let out = r2d(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("K,h,sigma,bound"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn calibrate_table_shape() {
    let rows = calibrate(&["--m", "3"]);
    assert_eq!(rows.len(), 41);
    assert_eq!(rows.last().unwrap()[2], 0.0);
    assert!(rows.windows(2).all(|w| w[1][2] < w[0][2]));
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
    assert!(calibrate(&["--m", "0"]).iter().all(|r| r[2] == 0.0));
    assert_eq!(r2d(&["calibrate", "--n", "10", "--eta", "0.1", "--T", "3"]).status.code(), Some(2));
}

#[test]
fn verify_passes_small_suite_and_catches_fault() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["verify", "--seeds", "1", "--ns", "50", "--ms", "1", "--T", "50"];
    let a = dir.path().join("a");
    let out = r2d(&small.iter().copied().chain(["--out", p(&a)]).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let steps = std::fs::read_to_string(a.join("steps.csv")).unwrap();
    assert!(steps.starts_with("problem,seed,n,m,T,K,phase,t,delta_measured,delta_bound,margin\n"));
    assert!(steps.lines().count() > 100);
    assert_eq!(value(&stdout(&out), "coupling_violations"), "0");

    let b = dir.path().join("b");
    assert!(r2d(&small.iter().copied().chain(["--out", p(&b)]).collect::<Vec<_>>()).status.success());
    for f in ["steps.csv", "cases.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }

    let fault = r2d(&[
        "verify", "--problems", "logistic", "--seeds", "2", "--ns", "50", "--ms", "5", "--T", "50", "--draws", "0",
        "--g-scale", "0.1", "--out", p(&dir.path().join("f")),
    ]);
    assert_eq!(fault.status.code(), Some(1));
}

#[test]
fn bench_counts_gradient_evaluations() {
    let out = r2d(&["bench", "--problem", "least_squares", "--n", "30", "--m", "2", "--T", "20", "--K", "20", "--reps", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(value(&text, "unlearn_grad_evals"), (20 * 28).to_string());
    assert_eq!(value(&text, "retrain_grad_evals"), (20 * 30).to_string());
    assert_eq!(value(&text, "ratio_k_over_t"), format_f64(1.0));
    assert!(value(&text, "rewind_inner_iterations").parse::<u64>().unwrap() > 0);
}

#[test]
fn config_file_defaults_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# quadratic\nproblem = scalar_quadratic\nn=3\nT=4\nK=2\neta=0.1\nwith_theta=true\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = r2d(&["train", "--config", p(&cfg), "--eta", "0.2", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert_eq!(value(&summary, "eta"), "0.2");
    assert_eq!(value(&summary, "T"), "4");
    assert_eq!(value(&summary, "with-theta"), "true");
    assert!(std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap().starts_with("step,loss,grad_norm,theta_0"));

    std::fs::write(&cfg, "problem=logistic\nlearning_rate=0.1\n").unwrap();
    assert_eq!(r2d(&["train", "--config", p(&cfg), "--n", "3", "--T", "2", "--eta", "0.1"]).status.code(), Some(2));
    assert_eq!(r2d(&["train", "--config", p(&dir.path().join("none.cfg"))]).status.code(), Some(1));
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        assert!(train_logistic(&dir.path().join(name), "3").status.success());
    }
    for f in ["checkpoint.ckpt", "final.ckpt", "trajectory.csv", "data.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
