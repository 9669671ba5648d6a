use std::path::PathBuf;
use std::process::Command;

/// Builds the extension, stages it as `r2d.so` and runs the Python smoke script.
#[test]
fn python_smoke_script() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    // separate target dir: the outer cargo may still hold the main build lock
    let target = root.join("target/python-smoke");
    let build = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "r2d-python", "--target-dir"])
        .arg(&target)
        .current_dir(&root)
        .status()
        .unwrap();
    assert!(build.success());
    let lib = ["libr2d.so", "libr2d.dylib"]
        .iter()
        .map(|name| target.join("debug").join(name))
        .find(|p| p.exists())
        .expect("extension library was built");
    let stage = tempfile::tempdir().unwrap();
    std::fs::copy(&lib, stage.path().join("r2d.so")).unwrap();
    let out = Command::new("python3")
        .arg(root.join("python/smoke_test.py"))
        .env("R2D_MODULE_DIR", stage.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}
