use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
version = 1
[simulate]
time = 1.0
stride = 7
[perturbation-growth]
time = 1.0
[lyapunov]
time = 5.0
[clv-angles]
window = 2.0
spin = 1.0
[sensitivity.sampler]
samples = 2
window = 1.0
runup = 2.0
[optimize.descent]
samples = 2
window = 1.0
runup = 2.0
average_window = 2.0
max_iterations = 1
[assimilate]
experiments = 2
[assimilate.descent]
iterations = 2
window = 0.5
spinup = 0.5
"#;

fn shadowing(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadowing")).args(args).current_dir(dir).output().expect("binary runs")
}

fn run_ok(sub: &str, model: &str, out: &str, seed: &str, dir: &Path) {
    let o = shadowing(&[sub, "--model", model, "--config", "tiny.toml", "--out", out, "--seed", seed], dir);
    assert!(o.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn every_lorenz_subcommand_writes_csv_and_sidecar() {
    let dir = setup();
    let subs = [
        ("simulate", vec!["trajectory.csv"]),
        ("perturbation-growth", vec!["growth.csv"]),
        ("lyapunov", vec!["exponents.csv", "running.csv"]),
        ("clv-angles", vec!["angles.csv", "angles_summary.csv"]),
        ("sensitivity", vec!["samples.csv", "summary.csv"]),
        ("optimize", vec!["path.csv"]),
        ("assimilate", vec!["errors.csv", "experiments.csv"]),
    ];
    for (sub, files) in subs {
        run_ok(sub, "lorenz63", "o", "5", dir.path());
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(format!("o/{sub}.json"))).unwrap()).unwrap();
        assert_eq!(side["seed"], 5);
        assert_eq!(side["config_sha256"].as_str().unwrap().len(), 64);
        for f in files {
            let text = fs::read_to_string(dir.path().join("o").join(f)).unwrap();
            let mut lines = text.lines();
            let header = lines.next().unwrap();
            assert!(header.split(',').all(|h| h.parse::<f64>().is_err()), "{f} header {header}");
            assert!(lines.next().is_some(), "{f} has no rows");
        }
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = setup();
    for sub in ["simulate", "sensitivity", "assimilate"] {
        run_ok(sub, "lorenz63", "a", "11", dir.path());
        run_ok(sub, "lorenz63", "b", "11", dir.path());
    }
    for f in ["trajectory.csv", "samples.csv", "summary.csv", "errors.csv", "experiments.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    run_ok("simulate", "lorenz63", "c", "12", dir.path());
    assert_ne!(fs::read(dir.path().join("a/trajectory.csv")).unwrap(), fs::read(dir.path().join("c/trajectory.csv")).unwrap());
}

#[test]
fn rijke_simulate_and_bifurcation() {
    let dir = setup();
    fs::write(
        dir.path().join("tiny.toml"),
        "[simulate]\ntime = 0.5\n[simulate.start]\nrunup = 0.5\n[bifurcation]\nstart = 1.0\nend = 1.0\n[bifurcation.scan]\nrunup = 1.0\nwindow = 1.0\n",
    )
    .unwrap();
    run_ok("simulate", "rijke", "o", "1", dir.path());
    run_ok("bifurcation", "rijke", "o", "1", dir.path());
    let text = fs::read_to_string(dir.path().join("o/bifurcation.csv")).unwrap();
    assert!(text.starts_with("beta,J_ac,J_ray,lambda_1"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn every_bad_key_is_reported_as_json() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "colour = 1\n[lyapunov]\nk = \"three\"\nwhatever = 2\n[rijke]\nxf = 0.5\n").unwrap();
    let o = shadowing(&["lyapunov", "--config", "bad.toml", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["error"]["kind"], "config");
    let mut keys: Vec<&str> = report["error"]["keys"].as_array().unwrap().iter().map(|k| k["key"].as_str().unwrap()).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["colour", "lyapunov.k", "lyapunov.whatever", "rijke.xf"]);
    let file: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/error.json")).unwrap()).unwrap();
    assert_eq!(file, report);
}

#[test]
fn runtime_errors_exit_nonzero_with_report() {
    let dir = setup();
    let o = shadowing(&["bifurcation", "--model", "lorenz63", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["error"]["kind"], "runtime");

    fs::write(dir.path().join("v.toml"), "version = 9\n").unwrap();
    let o = shadowing(&["simulate", "--config", "v.toml", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
