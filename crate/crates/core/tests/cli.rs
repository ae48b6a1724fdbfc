use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonlocal_eikonal::grid::read_snapshot;

const HAT: &str = r#"
output = "hat"
horizon = 0.5
snapshot_every = 0.25

[grid]
lower = -3.0
upper = 3.0
h = 0.02

[c1]
kind = "constant"
value = 1.0
"#;

fn nleik(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nleik"))
        .args(args)
        .env("NLEIK_OUTPUT_ROOT", dir.join("runs"))
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn simulate_writes_a_complete_deterministic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "hat.toml", HAT);
    let out = nleik(tmp.path(), &["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let run = tmp.path().join("runs/hat");

    let diag = fs::read_to_string(run.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("# config_sha256="));
    assert!(diag.contains("K_hat="));
    assert!(diag.contains("eta_hat_T="));
    let header = diag.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "t,residual,sandwich_violation_measure,classical_flag,min_cbar,lipschitz,gradient_margin");
    assert_eq!(diag.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let bounds = fs::read_to_string(run.join("bounds.csv")).unwrap();
    assert!(bounds.contains("M0,M1,L0,L1,M,L,eta0,eta_hat_T,C_hat,K_hat,delta,rho"));

    let (t, u) = read_snapshot(std::io::BufReader::new(fs::File::open(run.join("u_002.csv")).unwrap())).unwrap();
    assert!((t - 0.5).abs() < 1e-12);
    let front = u.values().iter().filter(|&&v| v >= 0.0).count() as f64 * 0.02;
    assert!((front - 3.0).abs() <= 0.1, "front measure {front}");
    assert!(run.join("chi_002.csv").exists());

    let first = fs::read(run.join("u_002.csv")).unwrap();
    let again = nleik(tmp.path(), &["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert_eq!(first, fs::read(run.join("u_002.csv")).unwrap());
    assert_eq!(diag, fs::read_to_string(run.join("diagnostics.csv")).unwrap());
}

#[test]
fn seed_flag_changes_the_declared_hash_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "hat.toml", HAT);
    let hash = |seed: &str| {
        assert_eq!(code(&nleik(tmp.path(), &["--seed", seed, "simulate", cfg.to_str().unwrap()])), 0);
        let text = fs::read_to_string(tmp.path().join("runs/hat/bounds.csv")).unwrap();
        (text.lines().next().unwrap().to_string(), text.lines().last().unwrap().to_string())
    };
    let (a, row_a) = hash("1");
    let (b, row_b) = hash("2");
    assert_ne!(a, b);
    assert_eq!(row_a, row_b);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let small = HAT.replace("lower = -3.0", "lower = -1.2").replace("upper = 3.0", "upper = 1.2");
    let cases = [
        ("small.toml", small),
        ("typo.toml", format!("{HAT}\n[engine]\ncfll = 0.4\n")),
        ("shape.toml", format!("{HAT}\n[kernel]\nshape = \"gaussian\"\n")),
        ("eps.toml", format!("{HAT}\n[engine]\neps = [0.01, 0.02]\n")),
    ];
    for (name, text) in cases {
        let cfg = config(tmp.path(), name, &text);
        let out = nleik(tmp.path(), &["simulate", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = nleik(tmp.path(), &["simulate", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn non_convergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[kernel]\nshape = \"indicator\"\nradius = 0.5\n[engine]\nmax_iterations = 1\n",
        HAT.replace("value = 1.0", "value = 2.0").replace("lower = -3.0", "lower = -4.0").replace("upper = 3.0", "upper = 4.0")
    );
    let cfg = config(tmp.path(), "stiff.toml", &text);
    let out = nleik(tmp.path(), &["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert!(tmp.path().join("runs/hat/diagnostics.csv").exists());
}

const COUNTEREXAMPLE: &str = r#"
output = "ce"
[grid]
lower = -3.0
upper = 3.0
h = 0.1
[counterexample]
h = 0.1
"#;

#[test]
fn counterexample_on_a_coarse_grid_passes_and_reports_the_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "ce.toml", COUNTEREXAMPLE);
    let out = nleik(tmp.path(), &["counterexample", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let run = tmp.path().join("runs/ce");
    let report = fs::read_to_string(run.join("gamma_1/counterexample_report.csv")).unwrap();
    assert!(report.contains(
        "t,x1,y_gamma,front_measure,zero_set_measure,sup_error_numeric_vs_closed,sandwich_violations"
    ));
    let gaps = fs::read_to_string(run.join("gaps.csv")).unwrap();
    let last = gaps.lines().last().unwrap();
    let gap: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!((gap - 4.0 / 3.0).abs() <= 0.4, "gap {gap}");
}

#[test]
fn single_control_has_an_empty_gap_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{COUNTEREXAMPLE}\n[[counterexample.controls]]\ngamma = [[1.0, 0.0]]\n");
    let cfg = config(tmp.path(), "one.toml", &text);
    let out = nleik(tmp.path(), &["counterexample", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let gaps = fs::read_to_string(tmp.path().join("runs/ce/gaps.csv")).unwrap();
    assert_eq!(gaps.lines().filter(|l| !l.starts_with('#')).count(), 1);
}

#[test]
fn bad_controls_are_configuration_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{COUNTEREXAMPLE}\n[[counterexample.controls]]\ngamma = [[1.0, 1.5]]\n");
    let cfg = config(tmp.path(), "bad.toml", &text);
    assert_eq!(code(&nleik(tmp.path(), &["counterexample", cfg.to_str().unwrap()])), 2);
}

const VERIFY: &str = r#"
output = "verify"
[grid]
lower = -3.0
upper = 3.0
h = 0.02
"#;

#[test]
fn verify_battery_passes_and_catches_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "v.toml", VERIFY);
    let out = nleik(tmp.path(), &["verify", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let faulty = config(tmp.path(), "f.toml", &format!("{VERIFY}\n[verify]\nfault = \"flip-upwind\"\n"));
    let out = nleik(tmp.path(), &["verify", faulty.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("FAIL monotone [eikonal::step]"), "{text}");
    assert!(text.contains("FAIL oracle [eikonal::solve]"), "{text}");

    let empty = config(tmp.path(), "e.toml", &format!("{VERIFY}\n[verify]\nsuites = []\n"));
    assert_eq!(code(&nleik(tmp.path(), &["verify", empty.to_str().unwrap()])), 2);
}

#[test]
fn convergence_study() {
    let tmp = tempfile::tempdir().unwrap();
    let circle = config(
        tmp.path(),
        "c.toml",
        &format!("{VERIFY}\n[convergence]\nexperiment = \"circle\"\nhorizon = 0.25\n"),
    );
    let out = nleik(tmp.path(), &["convergence", circle.to_str().unwrap(), "--grids", "1/20,1/40,1/80"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let table = fs::read_to_string(tmp.path().join("runs/verify/convergence.csv")).unwrap();
    assert!(table.contains("h,error,error_over_h,local_rate"));

    let out = nleik(tmp.path(), &["convergence", circle.to_str().unwrap(), "--grids", "0.1,0.05"]);
    assert_eq!(code(&out), 2);
    let out = nleik(tmp.path(), &["convergence", circle.to_str().unwrap(), "--grids", "0.1,x,0.05"]);
    assert_eq!(code(&out), 2);
}
