use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adrl"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("ADRL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn kv(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing in\n{report}"))
        .parse()
        .unwrap()
}

const TOY: &[&str] = &["--set", "problem=toy", "--set", "toy_terminal=abs", "--set", "width=4", "--set", "depth=1"];

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(dir.path(), &["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("selftest: 8/8 checks passed"));
    assert!(dir.path().join("selftest.txt").exists());
}

#[test]
fn zero_iterations_keep_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train-adrl", "--iters", "0"];
    args.extend_from_slice(TOY);
    let out = adrl(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let init = fs::read(dir.path().join("init.ckpt")).unwrap();
    let fin = fs::read(dir.path().join("final.ckpt")).unwrap();
    assert_eq!(init, fin);
}

#[test]
fn oracle_pinned_gap_report_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(dir.path(), &["gap-report", "--oracle-pinned", "--set", "problem=toy", "--set", "toy_horizon=2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(kv(&report, "gap") <= 1e-6, "{report}");
    assert!(report.contains("checkpoint_hash = \"oracle\""));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(dir.path(), &["dual-bound", "--set", "iteratons=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("iteratons"), "{}", text(&out));
    assert_eq!(adrl(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(adrl(dir.path(), &["eval-policy", "--policy", "magic"]).status.code(), Some(2));
}

#[test]
fn model_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // no oracle for continuous noise
    assert_eq!(adrl(dir.path(), &["oracle"]).status.code(), Some(3));
    // no closed form with the no-shorting constraint
    assert_eq!(adrl(dir.path(), &["eval-policy", "--policy", "closed-form"]).status.code(), Some(3));
    let out = adrl(dir.path(), &["dump-model", "--set", "n_assets=0"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
}

#[test]
fn training_is_deterministic_and_rerunnable_from_its_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut args = vec!["train-adrl", "--iters", "6", "--set", "eval_every=3", "--set", "learning_rate=0.05"];
    args.extend_from_slice(TOY);
    for d in [&a, &b] {
        let out = adrl(d.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    }
    let manifest = a.path().join("manifest.toml");
    let out = adrl(c.path(), &["train-adrl", "--config", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in ["trace.csv", "learning_curve.csv", "learning_curve.svg", "summary.txt", "final.ckpt", "manifest.toml"] {
        let fa = fs::read(a.path().join(f)).unwrap();
        assert_eq!(fa, fs::read(b.path().join(f)).unwrap(), "{f}");
        assert_eq!(fa, fs::read(c.path().join(f)).unwrap(), "{f} from manifest");
    }
    let curve = fs::read_to_string(a.path().join("learning_curve.csv")).unwrap();
    // evaluations at 0, 3, 6; the oracle reference is drawn for toy problems
    assert_eq!(curve.lines().filter(|l| l.contains(",dual,")).count(), 3);
    assert_eq!(curve.lines().filter(|l| l.contains(",oracle,")).count(), 3);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_adrl"))
        .args(["oracle", "--set", "problem=toy"])
        .env("ADRL_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = fs::read_to_string(target.join("oracle.csv")).unwrap();
    assert!(csv.starts_with("t,state,value,action\n"));
    assert!(kv(&text(&out), "initial_value").abs() < 1e-12);
}

#[test]
fn dual_bound_writes_per_path_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(dir.path(), &["dual-bound", "--set", "problem=toy", "--set", "toy_horizon=2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = fs::read_to_string(dir.path().join("dual_paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path_id,Y_star,solver_iters,kkt_residual"));
    assert_eq!(lines.count(), 4);
    // untrained W_1 = 0 with the pinned W_2 = s: only the first stage keeps
    // its perfect-information gain E[ξ_1^+] = 1/2
    assert!((kv(&text(&out), "dual_mean") - 0.5).abs() < 1e-12);
}

#[test]
fn uniform_policy_on_a_small_execution_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(
        dir.path(),
        &["eval-policy", "--policy", "uniform", "--set", "horizon=2", "--set", "primal_paths=64", "--set", "no_shorting=false"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = fs::read_to_string(dir.path().join("policy_paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    let v = kv(&text(&out), "value_mean");
    assert!(v > 1500.0 && v < 1503.0, "{v}");
}

#[test]
fn derm_reads_bounds_from_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.txt");
    fs::write(&report, "sense = \"minimize\"\ndual_mean = 1500.0\nprimal_mean = 1501.3\n").unwrap();
    let out = adrl(
        dir.path(),
        &[
            "derm",
            "--bounds",
            report.to_str().unwrap(),
            "--set",
            "derm_width=8",
            "--set",
            "derm_iterations=4",
            "--set",
            "derm_paths=16",
            "--set",
            "derm_eval_paths=16",
            "--set",
            "derm_eval_every=2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("stop_rule = "), "{summary}");
    let trace = fs::read_to_string(dir.path().join("derm_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("bounds_sha256"));
}

#[test]
fn dump_model_round_trips_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = adrl(dir.path(), &["dump-model", "--set", "iterations=42"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let cfg = dir.path().join("config.toml");
    assert!(fs::read_to_string(&cfg).unwrap().contains("iterations = 42"));
    let csv = fs::read_to_string(dir.path().join("model.csv")).unwrap();
    assert!(csv.starts_with("matrix,row,col,value\n"));
    let again = tempfile::tempdir().unwrap();
    let out = adrl(again.path(), &["dump-model", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(cfg).unwrap(), fs::read(again.path().join("config.toml")).unwrap());
}
