use std::path::Path;
use std::process::{Command, Output};

fn frameless(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frameless"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FRAMELESS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(summary: &str, key: &str) -> f64 {
    summary
        .split_whitespace()
        .find_map(|w| w.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {summary}"))
        .parse()
        .unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn exact_single_type_per() {
    let dir = tempfile::tempdir().unwrap();
    let o = frameless(&["exact", "--n", "50", "--slots", "60x2.68"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("per=0.264 "), "{}", stdout(&o));

    let pmf = data_rows(&dir.path().join("exact_pmf.csv"));
    assert_eq!(pmf.len(), 51);
    let total: f64 = pmf.iter().map(|r| r[1]).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let head = std::fs::read_to_string(dir.path().join("exact_moments.csv")).unwrap();
    assert!(head.starts_with("# frameless exact"));
    assert!(head.lines().nth(1) == Some("u,C1,R,sigma_R"));
}

#[test]
fn exact_two_types_per() {
    let dir = tempfile::tempdir().unwrap();
    let o = frameless(&["exact", "--n", "50", "--slots", "50x3.0,10x5.0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("per=0.555 "), "{}", stdout(&o));
}

#[test]
fn simulate_two_users_one_slot() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--n", "2", "--slots", "1x1.0", "--trials", "100000", "--seed", "7"];
    let o = frameless(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let per = field(&stdout(&o), "per");
    assert!((per - 0.75).abs() <= 0.01, "{per}");
    assert_eq!(data_rows(&dir.path().join("simulate_trials.csv")).len(), 100_000);
}

#[test]
fn bad_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = frameless(&["exact", "--n", "50", "--slots", "60y2.68"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`slots`"), "{}", stderr(&o));

    let o = frameless(&["feedback", "--n", "10", "--t", "5", "--m-target", "20", "--estimator", "guess"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`estimator`"), "{}", stderr(&o));

    let o = frameless(&["feedback", "--n", "30", "--t", "5", "--m-target", "20", "--estimator", "exact"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = frameless(&["reproduce-figure", "no_such_figure"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tiny_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = frameless(&["exact", "--n", "50", "--slots", "60x2.68", "--budget", "3"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("budget"));
}

#[test]
fn reruns_are_byte_identical() {
    let cases: [&[&str]; 3] = [
        &["simulate", "--n", "20", "--slots", "30x2.5", "--trials", "500", "--seed", "3"],
        &["irsa", "--n", "20", "--frame", "30", "--trials", "500", "--seed", "3"],
        &["feedback", "--n", "20", "--t", "10", "--m-target", "40", "--trials", "50", "--seed", "3"],
    ];
    for args in cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert!(frameless(args, a.path()).status.success());
        assert!(frameless(args, b.path()).status.success());
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{name:?} differs for {args:?}");
        }
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# two users\nn = 2\nslots = 1x1.0\ntrials = 1000\nseed = 5\n").unwrap();
    let out = dir.path().join("o");
    let o = frameless(&["simulate", "--config", cfg.to_str().unwrap(), "--trials", "300"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("trials=300"));
    assert_eq!(data_rows(&out.join("simulate_trials.csv")).len(), 300);

    std::fs::write(&cfg, "n = 2\ncolour = red\n").unwrap();
    let o = frameless(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`colour`"));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_frameless"))
        .args(["approx", "--n", "50", "--slots", "60x2.68", "--plot"])
        .env("FRAMELESS_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["approx_pmf.csv", "approx_curves.csv", "approx_curves.gp"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let curves = data_rows(&dir.path().join("approx_curves.csv"));
    assert_eq!(curves.len(), 50);
    assert_eq!(curves[49][0], 1.0);
}

#[test]
fn feedback_writes_audit_and_per_curve() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["feedback", "--n", "20", "--t", "10", "--m-target", "40", "--trials", "20", "--seed", "1"];
    let o = frameless(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let per = data_rows(&dir.path().join("feedback_per.csv"));
    assert_eq!(per.len(), 40);
    assert!(per.windows(2).all(|w| w[1][1] <= w[0][1]));
    let audit = std::fs::read_to_string(dir.path().join("feedback_audit.csv")).unwrap();
    assert_eq!(audit.lines().nth(1), Some("subperiod,u,beta,per_hat"));
    let jsonl = std::fs::read_to_string(dir.path().join("feedback_audit.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["trial"], 0);
    assert_eq!(first["u"], 20);
}

#[test]
fn small_figures_emit_plot_scripts() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["example_p_dist", "ripple_dist", "per_approx"] {
        let o = frameless(&["reproduce-figure", name, "--scale", "n=20,trials=200"], dir.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(dir.path().join(format!("{name}.gp")).exists());
    }
    let ripple = data_rows(&dir.path().join("ripple_dist_u10.csv"));
    let total: f64 = ripple.iter().map(|r| r[1]).sum();
    assert!((total - 1.0).abs() < 1e-9);
}
