use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use localrhat::chains::{generate_ar1, generate_iid, generate_mvn, bivariate_correlation, ChainSet, Layout};
use localrhat::statdist::DistributionSpec;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_localrhat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, cs: &ChainSet, layout: Layout) -> PathBuf {
    let path = dir.path().join(name);
    cs.save(&path, layout).unwrap();
    path
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn null_chains_converge() {
    let dir = TempDir::new().unwrap();
    let cs = generate_iid(&[DistributionSpec::uniform(0.0, 1.0); 4], 100, 3).unwrap();
    let path = write(&dir, "null.csv", &cs, Layout::Wide);
    let o = run(&["diagnose", path.to_str().unwrap(), "--reps", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["verdict"], "converged");
    assert_eq!(report["m"], 4);
}

#[test]
fn autoregressive_example_is_flagged() {
    let dir = TempDir::new().unwrap();
    let cs = generate_ar1(0.5, &[1.0, 1.0, 1.0, 2.0], 500, 6).unwrap();
    let path = write(&dir, "ar.csv", &cs, Layout::Long);
    let o = run(&["diagnose", path.to_str().unwrap(), "--reps", "200"]);
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["verdict"], "not_converged");
    assert!(report["p_value"].as_f64().unwrap() < 0.05);
}

#[test]
fn data_errors_exit_1() {
    let o = run(&["diagnose", "/nonexistent/chains.csv"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "chain_1,chain_2\n0.1,0.2\n0.3,abc\n0.5,0.6\n0.7,0.8\n").unwrap();
    let o = run(&["diagnose", path.to_str().unwrap(), "--reps", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3") && err.contains("column 2"), "{err}");

    let o = run(&["simulate", "--example", "9", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["diagnose"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn curve_rows_and_overlay() {
    let dir = TempDir::new().unwrap();
    let specs = [
        DistributionSpec::uniform(-0.75, 0.75),
        DistributionSpec::uniform(-0.75, 0.75),
        DistributionSpec::uniform(-0.75, 0.75),
        DistributionSpec::uniform(-1.0, 1.0),
    ];
    let cs = generate_iid(&specs, 200, 1).unwrap();
    let path = write(&dir, "ex1.csv", &cs, Layout::Wide);
    let full = stdout(&run(&["curve", path.to_str().unwrap()]));
    let coarse = stdout(&run(&["curve", path.to_str().unwrap(), "--stride", "10"]));
    assert!(full.starts_with("x,rhat,ess\n"));
    assert_eq!(full.lines().count() - 1, 799);
    assert_eq!(coarse.lines().count() - 1, 80);

    let model = dir.path().join("model.json");
    fs::write(&model, serde_json::to_string(&serde_json::json!({ "chains": specs })).unwrap()).unwrap();
    let overlay = stdout(&run(&["curve", path.to_str().unwrap(), "--model", model.to_str().unwrap()]));
    assert!(overlay.starts_with("x,rhat,ess,r\n"));
    assert_eq!(overlay.lines().count(), full.lines().count());
    for (a, b) in full.lines().zip(overlay.lines()).skip(1) {
        assert!(b.starts_with(a));
    }

    let mv = generate_mvn(&[bivariate_correlation(0.0), bivariate_correlation(0.5)], 20, 1).unwrap();
    let mv_path = write(&dir, "mv.csv", &mv, Layout::Long);
    assert_eq!(run(&["curve", mv_path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn threshold_tables() {
    let o = run(&["threshold"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), golden("threshold_cached.csv"));

    let o = run(&["threshold", "--asymptotic", "--m", "2,4", "--alpha", "0.05"]);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "m,alpha_0.05");
    assert!(rows[2].starts_with("4,1.0097"), "{text}");

    assert_eq!(run(&["threshold", "--m", "1", "--recompute"]).status.code(), Some(1));
}

#[test]
fn simulate_golden_and_deterministic() {
    let args = ["simulate", "--example", "1", "--reps", "3", "--seed", "1"];
    let a = bin().args(args).env("RHAT_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("RHAT_THREADS", "3").output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a), golden("simulate_example1.csv"));

    let o = run(&["simulate", "--example", "5", "--d", "4", "--reps", "2"]);
    let text = stdout(&o);
    assert!(text.contains(",rhat_inf,") && text.contains(",rhat_max,"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn counterexample_pair() {
    let o = run(&["counterexample", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let sigma = v["pair"]["spec2"]["params"]["sigma"].as_f64().unwrap();
    assert!((sigma - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!(v["detection"].is_null());

    let o = run(&["counterexample", "--xi1", "0.5", "--xi2", "-0.5", "--sigma1", "2", "--mu1", "1", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(run(&["counterexample", "--xi1", "0.3", "--xi2", "0.3"]).status.code(), Some(1));
}

#[test]
fn multivariate_commands() {
    let o = run(&["mvdiag", "--bounds", "--d", "3"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("d,frechet,plod,nlod"));
    assert_eq!(text.lines().count(), 3);

    let dir = TempDir::new().unwrap();
    let cs = generate_mvn(&[bivariate_correlation(0.0), bivariate_correlation(0.9)], 200, 4).unwrap();
    let path = write(&dir, "ex4.csv", &cs, Layout::Long);
    let o = run(&["mvdiag", path.to_str().unwrap(), "--reps", "200"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["copula_verdict"], "not_converged");
    // diagnose dispatches to the same report for d > 1
    let o = run(&["diagnose", path.to_str().unwrap(), "--reps", "200"]);
    assert_eq!(o.status.code(), Some(2));
}
