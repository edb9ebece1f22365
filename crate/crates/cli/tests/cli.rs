use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nonholo-es"));
    c.env_remove("NONHOLO_ES_THREADS");
    c
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![head];
    rows.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
    rows
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

const COMPLIANT: &str = "preset = \"brockett-durr\"\nepsilon = 0.025\nhorizon = 10.0\n";

#[test]
fn run_writes_trace_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", COMPLIANT);
    let out = dir.path().join("out");
    let o = exec(&["run", "--config", s(&cfg), "--out-dir", s(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let head = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(head.lines().next().unwrap(), "t,x1,x2,x3,xi1,xi2,xi3,y,u1,u2");
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("cost J(x(t))"));
    let rep = json(&out.join("report.json"));
    assert_eq!(rep["status"], "ok");
    assert!(rep["metrics"]["lambda"].as_f64().unwrap() > 0.0);
    assert_eq!(rep["config"]["epsilon"], 0.025);
}

#[test]
fn paper_gains_report_the_blowup() {
    let dir = tempfile::tempdir().unwrap();
    let o = exec(&["run", "--preset", "brockett-durr", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
    let rep = json(&dir.path().join("report.json"));
    assert_eq!(rep["status"], "failed");
    assert!(rep["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("eps * gamma1")));
}

#[test]
fn eps_not_below_mu_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "preset = \"brockett-durr\"\nepsilon = 0.5\n");
    let o = exec(&["run", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    let msgs = err["errors"].as_array().unwrap();
    assert!(msgs.iter().any(|m| m["message"].as_str().unwrap().contains("eps < mu")), "{err}");
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn other_validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exec(&["run", "--preset", "nope", "--out-dir", s(dir.path())]).status.code(), Some(2));
    let typo = write(dir.path(), "t.toml", "preset = \"brockett-durr\"\nepsilom = 0.01\n");
    assert_eq!(exec(&["run", "--config", s(&typo)]).status.code(), Some(2));
    let broken = write(dir.path(), "b.toml", "preset = \n");
    assert_eq!(exec(&["run", "--config", s(&broken)]).status.code(), Some(2));
    let pair = write(dir.path(), "p.toml", "preset = \"brockett-durr\"\npair = \"sine\"\n");
    assert_eq!(exec(&["run", "--config", s(&pair)]).status.code(), Some(2));
}

#[test]
fn rerun_from_report_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", COMPLIANT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(exec(&["run", "--config", s(&cfg), "--out-dir", s(&a)]).status.code(), Some(0));
    let report = a.join("report.json");
    assert_eq!(exec(&["run", "--config", s(&report), "--out-dir", s(&b)]).status.code(), Some(0));
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    let tb = std::fs::read(b.join("trace.csv")).unwrap();
    assert!(ta == tb);
    assert_eq!(json(&report)["metrics"], json(&b.join("report.json"))["metrics"]);
}

#[test]
fn one_point_sweep_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", COMPLIANT);
    let run_dir = dir.path().join("run");
    assert_eq!(exec(&["run", "--config", s(&cfg), "--out-dir", s(&run_dir)]).status.code(), Some(0));
    let m = &json(&run_dir.join("report.json"))["metrics"];

    let spec = write(
        dir.path(),
        "s.toml",
        "preset = \"brockett-durr\"\nmetrics = [\"lambda\", \"beta\", \"rho\", \"sup_tracking_error\", \"final_j\"]\n\
         [base]\nhorizon = 10.0\n[axes]\nepsilon = [0.025]\n",
    );
    let sw = dir.path().join("sweep");
    assert_eq!(exec(&["sweep", "--config", s(&spec), "--out-dir", s(&sw)]).status.code(), Some(0));
    let rows = csv_rows(&sw.join("summary.csv"));
    assert_eq!(rows.len(), 2);
    for key in ["lambda", "beta", "rho", "sup_tracking_error", "final_j"] {
        let v: f64 = column(&rows, key)[0].parse().unwrap();
        assert_eq!(v, m[key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn tracking_error_falls_along_the_eps_axis() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        "preset = \"brockett-vanishing\"\n[base]\nmu = 0.5\nxi0 = [1.0, -1.0, 1.0]\nhorizon = 10.0\n\
         [axes]\nepsilon = [0.1, 0.05, 0.025]\n",
    );
    let o = exec(&["sweep", "--config", s(&spec), "--out-dir", s(dir.path()), "--parallelism", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3 grid points"));
    let rows = csv_rows(&dir.path().join("summary.csv"));
    let sup: Vec<f64> = column(&rows, "sup_tracking_error").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(sup.len(), 3);
    assert!(sup.windows(2).all(|w| w[1] <= w[0]), "{sup:?}");
}

#[test]
fn pair_sweep_reproduces_the_residual_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        "preset = \"brockett-durr\"\n[base]\nepsilon = 0.025\nhorizon = 20.0\n\
         [axes]\npair = [\"linear\", \"tanh_vanishing\"]\n",
    );
    let sw = dir.path().join("sw");
    assert_eq!(exec(&["sweep", "--config", s(&spec), "--out-dir", s(&sw)]).status.code(), Some(0));
    let rows = csv_rows(&sw.join("summary.csv"));
    assert_eq!(column(&rows, "pair"), ["linear", "tanh_vanishing"]);
    let rho: Vec<f64> = column(&rows, "rho").iter().map(|v| v.parse().unwrap()).collect();
    assert!(rho[1] < rho[0], "{rho:?}");
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.toml",
        "preset = \"brockett-durr\"\n[base]\nhorizon = 2.0\n[axes]\ngamma1 = [10.0, 20.0]\nepsilon = [0.1, 0.025]\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    bin().args(["sweep", "--config", s(&spec), "--out-dir", s(&a), "--parallelism", "4"]).output().unwrap();
    bin()
        .args(["sweep", "--config", s(&spec), "--out-dir", s(&b)])
        .env("NONHOLO_ES_THREADS", "1")
        .output()
        .unwrap();
    let sa = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(sa, std::fs::read_to_string(b.join("summary.csv")).unwrap());
    // the blown-up point is recorded and the sweep carries on
    let rows = csv_rows(&a.join("summary.csv"));
    assert_eq!(column(&rows, "status"), ["failed", "ok", "failed", "ok"]);
}

#[test]
fn sweep_with_every_point_failing_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.toml", "preset = \"brockett-durr\"\n[axes]\nepsilon = [0.1]\n");
    let o = exec(&["sweep", "--config", s(&spec), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
    let empty = write(dir.path(), "e.toml", "preset = \"brockett-durr\"\n[axes]\nepsilon = []\n");
    assert_eq!(exec(&["sweep", "--config", s(&empty)]).status.code(), Some(2));
}

const TUNE: &str = "preset = \"brockett-durr\"\n[base]\npair = \"bounded\"\ngamma2 = 0.01\nseed = 3\n\
    [working_set]\ncenter = [0.0, 0.0, 0.0]\nhalf_width = 1.0\n[budget]\ndelta = 0.2\nrho = 0.15\n";

#[test]
fn tune_recommends_an_admissible_triple() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "t.toml", TUNE);
    assert_eq!(exec(&["tune", "--config", s(&spec), "--out-dir", s(dir.path())]).status.code(), Some(0));
    let t = json(&dir.path().join("tuning.json"));
    assert_eq!(t["chain"]["ok"], true);
    let rec = &t["recommendation"];
    let (mu, eps) = (rec["mu"].as_f64().unwrap(), rec["epsilon"].as_f64().unwrap());
    assert!(eps < mu && mu <= t["result"]["mu_bar"].as_f64().unwrap());
    assert_eq!(t["recommended_config"]["pair"], "bounded");

    assert_eq!(
        exec(&["estimate-constants", "--config", s(&spec), "--out-dir", s(dir.path())]).status.code(),
        Some(0)
    );
    assert!(json(&dir.path().join("constants.json"))["estimates"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn infeasible_budget_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "t.toml", &TUNE.replace("delta = 0.2", "delta = 3.0"));
    let o = exec(&["tune", "--config", s(&spec), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(5));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["errors"][0]["kind"], "infeasible_budget");
}

#[test]
fn sweep_chain_column() {
    let dir = tempfile::tempdir().unwrap();
    let tuning = TUNE
        .split_once("[working_set]")
        .unwrap()
        .1
        .replace("[budget]", "[tuning.budget]");
    let spec = write(
        dir.path(),
        "s.toml",
        &format!(
            "preset = \"brockett-durr\"\n[base]\npair = \"bounded\"\ngamma2 = 0.01\nseed = 3\nhorizon = 1.0\n\
             [axes]\nepsilon = [0.025]\n[tuning.working_set]{tuning}"
        ),
    );
    let o = exec(&["sweep", "--config", s(&spec), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("summary.csv"));
    assert_eq!(column(&rows, "chain_ok"), ["false"]);
    assert!(column(&rows, "chain_failed")[0].contains("mu <= mu_bar"));
}

#[test]
fn check_system_and_verify_expansion() {
    let dir = tempfile::tempdir().unwrap();
    let o = exec(&["check-system", "--preset", "brockett-durr", "--out-dir", s(dir.path()), "--samples", "125"]);
    assert_eq!(o.status.code(), Some(0));
    let sys = json(&dir.path().join("system.json"));
    assert_eq!(sys["rank"]["ok"], true);
    assert_eq!(sys["brackets"][0]["value_at_x0"], serde_json::json!([0.0, 0.0, -2.0]));

    let cfg = write(
        dir.path(),
        "e.toml",
        "preset = \"brockett-durr\"\nepsilon = 0.025\nmu = 0.1\nxi0 = [0.3, -0.3, 0.3]\n",
    );
    let o = exec(&["verify-expansion", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ex = json(&dir.path().join("expansion.json"));
    assert_eq!(ex["stabilizer"]["in_range"], true, "{ex}");
    assert_eq!(ex["seeker"]["in_range"], true, "{ex}");
}

#[test]
fn plot_from_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", COMPLIANT);
    assert_eq!(exec(&["run", "--config", s(&cfg), "--out-dir", s(dir.path())]).status.code(), Some(0));
    let svg = dir.path().join("env.svg");
    let o = exec(&[
        "plot",
        "--trace",
        s(&dir.path().join("trace.csv")),
        "--style",
        "envelope",
        "--out",
        s(&svg),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("|x - x*|"));
    let bad = exec(&["plot", "--trace", s(&dir.path().join("trace.csv")), "--style", "fancy"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn long_floats_survive_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.toml",
        "preset = \"brockett-durr\"\nepsilon = 0.023456789012345678\nhorizon = 1.0\nx0 = [0.46890587091937036, -1.0, 1.0]\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(exec(&["run", "--config", s(&cfg), "--out-dir", s(&a)]).status.code(), Some(0));
    let report = a.join("report.json");
    assert_eq!(json(&report)["config"]["x0"][0].as_f64(), Some(0.46890587091937036));
    exec(&["run", "--config", s(&report), "--out-dir", s(&b)]);
    assert!(std::fs::read(a.join("trace.csv")).unwrap() == std::fs::read(b.join("trace.csv")).unwrap());
}
