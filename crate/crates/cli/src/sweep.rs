//! `sweep`: a cross product of experiment variations, run concurrently.

use std::collections::BTreeMap;
use std::path::Path;

use nonholo_es::tuner::validate_chain;
use nonholo_es::ExperimentConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{deserialize, read_value};
use crate::run::{execute, Metrics};
use crate::tune::{split_base, tune, TuneSettings};
use crate::{ensure_dir, write_file, write_json, CliError, ErrorEntry, Outcome, EXIT_OK, THREADS_ENV};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub pair: Option<Vec<String>>,
    #[serde(default)]
    pub gamma1: Option<Vec<f64>>,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon: Option<Vec<f64>>,
}

pub const METRICS: [&str; 6] = ["lambda", "beta", "rho", "diverged", "sup_tracking_error", "final_j"];

fn default_metrics() -> Vec<String> {
    ["lambda", "rho", "sup_tracking_error", "final_j"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecBody {
    axes: Axes,
    #[serde(default = "default_metrics")]
    metrics: Vec<String>,
    /// Enables the `chain_ok` column.
    #[serde(default)]
    tuning: Option<TuneSettings>,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: Axes,
    pub metrics: Vec<String>,
    pub tuning: Option<TuneSettings>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let Value::Object(mut m) = read_value(path)? else {
            return Err(CliError::validation(vec!["a sweep spec must be a table".into()]));
        };
        let base = split_base(&mut m, None)?;
        let body: SpecBody = deserialize(Value::Object(m), "sweep spec")?;
        let spec = Self {
            base,
            axes: body.axes,
            metrics: body.metrics,
            tuning: body.tuning,
        };
        let errs = spec.problems();
        if errs.is_empty() {
            Ok(spec)
        } else {
            Err(CliError::validation(errs))
        }
    }

    fn problems(&self) -> Vec<String> {
        let a = &self.axes;
        let lens = [
            ("pair", a.pair.as_ref().map(Vec::len)),
            ("gamma1", a.gamma1.as_ref().map(Vec::len)),
            ("mu", a.mu.as_ref().map(Vec::len)),
            ("eta", a.eta.as_ref().map(Vec::len)),
            ("epsilon", a.epsilon.as_ref().map(Vec::len)),
        ];
        let mut errs: Vec<String> = lens
            .iter()
            .filter(|(_, l)| *l == Some(0))
            .map(|(name, _)| format!("axis `{name}` is empty"))
            .collect();
        if lens.iter().all(|(_, l)| l.is_none()) {
            errs.push("[axes] must name at least one of pair, gamma1, mu, eta, epsilon".into());
        }
        for m in &self.metrics {
            if !METRICS.contains(&m.as_str()) {
                errs.push(format!("unknown metric `{m}` (known: {})", METRICS.join(", ")));
            }
        }
        if self.tuning.as_ref().is_some_and(|t| t.budget.is_none()) {
            errs.push("[tuning] needs a [tuning.budget] table".into());
        }
        errs
    }

    /// Grid points in row order; the last axis (`epsilon`) varies fastest.
    pub fn points(&self) -> Vec<ExperimentConfig> {
        let mut pts = vec![self.base.clone()];
        fn expand<T: Clone>(pts: Vec<ExperimentConfig>, axis: &Option<Vec<T>>, set: impl Fn(&mut ExperimentConfig, T)) -> Vec<ExperimentConfig> {
            match axis {
                None => pts,
                Some(vals) => pts
                    .into_iter()
                    .flat_map(|p| {
                        vals.iter().map(|v| {
                            let mut q = p.clone();
                            set(&mut q, v.clone());
                            q
                        }).collect::<Vec<_>>()
                    })
                    .collect(),
            }
        }
        pts = expand(pts, &self.axes.pair, |c, v| c.pair = v);
        pts = expand(pts, &self.axes.gamma1, |c, v| c.gamma1 = v);
        pts = expand(pts, &self.axes.mu, |c, v| c.mu = v);
        pts = expand(pts, &self.axes.eta, |c, v| c.eta = v);
        expand(pts, &self.axes.epsilon, |c, v| c.epsilon = v)
    }
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub index: usize,
    pub pair: String,
    pub gamma1: f64,
    pub mu: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub status: String,
    pub exit_code: i32,
    pub metrics: Option<Metrics>,
    /// `None` without a `[tuning]` table or when tuning itself failed.
    pub chain_ok: Option<bool>,
    pub chain_failed: Vec<String>,
    pub error: Option<ErrorEntry>,
}

fn run_point(index: usize, cfg: ExperimentConfig, tuned: &BTreeMap<String, Result<nonholo_es::TuningResult, CliError>>) -> Row {
    let mut row = Row {
        index,
        pair: cfg.pair.clone(),
        gamma1: cfg.gamma1,
        mu: cfg.mu,
        eta: cfg.eta,
        epsilon: cfg.epsilon,
        status: String::new(),
        exit_code: 0,
        metrics: None,
        chain_ok: None,
        chain_failed: Vec::new(),
        error: None,
    };
    if let Some(Ok(r)) = tuned.get(&cfg.pair) {
        let chain = validate_chain(r, cfg.mu, cfg.gamma1, cfg.epsilon);
        row.chain_ok = Some(chain.ok);
        row.chain_failed = chain.checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
    } else if let Some(Err(e)) = tuned.get(&cfg.pair) {
        row.chain_failed = e.errors.iter().map(|e| format!("tuning failed: {}", e.message)).collect();
    }
    match execute(cfg) {
        Ok(ex) => {
            row.status = ex.status().into();
            row.exit_code = ex.code();
            row.error = ex.error();
            row.metrics = ex.result.map(|r| r.2).ok();
        }
        Err(e) => {
            row.status = "invalid".into();
            row.exit_code = e.code;
            row.error = Some(ErrorEntry {
                kind: "validation".into(),
                message: e.errors.iter().map(|e| e.message.as_str()).collect::<Vec<_>>().join("; "),
            });
        }
    }
    row
}

fn metric(m: &Metrics, name: &str) -> String {
    match name {
        "lambda" => format!("{:?}", m.lambda),
        "beta" => format!("{:?}", m.beta),
        "rho" => format!("{:?}", m.rho),
        "diverged" => m.diverged.to_string(),
        "sup_tracking_error" => format!("{:?}", m.sup_tracking_error),
        "final_j" => format!("{:?}", m.final_j),
        _ => String::new(),
    }
}

pub fn to_csv(rows: &[Row], metrics: &[String]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = ["index", "pair", "gamma1", "mu", "eta", "epsilon", "status", "exit_code"]
        .map(String::from)
        .to_vec();
    head.extend(metrics.iter().cloned());
    head.extend(["chain_ok", "chain_failed", "error"].map(String::from));
    w.write_record(&head).map_err(CliError::internal)?;
    for r in rows {
        let mut rec = vec![
            r.index.to_string(),
            r.pair.clone(),
            format!("{:?}", r.gamma1),
            format!("{:?}", r.mu),
            format!("{:?}", r.eta),
            format!("{:?}", r.epsilon),
            r.status.clone(),
            r.exit_code.to_string(),
        ];
        rec.extend(metrics.iter().map(|m| r.metrics.as_ref().map(|x| metric(x, m)).unwrap_or_default()));
        rec.push(r.chain_ok.map(|b| b.to_string()).unwrap_or_default());
        rec.push(r.chain_failed.join(";"));
        rec.push(r.error.as_ref().map(|e| e.message.clone()).unwrap_or_default());
        w.write_record(&rec).map_err(CliError::internal)?;
    }
    let bytes = w.into_inner().map_err(CliError::internal)?;
    String::from_utf8(bytes).map_err(CliError::internal)
}

/// Worker count: the request (or every core), capped by the environment.
pub fn threads(requested: Option<usize>) -> Result<usize, CliError> {
    let mut n = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(cap) = std::env::var(THREADS_ENV) {
        let cap: usize = cap
            .trim()
            .parse()
            .map_err(|_| CliError::validation(vec![format!("{THREADS_ENV} must be a positive integer, got `{cap}`")]))?;
        if cap > 0 {
            n = n.min(cap);
        }
    }
    Ok(n.max(1))
}

pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<Vec<Row>, CliError> {
    let points = spec.points();
    let mut tuned = BTreeMap::new();
    if let Some(t) = &spec.tuning {
        for p in &points {
            if !tuned.contains_key(&p.pair) {
                tuned.insert(p.pair.clone(), tune(p, t));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::internal)?;
    // Rows come back in grid order; only this thread writes files.
    Ok(pool.install(|| {
        points
            .into_par_iter()
            .enumerate()
            .map(|(i, cfg)| run_point(i, cfg, &tuned))
            .collect()
    }))
}

pub fn command(path: &Path, out_dir: &Path, parallelism: Option<usize>) -> Result<Outcome, CliError> {
    let spec = SweepSpec::load(path)?;
    let threads = threads(parallelism)?;
    let n = spec.points().len();
    eprintln!("sweep: {n} grid points on {threads} threads");
    ensure_dir(out_dir)?;
    let rows = run_sweep(&spec, threads)?;
    let csv_path = out_dir.join("summary.csv");
    let json_path = out_dir.join("summary.json");
    write_file(&csv_path, &to_csv(&rows, &spec.metrics)?)?;
    write_json(&json_path, &rows)?;
    let failed = rows.iter().filter(|r| r.exit_code != EXIT_OK).count();
    let code = if failed == rows.len() {
        rows.first().map_or(1, |r| r.exit_code)
    } else {
        EXIT_OK
    };
    Ok(Outcome {
        summary: json!({
            "status": if code == EXIT_OK { "ok" } else { "failed" },
            "points": n,
            "failed": failed,
            "summary_csv": csv_path,
            "summary_json": json_path,
        }),
        code,
    })
}
