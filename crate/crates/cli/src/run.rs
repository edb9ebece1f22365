//! `run`: one experiment, its trace, report and plot.

use std::path::Path;

use nonholo_es::analysis::{fit_decay, DecayFit};
use nonholo_es::plot::{trajectory_svg, PlotStyle};
use nonholo_es::{simulate, ExperimentConfig, PiEpsTrajectory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{load_experiment, validated};
use crate::{error_kind, exit_code, trace, write_file, write_json, CliError, ErrorEntry, Outcome, Source};
use crate::{EXIT_DOMAIN, EXIT_OK};

/// Scalar summary of one run; the columns of a sweep row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub lambda: f64,
    pub beta: f64,
    /// Largest `|x - x*|` over the trailing 20% of the run.
    pub rho: f64,
    pub diverged: bool,
    pub sup_tracking_error: f64,
    pub final_j: f64,
    pub final_x: Vec<f64>,
    pub final_xi: Vec<f64>,
    pub epsilon: f64,
    pub holds_per_period: usize,
    pub step: f64,
    pub steps: usize,
    pub samples: usize,
    pub domain_exit: Option<f64>,
}

pub struct Executed {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
    pub result: Result<(PiEpsTrajectory, DecayFit, Metrics), nonholo_es::Error>,
}

impl Executed {
    pub fn code(&self) -> i32 {
        match &self.result {
            Ok((t, ..)) if t.domain_exit.is_some() => EXIT_DOMAIN,
            Ok(_) => EXIT_OK,
            Err(e) => exit_code(e),
        }
    }

    pub fn status(&self) -> &'static str {
        match self.code() {
            EXIT_OK => "ok",
            EXIT_DOMAIN => "domain_exit",
            _ => "failed",
        }
    }

    pub fn metrics(&self) -> Option<&Metrics> {
        self.result.as_ref().ok().map(|r| &r.2)
    }

    pub fn error(&self) -> Option<ErrorEntry> {
        self.result.as_ref().err().map(|e| ErrorEntry {
            kind: error_kind(e).into(),
            message: e.to_string(),
        })
    }
}

/// Validates, simulates and fits. Validation problems are returned as `Err`; failures
/// of the simulation itself are kept in [`Executed::result`].
pub fn execute(cfg: ExperimentConfig) -> Result<Executed, CliError> {
    let cfg = validated(cfg)?;
    let e = cfg.build()?;
    let x_star = cfg.cost.minimizer(e.system.n()).0;
    let result = simulate(&e.system, &e.cost, &e.sim).and_then(|traj| {
        let fit = fit_decay(&traj, &x_star)?;
        let metrics = Metrics {
            lambda: fit.lambda,
            beta: fit.beta,
            rho: fit.rho,
            diverged: fit.diverged,
            sup_tracking_error: traj.sup_tracking_error(),
            final_j: traj.y.last().copied().unwrap_or(f64::NAN),
            final_x: traj.x.last().map(|v| v.iter().copied().collect()).unwrap_or_default(),
            final_xi: traj.xi.last().map(|v| v.iter().copied().collect()).unwrap_or_default(),
            epsilon: e.sim.epsilon(),
            holds_per_period: e.sim.holds_per_period(),
            step: traj.meta.step,
            steps: traj.meta.steps_taken,
            samples: traj.len(),
            domain_exit: traj.domain_exit,
        };
        Ok((traj, fit, metrics))
    });
    Ok(Executed {
        config: cfg,
        warnings: e.sim.warnings.clone(),
        result,
    })
}

pub fn report(ex: &Executed, outputs: &Value) -> Value {
    json!({
        "status": ex.status(),
        "exit_code": ex.code(),
        "config": ex.config,
        "warnings": ex.warnings,
        "metrics": ex.metrics(),
        "error": ex.error(),
        "outputs": outputs,
    })
}

/// Writes the declared outputs of an executed run into `out_dir`.
pub fn emit(ex: &Executed, out_dir: &Path, force_plot: bool) -> Result<Value, CliError> {
    let o = &ex.config.outputs;
    let trace_path = out_dir.join(o.trace_csv.as_deref().unwrap_or("trace.csv"));
    let report_path = out_dir.join(o.report_json.as_deref().unwrap_or("report.json"));
    let plot_path = match (&o.plot_svg, force_plot) {
        (Some(p), _) => Some(out_dir.join(p)),
        (None, true) => Some(out_dir.join("plot.svg")),
        (None, false) => None,
    };
    let mut written = serde_json::Map::new();
    if let Ok((traj, fit, _)) = &ex.result {
        write_file(&trace_path, &trace::to_csv(traj)?)?;
        written.insert("trace_csv".into(), json!(trace_path));
        if let Some(p) = plot_path {
            let style = PlotStyle::parse(o.plot_style.as_deref().unwrap_or("plain"))?;
            let x_star = ex.config.cost.minimizer(traj.x[0].len()).0;
            write_file(&p, &trajectory_svg(traj, style, Some((&x_star, fit)))?)?;
            written.insert("plot_svg".into(), json!(p));
        }
    }
    written.insert("report_json".into(), json!(report_path));
    let outputs = Value::Object(written);
    let rep = report(ex, &outputs);
    write_json(&report_path, &rep)?;
    Ok(rep)
}

pub fn command(src: &Source, plot: bool) -> Result<Outcome, CliError> {
    let cfg = load_experiment(src.config.as_deref(), src.preset.as_deref())?;
    let ex = execute(cfg)?;
    let rep = emit(&ex, &src.out_dir, plot)?;
    Ok(Outcome {
        summary: rep,
        code: ex.code(),
    })
}
