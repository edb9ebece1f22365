//! `estimate-constants` and `tune`.

use std::path::Path;

use nonholo_es::analysis::{estimate_sigma, SigmaBounds};
use nonholo_es::system::DomainBox;
use nonholo_es::tuner::validate_chain;
use nonholo_es::{compute_bounds, estimate_constants, pair_library, ConstantEstimates, ExperimentConfig};
use nonholo_es::{DitherSchedule, TuningBudget, TuningResult};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{deserialize, experiment_from_value, merge, read_value, validated};
use crate::{write_json, CliError, Outcome, EXIT_OK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum WorkingSet {
    Bounds { lower: Vec<f64>, upper: Vec<f64> },
    Cube { center: Vec<f64>, half_width: f64 },
}

impl WorkingSet {
    pub fn to_box(&self) -> Result<DomainBox, CliError> {
        match self {
            WorkingSet::Bounds { lower, upper } => Ok(DomainBox::new(lower.clone(), upper.clone())?),
            WorkingSet::Cube { center, half_width } => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(CliError::validation(vec![format!(
                        "working_set.half_width must be positive and finite, got {half_width}"
                    )]));
                }
                Ok(DomainBox::cube(center, *half_width))
            }
        }
    }
}

/// Budget as written in a file; `rho2` and `lambda2` may be left to their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub delta: f64,
    pub rho: f64,
    #[serde(default = "one")]
    pub rho1: f64,
    /// Defaults to `min(rho^2 sigma11 / 4, 0.01 sqrt(gamma2))`.
    #[serde(default)]
    pub rho2: Option<f64>,
    #[serde(default = "one")]
    pub varsigma: f64,
    /// Defaults to `gamma2 sigma21 / 2`.
    #[serde(default)]
    pub lambda2: Option<f64>,
    #[serde(default)]
    pub delta_x: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    100
}

fn default_sigma_samples() -> usize {
    200
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    /// `(mu_bar, 2 gamma1_bar, eps_bar / 2)`.
    #[default]
    Plain,
    /// Keeps the experiment's `gamma1` and slows the dither by `eta` instead.
    Slowed,
}

/// Settings shared by `tune`, `estimate-constants` and the chain column of `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSettings {
    pub working_set: WorkingSet,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sigma_samples")]
    pub sigma_samples: usize,
    #[serde(default)]
    pub mode: TuneMode,
}

/// Constants and cost bounds on the working set.
pub fn estimates(cfg: &ExperimentConfig, s: &TuneSettings) -> Result<(ConstantEstimates, SigmaBounds), CliError> {
    let e = cfg.build()?;
    let ws = s.working_set.to_box()?;
    let (x_star, _) = cfg.cost.minimizer(e.system.n());
    let pair = pair_library(&cfg.pair, cfg.gamma2)?;
    let sched = DitherSchedule::new(cfg.k.clone(), cfg.mu, cfg.eta)?;
    let est = estimate_constants(&e.system, &e.sim.sel, &pair, &sched, &e.cost, &ws, s.samples, cfg.seed)?;
    let sig = estimate_sigma(&e.cost, &ws, &x_star, s.sigma_samples, cfg.seed)?;
    Ok((est, sig))
}

pub fn budget(spec: &BudgetSpec, gamma2: f64, sig: &SigmaBounds) -> TuningBudget {
    TuningBudget {
        delta: spec.delta,
        rho: spec.rho,
        rho1: spec.rho1,
        rho2: spec
            .rho2
            .unwrap_or_else(|| (spec.rho * spec.rho * sig.sigma11 / 4.0).min(0.01 * gamma2.sqrt())),
        varsigma: spec.varsigma,
        lambda2: spec.lambda2.unwrap_or(0.5 * gamma2 * sig.sigma21),
        delta_x: spec.delta_x,
    }
}

pub fn tune(cfg: &ExperimentConfig, s: &TuneSettings) -> Result<TuningResult, CliError> {
    let spec = s
        .budget
        .as_ref()
        .ok_or_else(|| CliError::validation(vec!["tuning needs a [budget] table".into()]))?;
    let (est, sig) = estimates(cfg, s)?;
    let b = budget(spec, cfg.gamma2, &sig);
    Ok(compute_bounds(&est, &sig, &b)?)
}

/// `(mu, gamma1, eps, eta)` to run with.
pub fn recommendation(r: &TuningResult, mode: TuneMode, gamma1: f64) -> (f64, f64, f64, f64) {
    match mode {
        TuneMode::Plain => {
            let (mu, g, eps) = r.recommended();
            (mu, g, eps, 1.0)
        }
        TuneMode::Slowed => {
            let mu = r.mu_bar;
            let eta = 2.0 * r.eta_bar(gamma1, mu);
            let eps = 0.5 * r.eps_bar_slowed(gamma1, mu, eta).value;
            let eps = mu / (mu / eps).ceil();
            (mu, gamma1, eps, eta)
        }
    }
}

/// A tune or estimate spec: an experiment (`preset` and/or `[base]`) plus [`TuneSettings`].
fn load_spec(path: &Path, preset: Option<&str>) -> Result<(ExperimentConfig, TuneSettings), CliError> {
    let v = read_value(path)?;
    let Value::Object(mut m) = v else {
        return Err(CliError::validation(vec!["a tuning spec must be a table".into()]));
    };
    let base = split_base(&mut m, preset)?;
    let settings: TuneSettings = deserialize(Value::Object(m), "tuning spec")?;
    Ok((validated(base)?, settings))
}

/// Removes `preset` and `base` from a spec table and resolves them into an experiment.
pub fn split_base(m: &mut serde_json::Map<String, Value>, preset: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let mut base = serde_json::Map::new();
    if let Some(p) = preset {
        base.insert("preset".into(), Value::String(p.into()));
    }
    if let Some(p) = m.remove("preset") {
        base.insert("preset".into(), p);
    }
    let mut base = Value::Object(base);
    if let Some(b) = m.remove("base") {
        merge(&mut base, b);
    }
    if base.as_object().is_some_and(|b| b.is_empty()) {
        return Err(CliError::validation(vec!["the spec needs a `preset` or a [base] table".into()]));
    }
    experiment_from_value(base)
}

pub fn estimate_command(path: &Path, preset: Option<&str>, out_dir: &Path) -> Result<Outcome, CliError> {
    let (cfg, s) = load_spec(path, preset)?;
    let (est, sig) = estimates(&cfg, &s)?;
    let out = out_dir.join("constants.json");
    let summary = json!({ "status": "ok", "estimates": est, "sigmas": sig, "output": out });
    write_json(&out, &summary)?;
    Ok(Outcome { summary, code: EXIT_OK })
}

pub fn tune_command(path: &Path, preset: Option<&str>, out_dir: &Path) -> Result<Outcome, CliError> {
    let (cfg, s) = load_spec(path, preset)?;
    let r = tune(&cfg, &s)?;
    let (mu, gamma1, eps, eta) = recommendation(&r, s.mode, cfg.gamma1);
    let chain = validate_chain(&r, mu, gamma1, eps);
    let eps_bar = match s.mode {
        TuneMode::Plain => r.eps_bar(gamma1, mu),
        TuneMode::Slowed => r.eps_bar_slowed(gamma1, mu, eta),
    };
    // validate_chain is stated for the nominal dither; the slowed variant trades the
    // gain bound for eta >= eta_bar.
    let slowed_checks = (s.mode == TuneMode::Slowed).then(|| {
        json!({
            "eta >= eta_bar": eta >= r.eta_bar(gamma1, mu),
            "eps <= eps_bar_slowed": eps <= eps_bar.value,
            "eps < mu": eps < mu,
            "eps * gamma1 < 1": eps * gamma1 < 1.0,
        })
    });
    let recommended_config = ExperimentConfig {
        mu,
        gamma1,
        epsilon: eps,
        eta,
        ..cfg.clone()
    };
    let out = out_dir.join("tuning.json");
    let summary = json!({
        "status": "ok",
        "mode": s.mode,
        "gamma1_bar": r.gamma1_bar(mu),
        "eta_bar": r.eta_bar(cfg.gamma1, mu),
        "eps_bar": eps_bar,
        "recommendation": { "mu": mu, "gamma1": gamma1, "epsilon": eps, "eta": eta, "holds_per_period": (mu / eps).round() },
        "chain": chain,
        "slowed_checks": slowed_checks,
        "result": r,
        "recommended_config": recommended_config,
        "output": out,
    });
    write_json(&out, &summary)?;
    Ok(Outcome { summary, code: EXIT_OK })
}
