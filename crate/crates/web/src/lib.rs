//! Browser demo: simulate a preset, draw a generating pair, tune a budget.
//!
//! Every export takes and returns JSON text. The plain functions are usable natively.

use nalgebra::DVector;
use nonholo_es::analysis::{estimate_sigma, fit_decay};
use nonholo_es::plot::{render_panels, trajectory_svg, Panel, PlotStyle, Series};
use nonholo_es::system::DomainBox;
use nonholo_es::{compute_bounds, estimate_constants, pair_library, simulate, validate_chain};
use nonholo_es::{Cost, ControlSystem, DitherSchedule, ExperimentConfig, TuningBudget, BracketSelection};
use serde_json::{json, Map, Value};
use wasm_bindgen::prelude::*;

type Res = Result<String, String>;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `{"preset": name, ...overrides}`; the overrides are top-level experiment keys.
fn experiment(params: &str) -> Result<ExperimentConfig, String> {
    let Value::Object(mut over) = serde_json::from_str::<Value>(params).map_err(fail)? else {
        return Err("parameters must be a JSON object".into());
    };
    let name = match over.remove("preset") {
        Some(Value::String(s)) => s,
        None => "brockett-durr".into(),
        Some(v) => return Err(format!("preset must be a string, got {v}")),
    };
    let mut base = match serde_json::to_value(ExperimentConfig::preset(&name).map_err(fail)?).map_err(fail)? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    base.extend(over);
    serde_json::from_value(Value::Object(base)).map_err(fail)
}

pub fn simulate_json(params: &str) -> Res {
    let cfg = experiment(params)?;
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    let e = cfg.build().map_err(fail)?;
    let x_star = cfg.cost.minimizer(e.system.n()).0;
    let out = match simulate(&e.system, &e.cost, &e.sim) {
        Ok(traj) => {
            let fit = fit_decay(&traj, &x_star).map_err(fail)?;
            let svg = trajectory_svg(&traj, PlotStyle::Envelope, Some((&x_star, &fit))).map_err(fail)?;
            json!({
                "svg": svg,
                "metrics": {
                    "lambda": fit.lambda,
                    "beta": fit.beta,
                    "rho": fit.rho,
                    "diverged": fit.diverged,
                    "sup_tracking_error": traj.sup_tracking_error(),
                    "final_j": traj.y.last(),
                    "epsilon": e.sim.epsilon(),
                },
                "warnings": e.sim.warnings,
                "error": null,
            })
        }
        Err(err) => json!({ "svg": null, "metrics": null, "warnings": e.sim.warnings, "error": err.to_string() }),
    };
    Ok(out.to_string())
}

/// `g_sin`, `g_cos` on `[z_min, z_max]` and the worst `|r^2 phi' - gamma2|` there.
pub fn pair_curves_json(name: &str, gamma2: f64, z_max: f64) -> Res {
    let pair = pair_library(name, gamma2).map_err(fail)?;
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err("z_max must be positive".into());
    }
    let z_min = match pair.validity() {
        nonholo_es::seeker::Validity::All => -z_max,
        _ => 0.0,
    };
    const N: usize = 800;
    let mut gs = Vec::with_capacity(N + 1);
    let mut gc = Vec::with_capacity(N + 1);
    let mut worst = 0.0f64;
    for i in 0..=N {
        let z = z_min + (z_max - z_min) * i as f64 / N as f64;
        if let Ok((s, c)) = pair.eval(z) {
            gs.push((z, s));
            gc.push((z, c));
        }
        if let Ok(r) = pair.identity_residual(z) {
            worst = worst.max(r.abs());
        }
    }
    let panel = Panel {
        title: format!("{} pair, gamma2 = {gamma2}", pair.name()),
        y_label: "g(z)".into(),
        series: vec![
            Series {
                label: "g_sin".into(),
                color: "#1f5fbf",
                dashed: false,
                points: gs,
            },
            Series {
                label: "g_cos".into(),
                color: "#d0641c",
                dashed: true,
                points: gc,
            },
        ],
    };
    let svg = render_panels(&[panel], "z").map_err(fail)?;
    Ok(json!({ "svg": svg, "max_identity_residual": worst }).to_string())
}

/// Tunes the Brockett integrator with `J = |x|^2` on the cube of half width
/// `half_width`: `{"pair", "gamma2", "delta", "rho", "half_width"}`.
pub fn tune_json(params: &str) -> Res {
    let p: Value = serde_json::from_str(params).map_err(fail)?;
    let num = |k: &str, d: f64| p.get(k).and_then(Value::as_f64).unwrap_or(d);
    let pair_name = p.get("pair").and_then(Value::as_str).unwrap_or("bounded");
    let (gamma2, delta, rho, half) = (num("gamma2", 0.01), num("delta", 0.2), num("rho", 0.15), num("half_width", 1.0));
    let sys = ControlSystem::brockett();
    let sel = BracketSelection::brockett(4);
    let cost = Cost::quadratic(DVector::zeros(3), 1.0, 0.0);
    let ws = DomainBox::cube(&[0.0; 3], half);
    let pair = pair_library(pair_name, gamma2).map_err(fail)?;
    let sched = DitherSchedule::new(vec![1, 2, 3], 1.0, 1.0).map_err(fail)?;
    let sig = estimate_sigma(&cost, &ws, &DVector::zeros(3), 200, 1).map_err(fail)?;
    let est = estimate_constants(&sys, &sel, &pair, &sched, &cost, &ws, 100, 3).map_err(fail)?;
    let budget = TuningBudget {
        delta,
        rho,
        rho1: 1.0,
        rho2: (rho * rho * sig.sigma11 / 4.0).min(0.01 * gamma2.sqrt()),
        varsigma: 1.0,
        lambda2: 0.5 * gamma2 * sig.sigma21,
        delta_x: None,
    };
    let r = compute_bounds(&est, &sig, &budget).map_err(fail)?;
    let (mu, gamma1, eps) = r.recommended();
    let chain = validate_chain(&r, mu, gamma1, eps);
    Ok(json!({
        "mu": mu,
        "gamma1": gamma1,
        "epsilon": eps,
        "holds_per_period": (mu / eps).round(),
        "mu_binding": r.mu_binding,
        "chain": chain,
    })
    .to_string())
}

fn js(r: Res) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn run_experiment(params: &str) -> Result<String, JsError> {
    js(simulate_json(params))
}

#[wasm_bindgen]
pub fn pair_curves(name: &str, gamma2: f64, z_max: f64) -> Result<String, JsError> {
    js(pair_curves_json(name, gamma2, z_max))
}

#[wasm_bindgen]
pub fn tune(params: &str) -> Result<String, JsError> {
    js(tune_json(params))
}
