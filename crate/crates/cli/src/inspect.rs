//! `check-system` and `verify-expansion`.

use nalgebra::DVector;
use nonholo_es::analysis::{log_log_slope, remainder_scaling, second_order_remainder};
use nonholo_es::integrator::seeker_flow_reference;
use nonholo_es::system::{check_rank_condition, estimate_alpha_on, lie_bracket, DEFAULT_COND_TOL};
use nonholo_es::{pair_library, DitherSchedule, DomainBox, FrameMatrix, StabilizerGains};
use serde_json::json;

use crate::config::{load_experiment, validated};
use crate::{error_kind, exit_code, write_json, CliError, Outcome, Source, EXIT_OK, EXIT_VALIDATION};

/// Power laws are read off four halvings of the configured value.
const LADDER: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
const SLOPE_RANGE: (f64, f64) = (1.3, 1.7);
const REFERENCE_TOL: f64 = 1e-12;

pub fn check_system(src: &Source, half_width: f64, samples: usize) -> Result<Outcome, CliError> {
    if !(half_width > 0.0 && half_width.is_finite()) || samples == 0 {
        return Err(CliError::validation(vec![
            "--half-width must be positive and --samples at least 1".into(),
        ]));
    }
    let cfg = load_experiment(src.config.as_deref(), src.preset.as_deref())?;
    let sel = cfg.selection()?;
    let e = cfg.build()?;
    let sys = &e.system;
    let around = DomainBox::cube(&cfg.x0, half_width);
    let grid: Vec<_> = around
        .grid_with_budget(samples)?
        .into_iter()
        .filter(|x| sys.domain().contains(x))
        .collect();
    let rank = check_rank_condition(sys, &sel, &grid, DEFAULT_COND_TOL)?;
    let alpha = if rank.ok { Some(estimate_alpha_on(sys, &sel, &grid)?) } else { None };
    let x0 = DVector::from_column_slice(&cfg.x0);
    let brackets = sel
        .s2
        .iter()
        .map(|&(i, j)| {
            Ok(json!({
                "fields": [i + 1, j + 1],
                "value_at_x0": lie_bracket(sys, i, j, &x0)?.iter().copied().collect::<Vec<_>>(),
            }))
        })
        .collect::<Result<Vec<_>, nonholo_es::Error>>()?;
    let out = src.out_dir.join("system.json");
    let summary = json!({
        "status": if rank.ok { "ok" } else { "rank_deficient" },
        "system": sys.name(),
        "n": sys.n(),
        "m": sys.m(),
        "box": around,
        "grid_points": grid.len(),
        "cond_tol": DEFAULT_COND_TOL,
        "rank": rank,
        "alpha": alpha,
        "brackets": brackets,
        "output": out,
    });
    write_json(&out, &summary)?;
    let code = if rank.ok { EXIT_OK } else { EXIT_VALIDATION };
    Ok(Outcome { summary, code })
}

pub fn verify_expansion(src: &Source) -> Result<Outcome, CliError> {
    let cfg = validated(load_experiment(src.config.as_deref(), src.preset.as_deref())?)?;
    let e = cfg.build()?;
    let x0 = DVector::from_column_slice(&cfg.x0);
    let xi0 = DVector::from_column_slice(&cfg.xi0);

    let in_range = |s: f64| (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s);
    let stabilizer = || -> Result<_, nonholo_es::Error> {
        let frame = FrameMatrix::new(e.system.clone(), e.sim.sel.clone())?;
        let eps: Vec<f64> = LADDER.iter().map(|s| s * cfg.epsilon).collect();
        let rem = remainder_scaling(&frame, cfg.gamma1, &x0, &xi0, &eps, REFERENCE_TOL)?;
        let gains = StabilizerGains::new(cfg.gamma1, cfg.epsilon)?;
        let predicted = second_order_remainder(&frame, &gains, &x0, &xi0)?;
        Ok(json!({
            "eps": rem.eps,
            "remainder_norms": rem.norms,
            "slope": rem.slope,
            "inconclusive": rem.inconclusive,
            "in_range": !rem.inconclusive && in_range(rem.slope),
            "second_order_prediction": predicted.iter().copied().collect::<Vec<_>>(),
        }))
    };
    // The seeker is checked with the dither at its nominal speed.
    let seeker = || -> Result<_, nonholo_es::Error> {
        let pair = pair_library(&cfg.pair, cfg.gamma2)?;
        let grad = e.cost.gradient(&xi0)?;
        let mus: Vec<f64> = LADDER.iter().map(|s| s * cfg.mu).collect();
        let mut defects = Vec::with_capacity(mus.len());
        for &mu in &mus {
            let sched = DitherSchedule::new(cfg.k.clone(), mu, 1.0)?;
            let xi = seeker_flow_reference(&e.cost, &pair, &sched, &xi0, mu, REFERENCE_TOL)?;
            defects.push((xi - &xi0 + &grad * (mu * pair.gamma2())).norm());
        }
        let slope = log_log_slope(&mus, &defects);
        Ok(json!({ "mu": mus, "defects": defects, "slope": slope, "in_range": in_range(slope) }))
    };
    let parts = [stabilizer(), seeker()];
    let code = parts.iter().find_map(|p| p.as_ref().err()).map_or(EXIT_OK, exit_code);
    let [stab, seek] = parts.map(|p| {
        p.unwrap_or_else(|e| json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } }))
    });
    let out = src.out_dir.join("expansion.json");
    let summary = json!({
        "status": if code == EXIT_OK { "ok" } else { "failed" },
        "stabilizer": stab,
        "seeker": seek,
        "slope_range": [SLOPE_RANGE.0, SLOPE_RANGE.1],
        "output": out,
    });
    write_json(&out, &summary)?;
    Ok(Outcome { summary, code })
}
