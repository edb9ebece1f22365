//! Acceptance gate. Each test prints one `[PASS]`/`[FAIL]` line with the measured value,
//! the tolerance and the runtime, then asserts.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use nonholo_es::analysis::{
    estimate_sigma, fit_decay, iterated_integral, log_log_slope, remainder_scaling, single_integral,
};
use nonholo_es::integrator::{seeker_flow_reference, simulate, SimConfig};
use nonholo_es::seeker::PairKind;
use nonholo_es::stabilizer::{coefficients, StabilizerGains};
use nonholo_es::system::lie_bracket;
use nonholo_es::tuner::{compute_bounds, estimate_constants, validate_chain, TuningBudget};
use nonholo_es::{
    pair_library, BracketSelection, ControlSystem, Cost, DitherSchedule, DomainBox, ExperimentConfig, FrameMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report(id: u32, pass: bool, detail: &str, elapsed: Duration, limit: Duration) -> bool {
    let within = elapsed <= limit;
    let ok = pass && within;
    println!(
        "[{}] criterion {id}: {detail}; runtime {:.3}s (limit {}s{})",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if within { "" } else { ", exceeded" }
    );
    ok
}

#[test]
fn criterion_1_frame_and_bracket() {
    let start = Instant::now();
    let sys = ControlSystem::brockett();
    let sel = BracketSelection::brockett(4);
    let frame = FrameMatrix::new(sys.clone(), sel).unwrap();
    let gains = StabilizerGains::new(20.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_bracket = 0.0f64;
    let mut worst_coeff = 0.0f64;
    for _ in 0..100 {
        let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let xi = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let b = lie_bracket(&sys, 0, 1, &x).unwrap();
        worst_bracket = worst_bracket.max((b - v(&[0.0, 0.0, -2.0])).amax());
        let g = gains.gamma1;
        let closed = v(&[
            -g * (x[0] - xi[0]),
            -g * (x[1] - xi[1]),
            -g * 0.5 * (-x[1] * xi[0] + x[0] * xi[1] - x[2] + xi[2]),
        ]);
        let a = coefficients(&frame, &gains, &x, &xi).unwrap().to_vector();
        worst_coeff = worst_coeff.max((a - closed).amax());
    }
    let pass = worst_bracket <= 1e-10 && worst_coeff <= 1e-10;
    let ok = report(
        1,
        pass,
        &format!("max bracket error {worst_bracket:.2e}, max coefficient error {worst_coeff:.2e} (tol 1e-10)"),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn criterion_2_pair_identities() {
    let start = Instant::now();
    let gamma2 = 1.0;
    let mut worst_identity = 0.0f64;
    let mut worst_gain = 0.0f64;
    for kind in PairKind::ALL {
        let pair = pair_library(kind.name(), gamma2).unwrap();
        for z in pair.check_grid(200) {
            worst_identity = worst_identity.max(pair.identity_residual(z).unwrap().abs() / gamma2);
            worst_gain = worst_gain.max((pair.bracket_gain(z).unwrap() + gamma2).abs());
        }
    }
    let pass = worst_identity <= 1e-8 && worst_gain <= 1e-6;
    let ok = report(
        2,
        pass,
        &format!(
            "five pairs x 200 points: max |r^2 phi' - g2| = {worst_identity:.2e} (tol 1e-8), max |gain + g2| = {worst_gain:.2e} (tol 1e-6)"
        ),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn criterion_3_dither_calculus() {
    let start = Instant::now();
    let mu = 0.5;
    let sched = DitherSchedule::new(vec![1, 2, 3], mu, 1.0).unwrap();
    let n = sched.n();
    let fastest = mu / f64::from(sched.max_k());
    let s = &sched;
    let d = |j: usize| move |t: f64| s.dither(j, t).unwrap();
    let mut worst_mean = 0.0f64;
    let mut worst_iter = 0.0f64;
    let mut worst_cross = 0.0f64;
    for j in 0..2 * n {
        let amp = sched.amplitude(j % n);
        let m = single_integral(d(j), 0.0, mu, fastest).unwrap();
        worst_mean = worst_mean.max(m.abs() / (amp * mu));
    }
    for j in 0..n {
        let plus = iterated_integral(d(j + n), d(j), 0.0, mu, fastest).unwrap();
        let minus = iterated_integral(d(j), d(j + n), 0.0, mu, fastest).unwrap();
        worst_iter = worst_iter.max(((plus - mu) / mu).abs()).max(((minus + mu) / mu).abs());
    }
    for a in 0..2 * n {
        for b in 0..2 * n {
            if a % n == b % n {
                continue;
            }
            let p = single_integral(|t| d(a)(t) * d(b)(t), 0.0, mu, fastest).unwrap();
            worst_cross = worst_cross.max(p.abs() / (sched.amplitude(a % n) * sched.amplitude(b % n) * mu));
        }
    }
    let pass = worst_mean <= 1e-8 && worst_iter <= 1e-6 && worst_cross <= 1e-8;
    let ok = report(
        3,
        pass,
        &format!(
            "mean {worst_mean:.2e} (tol 1e-8), iterated +/-mu rel {worst_iter:.2e} (tol 1e-6), cross-frequency {worst_cross:.2e} (tol 1e-8)"
        ),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn criterion_4_averaged_gradient_step() {
    let start = Instant::now();
    let cost = Cost::quadratic(DVector::zeros(3), 1.0, 0.0);
    let pair = pair_library("linear", 1.0).unwrap();
    let xi0 = v(&[1.0, -1.0, 1.0]) * (0.1 / 3f64.sqrt());
    let grad = cost.gradient(&xi0).unwrap();
    let mus = [0.4, 0.2, 0.1, 0.05];
    let mut defects = Vec::new();
    for &mu in &mus {
        let sched = DitherSchedule::new(vec![1, 2, 3], mu, 1.0).unwrap();
        let xi = seeker_flow_reference(&cost, &pair, &sched, &xi0, mu, 1e-13).unwrap();
        defects.push((xi - &xi0 + &grad * (mu * pair.gamma2())).norm());
    }
    let slope = log_log_slope(&mus, &defects);
    let ok = report(
        4,
        (1.3..=1.7).contains(&slope),
        &format!("defects {}, log-log slope {slope:.3} (want [1.3, 1.7])", sci(&defects)),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

#[test]
fn criterion_5_stabilizer_remainder() {
    let start = Instant::now();
    let frame = FrameMatrix::new(ControlSystem::brockett(), BracketSelection::brockett(4)).unwrap();
    let x0 = v(&[1.0, -1.0, 1.0]);
    let xi0 = &x0 - v(&[1.0, 1.0, 1.0]) * (0.1 / 3f64.sqrt());
    let ladder = [0.1, 0.05, 0.025, 0.0125];
    let r = remainder_scaling(&frame, 1.0, &x0, &xi0, &ladder, 1e-12).unwrap();
    let pass = !r.inconclusive && (1.3..=1.7).contains(&r.slope);
    let ok = report(
        5,
        pass,
        &format!("|R| {}, log-log slope {:.3} (want [1.3, 1.7])", sci(&r.norms), r.slope),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

struct RunSummary {
    lambda: f64,
    residual: f64,
    error: Option<String>,
}

fn run_preset(cfg: &ExperimentConfig) -> RunSummary {
    let e = cfg.build().unwrap();
    let x_star = cfg.cost.minimizer(3).0;
    match simulate(&e.system, &e.cost, &e.sim) {
        Ok(traj) => {
            let fit = fit_decay(&traj, &x_star).unwrap();
            RunSummary {
                lambda: fit.lambda,
                residual: fit.rho,
                error: traj.domain_exit.map(|t| format!("left the domain at t = {t}")),
            }
        }
        Err(err) => RunSummary {
            lambda: f64::NAN,
            residual: f64::NAN,
            error: Some(err.to_string()),
        },
    }
}

#[test]
fn criterion_6_end_to_end_reproduction() {
    let start = Instant::now();
    let durr_cfg = ExperimentConfig::brockett_durr();
    let durr = run_preset(&durr_cfg);
    let t_durr = start.elapsed();
    let start_v = Instant::now();
    let van = run_preset(&ExperimentConfig::brockett_vanishing());
    let t_van = start_v.elapsed();
    let third = v(&durr_cfg.x0).norm() / 3.0;
    let durr_ok = durr.error.is_none() && durr.lambda > 0.0 && durr.residual <= third;
    let van_ok = van.error.is_none() && van.residual < durr.residual;
    let describe = |s: &RunSummary| match &s.error {
        Some(e) => format!("run failed ({e})"),
        None => format!("lambda {:.4}, trailing max |x| {:.4}", s.lambda, s.residual),
    };
    let ok = report(
        6,
        durr_ok && van_ok && t_durr.as_secs() < 60 && t_van.as_secs() < 60,
        &format!(
            "brockett-durr: {} (want lambda > 0, residual <= {third:.4}); brockett-vanishing: {} (want residual < durr's); durr {:.2}s, vanishing {:.2}s",
            describe(&durr),
            describe(&van),
            t_durr.as_secs_f64(),
            t_van.as_secs_f64()
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

/// Step budget of the tuned closed-loop run.
const TUNED_STEPS: usize = 20_000_000;

#[test]
fn criterion_7_tuner() {
    let start = Instant::now();
    let sys = ControlSystem::brockett();
    let sel = BracketSelection::brockett(4);
    let cost = Cost::quadratic(DVector::zeros(3), 1.0, 0.0);
    let x_star = DVector::zeros(3);
    let ws = DomainBox::cube(&[0.0; 3], 1.0);
    let gamma2 = 0.01;
    let pair = pair_library("bounded", gamma2).unwrap();
    let sig = estimate_sigma(&cost, &ws, &x_star, 200, 1).unwrap();
    let probe = DitherSchedule::new(vec![1, 2, 3], 1.0, 1.0).unwrap();
    let est = estimate_constants(&sys, &sel, &pair, &probe, &cost, &ws, 100, 3).unwrap();
    let (delta, rho) = (0.2, 0.15);
    let budget = TuningBudget {
        delta,
        rho,
        rho1: 1.0,
        rho2: (rho * rho * sig.sigma11 / 4.0).min(0.01 * gamma2.sqrt()),
        varsigma: 1.0,
        lambda2: 0.5 * gamma2 * sig.sigma21,
        delta_x: None,
    };
    let r = compute_bounds(&est, &sig, &budget).unwrap();
    let mut checks = Vec::new();

    let mu_t = 0.25f64;
    let formula = 3.0 * est.nu / (budget.rho1 * mu_t.powf(budget.varsigma + 1.0));
    checks.push(("gamma1_bar formula", r.gamma1_bar(mu_t) == formula));

    let lhs = r.mu0.sqrt() * (2.0 * budget.rho1 * r.mu0.powf(budget.varsigma) / 3.0 + est.nu);
    checks.push(("mu0 root residual <= 1e-10", ((lhs - r.d) / r.d).abs() <= 1e-10));

    let (mu, gamma1, eps) = r.recommended();
    checks.push(("chain passes at the recommendation", validate_chain(&r, mu, gamma1, eps).ok));
    let q = (mu / eps).round();
    let violations: [(usize, f64, f64, f64); 6] = [
        (0, 2.0 * r.mu_bar, gamma1, eps),
        (1, mu, r.gamma1_bar(mu) / 2.0, eps),
        (2, mu, gamma1, mu / (mu / (4.0 * r.eps_bar(gamma1, mu).value)).floor()),
        (3, mu, gamma1, mu),
        (4, mu, gamma1, mu / (q + 0.5)),
        (5, mu, 2.0 / eps, eps),
    ];
    let each_fails = violations
        .iter()
        .all(|&(k, m, g, e)| !validate_chain(&r, m, g, e).checks[k].pass);
    checks.push(("each deliberate violation fails its check", each_fails));

    // Envelope along a simulated run from the boundary of the initial ball.
    let sched = DitherSchedule::new(vec![1, 2, 3], mu, 1.0).unwrap();
    let x0 = v(&[1.0, -1.0, 1.0]) * (delta / 3f64.sqrt());
    let probe_cfg = SimConfig::new(
        StabilizerGains::new(gamma1, eps).unwrap(),
        sched.clone(),
        pair.clone(),
        sel.clone(),
        x0.clone(),
        x0.clone(),
        eps,
    )
    .unwrap();
    let h = probe_cfg.step();
    let per_hold = probe_cfg.steps_per_hold();
    let holds = TUNED_STEPS / per_hold;
    let horizon = holds as f64 * probe_cfg.epsilon();
    let cfg = probe_cfg
        .with_horizon(horizon)
        .unwrap()
        .with_record_stride(10 * per_hold)
        .unwrap();
    let traj = simulate(&sys, &cost, &cfg).unwrap();
    let beta = r.beta(mu);
    let lambda = r.predicted_lambda;
    let d0 = (&x0 - &x_star).norm();
    let dist = traj.distances(&x_star);
    let envelope_ok = traj
        .times
        .iter()
        .zip(&dist)
        .all(|(t, d)| *d <= beta * d0 * (-lambda * t).exp() + rho);
    checks.push(("envelope at every sample", envelope_ok));
    let covers_period = horizon >= mu;
    checks.push(("simulated horizon covers one dither period", covers_period));

    let elapsed = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let ok = report(
        7,
        failed.is_empty(),
        &format!(
            "mu_bar {:.3e} ({:?}), gamma1 {gamma1:.3e}, eps {eps:.3e}, step {h:.3e}; {TUNED_STEPS} steps reach t = {horizon:.3e} \
             = {:.2e} dither periods (1/lambda = {:.1}); beta {beta:.4}; failed: {failed:?}",
            r.mu_bar,
            r.mu_binding,
            horizon / mu,
            1.0 / lambda
        ),
        elapsed,
        Duration::from_secs(300),
    );
    assert!(ok);
}

#[test]
fn criterion_8_integrator_order() {
    let start = Instant::now();
    // The paper's gain 20 with eps = 0.1 leaves the contraction regime and diverges
    // within one period, which says nothing about the integrator; gamma1 = 5 keeps
    // eps * gamma1 < 1.
    let base = ExperimentConfig {
        gamma1: 5.0,
        ..ExperimentConfig::brockett_durr()
    };
    let mut ends = Vec::new();
    for substeps in [4usize, 8, 16] {
        let mut cfg = base.clone();
        cfg.horizon = cfg.mu;
        cfg.substeps = Some(substeps);
        let e = cfg.build().unwrap();
        let traj = simulate(&e.system, &e.cost, &e.sim).unwrap();
        let (x, xi) = traj.final_state().unwrap();
        ends.push(DVector::from_iterator(6, x.iter().chain(xi.iter()).copied()));
    }
    let e1 = (&ends[0] - &ends[1]).norm();
    let e2 = (&ends[1] - &ends[2]).norm();
    let order = (e1 / e2).log2();
    let ok = report(
        8,
        order >= 2.0,
        &format!("differences {e1:.3e}, {e2:.3e}: observed order {order:.3} (want >= 2)"),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}
