use nalgebra::DVector;
use serde::Serialize;

use crate::analysis::sigma::SigmaBounds;
use crate::cost::Cost;
use crate::error::{Error, Result};

/// Per-step factors of the one-step decay envelope for `W = J - J*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayEnvelope {
    pub kappa1: f64,
    pub kappa2: f64,
    pub bound: f64,
}

/// Envelope for `W(x(eps))` after a perturbed gradient step
/// `x(eps) = x0 - gamma eps grad W(x0) + r`:
///
/// ```text
/// W(x0) (1 - eps k1 / m W^{1-1/m} + eps^2 k2 / (2 m^2) W^{2-2/m})^m
/// k1 = gamma s21 - sqrt(s22) |r| W^{1/(2m)-1} / eps
/// k2 = ((m-1) s22 + m s3) (gamma sqrt(s22) + |r| W^{1/(2m)-1} / eps)^2
/// ```
///
/// The Hessian constant `s3` multiplies `m` in `k2`; with `s12` there instead an exact
/// gradient step on `|x|^2` already exceeds the bound.
pub fn decay_envelope(w0: f64, r_norm: f64, gamma: f64, eps: f64, sig: &SigmaBounds, m: f64) -> DecayEnvelope {
    if w0 <= 0.0 {
        return DecayEnvelope {
            kappa1: gamma * sig.sigma21,
            kappa2: 0.0,
            bound: 0.0,
        };
    }
    let rel = r_norm * w0.powf(1.0 / (2.0 * m) - 1.0) / eps;
    let kappa1 = gamma * sig.sigma21 - sig.sigma22.sqrt() * rel;
    let kappa2 = ((m - 1.0) * sig.sigma22 + m * sig.sigma3) * (gamma * sig.sigma22.sqrt() + rel).powi(2);
    let base = 1.0 - eps * kappa1 / m * w0.powf(1.0 - 1.0 / m) + eps * eps * kappa2 / (2.0 * m * m) * w0.powf(2.0 - 2.0 / m);
    let factor = if m == 1.0 { base } else { base.max(0.0).powf(m) };
    DecayEnvelope {
        kappa1,
        kappa2,
        bound: w0 * factor,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayStep {
    pub index: usize,
    pub w0: f64,
    pub w1: f64,
    pub r_norm: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub envelope: f64,
    /// `envelope - w1`; negative means violated.
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub steps: Vec<DecayStep>,
    pub first_violation: Option<usize>,
    pub ok: bool,
}

/// Checks the one-step envelope between consecutive `states` (taken at step boundaries
/// of length `eps`), with `r` extracted as `x_{k+1} - x_k + gamma eps grad J(x_k)`.
pub fn decay_check(
    states: &[DVector<f64>],
    cost: &Cost,
    gamma: f64,
    eps: f64,
    sig: &SigmaBounds,
    m: f64,
) -> Result<DecayReport> {
    if m < 1.0 {
        return Err(Error::InvalidConfig(format!("decay exponent m must be >= 1, got {m}")));
    }
    let mut steps = Vec::with_capacity(states.len().saturating_sub(1));
    for (k, pair) in states.windows(2).enumerate() {
        let (x0, x1) = (&pair[0], &pair[1]);
        let w0 = (cost.eval(x0) - sig.j_star).max(0.0);
        let w1 = cost.eval(x1) - sig.j_star;
        let r = x1 - x0 + cost.gradient(x0)? * (gamma * eps);
        let env = decay_envelope(w0, r.norm(), gamma, eps, sig, m);
        let slack = env.bound - w1;
        // Rounding tolerance: equality is attained by exact gradient steps on quadratics.
        let ok = slack >= -1e-12 * (1.0 + w0);
        steps.push(DecayStep {
            index: k,
            w0,
            w1,
            r_norm: r.norm(),
            kappa1: env.kappa1,
            kappa2: env.kappa2,
            envelope: env.bound,
            slack,
            ok,
        });
    }
    let first_violation = steps.iter().find(|s| !s.ok).map(|s| s.index);
    Ok(DecayReport {
        ok: first_violation.is_none(),
        first_violation,
        steps,
    })
}

/// Envelope `|x(t) - x*| <= beta |x0 - x*| e^{-lambda t} + rho` dominating every sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub beta: f64,
    /// `f64::INFINITY` when every sample after `t = 0` already lies within `rho`.
    pub lambda: f64,
    pub rho: f64,
    pub window: (f64, f64),
    pub diverged: bool,
}

impl DecayFit {
    pub fn envelope(&self, d0: f64, t: f64) -> f64 {
        let decay = if self.lambda.is_infinite() {
            if t == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (-self.lambda * t).exp()
        };
        self.beta * d0 * decay + self.rho
    }

    /// Whether the envelope dominates every `(t, d)` sample.
    pub fn dominates(&self, times: &[f64], dist: &[f64]) -> bool {
        let d0 = dist.first().copied().unwrap_or(0.0);
        let t0 = times.first().copied().unwrap_or(0.0);
        times
            .iter()
            .zip(dist)
            .all(|(t, d)| *d <= self.envelope(d0, t - t0) * (1.0 + 1e-12) + 1e-300)
    }
}

/// Ratio of consecutive `beta` candidates in [`fit_decay_trace`].
pub const BETA_GRID: f64 = 1.0905077326652577; // 2^(1/8)

/// Fits the envelope to a distance trace.
///
/// `rho` is the largest distance in the trailing 20% of the time span, `beta` the
/// smallest point of the grid `BETA_GRID^k >= 1` that admits a positive rate with that
/// `rho`, and `lambda` the largest such rate (closed form: the minimum over samples of
/// `ln(beta d0 / (d - rho)) / t`).
pub fn fit_decay_trace(times: &[f64], dist: &[f64]) -> Result<DecayFit> {
    if times.is_empty() || times.len() != dist.len() {
        return Err(Error::InvalidConfig("decay fit needs a nonempty trace with matching lengths".into()));
    }
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let cut = t_end - 0.2 * (t_end - t0);
    let rho = times
        .iter()
        .zip(dist)
        .filter(|(t, _)| **t >= cut)
        .map(|(_, d)| *d)
        .fold(0.0, f64::max);
    let d0 = dist[0];
    let window = (cut, t_end);
    let all_max = dist.iter().copied().fold(0.0, f64::max);
    if d0 == 0.0 {
        if all_max == 0.0 {
            return Ok(DecayFit {
                beta: 1.0,
                lambda: f64::INFINITY,
                rho: 0.0,
                window,
                diverged: false,
            });
        }
        return Ok(DecayFit {
            beta: 1.0,
            lambda: 0.0,
            rho: all_max,
            window,
            diverged: true,
        });
    }
    let floor = dist.iter().map(|d| (d - rho) / d0).fold(1.0, f64::max);
    if rho > d0 {
        return Ok(DecayFit {
            beta: floor,
            lambda: 0.0,
            rho,
            window,
            diverged: true,
        });
    }
    let rate = |beta: f64| {
        times
            .iter()
            .zip(dist)
            .filter(|(t, d)| **t > t0 && **d > rho)
            .map(|(t, d)| (beta * d0 / (d - rho)).ln() / (t - t0))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    };
    // A trace that overshoots d0 after t0 admits no positive rate at the smallest
    // compatible beta, so beta moves up a geometric grid until one exists.
    let mut beta = BETA_GRID.powf((floor.ln() / BETA_GRID.ln() - 1e-12).ceil()).max(1.0);
    let mut lambda = rate(beta);
    while lambda == 0.0 && beta < 1e6 {
        beta *= BETA_GRID;
        lambda = rate(beta);
    }
    Ok(DecayFit {
        beta,
        lambda,
        rho,
        window,
        diverged: false,
    })
}

/// [`fit_decay_trace`] on the distance of the recorded `x` samples to `x_star`.
pub fn fit_decay(traj: &crate::integrator::PiEpsTrajectory, x_star: &DVector<f64>) -> Result<DecayFit> {
    fit_decay_trace(&traj.times, &traj.distances(x_star))
}
