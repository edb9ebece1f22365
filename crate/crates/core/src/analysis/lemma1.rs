use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeker::{dither_sum_constant, DitherSchedule};

/// `nu = c_w / sqrt(mu)`, the bound on `sum_j |v_j(t)|` over all `2n` dithers.
pub fn dither_nu(sched: &DitherSchedule) -> f64 {
    dither_sum_constant(&sched.k) / sched.mu.sqrt() / sched.eta
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub ok: bool,
    /// Largest `displacement / bound` over the segment (0 when the bound is 0 and nothing moved).
    pub worst_ratio: f64,
    pub violations: Vec<usize>,
}

/// Checks `|xi(t) - xi(0)| <= t nu M e^{nu L t}` on a recorded segment, where `M` is
/// `max_i |h_i(xi(0))|`, `L` a Lipschitz constant of the fields and `nu` the input bound.
pub fn lemma1_bound_check(
    times: &[f64],
    states: &[DVector<f64>],
    max_field_at_start: f64,
    lipschitz: f64,
    nu: f64,
) -> Result<Lemma1Report> {
    if times.is_empty() || times.len() != states.len() {
        return Err(Error::InvalidConfig("segment needs matching nonempty times and states".into()));
    }
    let t0 = times[0];
    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    for (k, (t, x)) in times.iter().zip(states).enumerate() {
        let s = t - t0;
        let bound = s * nu * max_field_at_start * (nu * lipschitz * s).exp();
        let disp = (x - &states[0]).norm();
        let slack = 1e-12 * (1.0 + states[0].norm());
        if disp > bound + slack {
            violations.push(k);
        }
        if bound > 0.0 {
            worst = worst.max(disp / bound);
        } else if disp > slack {
            worst = f64::INFINITY;
        }
    }
    Ok(Lemma1Report {
        ok: violations.is_empty(),
        worst_ratio: worst,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn nu_for_the_default_schedule() {
        let s = DitherSchedule::new(vec![1, 2, 3], 1.0, 1.0).unwrap();
        assert!((dither_nu(&s) - 20.786).abs() < 1e-3);
    }

    #[test]
    fn dither_bound_dominates_its_sum() {
        let s = DitherSchedule::new(vec![1, 2, 3], 0.5, 1.0).unwrap();
        let nu = dither_nu(&s);
        for k in 0..1000 {
            let t = k as f64 * 0.5 / 1000.0;
            let sum: f64 = (0..6).map(|j| s.dither(j, t).unwrap().abs()).sum();
            assert!(sum <= nu * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_fields_never_move() {
        let times = [0.0, 0.1, 0.2];
        let states = vec![DVector::from_vec(vec![1.0, 2.0]); 3];
        let r = lemma1_bound_check(&times, &states, 0.0, 0.0, 5.0).unwrap();
        assert!(r.ok);
    }

    #[test]
    fn single_dither_on_a_constant_field() {
        // xi' = v_1(t) e_1: xi_1(t) = sqrt(4 pi k / mu) sin(2 pi k t / mu) mu / (2 pi k).
        let (k, mu) = (2.0, 0.5);
        let amp = (4.0 * PI * k / mu).sqrt();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * mu / 200.0).collect();
        let states: Vec<DVector<f64>> = times
            .iter()
            .map(|t| DVector::from_vec(vec![amp * (2.0 * PI * k * t / mu).sin() * mu / (2.0 * PI * k), 0.0]))
            .collect();
        let r = lemma1_bound_check(&times, &states, 1.0, 0.0, amp).unwrap();
        assert!(r.ok && r.worst_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn underestimated_constants_are_caught() {
        let times = [0.0, 1.0];
        let states = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![3.0])];
        let r = lemma1_bound_check(&times, &states, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(r.violations, vec![1]);
    }
}
