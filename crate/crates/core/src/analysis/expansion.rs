//! Truncated Chen-Fliess expansions and the remainder of one stabilizer hold interval.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::reference_integrate;
use crate::quadrature::gauss_legendre;
use crate::stabilizer::{coefficients, control_value, StabilizerGains};
use crate::system::{FieldSet, FrameMatrix};

const ORDER: usize = 8;

/// Gauss-Legendre panels with `ORDER` nodes each, at least 64 nodes per `fastest_period`.
fn panel_count(span: f64, fastest_period: f64) -> usize {
    ((span / fastest_period) * 64.0 / ORDER as f64).ceil().max(1.0) as usize
}

/// `int_{t0}^{t1} w_a(t) int_{t0}^{t} w_b(s) ds dt` on a fixed panel count.
fn iterated_on<A, B>(wa: &A, wb: &B, t0: f64, t1: f64, panels: usize) -> (f64, f64)
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    let (x, w) = gauss_legendre(ORDER);
    let width = (t1 - t0) / panels as f64;
    let mut outer = 0.0;
    let mut acc_b = 0.0;
    for p in 0..panels {
        let lo = t0 + p as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            let t = lo + 0.5 * width * (xi + 1.0);
            // inner integral of w_b over [lo, t]
            let half = 0.5 * (t - lo);
            let partial: f64 = x.iter().zip(&w).map(|(xj, wj)| wj * wb(lo + half * (xj + 1.0))).sum::<f64>() * half;
            outer += 0.5 * width * wi * wa(t) * (acc_b + partial);
        }
        acc_b += x.iter().zip(&w).map(|(xj, wj)| wj * wb(lo + 0.5 * width * (xj + 1.0))).sum::<f64>() * 0.5 * width;
    }
    (outer, acc_b)
}

/// Iterated integral `int_{t0}^{t1} w_a(t) int_{t0}^{t} w_b(s) ds dt` by composite
/// Gauss-Legendre, checked against a run with twice the panels.
pub fn iterated_integral<A, B>(wa: A, wb: B, t0: f64, t1: f64, fastest_period: f64) -> Result<f64>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    let panels = panel_count(t1 - t0, fastest_period);
    let (coarse, _) = iterated_on(&wa, &wb, t0, t1, panels);
    let (fine, _) = iterated_on(&wa, &wb, t0, t1, 2 * panels);
    check_converged(coarse, fine)?;
    Ok(fine)
}

/// `int_{t0}^{t1} w(t) dt` with the same rule.
pub fn single_integral<A: Fn(f64) -> f64>(w: A, t0: f64, t1: f64, fastest_period: f64) -> Result<f64> {
    let panels = panel_count(t1 - t0, fastest_period);
    let one = |_: f64| 1.0;
    let (_, coarse) = iterated_on(&one, &w, t0, t1, panels);
    let (_, fine) = iterated_on(&one, &w, t0, t1, 2 * panels);
    check_converged(coarse, fine)?;
    Ok(fine)
}

fn check_converged(coarse: f64, fine: f64) -> Result<()> {
    if !fine.is_finite() || (coarse - fine).abs() > 1e-9 * (1.0 + fine.abs()) {
        return Err(Error::QuadratureNonConvergence(format!(
            "panel doubling moved the value from {coarse} to {fine}"
        )));
    }
    Ok(())
}

/// Terms of the expansion `x0 + sum h_i(x0) int w_i + sum L_{h_j} h_i(x0) int w_i int w_j`.
#[derive(Debug, Clone)]
pub struct SeriesTerms {
    pub zeroth: DVector<f64>,
    pub first: DVector<f64>,
    pub second: DVector<f64>,
}

impl SeriesTerms {
    pub fn predicted(&self, order: usize) -> DVector<f64> {
        let mut out = self.zeroth.clone();
        if order >= 1 {
            out += &self.first;
        }
        if order >= 2 {
            out += &self.second;
        }
        out
    }
}

/// Chen-Fliess expansion of `x' = sum_i w_i(t) h_i(x)` about `x0` over `[0, t_end]`,
/// truncated after `order <= 2`. `inputs(i, t)` returns `w_i(t)`.
pub fn chen_fliess_terms<W>(
    fields: &FieldSet,
    inputs: W,
    x0: &DVector<f64>,
    t_end: f64,
    order: usize,
    fastest_period: f64,
) -> Result<SeriesTerms>
where
    W: Fn(usize, f64) -> f64,
{
    if order > 2 {
        return Err(Error::InvalidConfig(format!("expansion order {order} > 2 is not supported")));
    }
    let l = fields.len();
    let n = fields.dim();
    let mut first = DVector::zeros(n);
    let mut second = DVector::zeros(n);
    if order >= 1 {
        for i in 0..l {
            let int = single_integral(|t| inputs(i, t), 0.0, t_end, fastest_period)?;
            if int != 0.0 {
                first.axpy(int, &fields.eval(i, x0)?, 1.0);
            }
        }
    }
    if order >= 2 {
        for i in 0..l {
            for j in 0..l {
                let int = iterated_integral(|t| inputs(i, t), |s| inputs(j, s), 0.0, t_end, fastest_period)?;
                if int.abs() > 1e-300 {
                    second.axpy(int, &fields.lie_derivative(j, i, x0)?, 1.0);
                }
            }
        }
    }
    Ok(SeriesTerms {
        zeroth: x0.clone(),
        first,
        second,
    })
}

/// The truncated expansion itself.
pub fn chen_fliess_truncation<W>(
    fields: &FieldSet,
    inputs: W,
    x0: &DVector<f64>,
    t_end: f64,
    order: usize,
    fastest_period: f64,
) -> Result<DVector<f64>>
where
    W: Fn(usize, f64) -> f64,
{
    Ok(chen_fliess_terms(fields, inputs, x0, t_end, order, fastest_period)?.predicted(order))
}

/// Closed form of the second-order part of one hold interval beyond the linear step:
///
/// ```text
/// R2 = -eps^{3/2} sum_{j in S1} a_j sum_{(q, i2) in S2} sqrt(|a_q i2| / (pi kappa)) [f_j, f_i2]
///      + eps^2 / 2 sum_{j, j' in S1} a_j a_j' L_{f_j'} f_j
/// ```
pub fn second_order_remainder(
    frame: &FrameMatrix,
    gains: &StabilizerGains,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sel = frame.selection();
    let fields = frame.system().fields();
    let a = coefficients(frame, gains, x0, xi0)?;
    let eps = gains.epsilon;
    let mut r = DVector::zeros(x0.len());
    for (&j, &aj) in sel.s1.iter().zip(&a.s1) {
        if aj == 0.0 {
            continue;
        }
        for ((&(_, i2), &kappa), &ap) in sel.s2.iter().zip(&sel.kappa).zip(&a.s2) {
            let c = (ap.abs() / (PI * f64::from(kappa))).sqrt();
            if c != 0.0 {
                r.axpy(-eps.powf(1.5) * aj * c, &fields.lie_bracket(j, i2, x0)?, 1.0);
            }
        }
        for (&jp, &ajp) in sel.s1.iter().zip(&a.s1) {
            r.axpy(0.5 * eps * eps * aj * ajp, &fields.lie_derivative(jp, j, x0)?, 1.0);
        }
    }
    Ok(r)
}

/// `x(eps) - (x0 - eps gamma1 (x0 - xi0))` for the plant alone (xi frozen at `xi0`), by
/// reference integration at tolerance `tol`.
pub fn stabilizer_step_remainder(
    frame: &FrameMatrix,
    gains: &StabilizerGains,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let sys = frame.system();
    let sel = frame.selection();
    let a = coefficients(frame, gains, x0, xi0)?;
    let x_eps = reference_integrate(
        |t, x| sys.velocity(x, &control_value(sel, gains, &a, t, sys.m())),
        x0,
        0.0,
        gains.epsilon,
        tol,
    )?;
    Ok(x_eps - (x0 - (x0 - xi0) * (gains.epsilon * gains.gamma1)))
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderScaling {
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
    /// Least-squares slope of `log |R|` against `log eps`.
    pub slope: f64,
    /// Remainders at or below the integration noise floor.
    pub inconclusive: bool,
}

/// Fits the power law of the one-interval remainder over a geometric `eps` ladder.
pub fn remainder_scaling(
    frame: &FrameMatrix,
    gamma1: f64,
    x0: &DVector<f64>,
    xi0: &DVector<f64>,
    eps_ladder: &[f64],
    tol: f64,
) -> Result<RemainderScaling> {
    if eps_ladder.len() < 3 {
        return Err(Error::InvalidConfig("the eps ladder needs at least three points".into()));
    }
    let q = eps_ladder[1] / eps_ladder[0];
    if eps_ladder.windows(2).any(|w| ((w[1] / w[0]) / q - 1.0).abs() > 1e-9) || q == 1.0 {
        return Err(Error::InvalidConfig("the eps ladder must be geometric".into()));
    }
    let mut norms = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let gains = StabilizerGains::new(gamma1, eps)?;
        norms.push(stabilizer_step_remainder(frame, &gains, x0, xi0, tol)?.norm());
    }
    let floor = 1e3 * tol * (1.0 + x0.norm());
    let inconclusive = norms.iter().any(|r| *r <= floor);
    let slope = if inconclusive {
        f64::NAN
    } else {
        log_log_slope(eps_ladder, &norms)
    };
    Ok(RemainderScaling {
        eps: eps_ladder.to_vec(),
        norms,
        slope,
        inconclusive,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{BracketSelection, ControlSystem, VectorField};
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn iterated_integral_of_constants() {
        let i = iterated_integral(|_| 2.0, |_| 3.0, 0.0, 1.5, 1.5).unwrap();
        assert!((i - 6.0 * 1.5 * 1.5 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_inputs_leave_the_point() {
        let sys = ControlSystem::brockett();
        let x0 = v(&[0.3, -0.2, 1.0]);
        let x = chen_fliess_truncation(sys.fields(), |_, _| 0.0, &x0, 0.7, 2, 0.7).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn linear_flow_gap_is_third_order() {
        // x' = w(t) A x with A a rotation generator and w = 1 + t.
        let field: VectorField = Arc::new(|x: &DVector<f64>| v(&[-x[1], x[0]]));
        let fields = FieldSet::new(2, vec![field.clone()]);
        let x0 = v(&[1.0, 0.5]);
        let mut gaps = Vec::new();
        let ts = [0.2, 0.1, 0.05, 0.025];
        for &t in &ts {
            let pred = chen_fliess_truncation(&fields, |_, s| 1.0 + s, &x0, t, 2, t).unwrap();
            let exact = reference_integrate(|s, x| field(x) * (1.0 + s), &x0, 0.0, t, 1e-13).unwrap();
            gaps.push((pred - exact).norm());
        }
        let slope = log_log_slope(&ts, &gaps);
        assert!(slope >= 2.5, "slope {slope}");
    }

    #[test]
    fn brockett_second_order_truncation_is_exact() {
        let frame = FrameMatrix::new(ControlSystem::brockett(), BracketSelection::brockett(4)).unwrap();
        let gains = StabilizerGains::new(3.0, 0.05).unwrap();
        let x0 = v(&[1.0, -1.0, 1.0]);
        let xi0 = v(&[0.8, -0.7, 0.6]);
        let a = coefficients(&frame, &gains, &x0, &xi0).unwrap();
        let sel = frame.selection().clone();
        let pred = chen_fliess_truncation(
            frame.system().fields(),
            |i, t| control_value(&sel, &gains, &a, t, 2)[i],
            &x0,
            gains.epsilon,
            2,
            gains.epsilon / 4.0,
        )
        .unwrap();
        let linear = &x0 - (&x0 - &xi0) * (gains.epsilon * gains.gamma1);
        let from_series = &pred - &linear;
        let integrated = stabilizer_step_remainder(&frame, &gains, &x0, &xi0, 1e-12).unwrap();
        let closed = second_order_remainder(&frame, &gains, &x0, &xi0).unwrap();
        assert!((&from_series - &integrated).amax() < 1e-9, "{from_series} vs {integrated}");
        assert!((&closed - &integrated).amax() < 1e-9, "{closed} vs {integrated}");
    }

    #[test]
    fn diagonal_start_has_no_remainder() {
        let frame = FrameMatrix::new(ControlSystem::brockett(), BracketSelection::brockett(4)).unwrap();
        let x0 = v(&[0.4, 0.1, -0.3]);
        let r = remainder_scaling(&frame, 1.0, &x0, &x0, &[0.1, 0.05, 0.025], 1e-12).unwrap();
        assert!(r.norms.iter().all(|n| *n == 0.0));
        assert!(r.inconclusive);
    }

    #[test]
    fn ladder_must_be_geometric() {
        let frame = FrameMatrix::new(ControlSystem::brockett(), BracketSelection::brockett(4)).unwrap();
        let x0 = v(&[0.0; 3]);
        assert!(remainder_scaling(&frame, 1.0, &x0, &x0, &[0.1, 0.05], 1e-10).is_err());
        assert!(remainder_scaling(&frame, 1.0, &x0, &x0, &[0.1, 0.05, 0.01], 1e-10).is_err());
    }
}
