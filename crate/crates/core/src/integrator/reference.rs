//! Adaptive Dormand-Prince 5(4) used as a high-accuracy oracle.

use nalgebra::DVector;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 5_000_000;

/// Integrates `x' = rhs(t, x)` from `t0` to `t1` with mixed absolute/relative local
/// tolerance `tol`. The right-hand side may fail; its error is passed through.
pub fn try_reference_integrate<F>(mut rhs: F, x0: &DVector<f64>, t0: f64, t1: f64, tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(t1 > t0) {
        return Err(Error::InvalidConfig(format!("reference integration needs t1 > t0, got [{t0}, {t1}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let mut t = t0;
    let mut x = x0.clone();
    let span = t1 - t0;
    let mut h = (span * 1e-3).min(span);
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); 7];
    k[0] = rhs(t, &x)?;
    let mut steps = 0;
    while t < t1 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::StepCollapse { time: t });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut stage = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    stage.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k[s] = rhs(t + C[s] * h, &stage)?;
        }
        let mut high = x.clone();
        let mut err = DVector::zeros(x.len());
        for s in 0..7 {
            high.axpy(h * B[s], &k[s], 1.0);
            err.axpy(h * (B[s] - B_LOW[s]), &k[s], 1.0);
        }
        let scaled = err
            .iter()
            .zip(x.iter().zip(high.iter()))
            .map(|(e, (a, b))| (e / (tol * (1.0 + a.abs().max(b.abs())))).powi(2))
            .sum::<f64>();
        let norm = (scaled / x.len().max(1) as f64).sqrt();
        if !norm.is_finite() || !high.iter().all(|v| v.is_finite()) {
            if h <= f64::EPSILON * t.abs().max(span) {
                return Err(Error::NumericalBlowup { time: t });
            }
            h *= 0.2;
            continue;
        }
        if norm <= 1.0 {
            t = if last { t1 } else { t + h };
            x = high;
            // FSAL: the last stage is the derivative at the accepted point.
            k[0] = k[6].clone();
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h <= 16.0 * f64::EPSILON * t.abs().max(span) {
            return Err(Error::StepCollapse { time: t });
        }
    }
    Ok(x)
}

/// Infallible right-hand side convenience wrapper.
pub fn reference_integrate<F>(mut rhs: F, x0: &DVector<f64>, t0: f64, t1: f64, tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    try_reference_integrate(|t, x| Ok(rhs(t, x)), x0, t0, t1, tol)
}
