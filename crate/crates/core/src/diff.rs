//! Central finite differences used wherever analytic derivatives are not supplied.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default Jacobian step: `max(1e-6, 1e-8 * (1 + |x|))`.
pub fn jacobian_step(x: &DVector<f64>) -> f64 {
    (1e-8 * (1.0 + x.norm())).max(1e-6)
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
///
/// The divisor is the step actually realised in floating point, so the
/// stencil stays consistent when `x_k + h` rounds.
pub fn jacobian_with_step<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut probe = x.clone();
    for k in 0..n {
        let xk = x[k];
        let (hi, lo) = (xk + h, xk - h);
        let width = hi - lo;
        if width <= 0.0 || !width.is_finite() {
            return Err(Error::StepUnderflow {
                point: x.iter().copied().collect(),
            });
        }
        probe[k] = hi;
        let fp = f(&probe);
        probe[k] = lo;
        let fm = f(&probe);
        probe[k] = xk;
        columns.push((fp - fm) / width);
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |i, j| columns[j][i]))
}

/// Central-difference Jacobian with the default scale-aware step.
pub fn jacobian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    jacobian_with_step(f, x, jacobian_step(x))
}

pub fn gradient<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let jac = jacobian_with_step(|p| DVector::from_element(1, f(p)), x, h)?;
    Ok(jac.row(0).transpose())
}

/// Five-point stencil for a scalar derivative, truncation error `O(h^4)`.
pub fn derivative<F>(f: F, z: f64, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    (f(z - 2.0 * h) - 8.0 * f(z - h) + 8.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h)
}
