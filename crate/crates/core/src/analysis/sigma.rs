use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::diff;
use crate::error::{Error, Result};
use crate::system::{DomainBox, NESTED_STEP};

pub const SIGMA_SAFETY: f64 = 1.05;

/// Constants of the quadratic-like cost hypotheses
///
/// ```text
/// s11 |x - x*|^2 <= J - J* <= s12 |x - x*|^2
/// s21 (J - J*)   <= |grad J|^2 <= s22 (J - J*)
/// |Hess J| <= s3
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaBounds {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma21: f64,
    pub sigma22: f64,
    pub sigma3: f64,
    pub x_star: Vec<f64>,
    pub j_star: f64,
}

impl SigmaBounds {
    /// Exact constants of `scale * |x - x*|^2 + j_star`.
    pub fn quadratic(scale: f64, x_star: Vec<f64>, j_star: f64) -> Self {
        Self {
            sigma11: scale,
            sigma12: scale,
            sigma21: 4.0 * scale,
            sigma22: 4.0 * scale,
            sigma3: 2.0 * scale,
            x_star,
            j_star,
        }
    }

    /// Lower constants divided and upper constants multiplied by `factor`.
    pub fn with_safety(&self, factor: f64) -> Self {
        Self {
            sigma11: self.sigma11 / factor,
            sigma12: self.sigma12 * factor,
            sigma21: self.sigma21 / factor,
            sigma22: self.sigma22 * factor,
            sigma3: self.sigma3 * factor,
            x_star: self.x_star.clone(),
            j_star: self.j_star,
        }
    }

    pub fn x_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

/// Tightest constants over `samples` random points of `domain` (no safety factor).
pub fn estimate_sigma_raw(
    cost: &Cost,
    domain: &DomainBox,
    x_star: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<SigmaBounds> {
    let j_star = cost.eval(x_star);
    let points = domain.sample(samples, seed)?;
    let mut lo1 = f64::INFINITY;
    let mut hi1 = 0.0f64;
    let mut lo2 = f64::INFINITY;
    let mut hi2 = 0.0f64;
    let mut s3 = 0.0f64;
    let mut used = 0;
    for x in &points {
        let d2 = (x - x_star).norm_squared();
        if d2 < 1e-16 {
            continue;
        }
        let w = cost.eval(x) - j_star;
        if !(w > 0.0) {
            return Err(Error::HypothesisViolation(format!(
                "J(x) - J* = {w} is not positive at x = {:?}",
                x.as_slice()
            )));
        }
        let g = cost.gradient(x)?;
        let r1 = w / d2;
        let r2 = g.norm_squared() / w;
        lo1 = lo1.min(r1);
        hi1 = hi1.max(r1);
        lo2 = lo2.min(r2);
        hi2 = hi2.max(r2);
        let h = NESTED_STEP * (1.0 + x.norm());
        let hess = diff::jacobian_with_step(|p| cost.gradient(p).unwrap_or_else(|_| p * f64::NAN), x, h)?;
        let sym = (&hess + hess.transpose()) * 0.5;
        s3 = s3.max(sym.symmetric_eigenvalues().amax());
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidConfig("no usable sample points away from x*".into()));
    }
    if !(lo1 > 0.0 && lo2 > 0.0) || hi1 < lo1 || hi2 < lo2 {
        return Err(Error::HypothesisViolation(format!(
            "degenerate ratios: J-J* in [{lo1}, {hi1}] |x-x*|^2, |grad|^2 in [{lo2}, {hi2}] (J-J*)"
        )));
    }
    Ok(SigmaBounds {
        sigma11: lo1,
        sigma12: hi1,
        sigma21: lo2,
        sigma22: hi2,
        sigma3: s3,
        x_star: x_star.iter().copied().collect(),
        j_star,
    })
}

/// [`estimate_sigma_raw`] with the conservative safety factor applied.
pub fn estimate_sigma(
    cost: &Cost,
    domain: &DomainBox,
    x_star: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<SigmaBounds> {
    Ok(estimate_sigma_raw(cost, domain, x_star, samples, seed)?.with_safety(SIGMA_SAFETY))
}
