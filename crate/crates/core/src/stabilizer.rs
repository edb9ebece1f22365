//! Model-based fast-oscillating stabilizer.
//!
//! Coefficients `a(x, xi) = -gamma1 F^{-1}(x) (x - xi)` are split into the `S1`
//! block (applied as constant inputs) and the `S2` block (each entry drives one
//! sine/cosine pair at frequency `2 pi kappa / eps` whose Lie bracket reproduces
//! the bracket column of the frame).

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{BracketSelection, FrameMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizerGains {
    pub gamma1: f64,
    /// Sampling period of the hold and base period of the oscillations.
    pub epsilon: f64,
}

impl StabilizerGains {
    pub fn new(gamma1: f64, epsilon: f64) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma1 must be positive, got {gamma1}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { gamma1, epsilon })
    }

    /// `eps * gamma1 < 1`: the per-interval linear contraction `1 - eps gamma1` of the
    /// tracking error stays in `(0, 1)`.
    pub fn is_contractive(&self) -> bool {
        self.epsilon * self.gamma1 < 1.0
    }
}

/// Coefficients in frame-column order: `S1` block then `S2` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(sel: &BracketSelection) -> Self {
        Self {
            s1: vec![0.0; sel.s1.len()],
            s2: vec![0.0; sel.s2.len()],
        }
    }

    pub fn from_vector(sel: &BracketSelection, a: &DVector<f64>) -> Self {
        let k = sel.s1.len();
        Self {
            s1: a.iter().take(k).copied().collect(),
            s2: a.iter().skip(k).copied().collect(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.s1.len() + self.s2.len(), self.s1.iter().chain(&self.s2).copied())
    }

    pub fn norm(&self) -> f64 {
        self.s1.iter().chain(&self.s2).map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.s1.iter().chain(&self.s2).all(|a| a.is_finite())
    }
}

/// `a(x, xi) = -gamma1 F^{-1}(x) (x - xi)`.
pub fn coefficients(
    frame: &FrameMatrix,
    gains: &StabilizerGains,
    x: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<CoefficientVector> {
    let a = frame.solve(x, &(x - xi))? * -gains.gamma1;
    Ok(CoefficientVector::from_vector(frame.selection(), &a))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Steady (`S1`) and oscillatory (`S2`) parts of the control at time `t`.
pub fn control_parts(
    sel: &BracketSelection,
    gains: &StabilizerGains,
    coeffs: &CoefficientVector,
    t: f64,
    m: usize,
) -> (DVector<f64>, DVector<f64>) {
    let mut steady = DVector::zeros(m);
    for (&i, &a) in sel.s1.iter().zip(&coeffs.s1) {
        steady[i] += a;
    }
    let mut osc = DVector::zeros(m);
    let scale = (4.0 * PI / gains.epsilon).sqrt();
    for ((&(i1, i2), &kappa), &a) in sel.s2.iter().zip(&sel.kappa).zip(&coeffs.s2) {
        if a == 0.0 {
            continue;
        }
        let kappa = f64::from(kappa);
        let amp = scale * (kappa * a.abs()).sqrt();
        let phase = 2.0 * PI * kappa * t / gains.epsilon;
        osc[i1] += amp * sign(a) * phase.cos();
        osc[i2] += amp * phase.sin();
    }
    (steady, osc)
}

/// The control `u(t)` for coefficients frozen at the last sample instant.
pub fn control_value(
    sel: &BracketSelection,
    gains: &StabilizerGains,
    coeffs: &CoefficientVector,
    t: f64,
    m: usize,
) -> DVector<f64> {
    let (steady, osc) = control_parts(sel, gains, coeffs, t, m);
    steady + osc
}

/// Peak of `sum_i |oscillatory part of u_i|` bounded termwise: `sqrt(4 pi / eps) * sum sqrt(kappa |a|)`.
pub fn oscillation_amplitude(sel: &BracketSelection, gains: &StabilizerGains, coeffs: &CoefficientVector) -> f64 {
    let scale = (4.0 * PI / gains.epsilon).sqrt();
    sel.kappa
        .iter()
        .zip(&coeffs.s2)
        .map(|(k, a)| scale * (f64::from(*k) * a.abs()).sqrt())
        .sum()
}

/// Sample instants `0, eps, 2 eps, ...` not exceeding `horizon`.
pub fn hold_schedule(gains: &StabilizerGains, horizon: f64) -> Vec<f64> {
    let eps = gains.epsilon;
    let last = (horizon / eps + 1e-9).floor() as usize;
    (0..=last).map(|j| j as f64 * eps).collect()
}

/// Bundles a frame with gains for repeated use.
#[derive(Debug, Clone)]
pub struct Stabilizer {
    pub frame: FrameMatrix,
    pub gains: StabilizerGains,
}

impl Stabilizer {
    pub fn new(frame: FrameMatrix, gains: StabilizerGains) -> Self {
        Self { frame, gains }
    }

    pub fn coefficients(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<CoefficientVector> {
        coefficients(&self.frame, &self.gains, x, xi)
    }

    pub fn control(&self, coeffs: &CoefficientVector, t: f64) -> DVector<f64> {
        control_value(self.frame.selection(), &self.gains, coeffs, t, self.frame.system().m())
    }
}
