//! Model-free extremum seeking layer: generating-function pairs, dither signals and
//! the right-hand side `xi' = g(y, t)`.
//!
//! A pair is written `(g_sin, g_cos) = (r sin(phi), r cos(phi))` with `r^2 phi' = gamma2`,
//! which makes `g_cos' g_sin - g_sin' g_cos = -gamma2` for every `z`. Coordinate `j`
//! of `xi` receives `g_sin(y) v_j(t) + g_cos(y) v_{j+n}(t)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::diff;
use crate::error::{Error, Result};
use crate::system::{FieldSet, VectorField};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative step used for numerical derivatives of `r` and `phi`.
const PAIR_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `(z, 1)`.
    Linear,
    /// `(sin z, cos z)`.
    Bounded,
    /// `sqrt(z) (sin ln z, cos ln z)`.
    SqrtLog,
    /// `r = sqrt((1 - e^-z) / (1 + e^z))`, `phi = e^z + 2 ln(e^z - 1)`.
    Gze18,
    /// `r = sqrt(tanh(z / 2))`, `phi = 2 ln(e^z - 1) - z`, vanishing at `z = 0`.
    TanhVanishing,
}

impl PairKind {
    pub const ALL: [PairKind; 5] = [
        PairKind::Linear,
        PairKind::Bounded,
        PairKind::SqrtLog,
        PairKind::Gze18,
        PairKind::TanhVanishing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairKind::Linear => "linear",
            PairKind::Bounded => "bounded",
            PairKind::SqrtLog => "sqrt_log",
            PairKind::Gze18 => "gze18",
            PairKind::TanhVanishing => "tanh_vanishing",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownPair(name.to_string()))
    }

    fn validity(self) -> Validity {
        match self {
            PairKind::Linear | PairKind::Bounded => Validity::All,
            PairKind::SqrtLog => Validity::Positive,
            PairKind::Gze18 | PairKind::TanhVanishing => Validity::NonNegative,
        }
    }
}

/// Where a pair is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    All,
    /// `z > 0`.
    Positive,
    /// `z > 0`, extended by continuity with value zero at `z = 0`.
    NonNegative,
}

impl Validity {
    fn admits(self, z: f64) -> bool {
        match self {
            Validity::All => z.is_finite(),
            Validity::Positive => z > 0.0 && z.is_finite(),
            Validity::NonNegative => z >= 0.0 && z.is_finite(),
        }
    }

    fn is_interior(self, z: f64) -> bool {
        match self {
            Validity::All => z.is_finite(),
            Validity::Positive | Validity::NonNegative => z > 0.0 && z.is_finite(),
        }
    }
}

/// `ln(e^z - 1)` without overflow for large `z` or cancellation for small `z`.
fn ln_expm1(z: f64) -> f64 {
    if z > 30.0 {
        z + (-(-z).exp()).ln_1p()
    } else {
        z.exp_m1().ln()
    }
}

#[derive(Clone)]
enum Generator {
    Library(PairKind),
    Custom {
        name: String,
        r: ScalarFn,
        phi: ScalarFn,
        validity: Validity,
    },
}

/// A generating pair with its gain `gamma2`.
#[derive(Clone)]
pub struct GeneratingPair {
    generator: Generator,
    gamma2: f64,
    zero_at: Option<f64>,
}

impl fmt::Debug for GeneratingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratingPair")
            .field("name", &self.name())
            .field("gamma2", &self.gamma2)
            .field("zero_at", &self.zero_at)
            .finish()
    }
}

/// Library pair by name, with `r` scaled by `sqrt(gamma2)`.
pub fn pair_library(name: &str, gamma2: f64) -> Result<GeneratingPair> {
    GeneratingPair::library(PairKind::parse(name)?, gamma2)
}

impl GeneratingPair {
    pub fn library(kind: PairKind, gamma2: f64) -> Result<Self> {
        check_gamma2(gamma2)?;
        let zero_at = match kind {
            PairKind::Gze18 | PairKind::TanhVanishing => Some(0.0),
            _ => None,
        };
        Ok(Self {
            generator: Generator::Library(kind),
            gamma2,
            zero_at,
        })
    }

    /// A user pair. `r` and `phi` must already satisfy `r^2 phi' = gamma2`;
    /// [`GeneratingPair::identity_residual`] checks it numerically.
    pub fn custom(
        name: impl Into<String>,
        r: ScalarFn,
        phi: ScalarFn,
        gamma2: f64,
        validity: Validity,
        zero_at: Option<f64>,
    ) -> Result<Self> {
        check_gamma2(gamma2)?;
        if let Some(z0) = zero_at {
            if r(z0) != 0.0 {
                return Err(Error::InvalidConfig(format!("r({z0}) must vanish for zero_at")));
            }
        }
        Ok(Self {
            generator: Generator::Custom {
                name: name.into(),
                r,
                phi,
                validity,
            },
            gamma2,
            zero_at,
        })
    }

    pub fn name(&self) -> &str {
        match &self.generator {
            Generator::Library(k) => k.name(),
            Generator::Custom { name, .. } => name,
        }
    }

    pub fn kind(&self) -> Option<PairKind> {
        match self.generator {
            Generator::Library(k) => Some(k),
            Generator::Custom { .. } => None,
        }
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn zero_at(&self) -> Option<f64> {
        self.zero_at
    }

    pub fn validity(&self) -> Validity {
        match &self.generator {
            Generator::Library(k) => k.validity(),
            Generator::Custom { validity, .. } => *validity,
        }
    }

    /// Amplitude `r(z)`, including the `sqrt(gamma2)` scaling.
    pub fn r(&self, z: f64) -> f64 {
        let s = self.gamma2.sqrt();
        match &self.generator {
            Generator::Library(kind) => {
                s * match kind {
                    PairKind::Linear => (1.0 + z * z).sqrt(),
                    PairKind::Bounded => 1.0,
                    PairKind::SqrtLog => z.sqrt(),
                    PairKind::Gze18 => (-(-z).exp_m1() / (1.0 + z.exp())).sqrt(),
                    PairKind::TanhVanishing => (0.5 * z).tanh().sqrt(),
                }
            }
            Generator::Custom { r, .. } => r(z),
        }
    }

    pub fn phi(&self, z: f64) -> f64 {
        match &self.generator {
            Generator::Library(kind) => match kind {
                PairKind::Linear => z.atan(),
                PairKind::Bounded => z,
                PairKind::SqrtLog => z.ln(),
                PairKind::Gze18 => z.exp() + 2.0 * ln_expm1(z),
                PairKind::TanhVanishing => 2.0 * ln_expm1(z) - z,
            },
            Generator::Custom { phi, .. } => phi(z),
        }
    }

    /// `(g_sin(z), g_cos(z))`; errors outside the validity range.
    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        if !self.validity().admits(z) {
            return Err(Error::PairDomain {
                pair: self.name().to_string(),
                value: z,
            });
        }
        if self.zero_at == Some(z) {
            return Ok((0.0, 0.0));
        }
        if let Generator::Library(PairKind::Linear) = self.generator {
            let s = self.gamma2.sqrt();
            return Ok((s * z, s));
        }
        let r = self.r(z);
        let (sin, cos) = self.phi(z).sin_cos();
        Ok((r * sin, r * cos))
    }

    fn step(&self, z: f64) -> f64 {
        PAIR_STEP * z.abs().max(PAIR_STEP)
    }

    /// `r(z)^2 phi'(z) - gamma2`, with `phi'` from a five-point stencil.
    pub fn identity_residual(&self, z: f64) -> Result<f64> {
        if !self.validity().is_interior(z) {
            return Err(Error::PairDomain {
                pair: self.name().to_string(),
                value: z,
            });
        }
        let dphi = diff::derivative(|s| self.phi(s), z, self.step(z));
        Ok(self.r(z).powi(2) * dphi - self.gamma2)
    }

    /// `g_cos'(z) g_sin(z) - g_sin'(z) g_cos(z)`, which should equal `-gamma2`.
    pub fn bracket_gain(&self, z: f64) -> Result<f64> {
        if !self.validity().is_interior(z) {
            return Err(Error::PairDomain {
                pair: self.name().to_string(),
                value: z,
            });
        }
        // g oscillates at the local phase rate phi'(z); keep h phi' near 1e-2
        let h0 = self.step(z);
        let rate = diff::derivative(|s| self.phi(s), z, h0).abs();
        let h = if rate > 0.0 { h0.min(1e-2 / rate) } else { h0 };
        let (gs, gc) = self.eval(z)?;
        let d_sin = diff::derivative(|s| self.eval(s).map_or(f64::NAN, |g| g.0), z, h);
        let d_cos = diff::derivative(|s| self.eval(s).map_or(f64::NAN, |g| g.1), z, h);
        Ok(d_cos * gs - d_sin * gc)
    }

    /// Log-spaced check grid over `[1e-3, 10]`, mirrored to negative `z` when the
    /// pair lives on all of `R`.
    pub fn check_grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (1e-3f64.ln(), 10f64.ln());
        match self.validity() {
            Validity::All => {
                let half = points / 2;
                let pos: Vec<f64> = (0..half)
                    .map(|i| (lo + (hi - lo) * i as f64 / (half.max(2) - 1) as f64).exp())
                    .collect();
                pos.iter().rev().map(|z| -z).chain(pos.iter().copied()).collect()
            }
            _ => (0..points)
                .map(|i| (lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64).exp())
                .collect(),
        }
    }
}

fn check_gamma2(gamma2: f64) -> Result<()> {
    if gamma2 > 0.0 && gamma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("gamma2 must be positive, got {gamma2}")))
    }
}

/// Distinct integer frequencies `k_j`, dither period `mu` and slowing factor `eta >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherSchedule {
    pub k: Vec<u32>,
    pub mu: f64,
    #[serde(default = "unit_eta")]
    pub eta: f64,
}

fn unit_eta() -> f64 {
    1.0
}

impl DitherSchedule {
    pub fn new(k: Vec<u32>, mu: f64, eta: f64) -> Result<Self> {
        if k.is_empty() || k.contains(&0) {
            return Err(Error::InvalidConfig("dither frequencies must be >= 1".into()));
        }
        for (i, ki) in k.iter().enumerate() {
            if k[i + 1..].contains(ki) {
                return Err(Error::InvalidConfig(format!("dither frequency {ki} repeated")));
            }
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu must be positive, got {mu}")));
        }
        if !(eta >= 1.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be >= 1, got {eta}")));
        }
        Ok(Self { k, mu, eta })
    }

    /// `k_j = j` for `j = 1..=n`.
    pub fn with_default_k(n: usize, mu: f64) -> Result<Self> {
        Self::new((1..=n as u32).collect(), mu, 1.0)
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    pub fn max_k(&self) -> u32 {
        self.k.iter().copied().max().unwrap_or(1)
    }

    /// `sqrt(4 pi k_j / mu)` for the (unslowed) dither `j` or `j + n`.
    pub fn amplitude(&self, coordinate: usize) -> f64 {
        (4.0 * PI * f64::from(self.k[coordinate]) / self.mu).sqrt()
    }

    /// The common period of all dithers, `eta * mu`.
    pub fn period(&self) -> f64 {
        self.eta * self.mu
    }

    /// Dither value for `j in 0..2n`; `j < n` is the cosine family, the rest the sine family.
    pub fn dither(&self, j: usize, t: f64) -> Result<f64> {
        let n = self.n();
        if j >= 2 * n {
            return Err(Error::IndexOutOfRange { index: j, len: 2 * n });
        }
        let (c, sine) = if j < n { (j, false) } else { (j - n, true) };
        let (cos, sin) = self.pair_values(c, t);
        Ok(if sine { sin } else { cos })
    }

    /// `(v_c(t), v_{c+n}(t))` for coordinate `c`, including the `eta` slowing.
    pub fn pair_values(&self, c: usize, t: f64) -> (f64, f64) {
        let tau = t / self.eta;
        let amp = self.amplitude(c) / self.eta;
        let (s, co) = (2.0 * PI * f64::from(self.k[c]) * tau / self.mu).sin_cos();
        (amp * co, amp * s)
    }
}

/// `c_w = 2 sum_j sqrt(2 pi k_j)`, so that `sum_j |v_j(t)| <= c_w / sqrt(mu)`.
pub fn dither_sum_constant(k: &[u32]) -> f64 {
    2.0 * k.iter().map(|kj| (2.0 * PI * f64::from(*kj)).sqrt()).sum::<f64>()
}

/// `xi'(t) = g(y, t)` for a measured cost value `y`.
pub fn seeker_rhs(pair: &GeneratingPair, sched: &DitherSchedule, y: f64, t: f64) -> Result<DVector<f64>> {
    let (gs, gc) = pair.eval(y)?;
    Ok(DVector::from_fn(sched.n(), |c, _| {
        let (vc, vs) = sched.pair_values(c, t);
        gs * vc + gc * vs
    }))
}

/// The `2n` seeker fields `h_j(xi) = g_j(J(xi)) e_j`: first the `g_sin` family, then `g_cos`.
pub fn seeker_fields(pair: &GeneratingPair, cost: &Cost, n: usize) -> FieldSet {
    let mut fields: Vec<VectorField> = Vec::with_capacity(2 * n);
    for family in 0..2 {
        for c in 0..n {
            let pair = pair.clone();
            let cost = cost.clone();
            fields.push(Arc::new(move |x: &DVector<f64>| {
                let g = pair.eval(cost.eval(x)).unwrap_or((f64::NAN, f64::NAN));
                let mut e = DVector::zeros(x.len());
                e[c] = if family == 0 { g.0 } else { g.1 };
                e
            }));
        }
    }
    FieldSet::new(n, fields)
}
