//! Driftless control-affine plants `x' = sum_i u_i f_i(x)`, their Lie brackets and
//! the frame matrix built from a bracket selection.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff;
use crate::error::{Error, Result};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FieldJacobian = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Condition number above which a frame matrix counts as singular.
pub const DEFAULT_COND_TOL: f64 = 1e8;
/// Inflation applied to the sampled maximum of `|F^{-1}(x)|`.
pub const ALPHA_SAFETY: f64 = 1.1;
/// Step for the outer difference when a first Lie derivative is itself differenced.
pub const NESTED_STEP: f64 = 1e-4;
/// Finite-difference step for first derivatives of fields without analytic Jacobians.
pub const FIRST_STEP: f64 = 1e-5;

/// An ordered family of vector fields on `R^n`, optionally with analytic Jacobians.
#[derive(Clone)]
pub struct FieldSet {
    dim: usize,
    fields: Vec<VectorField>,
    jacobians: Option<Vec<FieldJacobian>>,
}

impl fmt::Debug for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSet")
            .field("dim", &self.dim)
            .field("fields", &self.fields.len())
            .field("analytic_jacobians", &self.jacobians.is_some())
            .finish()
    }
}

impl FieldSet {
    pub fn new(dim: usize, fields: Vec<VectorField>) -> Self {
        Self {
            dim,
            fields,
            jacobians: None,
        }
    }

    pub fn with_jacobians(mut self, jacobians: Vec<FieldJacobian>) -> Result<Self> {
        if jacobians.len() != self.fields.len() {
            return Err(Error::InvalidConfig(format!(
                "{} jacobians supplied for {} fields",
                jacobians.len(),
                self.fields.len()
            )));
        }
        self.jacobians = Some(jacobians);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn has_jacobians(&self) -> bool {
        self.jacobians.is_some()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.fields.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.fields.len(),
            })
        }
    }

    pub fn eval(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(i)?;
        Ok((self.fields[i])(x))
    }

    /// `df_i/dx` at `x`, analytic when available, central differences otherwise.
    pub fn jacobian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_index(i)?;
        match &self.jacobians {
            Some(j) => Ok((j[i])(x)),
            None => diff::jacobian_with_step(|p| (self.fields[i])(p), x, FIRST_STEP * (1.0 + x.norm())),
        }
    }

    /// `L_{f_along} f_of (x) = (df_of/dx) f_along`.
    pub fn lie_derivative(&self, along: usize, of: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let jac = self.jacobian(of, x)?;
        Ok(jac * self.eval(along, x)?)
    }

    /// `[f_i, f_j](x) = (df_j/dx) f_i - (df_i/dx) f_j`.
    pub fn lie_bracket(&self, i: usize, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if i == j {
            self.check_index(i)?;
            return Ok(DVector::zeros(self.dim));
        }
        let fi = self.eval(i, x)?;
        let fj = self.eval(j, x)?;
        Ok(self.jacobian(j, x)? * fi - self.jacobian(i, x)? * fj)
    }

    /// `L_{f_c} L_{f_b} f_a (x)`; the outer derivative is always a central difference.
    pub fn second_lie_derivative(
        &self,
        c: usize,
        b: usize,
        a: usize,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_index(a)?;
        self.check_index(b)?;
        let inner = |p: &DVector<f64>| {
            self.lie_derivative(b, a, p)
                .unwrap_or_else(|_| DVector::from_element(self.dim, f64::NAN))
        };
        let h = NESTED_STEP * (1.0 + x.norm());
        let jac = diff::jacobian_with_step(inner, x, h)?;
        Ok(jac * self.eval(c, x)?)
    }
}

/// Axis-aligned box; bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidConfig("box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidConfig(format!(
                "box lower bound exceeds upper bound: {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// `[center_k - half, center_k + half]` in every coordinate.
    pub fn cube(center: &[f64], half: f64) -> Self {
        Self {
            lower: center.iter().map(|c| c - half).collect(),
            upper: center.iter().map(|c| c + half).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn is_subset_of(&self, other: &DomainBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|k| other.lower[k] <= self.lower[k] && self.upper[k] <= other.upper[k])
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => *l,
                (false, true) => *u,
                (false, false) => 0.0,
            }),
        )
    }

    /// Euclidean distance from an interior point to the boundary.
    pub fn distance_to_boundary(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|k| (x[k] - self.lower[k]).min(self.upper[k] - x[k]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Tensor grid with `per_axis` points per coordinate (endpoints included).
    /// One point per axis degenerates to the centre.
    pub fn grid(&self, per_axis: usize) -> Result<Vec<DVector<f64>>> {
        if !self.is_bounded() {
            return Err(Error::InvalidConfig("cannot grid an unbounded box".into()));
        }
        let per_axis = per_axis.max(1);
        let n = self.dim();
        let axis = |k: usize, i: usize| {
            if per_axis == 1 {
                0.5 * (self.lower[k] + self.upper[k])
            } else {
                self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (per_axis - 1) as f64
            }
        };
        let total = per_axis.pow(n as u32);
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let p = DVector::from_fn(n, |k, _| {
                let i = rem % per_axis;
                rem /= per_axis;
                axis(k, i)
            });
            points.push(p);
        }
        Ok(points)
    }

    /// Largest tensor grid with at most `samples` points.
    pub fn grid_with_budget(&self, samples: usize) -> Result<Vec<DVector<f64>>> {
        let n = self.dim() as u32;
        let mut q = 1usize;
        while (q + 1).checked_pow(n).is_some_and(|t| t <= samples) {
            q += 1;
        }
        self.grid(q)
    }

    /// Uniform random cloud, reproducible from `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if !self.is_bounded() {
            return Err(Error::InvalidConfig("cannot sample an unbounded box".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                DVector::from_fn(self.dim(), |k, _| {
                    let t: f64 = rng.random();
                    self.lower[k] + t * (self.upper[k] - self.lower[k])
                })
            })
            .collect())
    }
}

/// A driftless control-affine plant with `m <= n` control fields on a box domain.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    name: String,
    fields: FieldSet,
    domain: DomainBox,
}

impl ControlSystem {
    pub fn new(name: impl Into<String>, fields: FieldSet, domain: DomainBox) -> Result<Self> {
        let n = fields.dim();
        if fields.is_empty() || fields.len() > n {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= m <= n control fields, got m = {} for n = {n}",
                fields.len()
            )));
        }
        if domain.dim() != n {
            return Err(Error::InvalidConfig(format!(
                "domain has dimension {} but the state has dimension {n}",
                domain.dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            fields,
            domain,
        })
    }

    /// `x1' = u1, x2' = u2, x3' = u1 x2 - u2 x1` on all of `R^3`.
    pub fn brockett() -> Self {
        let f1: VectorField = Arc::new(|x| DVector::from_vec(vec![1.0, 0.0, x[1]]));
        let f2: VectorField = Arc::new(|x| DVector::from_vec(vec![0.0, 1.0, -x[0]]));
        let j1: FieldJacobian = Arc::new(|_| {
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        });
        let j2: FieldJacobian = Arc::new(|_| {
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0])
        });
        let fields = FieldSet::new(3, vec![f1, f2])
            .with_jacobians(vec![j1, j2])
            .expect("two jacobians for two fields");
        Self::new("brockett", fields, DomainBox::unbounded(3)).expect("valid brockett system")
    }

    /// Built-in systems by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "brockett" => Ok(Self::brockett()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.fields.dim()
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &FieldSet {
        &self.fields
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.n() {
            return Err(Error::InvalidConfig("domain dimension mismatch".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn check_in_domain(&self, x: &DVector<f64>) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                point: x.iter().copied().collect(),
            })
        }
    }

    pub fn field(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_in_domain(x)?;
        self.fields.eval(i, x)
    }

    /// `sum_i u_i f_i(x)`, without the domain check (hot path of the integrator).
    pub fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        for (i, ui) in u.iter().enumerate() {
            if *ui != 0.0 {
                v.axpy(*ui, &(self.fields.fields[i])(x), 1.0);
            }
        }
        v
    }
}

/// Lie bracket `[f_i, f_j](x)` of two control fields (0-based indices).
pub fn lie_bracket(sys: &ControlSystem, i: usize, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    sys.check_in_domain(x)?;
    sys.fields.lie_bracket(i, j, x)
}

/// Index sets `S1`, `S2` and the distinct frequency labels attached to `S2`.
///
/// Indices are 0-based. Frame columns are ordered `S1` first, then `S2`, each in
/// declaration order, and coefficient vectors follow the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketSelection {
    pub s1: Vec<usize>,
    pub s2: Vec<(usize, usize)>,
    pub kappa: Vec<u32>,
}

impl BracketSelection {
    pub fn new(s1: Vec<usize>, s2: Vec<(usize, usize)>, kappa: Vec<u32>) -> Result<Self> {
        if kappa.len() != s2.len() {
            return Err(Error::InvalidConfig(format!(
                "{} frequency labels for {} bracket pairs",
                kappa.len(),
                s2.len()
            )));
        }
        if kappa.contains(&0) {
            return Err(Error::InvalidConfig("frequency labels must be >= 1".into()));
        }
        for (a, ka) in kappa.iter().enumerate() {
            if kappa[a + 1..].contains(ka) {
                return Err(Error::InvalidConfig(format!(
                    "frequency label {ka} used twice; labels must be distinct"
                )));
            }
        }
        Ok(Self { s1, s2, kappa })
    }

    /// Labels `1..=|S2|`.
    pub fn with_default_kappa(s1: Vec<usize>, s2: Vec<(usize, usize)>) -> Self {
        let kappa = (1..=s2.len() as u32).collect();
        Self { s1, s2, kappa }
    }

    /// `S1 = {f1, f2}`, `S2 = {(1,2)}` with the given label.
    pub fn brockett(kappa: u32) -> Self {
        Self::new(vec![0, 1], vec![(0, 1)], vec![kappa]).expect("single positive label")
    }

    pub fn dim(&self) -> usize {
        self.s1.len() + self.s2.len()
    }

    pub fn max_kappa(&self) -> u32 {
        self.kappa.iter().copied().max().unwrap_or(0)
    }

    pub fn validate_for(&self, sys: &ControlSystem) -> Result<()> {
        if self.dim() != sys.n() {
            return Err(Error::InvalidConfig(format!(
                "|S1| + |S2| = {} but n = {}",
                self.dim(),
                sys.n()
            )));
        }
        let m = sys.m();
        let bad = self
            .s1
            .iter()
            .copied()
            .chain(self.s2.iter().flat_map(|(a, b)| [*a, *b]))
            .find(|i| *i >= m);
        if let Some(index) = bad {
            return Err(Error::IndexOutOfRange { index, len: m });
        }
        Ok(())
    }
}

/// Frame columns at `x`, without any conditioning check.
pub fn assemble_frame(sys: &ControlSystem, sel: &BracketSelection, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    sel.validate_for(sys)?;
    sys.check_in_domain(x)?;
    let mut cols = Vec::with_capacity(sel.dim());
    for &i in &sel.s1 {
        cols.push(sys.fields.eval(i, x)?);
    }
    for &(i, j) in &sel.s2 {
        cols.push(sys.fields.lie_bracket(i, j, x)?);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `sigma_max / sigma_min`, infinite for an exactly singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// The frame matrix `F(x)`; errors when its condition number exceeds [`DEFAULT_COND_TOL`].
pub fn frame_matrix(sys: &ControlSystem, sel: &BracketSelection, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    FrameMatrix::new(sys.clone(), sel.clone())?.at(x)
}

/// `F(x)` bound to a system and selection, with the conditioning threshold and an
/// optional uniform bound `alpha` on `|F^{-1}(x)|`.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    system: ControlSystem,
    selection: BracketSelection,
    cond_tol: f64,
    alpha: Option<f64>,
}

impl FrameMatrix {
    pub fn new(system: ControlSystem, selection: BracketSelection) -> Result<Self> {
        selection.validate_for(&system)?;
        Ok(Self {
            system,
            selection,
            cond_tol: DEFAULT_COND_TOL,
            alpha: None,
        })
    }

    pub fn with_cond_tol(mut self, cond_tol: f64) -> Self {
        self.cond_tol = cond_tol;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn system(&self) -> &ControlSystem {
        &self.system
    }

    pub fn selection(&self) -> &BracketSelection {
        &self.selection
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = assemble_frame(&self.system, &self.selection, x)?;
        let condition = condition_number(&f);
        if condition > self.cond_tol || !condition.is_finite() {
            return Err(Error::RankDeficient {
                point: x.iter().copied().collect(),
                condition,
                time: None,
            });
        }
        Ok(f)
    }

    /// Solves `F(x) a = rhs`.
    pub fn solve(&self, x: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.at(x)?;
        f.lu().solve(rhs).ok_or_else(|| Error::RankDeficient {
            point: x.iter().copied().collect(),
            condition: f64::INFINITY,
            time: None,
        })
    }

    /// Spectral norm of `F^{-1}(x)`, i.e. `1 / sigma_min(F(x))`.
    pub fn inverse_norm(&self, x: &DVector<f64>) -> Result<f64> {
        let f = self.at(x)?;
        Ok(1.0 / f.singular_values().min())
    }
}

/// Outcome of a rank-condition scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub ok: bool,
    pub worst_condition: f64,
    /// Grid points whose frame condition number exceeds the tolerance.
    pub witnesses: Vec<Vec<f64>>,
}

pub fn check_rank_condition(
    sys: &ControlSystem,
    sel: &BracketSelection,
    grid: &[DVector<f64>],
    cond_tol: f64,
) -> Result<RankReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("rank check needs a nonempty grid".into()));
    }
    let mut worst: f64 = 0.0;
    let mut witnesses = Vec::new();
    for x in grid {
        let f = assemble_frame(sys, sel, x)?;
        let cond = condition_number(&f);
        worst = worst.max(cond);
        if !(cond <= cond_tol) {
            witnesses.push(x.iter().copied().collect());
        }
    }
    Ok(RankReport {
        ok: witnesses.is_empty(),
        worst_condition: worst,
        witnesses,
    })
}

/// `1.1 * max |F^{-1}(x)|` over explicit sample points.
pub fn estimate_alpha_on(sys: &ControlSystem, sel: &BracketSelection, points: &[DVector<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("alpha estimate needs at least one sample".into()));
    }
    let frame = FrameMatrix::new(sys.clone(), sel.clone())?;
    let mut worst: f64 = 0.0;
    for x in points {
        worst = worst.max(frame.inverse_norm(x)?);
    }
    Ok(ALPHA_SAFETY * worst)
}

/// `alpha` over a tensor grid of at most `samples` points of `compact`.
pub fn estimate_alpha(
    sys: &ControlSystem,
    sel: &BracketSelection,
    compact: &DomainBox,
    samples: usize,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be >= 1".into()));
    }
    if !compact.is_bounded() {
        return Err(Error::InvalidConfig("alpha needs a compact working set".into()));
    }
    estimate_alpha_on(sys, sel, &compact.grid_with_budget(samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Brockett without analytic jacobians, forcing the finite-difference path.
    fn brockett_fd() -> ControlSystem {
        let f1: VectorField = Arc::new(|x| v(&[1.0, 0.0, x[1]]));
        let f2: VectorField = Arc::new(|x| v(&[0.0, 1.0, -x[0]]));
        ControlSystem::new("brockett-fd", FieldSet::new(3, vec![f1, f2]), DomainBox::unbounded(3)).unwrap()
    }

    #[test]
    fn brockett_bracket_is_constant() {
        let sys = ControlSystem::brockett();
        for x in [v(&[0.0, 0.0, 0.0]), v(&[1.0, -1.0, 1.0]), v(&[-2.0, 0.7, 5.0])] {
            assert_eq!(lie_bracket(&sys, 0, 1, &x).unwrap(), v(&[0.0, 0.0, -2.0]));
            let fd = lie_bracket(&brockett_fd(), 0, 1, &x).unwrap();
            assert!((fd - v(&[0.0, 0.0, -2.0])).amax() < 1e-6);
        }
    }

    #[test]
    fn bracket_diagonal_vanishes() {
        let sys = brockett_fd();
        let x = v(&[0.3, 0.1, -0.4]);
        assert_eq!(lie_bracket(&sys, 1, 1, &x).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn bracket_antisymmetry_on_samples() {
        let sys = ControlSystem::brockett();
        let fd = brockett_fd();
        for x in DomainBox::cube(&[0.0; 3], 2.0).sample(20, 7).unwrap() {
            let a = lie_bracket(&sys, 0, 1, &x).unwrap();
            let b = lie_bracket(&sys, 1, 0, &x).unwrap();
            assert_eq!(a, -b);
            let c = lie_bracket(&fd, 0, 1, &x).unwrap();
            let d = lie_bracket(&fd, 1, 0, &x).unwrap();
            assert!((c + d).amax() <= 1e-6);
        }
    }

    #[test]
    fn bracket_outside_domain_is_an_error() {
        let sys = ControlSystem::brockett()
            .with_domain(DomainBox::cube(&[0.0; 3], 1.0))
            .unwrap();
        let err = lie_bracket(&sys, 0, 1, &v(&[2.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::OutsideDomain { .. }));
    }

    #[test]
    fn frame_matrix_examples() {
        let sys = ControlSystem::brockett();
        let sel = BracketSelection::brockett(4);
        let f = frame_matrix(&sys, &sel, &v(&[1.0, -1.0, 1.0])).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, -1.0, -2.0]);
        assert_eq!(f, expect);
        let f0 = frame_matrix(&sys, &sel, &v(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(f0, DMatrix::from_diagonal(&v(&[1.0, 1.0, -2.0])));
        for x in DomainBox::cube(&[0.0; 3], 3.0).sample(10, 11).unwrap() {
            let det = frame_matrix(&sys, &sel, &x).unwrap().determinant();
            assert!((det + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_columns_match_individual_evaluations() {
        let sys = ControlSystem::brockett();
        let sel = BracketSelection::brockett(1);
        let x = v(&[0.4, -1.3, 0.2]);
        let f = frame_matrix(&sys, &sel, &x).unwrap();
        assert_eq!(f.column(0).into_owned(), sys.field(0, &x).unwrap());
        assert_eq!(f.column(1).into_owned(), sys.field(1, &x).unwrap());
        assert_eq!(f.column(2).into_owned(), lie_bracket(&sys, 0, 1, &x).unwrap());
    }

    #[test]
    fn rank_condition_holds_for_brockett() {
        let sys = ControlSystem::brockett();
        let sel = BracketSelection::brockett(1);
        let grid = DomainBox::cube(&[0.0; 3], 2.0).grid(5).unwrap();
        assert_eq!(grid.len(), 125);
        let report = check_rank_condition(&sys, &sel, &grid, DEFAULT_COND_TOL).unwrap();
        assert!(report.ok);
        assert!(report.witnesses.is_empty());
        // ok => alpha succeeds on the same grid
        assert!(estimate_alpha_on(&sys, &sel, &grid).is_ok());
    }

    #[test]
    fn dependent_fields_fail_the_rank_condition() {
        let f1: VectorField = Arc::new(|x| v(&[1.0 + x[1] * x[1], x[0]]));
        let f2: VectorField = Arc::new(|x| v(&[2.0 + 2.0 * x[1] * x[1], 2.0 * x[0]]));
        let sys = ControlSystem::new("dependent", FieldSet::new(2, vec![f1, f2]), DomainBox::unbounded(2)).unwrap();
        let sel = BracketSelection::new(vec![0, 1], vec![], vec![]).unwrap();
        let grid = DomainBox::cube(&[0.0; 2], 1.0).grid(3).unwrap();
        let report = check_rank_condition(&sys, &sel, &grid, DEFAULT_COND_TOL).unwrap();
        assert!(!report.ok);
        assert_eq!(report.witnesses.len(), grid.len());
        assert!(matches!(
            frame_matrix(&sys, &sel, &grid[0]).unwrap_err(),
            Error::RankDeficient { .. }
        ));
    }

    #[test]
    fn constant_independent_fields_pass_without_brackets() {
        let f1: VectorField = Arc::new(|_| v(&[1.0, 1.0]));
        let f2: VectorField = Arc::new(|_| v(&[0.0, 2.0]));
        let sys = ControlSystem::new("constant", FieldSet::new(2, vec![f1, f2]), DomainBox::unbounded(2)).unwrap();
        let sel = BracketSelection::new(vec![0, 1], vec![], vec![]).unwrap();
        let grid = DomainBox::cube(&[0.0; 2], 1.0).grid(4).unwrap();
        assert!(check_rank_condition(&sys, &sel, &grid, DEFAULT_COND_TOL).unwrap().ok);
    }

    #[test]
    fn alpha_for_identity_frame_is_the_safety_factor() {
        let e1: VectorField = Arc::new(|_| v(&[1.0, 0.0]));
        let e2: VectorField = Arc::new(|_| v(&[0.0, 1.0]));
        let sys = ControlSystem::new("identity", FieldSet::new(2, vec![e1, e2]), DomainBox::unbounded(2)).unwrap();
        let sel = BracketSelection::new(vec![0, 1], vec![], vec![]).unwrap();
        let alpha = estimate_alpha(&sys, &sel, &DomainBox::cube(&[0.0; 2], 1.0), 16).unwrap();
        assert!((alpha - 1.1).abs() < 1e-15);
    }

    #[test]
    fn alpha_single_sample_at_origin() {
        let sys = ControlSystem::brockett();
        let sel = BracketSelection::brockett(1);
        let alpha = estimate_alpha(&sys, &sel, &DomainBox::cube(&[0.0; 3], 2.0), 1).unwrap();
        assert!((alpha - 1.1).abs() < 1e-14);
    }

    #[test]
    fn alpha_dominates_a_dense_brute_force_scan() {
        let sys = ControlSystem::brockett();
        let sel = BracketSelection::brockett(1);
        let compact = DomainBox::cube(&[0.0; 3], 2.0);
        let alpha = estimate_alpha(&sys, &sel, &compact, 125).unwrap();
        // oracle: closed-form inverse [[1,0,0],[0,1,0],[x2/2,-x1/2,-1/2]] on a 21^3 grid
        let mut worst: f64 = 0.0;
        for x in compact.grid(21).unwrap() {
            let inv = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, x[1] / 2.0, -x[0] / 2.0, -0.5]);
            worst = worst.max(inv.singular_values().max());
        }
        assert!(alpha >= worst, "alpha {alpha} below brute-force max {worst}");
        assert!(worst >= 1.0);
    }

    #[test]
    fn selection_rejects_repeated_labels() {
        assert!(BracketSelection::new(vec![0], vec![(0, 1), (1, 2)], vec![3, 3]).is_err());
        assert!(BracketSelection::new(vec![0], vec![(0, 1)], vec![0]).is_err());
        assert_eq!(BracketSelection::with_default_kappa(vec![0], vec![(0, 1), (1, 2)]).kappa, vec![1, 2]);
    }

    #[test]
    fn grid_budget_picks_largest_tensor_grid() {
        let b = DomainBox::cube(&[0.0; 3], 1.0);
        assert_eq!(b.grid_with_budget(125).unwrap().len(), 125);
        assert_eq!(b.grid_with_budget(124).unwrap().len(), 64);
        assert_eq!(b.grid_with_budget(1).unwrap().len(), 1);
    }
}
