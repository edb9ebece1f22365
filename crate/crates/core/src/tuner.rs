//! Constructive parameter selection: constants on a working set, then the chain of
//! bounds on `mu`, `gamma1` and `eps` that guarantees the practical decay estimate
//! `|x(t) - x*| <= beta |x0 - x*| e^{-lambda t} + rho`.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::SigmaBounds;
use crate::cost::Cost;
use crate::error::{Error, Result};
use crate::seeker::{dither_sum_constant, seeker_fields, DitherSchedule, GeneratingPair};
use crate::system::{estimate_alpha_on, BracketSelection, ControlSystem, DomainBox};

pub const CONSTANT_SAFETY: f64 = 1.1;

/// Sampled bounds on the working set (already inflated by [`CONSTANT_SAFETY`], except
/// `c_w` which is exact and `nu = c_w * m_g`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    pub m_f: f64,
    pub m_2f: f64,
    pub m_3f: f64,
    pub m_g: f64,
    pub l_g: f64,
    pub l_2g: f64,
    pub m_3g: f64,
    pub alpha: f64,
    pub c_w: f64,
    pub nu: f64,
    pub gamma2: f64,
    /// Number of inputs of the plant.
    pub m: usize,
    pub selection: BracketSelection,
    pub working_set: DomainBox,
}

fn pairwise_lipschitz(points: &[DVector<f64>], values: &[DVector<f64>]) -> f64 {
    let mut l = 0.0f64;
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            let dx = (&points[a] - &points[b]).norm();
            if dx > 1e-12 {
                l = l.max((&values[a] - &values[b]).norm() / dx);
            }
        }
    }
    l
}

/// Samples the working set and estimates every constant of the bound chain.
pub fn estimate_constants(
    sys: &ControlSystem,
    sel: &BracketSelection,
    pair: &GeneratingPair,
    sched: &DitherSchedule,
    cost: &Cost,
    working_set: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<ConstantEstimates> {
    sel.validate_for(sys)?;
    if !working_set.is_bounded() {
        return Err(Error::InvalidConfig("the working set must be a bounded box".into()));
    }
    if !working_set.is_subset_of(sys.domain()) {
        return Err(Error::InvalidConfig("the working set must lie inside the system domain".into()));
    }
    let mut points = vec![working_set.center()];
    points.extend(working_set.sample(samples.max(1), seed)?);
    let n = sys.n();
    let m = sys.m();
    let fields = sys.fields();
    let hs = seeker_fields(pair, cost, n);
    let l = hs.len();

    let mut m_f = 0.0f64;
    let mut m_2f = 0.0f64;
    let mut m_3f = 0.0f64;
    let mut m_g = 0.0f64;
    let mut m_3g = 0.0f64;
    let mut g_values = Vec::with_capacity(points.len());
    let mut lie_values = Vec::with_capacity(points.len());
    for x in &points {
        let y = cost.eval(x);
        let (gs, gc) = pair.eval(y)?;
        m_g = m_g.max(gs.abs()).max(gc.abs());
        g_values.push(DVector::from_vec(vec![gs, gc]));
        for i in 0..m {
            m_f = m_f.max(fields.eval(i, x)?.norm());
            for j in 0..m {
                m_2f = m_2f.max(fields.lie_derivative(i, j, x)?.norm());
                for k in 0..m {
                    m_3f = m_3f.max(fields.second_lie_derivative(k, j, i, x)?.norm());
                }
            }
        }
        let mut lie = Vec::with_capacity(l * l * n);
        for a in 0..l {
            for b in 0..l {
                lie.extend(hs.lie_derivative(b, a, x)?.iter().copied());
                for c in 0..l {
                    let v = hs.second_lie_derivative(c, b, a, x)?;
                    m_3g = m_3g.max(v.norm());
                }
            }
        }
        lie_values.push(DVector::from_vec(lie));
    }
    if !(m_3g.is_finite() && lie_values.iter().all(|v| v.iter().all(|c| c.is_finite()))) {
        return Err(Error::PairDomain {
            pair: pair.name().to_string(),
            value: f64::NAN,
        });
    }
    // |h_j(a) - h_j(b)| = |g_j(J(a)) - g_j(J(b))|, so the max over both families suffices.
    let l_g = {
        let sin: Vec<DVector<f64>> = g_values.iter().map(|g| DVector::from_element(1, g[0])).collect();
        let cos: Vec<DVector<f64>> = g_values.iter().map(|g| DVector::from_element(1, g[1])).collect();
        pairwise_lipschitz(&points, &sin).max(pairwise_lipschitz(&points, &cos))
    };
    let l_2g = pairwise_lipschitz(&points, &lie_values);
    let alpha = estimate_alpha_on(sys, sel, &points)?;
    let c_w = dither_sum_constant(&sched.k);
    let s = CONSTANT_SAFETY;
    let m_g = m_g * s;
    Ok(ConstantEstimates {
        m_f: m_f * s,
        m_2f: m_2f * s,
        // second Lie derivatives are bounded by 6 M_3f
        m_3f: m_3f / 6.0 * s,
        m_g,
        l_g: l_g * s,
        l_2g: l_2g * s,
        m_3g: m_3g * s,
        alpha,
        c_w,
        nu: c_w * m_g,
        gamma2: pair.gamma2(),
        m,
        selection: sel.clone(),
        working_set: working_set.clone(),
    })
}

/// Design targets of the tuning procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningBudget {
    /// Radius of admissible initial conditions around `x*`.
    pub delta: f64,
    /// Target residual radius.
    pub rho: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub varsigma: f64,
    /// Decay target, `0 < lambda2 < gamma2 sigma21`.
    pub lambda2: f64,
    /// Radius of the ball `D_x`; defaults to the midpoint of its admissible interval.
    #[serde(default)]
    pub delta_x: Option<f64>,
}

/// Which constraint produced a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// Domain constraint on `mu` (`mu_0`).
    Domain,
    /// `mu <= 1 / lambda2`.
    DecayRate,
    /// Averaging-remainder constraint on `mu` (`mu_hat_1`).
    Remainder,
    /// `rho1 mu^varsigma sqrt(mu) + nu sqrt(mu) <= rho / 2`.
    Residual,
}

/// Output of [`compute_bounds`]; the closures of the procedure are exposed as methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningResult {
    pub mu_bar: f64,
    pub mu0: f64,
    pub mu_hat1: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu_binding: Binding,
    pub delta_x: f64,
    /// `dist(x*, boundary of the working set) - delta_x`.
    pub d: f64,
    pub predicted_beta: f64,
    pub predicted_lambda: f64,
    pub estimates: ConstantEstimates,
    pub sigmas: SigmaBounds,
    pub budget: TuningBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsBar {
    pub value: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub c_u: f64,
    pub zeta1: f64,
    pub lambda1: f64,
    /// `"eps0"`, `"eps1"`, `"mu/2"` or `"1/gamma1"`.
    pub binding: &'static str,
}

/// Smallest positive root of an increasing `f` with `f(0+) < 0`, by bisection on a
/// bracket grown geometrically from machine epsilon.
fn increasing_root<F: Fn(f64) -> f64>(f: F) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = f64::EPSILON;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    if f(hi).is_nan() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Some(hi)
}

fn infeasible(constraint: &str, detail: String) -> Error {
    Error::InfeasibleBudget {
        constraint: constraint.to_string(),
        detail,
    }
}

/// `(Sum kappa^{2/3})^{3/4}`.
fn kappa_sum(sel: &BracketSelection) -> f64 {
    sel.kappa.iter().map(|k| f64::from(*k).powf(2.0 / 3.0)).sum::<f64>().powf(0.75)
}

impl TuningResult {
    fn rho0(&self, mu: f64) -> f64 {
        self.budget.rho1 * mu.powf(self.budget.varsigma) * mu.sqrt() / 3.0
    }

    /// `3 nu / (rho1 mu^{varsigma + 1})`.
    pub fn gamma1_bar(&self, mu: f64) -> f64 {
        3.0 * self.estimates.nu / (self.budget.rho1 * mu.powf(self.budget.varsigma + 1.0))
    }

    /// Control amplitude constant evaluated at `|x0 - xi0| = rho1 mu^varsigma sqrt(mu) / 3`.
    pub fn c_u(&self, gamma1: f64, eps: f64, mu: f64) -> f64 {
        let e = &self.estimates;
        let s1 = e.selection.s1.len() as f64;
        e.alpha.sqrt() * ((gamma1 * e.alpha * eps * self.rho0(mu) * s1).sqrt() + 2.0 * (2.0 * PI).sqrt()) * kappa_sum(&e.selection)
    }

    /// `(1 / gamma1) min{1, rho1 mu^varsigma sqrt(mu) / (3 M_f^2 c_u^2)}`.
    pub fn eps0_at(&self, gamma1: f64, mu: f64, c_u: f64) -> f64 {
        let e = &self.estimates;
        let ratio = self.budget.rho1 * mu.powf(self.budget.varsigma) * mu.sqrt() / (3.0 * e.m_f * e.m_f * c_u * c_u);
        ratio.min(1.0) / gamma1
    }

    /// Remainder constant of one hold interval.
    pub fn zeta1(&self, gamma1: f64, c_u: f64) -> f64 {
        let e = &self.estimates;
        let ga = (gamma1 * e.alpha).powf(1.5);
        let per_input: f64 = (0..e.m)
            .map(|j1| {
                e.selection
                    .s2
                    .iter()
                    .zip(&e.selection.kappa)
                    .filter(|((_, b), _)| *b == j1)
                    .map(|(_, k)| f64::from(*k).powf(-2.0 / 3.0))
                    .sum::<f64>()
                    .powf(0.75)
            })
            .sum();
        e.m_3f * c_u.powi(3)
            + 0.5 * e.m_2f * (e.nu * self.budget.varsigma * e.alpha).sqrt() * ga
            + 2.0 * ga * e.m_2f * (e.selection.s1.len() as f64).sqrt() * per_input
    }

    fn eps_bar_with(&self, gamma1: f64, mu: f64, gamma1_floor: f64) -> EpsBar {
        let lambda1 = 0.5 * (gamma1_floor + gamma1);
        let delta_x = self.delta_x;
        let eps1_at = |eps: f64| {
            let c_u = self.c_u(gamma1, eps, mu);
            let e0 = self.eps0_at(gamma1, mu, c_u);
            let z = self.zeta1(gamma1, c_u);
            let e1 = ((gamma1 - lambda1) / (z * delta_x.sqrt())).powi(2);
            (e0, e0.min(e1), c_u, z)
        };
        // Both eps0 and eps1 shrink as c_u grows with eps, so the admissible set is an
        // interval (0, eps*] with eps* the crossing of eps and eps1(eps).
        let root = increasing_root(|eps| eps - eps1_at(eps).1).unwrap_or(0.0);
        let (e0, e1, c_u, z) = eps1_at(root);
        let mut value = root;
        let mut binding = if e1 < e0 { "eps1" } else { "eps0" };
        if value >= 0.5 * mu {
            value = 0.5 * mu;
            binding = "mu/2";
        }
        let cap = (1.0 - 1e-12) / gamma1;
        if value >= cap {
            value = cap;
            binding = "1/gamma1";
        }
        EpsBar {
            value,
            eps0: e0,
            eps1: e1,
            c_u,
            zeta1: z,
            lambda1,
            binding,
        }
    }

    /// Largest admissible `eps` for `(gamma1, mu)`; zero when `gamma1 <= gamma1_bar(mu)`.
    pub fn eps_bar(&self, gamma1: f64, mu: f64) -> EpsBar {
        let floor = self.gamma1_bar(mu);
        if gamma1 <= floor {
            return EpsBar {
                value: 0.0,
                eps0: 0.0,
                eps1: 0.0,
                c_u: self.c_u(gamma1, 0.0, mu),
                zeta1: 0.0,
                lambda1: floor,
                binding: "gamma1_bar",
            };
        }
        self.eps_bar_with(gamma1, mu, floor)
    }

    /// Smallest dither slowing `eta` that lets a fixed `gamma1` satisfy the gain bound.
    pub fn eta_bar(&self, gamma1: f64, mu: f64) -> f64 {
        (self.gamma1_bar(mu) / gamma1).max(1.0)
    }

    /// `eps` bound of the slowed variant: the gain floor becomes `gamma1_bar(mu) / eta`.
    pub fn eps_bar_slowed(&self, gamma1: f64, mu: f64, eta: f64) -> EpsBar {
        let floor = self.gamma1_bar(mu) / eta;
        if gamma1 <= floor {
            return self.eps_bar(0.0f64.max(floor), mu);
        }
        self.eps_bar_with(gamma1, mu, floor)
    }

    /// `sqrt(sigma12 / sigma11) e^{lambda2 mu}`.
    pub fn beta(&self, mu: f64) -> f64 {
        (self.sigmas.sigma12 / self.sigmas.sigma11).sqrt() * (self.budget.lambda2 * mu).exp()
    }

    /// A strictly admissible triple `(mu_bar, 2 gamma1_bar, eps_bar / 2)` with `eps`
    /// snapped so that `mu / eps` is an integer.
    pub fn recommended(&self) -> (f64, f64, f64) {
        let mu = self.mu_bar;
        let g = self.gamma1_bar(mu);
        let gamma1 = if g > 0.0 { 2.0 * g } else { 1.0 };
        let eps = 0.5 * self.eps_bar(gamma1, mu).value;
        let eps = mu / (mu / eps).ceil();
        (mu, gamma1, eps)
    }
}

/// Evaluates the bound chain for the given constants and budget.
pub fn compute_bounds(est: &ConstantEstimates, sigmas: &SigmaBounds, budget: &TuningBudget) -> Result<TuningResult> {
    let x_star = sigmas.x_star();
    let dist = est.working_set.distance_to_boundary(&x_star);
    if !(dist > 0.0) {
        return Err(infeasible("x*", "the minimizer is not interior to the working set".into()));
    }
    let ratio = (sigmas.sigma11 / sigmas.sigma12).sqrt();
    let delta_max = ratio * dist;
    if !(budget.delta > 0.0 && budget.delta < delta_max) {
        return Err(infeasible(
            "delta",
            format!("delta = {} must lie in (0, {delta_max})", budget.delta),
        ));
    }
    let (lo, hi) = (budget.delta / ratio, dist);
    let delta_x = budget.delta_x.unwrap_or(0.5 * (lo + hi));
    if !(delta_x > lo && delta_x < hi) {
        return Err(infeasible("delta_x", format!("delta_x = {delta_x} must lie in ({lo}, {hi})")));
    }
    for (name, v) in [("rho", budget.rho), ("rho1", budget.rho1), ("rho2", budget.rho2), ("varsigma", budget.varsigma)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(infeasible(name, format!("{name} = {v} must be positive")));
        }
    }
    let lambda_cap = est.gamma2 * sigmas.sigma21;
    if !(budget.lambda2 > 0.0 && budget.lambda2 < lambda_cap) {
        return Err(infeasible(
            "lambda2",
            format!("lambda2 = {} must lie in (0, gamma2 sigma21 = {lambda_cap})", budget.lambda2),
        ));
    }
    let c_j = sigmas.sigma11 * delta_x * delta_x;
    if budget.rho2 > c_j {
        return Err(infeasible("rho2", format!("rho2 = {} exceeds sigma11 delta_x^2 = {c_j}", budget.rho2)));
    }
    let rho2_cap = budget.rho * budget.rho * sigmas.sigma11 / 4.0;
    if budget.rho2 > rho2_cap {
        return Err(infeasible("rho2", format!("rho2 = {} exceeds rho^2 sigma11 / 4 = {rho2_cap}", budget.rho2)));
    }
    let d = dist - delta_x;
    let (rho1, vs, nu) = (budget.rho1, budget.varsigma, est.nu);

    let mu0 = increasing_root(|mu| mu.sqrt() * (2.0 * rho1 * mu.powf(vs) / 3.0 + nu) - d)
        .ok_or_else(|| infeasible("mu0", "no positive root of the domain equation".into()))?;

    let (g2, s21, s22, s3) = (est.gamma2, sigmas.sigma21, sigmas.sigma22, sigmas.sigma3);
    let rho2 = budget.rho2;
    let zeta2 = |mu: f64| {
        est.c_w * mu.powf((vs - 0.5).max(0.0)) * rho1 * (est.l_g + mu.sqrt() * est.l_2g * est.c_w)
            + mu.powf((0.5 - vs).max(0.0)) * est.m_3g
    };
    let rhs = rho2 * (g2 * s21 - budget.lambda2);
    let mu_hat1 = increasing_root(|mu| {
        let z = zeta2(mu);
        rho2 * mu * g2 * s3 * s22 * s22 + mu.powf(vs) * z * ((s22 * rho2).sqrt() + s3 * z * mu.powf(1.0 + vs)) - rhs
    })
    .ok_or_else(|| infeasible("mu_hat1", "no positive root of the remainder equation".into()))?;
    let mu1 = mu0.min(1.0 / budget.lambda2).min(mu_hat1);

    let mu2 = increasing_root(|mu| rho1 * mu.powf(vs) * mu.sqrt() + nu * mu.sqrt() - budget.rho / 2.0)
        .ok_or_else(|| infeasible("residual", "no positive root of the residual equation".into()))?;

    let candidates = [
        (mu0, Binding::Domain),
        (1.0 / budget.lambda2, Binding::DecayRate),
        (mu_hat1, Binding::Remainder),
        (mu2, Binding::Residual),
    ];
    let (mu_bar, mu_binding) = candidates
        .into_iter()
        .fold((f64::INFINITY, Binding::Domain), |acc, c| if c.0 < acc.0 { c } else { acc });
    if !(mu_bar > 0.0 && mu_bar.is_finite()) {
        return Err(infeasible("mu_bar", format!("mu_bar = {mu_bar}")));
    }
    let mut result = TuningResult {
        mu_bar,
        mu0,
        mu_hat1,
        mu1,
        mu2,
        mu_binding,
        delta_x,
        d,
        predicted_beta: 0.0,
        predicted_lambda: budget.lambda2,
        estimates: est.clone(),
        sigmas: sigmas.clone(),
        budget: budget.clone(),
    };
    result.predicted_beta = result.beta(mu_bar);
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainCheck {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
    /// Oriented so that values `>= 1` pass (`> 1` for strict constraints).
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub checks: Vec<ChainCheck>,
    pub ok: bool,
}

/// Checks `(mu, gamma1, eps)` against every constraint, in the order they are chosen.
pub fn validate_chain(result: &TuningResult, mu: f64, gamma1: f64, eps: f64) -> ChainReport {
    let g_bar = result.gamma1_bar(mu);
    let e_bar = result.eps_bar(gamma1, mu).value;
    let q = mu / eps;
    // allow for the rounding of mu / eps itself, which grows with the ratio
    let integral = (q - q.round()).abs() <= 1e-9 + 8.0 * f64::EPSILON * q && q.round() >= 1.0;
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    let checks = vec![
        ChainCheck {
            name: "mu <= mu_bar",
            pass: mu <= result.mu_bar,
            value: mu,
            limit: result.mu_bar,
            margin: ratio(result.mu_bar, mu),
        },
        ChainCheck {
            name: "gamma1 >= gamma1_bar(mu)",
            pass: gamma1 >= g_bar,
            value: gamma1,
            limit: g_bar,
            margin: ratio(gamma1, g_bar),
        },
        ChainCheck {
            name: "eps <= eps_bar(gamma1, mu)",
            pass: eps > 0.0 && eps <= e_bar,
            value: eps,
            limit: e_bar,
            margin: ratio(e_bar, eps),
        },
        ChainCheck {
            name: "eps < mu",
            pass: eps < mu,
            value: eps,
            limit: mu,
            margin: ratio(mu, eps),
        },
        ChainCheck {
            name: "mu / eps integer",
            pass: integral,
            value: q,
            limit: q.round(),
            margin: if integral { 1.0 } else { 0.0 },
        },
        ChainCheck {
            name: "eps * gamma1 < 1",
            pass: eps * gamma1 < 1.0,
            value: eps * gamma1,
            limit: 1.0,
            margin: ratio(1.0, eps * gamma1),
        },
    ];
    ChainReport {
        ok: checks.iter().all(|c| c.pass),
        checks,
    }
}
