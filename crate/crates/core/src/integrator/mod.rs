//! Fixed-step simulation of sample-and-hold (pi_eps) solutions of the closed loop
//!
//! ```text
//! x'  = sum_i u_i(a(x(t_j), xi(t_j)), t) f_i(x),   t in [t_j, t_j + eps)
//! xi' = g(J(x(t)), t)
//! ```
//!
//! The step `h` divides `eps` and `eps` divides `mu`, so every coefficient refresh lands on
//! a step boundary and the right-hand side is smooth inside each classical RK4 step.

mod reference;

pub use reference::{reference_integrate, try_reference_integrate};

use nalgebra::DVector;

use crate::cost::Cost;
use crate::error::{Error, Result};
use crate::seeker::{seeker_rhs, DitherSchedule, GeneratingPair};
use crate::stabilizer::{coefficients, control_value, CoefficientVector, StabilizerGains};
use crate::system::{BracketSelection, ControlSystem, FrameMatrix};

pub const DEFAULT_SUBSTEPS: usize = 32;

/// Everything needed for one closed-loop run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub gains: StabilizerGains,
    pub sched: DitherSchedule,
    pub pair: GeneratingPair,
    pub sel: BracketSelection,
    pub x0: DVector<f64>,
    pub xi0: DVector<f64>,
    pub horizon: f64,
    pub substeps_per_period: usize,
    /// Record every this many steps (hold boundaries are always recorded).
    pub record_stride: Option<usize>,
    /// `eps` as requested, before snapping to a divisor of `mu`.
    pub requested_epsilon: f64,
    pub warnings: Vec<String>,
}

impl SimConfig {
    pub fn new(
        gains: StabilizerGains,
        sched: DitherSchedule,
        pair: GeneratingPair,
        sel: BracketSelection,
        x0: DVector<f64>,
        xi0: DVector<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let mu = sched.mu;
        let requested = gains.epsilon;
        if requested >= mu {
            return Err(Error::InvalidConfig(format!(
                "eps < mu is required, got eps = {requested} and mu = {mu}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        let n = sel.dim();
        if x0.len() != n || xi0.len() != n || sched.n() != n {
            return Err(Error::InvalidConfig(format!(
                "dimension mismatch: selection spans {n}, x0 has {}, xi0 has {}, dither has {}",
                x0.len(),
                xi0.len(),
                sched.n()
            )));
        }
        let mut warnings = Vec::new();
        let q = (mu / requested - 1e-9).ceil();
        let epsilon = mu / q;
        if (epsilon - requested).abs() > 1e-12 * requested {
            warnings.push(format!("eps adjusted from {requested} to {epsilon} so that mu/eps = {q}"));
        }
        let gains = StabilizerGains::new(gains.gamma1, epsilon)?;
        if !gains.is_contractive() {
            warnings.push(format!(
                "eps * gamma1 = {} >= 1: the per-interval contraction 1 - eps*gamma1 is not in (0, 1)",
                epsilon * gains.gamma1
            ));
        }
        if x0 != xi0 {
            warnings.push("x0 != xi0: the initial-condition hypothesis x(0) = xi(0) does not hold".into());
        }
        Ok(Self {
            gains,
            sched,
            pair,
            sel,
            x0,
            xi0,
            horizon,
            substeps_per_period: DEFAULT_SUBSTEPS,
            record_stride: None,
            requested_epsilon: requested,
            warnings,
        })
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidConfig("substeps_per_period must be >= 1".into()));
        }
        self.substeps_per_period = substeps;
        Ok(self)
    }

    pub fn with_record_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be >= 1".into()));
        }
        self.record_stride = Some(stride);
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.gains.epsilon
    }

    pub fn epsilon_adjusted(&self) -> bool {
        self.gains.epsilon != self.requested_epsilon
    }

    /// `mu / eps`, an integer by construction.
    pub fn holds_per_period(&self) -> usize {
        (self.sched.mu / self.gains.epsilon).round() as usize
    }

    /// Integration steps per hold interval. The fastest stabilizer oscillation has period
    /// `eps / kappa_max` and the fastest dither `eta mu / k_max`; both get at least
    /// `substeps_per_period` steps.
    pub fn steps_per_hold(&self) -> usize {
        let kappa = self.sel.max_kappa().max(1) as f64;
        let dither = (f64::from(self.sched.max_k()) * self.gains.epsilon / self.sched.period() - 1e-9).ceil();
        self.substeps_per_period * kappa.max(dither).max(1.0) as usize
    }

    pub fn step(&self) -> f64 {
        self.gains.epsilon / self.steps_per_hold() as f64
    }

    pub fn effective_record_stride(&self) -> usize {
        self.record_stride
            .unwrap_or_else(|| self.steps_per_hold().div_ceil(9))
            .max(1)
    }
}

/// Run metadata stored alongside the samples.
#[derive(Debug, Clone)]
pub struct TrajectoryMeta {
    pub config: SimConfig,
    pub step: f64,
    pub steps_per_hold: usize,
    pub steps_taken: usize,
}

/// Sampled record of one pi_eps solution.
#[derive(Debug, Clone)]
pub struct PiEpsTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub meta: TrajectoryMeta,
    /// Time at which the state left the domain; the record stops just before it.
    pub domain_exit: Option<f64>,
}

impl PiEpsTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        Some((self.x.last()?, self.xi.last()?))
    }

    /// `sup_t |x(t) - xi(t)|` over the recorded samples.
    pub fn sup_tracking_error(&self) -> f64 {
        self.x.iter().zip(&self.xi).map(|(x, xi)| (x - xi).norm()).fold(0.0, f64::max)
    }

    /// Distances `|x(t) - target|` at the recorded samples.
    pub fn distances(&self, target: &DVector<f64>) -> Vec<f64> {
        self.x.iter().map(|x| (x - target).norm()).collect()
    }
}

/// Fresh coefficients at a hold boundary `t`; a singular frame is reported with the time.
pub fn hold_boundary_refresh(
    frame: &FrameMatrix,
    gains: &StabilizerGains,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    t: f64,
) -> Result<CoefficientVector> {
    coefficients(frame, gains, x, xi).map_err(|e| match e {
        Error::RankDeficient { point, condition, .. } => Error::RankDeficient {
            point,
            condition,
            time: Some(t),
        },
        other => other,
    })
}

struct ClosedLoop<'a> {
    sys: &'a ControlSystem,
    cost: &'a Cost,
    cfg: &'a SimConfig,
}

impl ClosedLoop<'_> {
    fn rhs(&self, t: f64, z: &DVector<f64>, held: &CoefficientVector) -> Result<DVector<f64>> {
        let n = self.sys.n();
        let x = z.rows(0, n).into_owned();
        let u = control_value(&self.cfg.sel, &self.cfg.gains, held, t, self.sys.m());
        let dx = self.sys.velocity(&x, &u);
        let dxi = seeker_rhs(&self.cfg.pair, &self.cfg.sched, self.cost.eval(&x), t)?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, n).copy_from(&dxi);
        Ok(out)
    }

    fn rk4(&self, t: f64, h: f64, z: &DVector<f64>, held: &CoefficientVector) -> Result<DVector<f64>> {
        let k1 = self.rhs(t, z, held)?;
        let k2 = self.rhs(t + 0.5 * h, &(z + &k1 * (0.5 * h)), held)?;
        let k3 = self.rhs(t + 0.5 * h, &(z + &k2 * (0.5 * h)), held)?;
        let k4 = self.rhs(t + h, &(z + &k3 * h), held)?;
        Ok(z + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
    }
}

fn split(z: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

fn join(x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + xi.len(), x.iter().chain(xi.iter()).copied())
}

fn check_start(sys: &ControlSystem, cfg: &SimConfig) -> Result<()> {
    cfg.sel.validate_for(sys)?;
    if cfg.x0.len() != sys.n() {
        return Err(Error::InvalidConfig(format!("x0 has length {} but n = {}", cfg.x0.len(), sys.n())));
    }
    sys.check_in_domain(&cfg.x0)?;
    sys.check_in_domain(&cfg.xi0)
}

/// Simulates the closed loop over `[0, horizon]`.
pub fn simulate(sys: &ControlSystem, cost: &Cost, cfg: &SimConfig) -> Result<PiEpsTrajectory> {
    check_start(sys, cfg)?;
    let n = sys.n();
    let frame = FrameMatrix::new(sys.clone(), cfg.sel.clone())?;
    let loop_ = ClosedLoop { sys, cost, cfg };
    let per_hold = cfg.steps_per_hold();
    let h = cfg.step();
    let total = (cfg.horizon / h - 1e-9).ceil().max(1.0) as usize;
    let stride = cfg.effective_record_stride();

    let mut traj = PiEpsTrajectory {
        times: Vec::new(),
        x: Vec::new(),
        xi: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
        meta: TrajectoryMeta {
            config: cfg.clone(),
            step: h,
            steps_per_hold: per_hold,
            steps_taken: 0,
        },
        domain_exit: None,
    };
    let record = |traj: &mut PiEpsTrajectory, t: f64, z: &DVector<f64>, held: &CoefficientVector| {
        let (x, xi) = split(z, n);
        traj.y.push(cost.eval(&x));
        traj.u.push(control_value(&cfg.sel, &cfg.gains, held, t, sys.m()));
        traj.times.push(t);
        traj.x.push(x);
        traj.xi.push(xi);
    };

    let mut z = join(&cfg.x0, &cfg.xi0);
    let mut held = hold_boundary_refresh(&frame, &cfg.gains, &cfg.x0, &cfg.xi0, 0.0)?;
    record(&mut traj, 0.0, &z, &held);
    for step in 0..total {
        let t = step as f64 * h;
        let next = loop_.rk4(t, h, &z, &held)?;
        let t_next = (step + 1) as f64 * h;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup { time: t_next });
        }
        traj.meta.steps_taken = step + 1;
        let (x, xi) = split(&next, n);
        if !sys.domain().contains(&x) || !sys.domain().contains(&xi) {
            traj.domain_exit = Some(t_next);
            return Ok(traj);
        }
        z = next;
        if (step + 1) % per_hold == 0 {
            // Refresh first so the control recorded at a boundary uses the new coefficients.
            held = hold_boundary_refresh(&frame, &cfg.gains, &x, &xi, t_next)?;
            record(&mut traj, t_next, &z, &held);
        } else if (step + 1) % stride == 0 || step + 1 == total {
            record(&mut traj, t_next, &z, &held);
        }
    }
    Ok(traj)
}

/// High-accuracy endpoint of the same hybrid system: each hold interval is integrated
/// adaptively with its coefficients frozen.
pub fn reference_endpoint(
    sys: &ControlSystem,
    cost: &Cost,
    cfg: &SimConfig,
    t_end: f64,
    tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_start(sys, cfg)?;
    let n = sys.n();
    let frame = FrameMatrix::new(sys.clone(), cfg.sel.clone())?;
    let loop_ = ClosedLoop { sys, cost, cfg };
    let eps = cfg.epsilon();
    let mut z = join(&cfg.x0, &cfg.xi0);
    let mut j = 0usize;
    loop {
        let t0 = j as f64 * eps;
        if t0 >= t_end - 1e-12 * eps {
            break;
        }
        let t1 = ((j + 1) as f64 * eps).min(t_end);
        let (x, xi) = split(&z, n);
        let held = hold_boundary_refresh(&frame, &cfg.gains, &x, &xi, t0)?;
        z = try_reference_integrate(|t, s| loop_.rhs(t, s, &held), &z, t0, t1, tol)?;
        j += 1;
    }
    Ok(split(&z, n))
}

/// The seeker alone with the plant pinned to it (`x = xi`): `xi' = g(J(xi), t)`, by
/// fixed-step RK4 with `substeps` steps per fastest dither period.
pub fn seeker_flow(
    cost: &Cost,
    pair: &GeneratingPair,
    sched: &DitherSchedule,
    xi0: &DVector<f64>,
    t_end: f64,
    substeps: usize,
) -> Result<DVector<f64>> {
    if !(t_end > 0.0) || substeps == 0 {
        return Err(Error::InvalidConfig("seeker_flow needs t_end > 0 and substeps >= 1".into()));
    }
    let fastest = sched.period() / f64::from(sched.max_k());
    let steps = (t_end / fastest * substeps as f64 - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let f = |t: f64, xi: &DVector<f64>| seeker_rhs(pair, sched, cost.eval(xi), t);
    let mut xi = xi0.clone();
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = f(t, &xi)?;
        let k2 = f(t + 0.5 * h, &(&xi + &k1 * (0.5 * h)))?;
        let k3 = f(t + 0.5 * h, &(&xi + &k2 * (0.5 * h)))?;
        let k4 = f(t + h, &(&xi + &k3 * h))?;
        xi += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if !xi.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup { time: t + h });
        }
    }
    Ok(xi)
}

/// Reference version of [`seeker_flow`].
pub fn seeker_flow_reference(
    cost: &Cost,
    pair: &GeneratingPair,
    sched: &DitherSchedule,
    xi0: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    try_reference_integrate(|t, xi| seeker_rhs(pair, sched, cost.eval(xi), t), xi0, 0.0, t_end, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeker::pair_library;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn config(pair: &str, eps: f64, mu: f64, x0: &[f64], xi0: &[f64], horizon: f64) -> SimConfig {
        config_with_gain(20.0, pair, eps, mu, x0, xi0, horizon)
    }

    fn config_with_gain(gamma1: f64, pair: &str, eps: f64, mu: f64, x0: &[f64], xi0: &[f64], horizon: f64) -> SimConfig {
        SimConfig::new(
            StabilizerGains::new(gamma1, eps).unwrap(),
            DitherSchedule::new(vec![1, 2, 3], mu, 1.0).unwrap(),
            pair_library(pair, 1.0).unwrap(),
            BracketSelection::brockett(4),
            v(x0),
            v(xi0),
            horizon,
        )
        .unwrap()
    }

    fn norm2() -> Cost {
        Cost::quadratic(DVector::zeros(3), 1.0, 0.0)
    }

    #[test]
    fn epsilon_snaps_to_a_divisor_of_mu() {
        let cfg = config("linear", 0.15, 0.5, &[0.0; 3], &[0.0; 3], 1.0);
        assert_eq!(cfg.holds_per_period(), 4);
        assert!((cfg.epsilon() - 0.125).abs() < 1e-15);
        assert!(cfg.epsilon_adjusted());
        let exact = config("linear", 0.1, 0.5, &[0.0; 3], &[0.0; 3], 1.0);
        assert!(!exact.epsilon_adjusted());
    }

    #[test]
    fn eps_not_below_mu_is_rejected() {
        let err = SimConfig::new(
            StabilizerGains::new(1.0, 0.5).unwrap(),
            DitherSchedule::new(vec![1, 2, 3], 0.5, 1.0).unwrap(),
            pair_library("linear", 1.0).unwrap(),
            BracketSelection::brockett(4),
            v(&[0.0; 3]),
            v(&[0.0; 3]),
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("eps < mu"));
    }

    #[test]
    fn warnings_flag_hypothesis_violations() {
        let cfg = config("linear", 0.1, 0.5, &[1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0], 1.0);
        assert_eq!(cfg.warnings.len(), 2);
    }

    #[test]
    fn step_resolves_both_oscillations() {
        let cfg = config("linear", 0.1, 0.5, &[0.0; 3], &[0.0; 3], 1.0);
        assert_eq!(cfg.steps_per_hold(), 128);
        let slow = SimConfig::new(
            StabilizerGains::new(1.0, 0.1).unwrap(),
            DitherSchedule::new(vec![1, 2, 30], 0.2, 1.0).unwrap(),
            pair_library("linear", 1.0).unwrap(),
            BracketSelection::brockett(1),
            v(&[0.0; 3]),
            v(&[0.0; 3]),
            1.0,
        )
        .unwrap();
        // 30 dither periods of 0.2/30 in one hold of 0.1 -> 15 per hold.
        assert_eq!(slow.steps_per_hold(), 32 * 15);
    }

    #[test]
    fn minimizer_is_an_equilibrium_with_the_vanishing_pair() {
        let cfg = config("tanh_vanishing", 0.25, 1.0, &[0.0; 3], &[0.0; 3], 5.0);
        let traj = simulate(&ControlSystem::brockett(), &norm2(), &cfg).unwrap();
        for (x, xi) in traj.x.iter().zip(&traj.xi) {
            assert!(x.amax() < 1e-9 && xi.amax() < 1e-9);
        }
        assert!((traj.times.last().unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn record_shape_and_hold_semantics() {
        let cfg = config_with_gain(5.0, "linear", 0.1, 0.5, &[1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0], 0.5);
        let sys = ControlSystem::brockett();
        let traj = simulate(&sys, &norm2(), &cfg).unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.x.len(), traj.len());
        assert_eq!(traj.u.len(), traj.len());
        // Within the first hold interval the recorded control uses the t = 0 coefficients.
        let frame = FrameMatrix::new(sys.clone(), cfg.sel.clone()).unwrap();
        let held = hold_boundary_refresh(&frame, &cfg.gains, &cfg.x0, &cfg.xi0, 0.0).unwrap();
        assert_eq!(held, coefficients(&frame, &cfg.gains, &cfg.x0, &cfg.xi0).unwrap());
        for (t, u) in traj.times.iter().zip(&traj.u) {
            if *t < cfg.epsilon() - 1e-12 {
                assert_eq!(*u, control_value(&cfg.sel, &cfg.gains, &held, *t, 2));
            }
        }
    }

    #[test]
    fn fixed_step_matches_reference_over_one_period() {
        let cfg = config_with_gain(5.0, "linear", 0.1, 0.5, &[1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0], 0.5);
        let sys = ControlSystem::brockett();
        let traj = simulate(&sys, &norm2(), &cfg).unwrap();
        let (x, xi) = traj.final_state().unwrap();
        let (rx, rxi) = reference_endpoint(&sys, &norm2(), &cfg, 0.5, 1e-10).unwrap();
        let scale = 1.0 + rx.norm();
        assert!((x - &rx).amax() <= 1e-5 * scale, "{}", (x - &rx).amax());
        assert!((xi - rxi).amax() <= 1e-5 * scale);
    }

    #[test]
    fn domain_exit_truncates_the_record() {
        let cfg = config_with_gain(5.0, "linear", 0.1, 0.5, &[1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0], 5.0);
        let sys = ControlSystem::brockett()
            .with_domain(crate::system::DomainBox::cube(&[0.0; 3], 1.2))
            .unwrap();
        let traj = simulate(&sys, &norm2(), &cfg).unwrap();
        let exit = traj.domain_exit.expect("expected a domain exit");
        assert!(*traj.times.last().unwrap() < exit);
        assert!(traj.x.iter().all(|x| sys.domain().contains(x)));
    }

    #[test]
    fn start_outside_domain_is_an_error() {
        let cfg = config("linear", 0.1, 0.5, &[3.0, 0.0, 0.0], &[0.0; 3], 1.0);
        let sys = ControlSystem::brockett()
            .with_domain(crate::system::DomainBox::cube(&[0.0; 3], 2.0))
            .unwrap();
        assert!(matches!(simulate(&sys, &norm2(), &cfg), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn seeker_flow_agrees_with_reference() {
        let pair = pair_library("linear", 1.0).unwrap();
        let sched = DitherSchedule::new(vec![1, 2, 3], 0.2, 1.0).unwrap();
        let xi0 = v(&[0.1, -0.1, 0.1]);
        let a = seeker_flow(&norm2(), &pair, &sched, &xi0, 0.2, 256).unwrap();
        let b = seeker_flow_reference(&norm2(), &pair, &sched, &xi0, 0.2, 1e-11).unwrap();
        assert!((a - b).amax() < 1e-9);
    }
}
