//! Experiment configuration shared by the command line and the browser demo.
//!
//! Field and bracket indices are 1-based here, as written by hand; everything past
//! [`ExperimentConfig::build`] is 0-based.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cost::{Cost, CostSpec};
use crate::error::{Error, Result};
use crate::integrator::SimConfig;
use crate::seeker::{pair_library, DitherSchedule};
use crate::stabilizer::StabilizerGains;
use crate::system::{BracketSelection, ControlSystem};

pub const PRESETS: [&str; 2] = ["brockett-durr", "brockett-vanishing"];

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_json: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_svg: Option<String>,
    /// `"plain"` or `"envelope"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_style: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub pair: String,
    pub gamma1: f64,
    #[serde(default = "one")]
    pub gamma2: f64,
    pub k: Vec<u32>,
    pub mu: f64,
    #[serde(default = "one")]
    pub eta: f64,
    pub s1: Vec<usize>,
    pub s2: Vec<[usize; 2]>,
    pub kappa: Vec<u32>,
    pub epsilon: f64,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default)]
    pub outputs: Outputs,
}

/// A run ready to simulate.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: ControlSystem,
    pub cost: Cost,
    pub sim: SimConfig,
}

impl ExperimentConfig {
    /// Brockett integrator with the linear pair: `gamma1 = 20`, `eps = 0.1`, `mu = 0.5`.
    pub fn brockett_durr() -> Self {
        Self {
            system: "brockett".into(),
            pair: "linear".into(),
            gamma1: 20.0,
            gamma2: 1.0,
            k: vec![1, 2, 3],
            mu: 0.5,
            eta: 1.0,
            s1: vec![1, 2],
            s2: vec![[1, 2]],
            kappa: vec![4],
            epsilon: 0.1,
            x0: vec![1.0, -1.0, 1.0],
            xi0: vec![-1.0, 1.0, 1.0],
            horizon: 40.0,
            seed: 0,
            cost: CostSpec::default(),
            substeps: None,
            record_stride: None,
            outputs: Outputs::default(),
        }
    }

    /// Same plant with the pair that vanishes at the minimum: `eps = 0.25`, `mu = 1`.
    pub fn brockett_vanishing() -> Self {
        Self {
            pair: "tanh_vanishing".into(),
            epsilon: 0.25,
            mu: 1.0,
            ..Self::brockett_durr()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "brockett-durr" => Ok(Self::brockett_durr()),
            "brockett-vanishing" => Ok(Self::brockett_vanishing()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// 0-based bracket selection.
    pub fn selection(&self) -> Result<BracketSelection> {
        let zero = |i: usize, what: &str| {
            i.checked_sub(1)
                .ok_or_else(|| Error::InvalidConfig(format!("{what} indices are 1-based, got 0")))
        };
        let s1 = self.s1.iter().map(|&i| zero(i, "s1")).collect::<Result<Vec<_>>>()?;
        let s2 = self
            .s2
            .iter()
            .map(|[a, b]| Ok((zero(*a, "s2")?, zero(*b, "s2")?)))
            .collect::<Result<Vec<_>>>()?;
        BracketSelection::new(s1, s2, self.kappa.clone())
    }

    /// Every validation problem at once, empty when the configuration is usable.
    pub fn validate(&self) -> Vec<String> {
        match self.build() {
            Ok(_) => Vec::new(),
            Err(first) => {
                let mut errs = vec![first.to_string()];
                if self.epsilon >= self.mu && !errs[0].contains("eps < mu") {
                    errs.push(format!("eps < mu is required, got eps = {} and mu = {}", self.epsilon, self.mu));
                }
                errs
            }
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let system = ControlSystem::preset(&self.system)?;
        let sel = self.selection()?;
        sel.validate_for(&system)?;
        let n = system.n();
        let cost = self.cost.build(n)?;
        let pair = pair_library(&self.pair, self.gamma2)?;
        let sched = DitherSchedule::new(self.k.clone(), self.mu, self.eta)?;
        let gains = StabilizerGains::new(self.gamma1, self.epsilon)?;
        let mut sim = SimConfig::new(
            gains,
            sched,
            pair,
            sel,
            DVector::from_column_slice(&self.x0),
            DVector::from_column_slice(&self.xi0),
            self.horizon,
        )?;
        if let Some(s) = self.substeps {
            sim = sim.with_substeps(s)?;
        }
        if let Some(s) = self.record_stride {
            sim = sim.with_record_stride(s)?;
        }
        Ok(Experiment { system, cost, sim })
    }
}
