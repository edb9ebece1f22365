use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("finite-difference step underflows at {point:?}")]
    StepUnderflow { point: Vec<f64> },

    #[error("frame matrix is rank-deficient at {point:?} (condition number {condition:e}){}", time.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    RankDeficient {
        point: Vec<f64>,
        condition: f64,
        time: Option<f64>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range (expected < {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("value {value} lies outside the validity range of generating pair `{pair}`")]
    PairDomain { pair: String, value: f64 },

    #[error("unknown generating pair `{0}`")]
    UnknownPair(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("state became non-finite at t = {time}")]
    NumericalBlowup { time: f64 },

    #[error("adaptive step collapsed at t = {time}")]
    StepCollapse { time: f64 },

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("cost hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("infeasible tuning budget, binding constraint `{constraint}`: {detail}")]
    InfeasibleBudget { constraint: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
