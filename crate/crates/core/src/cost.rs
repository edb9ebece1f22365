use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diff;
use crate::error::{Error, Result};

pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Output map `y = J(x)`. The controller only ever sees values; gradients are used by
/// the analysis and tuning tools.
#[derive(Clone)]
pub struct Cost {
    name: String,
    value: ScalarField,
    gradient: Option<GradientField>,
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cost")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl Cost {
    pub fn new(name: impl Into<String>, value: ScalarField) -> Self {
        Self {
            name: name.into(),
            value,
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: GradientField) -> Self {
        self.gradient = Some(gradient);
        self
    }

    /// `scale * |x - center|^2 + offset`.
    pub fn quadratic(center: DVector<f64>, scale: f64, offset: f64) -> Self {
        let c1 = center.clone();
        let c2 = center;
        Self::new(
            "quadratic",
            Arc::new(move |x| scale * (x - &c1).norm_squared() + offset),
        )
        .with_gradient(Arc::new(move |x| (x - &c2) * (2.0 * scale)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.gradient {
            Some(g) => Ok(g(x)),
            None => diff::gradient(|p| (self.value)(p), x, diff::jacobian_step(x)),
        }
    }
}

/// Serializable description of a built-in cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `scale * |x - center|^2 + offset`; `center` defaults to the origin.
    Quadratic {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec::Quadratic {
            center: None,
            scale: 1.0,
            offset: 0.0,
        }
    }
}

impl CostSpec {
    pub fn build(&self, n: usize) -> Result<Cost> {
        match self {
            CostSpec::Quadratic { center, scale, offset } => {
                let c = match center {
                    Some(c) if c.len() != n => {
                        return Err(Error::InvalidConfig(format!(
                            "cost center has length {} but n = {n}",
                            c.len()
                        )))
                    }
                    Some(c) => DVector::from_column_slice(c),
                    None => DVector::zeros(n),
                };
                if !(*scale > 0.0) {
                    return Err(Error::InvalidConfig("quadratic cost scale must be positive".into()));
                }
                Ok(Cost::quadratic(c, *scale, *offset))
            }
        }
    }

    /// Minimizer and minimal value.
    pub fn minimizer(&self, n: usize) -> (DVector<f64>, f64) {
        match self {
            CostSpec::Quadratic { center, offset, .. } => (
                center
                    .as_ref()
                    .map(|c| DVector::from_column_slice(c))
                    .unwrap_or_else(|| DVector::zeros(n)),
                *offset,
            ),
        }
    }
}
