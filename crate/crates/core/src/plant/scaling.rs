use nalgebra::DVector;

use crate::error::{Error, Result};

/// Per-state scale factors; scaled coordinates are `x ./ factors`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMap {
    factors: DVector<f64>,
}

impl ScalingMap {
    pub fn new(factors: DVector<f64>) -> Result<Self> {
        if let Some(j) = factors.iter().position(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::config("scaling", "factors", format!("factor {} must be positive and finite", j + 1)));
        }
        Ok(Self { factors })
    }

    pub fn unit(n: usize) -> Self {
        Self { factors: DVector::from_element(n, 1.0) }
    }

    /// Factors `|x_ref|`.
    pub fn from_reference(x_ref: &DVector<f64>) -> Result<Self> {
        Self::new(x_ref.abs())
    }

    pub fn factors(&self) -> &DVector<f64> {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Restriction to the coordinates `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self { factors: self.factors.rows(start, len).into_owned() }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.factors.len(), "scaling dimension mismatch");
        x.component_div(&self.factors)
    }

    pub fn invert(&self, xs: &DVector<f64>) -> DVector<f64> {
        assert_eq!(xs.len(), self.factors.len(), "scaling dimension mismatch");
        xs.component_mul(&self.factors)
    }
}
