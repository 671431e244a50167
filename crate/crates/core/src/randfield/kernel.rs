use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-variance stationary correlation kernels.
///
/// `lengths` holds one correlation length per axis; a single entry applies to
/// every axis. Both families factor into a product of 1D kernels, which the
/// KL solver exploits on 2D grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceKernel {
    /// `exp(-sum_k (d_k / L_k)^2)`; with equal lengths this is
    /// `exp(-|x - y|^2 / L^2)` in the Euclidean distance.
    SquaredExponential { lengths: Vec<f64> },
    /// `exp(-sum_k |d_k| / L_k)`.
    SeparableExponential { lengths: Vec<f64> },
}

impl CovarianceKernel {
    pub fn squared_exponential(length: f64) -> Self {
        CovarianceKernel::SquaredExponential {
            lengths: vec![length],
        }
    }

    pub fn separable_exponential(l1: f64, l2: f64) -> Self {
        CovarianceKernel::SeparableExponential {
            lengths: vec![l1, l2],
        }
    }

    pub fn lengths(&self) -> &[f64] {
        match self {
            CovarianceKernel::SquaredExponential { lengths }
            | CovarianceKernel::SeparableExponential { lengths } => lengths,
        }
    }

    /// Correlation length used along `axis`.
    pub fn length(&self, axis: usize) -> f64 {
        let l = self.lengths();
        if l.len() == 1 {
            l[0]
        } else {
            l[axis]
        }
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        let l = self.lengths();
        if l.is_empty() || (l.len() != 1 && l.len() != dimension) {
            return Err(Error::arg(format!(
                "kernel needs 1 or {dimension} correlation lengths, got {}",
                l.len()
            )));
        }
        if l.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::arg("correlation lengths must be positive"));
        }
        Ok(())
    }

    /// 1D factor of the kernel along `axis` at separation `d`.
    pub fn factor(&self, axis: usize, d: f64) -> f64 {
        let l = self.length(axis);
        match self {
            CovarianceKernel::SquaredExponential { .. } => (-(d / l).powi(2)).exp(),
            CovarianceKernel::SeparableExponential { .. } => (-(d.abs() / l)).exp(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(k, (a, b))| self.factor(k, a - b))
            .product()
    }
}
