use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpc::{GpcSurrogate, PointSurrogate};

/// Default standard deviation of the measurement error.
pub const DEFAULT_NOISE: f64 = 1e-3;

/// Predicted state at the measurement points as a function of `xi`.
pub trait ObservationModel: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn predict(&self, xi: &[f64]) -> Result<Vec<f64>>;
}

impl ObservationModel for PointSurrogate {
    fn dim(&self) -> usize {
        PointSurrogate::dim(self)
    }

    fn len(&self) -> usize {
        PointSurrogate::len(self)
    }

    fn predict(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.eval(xi)
    }
}

/// `u(xi) = A xi + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ObservationModel for LinearModel {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn len(&self) -> usize {
        self.a.nrows()
    }

    fn predict(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        let x = DVector::from_column_slice(xi);
        Ok((&self.a * x + &self.b).iter().copied().collect())
    }
}

impl LinearModel {
    /// Mean and covariance of the Gaussian posterior for data `y`, noise
    /// `sigma` and prior `N(prior_mean, theta I)`.
    pub fn conjugate_posterior(
        &self,
        y: &[f64],
        sigma: f64,
        prior_mean: &[f64],
        theta: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let s2 = sigma * sigma;
        let precision = self.a.transpose() * &self.a / s2 + DMatrix::identity(d, d) / theta;
        let cov = precision.clone().try_inverse().expect("positive definite");
        let rhs = self.a.transpose() * (DVector::from_column_slice(y) - &self.b) / s2
            + DVector::from_column_slice(prior_mean) / theta;
        (&cov * rhs, cov)
    }
}

/// Measured state values at fixed points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UObservations {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub sigma: f64,
}

impl UObservations {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: values.len(),
            });
        }
        for a in 0..points.len() {
            if points[..a].contains(&points[a]) {
                return Err(Error::arg(format!(
                    "duplicate measurement location {:?}",
                    points[a]
                )));
            }
        }
        Ok(UObservations {
            points,
            values,
            sigma: DEFAULT_NOISE,
        })
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unnormalized log-posterior of `xi`:
/// `-sum_j (u_j - u~(x_j, xi))^2 / (2 sigma^2) - |xi - xi_o|^2 / (2 theta)`.
///
/// Maximizing it is the regularized least-squares problem with
/// `lambda = sigma^2 / theta`.
#[derive(Debug, Clone)]
pub struct Posterior<M> {
    model: M,
    data: Vec<f64>,
    sigma: f64,
    prior_mean: Vec<f64>,
    theta: f64,
}

impl Posterior<PointSurrogate> {
    pub fn from_surrogate(surrogate: &GpcSurrogate, obs: &UObservations) -> Result<Self> {
        Posterior::new(
            surrogate.at_points(&obs.points)?,
            obs.values.clone(),
            obs.sigma,
        )
    }
}

impl<M: ObservationModel> Posterior<M> {
    /// Posterior with the standard normal prior (`xi_o = 0`, `theta = 1`).
    pub fn new(model: M, data: Vec<f64>, sigma: f64) -> Result<Self> {
        if model.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: model.len(),
                got: data.len(),
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::arg("measurement noise must be positive"));
        }
        let d = model.dim();
        Ok(Posterior {
            model,
            data,
            sigma,
            prior_mean: vec![0.0; d],
            theta: 1.0,
        })
    }

    pub fn with_prior(mut self, mean: Vec<f64>, theta: f64) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        if !(theta > 0.0) {
            return Err(Error::arg("prior scale must be positive"));
        }
        self.prior_mean = mean;
        self.theta = theta;
        Ok(self)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Regularization weight of the equivalent least-squares problem.
    pub fn lambda(&self) -> f64 {
        self.sigma * self.sigma / self.theta
    }

    pub fn log_posterior(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        let misfit: f64 = if self.data.is_empty() {
            0.0
        } else {
            self.model
                .predict(xi)?
                .iter()
                .zip(&self.data)
                .map(|(p, y)| (y - p).powi(2))
                .sum()
        };
        let prior: f64 = xi
            .iter()
            .zip(&self.prior_mean)
            .map(|(x, m)| (x - m).powi(2))
            .sum();
        Ok(-misfit / (2.0 * self.sigma * self.sigma) - prior / (2.0 * self.theta))
    }

    /// Log-posterior with failures mapped to minus infinity.
    pub(crate) fn density(&self, xi: &[f64]) -> f64 {
        match self.log_posterior(xi) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}
