//! Covariance kernels, lognormal moment matching and the unconditional
//! truncated KL expansion.

mod kernel;
mod kl;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernel::CovarianceKernel;
pub use kl::{compute_kl, compute_kl_with, KlExpansion, Nystrom, Truncation, EIGEN_FLOOR};

/// Mean and standard deviation of `ln(kappa)` for a lognormal `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMoments {
    pub mu: f64,
    pub sigma: f64,
}

/// Converts the mean `mu_k` and standard deviation `sigma_k` of a lognormal
/// conductivity into the moments of its logarithm.
pub fn lognormal_moments(mu_k: f64, sigma_k: f64) -> Result<LogMoments> {
    if !(mu_k > 0.0 && mu_k.is_finite()) {
        return Err(Error::arg(format!(
            "mean conductivity must be positive, got {mu_k}"
        )));
    }
    if !(sigma_k >= 0.0 && sigma_k.is_finite()) {
        return Err(Error::arg(format!(
            "standard deviation must be non-negative, got {sigma_k}"
        )));
    }
    let r = ((sigma_k / mu_k).powi(2)).ln_1p();
    Ok(LogMoments {
        mu: mu_k.ln() - 0.5 * r,
        sigma: r.sqrt(),
    })
}
