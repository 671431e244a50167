//! Conditioning a truncated KL expansion on exact point values of the
//! log-field.
//!
//! With `R[n, i] = eps_n(x_i)`, `Lambda = diag(lambda)` and
//! `Sigma = R^T Lambda R`, the KL coordinates given the data have mean
//! `mu = Lambda^1/2 R Sigma^-1 (Y(x*) - Ybar(x*)) / sigma` and covariance
//! `M = I - Lambda^1/2 R Sigma^-1 R^T Lambda^1/2`, a symmetric projector of
//! rank `N_G - N_m`. The conditional field therefore lives in the range of
//! `B = Lambda^1/2 M Lambda^1/2`, and the positive eigenpairs of `B` give a
//! KL expansion of the conditional field in `N_G - N_m` independent
//! coordinates.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::randfield::KlExpansion;

/// Relative pivot below which an observation is considered redundant.
pub const DEFAULT_PIVOT_TOLERANCE: f64 = 1e-10;

/// Point observations of `Y = ln(kappa)`, snapped to grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaObservations {
    /// Flat grid indices of the observation points.
    pub indices: Vec<usize>,
    /// Observed log-conductivity at each point.
    pub values: Vec<f64>,
    /// Distance between the requested location and the grid point used.
    pub snap_distances: Vec<f64>,
    /// Positions (in the original input order) removed by subset selection.
    #[serde(default)]
    pub dropped: Vec<usize>,
}

impl KappaObservations {
    pub fn empty() -> Self {
        KappaObservations {
            indices: Vec::new(),
            values: Vec::new(),
            snap_distances: Vec::new(),
            dropped: Vec::new(),
        }
    }

    /// Observations at exact grid points.
    pub fn at_indices(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        let snap_distances = vec![0.0; indices.len()];
        Ok(KappaObservations {
            indices,
            values,
            snap_distances,
            dropped: Vec::new(),
        })
    }

    /// Observations of `kappa` at arbitrary locations; each location is
    /// snapped to its nearest grid point and the log is taken.
    pub fn from_kappa_at(grid: &Grid, points: &[Vec<f64>], kappa: &[f64]) -> Result<Self> {
        if points.len() != kappa.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: kappa.len(),
            });
        }
        let mut obs = KappaObservations::empty();
        for (pt, &k) in points.iter().zip(kappa) {
            if !(k > 0.0) {
                return Err(Error::arg(format!(
                    "observed conductivity {k} is not positive"
                )));
            }
            let s = grid.snap(pt)?;
            obs.indices.push(s.index);
            obs.values.push(k.ln());
            obs.snap_distances.push(s.distance);
        }
        Ok(obs)
    }

    /// Samples `field` (a log-conductivity) at the given grid indices.
    pub fn sample_field(field: &Field, indices: &[usize]) -> Self {
        let values = indices.iter().map(|&p| field.values()[p]).collect();
        KappaObservations::at_indices(indices.to_vec(), values).expect("equal lengths")
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn subset(&self, keep: &[usize]) -> Self {
        let dropped = (0..self.len()).filter(|i| !keep.contains(i)).collect();
        KappaObservations {
            indices: keep.iter().map(|&i| self.indices[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            snap_distances: keep.iter().map(|&i| self.snap_distances[i]).collect(),
            dropped,
        }
    }
}

/// `R[n, i] = eps_n(x_i)`.
fn eigenfunctions_at(kl: &KlExpansion, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(kl.len(), indices.len(), |n, i| kl.modes()[(indices[i], n)])
}

/// Unit-variance observation covariance `R^T Lambda R`.
fn observation_covariance(kl: &KlExpansion, r: &DMatrix<f64>) -> DMatrix<f64> {
    let lam = DVector::from_row_slice(kl.eigenvalues());
    let lr = DMatrix::from_fn(r.nrows(), r.ncols(), |n, i| lam[n] * r[(n, i)]);
    r.transpose() * lr
}

/// Greedy pivoted Cholesky on the observation covariance: repeatedly keeps
/// the observation with the largest remaining conditional variance and drops
/// everything whose pivot falls below `tolerance` times the first pivot.
/// Retained observations keep their input order.
pub fn select_full_rank_subset(
    kl: &KlExpansion,
    obs: &KappaObservations,
    tolerance: f64,
) -> Result<KappaObservations> {
    if obs.is_empty() {
        return Err(Error::arg("no observations to select from"));
    }
    let m = obs.len();
    let r = eigenfunctions_at(kl, &obs.indices);
    let sigma = observation_covariance(kl, &r);

    let mut diag: Vec<f64> = (0..m).map(|i| sigma[(i, i)]).collect();
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut chosen: Vec<usize> = Vec::new();
    let mut first_pivot = None;
    loop {
        let best = (0..m)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(b.cmp(&a)));
        let Some(p) = best else { break };
        let pivot = diag[p];
        let threshold = tolerance * first_pivot.unwrap_or(pivot);
        if pivot <= threshold || pivot <= 0.0 {
            break;
        }
        first_pivot.get_or_insert(pivot);
        let k = chosen.len();
        let root = pivot.sqrt();
        for i in 0..m {
            if chosen.contains(&i) || i == p {
                continue;
            }
            let mut s = sigma[(i, p)];
            for c in 0..k {
                s -= l[(i, c)] * l[(p, c)];
            }
            l[(i, k)] = s / root;
            diag[i] -= l[(i, k)] * l[(i, k)];
        }
        l[(p, k)] = root;
        chosen.push(p);
    }
    if chosen.is_empty() {
        warn!("all observations are degenerate; keeping the first one");
        chosen.push(0);
    } else if chosen.len() == 1 && m > 1 {
        warn!("observations are collinear; a single observation is retained");
    }
    chosen.sort_unstable();
    let out = obs.subset(&chosen);
    if !out.dropped.is_empty() {
        warn!(
            "dropped {} of {} observations as redundant: {:?}",
            out.dropped.len(),
            m,
            out.dropped
        );
    }
    Ok(out)
}

/// A KL expansion conditioned on exact observations, re-expanded in the
/// `N_G - N_m` coordinates that remain random.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalKl {
    base: KlExpansion,
    observations: KappaObservations,
    /// Unit-variance observation covariance `Sigma` (N_m x N_m).
    sigma_obs: DMatrix<f64>,
    /// `R` (N_G x N_m).
    r: DMatrix<f64>,
    /// Conditional shift of the KL coordinates.
    shift: DVector<f64>,
    /// Conditional covariance (projector) of the KL coordinates.
    projector: DMatrix<f64>,
    mean: Field,
    reduced_eigenvalues: Vec<f64>,
    /// `V` (N_G x d), orthonormal columns.
    coefficients: DMatrix<f64>,
    /// Reduced eigenfunctions on the grid (points x d).
    reduced_modes: DMatrix<f64>,
}

impl ConditionalKl {
    pub fn base(&self) -> &KlExpansion {
        &self.base
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.base.grid()
    }

    pub fn observations(&self) -> &KappaObservations {
        &self.observations
    }

    /// Reduced stochastic dimension `d = N_G - N_m`.
    pub fn dim(&self) -> usize {
        self.reduced_eigenvalues.len()
    }

    pub fn sigma(&self) -> f64 {
        self.base.sigma()
    }

    pub fn observation_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_obs
    }

    pub fn eigenfunctions_at_observations(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// Conditional mean of the log-field.
    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn reduced_eigenvalues(&self) -> &[f64] {
        &self.reduced_eigenvalues
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn reduced_modes(&self) -> &DMatrix<f64> {
        &self.reduced_modes
    }

    pub fn reduced_eigenfunction(&self, i: usize) -> Field {
        Field::new(
            self.grid().clone(),
            self.reduced_modes.column(i).iter().copied().collect(),
        )
        .expect("mode length matches grid")
    }

    /// Number of eigenvalues of the projector above `cutoff`.
    pub fn projector_rank(&self, cutoff: f64) -> usize {
        SymmetricEigen::new(self.projector.clone())
            .eigenvalues
            .iter()
            .filter(|v| **v > cutoff)
            .count()
    }

    /// Log-field for reduced coordinates `xi` (length `d`).
    pub fn sample_log(&self, xi: &[f64]) -> Result<Field> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        let s = self.sigma();
        let coef = DVector::from_iterator(
            self.dim(),
            xi.iter()
                .zip(&self.reduced_eigenvalues)
                .map(|(x, l)| s * l.sqrt() * x),
        );
        let fluct = &self.reduced_modes * coef;
        let values = self
            .mean
            .values()
            .iter()
            .zip(fluct.iter())
            .map(|(m, f)| m + f)
            .collect();
        Field::new(self.grid().clone(), values)
    }

    /// Log-field and conductivity `exp(Y)` for reduced coordinates `xi`.
    pub fn sample(&self, xi: &[f64]) -> Result<(Field, Field)> {
        let y = self.sample_log(xi)?;
        let kappa = y.map(f64::exp);
        Ok((y, kappa))
    }

    /// `sigma^2 sum_i lambda~_i eps~_i(x)^2`.
    pub fn variance_field(&self) -> Field {
        let s2 = self.sigma() * self.sigma();
        let values = (0..self.reduced_modes.nrows())
            .map(|p| {
                s2 * self
                    .reduced_eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(i, l)| l * self.reduced_modes[(p, i)].powi(2))
                    .sum::<f64>()
            })
            .collect();
        Field::new(self.grid().clone(), values).expect("length matches")
    }

    /// Unit-variance conditional covariance `eps B eps^T` on the grid.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let phi = self.base.modes();
        let lam_half = DVector::from_iterator(
            self.base.len(),
            self.base.eigenvalues().iter().map(|l| l.sqrt()),
        );
        let scaled = DMatrix::from_fn(phi.nrows(), phi.ncols(), |p, n| phi[(p, n)] * lam_half[n]);
        &scaled * &self.projector * scaled.transpose()
    }

    /// Reduced coordinates of a full KL coordinate vector that is consistent
    /// with the observations: `Lambda~^-1/2 V^T Lambda^1/2 (xi - mu)`.
    pub fn reduce(&self, xi_full: &[f64]) -> Result<Vec<f64>> {
        if xi_full.len() != self.base.len() {
            return Err(Error::DimensionMismatch {
                expected: self.base.len(),
                got: xi_full.len(),
            });
        }
        let z = DVector::from_iterator(
            self.base.len(),
            xi_full
                .iter()
                .zip(self.shift.iter())
                .zip(self.base.eigenvalues())
                .map(|((x, m), l)| l.sqrt() * (x - m)),
        );
        let proj = self.coefficients.transpose() * z;
        Ok(proj
            .iter()
            .zip(&self.reduced_eigenvalues)
            .map(|(p, l)| if *l > 0.0 { p / l.sqrt() } else { 0.0 })
            .collect())
    }
}

/// Conditions `kl` on `obs` (which must already have a full-rank covariance;
/// see [`select_full_rank_subset`]).
pub fn condition(kl: &KlExpansion, obs: &KappaObservations) -> Result<ConditionalKl> {
    let ng = kl.len();
    let nm = obs.len();
    if obs.values.len() != nm {
        return Err(Error::DimensionMismatch {
            expected: nm,
            got: obs.values.len(),
        });
    }
    if nm >= ng && nm > 0 {
        return Err(Error::arg(format!(
            "{nm} observations leave no randomness in a {ng}-mode expansion"
        )));
    }
    if let Some(&bad) = obs.indices.iter().find(|&&p| p >= kl.grid().len()) {
        return Err(Error::arg(format!(
            "observation index {bad} outside the grid"
        )));
    }

    let r = eigenfunctions_at(kl, &obs.indices);
    let sigma_obs = observation_covariance(kl, &r);
    let lam_half = DVector::from_iterator(ng, kl.eigenvalues().iter().map(|l| l.sqrt()));
    // Lambda^1/2 R
    let lr = DMatrix::from_fn(ng, nm, |n, i| lam_half[n] * r[(n, i)]);

    let (shift, projector) = if nm == 0 {
        (DVector::zeros(ng), DMatrix::identity(ng, ng))
    } else {
        let chol = sigma_obs.clone().cholesky().ok_or_else(|| {
            Error::SingularObservations(format!(
                "{nm} observations, covariance not positive definite"
            ))
        })?;
        let resid = DVector::from_iterator(
            nm,
            obs.indices
                .iter()
                .zip(&obs.values)
                .map(|(&p, y)| y - kl.mean().values()[p]),
        );
        let shift = if kl.sigma() > 0.0 {
            &lr * chol.solve(&resid) / kl.sigma()
        } else {
            DVector::zeros(ng)
        };
        let mut projector = DMatrix::identity(ng, ng) - &lr * chol.solve(&lr.transpose());
        projector = (&projector + projector.transpose()) * 0.5;
        (shift, projector)
    };

    let d = ng - nm;
    let b = DMatrix::from_fn(ng, ng, |n, k| lam_half[n] * projector[(n, k)] * lam_half[k]);
    let eig = SymmetricEigen::new((&b + b.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..ng).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    order.truncate(d);
    let mut reduced_eigenvalues = Vec::with_capacity(d);
    let mut coefficients = DMatrix::zeros(ng, d);
    for (c, &k) in order.iter().enumerate() {
        let mut l = eig.eigenvalues[k];
        if l <= 0.0 {
            warn!("reduced eigenvalue {c} is {l:e}; clipping to zero");
            l = 0.0;
        }
        reduced_eigenvalues.push(l);
        coefficients.set_column(c, &eig.eigenvectors.column(k));
    }
    let mut reduced_modes = kl.modes() * &coefficients;
    for c in 0..d {
        let col = reduced_modes.column(c);
        let scale = col.amax();
        let flip = col
            .iter()
            .find(|x| x.abs() > 1e-8 * scale)
            .is_some_and(|x| *x < 0.0);
        if flip {
            reduced_modes.column_mut(c).neg_mut();
            coefficients.column_mut(c).neg_mut();
        }
    }

    let shift_field =
        kl.modes() * DVector::from_iterator(ng, (0..ng).map(|n| lam_half[n] * shift[n]));
    let mean_values = kl
        .mean()
        .values()
        .iter()
        .zip(shift_field.iter())
        .map(|(m, s)| m + kl.sigma() * s)
        .collect();
    let mean = Field::new(kl.grid().clone(), mean_values)?;

    Ok(ConditionalKl {
        base: kl.clone(),
        observations: obs.clone(),
        sigma_obs,
        r,
        shift,
        projector,
        mean,
        reduced_eigenvalues,
        coefficients,
        reduced_modes,
    })
}
