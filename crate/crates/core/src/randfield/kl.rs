use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::kernel::CovarianceKernel;
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Axis, Field, Grid};

/// Relative eigenvalue floor below which modes are treated as numerical noise.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// How many modes to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Smallest N whose eigenvalues capture at least this fraction of the trace.
    Energy(f64),
    /// Exactly N modes.
    Modes(usize),
}

/// Discretization route for the Fredholm eigenproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nystrom {
    /// Kronecker factorization on 2D grids (every supported kernel is
    /// separable), dense otherwise.
    #[default]
    Auto,
    /// Always assemble and decompose the full weighted kernel matrix.
    Dense,
}

/// Truncated Karhunen-Loeve expansion of a Gaussian field on a grid:
/// `Y(x) = mean(x) + sigma * sum_n sqrt(lambda_n) eps_n(x) xi_n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlExpansion {
    mean: Field,
    sigma: f64,
    eigenvalues: Vec<f64>,
    /// `points x modes`, discretely orthonormal columns.
    modes: DMatrix<f64>,
    total_energy: f64,
}

impl KlExpansion {
    /// Assembles an expansion from precomputed parts.
    pub fn from_parts(
        mean: Field,
        sigma: f64,
        eigenvalues: Vec<f64>,
        modes: DMatrix<f64>,
        total_energy: f64,
    ) -> Result<Self> {
        if modes.nrows() != mean.len() || modes.ncols() != eigenvalues.len() {
            return Err(Error::arg(format!(
                "mode matrix is {}x{}, expected {}x{}",
                modes.nrows(),
                modes.ncols(),
                mean.len(),
                eigenvalues.len()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::arg("sigma must be non-negative"));
        }
        Ok(KlExpansion {
            mean,
            sigma,
            eigenvalues,
            modes,
            total_energy,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mean.grid()
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of retained modes, `N_G`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn eigenfunction(&self, n: usize) -> Field {
        Field::new(
            self.grid().clone(),
            self.modes.column(n).iter().copied().collect(),
        )
        .expect("mode length matches grid")
    }

    /// Sum of all (untruncated, clipped) eigenvalues of the discretized operator.
    pub fn total_energy(&self) -> f64 {
        self.total_energy
    }

    pub fn energy_fraction(&self) -> f64 {
        if self.total_energy > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_energy
        } else {
            1.0
        }
    }

    /// Realization for coordinates `xi` (length `N_G`).
    pub fn sample(&self, xi: &[f64]) -> Result<Field> {
        if xi.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: xi.len(),
            });
        }
        let coef = DVector::from_iterator(
            self.len(),
            xi.iter()
                .zip(&self.eigenvalues)
                .map(|(x, l)| self.sigma * l.sqrt() * x),
        );
        let fluct = &self.modes * coef;
        let values = self
            .mean
            .values()
            .iter()
            .zip(fluct.iter())
            .map(|(m, f)| m + f)
            .collect();
        Field::new(self.grid().clone(), values)
    }

    /// Pointwise variance `sigma^2 sum_n lambda_n eps_n(x)^2` of the truncated field.
    pub fn variance_field(&self) -> Field {
        let s2 = self.sigma * self.sigma;
        let values = (0..self.modes.nrows())
            .map(|p| {
                s2 * self
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(n, l)| l * self.modes[(p, n)].powi(2))
                    .sum::<f64>()
            })
            .collect();
        Field::new(self.grid().clone(), values).expect("length matches")
    }

    /// Spectrum CSV: `index,lambda,cumulative_fraction` (1-based index).
    pub fn write_spectrum_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "lambda", "cumulative_fraction"])?;
        let mut acc = 0.0;
        for (n, l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            w.write_record([
                (n + 1).to_string(),
                fmt_f64(l),
                fmt_f64(&(acc / self.total_energy)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `spectrum.csv` and `eigenfunction_NNN.csv` into `dir`.
    pub fn export_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_spectrum_csv(std::fs::File::create(dir.join("spectrum.csv"))?)?;
        for n in 0..self.len() {
            self.eigenfunction(n)
                .save_csv(dir.join(format!("eigenfunction_{:03}.csv", n + 1)))?;
        }
        Ok(())
    }
}

/// Solves the discretized Fredholm eigenproblem for `kernel` on `grid`.
///
/// The Nystrom matrix `W^1/2 C W^1/2` uses the grid's own quadrature weights;
/// eigenfunctions are recovered as `W^-1/2 v` and are therefore discretely
/// orthonormal. Each mode is signed so that its first significant entry is
/// positive.
pub fn compute_kl(
    kernel: &CovarianceKernel,
    grid: Arc<Grid>,
    mean: Field,
    sigma: f64,
    truncation: Truncation,
) -> Result<KlExpansion> {
    compute_kl_with(kernel, grid, mean, sigma, truncation, Nystrom::Auto)
}

pub fn compute_kl_with(
    kernel: &CovarianceKernel,
    grid: Arc<Grid>,
    mean: Field,
    sigma: f64,
    truncation: Truncation,
    method: Nystrom,
) -> Result<KlExpansion> {
    kernel.validate(grid.dimension())?;
    if !mean.grid().same_as(&grid) {
        return Err(Error::GridMismatch(
            "mean field is not on the KL grid".into(),
        ));
    }
    match truncation {
        Truncation::Energy(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(Error::arg(format!(
                "energy fraction must lie in (0, 1], got {f}"
            )))
        }
        Truncation::Modes(0) => return Err(Error::arg("need at least one mode")),
        _ => {}
    }
    for (k, axis) in grid.axes().iter().enumerate() {
        if axis.spacing() > kernel.length(k) / 4.0 {
            warn!(
                "axis {k}: spacing {} under-resolves correlation length {}",
                axis.spacing(),
                kernel.length(k)
            );
        }
    }

    let spectrum = match (grid.dimension(), method) {
        (2, Nystrom::Auto) => kronecker_spectrum(kernel, &grid),
        _ => dense_spectrum(kernel, &grid),
    };
    let Spectrum {
        values,
        total,
        vector,
    } = spectrum;

    let lead = values.first().copied().unwrap_or(0.0);
    let usable = values
        .iter()
        .take_while(|l| **l > EIGEN_FLOOR * lead && lead > 0.0)
        .count();
    let n = match truncation {
        Truncation::Modes(n) => {
            if n > usable {
                return Err(Error::arg(format!(
                    "requested {n} modes but only {usable} are numerically positive"
                )));
            }
            n
        }
        Truncation::Energy(f) => {
            let mut acc = 0.0;
            let mut n = usable;
            for (i, l) in values.iter().take(usable).enumerate() {
                acc += l;
                // relative slack absorbs round-off when f == 1
                if acc >= f * total * (1.0 - 1e-12) {
                    n = i + 1;
                    break;
                }
            }
            n
        }
    };

    let np = grid.len();
    let mut modes = DMatrix::zeros(np, n);
    for k in 0..n {
        let mut v = vector(k);
        fix_sign(&mut v);
        modes.set_column(k, &DVector::from_vec(v));
    }
    KlExpansion::from_parts(mean, sigma, values[..n].to_vec(), modes, total)
}

struct Spectrum<'a> {
    /// All eigenvalues, descending, negatives clipped to zero.
    values: Vec<f64>,
    total: f64,
    /// Eigenfunction of the k-th eigenvalue, as grid values.
    vector: Box<dyn Fn(usize) -> Vec<f64> + 'a>,
}

fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Symmetric eigendecomposition sorted by descending eigenvalue.
fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn clip(values: &mut [f64]) {
    let lead = values.first().copied().unwrap_or(0.0).max(0.0);
    let worst = values.iter().copied().fold(0.0f64, f64::min);
    if worst < -1e-10 * lead {
        warn!("discretized covariance is indefinite (min eigenvalue {worst:e}); clipping");
    }
    for v in values.iter_mut() {
        *v = v.max(0.0);
    }
}

fn nystrom(weights: &[f64], kernel: impl Fn(usize, usize) -> f64) -> (Vec<f64>, DMatrix<f64>) {
    let n = weights.len();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::from_fn(n, n, |p, q| sw[p] * kernel(p, q) * sw[q]);
    // symmetrize against round-off in the kernel evaluation
    for p in 0..n {
        for q in 0..p {
            let m = 0.5 * (a[(p, q)] + a[(q, p)]);
            a[(p, q)] = m;
            a[(q, p)] = m;
        }
    }
    let (mut values, mut vectors) = sorted_eigen(a);
    clip(&mut values);
    for p in 0..n {
        for c in 0..n {
            vectors[(p, c)] /= sw[p];
        }
    }
    (values, vectors)
}

fn dense_spectrum<'a>(kernel: &'a CovarianceKernel, grid: &'a Grid) -> Spectrum<'a> {
    let pts = grid.points();
    let (values, vectors) = nystrom(grid.weights(), |p, q| kernel.eval(&pts[p], &pts[q]));
    let total = values.iter().sum();
    Spectrum {
        values,
        total,
        vector: Box::new(move |k| vectors.column(k).iter().copied().collect()),
    }
}

fn axis_spectrum(kernel: &CovarianceKernel, axis: &Axis, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let x = axis.coords();
    nystrom(&axis.weights(), |p, q| kernel.factor(k, x[p] - x[q]))
}

/// The weighted kernel matrix of a separable kernel on a tensor grid is the
/// Kronecker product of the per-axis matrices, so its eigenpairs are products
/// of per-axis eigenpairs.
fn kronecker_spectrum<'a>(kernel: &'a CovarianceKernel, grid: &'a Grid) -> Spectrum<'a> {
    let (va, ea) = axis_spectrum(kernel, grid.axis(0), 0);
    let (vb, eb) = axis_spectrum(kernel, grid.axis(1), 1);
    let mut pairs: Vec<(f64, usize, usize)> = va
        .iter()
        .enumerate()
        .flat_map(|(i, a)| vb.iter().enumerate().map(move |(j, b)| (a * b, i, j)))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let values = pairs.iter().map(|p| p.0).collect();
    let total = va.iter().sum::<f64>() * vb.iter().sum::<f64>();
    let (n1, n2) = grid.shape();
    Spectrum {
        values,
        total,
        vector: Box::new(move |k| {
            let (_, i, j) = pairs[k];
            let mut v = Vec::with_capacity(n1 * n2);
            for a in 0..n1 {
                for b in 0..n2 {
                    v.push(ea[(a, i)] * eb[(b, j)]);
                }
            }
            v
        }),
    }
}
