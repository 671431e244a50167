use std::fs::{self, File};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hermite::hermite_table;
use super::multiindex::MultiIndexSet;
use super::quadrature::{gauss_hermite_tensor, smolyak_sparse, QuadratureRule, RuleKind};
use crate::condkl::ConditionalKl;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::grid::{Field, Grid};

/// Nodes solved together before their contributions are accumulated.
const BATCH: usize = 64;

/// Tensor rule with `P + 1` points per axis up to six dimensions, a Smolyak
/// rule of matching exactness beyond.
pub fn default_rule(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if dim <= 6 {
        gauss_hermite_tensor(dim, degree + 1)
    } else {
        smolyak_sparse(dim, degree + 1)
    }
}

/// Values of every basis polynomial `Phi_i(xi)` of `set`, written to `out`.
fn basis_values(set: &MultiIndexSet, xi: &[f64], table: &mut [f64], out: &mut [f64]) {
    let p = set.degree();
    for (j, x) in xi.iter().enumerate() {
        hermite_table(p, *x, &mut table[j * (p + 1)..(j + 1) * (p + 1)]);
    }
    for (k, index) in set.indices().iter().enumerate() {
        out[k] = index
            .iter()
            .enumerate()
            .map(|(j, n)| table[j * (p + 1) + n])
            .product();
    }
}

/// Evaluates `sum_i coef_i Phi_i(xi)` for a handful of points at once.
#[derive(Debug, Clone)]
struct Basis {
    set: MultiIndexSet,
}

impl Basis {
    fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.set.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.set.dim(),
                got: xi.len(),
            });
        }
        let mut table = vec![0.0; xi.len() * (self.set.degree() + 1)];
        let mut out = vec![0.0; self.set.len()];
        basis_values(&self.set, xi, &mut table, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMetadata {
    pub dim: usize,
    pub degree: usize,
    pub rule: RuleKind,
    pub rule_nodes: usize,
    /// Fingerprint of the conditional expansion the surrogate was built on,
    /// empty when built from a plain function.
    pub fingerprint: String,
    pub grid: Grid,
}

/// `u(x, xi) ~ sum_i c_i(x) Phi_i(xi)` with coefficient fields stored densely
/// on the solver grid.
#[derive(Debug, Clone)]
pub struct GpcSurrogate {
    grid: Arc<Grid>,
    basis: Basis,
    /// `coefficients[k]` holds `c_k` at every grid point.
    coefficients: Vec<Vec<f64>>,
    mean: Field,
    variance: Field,
    rule: RuleKind,
    rule_nodes: usize,
    fingerprint: String,
}

impl GpcSurrogate {
    pub fn from_coefficients(
        grid: Arc<Grid>,
        set: MultiIndexSet,
        coefficients: Vec<Vec<f64>>,
        rule: RuleKind,
        rule_nodes: usize,
        fingerprint: String,
    ) -> Result<Self> {
        if coefficients.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                got: coefficients.len(),
            });
        }
        if let Some(c) = coefficients.iter().find(|c| c.len() != grid.len()) {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: c.len(),
            });
        }
        if set
            .indices()
            .first()
            .is_none_or(|i| i.iter().any(|n| *n != 0))
        {
            return Err(Error::arg("index set must start with the zero index"));
        }
        let mean = Field::new(grid.clone(), coefficients[0].clone())?;
        let mut var = vec![0.0; grid.len()];
        for c in &coefficients[1..] {
            for (v, x) in var.iter_mut().zip(c) {
                *v += x * x;
            }
        }
        let variance = Field::new(grid.clone(), var)?;
        Ok(GpcSurrogate {
            grid,
            basis: Basis { set },
            coefficients,
            mean,
            variance,
            rule,
            rule_nodes,
            fingerprint,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.basis.set
    }

    pub fn dim(&self) -> usize {
        self.basis.set.dim()
    }

    pub fn degree(&self) -> usize {
        self.basis.set.degree()
    }

    pub fn rule(&self) -> RuleKind {
        self.rule
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn coefficient(&self, k: usize) -> Field {
        Field::new(self.grid.clone(), self.coefficients[k].clone()).expect("length checked")
    }

    pub fn coefficient_values(&self, k: usize) -> &[f64] {
        &self.coefficients[k]
    }

    /// `E[u] = c_0`.
    pub fn mean(&self) -> &Field {
        &self.mean
    }

    /// `Var[u] = sum_{|i| >= 1} c_i^2`.
    pub fn variance(&self) -> &Field {
        &self.variance
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Field> {
        let phi = self.basis.eval(xi)?;
        let mut out = vec![0.0; self.grid.len()];
        for (c, f) in self.coefficients.iter().zip(&phi) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += f * v;
            }
        }
        Field::new(self.grid.clone(), out)
    }

    /// Surrogate at an arbitrary point, interpolating the coefficient fields.
    pub fn eval_at(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.at_points(&[x.to_vec()])?.eval(xi).map(|v| v[0])
    }

    /// Restriction of the surrogate to fixed points, for repeated evaluation.
    pub fn at_points(&self, points: &[Vec<f64>]) -> Result<PointSurrogate> {
        let mut coefficients = Vec::with_capacity(points.len());
        for x in points {
            let mut row = Vec::with_capacity(self.coefficients.len());
            for k in 0..self.coefficients.len() {
                row.push(self.coefficient(k).interpolate(x)?);
            }
            coefficients.push(row);
        }
        Ok(PointSurrogate {
            basis: self.basis.clone(),
            coefficients,
        })
    }

    pub fn metadata(&self) -> SurrogateMetadata {
        SurrogateMetadata {
            dim: self.dim(),
            degree: self.degree(),
            rule: self.rule,
            rule_nodes: self.rule_nodes,
            fingerprint: self.fingerprint.clone(),
            grid: (*self.grid).clone(),
        }
    }

    /// Writes `indices.csv`, `coefficient_NNN.csv` and `metadata.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("indices.csv"))?;
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("i{j}")));
        w.write_record(&header)?;
        for (k, index) in self.basis.set.indices().iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(index.iter().map(|n| n.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        for k in 0..self.coefficients.len() {
            self.coefficient(k)
                .save_csv(dir.join(format!("coefficient_{k:03}.csv")))?;
        }
        let meta = File::create(dir.join("metadata.json"))?;
        serde_json::to_writer_pretty(meta, &self.metadata())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SurrogateMetadata =
            serde_json::from_reader(File::open(dir.join("metadata.json"))?)?;
        let grid = Arc::new(meta.grid);
        let mut r = csv::Reader::from_path(dir.join("indices.csv"))?;
        let mut indices = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let index = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::arg(format!("bad multi-index entry: {e}")))?;
            if index.len() != meta.dim {
                return Err(Error::DimensionMismatch {
                    expected: meta.dim,
                    got: index.len(),
                });
            }
            indices.push(index);
        }
        let set = MultiIndexSet::from_indices(meta.dim, indices);
        let coefficients = (0..set.len())
            .map(|k| {
                Field::load_csv(grid.clone(), dir.join(format!("coefficient_{k:03}.csv")))
                    .map(Field::into_values)
            })
            .collect::<Result<Vec<_>>>()?;
        GpcSurrogate::from_coefficients(
            grid,
            set,
            coefficients,
            meta.rule,
            meta.rule_nodes,
            meta.fingerprint,
        )
    }
}

/// Surrogate restricted to a fixed set of points: `u_j(xi) = sum_i C[j][i] Phi_i(xi)`.
#[derive(Debug, Clone)]
pub struct PointSurrogate {
    basis: Basis,
    coefficients: Vec<Vec<f64>>,
}

impl PointSurrogate {
    pub fn dim(&self) -> usize {
        self.basis.set.dim()
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let phi = self.basis.eval(xi)?;
        Ok(self
            .coefficients
            .iter()
            .map(|row| row.iter().zip(&phi).map(|(c, f)| c * f).sum())
            .collect())
    }
}

/// Projects `f(xi)` (one value per grid point) onto the total-degree basis
/// with the given rule. `f` receives the node number and the node.
pub fn build_from_fn<F>(
    grid: Arc<Grid>,
    degree: usize,
    rule: &QuadratureRule,
    f: F,
) -> Result<GpcSurrogate>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let set = MultiIndexSet::total_degree(rule.dim(), degree);
    let n = grid.len();
    let mut coefficients = vec![vec![0.0; n]; set.len()];
    let mut table = vec![0.0; rule.dim() * (degree + 1)];
    let mut phi = vec![0.0; set.len()];
    let nodes = rule.nodes();
    for start in (0..rule.len()).step_by(BATCH) {
        let end = (start + BATCH).min(rule.len());
        let solutions = (start..end)
            .into_par_iter()
            .map(|m| {
                let u = f(m, &nodes[m]).map_err(|e| Error::NodeSolve {
                    node: m,
                    source: Box::new(e),
                })?;
                if u.len() != n {
                    return Err(Error::NodeSolve {
                        node: m,
                        source: Box::new(Error::DimensionMismatch {
                            expected: n,
                            got: u.len(),
                        }),
                    });
                }
                Ok(u)
            })
            .collect::<Result<Vec<_>>>()?;
        for (m, u) in (start..end).zip(solutions) {
            basis_values(&set, &nodes[m], &mut table, &mut phi);
            let w = rule.weights()[m];
            for (c, p) in coefficients.iter_mut().zip(&phi) {
                let s = w * p;
                for (ci, ui) in c.iter_mut().zip(&u) {
                    *ci += s * ui;
                }
            }
        }
    }
    GpcSurrogate::from_coefficients(
        grid,
        set,
        coefficients,
        rule.kind(),
        rule.len(),
        String::new(),
    )
}

/// Collocation surrogate of `model` over the reduced coordinates of `ckl`.
pub fn build_surrogate<M: ForwardModel + ?Sized>(
    ckl: &ConditionalKl,
    model: &M,
    degree: usize,
    rule: &QuadratureRule,
) -> Result<GpcSurrogate> {
    if rule.dim() != ckl.dim() {
        return Err(Error::DimensionMismatch {
            expected: ckl.dim(),
            got: rule.dim(),
        });
    }
    if !model.grid().same_as(ckl.grid()) {
        return Err(Error::GridMismatch(
            "forward model and conditional expansion use different grids".into(),
        ));
    }
    let mut s = build_from_fn(ckl.grid().clone(), degree, rule, |_, xi| {
        let (_, kappa) = ckl.sample(xi)?;
        Ok(model.solve(&kappa)?.into_values())
    })?;
    s.fingerprint = fingerprint(ckl);
    Ok(s)
}

/// FNV-1a hash over the numbers that define a conditional expansion.
pub fn fingerprint(ckl: &ConditionalKl) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(ckl.dim() as f64);
    feed(ckl.sigma());
    ckl.mean().values().iter().for_each(|v| feed(*v));
    ckl.reduced_eigenvalues().iter().for_each(|v| feed(*v));
    ckl.reduced_modes().iter().for_each(|v| feed(*v));
    format!("{h:016x}")
}
