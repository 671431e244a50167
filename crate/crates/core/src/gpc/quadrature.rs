//! Gauss-Hermite rules for the standard normal measure, their tensor
//! products, and Smolyak sparse combinations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::multiindex::binomial;
use crate::error::{Error, Result};

/// Default cap on the number of tensor-rule nodes.
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleKind {
    /// Full tensor product of `points`-node Gauss-Hermite rules.
    Tensor { points: usize },
    /// Smolyak combination at the given level.
    Sparse { level: usize },
}

/// Nodes and weights for integrating against the standard normal density in
/// `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    dim: usize,
    kind: RuleKind,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// `n`-node Gauss-Hermite rule for the standard normal weight (Golub-Welsch),
/// nodes ascending, weights summing to one.
pub fn gauss_hermite_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a quadrature rule needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // enforce the exact symmetry of the rule about zero
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Tensor product of `points`-node rules in `dim` dimensions; exact for every
/// polynomial of degree at most `2 * points - 1` in each variable.
pub fn gauss_hermite_tensor(dim: usize, points: usize) -> Result<QuadratureRule> {
    gauss_hermite_tensor_with_budget(dim, points, DEFAULT_NODE_BUDGET)
}

pub fn gauss_hermite_tensor_with_budget(
    dim: usize,
    points: usize,
    budget: usize,
) -> Result<QuadratureRule> {
    if dim == 0 || points == 0 {
        return Err(Error::arg("tensor rule needs dim >= 1 and points >= 1"));
    }
    let total = (points as f64).powi(dim as i32);
    if total > budget as f64 {
        return Err(Error::arg(format!(
            "tensor rule with {points}^{dim} nodes exceeds the budget of {budget}"
        )));
    }
    let rule = gauss_hermite_1d(points);
    let (nodes, weights) = tensor(&vec![rule; dim]);
    Ok(QuadratureRule {
        dim,
        kind: RuleKind::Tensor { points },
        nodes,
        weights,
    })
}

/// Tensor product of per-axis rules, first axis slowest.
fn tensor(rules: &[(Vec<f64>, Vec<f64>)]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut nodes = vec![Vec::with_capacity(rules.len())];
    let mut weights = vec![1.0];
    for (x, w) in rules {
        let mut nn = Vec::with_capacity(nodes.len() * x.len());
        let mut nw = Vec::with_capacity(nodes.len() * x.len());
        for (node, weight) in nodes.iter().zip(&weights) {
            for (xi, wi) in x.iter().zip(w) {
                let mut p = node.clone();
                p.push(*xi);
                nn.push(p);
                nw.push(weight * wi);
            }
        }
        nodes = nn;
        weights = nw;
    }
    (nodes, weights)
}

/// Smolyak sparse rule built from `l`-node Gauss-Hermite rules at 1D level
/// `l`; exact for polynomials of total degree at most `2 * level - 1`.
/// Coincident nodes are merged, so weights may be negative.
pub fn smolyak_sparse(dim: usize, level: usize) -> Result<QuadratureRule> {
    if dim == 0 || level == 0 {
        return Err(Error::arg("sparse rule needs dim >= 1 and level >= 1"));
    }
    let q = level + dim - 1;
    let lo = dim.max(level);
    let mut acc: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
    let mut levels = vec![1usize; dim];
    loop {
        let s: usize = levels.iter().sum();
        if (lo..=q).contains(&s) {
            let k = q - s;
            let coef = binomial(dim - 1, k) as f64 * if k % 2 == 0 { 1.0 } else { -1.0 };
            let rules: Vec<_> = levels.iter().map(|&l| gauss_hermite_1d(l)).collect();
            let (nodes, weights) = tensor(&rules);
            for (x, w) in nodes.into_iter().zip(weights) {
                let key = x.iter().map(|v| (v * 1e10).round() as i64).collect();
                acc.entry(key).or_insert((x, 0.0)).1 += coef * w;
            }
        }
        // next level multi-index with every entry in 1..=level
        let mut k = dim;
        loop {
            if k == 0 {
                let (nodes, weights): (Vec<_>, Vec<_>) =
                    acc.into_values().filter(|(_, w)| *w != 0.0).unzip();
                return Ok(QuadratureRule {
                    dim,
                    kind: RuleKind::Sparse { level },
                    nodes,
                    weights,
                });
            }
            k -= 1;
            if levels[k] < level {
                levels[k] += 1;
                break;
            }
            levels[k] = 1;
        }
    }
}
