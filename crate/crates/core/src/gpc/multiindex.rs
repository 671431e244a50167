use serde::{Deserialize, Serialize};

/// Total-degree multi-index set `{ i : |i| <= P }` in graded-lexicographic
/// order: by total degree, then by descending leading components, so the
/// zero index comes first and `e_1` precedes `e_2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn total_degree(dim: usize, degree: usize) -> Self {
        let mut indices = Vec::new();
        for t in 0..=degree {
            let mut cur = vec![0; dim];
            compositions(t, 0, &mut cur, &mut indices);
        }
        MultiIndexSet {
            dim,
            degree,
            indices,
        }
    }

    /// Rebuilds a set from explicit indices (e.g. read back from disk).
    pub fn from_indices(dim: usize, indices: Vec<Vec<usize>>) -> Self {
        let degree = indices
            .iter()
            .map(|i| i.iter().sum::<usize>())
            .max()
            .unwrap_or(0);
        MultiIndexSet {
            dim,
            degree,
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn get(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    /// Position of `index` in the set, if present.
    pub fn position_of(&self, index: &[usize]) -> Option<usize> {
        self.indices.iter().position(|i| i == index)
    }
}

fn compositions(remaining: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if k + 1 == cur.len() {
        cur[k] = remaining;
        out.push(cur.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        cur[k] = v;
        compositions(remaining - v, k + 1, cur, out);
    }
    cur[k] = 0;
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinalities() {
        assert_eq!(MultiIndexSet::total_degree(5, 3).len(), 56);
        for d in 1..6 {
            for p in 0..5 {
                assert_eq!(MultiIndexSet::total_degree(d, p).len(), binomial(d + p, p));
            }
        }
    }

    #[test]
    fn explicit_orders() {
        let s = MultiIndexSet::total_degree(1, 4);
        assert_eq!(s.indices(), &[vec![0], vec![1], vec![2], vec![3], vec![4]]);
        let s = MultiIndexSet::total_degree(2, 2);
        assert_eq!(
            s.indices(),
            &[
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn distinct_and_graded() {
        let s = MultiIndexSet::total_degree(4, 4);
        let mut seen = std::collections::HashSet::new();
        let mut last = 0;
        for i in s.indices() {
            assert!(seen.insert(i.clone()));
            let t: usize = i.iter().sum();
            assert!(t >= last && t <= 4);
            last = t;
        }
    }
}
