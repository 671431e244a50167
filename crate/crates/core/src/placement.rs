//! Choosing where to measure the state from a variance field: local maxima
//! and saddle points first, then the maxima of blocks that hold no chosen
//! point yet.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{euclid, fmt_f64, Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Maximum,
    Minimum,
    Saddle,
    /// Sign change of the second difference (1D only).
    Inflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub index: usize,
    pub kind: CriticalKind,
}

/// Discrete critical points of `field` in grid order.
///
/// Extrema compare against every existing neighbour (2 in 1D, 8 in 2D), so
/// boundary points qualify through one-sided comparisons. A 2D saddle is an
/// interior point that is a strict maximum along one axis and a strict
/// minimum along the other, which forces the second differences along the
/// two axes to have opposite signs. Ridge points that are monotone along the
/// ridge are not saddles.
pub fn classify_critical_points(field: &Field) -> Vec<CriticalPoint> {
    let grid = field.grid();
    let v = field.values();
    let (n1, n2) = grid.shape();
    let mut out = Vec::new();
    if grid.dimension() == 1 {
        for i in 0..n1 {
            let nb = [i.checked_sub(1), (i + 1 < n1).then_some(i + 1)];
            let nb: Vec<f64> = nb.iter().flatten().map(|k| v[*k]).collect();
            if nb.iter().all(|x| *x < v[i]) {
                out.push(CriticalPoint {
                    index: i,
                    kind: CriticalKind::Maximum,
                });
            } else if nb.iter().all(|x| *x > v[i]) {
                out.push(CriticalPoint {
                    index: i,
                    kind: CriticalKind::Minimum,
                });
            }
        }
        let d2 = |i: usize| v[i - 1] - 2.0 * v[i] + v[i + 1];
        for i in 1..n1.saturating_sub(2) {
            let (a, b) = (d2(i), d2(i + 1));
            if a * b < 0.0 {
                let index = if a.abs() <= b.abs() { i } else { i + 1 };
                out.push(CriticalPoint {
                    index,
                    kind: CriticalKind::Inflection,
                });
            }
        }
        out.sort_by_key(|c| c.index);
        return out;
    }
    for i in 0..n1 {
        for j in 0..n2 {
            let p = grid.index(i, j);
            let mut greater = true;
            let mut smaller = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= n1 as i64 || b >= n2 as i64 {
                        continue;
                    }
                    let q = v[grid.index(a as usize, b as usize)];
                    greater &= q < v[p];
                    smaller &= q > v[p];
                }
            }
            if greater {
                out.push(CriticalPoint {
                    index: p,
                    kind: CriticalKind::Maximum,
                });
            } else if smaller {
                out.push(CriticalPoint {
                    index: p,
                    kind: CriticalKind::Minimum,
                });
            } else if i > 0 && j > 0 && i + 1 < n1 && j + 1 < n2 {
                let (xm, xp) = (v[grid.index(i - 1, j)], v[grid.index(i + 1, j)]);
                let (ym, yp) = (v[grid.index(i, j - 1)], v[grid.index(i, j + 1)]);
                let peak = |a: f64, b: f64| a < v[p] && b < v[p];
                let pit = |a: f64, b: f64| a > v[p] && b > v[p];
                if (peak(xm, xp) && pit(ym, yp)) || (pit(xm, xp) && peak(ym, yp)) {
                    out.push(CriticalPoint {
                        index: p,
                        kind: CriticalKind::Saddle,
                    });
                }
            }
        }
    }
    out
}

/// Descending by value, ties to the lexicographically smaller point (which
/// is the smaller flat index).
fn by_score(v: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| v[*b].total_cmp(&v[*a]).then(a.cmp(b))
}

/// Local maxima and saddle points of a variance field, highest first.
pub fn find_critical_points(variance: &Field) -> Vec<usize> {
    let mut idx: Vec<usize> = classify_critical_points(variance)
        .into_iter()
        .filter(|c| matches!(c.kind, CriticalKind::Maximum | CriticalKind::Saddle))
        .map(|c| c.index)
        .collect();
    idx.sort_by(by_score(variance.values()));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CriticalPoint,
    BlockFallback,
    /// Global fill used when the blocks cannot supply enough points.
    GlobalFill,
    /// Uniform or random comparison placement.
    Baseline,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::CriticalPoint => "critical-point",
            Provenance::BlockFallback => "block-fallback",
            Provenance::GlobalFill => "global-fill",
            Provenance::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub index: usize,
    pub point: Vec<f64>,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub locations: Vec<Location>,
}

impl PlacementResult {
    /// Wraps externally chosen points, scored by `variance`.
    pub fn from_indices(variance: &Field, indices: &[usize], provenance: Provenance) -> Self {
        let grid = variance.grid();
        PlacementResult {
            locations: indices
                .iter()
                .map(|&p| Location {
                    index: p,
                    point: grid.point(p),
                    score: variance.values()[p],
                    provenance,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.locations.iter().map(|l| l.index).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.locations.iter().map(|l| l.point.clone()).collect()
    }

    /// Columns: `rank, index, x1[, x2], score, provenance`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.locations.first().map_or(1, |l| l.point.len());
        let mut header = vec!["rank".to_string(), "index".to_string()];
        header.extend((1..=dim).map(|k| {
            if dim == 1 {
                "x".into()
            } else {
                format!("x{k}")
            }
        }));
        header.extend(["score".to_string(), "provenance".to_string()]);
        w.write_record(&header)?;
        for (r, l) in self.locations.iter().enumerate() {
            let mut rec = vec![r.to_string(), l.index.to_string()];
            rec.extend(l.point.iter().map(fmt_f64));
            rec.push(fmt_f64(&l.score));
            rec.push(l.provenance.as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Block counts `(r, c)` along the two axes with `r * c = n` and blocks as
/// close to square as possible.
pub fn block_shape(grid: &Grid, n: usize) -> (usize, usize) {
    if grid.dimension() == 1 {
        return (n, 1);
    }
    let (l1, l2) = (grid.axis(0).length(), grid.axis(1).length());
    (1..=n)
        .filter(|r| n % r == 0)
        .map(|r| (r, n / r))
        .min_by(|a, b| {
            let m = |(r, c): (usize, usize)| ((l1 / r as f64) / (l2 / c as f64)).ln().abs();
            m(*a).total_cmp(&m(*b))
        })
        .expect("n >= 1")
}

fn block_of(grid: &Grid, shape: (usize, usize), p: usize) -> usize {
    let x = grid.point(p);
    let slot = |k: usize, n: usize| {
        let a = grid.axis(k);
        (((x[k] - a.lo) / a.length() * n as f64).floor().max(0.0) as usize).min(n - 1)
    };
    let r = slot(0, shape.0);
    let c = if grid.dimension() == 2 {
        slot(1, shape.1)
    } else {
        0
    };
    r * shape.1 + c
}

/// Picks `n_k` measurement locations from a variance field.
///
/// Critical points come first by descending variance. If there are fewer
/// than `n_k`, the domain is cut into `n_k` equal blocks and the variance
/// maxima of blocks holding no selected point are added, highest first.
/// Points closer than `min_separation` to an already chosen point are
/// skipped.
pub fn select_locations(
    variance: &Field,
    n_k: usize,
    min_separation: f64,
) -> Result<PlacementResult> {
    let grid = variance.grid();
    if n_k == 0 || n_k > grid.len() {
        return Err(Error::arg(format!(
            "cannot place {n_k} locations on a grid of {} points",
            grid.len()
        )));
    }
    let v = variance.values();
    let mut chosen: Vec<Location> = Vec::with_capacity(n_k);
    let fits = |chosen: &[Location], p: usize| {
        let x = grid.point(p);
        chosen.iter().all(|l| {
            l.index != p && (min_separation <= 0.0 || euclid(&l.point, &x) >= min_separation)
        })
    };
    let push = |chosen: &mut Vec<Location>, p: usize, provenance| {
        chosen.push(Location {
            index: p,
            point: grid.point(p),
            score: v[p],
            provenance,
        })
    };
    for p in find_critical_points(variance) {
        if chosen.len() == n_k {
            break;
        }
        if fits(&chosen, p) {
            push(&mut chosen, p, Provenance::CriticalPoint);
        }
    }
    if chosen.len() < n_k {
        let shape = block_shape(grid, n_k);
        let mut occupied = vec![false; n_k];
        for l in &chosen {
            occupied[block_of(grid, shape, l.index)] = true;
        }
        let mut best: Vec<Option<usize>> = vec![None; n_k];
        let order = by_score(v);
        for p in 0..grid.len() {
            let b = block_of(grid, shape, p);
            if occupied[b] || !fits(&chosen, p) {
                continue;
            }
            if best[b].is_none_or(|q| order(&p, &q) == Ordering::Less) {
                best[b] = Some(p);
            }
        }
        let mut candidates: Vec<usize> = best.into_iter().flatten().collect();
        candidates.sort_by(&order);
        for p in candidates {
            if chosen.len() == n_k {
                break;
            }
            if fits(&chosen, p) {
                push(&mut chosen, p, Provenance::BlockFallback);
            }
        }
    }
    if chosen.len() < n_k {
        let mut rest: Vec<usize> = (0..grid.len()).collect();
        rest.sort_by(by_score(v));
        for p in rest {
            if chosen.len() == n_k {
                break;
            }
            if fits(&chosen, p) {
                push(&mut chosen, p, Provenance::GlobalFill);
            }
        }
    }
    if chosen.len() < n_k {
        warn!(
            "only {} of {n_k} locations satisfy the minimum separation {min_separation}",
            chosen.len()
        );
    }
    Ok(PlacementResult { locations: chosen })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Baseline {
    Uniform,
    Random { seed: u64 },
}

/// Equally spaced interior points, or distinct seeded random points.
///
/// Uniform placement in 1D uses `lo + k (hi - lo) / (n + 1)`, `k = 1..n`; in
/// 2D the same spacing is applied per axis on the block shape of
/// [`block_shape`].
pub fn baseline_locations(grid: &Grid, n_k: usize, baseline: Baseline) -> Result<Vec<usize>> {
    if n_k > grid.len() {
        return Err(Error::arg(format!(
            "cannot place {n_k} locations on a grid of {} points",
            grid.len()
        )));
    }
    match baseline {
        Baseline::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, grid.len(), n_k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        Baseline::Uniform => {
            let (r, c) = block_shape(grid, n_k);
            let at = |k: usize, i: usize, n: usize| {
                let a = grid.axis(k);
                a.lo + a.length() * (i + 1) as f64 / (n + 1) as f64
            };
            let mut out = Vec::with_capacity(n_k);
            for i in 0..r {
                for j in 0..c {
                    let x = if grid.dimension() == 1 {
                        vec![at(0, i, r)]
                    } else {
                        vec![at(0, i, r), at(1, j, c)]
                    };
                    let p = grid.snap(&x)?.index;
                    if out.contains(&p) {
                        return Err(Error::arg(format!(
                            "grid too coarse for {n_k} distinct uniform locations"
                        )));
                    }
                    out.push(p);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(0.0, 1.0, n).unwrap())
    }

    /// Every selection the block rule could make, by brute force.
    fn brute_top(v: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..v.len()).collect();
        all.sort_by(by_score(v));
        all.truncate(k);
        all
    }

    #[test]
    fn sine_squared_peaks() {
        let g = line(301);
        let f = Field::from_fn(g.clone(), |x| (3.0 * PI * x[0]).sin().powi(2));
        let crit = find_critical_points(&f);
        assert_eq!(crit.len(), 3);
        let h = g.axis(0).spacing();
        let mut xs: Vec<f64> = crit.iter().map(|p| g.point(*p)[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (x, peak) in xs.iter().zip([1.0 / 6.0, 0.5, 5.0 / 6.0]) {
            assert!((x - peak).abs() <= h);
        }
    }

    #[test]
    fn monotone_and_constant_fields() {
        let g = line(50);
        let f = Field::from_fn(g.clone(), |x| x[0]);
        assert_eq!(find_critical_points(&f), vec![49]);
        let c = Field::constant(g, 2.0);
        assert!(find_critical_points(&c).is_empty());
        let r = select_locations(&c, 4, 0.0).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r
            .locations
            .iter()
            .all(|l| l.provenance == Provenance::BlockFallback));
    }

    fn three_peaks() -> Field {
        // peaks of height 3, 2, 1 at 0.2, 0.5, 0.8
        Field::from_fn(line(201), |x| {
            let b = |c: f64, h: f64| h * (-((x[0] - c) / 0.05).powi(2)).exp();
            b(0.2, 3.0) + b(0.5, 2.0) + b(0.8, 1.0)
        })
    }

    #[test]
    fn top_peaks_are_selected() {
        let f = three_peaks();
        let r = select_locations(&f, 3, 0.0).unwrap();
        assert_eq!(r.indices(), vec![40, 100, 160]);
        let scores: Vec<f64> = r.locations.iter().map(|l| l.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        // N_k = 1 is the global argmax
        let r1 = select_locations(&f, 1, 0.0).unwrap();
        assert_eq!(r1.indices(), brute_top(f.values(), 1));
    }

    #[test]
    fn block_fallback_fills_empty_blocks() {
        let f = three_peaks();
        let r = select_locations(&f, 6, 0.0).unwrap();
        assert_eq!(r.len(), 6);
        let g = f.grid();
        // six blocks of width 1/6: peaks sit in blocks 1, 3, 4
        let blocks: Vec<usize> = r
            .indices()
            .iter()
            .map(|p| block_of(g, (6, 1), *p))
            .collect();
        assert_eq!(&blocks[..3], &[1, 3, 4]);
        let mut rest = blocks[3..].to_vec();
        rest.sort();
        assert_eq!(rest, vec![0, 2, 5]);
        // each fallback point is the maximum of its block
        let v = f.values();
        for l in &r.locations[3..] {
            assert_eq!(l.provenance, Provenance::BlockFallback);
            let b = block_of(g, (6, 1), l.index);
            let bmax = (0..g.len())
                .filter(|p| block_of(g, (6, 1), *p) == b)
                .map(|p| v[p])
                .fold(f64::MIN, f64::max);
            assert_eq!(l.score, bmax);
        }
        let s: Vec<f64> = r.locations[3..].iter().map(|l| l.score).collect();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn separation_is_enforced() {
        let f = three_peaks();
        let r = select_locations(&f, 6, 0.25).unwrap();
        let pts = r.points();
        for a in 0..pts.len() {
            for b in 0..a {
                assert!(euclid(&pts[a], &pts[b]) >= 0.25);
            }
        }
        assert!(r.len() < 6);
    }

    #[test]
    fn two_d_maxima_and_saddle() {
        let g = Arc::new(Grid::rect((0.0, 1.0), (0.0, 1.0), 41, 41).unwrap());
        // two bumps along x1 joined by a saddle at (0.5, 0.5)
        let f = Field::from_fn(g.clone(), |x| {
            let b = |c: f64| (-((x[0] - c).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp();
            b(0.3) + b(0.7)
        });
        let kinds = classify_critical_points(&f);
        let maxima: Vec<_> = kinds
            .iter()
            .filter(|c| c.kind == CriticalKind::Maximum)
            .collect();
        let saddles: Vec<_> = kinds
            .iter()
            .filter(|c| c.kind == CriticalKind::Saddle)
            .collect();
        assert_eq!(maxima.len(), 2);
        assert_eq!(saddles.len(), 1);
        let s = g.point(saddles[0].index);
        assert!((s[0] - 0.5).abs() < 0.02 && (s[1] - 0.5).abs() < 0.02);
        let r = select_locations(&f, 3, 0.0).unwrap();
        assert!(r
            .locations
            .iter()
            .all(|l| l.provenance == Provenance::CriticalPoint));
    }

    #[test]
    fn block_shapes() {
        let g = Grid::rect((0.0, 240.0), (0.0, 60.0), 80, 20).unwrap();
        assert_eq!(block_shape(&g, 10), (5, 2));
        assert_eq!(block_shape(&g, 4), (4, 1));
        let sq = Grid::rect((0.0, 1.0), (0.0, 1.0), 10, 10).unwrap();
        assert_eq!(block_shape(&sq, 9), (3, 3));
    }

    #[test]
    fn uniform_baseline() {
        let g = Grid::line(0.0, 1.0, 701).unwrap();
        let idx = baseline_locations(&g, 6, Baseline::Uniform).unwrap();
        for (k, p) in idx.iter().enumerate() {
            assert!((g.point(*p)[0] - (k + 1) as f64 / 7.0).abs() <= 0.5 * g.axis(0).spacing());
        }
    }

    #[test]
    fn random_baseline() {
        let g = Grid::line(0.0, 1.0, 40).unwrap();
        let a = baseline_locations(&g, 10, Baseline::Random { seed: 5 }).unwrap();
        let b = baseline_locations(&g, 10, Baseline::Random { seed: 5 }).unwrap();
        assert_eq!(a, b);
        let all = baseline_locations(&g, 40, Baseline::Random { seed: 9 }).unwrap();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert!(baseline_locations(&g, 41, Baseline::Uniform).is_err());
    }

    #[test]
    fn csv_export() {
        let r = select_locations(&three_peaks(), 2, 0.0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rank,index,x,score,provenance\n0,40,0.2,"));
        assert!(text.contains("critical-point"));
    }

    #[test]
    fn one_d_inflections() {
        let g = line(101);
        let f = Field::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin());
        let c = classify_critical_points(&f);
        assert!(c
            .iter()
            .any(|c| c.kind == CriticalKind::Inflection && c.index == 50));
        assert!(c
            .iter()
            .any(|c| c.kind == CriticalKind::Maximum && c.index == 25));
        assert!(c
            .iter()
            .any(|c| c.kind == CriticalKind::Minimum && c.index == 75));
    }

    proptest! {
        #[test]
        fn scaling_leaves_selection_unchanged(
            vals in proptest::collection::vec(0.0f64..1.0, 30..60),
            alpha in 0.01f64..100.0,
            k in 1usize..8,
        ) {
            let g = Arc::new(Grid::line(0.0, 1.0, vals.len()).unwrap());
            let a = Field::new(g.clone(), vals.clone()).unwrap();
            let b = Field::new(g, vals.iter().map(|v| v * alpha).collect()).unwrap();
            let ra = select_locations(&a, k, 0.0).unwrap();
            let rb = select_locations(&b, k, 0.0).unwrap();
            prop_assert_eq!(ra.indices(), rb.indices());
            for l in &ra.locations {
                prop_assert_eq!(l.score, vals[l.index]);
            }
            let mut uniq = ra.indices();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), k);
        }

        #[test]
        fn enough_maxima_means_top_maxima(
            vals in proptest::collection::vec(0.0f64..1.0, 30..80),
            k in 1usize..4,
        ) {
            let g = Arc::new(Grid::line(0.0, 1.0, vals.len()).unwrap());
            let f = Field::new(g, vals.clone()).unwrap();
            let crit = find_critical_points(&f);
            prop_assume!(crit.len() >= k);
            let r = select_locations(&f, k, 0.0).unwrap();
            prop_assert_eq!(r.indices(), crit[..k].to_vec());
        }
    }
}
