//! Uniform 1D/2D meshes and scalar fields sampled on them.
//!
//! One-dimensional grids store values on nodes (the finite-element unknowns)
//! and integrate with trapezoid weights. Two-dimensional grids store values on
//! cell centers (the finite-volume unknowns) and integrate with the cell
//! measure. Points of a 2D grid are ordered lexicographically by `(x1, x2)`,
//! so the flat index of cell `(i, j)` is `i * n2 + j`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the unknowns of an axis live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Nodes,
    Cells,
}

/// One uniformly partitioned axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    /// Node count for [`Layout::Nodes`], cell count for [`Layout::Cells`].
    pub count: usize,
    pub layout: Layout,
}

impl Axis {
    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.hi <= self.lo {
            return Err(Error::InvalidGrid(format!(
                "degenerate extent [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.count < 2 {
            return Err(Error::InvalidGrid(format!(
                "axis needs at least 2 points, got {}",
                self.count
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Distance between neighbouring points.
    pub fn spacing(&self) -> f64 {
        match self.layout {
            Layout::Nodes => self.length() / (self.count - 1) as f64,
            Layout::Cells => self.length() / self.count as f64,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        let h = self.spacing();
        match self.layout {
            Layout::Nodes if i + 1 == self.count => self.hi,
            Layout::Nodes => self.lo + h * i as f64,
            Layout::Cells => self.lo + h * (i as f64 + 0.5),
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.coord(i)).collect()
    }

    /// Quadrature weights along this axis (trapezoid on nodes, cell width on
    /// cells).
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.count];
        if self.layout == Layout::Nodes {
            w[0] = 0.5 * h;
            w[self.count - 1] = 0.5 * h;
        }
        w
    }

    fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * self.length();
        x >= self.lo - tol && x <= self.hi + tol
    }

    fn nearest(&self, x: f64) -> usize {
        let h = self.spacing();
        let t = match self.layout {
            Layout::Nodes => (x - self.lo) / h,
            Layout::Cells => (x - self.lo) / h - 0.5,
        };
        (t.round().max(0.0) as usize).min(self.count - 1)
    }

    /// Left interpolation index and fractional offset in `[0, 1]`.
    fn bracket(&self, x: f64) -> (usize, f64) {
        let h = self.spacing();
        let t = match self.layout {
            Layout::Nodes => (x - self.lo) / h,
            Layout::Cells => (x - self.lo) / h - 0.5,
        };
        let t = t.clamp(0.0, (self.count - 1) as f64);
        let r = t.round();
        // land exactly on stored values at grid points
        let t = if (t - r).abs() < 1e-9 { r } else { t };
        let i = (t.floor() as usize).min(self.count - 2);
        (i, t - i as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    axes: Vec<Axis>,
}

/// A uniform tensor mesh with cached point coordinates and quadrature weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    axes: Vec<Axis>,
    weights: Vec<f64>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid::from_axes(spec.axes)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec { axes: g.axes }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

impl Grid {
    /// Builds a 1D node grid or a 2D cell-centered grid.
    ///
    /// `extents[k]` is the interval of axis `k` and `counts[k]` its node (1D)
    /// or cell (2D) count.
    pub fn build(dimension: usize, extents: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dimension) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dimension}"
            )));
        }
        if extents.len() != dimension || counts.len() != dimension {
            return Err(Error::InvalidGrid(format!(
                "expected {dimension} extents and counts, got {} and {}",
                extents.len(),
                counts.len()
            )));
        }
        let layout = if dimension == 1 {
            Layout::Nodes
        } else {
            Layout::Cells
        };
        let axes = extents
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &count)| Axis {
                lo,
                hi,
                count,
                layout,
            })
            .collect();
        Self::from_axes(axes)
    }

    /// 1D grid with `nodes` equally spaced nodes on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::build(1, &[(lo, hi)], &[nodes])
    }

    /// 2D cell-centered grid with `n1 x n2` cells.
    pub fn rect(x1: (f64, f64), x2: (f64, f64), n1: usize, n2: usize) -> Result<Self> {
        Self::build(2, &[x1, x2], &[n1, n2])
    }

    fn from_axes(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid("expected one or two axes".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        let weights = match axes.as_slice() {
            [a] => a.weights(),
            [a, b] => {
                let (wa, wb) = (a.weights(), b.weights());
                wa.iter()
                    .flat_map(|&x| wb.iter().map(move |&y| x * y))
                    .collect()
            }
            _ => unreachable!(),
        };
        Ok(Grid { axes, weights })
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    /// Per-axis point counts.
    pub fn shape(&self) -> (usize, usize) {
        match self.axes.as_slice() {
            [a] => (a.count, 1),
            [a, b] => (a.count, b.count),
            _ => unreachable!(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        self.axes.iter().map(Axis::length).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.shape().1 + j
    }

    /// Axis indices `(i, j)` of a flat point index (`j = 0` in 1D).
    pub fn ij(&self, p: usize) -> (usize, usize) {
        let n2 = self.shape().1;
        (p / n2, p % n2)
    }

    /// Coordinates of point `p`; the returned vector has `dimension()` entries.
    pub fn point(&self, p: usize) -> Vec<f64> {
        let (i, j) = self.ij(p);
        match self.axes.as_slice() {
            [a] => vec![a.coord(i)],
            [a, b] => vec![a.coord(i), b.coord(j)],
            _ => unreachable!(),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|p| self.point(p)).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dimension() && self.axes.iter().zip(point).all(|(a, &x)| a.contains(x))
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: point.len(),
            });
        }
        if !self.contains(point) {
            return Err(Error::OutOfDomain {
                point: point.to_vec(),
            });
        }
        Ok(())
    }

    /// Nearest grid point to `point`.
    pub fn snap(&self, point: &[f64]) -> Result<Snapped> {
        self.check_point(point)?;
        let idx: Vec<usize> = self
            .axes
            .iter()
            .zip(point)
            .map(|(a, &x)| a.nearest(x))
            .collect();
        let index = match idx.as_slice() {
            [i] => *i,
            [i, j] => self.index(*i, *j),
            _ => unreachable!(),
        };
        let distance = euclid(&self.point(index), point);
        Ok(Snapped { index, distance })
    }

    /// Flat indices of the 4-neighbours (2 in 1D) of point `p` inside the grid.
    pub fn neighbours(&self, p: usize) -> Vec<usize> {
        let (n1, n2) = self.shape();
        let (i, j) = self.ij(p);
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(self.index(i - 1, j));
        }
        if i + 1 < n1 {
            out.push(self.index(i + 1, j));
        }
        if self.dimension() == 2 {
            if j > 0 {
                out.push(self.index(i, j - 1));
            }
            if j + 1 < n2 {
                out.push(self.index(i, j + 1));
            }
        }
        out
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

/// Result of snapping an arbitrary location to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapped {
    pub index: usize,
    pub distance: f64,
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A scalar function sampled at every point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Field { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|p| f(&grid.point(p))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different grids".into()))
        }
    }

    /// Discrete L2 inner product `sum_p w_p f_p g_p`.
    pub fn inner_product(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Piecewise-linear (1D) or bilinear-from-cell-centers (2D) value at
    /// `point`. In the half cells between the outermost cell centers and the
    /// boundary the nearest center row/column is used.
    pub fn interpolate(&self, point: &[f64]) -> Result<f64> {
        self.grid.check_point(point)?;
        let axes = self.grid.axes();
        match axes {
            [a] => {
                let (i, t) = a.bracket(point[0]);
                Ok((1.0 - t) * self.values[i] + t * self.values[i + 1])
            }
            [a, b] => {
                let (i, s) = a.bracket(point[0]);
                let (j, t) = b.bracket(point[1]);
                let v = |ii: usize, jj: usize| self.values[self.grid.index(ii, jj)];
                Ok((1.0 - s) * (1.0 - t) * v(i, j)
                    + s * (1.0 - t) * v(i + 1, j)
                    + (1.0 - s) * t * v(i, j + 1)
                    + s * t * v(i + 1, j + 1))
            }
            _ => unreachable!(),
        }
    }

    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Writes one row per point: coordinates followed by the value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.grid.dimension() == 1 {
            w.write_record(["x", "value"])?;
        } else {
            w.write_record(["x1", "x2", "value"])?;
        }
        for (p, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.point(p).iter().map(fmt_f64).collect();
            row.push(fmt_f64(v));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a field written by [`Field::write_csv`] back onto `grid`. Rows
    /// must appear in grid order and their coordinates must match.
    pub fn read_csv<R: Read>(grid: Arc<Grid>, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = grid.dimension();
        let mut values = Vec::with_capacity(grid.len());
        for (p, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim + 1 {
                return Err(Error::GridMismatch(format!(
                    "row {p} has {} columns, expected {}",
                    rec.len(),
                    dim + 1
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::arg(format!("row {p}: {e}")))
            };
            if p < grid.len() {
                let expect = grid.point(p);
                for k in 0..dim {
                    let c = parse(&rec[k])?;
                    if (c - expect[k]).abs() > 1e-9 * grid.axis(k).length() {
                        return Err(Error::GridMismatch(format!(
                            "row {p} coordinate {c} does not match grid {}",
                            expect[k]
                        )));
                    }
                }
            }
            values.push(parse(&rec[dim])?);
        }
        Field::new(grid, values)
    }

    pub fn load_csv(grid: Arc<Grid>, path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(grid, std::io::BufReader::new(file))
    }
}

/// Shortest decimal representation that round-trips.
pub(crate) fn fmt_f64(v: &f64) -> String {
    format!("{v:?}")
}
