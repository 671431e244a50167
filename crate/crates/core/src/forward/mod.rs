//! Steady-state diffusion solvers `div(kappa grad u) = 0`.
//!
//! The 1D solver uses linear finite elements on the node grid, the 2D solver a
//! two-point-flux finite-volume scheme on the cell grid. In both, the
//! conductivity between two unknowns is the harmonic mean of their values.
//! Systems are assembled into a banded SPD matrix and solved by banded
//! Cholesky.

mod banded;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub use banded::{BandedCholesky, BandedSpd};

/// Condition imposed on one side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Prescribed head.
    Dirichlet(f64),
    /// Prescribed outward normal flux `-kappa grad(u) . n` per unit boundary
    /// measure.
    Neumann(f64),
}

impl Side {
    pub const NO_FLUX: Side = Side::Neumann(0.0);

    fn is_dirichlet(&self) -> bool {
        matches!(self, Side::Dirichlet(_))
    }
}

/// Boundary conditions for the four sides of a rectangle; `bottom` and `top`
/// are ignored in 1D, where `left` is `x = lo` and `right` is `x = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub left: Side,
    pub right: Side,
    #[serde(default = "no_flux")]
    pub bottom: Side,
    #[serde(default = "no_flux")]
    pub top: Side,
}

fn no_flux() -> Side {
    Side::NO_FLUX
}

impl BoundaryConditions {
    /// Dirichlet heads on the left and right sides, no flux elsewhere.
    pub fn left_right(left: f64, right: f64) -> Self {
        BoundaryConditions {
            left: Side::Dirichlet(left),
            right: Side::Dirichlet(right),
            bottom: Side::NO_FLUX,
            top: Side::NO_FLUX,
        }
    }

    fn sides(&self, dimension: usize) -> Vec<Side> {
        if dimension == 1 {
            vec![self.left, self.right]
        } else {
            vec![self.left, self.right, self.bottom, self.top]
        }
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        let sides = self.sides(dimension);
        if !sides.iter().any(Side::is_dirichlet) {
            return Err(Error::Singular(
                "at least one Dirichlet boundary is required".into(),
            ));
        }
        for s in sides {
            let (Side::Dirichlet(v) | Side::Neumann(v)) = s;
            if !v.is_finite() {
                return Err(Error::arg("boundary value must be finite"));
            }
        }
        Ok(())
    }

    /// Range spanned by the Dirichlet values.
    pub fn dirichlet_range(&self, dimension: usize) -> Option<(f64, f64)> {
        self.sides(dimension)
            .into_iter()
            .filter_map(|s| match s {
                Side::Dirichlet(v) => Some(v),
                Side::Neumann(_) => None,
            })
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Anything that maps a conductivity field to a state field.
pub trait ForwardModel: Sync {
    fn grid(&self) -> &Arc<Grid>;
    fn solve(&self, kappa: &Field) -> Result<Field>;
}

/// Finite-element (1D) / finite-volume (2D) diffusion solver.
#[derive(Debug, Clone)]
pub struct DiffusionSolver {
    grid: Arc<Grid>,
    bc: BoundaryConditions,
}

impl DiffusionSolver {
    pub fn new(grid: Arc<Grid>, bc: BoundaryConditions) -> Result<Self> {
        bc.validate(grid.dimension())?;
        Ok(DiffusionSolver { grid, bc })
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bc
    }
}

impl ForwardModel for DiffusionSolver {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn solve(&self, kappa: &Field) -> Result<Field> {
        if !kappa.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch(
                "conductivity is not on the solver grid".into(),
            ));
        }
        match self.grid.dimension() {
            1 => solve_1d(kappa, &self.bc),
            _ => solve_2d(kappa, &self.bc),
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn check_positive(kappa: &Field) -> Result<()> {
    match kappa
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        Some((index, &value)) => Err(Error::NonPositiveConductivity { index, value }),
        None => Ok(()),
    }
}

/// Linear finite elements on the node grid; element conductivity is the
/// harmonic mean of its two node values.
pub fn solve_1d(kappa: &Field, bc: &BoundaryConditions) -> Result<Field> {
    let grid = kappa.grid().clone();
    if grid.dimension() != 1 {
        return Err(Error::InvalidGrid("solve_1d needs a 1D grid".into()));
    }
    bc.validate(1)?;
    check_positive(kappa)?;
    let k = kappa.values();
    let n = k.len();
    let h = grid.axis(0).spacing();

    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let mut load = vec![0.0; n];
    for (node, side) in [(0, bc.left), (n - 1, bc.right)] {
        match side {
            Side::Dirichlet(v) => fixed[node] = Some(v),
            Side::Neumann(q) => load[node] -= q,
        }
    }

    // free nodes are contiguous: skip a fixed end on either side
    let first = usize::from(fixed[0].is_some());
    let last = if fixed[n - 1].is_some() { n - 2 } else { n - 1 };
    let m = last + 1 - first;
    let mut a = BandedSpd::zeros(m, 1);
    let mut rhs: Vec<f64> = load[first..=last].to_vec();
    for e in 0..n - 1 {
        let ke = harmonic(k[e], k[e + 1]) / h;
        for (p, q) in [(e, e), (e + 1, e + 1), (e, e + 1), (e + 1, e)] {
            let v = if p == q { ke } else { -ke };
            match (fixed[p], fixed[q]) {
                (None, None) => {
                    if p >= q {
                        a.add(p - first, q - first, v);
                    }
                }
                (None, Some(uq)) => rhs[p - first] -= v * uq,
                _ => {}
            }
        }
    }
    let x = a.factor()?.solve(&rhs);
    let mut u = vec![0.0; n];
    for (node, val) in u.iter_mut().enumerate() {
        *val = match fixed[node] {
            Some(v) => v,
            None => x[node - first],
        };
    }
    Field::new(grid, u)
}

/// Two-point-flux finite volumes on the cell grid. Interior transmissibility
/// uses the harmonic mean of the adjacent cells; a Dirichlet face uses the
/// boundary cell's conductivity over a half cell.
pub fn solve_2d(kappa: &Field, bc: &BoundaryConditions) -> Result<Field> {
    let grid = kappa.grid().clone();
    if grid.dimension() != 2 {
        return Err(Error::InvalidGrid("solve_2d needs a 2D grid".into()));
    }
    bc.validate(2)?;
    check_positive(kappa)?;
    let k = kappa.values();
    let (n1, n2) = grid.shape();
    let (h1, h2) = (grid.axis(0).spacing(), grid.axis(1).spacing());

    // order unknowns along the longer axis first to keep the band narrow
    let x1_major = n2 <= n1;
    let bandwidth = if x1_major { n2 } else { n1 };
    let slot = |i: usize, j: usize| if x1_major { i * n2 + j } else { j * n1 + i };

    let n = n1 * n2;
    let mut a = BandedSpd::zeros(n, bandwidth);
    let mut rhs = vec![0.0; n];
    let t1 = h2 / h1;
    let t2 = h1 / h2;
    for i in 0..n1 {
        for j in 0..n2 {
            let p = grid.index(i, j);
            let sp = slot(i, j);
            if i + 1 < n1 {
                let q = grid.index(i + 1, j);
                let t = t1 * harmonic(k[p], k[q]);
                let sq = slot(i + 1, j);
                a.add(sp, sp, t);
                a.add(sq, sq, t);
                a.add(sp, sq, -t);
            }
            if j + 1 < n2 {
                let q = grid.index(i, j + 1);
                let t = t2 * harmonic(k[p], k[q]);
                let sq = slot(i, j + 1);
                a.add(sp, sp, t);
                a.add(sq, sq, t);
                a.add(sp, sq, -t);
            }
            let mut boundary = |side: Side, half_t: f64, face: f64| match side {
                Side::Dirichlet(v) => {
                    let t = 2.0 * half_t * k[p];
                    a.add(sp, sp, t);
                    rhs[sp] += t * v;
                }
                Side::Neumann(q) => rhs[sp] -= q * face,
            };
            if i == 0 {
                boundary(bc.left, t1, h2);
            }
            if i + 1 == n1 {
                boundary(bc.right, t1, h2);
            }
            if j == 0 {
                boundary(bc.bottom, t2, h1);
            }
            if j + 1 == n2 {
                boundary(bc.top, t2, h1);
            }
        }
    }
    let x = a.factor()?.solve(&rhs);
    let mut u = vec![0.0; n];
    for i in 0..n1 {
        for j in 0..n2 {
            u[grid.index(i, j)] = x[slot(i, j)];
        }
    }
    Field::new(grid, u)
}

/// Total flux in the `+x1` direction across the vertical face line `i`
/// (`0` is the left boundary, `n1` the right boundary) of a 2D solution.
pub fn x1_face_flux(kappa: &Field, u: &Field, bc: &BoundaryConditions, i: usize) -> f64 {
    let grid = kappa.grid();
    let (n1, n2) = grid.shape();
    let (h1, h2) = (grid.axis(0).spacing(), grid.axis(1).spacing());
    let (k, u) = (kappa.values(), u.values());
    (0..n2)
        .map(|j| {
            if i == 0 || i == n1 {
                let cell = grid.index(if i == 0 { 0 } else { n1 - 1 }, j);
                let side = if i == 0 { bc.left } else { bc.right };
                match side {
                    Side::Dirichlet(v) => {
                        let t = 2.0 * h2 / h1 * k[cell];
                        if i == 0 {
                            t * (v - u[cell])
                        } else {
                            t * (u[cell] - v)
                        }
                    }
                    Side::Neumann(q) => {
                        if i == 0 {
                            -q * h2
                        } else {
                            q * h2
                        }
                    }
                }
            } else {
                let (p, q) = (grid.index(i - 1, j), grid.index(i, j));
                h2 / h1 * harmonic(k[p], k[q]) * (u[p] - u[q])
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(0.0, 1.0, n).unwrap())
    }

    fn smooth_2d() -> Arc<Grid> {
        Arc::new(Grid::rect((0.0, 240.0), (0.0, 60.0), 80, 20).unwrap())
    }

    #[test]
    fn constant_kappa_1d_is_linear() {
        let g = line(257);
        let bc = BoundaryConditions::left_right(0.0, 2.0);
        for c in [1.0, 3.7] {
            let u = solve_1d(&Field::constant(g.clone(), c), &bc).unwrap();
            for (p, v) in u.values().iter().enumerate() {
                assert!((v - 2.0 * g.point(p)[0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn two_layer_interface_value() {
        let (k1, k2) = (1.0, 4.0);
        let exact = 0.0 + 2.0 * k2 / (k1 + k2);
        let mut prev = f64::INFINITY;
        for n in [65, 129, 257, 513] {
            let g = line(n);
            let kappa = Field::from_fn(g.clone(), |p| if p[0] < 0.5 { k1 } else { k2 });
            let u = solve_1d(&kappa, &BoundaryConditions::left_right(0.0, 2.0)).unwrap();
            let err = (u.interpolate(&[0.5]).unwrap() - exact).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 5e-3, "{prev}");
    }

    #[test]
    fn refinement_converges_for_smooth_kappa() {
        // compare each mesh against a fine reference at shared nodes
        let kfun = |x: f64| (1.5 * (6.0 * x).sin() + 0.3 * x).exp();
        let bc = BoundaryConditions::left_right(0.0, 2.0);
        let fine = {
            let g = line(4097);
            solve_1d(&Field::from_fn(g, |p| kfun(p[0])), &bc).unwrap()
        };
        let err = |n: usize| {
            let g = line(n);
            let u = solve_1d(&Field::from_fn(g.clone(), |p| kfun(p[0])), &bc).unwrap();
            (0..n)
                .map(|p| (u.values()[p] - fine.interpolate(&g.point(p)).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(65), err(129));
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn residual_and_monotonicity_1d() {
        let g = line(129);
        let kappa = Field::from_fn(g.clone(), |p| 1.0 + 0.9 * (20.0 * p[0]).sin());
        let u = solve_1d(&kappa, &BoundaryConditions::left_right(0.0, 2.0)).unwrap();
        assert_eq!(u.values()[0], 0.0);
        assert_eq!(u.values()[128], 2.0);
        for w in u.values().windows(2) {
            assert!(w[1] >= w[0]);
        }
        // flux through every element is the same
        let h = g.axis(0).spacing();
        let k = kappa.values();
        let fluxes: Vec<f64> = (0..128)
            .map(|e| harmonic(k[e], k[e + 1]) * (u.values()[e + 1] - u.values()[e]) / h)
            .collect();
        for f in &fluxes {
            assert!((f - fluxes[0]).abs() < 1e-10 * fluxes[0].abs());
        }
    }

    #[test]
    fn neumann_end_1d() {
        // u(0) = 1, outward flux q at x = 1 with kappa = 2: u = 1 - q x / 2
        let g = line(11);
        let bc = BoundaryConditions {
            left: Side::Dirichlet(1.0),
            right: Side::Neumann(0.4),
            ..BoundaryConditions::left_right(0.0, 0.0)
        };
        let u = solve_1d(&Field::constant(g.clone(), 2.0), &bc).unwrap();
        for p in 0..11 {
            assert!((u.values()[p] - (1.0 - 0.2 * g.point(p)[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let g = line(9);
        let bc = BoundaryConditions::left_right(0.0, 1.0);
        let mut k = Field::constant(g.clone(), 1.0);
        k.values_mut()[3] = 0.0;
        assert!(matches!(
            solve_1d(&k, &bc),
            Err(Error::NonPositiveConductivity { index: 3, .. })
        ));
        let all_neumann = BoundaryConditions {
            left: Side::NO_FLUX,
            right: Side::NO_FLUX,
            ..bc
        };
        assert!(matches!(
            solve_1d(&Field::constant(g, 1.0), &all_neumann),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn constant_kappa_2d_is_linear_in_x1() {
        let g = smooth_2d();
        let bc = BoundaryConditions::left_right(50.0, 25.0);
        let u = solve_2d(&Field::constant(g.clone(), 5.0), &bc).unwrap();
        for p in 0..g.len() {
            let x = g.point(p)[0];
            assert!((u.values()[p] - (50.0 - 25.0 * x / 240.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn checkerboard_flux_balance() {
        let g = smooth_2d();
        let bc = BoundaryConditions::left_right(50.0, 25.0);
        let kappa = Field::from_fn(g.clone(), |p| {
            let a = (p[0] / 120.0) as usize;
            let b = (p[1] / 30.0) as usize;
            if (a + b) % 2 == 0 {
                1.0
            } else {
                20.0
            }
        });
        let u = solve_2d(&kappa, &bc).unwrap();
        let inflow = x1_face_flux(&kappa, &u, &bc, 0);
        let outflow = x1_face_flux(&kappa, &u, &bc, 80);
        assert!(inflow > 0.0);
        assert!((inflow - outflow).abs() < 1e-10 * inflow.abs());
        for i in 1..80 {
            let f = x1_face_flux(&kappa, &u, &bc, i);
            assert!((f - inflow).abs() < 1e-8 * inflow.abs(), "cut {i}");
        }
    }

    #[test]
    fn short_wide_grid_uses_other_ordering() {
        // n2 > n1 exercises the x2-major band
        let g = Arc::new(Grid::rect((0.0, 1.0), (0.0, 3.0), 4, 12).unwrap());
        let bc = BoundaryConditions::left_right(1.0, 0.0);
        let kappa = Field::from_fn(g.clone(), |p| 1.0 + p[1]);
        let u = solve_2d(&kappa, &bc).unwrap();
        // every row is a 1D problem with constant kappa
        for p in 0..g.len() {
            let x = g.point(p)[0];
            assert!((u.values()[p] - (1.0 - x)).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn maximum_principle_and_scaling_2d(
            logk in proptest::collection::vec(-2.0f64..2.0, 48),
            alpha in 0.1f64..10.0,
        ) {
            let g = Arc::new(Grid::rect((0.0, 240.0), (0.0, 60.0), 8, 6).unwrap());
            let bc = BoundaryConditions::left_right(50.0, 25.0);
            let kappa = Field::new(g.clone(), logk.iter().map(|v| v.exp()).collect()).unwrap();
            let u = solve_2d(&kappa, &bc).unwrap();
            for v in u.values() {
                prop_assert!(*v >= 25.0 - 1e-10 && *v <= 50.0 + 1e-10);
            }
            let scaled = solve_2d(&kappa.map(|v| alpha * v), &bc).unwrap();
            prop_assert!(u.max_abs_diff(&scaled).unwrap() < 1e-10);
        }

        #[test]
        fn scaling_invariance_1d(
            logk in proptest::collection::vec(-2.0f64..2.0, 33),
            alpha in 0.1f64..10.0,
        ) {
            let g = line(33);
            let bc = BoundaryConditions::left_right(0.0, 2.0);
            let kappa = Field::new(g, logk.iter().map(|v| v.exp()).collect()).unwrap();
            let u = solve_1d(&kappa, &bc).unwrap();
            let scaled = solve_1d(&kappa.map(|v| alpha * v), &bc).unwrap();
            prop_assert!(u.max_abs_diff(&scaled).unwrap() < 1e-12);
        }
    }
}
