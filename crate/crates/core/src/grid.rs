//! Uniform age/time discretizations, node-valued containers and composite
//! trapezoid quadrature.
//!
//! Every solver in the crate works on the same pair of grids: an age grid
//! `0 = a_0 < a_1 < ... < a_{N-1} = A` with constant spacing, and a time grid
//! `t_n = n * dt` for `n = 0..=n_steps`. Fields store node values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance under which `dt` is snapped onto the age spacing, so
/// that a horizon/step pair describing a unit-CFL grid advects exactly.
const CFL_SNAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("age grid needs max_age > 0 and at least 2 nodes (got max_age={max_age}, n_nodes={n_nodes})")]
    InvalidAgeGrid { max_age: f64, n_nodes: usize },
    #[error("time grid needs horizon > 0 and n_steps >= 1 (got horizon={horizon}, n_steps={n_steps})")]
    InvalidTimeGrid { horizon: f64, n_steps: usize },
    #[error("CFL violation: dt={dt} exceeds age spacing {spacing}")]
    Cfl { dt: f64, spacing: f64 },
    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    max_age: f64,
    n_nodes: usize,
    spacing: f64,
}

impl AgeGrid {
    pub fn new(max_age: f64, n_nodes: usize) -> Result<Self, GridError> {
        if !(max_age > 0.0 && max_age.is_finite()) || n_nodes < 2 {
            return Err(GridError::InvalidAgeGrid { max_age, n_nodes });
        }
        Ok(Self {
            max_age,
            n_nodes,
            spacing: max_age / (n_nodes - 1) as f64,
        })
    }

    pub fn max_age(&self) -> f64 {
        self.max_age
    }

    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Age of node `i`. The last node is pinned to `max_age` exactly.
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.max_age
        } else {
            i as f64 * self.spacing
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Composite trapezoid weights: `h/2, h, ..., h, h/2`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.spacing; self.n_nodes];
        w[0] = 0.5 * self.spacing;
        w[self.n_nodes - 1] = 0.5 * self.spacing;
        w
    }

    /// Grid with `factor` times as many cells over the same interval.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        Self::new(self.max_age, (self.n_nodes - 1) * factor + 1).expect("refinement of a valid grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    /// Builds a time grid over `[0, horizon]` and enforces `dt <= spacing`.
    /// A `dt` within 1e-12 relative of the spacing is snapped onto it.
    pub fn new(horizon: f64, n_steps: usize, ages: &AgeGrid) -> Result<Self, GridError> {
        if !(horizon > 0.0 && horizon.is_finite()) || n_steps == 0 {
            return Err(GridError::InvalidTimeGrid { horizon, n_steps });
        }
        let mut dt = horizon / n_steps as f64;
        let spacing = ages.spacing();
        if (dt - spacing).abs() <= CFL_SNAP * spacing {
            dt = spacing;
        }
        if dt > spacing {
            return Err(GridError::Cfl { dt, spacing });
        }
        Ok(Self { horizon, n_steps, dt })
    }

    /// Unit-CFL grid: `dt` equals the age spacing and the horizon is
    /// `n_steps * spacing`.
    pub fn unit_cfl(ages: &AgeGrid, n_steps: usize) -> Self {
        let n_steps = n_steps.max(1);
        Self {
            horizon: n_steps as f64 * ages.spacing(),
            n_steps,
            dt: ages.spacing(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of stored time levels, `n_steps + 1`.
    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_levels()).map(|n| self.time(n)).collect()
    }

    /// Courant number `dt / spacing`.
    pub fn courant(&self, ages: &AgeGrid) -> f64 {
        self.dt / ages.spacing()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n_levels()];
        w[0] = 0.5 * self.dt;
        w[self.n_steps] = 0.5 * self.dt;
        w
    }

    pub fn refined(&self, factor: usize, ages: &AgeGrid) -> Result<Self, GridError> {
        let factor = factor.max(1);
        Self::new(self.horizon, self.n_steps * factor, ages)
    }
}

/// Node values of a single-argument age function.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    grid: AgeGrid,
    values: Vec<f64>,
}

impl Profile {
    pub fn new(grid: AgeGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: AgeGrid, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: AgeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: AgeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Pointwise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Node values over the full time-age grid, stored row-major (one row per
/// time level).
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    time_grid: TimeGrid,
    age_grid: AgeGrid,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(time_grid: TimeGrid, age_grid: AgeGrid) -> Self {
        Self {
            time_grid,
            age_grid,
            values: vec![0.0; time_grid.n_levels() * age_grid.len()],
        }
    }

    pub fn from_fn(time_grid: TimeGrid, age_grid: AgeGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        let ages = age_grid.nodes();
        let mut values = Vec::with_capacity(time_grid.n_levels() * ages.len());
        for n in 0..time_grid.n_levels() {
            let t = time_grid.time(n);
            values.extend(ages.iter().map(|&a| f(t, a)));
        }
        Self::from_values(time_grid, age_grid, values)
    }

    pub fn from_values(time_grid: TimeGrid, age_grid: AgeGrid, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = time_grid.n_levels() * age_grid.len();
        if values.len() != expected {
            return Err(GridError::Length {
                expected,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self {
            time_grid,
            age_grid,
            values,
        })
    }

    /// Time-constant field repeating `profile` at every level.
    pub fn from_profile(time_grid: TimeGrid, profile: &Profile) -> Self {
        let mut values = Vec::with_capacity(time_grid.n_levels() * profile.values().len());
        for _ in 0..time_grid.n_levels() {
            values.extend_from_slice(profile.values());
        }
        Self {
            time_grid,
            age_grid: *profile.grid(),
            values,
        }
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn age_grid(&self) -> &AgeGrid {
        &self.age_grid
    }

    pub fn n_levels(&self) -> usize {
        self.time_grid.n_levels()
    }

    pub fn n_ages(&self) -> usize {
        self.age_grid.len()
    }

    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.values[n * self.age_grid.len() + j]
    }

    pub fn set(&mut self, n: usize, j: usize, value: f64) {
        let width = self.age_grid.len();
        self.values[n * width + j] = value;
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let width = self.age_grid.len();
        &self.values[n * width..(n + 1) * width]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let width = self.age_grid.len();
        &mut self.values[n * width..(n + 1) * width]
    }

    pub fn row_profile(&self, n: usize) -> Profile {
        Profile {
            grid: self.age_grid,
            values: self.row(n).to_vec(),
        }
    }

    /// Values at age node `j` over all time levels.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_levels()).map(|n| self.get(n, j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major values; callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_grids(&self, other: &Field2D) -> bool {
        self.time_grid == other.time_grid && self.age_grid == other.age_grid
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Composite trapezoid of uniformly spaced samples.
pub fn trapezoid_slice(values: &[f64], spacing: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            spacing * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// `∫_0^A f(a) da` by the composite trapezoid rule.
pub fn trapezoid(profile: &Profile) -> f64 {
    trapezoid_slice(profile.values(), profile.grid().spacing())
}

/// Running trapezoid integral `F(a_i) = ∫_0^{a_i} f`, with `F(0) = 0`.
pub fn cumulative_slice(values: &[f64], spacing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for pair in values.windows(2) {
        acc += 0.5 * spacing * (pair[0] + pair[1]);
        out.push(acc);
    }
    out.truncate(values.len());
    out
}

pub fn cumulative_integral(profile: &Profile) -> Profile {
    Profile {
        grid: *profile.grid(),
        values: cumulative_slice(profile.values(), profile.grid().spacing()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> AgeGrid {
        AgeGrid::new(10.0, n).unwrap()
    }

    #[test]
    fn age_grid_endpoints_and_spacing() {
        let g = grid(500);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(499), 10.0);
        assert!((g.spacing() - 10.0 / 499.0).abs() < 1e-15);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(AgeGrid::new(10.0, 1).is_err());
        assert!(AgeGrid::new(0.0, 10).is_err());
        assert!(AgeGrid::new(f64::NAN, 10).is_err());
        let g = grid(11);
        assert!(TimeGrid::new(0.0, 10, &g).is_err());
        assert!(TimeGrid::new(10.0, 0, &g).is_err());
    }

    #[test]
    fn time_grid_enforces_cfl() {
        let g = grid(200);
        assert!(TimeGrid::new(20.0, 400, &g).is_ok());
        assert!(matches!(TimeGrid::new(20.0, 300, &g), Err(GridError::Cfl { .. })));
    }

    #[test]
    fn unit_cfl_snaps_dt_onto_spacing() {
        let g = grid(101);
        let t = TimeGrid::new(40.0, 400, &g).unwrap();
        assert_eq!(t.dt(), g.spacing());
        assert_eq!(t.courant(&g), 1.0);
        let u = TimeGrid::unit_cfl(&g, 7);
        assert_eq!(u.dt(), g.spacing());
    }

    #[test]
    fn trapezoid_exact_for_affine() {
        for n in [2, 3, 17, 500] {
            let g = grid(n);
            let one = Profile::constant(g, 1.0);
            assert!((trapezoid(&one) - 10.0).abs() < 1e-12);
            let lin = Profile::from_fn(g, |a| a).unwrap();
            assert!((trapezoid(&lin) - 50.0).abs() < 1e-11);
        }
    }

    #[test]
    fn trapezoid_exponential() {
        let g = grid(500);
        let f = Profile::from_fn(g, |a| (-0.1 * a).exp()).unwrap();
        let exact = (1.0 - (-1.0_f64).exp()) / 0.1;
        assert!((trapezoid(&f) - 6.3212).abs() < 1e-4);
        assert!((trapezoid(&f) - exact).abs() < 1e-5);
    }

    #[test]
    fn trapezoid_second_order() {
        let exact = (1.0 - (-1.0_f64).exp()) / 0.1;
        let err = |n| {
            let f = Profile::from_fn(grid(n), |a| (-0.1 * a).exp()).unwrap();
            (trapezoid(&f) - exact).abs()
        };
        let ratio = err(51) / err(101);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn cumulative_integral_cases() {
        let g = grid(500);
        let zero = cumulative_integral(&Profile::zeros(g));
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let mu = Profile::from_fn(g, |a| 0.01 + 0.005 * a).unwrap();
        let m = cumulative_integral(&mu);
        assert_eq!(m.values()[0], 0.0);
        assert!((m.last() - 0.35).abs() < 1e-12);
        assert!(m.values().windows(2).all(|w| w[1] >= w[0]));
        assert!((m.last() - trapezoid(&mu)).abs() <= 4.0 * f64::EPSILON * m.last());

        let c = cumulative_integral(&Profile::constant(g, 0.3));
        for (i, v) in c.values().iter().enumerate() {
            assert!((v - 0.3 * g.node(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn field_rows_and_columns() {
        let g = grid(5);
        let t = TimeGrid::new(2.0, 4, &g).unwrap();
        let f = Field2D::from_fn(t, g, |t, a| t + 10.0 * a).unwrap();
        assert_eq!(f.n_levels(), 5);
        assert_eq!(f.row(2)[3], 1.0 + 75.0);
        assert_eq!(f.column(4), vec![100.0, 100.5, 101.0, 101.5, 102.0]);
        assert!(Field2D::from_values(t, g, vec![0.0; 3]).is_err());
        assert!(Profile::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
