//! Forward upwind solvers for the rate-control and effort-control state
//! equations.
//!
//! Each step applies the local source at the old time level and then advects
//! along characteristics with Courant number `nu = dt / spacing <= 1`:
//!
//! ```text
//! z_j       = x^n_j - dt * (source at node j)
//! x^{n+1}_j = nu * z_{j-1} + (1 - nu) * z_j      (j >= 1)
//! x^{n+1}_0 = p(t_{n+1})
//! ```
//!
//! At `nu = 1` the advection is an exact shift, so all error comes from the
//! sources.

use thiserror::Error;

use crate::grid::{trapezoid_slice, Field2D, GridError, Profile};
use crate::scenario::{ControlKind, Scenario, ScenarioError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("solver for {expected} control called on a {got} scenario")]
    KindMismatch { expected: ControlKind, got: ControlKind },
    #[error("control field does not match the scenario grids")]
    GridMismatch,
    #[error("inflow series has {got} entries, expected {expected}")]
    InflowLength { expected: usize, got: usize },
    #[error("positivity bound violated at step {step}, node {node}: dt * rate = {value} > 1")]
    Positivity { step: usize, node: usize, value: f64 },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Result of a forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub kind: ControlKind,
    /// `x(t, a)`
    pub state: Field2D,
    /// `E(t)`, trapezoid of each stored row.
    pub aggregate: Vec<f64>,
    /// Rate model: truncated removal `u_actual`. Effort model: yield density `w x`.
    pub applied_extraction: Field2D,
    /// Requested control `u` or `w` as tabulated for this solve.
    pub control: Field2D,
    /// Inflow `p(t_n)` at every time level.
    pub inflow: Vec<f64>,
    /// Nodes where truncation fired (rate model), row-major like the fields.
    pub active: Vec<bool>,
    /// Per-step residual of the integrated balance law.
    pub balance_residual: Vec<f64>,
    /// Aggregate evaluations per step (effort model only).
    pub fixed_point_iterations: Vec<usize>,
}

impl SolveReport {
    pub fn is_active(&self, n: usize, j: usize) -> bool {
        self.active[n * self.state.n_ages() + j]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.balance_residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn check_inputs(scenario: &Scenario, control: &Field2D, inflow: &[f64]) -> Result<(), TransportError> {
    if control.time_grid() != scenario.time_grid() || control.age_grid() != scenario.age_grid() {
        return Err(TransportError::GridMismatch);
    }
    let expected = scenario.time_grid().n_levels();
    if inflow.len() != expected {
        return Err(TransportError::InflowLength {
            expected,
            got: inflow.len(),
        });
    }
    Ok(())
}

fn check_kind(scenario: &Scenario, expected: ControlKind) -> Result<(), TransportError> {
    if scenario.kind() != expected {
        return Err(TransportError::KindMismatch {
            expected,
            got: scenario.kind(),
        });
    }
    Ok(())
}

fn advect(z: &[f64], nu: f64, inflow: f64, next: &mut [f64]) {
    next[0] = inflow;
    for j in 1..z.len() {
        next[j] = nu * z[j - 1] + (1.0 - nu) * z[j];
    }
}

/// Solves the rate-control model with the scenario's tabulated controls.
pub fn solve_rate_forward(scenario: &Scenario) -> Result<SolveReport, TransportError> {
    check_kind(scenario, ControlKind::Rate)?;
    solve_rate_with(scenario, &scenario.intensity_field(), &scenario.inflow_series())
}

/// Solves the rate-control model with explicit controls `u(t_n, a_j)` and
/// `p(t_n)`. The density coefficient is not used: the rate model carries
/// baseline mortality only.
pub fn solve_rate_with(scenario: &Scenario, u: &Field2D, inflow: &[f64]) -> Result<SolveReport, TransportError> {
    check_inputs(scenario, u, inflow)?;
    let ages = *scenario.age_grid();
    let times = *scenario.time_grid();
    let (dt, nu, n_ages) = (times.dt(), times.courant(&ages), ages.len());
    let mu = scenario.mortality().values();
    if let Some((j, &m)) = mu.iter().enumerate().find(|(_, &m)| dt * m > 1.0) {
        return Err(TransportError::Positivity {
            step: 0,
            node: j,
            value: dt * m,
        });
    }

    let mut state = Field2D::zeros(times, ages);
    let mut applied = Field2D::zeros(times, ages);
    let mut active = vec![false; times.n_levels() * n_ages];
    state.row_mut(0).copy_from_slice(scenario.initial_profile().values());
    let mut z = vec![0.0; n_ages];

    for n in 0..times.n_levels() {
        let x = state.row(n);
        let u_row = u.row(n);
        let applied_row = applied.row_mut(n);
        for j in 0..n_ages {
            let kept = (1.0 - dt * mu[j]) * x[j];
            let zj = kept - dt * u_row[j];
            if zj < 0.0 {
                // truncation: remove only what is there
                applied_row[j] = kept / dt;
                active[n * n_ages + j] = true;
                z[j] = 0.0;
            } else {
                applied_row[j] = u_row[j];
                z[j] = zj;
            }
        }
        if n + 1 < times.n_levels() {
            advect(&z, nu, inflow[n + 1], state.row_mut(n + 1));
            if !state.row(n + 1).iter().all(|v| v.is_finite()) {
                return Err(TransportError::NonFinite { step: n + 1 });
            }
        }
    }

    let aggregate = aggregates(&state);
    let mut report = SolveReport {
        kind: ControlKind::Rate,
        state,
        aggregate,
        applied_extraction: applied,
        control: u.clone(),
        inflow: inflow.to_vec(),
        active,
        balance_residual: Vec::new(),
        fixed_point_iterations: Vec::new(),
    };
    report.balance_residual = balance_residual(&report, scenario);
    Ok(report)
}

/// Solves the effort-control model with the scenario's tabulated controls.
pub fn solve_effort_forward(scenario: &Scenario) -> Result<SolveReport, TransportError> {
    check_kind(scenario, ControlKind::Effort)?;
    solve_effort_with(scenario, &scenario.intensity_field(), &scenario.inflow_series())
}

/// Solves the effort-control model with explicit `w(t_n, a_j)` and `p(t_n)`.
/// Mortality is `mu(a) + alpha * E(t_n)` with the aggregate taken from the
/// state at the start of each step.
pub fn solve_effort_with(scenario: &Scenario, w: &Field2D, inflow: &[f64]) -> Result<SolveReport, TransportError> {
    check_inputs(scenario, w, inflow)?;
    let ages = *scenario.age_grid();
    let times = *scenario.time_grid();
    let (dt, nu, h, n_ages) = (times.dt(), times.courant(&ages), ages.spacing(), ages.len());
    let mu = scenario.mortality().values();
    let alpha = scenario.density_coefficient();

    let mut state = Field2D::zeros(times, ages);
    let mut yield_density = Field2D::zeros(times, ages);
    let mut aggregate = Vec::with_capacity(times.n_levels());
    state.row_mut(0).copy_from_slice(scenario.initial_profile().values());
    let mut z = vec![0.0; n_ages];

    for n in 0..times.n_levels() {
        let x = state.row(n);
        let e = trapezoid_slice(x, h);
        aggregate.push(e);
        let w_row = w.row(n);
        for (j, y) in yield_density.row_mut(n).iter_mut().enumerate() {
            *y = w_row[j] * x[j];
        }
        if n + 1 == times.n_levels() {
            break;
        }
        for j in 0..n_ages {
            let rate = dt * (mu[j] + alpha * e + w_row[j]);
            if rate > 1.0 {
                return Err(TransportError::Positivity {
                    step: n,
                    node: j,
                    value: rate,
                });
            }
            z[j] = (1.0 - rate) * x[j];
        }
        advect(&z, nu, inflow[n + 1], state.row_mut(n + 1));
        if !state.row(n + 1).iter().all(|v| v.is_finite()) {
            return Err(TransportError::NonFinite { step: n + 1 });
        }
    }

    let mut report = SolveReport {
        kind: ControlKind::Effort,
        state,
        aggregate,
        applied_extraction: yield_density,
        control: w.clone(),
        inflow: inflow.to_vec(),
        active: vec![false; times.n_levels() * n_ages],
        balance_residual: Vec::new(),
        fixed_point_iterations: vec![1; times.n_steps()],
    };
    report.balance_residual = balance_residual(&report, scenario);
    Ok(report)
}

/// Dispatches on the scenario's control kind.
pub fn solve_forward(scenario: &Scenario) -> Result<SolveReport, TransportError> {
    match scenario.kind() {
        ControlKind::Rate => solve_rate_forward(scenario),
        ControlKind::Effort => solve_effort_forward(scenario),
    }
}

fn aggregates(state: &Field2D) -> Vec<f64> {
    let h = state.age_grid().spacing();
    (0..state.n_levels()).map(|n| trapezoid_slice(state.row(n), h)).collect()
}

/// Residual of the integrated balance law
/// `dE/dt = p - x(t, A) - int (loss density) da` at each step, with a forward
/// difference of `E` and all other terms at the start of the step.
///
/// The loss density is `mu x + u_actual` (rate) or `(mu + alpha E + w) x`
/// (effort).
pub fn balance_residual(report: &SolveReport, scenario: &Scenario) -> Vec<f64> {
    let ages = report.state.age_grid();
    let (h, dt) = (ages.spacing(), report.state.time_grid().dt());
    let mu = scenario.mortality().values();
    let alpha = scenario.density_coefficient();
    let last = ages.len() - 1;
    let mut loss = vec![0.0; ages.len()];
    (0..report.state.n_levels() - 1)
        .map(|n| {
            let x = report.state.row(n);
            let e = report.aggregate[n];
            for j in 0..loss.len() {
                loss[j] = match report.kind {
                    ControlKind::Rate => mu[j] * x[j] + report.applied_extraction.get(n, j),
                    ControlKind::Effort => (mu[j] + alpha * e + report.control.get(n, j)) * x[j],
                };
            }
            let de = (report.aggregate[n + 1] - e) / dt;
            de - (report.inflow[n] - x[last] - trapezoid_slice(&loss, h))
        })
        .collect()
}

/// Characteristic solution of pure transport (`mu = 0`, no harvesting):
/// `x(t, a) = p(t - a)` for `a <= t`, `x0(a - t)` otherwise. `p` and `x0` are
/// evaluated at arbitrary arguments.
pub fn characteristic_solution(
    time_grid: &crate::grid::TimeGrid,
    x0: impl Fn(f64) -> f64,
    p: impl Fn(f64) -> f64,
    ages: &crate::grid::AgeGrid,
) -> Result<Field2D, GridError> {
    Field2D::from_fn(*time_grid, *ages, |t, a| if a <= t { p(t - a) } else { x0(a - t) })
}

/// Row `n` of the state as a profile.
pub fn profile_at(report: &SolveReport, n: usize) -> Profile {
    report.state.row_profile(n)
}
