//! Backward costate solvers built as the exact transpose of the forward
//! upwind schemes.
//!
//! The discrete objective is
//!
//! ```text
//! L = sum_n omega_n d_n [ sum_j beta_j (payoff_j^n + eta_j^n x_j^n) - k_n p_n ]
//! ```
//!
//! with trapezoid weights `omega` (time) and `beta` (age) and discount factors
//! `d_n = exp(-r t_n)`. Differentiating the forward recursion gives a backward
//! recursion for `Lambda^n_j = dL/dx^n_j`. The reported costate is the
//! current-value sensitivity to the post-source value that is shifted to the
//! next node, `lambda^n_j = Lambda^{n+1}_{j+1} / (h d_n)`, which vanishes at the
//! last age node and at the final time level.
//!
//! Because it is the multiplier of the step from `(t_n, a_j)` to
//! `(t_n+1, a_j+1)`, `lambda^n_j` approximates the continuous costate at the
//! cell centre `(t_n + dt/2, a_j + h/2)`, with each tabulated source acting
//! on the cell centred at its node. Read at the node itself it is off by a
//! first-order shift.
//!
//! Transposition is exact only when the advection is an exact shift, so these
//! solvers require `dt == spacing`.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{trapezoid_slice, Field2D};
use crate::scenario::{ControlKind, Scenario};
use crate::transport::SolveReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error("field does not match the scenario grids")]
    GridMismatch,
    #[error("adjoint solves need dt == age spacing, got Courant number {courant}")]
    NotUnitCourant { courant: f64 },
    #[error("adjoint for {expected} control called with {got} data")]
    KindMismatch { expected: ControlKind, got: ControlKind },
    #[error("multiplier must be >= 0, found {value} at (level {step}, node {node})")]
    NegativeMultiplier { step: usize, node: usize, value: f64 },
    #[error("non-finite costate at step {step}")]
    NonFinite { step: usize },
}

/// How the infinite-horizon transversality condition was replaced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalCondition {
    pub horizon: f64,
    /// `exp(-r T)`, the weight of everything beyond the horizon.
    pub discount_factor: f64,
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlocalTerm {
    Included,
    /// Drops the aggregate-feedback integral; only useful to show it matters.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub kind: ControlKind,
    /// Current-value costate `lambda(t, a)`.
    pub costate: Field2D,
    pub terminal_time_condition: TerminalCondition,
    /// `int mu_E x lambda da` per time level (effort model only).
    pub nonlocal_series: Vec<f64>,
    pub nonlocal: NonlocalTerm,
    /// Present-value derivative of the discrete objective with respect to each
    /// control node (`u` or `w`).
    pub control_gradient: Field2D,
    /// Present-value derivative with respect to each inflow value `p_n`.
    pub inflow_gradient: Vec<f64>,
}

fn require_unit_courant(scenario: &Scenario) -> Result<(), AdjointError> {
    let courant = scenario.time_grid().courant(scenario.age_grid());
    if courant != 1.0 {
        return Err(AdjointError::NotUnitCourant { courant });
    }
    Ok(())
}

fn require_grids(scenario: &Scenario, field: &Field2D) -> Result<(), AdjointError> {
    if field.time_grid() != scenario.time_grid() || field.age_grid() != scenario.age_grid() {
        return Err(AdjointError::GridMismatch);
    }
    Ok(())
}

fn terminal_condition(scenario: &Scenario) -> TerminalCondition {
    let horizon = scenario.time_grid().horizon();
    TerminalCondition {
        horizon,
        discount_factor: (-scenario.discount_rate() * horizon).exp(),
        rule: "lambda(T, a) = 0 at the truncation horizon; lambda(t, A) = 0 at every level".into(),
    }
}

fn discounts(scenario: &Scenario) -> Vec<f64> {
    let r = scenario.discount_rate();
    scenario.time_grid().times().iter().map(|t| (-r * t).exp()).collect()
}

/// Shared pieces of both backward sweeps.
struct Weights {
    omega: Vec<f64>,
    beta: Vec<f64>,
    disc: Vec<f64>,
    dt: f64,
    h: f64,
}

impl Weights {
    fn new(scenario: &Scenario) -> Self {
        Self {
            omega: scenario.time_grid().trapezoid_weights(),
            beta: scenario.age_grid().trapezoid_weights(),
            disc: discounts(scenario),
            dt: scenario.time_grid().dt(),
            h: scenario.age_grid().spacing(),
        }
    }

    fn node(&self, n: usize, j: usize) -> f64 {
        self.omega[n] * self.disc[n] * self.beta[j]
    }
}

/// Fills row `n` of `costate` from `Lambda^{n+1}` and returns the shifted
/// sensitivities `Z^n_j = Lambda^{n+1}_{j+1}` (zero at the last node).
fn shift_row(next_total: &[f64], z: &mut [f64]) {
    let last = z.len() - 1;
    z[..last].copy_from_slice(&next_total[1..]);
    z[last] = 0.0;
}

fn inflow_gradient(scenario: &Scenario, w: &Weights, total_at_zero: &[f64]) -> Vec<f64> {
    let k = scenario.inflow_cost_series();
    total_at_zero
        .iter()
        .enumerate()
        .map(|(n, &lam0)| {
            let cost = w.omega[n] * w.disc[n] * k[n];
            // x^0 is the initial profile, not an inflow value
            if n == 0 {
                -cost
            } else {
                lam0 - cost
            }
        })
        .collect()
}

fn check_multiplier(eta: &Field2D) -> Result<(), AdjointError> {
    for n in 0..eta.n_levels() {
        if let Some((j, &v)) = eta.row(n).iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(AdjointError::NegativeMultiplier {
                step: n,
                node: j,
                value: v,
            });
        }
    }
    Ok(())
}

/// Rate-model adjoint for the linear (untruncated) dynamics with multiplier
/// field `eta`.
pub fn solve_rate_adjoint(scenario: &Scenario, eta: &Field2D) -> Result<AdjointReport, AdjointError> {
    solve_rate_adjoint_with(scenario, None, eta)
}

/// Rate-model adjoint. When `forward` is given, nodes where its truncation
/// fired are treated exactly: there the post-source value is pinned at zero,
/// the applied removal equals the available stock, and the requested rate has
/// no effect.
pub fn solve_rate_adjoint_with(
    scenario: &Scenario,
    forward: Option<&SolveReport>,
    eta: &Field2D,
) -> Result<AdjointReport, AdjointError> {
    require_unit_courant(scenario)?;
    require_grids(scenario, eta)?;
    check_multiplier(eta)?;
    if let Some(f) = forward {
        if f.kind != ControlKind::Rate {
            return Err(AdjointError::KindMismatch {
                expected: ControlKind::Rate,
                got: f.kind,
            });
        }
        require_grids(scenario, &f.state)?;
    }
    let active = |n: usize, j: usize| forward.is_some_and(|f| f.is_active(n, j));

    let times = *scenario.time_grid();
    let ages = *scenario.age_grid();
    let w = Weights::new(scenario);
    let mu = scenario.mortality().values();
    let c = scenario.unit_value().values();
    let g: Vec<f64> = mu.iter().map(|m| 1.0 - w.dt * m).collect();
    let n_ages = ages.len();
    let m_last = times.n_steps();

    let mut costate = Field2D::zeros(times, ages);
    let mut grad = Field2D::zeros(times, ages);
    let mut total = vec![0.0; n_ages];
    let mut total_at_zero = vec![0.0; times.n_levels()];
    let mut z = vec![0.0; n_ages];

    // final level: no step leaves it, so only the running terms remain
    for j in 0..n_ages {
        let wn = w.node(m_last, j);
        if active(m_last, j) {
            total[j] = wn * (eta.get(m_last, j) + c[j] * g[j] / w.dt);
        } else {
            total[j] = wn * eta.get(m_last, j);
            grad.set(m_last, j, wn * c[j]);
        }
    }
    total_at_zero[m_last] = total[0];

    for n in (0..m_last).rev() {
        shift_row(&total, &mut z);
        let scale = 1.0 / (w.h * w.disc[n]);
        for (lam, zj) in costate.row_mut(n).iter_mut().zip(&z) {
            *lam = zj * scale;
        }
        if !costate.row(n).iter().all(|v| v.is_finite()) {
            return Err(AdjointError::NonFinite { step: n });
        }
        for j in 0..n_ages {
            let wn = w.node(n, j);
            if active(n, j) {
                total[j] = wn * (eta.get(n, j) + c[j] * g[j] / w.dt);
            } else {
                total[j] = wn * eta.get(n, j) + g[j] * z[j];
                grad.set(n, j, wn * c[j] - w.dt * z[j]);
            }
        }
        total_at_zero[n] = total[0];
    }

    Ok(AdjointReport {
        kind: ControlKind::Rate,
        costate,
        terminal_time_condition: terminal_condition(scenario),
        nonlocal_series: Vec::new(),
        nonlocal: NonlocalTerm::Included,
        control_gradient: grad,
        inflow_gradient: inflow_gradient(scenario, &w, &total_at_zero),
    })
}

/// Effort-model adjoint including the aggregate-feedback integral.
pub fn solve_effort_adjoint(scenario: &Scenario, forward: &SolveReport) -> Result<AdjointReport, AdjointError> {
    solve_effort_adjoint_with(scenario, forward, NonlocalTerm::Included)
}

/// Effort-model adjoint. The backward recursion reads the stored forward
/// state; the running payoff is `c w x` plus the scenario multiplier term.
///
/// The feedback term enters every node as `-dt alpha beta_i sum_j Z_j x_j`,
/// the exact transpose of the explicit aggregate in the forward step. The
/// reported `nonlocal_series` is the trapezoid of `alpha x lambda` on each
/// stored level.
pub fn solve_effort_adjoint_with(
    scenario: &Scenario,
    forward: &SolveReport,
    nonlocal: NonlocalTerm,
) -> Result<AdjointReport, AdjointError> {
    require_unit_courant(scenario)?;
    if forward.kind != ControlKind::Effort {
        return Err(AdjointError::KindMismatch {
            expected: ControlKind::Effort,
            got: forward.kind,
        });
    }
    require_grids(scenario, &forward.state)?;

    let times = *scenario.time_grid();
    let ages = *scenario.age_grid();
    let w = Weights::new(scenario);
    let mu = scenario.mortality().values();
    let c = scenario.unit_value().values();
    let eta = scenario.multiplier().values();
    let alpha = scenario.density_coefficient();
    let feedback = match nonlocal {
        NonlocalTerm::Included => alpha,
        NonlocalTerm::Dropped => 0.0,
    };
    let n_ages = ages.len();
    let m_last = times.n_steps();
    let x = &forward.state;
    let effort = &forward.control;

    let mut costate = Field2D::zeros(times, ages);
    let mut grad = Field2D::zeros(times, ages);
    let mut total = vec![0.0; n_ages];
    let mut total_at_zero = vec![0.0; times.n_levels()];
    let mut z = vec![0.0; n_ages];

    for j in 0..n_ages {
        let wn = w.node(m_last, j);
        total[j] = wn * (c[j] * effort.get(m_last, j) + eta[j]);
        grad.set(m_last, j, wn * c[j] * x.get(m_last, j));
    }
    total_at_zero[m_last] = total[0];

    for n in (0..m_last).rev() {
        shift_row(&total, &mut z);
        let scale = 1.0 / (w.h * w.disc[n]);
        for (lam, zj) in costate.row_mut(n).iter_mut().zip(&z) {
            *lam = zj * scale;
        }
        if !costate.row(n).iter().all(|v| v.is_finite()) {
            return Err(AdjointError::NonFinite { step: n });
        }
        let xn = x.row(n);
        let coupling: f64 = z.iter().zip(xn).map(|(zj, xj)| zj * xj).sum();
        let e = forward.aggregate[n];
        for j in 0..n_ages {
            let wn = w.node(n, j);
            let g = 1.0 - w.dt * (mu[j] + alpha * e + effort.get(n, j));
            total[j] = wn * (c[j] * effort.get(n, j) + eta[j]) + g * z[j] - w.dt * feedback * w.beta[j] * coupling;
            grad.set(n, j, xn[j] * (wn * c[j] - w.dt * z[j]));
        }
        total_at_zero[n] = total[0];
    }

    let nonlocal_series = nonlocal_series(&costate, x, alpha);
    Ok(AdjointReport {
        kind: ControlKind::Effort,
        costate,
        terminal_time_condition: terminal_condition(scenario),
        nonlocal_series,
        nonlocal,
        control_gradient: grad,
        inflow_gradient: inflow_gradient(scenario, &w, &total_at_zero),
    })
}

/// `int alpha x(t, .) lambda(t, .) da` by trapezoid on every level.
pub fn nonlocal_series(costate: &Field2D, state: &Field2D, alpha: f64) -> Vec<f64> {
    let h = state.age_grid().spacing();
    let mut buf = vec![0.0; state.n_ages()];
    (0..state.n_levels())
        .map(|n| {
            for ((b, x), l) in buf.iter_mut().zip(state.row(n)).zip(costate.row(n)) {
                *b = alpha * x * l;
            }
            trapezoid_slice(&buf, h)
        })
        .collect()
}

/// Linearized rate dynamics: the response `dx` to perturbations of the
/// removal rate, the inflow, and the initial profile. Nodes flagged in
/// `active` pass no perturbation on.
pub fn linearized_rate_forward(
    scenario: &Scenario,
    active: Option<&[bool]>,
    du: &Field2D,
    dp: &[f64],
    dx0: &[f64],
) -> Result<Field2D, AdjointError> {
    require_unit_courant(scenario)?;
    require_grids(scenario, du)?;
    let times = *scenario.time_grid();
    let ages = *scenario.age_grid();
    let dt = times.dt();
    let n_ages = ages.len();
    if dp.len() != times.n_levels() || dx0.len() != n_ages {
        return Err(AdjointError::GridMismatch);
    }
    let mu = scenario.mortality().values();
    let mut dx = Field2D::zeros(times, ages);
    dx.row_mut(0).copy_from_slice(dx0);
    let mut z = vec![0.0; n_ages];
    for n in 0..times.n_steps() {
        let row = dx.row(n);
        for j in 0..n_ages {
            let pinned = active.is_some_and(|a| a[n * n_ages + j]);
            z[j] = if pinned {
                0.0
            } else {
                (1.0 - dt * mu[j]) * row[j] - dt * du.get(n, j)
            };
        }
        let next = dx.row_mut(n + 1);
        next[0] = dp[n + 1];
        next[1..].copy_from_slice(&z[..n_ages - 1]);
    }
    Ok(dx)
}

/// Both sides of the discrete integration-by-parts identity for the rate
/// model with zero unit value:
///
/// ```text
/// <eta, dx>  ==  <dL/du, du> + sum_n Lambda^n_0 dp_n + sum_j Lambda^0_j dx0_j
/// ```
///
/// The last two sums are the age-zero and time-zero boundary pairings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityCheck {
    pub interior_pairing: f64,
    pub adjoint_pairing: f64,
    pub boundary_inflow: f64,
    pub boundary_initial: f64,
    pub residual: f64,
}

/// Evaluates [`DualityCheck`] for arbitrary fields. The unit value is
/// ignored (treated as zero) so that the costate is driven by `eta` alone.
pub fn rate_duality_check(
    scenario: &Scenario,
    eta: &Field2D,
    du: &Field2D,
    dp: &[f64],
    dx0: &[f64],
) -> Result<DualityCheck, AdjointError> {
    let bare = scenario
        .with(|d| d.economics.unit_value = crate::scenario::AgeFunction::Constant { value: 0.0 })
        .map_err(|_| AdjointError::GridMismatch)?;
    let bare = bare
        .with(|d| d.economics.inflow_cost = crate::scenario::TimeFunction::Constant { value: 0.0 })
        .map_err(|_| AdjointError::GridMismatch)?;
    let report = solve_rate_adjoint(&bare, eta)?;
    let dx = linearized_rate_forward(&bare, None, du, dp, dx0)?;
    let w = Weights::new(&bare);

    let mut interior = 0.0;
    for n in 0..dx.n_levels() {
        for j in 0..dx.n_ages() {
            interior += w.node(n, j) * eta.get(n, j) * dx.get(n, j);
        }
    }
    let adjoint_pairing: f64 = report
        .control_gradient
        .values()
        .iter()
        .zip(du.values())
        .map(|(g, d)| g * d)
        .sum();
    let boundary_inflow: f64 = report.inflow_gradient.iter().zip(dp).skip(1).map(|(g, d)| g * d).sum();
    // Lambda^0 = omega_0 d_0 beta eta^0 + g Z^0, rebuilt from the stored costate
    let mu = bare.mortality().values();
    let boundary_initial: f64 = (0..dx0.len())
        .map(|j| {
            let z = report.costate.get(0, j) * w.h * w.disc[0];
            (w.node(0, j) * eta.get(0, j) + (1.0 - w.dt * mu[j]) * z) * dx0[j]
        })
        .sum();
    let rhs = adjoint_pairing + boundary_inflow + boundary_initial;
    let scale = interior.abs().max(adjoint_pairing.abs()).max(boundary_inflow.abs()).max(boundary_initial.abs()).max(1e-300);
    Ok(DualityCheck {
        interior_pairing: interior,
        adjoint_pairing,
        boundary_inflow,
        boundary_initial,
        residual: (interior - rhs).abs() / scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::*;
    use crate::transport::{solve_effort_forward, solve_rate_forward};

    fn doc(kind: ControlKind) -> ScenarioDoc {
        ScenarioDoc {
            schema: 1,
            age_grid: AgeGridSpec {
                max_age: 10.0,
                n_nodes: 51,
            },
            time_grid: TimeGridSpec {
                horizon: 10.0,
                n_steps: 50,
            },
            mortality: MortalitySpec {
                baseline: AgeFunction::Linear { m0: 0.01, m1: 0.005 },
                density_coefficient: 0.0,
            },
            economics: EconomicSpec {
                discount_rate: 0.05,
                unit_value: AgeFunction::Constant { value: 1.0 },
                inflow_cost: TimeFunction::Constant { value: 0.6 },
                bounds: Bounds {
                    u_max: 0.15,
                    w_max: 1.0,
                    p_max: 2.0,
                },
            },
            control: ControlSpec {
                kind,
                intensity: Intensity::Window {
                    a_lo: 3.0,
                    a_hi: 7.0,
                    level: 0.0,
                    ramp: None,
                },
            },
            inflow: TimeFunction::Constant { value: 1.0 },
            initial_profile: None,
            multiplier: None,
        }
    }

    #[test]
    fn zero_multiplier_gives_zero_costate() {
        let s = Scenario::from_doc(doc(ControlKind::Rate)).unwrap();
        let eta = Field2D::zeros(*s.time_grid(), *s.age_grid());
        let r = solve_rate_adjoint(&s, &eta).unwrap();
        assert_eq!(r.costate.max_abs(), 0.0);
        assert_eq!(r.terminal_time_condition.horizon, 10.0);
    }

    #[test]
    fn effort_without_harvest_or_feedback_is_zero() {
        let s = Scenario::from_doc(doc(ControlKind::Effort)).unwrap();
        let f = solve_effort_forward(&s).unwrap();
        let r = solve_effort_adjoint(&s, &f).unwrap();
        assert_eq!(r.costate.max_abs(), 0.0);
        assert!(r.nonlocal_series.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn costate_vanishes_at_last_age_and_final_time() {
        let s = Scenario::from_doc(doc(ControlKind::Rate)).unwrap();
        let eta = Field2D::from_fn(*s.time_grid(), *s.age_grid(), |_, a| if a >= 8.5 { 1.0 } else { 0.0 }).unwrap();
        let r = solve_rate_adjoint(&s, &eta).unwrap();
        let last = s.age_grid().len() - 1;
        assert!(r.costate.column(last).iter().all(|&v| v == 0.0));
        assert!(r.costate.row(s.time_grid().n_steps()).iter().all(|&v| v == 0.0));
        assert!(r.costate.min() >= 0.0);
        assert!(r.costate.get(0, 0) > 0.0);
    }

    #[test]
    fn non_unit_courant_rejected() {
        let s = Scenario::from_doc(doc(ControlKind::Rate))
            .unwrap()
            .with(|d| d.time_grid.n_steps = 60)
            .unwrap();
        let eta = Field2D::zeros(*s.time_grid(), *s.age_grid());
        assert!(matches!(
            solve_rate_adjoint(&s, &eta),
            Err(AdjointError::NotUnitCourant { .. })
        ));
    }

    #[test]
    fn negative_multiplier_rejected() {
        let s = Scenario::from_doc(doc(ControlKind::Rate)).unwrap();
        let eta = Field2D::from_fn(*s.time_grid(), *s.age_grid(), |_, _| -1.0).unwrap();
        assert!(matches!(
            solve_rate_adjoint(&s, &eta),
            Err(AdjointError::NegativeMultiplier { .. })
        ));
    }

    #[test]
    fn kind_checked() {
        let s = Scenario::from_doc(doc(ControlKind::Rate)).unwrap();
        let f = solve_rate_forward(&s).unwrap();
        assert!(matches!(
            solve_effort_adjoint(&s, &f),
            Err(AdjointError::KindMismatch { .. })
        ));
    }

    #[test]
    fn duality_on_smooth_fields() {
        let s = Scenario::from_doc(doc(ControlKind::Rate)).unwrap();
        let (t, a) = (*s.time_grid(), *s.age_grid());
        let eta = Field2D::from_fn(t, a, |t, a| 1.0 + (t * a).sin().abs()).unwrap();
        let du = Field2D::from_fn(t, a, |t, a| (t - a).cos()).unwrap();
        let dp: Vec<f64> = t.times().iter().map(|t| t.sin()).collect();
        let dx0: Vec<f64> = a.nodes().iter().map(|a| a.cos()).collect();
        let check = rate_duality_check(&s, &eta, &du, &dp, &dx0).unwrap();
        assert!(check.residual < 1e-12, "{check:?}");
        assert!(check.boundary_inflow.abs() > 0.0 && check.boundary_initial.abs() > 0.0);
    }
}
