//! Objective evaluation, switching functions and bang-bang synthesis,
//! complementary slackness, adjoint gradient validation, the forward-backward
//! sweep, and the stationary yield sweep.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adjoint::{
    solve_effort_adjoint_with, solve_rate_adjoint_with, AdjointError, AdjointReport, NonlocalTerm,
};
use crate::grid::{trapezoid_slice, Field2D, Profile};
use crate::scenario::{ControlKind, Scenario};
use crate::stationary::{
    stationary_effort_profile, stationary_rate_truncated, FixedPointOptions, StationaryError,
};
use crate::transport::{solve_effort_with, solve_rate_with, SolveReport, TransportError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("probe touches an active constraint: {0}")]
    NotInterior(String),
    #[error("invalid option: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// objective

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub horizon: f64,
    /// Upper bound on the magnitude of the discounted contribution beyond
    /// the horizon.
    pub tail_bound: f64,
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn tail_bound(scenario: &Scenario) -> f64 {
    let r = scenario.discount_rate();
    let t = scenario.time_grid().horizon();
    let b = scenario.bounds();
    let c_max = max_of(scenario.unit_value().values());
    let k_max = max_of(&scenario.inflow_cost_series());
    let removal = match scenario.kind() {
        ControlKind::Rate => b.u_max,
        // w x <= w_max * (largest attainable density)
        ControlKind::Effort => b.w_max * b.p_max.max(max_of(scenario.initial_profile().values())),
    };
    (-r * t).exp() * (c_max * removal * scenario.age_grid().max_age() + k_max * b.p_max) / r
}

/// Discounted value of a solve, trapezoid in age and time, plus
/// `int int e^{-rt} eta x` when a multiplier field is supplied.
pub fn lagrangian(scenario: &Scenario, report: &SolveReport, eta: Option<&Field2D>) -> f64 {
    let times = scenario.time_grid();
    let omega = times.trapezoid_weights();
    let h = scenario.age_grid().spacing();
    let r = scenario.discount_rate();
    let c = scenario.unit_value().values();
    let k = scenario.inflow_cost_series();
    let mut buf = vec![0.0; c.len()];
    let mut total = 0.0;
    for n in 0..times.n_levels() {
        let removal = report.applied_extraction.row(n);
        let x = report.state.row(n);
        for j in 0..buf.len() {
            buf[j] = c[j] * removal[j] + eta.map_or(0.0, |e| e.get(n, j) * x[j]);
        }
        let running = trapezoid_slice(&buf, h) - k[n] * report.inflow[n];
        total += omega[n] * (-r * times.time(n)).exp() * running;
    }
    total
}

/// `J = int e^{-rt} (int c u_actual da - k p) dt` for a rate-model solve.
pub fn objective_rate(scenario: &Scenario, report: &SolveReport) -> ObjectiveValue {
    debug_assert_eq!(report.kind, ControlKind::Rate);
    ObjectiveValue {
        value: lagrangian(scenario, report, None),
        horizon: scenario.time_grid().horizon(),
        tail_bound: tail_bound(scenario),
    }
}

/// `J_E = int e^{-rt} (int c w x da - k p) dt` for an effort-model solve.
pub fn objective_effort(scenario: &Scenario, report: &SolveReport) -> ObjectiveValue {
    debug_assert_eq!(report.kind, ControlKind::Effort);
    ObjectiveValue {
        value: lagrangian(scenario, report, None),
        horizon: scenario.time_grid().horizon(),
        tail_bound: tail_bound(scenario),
    }
}

// ---------------------------------------------------------------------------
// switching

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingReport {
    /// Current-value `c - lambda`.
    pub sigma_u: Field2D,
    /// Current-value `lambda(t, 0) - k`.
    pub sigma_p: Vec<f64>,
    pub synthesized_u: Field2D,
    pub synthesized_p: Vec<f64>,
    pub threshold: f64,
}

/// Bang-bang value for a switching value `sigma`; `tie` is used inside the
/// dead zone `[-eps, eps]`.
pub fn bang_bang(sigma: f64, upper: f64, eps: f64, tie: f64) -> f64 {
    if sigma > eps {
        upper
    } else if sigma < -eps {
        0.0
    } else {
        tie
    }
}

fn control_bound(scenario: &Scenario) -> f64 {
    match scenario.kind() {
        ControlKind::Rate => scenario.bounds().u_max,
        ControlKind::Effort => scenario.bounds().w_max,
    }
}

/// Switching functions from a costate and the one-shot bang-bang synthesis
/// (dead zone resolved to 0).
pub fn switching_functions(
    scenario: &Scenario,
    costate: &AdjointReport,
    eps: f64,
) -> Result<SwitchingReport, ControlError> {
    let lam = &costate.costate;
    if lam.time_grid() != scenario.time_grid() || lam.age_grid() != scenario.age_grid() {
        return Err(ControlError::GridMismatch("costate vs scenario".into()));
    }
    let c = scenario.unit_value().values();
    let k = scenario.inflow_cost_series();
    let (upper, p_max) = (control_bound(scenario), scenario.bounds().p_max);
    let mut sigma_u = Field2D::zeros(*lam.time_grid(), *lam.age_grid());
    for n in 0..lam.n_levels() {
        for (j, s) in sigma_u.row_mut(n).iter_mut().enumerate() {
            *s = c[j] - lam.get(n, j);
        }
    }
    let sigma_p: Vec<f64> = (0..lam.n_levels()).map(|n| lam.get(n, 0) - k[n]).collect();
    let mut synthesized_u = sigma_u.clone();
    for (v, s) in synthesized_u.values_mut().iter_mut().zip(sigma_u.values()) {
        *v = bang_bang(*s, upper, eps, 0.0);
    }
    let synthesized_p = sigma_p.iter().map(|&s| bang_bang(s, p_max, eps, 0.0)).collect();
    Ok(SwitchingReport {
        sigma_u,
        sigma_p,
        synthesized_u,
        synthesized_p,
        threshold: eps,
    })
}

/// Stationary switching function `c(a) - lambda(a)` and its bang-bang control.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySwitching {
    pub sigma_u: Profile,
    pub u_star: Profile,
    pub threshold: f64,
}

pub fn stationary_switching(
    unit_value: &Profile,
    costate: &Profile,
    u_max: f64,
    eps: f64,
) -> Result<StationarySwitching, ControlError> {
    if unit_value.grid() != costate.grid() {
        return Err(ControlError::GridMismatch("unit value vs costate".into()));
    }
    let sigma: Vec<f64> = unit_value.values().iter().zip(costate.values()).map(|(c, l)| c - l).collect();
    let u: Vec<f64> = sigma.iter().map(|&s| bang_bang(s, u_max, eps, 0.0)).collect();
    let grid = *unit_value.grid();
    Ok(StationarySwitching {
        sigma_u: Profile::new(grid, sigma).expect("finite"),
        u_star: Profile::new(grid, u).expect("finite"),
        threshold: eps,
    })
}

/// Counts nodes where a control violates the switching inequalities:
/// `v = upper` where `sigma > eps`, `v = 0` where `sigma < -eps`, and
/// `0 <= v <= upper` otherwise.
pub fn switching_violations(sigma: &[f64], control: &[f64], upper: f64, eps: f64) -> usize {
    sigma
        .iter()
        .zip(control)
        .filter(|(&s, &v)| {
            if s > eps {
                v != upper
            } else if s < -eps {
                v != 0.0
            } else {
                !(0.0..=upper).contains(&v)
            }
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlacknessReport {
    /// `max |eta x|` over all nodes.
    pub residual: f64,
    pub negative_multiplier: usize,
    pub negative_state: usize,
}

pub fn complementary_slackness_residual(state: &Field2D, eta: &Field2D) -> Result<SlacknessReport, ControlError> {
    if !state.same_grids(eta) {
        return Err(ControlError::GridMismatch("state vs multiplier".into()));
    }
    let mut report = SlacknessReport {
        residual: 0.0,
        negative_multiplier: 0,
        negative_state: 0,
    };
    for (&x, &e) in state.values().iter().zip(eta.values()) {
        report.residual = report.residual.max((e * x).abs());
        report.negative_multiplier += usize::from(e < 0.0);
        report.negative_state += usize::from(x < 0.0);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// gradient check

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    RateU,
    RateP,
    EffortW,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::RateU, Channel::RateP, Channel::EffortW];

    pub fn name(self) -> &'static str {
        match self {
            Channel::RateU => "rate-u",
            Channel::RateP => "rate-p",
            Channel::EffortW => "effort-w",
        }
    }

    pub fn kind(self) -> ControlKind {
        match self {
            Channel::RateU | Channel::RateP => ControlKind::Rate,
            Channel::EffortW => ControlKind::Effort,
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel `{s}` (expected rate-u, rate-p or effort-w)"))
    }
}

/// Box-shaped perturbation direction. For the inflow channel the age window
/// is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub t_lo: f64,
    pub t_hi: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    /// Finite-difference step applied to the probe direction.
    pub step: f64,
}

impl Probe {
    fn field(&self, scenario: &Scenario) -> Field2D {
        let p = *self;
        Field2D::from_fn(*scenario.time_grid(), *scenario.age_grid(), |t, a| {
            if t >= p.t_lo && t <= p.t_hi && a >= p.a_lo && a <= p.a_hi {
                1.0
            } else {
                0.0
            }
        })
        .expect("grid")
    }

    fn series(&self, scenario: &Scenario) -> Vec<f64> {
        let p = *self;
        scenario
            .time_grid()
            .times()
            .iter()
            .map(|&t| if t >= p.t_lo && t <= p.t_hi { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub channel: Channel,
    pub adjoint_gradient: f64,
    pub fd_gradient: f64,
    pub rel_err: f64,
    pub nonlocal: NonlocalTerm,
}

fn solve_with(scenario: &Scenario, control: &Field2D, inflow: &[f64]) -> Result<SolveReport, ControlError> {
    Ok(match scenario.kind() {
        ControlKind::Rate => solve_rate_with(scenario, control, inflow)?,
        ControlKind::Effort => solve_effort_with(scenario, control, inflow)?,
    })
}

fn require_interior(report: &SolveReport, what: &str) -> Result<(), ControlError> {
    if report.active_count() > 0 {
        return Err(ControlError::NotInterior(format!(
            "{what}: truncation fired at {} nodes",
            report.active_count()
        )));
    }
    Ok(())
}

/// Compares the adjoint gradient of the discrete objective (augmented by the
/// scenario multiplier term `int int e^{-rt} eta x`) along a probe direction
/// with a central finite difference.
pub fn gradient_check(
    scenario: &Scenario,
    channel: Channel,
    probe: &Probe,
    nonlocal: NonlocalTerm,
) -> Result<GradientCheck, ControlError> {
    if scenario.kind() != channel.kind() {
        return Err(ControlError::Invalid(format!(
            "channel {} needs a {} scenario",
            channel.name(),
            channel.kind()
        )));
    }
    let control = scenario.intensity_field();
    let inflow = scenario.inflow_series();
    let eta = Field2D::from_profile(*scenario.time_grid(), scenario.multiplier());
    let base = solve_with(scenario, &control, &inflow)?;
    require_interior(&base, "base state")?;

    let adjoint = match channel.kind() {
        ControlKind::Rate => solve_rate_adjoint_with(scenario, Some(&base), &eta)?,
        ControlKind::Effort => solve_effort_adjoint_with(scenario, &base, nonlocal)?,
    };

    let upper = control_bound(scenario);
    let p_max = scenario.bounds().p_max;
    let (adjoint_gradient, plus, minus) = match channel {
        Channel::RateU | Channel::EffortW => {
            let dir = probe.field(scenario);
            let g: f64 = adjoint.control_gradient.values().iter().zip(dir.values()).map(|(g, d)| g * d).sum();
            let shifted = |sign: f64| {
                let mut f = control.clone();
                for (v, d) in f.values_mut().iter_mut().zip(dir.values()) {
                    *v += sign * probe.step * d;
                }
                f
            };
            let (up, down) = (shifted(1.0), shifted(-1.0));
            if up.values().iter().any(|&v| v > upper) || down.min() < 0.0 {
                return Err(ControlError::NotInterior("control leaves its box".into()));
            }
            (g, solve_with(scenario, &up, &inflow)?, solve_with(scenario, &down, &inflow)?)
        }
        Channel::RateP => {
            let dir = probe.series(scenario);
            let g: f64 = adjoint.inflow_gradient.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let shifted = |sign: f64| -> Vec<f64> {
                inflow.iter().zip(&dir).map(|(p, d)| p + sign * probe.step * d).collect()
            };
            let (up, down) = (shifted(1.0), shifted(-1.0));
            if up.iter().any(|&v| v > p_max) || down.iter().any(|&v| v < 0.0) {
                return Err(ControlError::NotInterior("inflow leaves its box".into()));
            }
            (g, solve_with(scenario, &control, &up)?, solve_with(scenario, &control, &down)?)
        }
    };
    require_interior(&plus, "perturbed state")?;
    require_interior(&minus, "perturbed state")?;
    let fd_gradient = (lagrangian(scenario, &plus, Some(&eta)) - lagrangian(scenario, &minus, Some(&eta)))
        / (2.0 * probe.step);
    let rel_err = (adjoint_gradient - fd_gradient).abs() / fd_gradient.abs().max(f64::MIN_POSITIVE);
    Ok(GradientCheck {
        channel,
        adjoint_gradient,
        fd_gradient,
        rel_err,
        nonlocal,
    })
}

// ---------------------------------------------------------------------------
// forward-backward sweep

/// Which costate drives the sweep's switching functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FbsCostate {
    /// The multiplier on `{x = 0}` is chosen so the costate runs through
    /// truncated nodes unchanged, i.e. the adjoint ignores the clamp.
    Continuous,
    /// Exact transpose of the truncated scheme. On nodes with no stock the
    /// control has no effect, and the snapping passes can cycle there.
    ClampExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FbsOptions {
    /// Relaxation `omega` in `u <- (1 - omega) u + omega * target`.
    pub relaxation: f64,
    pub max_iter: usize,
    /// Stop when `max|du| / u_max + max|dp| / p_max <= tol`.
    pub tol: f64,
    /// Dead zone half-width.
    pub eps: f64,
    /// Unrelaxed snapping passes run after the relaxed loop.
    pub polish_iter: usize,
    pub costate: FbsCostate,
}

impl Default for FbsOptions {
    fn default() -> Self {
        Self {
            relaxation: 0.5,
            max_iter: 200,
            tol: 1e-9,
            eps: 0.0,
            polish_iter: 50,
            costate: FbsCostate::Continuous,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FbsResult {
    pub u: Field2D,
    pub p: Vec<f64>,
    pub history: Vec<ObjectiveValue>,
    pub iterations: usize,
    /// The final controls reproduce their own bang-bang target.
    pub converged: bool,
    pub warning: Option<String>,
    pub forward: SolveReport,
    pub adjoint: AdjointReport,
    pub switching: SwitchingReport,
    /// Multiplier estimate on the zeroed nodes (heuristic, see
    /// [`implied_multiplier`]).
    pub eta_estimate: Field2D,
    pub slackness: SlacknessReport,
}

/// Heuristic multiplier for the state constraint.
///
/// When truncation fires at node `(n, j)`, the value shifted to
/// `(n+1, j+1)` is pinned at zero and the adjoint takes the exact derivative
/// of the truncated removal instead of propagating the costate. The jump
/// between the pinned-node sensitivity `lambda_eff = omega_n beta_j c_j /
/// (dt h)` and the propagated costate, divided by `dt`, is the multiplier that
/// would produce the same jump in the untruncated adjoint. It is stored at
/// the zeroed node, so its support lies in `{x = 0}` by construction.
pub fn implied_multiplier(scenario: &Scenario, forward: &SolveReport, adjoint: &AdjointReport) -> Field2D {
    let times = *scenario.time_grid();
    let ages = *scenario.age_grid();
    let (dt, h) = (times.dt(), ages.spacing());
    let omega = times.trapezoid_weights();
    let beta = ages.trapezoid_weights();
    let c = scenario.unit_value().values();
    let mut eta = Field2D::zeros(times, ages);
    for n in 0..times.n_steps() {
        for j in 0..ages.len() - 1 {
            if forward.is_active(n, j) {
                let lam_eff = omega[n] * beta[j] * c[j] / (dt * h);
                eta.set(n + 1, j + 1, (lam_eff - adjoint.costate.get(n, j)) / dt);
            }
        }
    }
    eta
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Iterates forward solve, adjoint (see [`FbsCostate`]), bang-bang target and a
/// relaxed control update for the rate model, starting from zero controls.
/// After the relaxed loop settles, unrelaxed passes snap the controls onto
/// their own bang-bang target. Inside the dead zone the previous value is
/// kept.
pub fn forward_backward_sweep(scenario: &Scenario, opts: &FbsOptions) -> Result<FbsResult, ControlError> {
    if scenario.kind() != ControlKind::Rate {
        return Err(ControlError::Invalid("forward-backward sweep runs on the rate model".into()));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(ControlError::Invalid(format!("relaxation must lie in (0, 1], got {}", opts.relaxation)));
    }
    let times = *scenario.time_grid();
    let ages = *scenario.age_grid();
    let b = scenario.bounds();
    let zero_eta = Field2D::zeros(times, ages);
    let costate = |forward: &SolveReport| match opts.costate {
        FbsCostate::Continuous => solve_rate_adjoint_with(scenario, None, &zero_eta),
        FbsCostate::ClampExact => solve_rate_adjoint_with(scenario, Some(forward), &zero_eta),
    };

    let mut u = Field2D::zeros(times, ages);
    let mut p = vec![0.0; times.n_levels()];
    let mut history = Vec::new();
    let mut best: Option<(f64, Field2D, Vec<f64>)> = None;
    let mut decreases = 0;
    let mut warning = None;
    let mut iterations = 0;

    let step = |u: &Field2D, p: &[f64], omega: f64| -> Result<(Field2D, Vec<f64>, ObjectiveValue, f64), ControlError> {
        let forward = solve_rate_with(scenario, u, p)?;
        let objective = objective_rate(scenario, &forward);
        let adjoint = costate(&forward)?;
        let sw = switching_functions(scenario, &adjoint, opts.eps)?;
        let mut next_u = u.clone();
        for ((v, s), old) in next_u.values_mut().iter_mut().zip(sw.sigma_u.values()).zip(u.values()) {
            let target = bang_bang(*s, b.u_max, opts.eps, *old);
            *v = (1.0 - omega) * old + omega * target;
        }
        let next_p: Vec<f64> = sw
            .sigma_p
            .iter()
            .zip(p)
            .map(|(s, old)| (1.0 - omega) * old + omega * bang_bang(*s, b.p_max, opts.eps, *old))
            .collect();
        let change = max_abs_diff(next_u.values(), u.values()) / b.u_max + max_abs_diff(&next_p, p) / b.p_max;
        Ok((next_u, next_p, objective, change))
    };

    for _ in 0..opts.max_iter {
        iterations += 1;
        let (next_u, next_p, objective, change) = step(&u, &p, opts.relaxation)?;
        if let Some(prev) = history.last().map(|o: &ObjectiveValue| o.value) {
            decreases = if objective.value < prev { decreases + 1 } else { 0 };
        }
        history.push(objective);
        if best.as_ref().is_none_or(|(v, _, _)| objective.value > *v) {
            best = Some((objective.value, u.clone(), p.clone()));
        }
        if decreases >= 5 {
            let (_, bu, bp) = best.clone().expect("at least one iterate");
            u = bu;
            p = bp;
            warning = Some(format!(
                "objective decreased for 5 consecutive iterates; returning the best iterate ({})",
                iterations
            ));
            break;
        }
        u = next_u;
        p = next_p;
        if change <= opts.tol {
            break;
        }
    }

    let mut converged = false;
    if warning.is_none() {
        for _ in 0..opts.polish_iter {
            iterations += 1;
            let (next_u, next_p, objective, change) = step(&u, &p, 1.0)?;
            history.push(objective);
            u = next_u;
            p = next_p;
            if change == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            warning = Some("bang-bang snapping did not reach a fixed point".into());
        }
    }

    let forward = solve_rate_with(scenario, &u, &p)?;
    let adjoint = costate(&forward)?;
    let switching = switching_functions(scenario, &adjoint, opts.eps)?;
    let eta_estimate = implied_multiplier(scenario, &forward, &adjoint);
    let slackness = complementary_slackness_residual(&forward.state, &eta_estimate)?;
    Ok(FbsResult {
        u,
        p,
        history,
        iterations,
        converged,
        warning,
        forward,
        adjoint,
        switching,
        eta_estimate,
        slackness,
    })
}

// ---------------------------------------------------------------------------
// yield sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Both,
    Rate,
    Effort,
}

/// Stationary comparison setup: a common intensity `h` on an age window
/// for both mechanisms, with density feedback `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTemplate {
    pub mortality: Profile,
    pub alpha: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub inflow: f64,
    pub fixed_point: FixedPointOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub y_rate: Option<f64>,
    pub y_effort: Option<f64>,
    pub e_rate: Option<f64>,
    pub e_effort: Option<f64>,
    /// Age where the rate-model profile is truncated, if anywhere.
    pub rate_crossing: Option<f64>,
}

/// Evenly spaced intensities `0, h_max / (points - 1), ..., h_max`.
pub fn sweep_values(h_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| h_max * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Stationary yields and aggregates for each `h`. Points are independent and
/// evaluated in parallel on the current rayon pool; output order follows
/// `h_values`.
pub fn yield_sweep(
    template: &SweepTemplate,
    h_values: &[f64],
    mechanism: Mechanism,
) -> Result<Vec<SweepRow>, ControlError> {
    let grid = *template.mortality.grid();
    if let Some(h) = h_values.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
        return Err(ControlError::Invalid(format!("intensity {h} must be >= 0")));
    }
    h_values
        .par_iter()
        .map(|&h| {
            let control = Profile::from_fn(grid, |a| if a >= template.a_lo && a <= template.a_hi { h } else { 0.0 })
                .expect("finite");
            let mut row = SweepRow {
                h,
                y_rate: None,
                y_effort: None,
                e_rate: None,
                e_effort: None,
                rate_crossing: None,
            };
            if mechanism != Mechanism::Effort {
                let r = stationary_rate_truncated(
                    &template.mortality,
                    &control,
                    template.inflow,
                    template.alpha,
                    &template.fixed_point,
                )?;
                row.y_rate = Some(r.yield_rate);
                row.e_rate = Some(r.aggregate);
                row.rate_crossing = r.crossing;
            }
            if mechanism != Mechanism::Rate {
                let e = stationary_effort_profile(
                    &template.mortality,
                    &control,
                    template.inflow,
                    template.alpha,
                    &template.fixed_point,
                )?;
                let yield_density: Vec<f64> =
                    control.values().iter().zip(e.profile.values()).map(|(w, x)| w * x).collect();
                row.y_effort = Some(trapezoid_slice(&yield_density, grid.spacing()));
                row.e_effort = Some(e.aggregate);
            }
            Ok(row)
        })
        .collect()
}

/// Shape diagnostics of a two-mechanism sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepProperties {
    pub zero_at_origin: bool,
    /// Largest second difference of `Y_effort`; concave when `<= 0`.
    pub max_second_difference_effort: f64,
    /// Largest `E_rate - E_effort` over `h > 0`; ordered when `<= 0`.
    pub max_depletion_gap: f64,
    /// First `h` where the rate profile is truncated.
    pub truncation_onset: Option<f64>,
    pub peak_increment_rate: f64,
    /// Largest `Y_rate` increment over steps beyond the onset.
    pub max_increment_after_onset: f64,
    /// `max_increment_after_onset / peak_increment_rate`.
    pub plateau_ratio: f64,
}

pub fn sweep_properties(rows: &[SweepRow]) -> Option<SweepProperties> {
    let yr: Vec<f64> = rows.iter().map(|r| r.y_rate).collect::<Option<_>>()?;
    let ye: Vec<f64> = rows.iter().map(|r| r.y_effort).collect::<Option<_>>()?;
    let er: Vec<f64> = rows.iter().map(|r| r.e_rate).collect::<Option<_>>()?;
    let ee: Vec<f64> = rows.iter().map(|r| r.e_effort).collect::<Option<_>>()?;
    let first = rows.first()?;
    let zero_at_origin = first.h == 0.0 && yr[0] == 0.0 && ye[0] == 0.0;
    let max_second_difference_effort = ye
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let max_depletion_gap = rows
        .iter()
        .zip(er.iter().zip(&ee))
        .filter(|(r, _)| r.h > 0.0)
        .map(|(_, (a, b))| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let increments: Vec<f64> = yr.windows(2).map(|w| w[1] - w[0]).collect();
    let peak_increment_rate = increments.iter().copied().fold(0.0, f64::max);
    let onset = rows.iter().position(|r| r.rate_crossing.is_some());
    // increments for steps that start at or after the onset point
    let max_increment_after_onset = onset
        .map(|k| increments.iter().skip(k).copied().fold(0.0, f64::max))
        .unwrap_or(0.0);
    Some(SweepProperties {
        zero_at_origin,
        max_second_difference_effort,
        max_depletion_gap,
        truncation_onset: onset.map(|k| rows[k].h),
        peak_increment_rate,
        max_increment_after_onset,
        plateau_ratio: if peak_increment_rate > 0.0 {
            max_increment_after_onset / peak_increment_rate
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AgeGrid;

    #[test]
    fn bang_bang_rules() {
        assert_eq!(bang_bang(0.7, 0.15, 0.0, 0.0), 0.15);
        assert_eq!(bang_bang(-0.2, 2.0, 0.0, 0.0), 0.0);
        assert_eq!(bang_bang(0.01, 0.15, 0.05, 0.0), 0.0);
        assert_eq!(bang_bang(0.01, 0.15, 0.05, 0.1), 0.1);
        assert_eq!(bang_bang(0.0, 0.15, 0.0, 0.07), 0.07);
    }

    #[test]
    fn stationary_switching_direct_formula() {
        let g = AgeGrid::new(10.0, 3).unwrap();
        let c = Profile::constant(g, 1.0);
        let lam = Profile::new(g, vec![0.3, 1.2, 0.0]).unwrap();
        let s = stationary_switching(&c, &lam, 0.15, 0.0).unwrap();
        assert!((s.sigma_u.values()[0] - 0.7).abs() < 1e-15);
        assert_eq!(s.u_star.values(), &[0.15, 0.0, 0.15]);
    }

    #[test]
    fn violations_counted() {
        let sigma = [1.0, -1.0, 0.0, 1.0];
        assert_eq!(switching_violations(&sigma, &[2.0, 0.0, 1.0, 2.0], 2.0, 0.0), 0);
        assert_eq!(switching_violations(&sigma, &[1.0, 0.5, 3.0, 2.0], 2.0, 0.0), 3);
    }

    #[test]
    fn slackness_on_disjoint_supports() {
        let g = AgeGrid::new(10.0, 11).unwrap();
        let t = crate::grid::TimeGrid::new(1.0, 1, &g).unwrap();
        let x = Field2D::from_fn(t, g, |_, a| if a < 5.0 { 1.0 } else { 0.0 }).unwrap();
        let eta = Field2D::from_fn(t, g, |_, a| if a >= 5.0 { 3.0 } else { 0.0 }).unwrap();
        let r = complementary_slackness_residual(&x, &eta).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.negative_multiplier + r.negative_state, 0);
        let zero = complementary_slackness_residual(&x, &Field2D::zeros(t, g)).unwrap();
        assert_eq!(zero.residual, 0.0);
    }

    #[test]
    fn sweep_values_spacing() {
        let v = sweep_values(0.5, 51);
        assert_eq!(v.len(), 51);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[50], 0.5);
        assert!((v[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn channel_names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.name().parse::<Channel>().unwrap(), c);
        }
        assert!("rate-x".parse::<Channel>().is_err());
    }
}
