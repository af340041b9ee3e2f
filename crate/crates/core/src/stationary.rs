//! Time-independent solutions: the affine rate-control profile, the
//! exponential effort-control profile with a self-consistent aggregate, and
//! the explicit stationary adjoint.
//!
//! Every survival factor is formed by exponentiating a node-wise cumulative
//! trapezoid sum; per-cell factors are never multiplied together.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{cumulative_slice, trapezoid_slice, AgeGrid, Profile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("fixed point did not converge in {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("fixed point diverging at iteration {iteration} (residual {residual:e})")]
    Divergence { iteration: usize, residual: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Settings for the damped aggregate iteration
/// `E_{k+1} = (1 - damping) E_k + damping * Phi(E_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Residual grows this many steps in a row before the iteration is declared
/// divergent.
const DIVERGENCE_RUN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub profile: Profile,
    /// First node where the untruncated formula is negative.
    pub first_negative: Option<usize>,
}

fn same_grid(a: &Profile, b: &Profile) -> Result<AgeGrid, StationaryError> {
    if a.grid() != b.grid() {
        return Err(StationaryError::Invalid("profiles live on different grids".into()));
    }
    Ok(*a.grid())
}

/// `x(a) = p exp(-M(a)) - int_0^a exp(M(s) - M(a)) u(s) ds`, `M = int_0^a mu`.
///
/// The formula is affine in `(p, u)` and may go negative; the first negative
/// node is flagged rather than raised.
pub fn stationary_rate_profile(mortality: &Profile, u: &Profile, p: f64) -> Result<RateProfile, StationaryError> {
    let grid = same_grid(mortality, u)?;
    let h = grid.spacing();
    let m = cumulative_slice(mortality.values(), h);
    let weighted: Vec<f64> = m.iter().zip(u.values()).map(|(mi, ui)| mi.exp() * ui).collect();
    let removed = cumulative_slice(&weighted, h);
    let values: Vec<f64> = m.iter().zip(&removed).map(|(mi, ci)| (-mi).exp() * (p - ci)).collect();
    let first_negative = values.iter().position(|&v| v < 0.0);
    let profile = Profile::new(grid, values).map_err(|e| StationaryError::Invalid(e.to_string()))?;
    Ok(RateProfile { profile, first_negative })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEffortResult {
    pub profile: Profile,
    pub aggregate: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

fn validate_inputs(p: f64, alpha: f64, control: &Profile, opts: &FixedPointOptions) -> Result<(), StationaryError> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(StationaryError::Invalid(format!("inflow must be >= 0, got {p}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(StationaryError::Invalid(format!("density coefficient must be >= 0, got {alpha}")));
    }
    if control.values().iter().any(|&v| v < 0.0) {
        return Err(StationaryError::Invalid("control must be >= 0".into()));
    }
    if !(opts.tol > 0.0) || !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.max_iter == 0 {
        return Err(StationaryError::Invalid(format!("bad fixed-point options {opts:?}")));
    }
    Ok(())
}

/// Damped scalar fixed point. Starts from `Phi(0)`, which bounds the root
/// from above whenever `Phi` is non-increasing.
fn damped_fixed_point(
    phi: impl Fn(f64) -> f64,
    opts: &FixedPointOptions,
) -> Result<(f64, usize, Vec<f64>), StationaryError> {
    let mut e = phi(0.0);
    let mut history = Vec::new();
    let mut growth_run = 0;
    for k in 1..=opts.max_iter {
        let next = (1.0 - opts.damping) * e + opts.damping * phi(e);
        let residual = (next - e).abs();
        if !next.is_finite() {
            return Err(StationaryError::Divergence { iteration: k, residual });
        }
        if let Some(&prev) = history.last() {
            growth_run = if residual > prev { growth_run + 1 } else { 0 };
            if growth_run >= DIVERGENCE_RUN {
                return Err(StationaryError::Divergence { iteration: k, residual });
            }
        }
        history.push(residual);
        e = next;
        if residual <= opts.tol {
            return Ok((e, k, history));
        }
    }
    Err(StationaryError::NonConvergence {
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Effort-control survival profile for a fixed aggregate:
/// `p exp(-int_0^a (mu + alpha E + w))`.
pub fn effort_profile_at(mortality: &Profile, w: &Profile, p: f64, alpha: f64, aggregate: f64) -> Profile {
    let grid = *mortality.grid();
    let total: Vec<f64> = mortality.values().iter().zip(w.values()).map(|(m, w)| m + w).collect();
    let c = cumulative_slice(&total, grid.spacing());
    let values = c
        .iter()
        .enumerate()
        .map(|(i, ci)| p * (-(ci + alpha * aggregate * grid.node(i))).exp())
        .collect();
    Profile::new(grid, values).expect("finite by construction")
}

/// `Phi(E) = int_0^A p exp(-int_0^a (mu + alpha E + w))`.
pub fn effort_aggregate_map(mortality: &Profile, w: &Profile, p: f64, alpha: f64, aggregate: f64) -> f64 {
    let x = effort_profile_at(mortality, w, p, alpha, aggregate);
    trapezoid_slice(x.values(), mortality.grid().spacing())
}

/// Stationary effort-control profile with the aggregate determined by damped
/// fixed-point iteration. `alpha` is the density coefficient in
/// `mu(E, a) = mu(a) + alpha E`.
pub fn stationary_effort_profile(
    mortality: &Profile,
    w: &Profile,
    p: f64,
    alpha: f64,
    opts: &FixedPointOptions,
) -> Result<StationaryEffortResult, StationaryError> {
    same_grid(mortality, w)?;
    validate_inputs(p, alpha, w, opts)?;
    let (aggregate, iterations, residual_history) =
        damped_fixed_point(|e| effort_aggregate_map(mortality, w, p, alpha, e), opts)?;
    Ok(StationaryEffortResult {
        profile: effort_profile_at(mortality, w, p, alpha, aggregate),
        aggregate,
        iterations,
        residual_history,
    })
}

/// Rate-control stationary state with truncation and density feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRateResult {
    /// Nonnegative profile: the affine formula up to its first zero, zero after.
    pub profile: Profile,
    pub aggregate: f64,
    /// `int u_actual da`, harvesting only where stock is present.
    pub yield_rate: f64,
    /// Age where the untruncated formula first reaches zero.
    pub crossing: Option<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

struct Truncated {
    values: Vec<f64>,
    aggregate: f64,
    yield_rate: f64,
    crossing: Option<f64>,
}

fn truncate_rate(mortality: &Profile, u: &Profile, p: f64, alpha: f64, aggregate: f64) -> Truncated {
    let grid = *mortality.grid();
    let h = grid.spacing();
    let shifted = mortality.map(|m| m + alpha * aggregate).expect("finite");
    let raw = stationary_rate_profile(&shifted, u, p).expect("same grid");
    let mut values = raw.profile.into_values();
    let uv = u.values();
    match raw.first_negative {
        None => {
            let aggregate = trapezoid_slice(&values, h);
            Truncated {
                values,
                aggregate,
                yield_rate: trapezoid_slice(uv, h),
                crossing: None,
            }
        }
        Some(0) => {
            values.iter_mut().for_each(|v| *v = 0.0);
            Truncated {
                values,
                aggregate: 0.0,
                yield_rate: 0.0,
                crossing: Some(0.0),
            }
        }
        Some(k) => {
            // the zero lies inside cell [k-1, k]; locate it by linear interpolation
            let (x0, x1) = (values[k - 1], values[k]);
            let frac = x0 / (x0 - x1);
            let u_cross = uv[k - 1] + frac * (uv[k] - uv[k - 1]);
            let aggregate = trapezoid_slice(&values[..k], h) + 0.5 * frac * h * x0;
            let yield_rate = trapezoid_slice(&uv[..k], h) + 0.5 * frac * h * (uv[k - 1] + u_cross);
            values[k..].iter_mut().for_each(|v| *v = 0.0);
            Truncated {
                values,
                aggregate,
                yield_rate,
                crossing: Some(grid.node(k - 1) + frac * h),
            }
        }
    }
}

/// Stationary rate-control state under `mu(a) + alpha E`, truncated at the
/// first age where the affine formula reaches zero, with `E` found by the
/// same damped iteration as the effort model.
pub fn stationary_rate_truncated(
    mortality: &Profile,
    u: &Profile,
    p: f64,
    alpha: f64,
    opts: &FixedPointOptions,
) -> Result<TruncatedRateResult, StationaryError> {
    same_grid(mortality, u)?;
    validate_inputs(p, alpha, u, opts)?;
    let (aggregate, iterations, residual_history) = if alpha == 0.0 {
        (truncate_rate(mortality, u, p, 0.0, 0.0).aggregate, 0, Vec::new())
    } else {
        damped_fixed_point(|e| truncate_rate(mortality, u, p, alpha, e).aggregate, opts)?
    };
    let t = truncate_rate(mortality, u, p, alpha, aggregate);
    Ok(TruncatedRateResult {
        profile: Profile::new(*mortality.grid(), t.values).expect("finite"),
        aggregate: t.aggregate,
        yield_rate: t.yield_rate,
        crossing: t.crossing,
        iterations,
        residual_history,
    })
}

/// `lambda(a) = int_a^A exp(-int_a^s (r + mu)) eta(s) ds`, so `lambda(A) = 0`.
/// `mu` and `eta` are read as piecewise linear between nodes.
pub fn stationary_adjoint(mortality: &Profile, eta: &Profile, r: f64) -> Result<Profile, StationaryError> {
    let grid = same_grid(mortality, eta)?;
    if !(r > 0.0) {
        return Err(StationaryError::Invalid(format!("discount rate must be > 0, got {r}")));
    }
    let h = grid.spacing();
    let rates: Vec<f64> = mortality.values().iter().map(|m| r + m).collect();
    let big_r = cumulative_slice(&rates, h);
    let n = grid.len();
    let eta = eta.values();
    let discounted: Vec<f64> = big_r.iter().zip(eta).map(|(ri, e)| (-ri).exp() * e).collect();
    // tail integrals int_{a_i}^A, accumulated from the right so the last is
    // exactly 0. Simpson per cell on the linear interpolants of the hazard
    // and eta; a multiplier that switches on inside one cell is otherwise
    // only first-order accurate there.
    let mut tail = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let r_mid = big_r[i] + 0.5 * h * rates[i] + 0.125 * h * (rates[i + 1] - rates[i]);
        let mid = (-r_mid).exp() * 0.5 * (eta[i] + eta[i + 1]);
        tail[i] = tail[i + 1] + h / 6.0 * (discounted[i] + 4.0 * mid + discounted[i + 1]);
    }
    let values = big_r.iter().zip(&tail).map(|(ri, ti)| ri.exp() * ti).collect();
    Profile::new(grid, values).map_err(|e| StationaryError::Invalid(e.to_string()))
}
