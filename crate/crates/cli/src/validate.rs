//! The acceptance suite. Each criterion runs at its pinned tolerance against
//! an oracle written here, independently of the solver code paths it checks.

use std::fmt;
use std::time::Instant;

use harvest_core::adjoint::rate_duality_check;
use harvest_core::control::{forward_backward_sweep, sweep_properties, sweep_values, Channel, FbsOptions, Mechanism};
use harvest_core::grid::{Field2D, Profile};
use harvest_core::presets;
use harvest_core::scenario::{AgeFunction, Intensity, TimeFunction};
use harvest_core::stationary::{
    stationary_adjoint, stationary_effort_profile, stationary_rate_profile, FixedPointOptions,
};
use harvest_core::transport::solve_forward;
use harvest_core::{AgeGrid, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{
    audit_fbs, refinement_study, run_preset, run_sweep, sweep_template, GradientSuite, CONCAVITY_TOL, GRADIENT_TOL,
};

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "exact advection at unit Courant number"),
    (2, "closed-form stationary profiles"),
    (3, "fixed-point aggregate vs bisection"),
    (4, "stationary adjoint vs exponential integrator"),
    (5, "adjoint gradients vs finite differences"),
    (6, "discrete duality on random fields"),
    (7, "balance residual refinement ratio"),
    (8, "yield sweep shape"),
    (9, "forward-backward sweep self-consistency"),
    (10, "byte-identical preset outputs"),
];

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.2} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

type Check = Result<(bool, String), String>;

/// Runs the selected criteria (all when `only` is empty) in order.
pub fn run(only: &[u32]) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter(|(id, _)| only.is_empty() || only.contains(id))
        .map(|&(id, title)| {
            let start = Instant::now();
            let outcome = match id {
                1 => exact_advection(),
                2 => closed_forms(),
                3 => fixed_point(),
                4 => stationary_costate(),
                5 => gradients(),
                6 => duality(),
                7 => refinement(),
                8 => yield_sweep_shape(),
                9 => fbs_consistency(),
                _ => determinism(),
            };
            let seconds = start.elapsed().as_secs_f64();
            let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
            CriterionResult {
                id,
                title,
                passed,
                detail,
                seconds,
            }
        })
        .collect()
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

fn max_rel(values: &[f64], oracle: &[f64]) -> f64 {
    values
        .iter()
        .zip(oracle)
        .map(|(v, o)| (v - o).abs() / o.abs())
        .fold(0.0, f64::max)
}

// 1 -------------------------------------------------------------------------

fn exact_advection() -> Check {
    let start = Instant::now();
    let x0 = |a: f64| 1.0 + 0.3 * (2.0 * a).sin();
    let p = |t: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * t / 3.0).sin();
    let grid = AgeGrid::new(10.0, 200).map_err(err)?;
    let mut doc = presets::dynamics().doc;
    doc.age_grid.n_nodes = 200;
    doc.time_grid.n_steps = 400;
    doc.time_grid.horizon = 400.0 * grid.spacing();
    doc.mortality.baseline = AgeFunction::Constant { value: 0.0 };
    doc.mortality.density_coefficient = 0.0;
    doc.control.intensity = Intensity::Window {
        a_lo: 3.0,
        a_hi: 7.0,
        level: 0.0,
        ramp: None,
    };
    doc.inflow = TimeFunction::Sinusoid {
        p0: 1.0,
        p1: 0.5,
        period: 3.0,
    };
    doc.initial_profile = Some(AgeFunction::Tabulated {
        values: grid.nodes().into_iter().map(x0).collect(),
    });
    let sc = Scenario::from_doc(doc).map_err(err)?;
    let rep = solve_forward(&sc).map_err(err)?;
    let times = sc.time_grid().times();
    let ages = grid.nodes();
    let mut worst = 0.0_f64;
    for (n, &t) in times.iter().enumerate() {
        for (j, &a) in ages.iter().enumerate() {
            let exact = if a <= t { p(t - a) } else { x0(a - t) };
            worst = worst.max((rep.state.get(n, j) - exact).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-12 && secs < 1.0,
        format!("200 x 400 grid, max |x - characteristic| = {worst:.2e} (tol 1e-12), solve {secs:.3} s (limit 1 s)"),
    ))
}

// 2 -------------------------------------------------------------------------

fn closed_forms() -> Check {
    let g = AgeGrid::new(10.0, 500).map_err(err)?;
    let rate = stationary_rate_profile(&Profile::constant(g, 0.1), &Profile::constant(g, 0.05), 1.0).map_err(err)?;
    let rate_oracle: Vec<f64> = g.nodes().iter().map(|a| 1.5 * (-0.1 * a).exp() - 0.5).collect();
    let rate_err = max_rel(rate.profile.values(), &rate_oracle);

    let mu = Profile::from_fn(g, |a| 0.01 + 0.005 * a).map_err(err)?;
    let effort = stationary_effort_profile(&mu, &Profile::zeros(g), 1.0, 0.0, &FixedPointOptions::default())
        .map_err(err)?;
    let survival: Vec<f64> = g.nodes().iter().map(|a| (-(0.01 * a + 0.0025 * a * a)).exp()).collect();
    let effort_err = max_rel(effort.profile.values(), &survival);
    Ok((
        rate_err <= 1e-5 && effort_err <= 1e-5,
        format!("rate profile rel err {rate_err:.2e}, effort survival rel err {effort_err:.2e} (tol 1e-5)"),
    ))
}

// 3 -------------------------------------------------------------------------

/// Discrete aggregate map rebuilt from scratch: trapezoid cumulative hazard,
/// exponential survival, trapezoid total.
fn aggregate_map(mu: &[f64], w: &[f64], h: f64, p: f64, alpha: f64, e: f64) -> f64 {
    let hazard = |i: usize| mu[i] + w[i] + alpha * e;
    let mut cum = 0.0;
    let mut total = 0.0;
    let mut prev = p;
    for i in 1..mu.len() {
        cum += 0.5 * h * (hazard(i - 1) + hazard(i));
        let x = p * (-cum).exp();
        total += 0.5 * h * (prev + x);
        prev = x;
    }
    total
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn fixed_point() -> Check {
    let sc = Scenario::from_doc(presets::profiles_effort().doc).map_err(err)?;
    let w = sc.intensity_field().row_profile(0);
    let p = sc.inflow_series()[0];
    let alpha = sc.density_coefficient();
    let opts = FixedPointOptions::default();
    let r = stationary_effort_profile(sc.mortality(), &w, p, alpha, &opts).map_err(err)?;
    let last = r.residual_history.last().copied().unwrap_or(f64::NAN);

    let h = sc.age_grid().spacing();
    let mu = sc.mortality().values();
    let upper = p * sc.age_grid().max_age();
    let oracle = bisect(|e| aggregate_map(mu, w.values(), h, p, alpha, e) - e, 0.0, upper);
    let gap = (r.aggregate - oracle).abs();
    Ok((
        last <= 1e-10 && r.iterations <= 200 && gap <= 1e-8,
        format!(
            "E* = {:.12} after {} iterations (last step {last:.1e}, tol 1e-10), bisection E = {oracle:.12}, gap {gap:.1e} (tol 1e-8)",
            r.aggregate, r.iterations
        ),
    ))
}

// 4 -------------------------------------------------------------------------

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Integrates `lambda' = (r + mu) lambda - eta`, `lambda(A) = 0` backward one
/// cell at a time with the exact propagator of the linear hazard and
/// Gauss-Legendre quadrature for the forcing. `mu` and `eta` are the linear
/// interpolants of the node values.
fn exponential_integrator(mu: &[f64], eta: &[f64], r: f64, h: f64) -> Vec<f64> {
    let n = mu.len();
    let mut lam = vec![0.0; n];
    for j in (0..n - 1).rev() {
        let (k0, k1) = (r + mu[j], r + mu[j + 1]);
        // int_{a_j}^{a_j + s} (r + mu)
        let hazard = |s: f64| k0 * s + 0.5 * (k1 - k0) * s * s / h;
        let forcing: f64 = GAUSS5
            .iter()
            .map(|(x, wt)| {
                let s = 0.5 * h * (x + 1.0);
                let e = eta[j] + (eta[j + 1] - eta[j]) * s / h;
                0.5 * h * wt * (-hazard(s)).exp() * e
            })
            .sum();
        lam[j] = (-hazard(h)).exp() * lam[j + 1] + forcing;
    }
    lam
}

fn stationary_costate() -> Check {
    let sc = Scenario::from_doc(presets::switching(presets::DEFAULT_ETA0).doc).map_err(err)?;
    let lam = stationary_adjoint(sc.mortality(), sc.multiplier(), sc.discount_rate()).map_err(err)?;
    let oracle = exponential_integrator(
        sc.mortality().values(),
        sc.multiplier().values(),
        sc.discount_rate(),
        sc.age_grid().spacing(),
    );
    let scale = oracle.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = lam.values().iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let rel = diff / scale;
    let end = lam.last();
    Ok((
        rel <= 1e-6 && end == 0.0,
        format!("max |lambda - oracle| / max |oracle| = {rel:.2e} (tol 1e-6), lambda(A) = {end}"),
    ))
}

// 5 -------------------------------------------------------------------------

fn gradients() -> Check {
    let start = Instant::now();
    let suite = GradientSuite::run().map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut parts: Vec<String> = suite
        .checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.channel.name(), c.rel_err))
        .collect();
    parts.push(format!(
        "effort-w ablated {:.1e} ({:.0}x)",
        suite.ablated.rel_err,
        suite.ablated.rel_err / suite.effort_error()
    ));
    debug_assert_eq!(suite.checks.len(), Channel::ALL.len());
    Ok((
        suite.passed() && secs < 30.0,
        format!(
            "rel_err {} (tol {GRADIENT_TOL:e}, ablation >= 10x), {secs:.2} s (limit 30 s)",
            parts.join(", ")
        ),
    ))
}

// 6 -------------------------------------------------------------------------

fn duality() -> Check {
    let sc = Scenario::from_doc(presets::gradcheck(Channel::RateU).doc).map_err(err)?;
    let (times, ages) = (*sc.time_grid(), *sc.age_grid());
    let size = times.n_levels() * ages.len();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let eta: Vec<f64> = (0..size).map(|_| rng.gen::<f64>()).collect();
        let du: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dp: Vec<f64> = (0..times.n_levels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dx0: Vec<f64> = (0..ages.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta = Field2D::from_values(times, ages, eta).map_err(err)?;
        let du = Field2D::from_values(times, ages, du).map_err(err)?;
        let check = rate_duality_check(&sc, &eta, &du, &dp, &dx0).map_err(err)?;
        worst = worst.max(check.residual);
    }
    Ok((
        worst <= 1e-10,
        format!("20 random pairs on a {} x {} grid, max pairing residual {worst:.2e} (tol 1e-10)", ages.len(), times.n_steps()),
    ))
}

// 7 -------------------------------------------------------------------------

fn refinement() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["dynamics", "dynamics-effort"] {
        let preset = presets::by_name(name).expect("preset exists");
        let sc = Scenario::from_doc(preset.doc).map_err(err)?;
        let study = refinement_study(&sc, 2).map_err(err)?;
        ok &= (1.7..=2.3).contains(&study.ratio);
        parts.push(format!(
            "{name}: {:.3e} -> {:.3e}, ratio {:.4}",
            study.coarse.max_balance_residual(),
            study.fine.max_balance_residual(),
            study.ratio
        ));
    }
    Ok((ok, format!("{} (band [1.7, 2.3])", parts.join("; "))))
}

// 8 -------------------------------------------------------------------------

fn yield_sweep_shape() -> Check {
    let start = Instant::now();
    let sc = Scenario::from_doc(presets::comparison().doc).map_err(err)?;
    let template = sweep_template(&sc).map_err(err)?;
    let h = sweep_values(presets::SWEEP_H_MAX, presets::SWEEP_POINTS);
    let rows = run_sweep(&template, &h, Mechanism::Both, 0).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let props = sweep_properties(&rows).ok_or("sweep rows incomplete")?;
    let concave = props.max_second_difference_effort <= CONCAVITY_TOL;
    let ordered = props.max_depletion_gap <= 0.0;
    let plateau = props.truncation_onset.is_some() && props.plateau_ratio <= 0.01;
    let fast = secs < 60.0;
    Ok((
        props.zero_at_origin && concave && ordered && plateau && fast,
        format!(
            "zero at h = 0: {}; Y_E max second difference {:.2e} (tol 1e-8): {}; max E_rate - E_effort {:.2e}: {}; \
             truncation from h = {}, post-onset Y_R increment / peak increment = {:.4} (limit 0.01): {}; {secs:.2} s",
            props.zero_at_origin,
            props.max_second_difference_effort,
            verdict(concave),
            props.max_depletion_gap,
            verdict(ordered),
            props.truncation_onset.map_or("never".to_string(), |v| format!("{v:.2}")),
            props.plateau_ratio,
            verdict(plateau),
        ),
    ))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILS"
    }
}

// 9 -------------------------------------------------------------------------

fn fbs_consistency() -> Check {
    let sc = Scenario::from_doc(presets::fbs().doc).map_err(err)?;
    let r = forward_backward_sweep(&sc, &FbsOptions::default()).map_err(err)?;
    let audit = audit_fbs(&sc, &r, 0.0).map_err(err)?;
    Ok((
        audit.passed(),
        format!(
            "{} iterations (converged {}), switching violations u {} p {}, slackness residual {:.1e} (tol 1e-8)",
            r.iterations, r.converged, audit.violations_u, audit.violations_p, audit.slackness
        ),
    ))
}

// 10 ------------------------------------------------------------------------

fn csv_files(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.push((name, std::fs::read(&path).map_err(err)?));
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Check {
    let mut mismatched = Vec::new();
    let mut count = 0;
    for name in presets::NAMES {
        let first = tempfile::tempdir().map_err(err)?;
        let second = tempfile::tempdir().map_err(err)?;
        run_preset(name, first.path().to_path_buf()).map_err(err)?;
        run_preset(name, second.path().to_path_buf()).map_err(err)?;
        let (a, b) = (csv_files(first.path())?, csv_files(second.path())?);
        if a.is_empty() || a != b {
            mismatched.push(name);
        }
        count += a.len();
    }
    Ok((
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} presets, {count} CSV files identical across two runs", presets::NAMES.len())
        } else {
            format!("outputs differ for {}", mismatched.join(", "))
        },
    ))
}
