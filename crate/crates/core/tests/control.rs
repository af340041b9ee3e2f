use harvest_core::control::*;
use harvest_core::grid::Field2D;
use harvest_core::presets;
use harvest_core::scenario::*;
use harvest_core::stationary::stationary_adjoint;
use harvest_core::transport::solve_rate_forward;
use harvest_core::Scenario;

const ETA0: f64 = 1.0;
const EPS: f64 = 0.05;

/// `lambda(a) = eta0 int_{max(a, 8.5)}^{10} exp(-int_a^s (r + mu)) ds` with
/// `mu = 0.01 + 0.005 a`, by composite Simpson.
fn costate_oracle(a: f64) -> f64 {
    let lo = a.max(8.5);
    if lo >= 10.0 {
        return 0.0;
    }
    let hazard = |s: f64| 0.06 * (s - a) + 0.0025 * (s * s - a * a);
    let m = 400;
    let step = (10.0 - lo) / m as f64;
    let f = |s: f64| (-hazard(s)).exp();
    let mut sum = f(lo) + f(10.0);
    for i in 1..m {
        sum += f(lo + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    ETA0 * sum * step / 3.0
}

fn unit_value(a: f64) -> f64 {
    presets::sinusoidal_unit_value().at(a).unwrap()
}

/// Ages where `c - lambda - eps` changes sign, by bisection between the
/// sign changes of a fine sample. Jumps of `c` show up as roots at the jump.
fn harvest_set_edges() -> Vec<f64> {
    let g = |a: f64| unit_value(a) - costate_oracle(a) - EPS;
    let samples = 20_000;
    let at = |i: usize| 10.0 * i as f64 / samples as f64;
    let mut roots = Vec::new();
    for i in 0..samples {
        let (mut lo, mut hi) = (at(i), at(i + 1));
        if (g(lo) > 0.0) == (g(hi) > 0.0) {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) > 0.0) == (g(lo) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots
}

#[test]
fn bang_bang_set_matches_the_roots_of_the_switching_function() {
    let sc = Scenario::from_doc(presets::switching(ETA0).doc).unwrap();
    let lam = stationary_adjoint(sc.mortality(), sc.multiplier(), sc.discount_rate()).unwrap();
    let sw = stationary_switching(sc.unit_value(), &lam, sc.bounds().u_max, EPS).unwrap();
    let ages = sc.age_grid().nodes();
    let u = sw.u_star.values();
    let switches: Vec<f64> = (1..u.len()).filter(|&j| u[j] != u[j - 1]).map(|j| 0.5 * (ages[j] + ages[j - 1])).collect();
    let roots = harvest_set_edges();
    assert_eq!(switches.len(), roots.len(), "switches {switches:?}, roots {roots:?}");
    let h = sc.age_grid().spacing();
    for (s, r) in switches.iter().zip(&roots) {
        assert!((s - r).abs() <= h, "switch at {s}, root at {r}");
    }
    // harvesting happens exactly where the oracle says c > lambda + eps
    for (a, v) in ages.iter().zip(u) {
        if roots.iter().all(|r| (a - r).abs() > h) {
            let inside = unit_value(*a) - costate_oracle(*a) > EPS;
            assert_eq!(*v == sc.bounds().u_max, inside, "age {a}");
        }
    }
}

#[test]
fn prescribed_multiplier_on_unharvested_stock_breaks_slackness() {
    let sc = Scenario::from_doc(presets::switching(ETA0).doc).unwrap();
    let rep = solve_rate_forward(&sc).unwrap();
    let eta = Field2D::from_profile(*sc.time_grid(), sc.multiplier());
    let slack = complementary_slackness_residual(&rep.state, &eta).unwrap();
    let expected = (0..rep.state.n_levels())
        .flat_map(|n| {
            let row = rep.state.row(n).to_vec();
            row.into_iter().zip(sc.multiplier().values().to_vec())
        })
        .map(|(x, e)| x * e)
        .fold(0.0, f64::max);
    assert!(slack.residual > 0.1);
    assert_eq!(slack.residual, expected);
    assert_eq!((slack.negative_multiplier, slack.negative_state), (0, 0));
}

fn fbs_doc(c: f64, k: f64, horizon: f64) -> ScenarioDoc {
    let mut doc = presets::fbs().doc;
    doc.economics.unit_value = AgeFunction::Constant { value: c };
    doc.economics.inflow_cost = TimeFunction::Constant { value: k };
    let steps = (horizon / 0.1).round() as usize;
    doc.time_grid = TimeGridSpec {
        horizon: steps as f64 * 0.1,
        n_steps: steps,
    };
    doc
}

#[test]
fn worthless_harvest_and_costly_inflow_shut_everything_down() {
    let sc = Scenario::from_doc(fbs_doc(0.0, 0.6, 10.0)).unwrap();
    let res = forward_backward_sweep(&sc, &FbsOptions::default()).unwrap();
    assert!(res.converged);
    assert!(res.iterations <= 2, "{} iterations", res.iterations);
    assert!(res.u.values().iter().all(|&v| v == 0.0));
    assert!(res.p.iter().all(|&v| v == 0.0));
}

#[test]
fn valuable_harvest_drives_removal_to_its_bound() {
    let sc = Scenario::from_doc(fbs_doc(10.0, 1e-3, 5.0)).unwrap();
    let res = forward_backward_sweep(&sc, &FbsOptions::default()).unwrap();
    assert!(res.converged, "{:?}", res.warning);
    let u_max = sc.bounds().u_max;
    for n in 0..res.u.n_levels() {
        for j in 0..res.u.n_ages() {
            if res.forward.state.get(n, j) > 0.0 {
                assert_eq!(res.u.get(n, j), u_max, "level {n}, node {j}");
            }
        }
    }
    for pair in res.history.windows(2).skip(1) {
        assert!(pair[1].value >= pair[0].value, "{} then {}", pair[0].value, pair[1].value);
    }
}

#[test]
fn exact_clamp_costate_option_runs_and_reports_its_outcome() {
    let sc = Scenario::from_doc(presets::fbs().doc).unwrap();
    let opts = FbsOptions {
        costate: FbsCostate::ClampExact,
        max_iter: 40,
        polish_iter: 10,
        ..FbsOptions::default()
    };
    let res = forward_backward_sweep(&sc, &opts).unwrap();
    assert!(res.history.iter().all(|o| o.value.is_finite()));
    assert_eq!(res.converged, res.warning.is_none());
    // the multiplier estimate sits on zeroed nodes only
    assert_eq!(res.slackness.residual, 0.0);
}
