use harvest_core::control::{objective_effort, objective_rate};
use harvest_core::presets;
use harvest_core::scenario::*;
use harvest_core::stationary::{stationary_effort_profile, FixedPointOptions};
use harvest_core::transport::{solve_effort_forward, solve_forward, solve_rate_forward};
use harvest_core::Scenario;

/// Rate scenario on a 101-node unit-Courant grid over `horizon`.
fn rate_doc(horizon: f64, level: f64, p: f64, k: f64) -> ScenarioDoc {
    let mut doc = presets::profiles().doc;
    doc.control.kind = ControlKind::Rate;
    doc.age_grid.n_nodes = 101;
    let steps = (horizon / 0.1).round() as usize;
    doc.time_grid = TimeGridSpec {
        horizon: steps as f64 * 0.1,
        n_steps: steps,
    };
    doc.economics.unit_value = AgeFunction::Constant { value: 1.0 };
    doc.economics.inflow_cost = TimeFunction::Constant { value: k };
    doc.inflow = TimeFunction::Constant { value: p };
    doc.initial_profile = None;
    doc.control.intensity = Intensity::Window {
        a_lo: 0.0,
        a_hi: 10.0,
        level,
        ramp: None,
    };
    doc
}

#[test]
fn constant_removal_everywhere_is_a_discounted_annuity() {
    // p = 1 keeps stock at every age so the removal is never truncated;
    // k = 0 removes the inflow term, which is what p = 0 does to J
    let sc = Scenario::from_doc(rate_doc(300.0, 0.05, 1.0, 0.0)).unwrap();
    let rep = solve_rate_forward(&sc).unwrap();
    assert_eq!(rep.active_count(), 0);
    assert!(rep.applied_extraction.values().iter().all(|&u| u == 0.05));
    let j = objective_rate(&sc, &rep);
    assert!(j.tail_bound < 1e-4, "tail {}", j.tail_bound);
    assert!((j.value - 10.0).abs() <= j.tail_bound + 1e-3, "J = {}", j.value);
}

#[test]
fn nothing_in_nothing_out() {
    let sc = Scenario::from_doc(rate_doc(50.0, 0.0, 0.0, 0.6)).unwrap();
    let rep = solve_rate_forward(&sc).unwrap();
    assert_eq!(objective_rate(&sc, &rep).value, 0.0);
}

#[test]
fn pure_inflow_cost_discounts_to_k_over_r() {
    let sc = Scenario::from_doc(rate_doc(300.0, 0.0, 1.0, 0.6)).unwrap();
    let rep = solve_rate_forward(&sc).unwrap();
    let j = objective_rate(&sc, &rep);
    assert!((j.value + 12.0).abs() <= j.tail_bound + 1e-3, "J = {}", j.value);
}

#[test]
fn stationary_effort_objective_matches_discounted_yield() {
    let base = Scenario::from_doc(presets::profiles_effort().doc).unwrap();
    let w = base.intensity_field().row_profile(0);
    let alpha = base.density_coefficient();
    let stat = stationary_effort_profile(base.mortality(), &w, 1.0, alpha, &FixedPointOptions::default()).unwrap();
    let sc = base
        .with(|d| {
            d.initial_profile = Some(AgeFunction::Tabulated {
                values: stat.profile.values().to_vec(),
            });
            d.inflow = TimeFunction::Constant { value: 1.0 };
            d.economics.inflow_cost = TimeFunction::Constant { value: 0.6 };
            let h = d.age_grid.max_age / (d.age_grid.n_nodes - 1) as f64;
            d.time_grid.n_steps = (300.0 / h).round() as usize;
            d.time_grid.horizon = d.time_grid.n_steps as f64 * h;
        })
        .unwrap();
    let rep = solve_effort_forward(&sc).unwrap();
    let j = objective_effort(&sc, &rep);

    let c = sc.unit_value().values();
    let h = sc.age_grid().spacing();
    let payoff: Vec<f64> = (0..c.len()).map(|i| c[i] * w.values()[i] * stat.profile.values()[i]).collect();
    let closed = (harvest_core::grid::trapezoid_slice(&payoff, h) - 0.6) / sc.discount_rate();
    assert!(
        (j.value - closed).abs() <= 1e-3 * closed.abs() + j.tail_bound,
        "J_E = {}, closed form {closed}",
        j.value
    );
}

/// Re-poses the second part of a run as its own problem starting at level
/// `split`, with the state, inflow and intensity carried over.
fn restarted(sc: &Scenario, state_row: &[f64], split: usize) -> Scenario {
    let field = sc.intensity_field();
    let rows: Vec<Vec<f64>> = (split..field.n_levels()).map(|n| field.row(n).to_vec()).collect();
    let inflow = sc.inflow_series()[split..].to_vec();
    let dt = sc.time_grid().dt();
    sc.with(|d| {
        d.initial_profile = Some(AgeFunction::Tabulated {
            values: state_row.to_vec(),
        });
        d.inflow = TimeFunction::Tabulated { values: inflow };
        d.control.intensity = Intensity::Tabulated { values: rows };
        d.time_grid.n_steps -= split;
        d.time_grid.horizon = d.time_grid.n_steps as f64 * dt;
    })
    .unwrap()
}

fn truncated(sc: &Scenario, split: usize) -> Scenario {
    let dt = sc.time_grid().dt();
    sc.with(|d| {
        d.time_grid.n_steps = split;
        d.time_grid.horizon = split as f64 * dt;
    })
    .unwrap()
}

fn check_additivity(sc: &Scenario, split: usize) {
    let value = |s: &Scenario| {
        let rep = solve_forward(s).unwrap();
        (harvest_core::control::lagrangian(s, &rep, None), rep)
    };
    let (whole, rep) = value(sc);
    let (head, _) = value(&truncated(sc, split));
    let (tail, _) = value(&restarted(sc, rep.state.row(split), split));
    let t1 = sc.time_grid().time(split);
    let glued = head + (-sc.discount_rate() * t1).exp() * tail;
    assert!((whole - glued).abs() <= 1e-10 * whole.abs().max(1.0), "{whole} vs {glued}");
}

#[test]
fn discounted_objective_is_additive_over_a_restart() {
    for preset in [presets::dynamics(), presets::dynamics_effort()] {
        let sc = Scenario::from_doc(preset.doc).unwrap();
        check_additivity(&sc, 160);
    }
}
