//! Cross-module checks: dynamic solvers against stationary formulas and
//! against quadrature along characteristics.

use harvest_core::adjoint::{solve_effort_adjoint, solve_rate_adjoint};
use harvest_core::grid::Field2D;
use harvest_core::presets;
use harvest_core::scenario::*;
use harvest_core::stationary::{stationary_adjoint, stationary_effort_profile, FixedPointOptions};
use harvest_core::transport::{solve_effort_forward, solve_rate_forward};
use harvest_core::Scenario;

fn unit_cfl(doc: &mut ScenarioDoc, horizon: f64) {
    let h = doc.age_grid.max_age / (doc.age_grid.n_nodes - 1) as f64;
    let steps = (horizon / h).round() as usize;
    doc.time_grid = TimeGridSpec {
        horizon: steps as f64 * h,
        n_steps: steps,
    };
}

#[test]
fn effort_dynamics_settle_on_the_stationary_aggregate() {
    let mut doc = presets::profiles_effort().doc;
    // the upwind survival factor is first order; E(T) - E* is about 1.6e-3
    // at 501 nodes and halves with the spacing
    doc.age_grid.n_nodes = 1001;
    unit_cfl(&mut doc, 150.0);
    let sc = Scenario::from_doc(doc).unwrap();
    let rep = solve_effort_forward(&sc).unwrap();
    let w = sc.intensity_field().row_profile(0);
    let stat = stationary_effort_profile(sc.mortality(), &w, 1.0, sc.density_coefficient(), &FixedPointOptions::default())
        .unwrap();
    let e_t = *rep.aggregate.last().unwrap();
    assert!((e_t - stat.aggregate).abs() <= 1e-3, "E(T) = {e_t}, E* = {}", stat.aggregate);
}

#[test]
fn stationary_survival_is_preserved_to_first_order() {
    let drift = |n_nodes: usize| {
        let mut doc = presets::profiles_effort().doc;
        doc.age_grid.n_nodes = n_nodes;
        doc.mortality.density_coefficient = 0.0;
        doc.control.intensity = Intensity::Window {
            a_lo: 3.0,
            a_hi: 7.0,
            level: 0.0,
            ramp: None,
        };
        unit_cfl(&mut doc, 20.0);
        let sc = Scenario::from_doc(doc).unwrap();
        let rep = solve_effort_forward(&sc).unwrap();
        let x0 = sc.initial_profile().values().to_vec();
        (0..rep.state.n_levels())
            .flat_map(|n| rep.state.row(n).iter().zip(&x0).map(|(x, s)| (x - s).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (drift(101), drift(201));
    assert!(coarse < 5e-3, "drift {coarse}");
    assert!((1.7..2.3).contains(&(coarse / fine)), "ratio {}", coarse / fine);
}

#[test]
fn long_horizon_costate_matches_stationary_formula_off_the_multiplier() {
    let mut doc = presets::switching(1.0).doc;
    unit_cfl(&mut doc, 100.0);
    let sc = Scenario::from_doc(doc).unwrap();
    let eta = Field2D::from_profile(*sc.time_grid(), sc.multiplier());
    let rep = solve_rate_adjoint(&sc, &eta).unwrap();
    let stat = stationary_adjoint(sc.mortality(), sc.multiplier(), sc.discount_rate()).unwrap();
    let s = stat.values();
    // the transposed costate at node j lives at the centre of cell [a_j, a_j+1]
    let centred: Vec<f64> = s.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let ages = sc.age_grid().nodes();
    let free: Vec<usize> = (0..centred.len()).filter(|&j| sc.multiplier().values()[j + 1] == 0.0).collect();
    // characteristics from these levels leave the age range before the horizon
    let settled = sc.time_grid().horizon() - sc.age_grid().max_age() - sc.age_grid().spacing();
    let times = sc.time_grid().times();

    let mut worst = 0.0_f64;
    for n in (0..times.len()).filter(|&n| times[n] <= settled) {
        for &j in &free {
            worst = worst.max((rep.costate.get(n, j) - centred[j]).abs());
        }
    }
    assert!(worst <= 1e-4, "max deviation off the multiplier {worst}");

    // boundary value constant while the horizon is more than a lifetime away
    let boundary: Vec<f64> = (0..times.len()).filter(|&n| times[n] <= settled).map(|n| rep.costate.get(n, 0)).collect();
    let spread = boundary.iter().copied().fold(f64::MIN, f64::max) - boundary.iter().copied().fold(f64::MAX, f64::min);
    assert!(spread <= 1e-12, "lambda(t, 0) spread {spread}");

    // on the support the deviation is first order in the spacing
    let h = sc.age_grid().spacing();
    let on_support = (0..centred.len())
        .filter(|j| !free.contains(j))
        .map(|j| (rep.costate.get(0, j) - centred[j]).abs())
        .fold(0.0, f64::max);
    assert!(on_support <= h, "deviation {on_support} on the support at a > {}", ages[free.len()]);
}

/// `lambda(t, a) = int_0^L exp(-int_0^s k(a + v) dv) c w(a + s) ds` with
/// `k = r + mu + w` and `L = min(T - t, A - a)`, by composite Simpson on
/// pieces split at the window edges. Each tabulated node value acts on the
/// cell centred at that node, so the nodes in `[3, 7]` cover
/// `[3 - h/2, 7 + h/2)`.
fn characteristic_costate(t: f64, a: f64, horizon: f64, max_age: f64, h: f64) -> f64 {
    let (r, lo, hi, level) = (0.05, 3.0 - 0.5 * h, 7.0 + 0.5 * h, 0.08);
    let w = |x: f64| if (lo..hi).contains(&x) { level } else { 0.0 };
    let len = (horizon - t).min(max_age - a).max(0.0);
    // int_0^s (r + mu)(a + v) dv plus the window overlap times the level
    let hazard = |s: f64| {
        let b = a + s;
        let base = r * s + 0.01 * s + 0.0025 * (b * b - a * a);
        let overlap = (b.min(hi) - a.max(lo)).max(0.0);
        base + level * overlap
    };
    let mut cuts = vec![0.0];
    for edge in [lo - a, hi - a] {
        if edge > 0.0 && edge < len {
            cuts.push(edge);
        }
    }
    cuts.push(len);
    let mut total = 0.0;
    for piece in cuts.windows(2) {
        let (s0, s1) = (piece[0], piece[1]);
        if s1 <= s0 {
            continue;
        }
        let m = 200;
        let step = (s1 - s0) / m as f64;
        let mid = 0.5 * (s0 + s1);
        let wp = w(a + mid);
        let f = |s: f64| (-hazard(s)).exp() * wp;
        let mut sum = f(s0) + f(s1);
        for i in 1..m {
            sum += f(s0 + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += sum * step / 3.0;
    }
    total
}

#[test]
fn effort_costate_without_feedback_follows_characteristics() {
    let mut doc = presets::profiles_effort().doc;
    doc.mortality.density_coefficient = 0.0;
    doc.age_grid.n_nodes = 501;
    unit_cfl(&mut doc, 10.0);
    let sc = Scenario::from_doc(doc).unwrap();
    let fwd = solve_effort_forward(&sc).unwrap();
    let adj = solve_effort_adjoint(&sc, &fwd).unwrap();
    assert!(adj.nonlocal_series.iter().all(|&v| v == 0.0));
    let (horizon, max_age) = (sc.time_grid().horizon(), sc.age_grid().max_age());
    let times = sc.time_grid().times();
    let ages = sc.age_grid().nodes();
    let (dt, h) = (sc.time_grid().dt(), sc.age_grid().spacing());
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for n in 0..times.len() - 1 {
        for j in 0..ages.len() - 1 {
            // the transposed costate lives at the cell centre
            let exact = characteristic_costate(times[n] + 0.5 * dt, ages[j] + 0.5 * h, horizon, max_age, h);
            let e = (adj.costate.get(n, j) - exact).abs();
            worst = worst.max(e);
            scale = scale.max(exact.abs());
        }
    }
    assert!(worst / scale <= 1e-3, "relative error {}", worst / scale);
}

#[test]
fn zero_multiplier_gives_zero_costates() {
    let sc = Scenario::from_doc(presets::gradcheck(harvest_core::control::Channel::RateU).doc).unwrap();
    let rep = solve_rate_adjoint(&sc, &Field2D::zeros(*sc.time_grid(), *sc.age_grid())).unwrap();
    // the unit value still drives the costate of an unclamped solve only through u
    assert_eq!(rep.costate.max_abs(), 0.0);

    let mut doc = presets::dynamics_effort().doc;
    doc.mortality.density_coefficient = 0.0;
    doc.control.intensity = Intensity::Window {
        a_lo: 3.0,
        a_hi: 7.0,
        level: 0.0,
        ramp: None,
    };
    doc.time_grid.horizon = 10.0;
    doc.time_grid.n_steps = 199;
    let sc = Scenario::from_doc(doc).unwrap();
    let fwd = solve_rate_forward(&sc.with(|d| d.control.kind = ControlKind::Rate).unwrap()).unwrap();
    assert!(fwd.state.min() >= 0.0);
    let adj = solve_effort_adjoint(&sc, &solve_effort_forward(&sc).unwrap()).unwrap();
    assert_eq!(adj.costate.max_abs(), 0.0);
}
