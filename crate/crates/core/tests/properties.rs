use harvest_core::adjoint::solve_rate_adjoint_with;
use harvest_core::control::{stationary_switching, switching_functions};
use harvest_core::grid::{trapezoid_slice, Field2D, Profile};
use harvest_core::presets;
use harvest_core::scenario::*;
use harvest_core::stationary::stationary_adjoint;
use harvest_core::transport::{solve_effort_with, solve_rate_with};
use harvest_core::{parse_scenario, Scenario};
use proptest::prelude::*;

fn small_doc(kind: ControlKind, n_nodes: usize, n_steps: usize, level: f64, lo: f64, width: f64) -> ScenarioDoc {
    let mut doc = presets::profiles().doc;
    doc.control.kind = kind;
    doc.age_grid.n_nodes = n_nodes;
    let h = 10.0 / (n_nodes - 1) as f64;
    doc.time_grid = TimeGridSpec {
        horizon: n_steps as f64 * h,
        n_steps,
    };
    doc.control.intensity = Intensity::Window {
        a_lo: lo,
        a_hi: (lo + width).min(10.0),
        level,
        ramp: None,
    };
    doc
}

fn doc_strategy() -> impl Strategy<Value = ScenarioDoc> {
    (
        prop_oneof![Just(ControlKind::Rate), Just(ControlKind::Effort)],
        11usize..60,
        1usize..40,
        0.0..0.15f64,
        0.0..8.0f64,
        0.5..2.0f64,
        0.0..0.01f64,
        0.0..1.3f64,
        proptest::option::of(0.1..5.0f64),
    )
        .prop_map(|(kind, n, m, level, lo, width, alpha, p, ramp)| {
            let mut doc = small_doc(kind, n, m, level, lo, width);
            doc.mortality.density_coefficient = alpha;
            doc.inflow = TimeFunction::Sinusoid {
                p0: p,
                p1: 0.5 * p,
                period: 3.0,
            };
            if let Intensity::Window { ramp: r, .. } = &mut doc.control.intensity {
                *r = ramp;
            }
            doc
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_json_round_trips(doc in doc_strategy()) {
        let sc = Scenario::from_doc(doc.clone()).unwrap();
        let back = parse_scenario(&sc.to_json()).unwrap();
        prop_assert_eq!(back.doc(), &doc);
        prop_assert_eq!(back.intensity_field(), sc.intensity_field());
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = parse_scenario(&text);
    }

    #[test]
    fn mutated_documents_fail_cleanly(doc in doc_strategy(), cut in 0usize..2000, byte in any::<u8>()) {
        let mut text = Scenario::from_doc(doc).unwrap().to_json().into_bytes();
        let i = cut % text.len();
        text[i] = byte;
        if let Ok(s) = String::from_utf8(text) {
            let _ = parse_scenario(&s);
        }
    }

    #[test]
    fn rate_state_stays_nonnegative(n in 11usize..40, level in 0.0..3.0f64, lo in 0.0..8.0f64) {
        let mut doc = small_doc(ControlKind::Rate, n, 2 * n, 0.0, lo, 2.0);
        doc.economics.bounds.u_max = 3.0;
        doc.control.intensity = Intensity::Window { a_lo: lo, a_hi: lo + 2.0, level, ramp: None };
        let sc = Scenario::from_doc(doc).unwrap();
        let rep = solve_rate_with(&sc, &sc.intensity_field(), &sc.inflow_series()).unwrap();
        prop_assert!(rep.state.min() >= 0.0);
        prop_assert!(rep.applied_extraction.min() >= 0.0);
        for (a, u) in rep.applied_extraction.values().iter().zip(rep.control.values()) {
            prop_assert!(*a <= *u * (1.0 + 1e-12));
        }
    }

    #[test]
    fn more_harvest_never_adds_stock(n in 11usize..40, low in 0.0..0.1f64, extra in 0.0..0.05f64, effort in any::<bool>()) {
        let kind = if effort { ControlKind::Effort } else { ControlKind::Rate };
        let mut doc = small_doc(kind, n, 2 * n, 0.0, 2.0, 6.0);
        // with density feedback, thinning the stock lowers everyone's
        // mortality, so pointwise ordering only holds without it
        doc.mortality.density_coefficient = 0.0;
        let sc = Scenario::from_doc(doc).unwrap();
        let field = |level: f64| Field2D::from_fn(*sc.time_grid(), *sc.age_grid(), |_, a| {
            if (2.0..=8.0).contains(&a) { level } else { 0.0 }
        }).unwrap();
        let p = sc.inflow_series();
        let (lo, hi) = if effort {
            (solve_effort_with(&sc, &field(low), &p).unwrap(), solve_effort_with(&sc, &field(low + extra), &p).unwrap())
        } else {
            (solve_rate_with(&sc, &field(low), &p).unwrap(), solve_rate_with(&sc, &field(low + extra), &p).unwrap())
        };
        for (a, b) in lo.state.values().iter().zip(hi.state.values()) {
            prop_assert!(b <= &(a + 1e-14));
        }
    }

    #[test]
    fn aggregate_is_the_trapezoid_of_the_state(doc in doc_strategy()) {
        let sc = Scenario::from_doc(doc).unwrap();
        let rep = harvest_core::transport::solve_forward(&sc).unwrap();
        let h = sc.age_grid().spacing();
        for n in 0..rep.state.n_levels() {
            let e = trapezoid_slice(rep.state.row(n), h);
            prop_assert!((rep.aggregate[n] - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn positive_rescaling_keeps_bang_bang_sets(scale in 0.01..100.0f64, eta0 in 0.0..3.0f64) {
        let sc = Scenario::from_doc(presets::switching(eta0).doc).unwrap();
        let lam = stationary_adjoint(sc.mortality(), sc.multiplier(), sc.discount_rate()).unwrap();
        let base = stationary_switching(sc.unit_value(), &lam, 0.15, 0.0).unwrap();
        // scaling c and k scales the multiplier-free part of the costate too
        let scaled_c = Profile::new(*sc.age_grid(), sc.unit_value().values().iter().map(|c| c * scale).collect()).unwrap();
        let scaled_eta = Profile::new(*sc.age_grid(), sc.multiplier().values().iter().map(|e| e * scale).collect()).unwrap();
        let scaled_lam = stationary_adjoint(sc.mortality(), &scaled_eta, sc.discount_rate()).unwrap();
        let scaled = stationary_switching(&scaled_c, &scaled_lam, 0.15, 0.0).unwrap();
        prop_assert_eq!(base.u_star.values(), scaled.u_star.values());
    }
}

#[test]
fn rescaled_economics_keep_time_dependent_switching() {
    let sc = Scenario::from_doc(presets::gradcheck(harvest_core::control::Channel::RateU).doc).unwrap();
    let synth = |factor: f64| {
        let s = sc
            .with(|d| {
                d.economics.unit_value = AgeFunction::Constant { value: factor };
                d.economics.inflow_cost = TimeFunction::Constant { value: 0.6 * factor };
                d.multiplier = Some(AgeFunction::Window {
                    a_lo: 6.0,
                    a_hi: 10.0,
                    level: 0.5 * factor,
                });
            })
            .unwrap();
        let eta = Field2D::from_profile(*s.time_grid(), s.multiplier());
        let fwd = solve_rate_with(&s, &s.intensity_field(), &s.inflow_series()).unwrap();
        let adj = solve_rate_adjoint_with(&s, Some(&fwd), &eta).unwrap();
        switching_functions(&s, &adj, 0.0).unwrap()
    };
    let base = synth(1.0);
    for factor in [0.3, 7.0] {
        let other = synth(factor);
        assert_eq!(base.synthesized_u, other.synthesized_u);
        assert_eq!(base.synthesized_p, other.synthesized_p);
        for (a, b) in base.sigma_u.values().iter().zip(other.sigma_u.values()) {
            assert!((a * factor - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
