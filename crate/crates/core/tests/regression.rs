//! Values pinned from the first validated run. A change here means the
//! numerics changed; update the pins only after re-running the acceptance
//! suite.

use harvest_core::control::*;
use harvest_core::presets;
use harvest_core::scenario::*;
use harvest_core::stationary::FixedPointOptions;
use harvest_core::transport::{solve_effort_forward, solve_rate_forward};
use harvest_core::Scenario;

const REL: f64 = 1e-9;

fn close(got: f64, pinned: f64, what: &str) {
    assert!(
        (got - pinned).abs() <= REL * pinned.abs().max(1.0),
        "{what}: got {got:.16e}, pinned {pinned:.16e}"
    );
}

const LEVELS: [usize; 6] = [0, 40, 100, 200, 300, 400];

#[test]
fn dynamics_aggregate_series() {
    let pinned = [
        4.398622285472791,
        4.6860183143454215,
        4.466999174521313,
        3.608642386925677,
        2.9325069654329243,
        3.6896000009365117,
    ];
    let sc = Scenario::from_doc(presets::dynamics().doc).unwrap();
    let rep = solve_rate_forward(&sc).unwrap();
    for (n, p) in LEVELS.iter().zip(pinned) {
        close(rep.aggregate[*n], p, &format!("E at level {n}"));
    }
}

#[test]
fn effort_dynamics_aggregate_series() {
    let pinned = [
        4.398622285472791,
        4.665931361799483,
        4.61155394267194,
        4.001592717807528,
        3.414512709507838,
        4.230665055034821,
    ];
    let sc = Scenario::from_doc(presets::dynamics_effort().doc).unwrap();
    let rep = solve_effort_forward(&sc).unwrap();
    for (n, p) in LEVELS.iter().zip(pinned) {
        close(rep.aggregate[*n], p, &format!("E at level {n}"));
    }
}

fn comparison_at(h: f64) -> Scenario {
    Scenario::from_doc(presets::comparison().doc)
        .unwrap()
        .with(|d| {
            if let Intensity::Window { level, .. } = &mut d.control.intensity {
                *level = h;
            }
        })
        .unwrap()
}

#[test]
fn comparison_effort_objective() {
    let sc = comparison_at(0.1);
    let rep = solve_effort_forward(&sc).unwrap();
    close(objective_effort(&sc, &rep).value, -1.4641316712485761, "J_E at h = 0.1");
}

#[test]
fn comparison_sweep_rows() {
    let sc = comparison_at(0.0);
    let template = SweepTemplate {
        mortality: sc.mortality().clone(),
        alpha: sc.density_coefficient(),
        a_lo: 2.0,
        a_hi: 8.0,
        inflow: 1.0,
        fixed_point: FixedPointOptions::default(),
    };
    let rows = yield_sweep(&template, &[0.0, 0.1, 0.25, 0.5], Mechanism::Both).unwrap();
    // h, Y_R, Y_E, E_R, E_E, crossing
    let pinned = [
        (0.0, 0.0, 0.0, 8.155063989495249, 8.155063989557846, None),
        (0.1, 0.6012024048096224, 0.38221680051871, 5.722821599662791, 6.4904641857637095, None),
        (0.25, 0.9002875356859341, 0.6792771096925042, 3.64754875829982, 4.968256319818101, Some(5.59513811869564)),
        (0.5, 0.9340364339261846, 0.8585797293552079, 2.8457940237856065, 3.7392186321404126, Some(3.862060843804273)),
    ];
    for (row, (h, yr, ye, er, ee, crossing)) in rows.iter().zip(pinned) {
        assert_eq!(row.h, h);
        close(row.y_rate.unwrap(), yr, &format!("Y_R at {h}"));
        close(row.y_effort.unwrap(), ye, &format!("Y_E at {h}"));
        close(row.e_rate.unwrap(), er, &format!("E_R at {h}"));
        close(row.e_effort.unwrap(), ee, &format!("E_E at {h}"));
        match (row.rate_crossing, crossing) {
            (Some(a), Some(b)) => close(a, b, &format!("crossing at {h}")),
            (None, None) => {}
            other => panic!("crossing at {h}: {other:?}"),
        }
    }
}
