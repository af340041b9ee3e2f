//! Named scenario documents for the standard experiments.
//!
//! The common parameter set is `A = 10`, `r = 0.05`, `mu(a) = 0.01 + 0.005 a`
//! on 500 age nodes. Anything not fixed by the experiment definitions is listed
//! in [`Preset::artifact_defaults`] so run manifests can show it.

use serde::Serialize;

use crate::control::Channel;
use crate::scenario::*;

pub const MAX_AGE: f64 = 10.0;
pub const DISCOUNT_RATE: f64 = 0.05;
pub const AGE_NODES: usize = 500;
pub const DENSITY_COEFFICIENT: f64 = 0.002;
/// Multiplier level on `[8.5, 10]` for the switching experiment.
pub const DEFAULT_ETA0: f64 = 1.0;
pub const SWEEP_POINTS: usize = 51;
pub const SWEEP_H_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub doc: ScenarioDoc,
    /// Values chosen here rather than taken from the experiment definitions.
    pub artifact_defaults: Vec<&'static str>,
}

pub const NAMES: [&str; 7] = [
    "profiles",
    "profiles-effort",
    "dynamics",
    "dynamics-effort",
    "switching",
    "comparison",
    "fbs",
];

fn base_doc(kind: ControlKind) -> ScenarioDoc {
    ScenarioDoc {
        schema: SCHEMA_VERSION,
        age_grid: AgeGridSpec {
            max_age: MAX_AGE,
            n_nodes: AGE_NODES,
        },
        // unit Courant number over one maximal lifetime
        time_grid: TimeGridSpec {
            horizon: MAX_AGE,
            n_steps: AGE_NODES - 1,
        },
        mortality: MortalitySpec {
            baseline: AgeFunction::Linear { m0: 0.01, m1: 0.005 },
            density_coefficient: 0.0,
        },
        economics: EconomicSpec {
            discount_rate: DISCOUNT_RATE,
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
                level: 0.08,
                ramp: None,
            },
        },
        inflow: TimeFunction::Constant { value: 1.0 },
        initial_profile: None,
        multiplier: None,
    }
}

/// `c(a) = 1 + 0.5 sin(pi (a - 2) / 6)` on `[2, 8]`, `0.2` elsewhere.
pub fn sinusoidal_unit_value() -> AgeFunction {
    AgeFunction::WindowedSinusoid {
        base: 0.2,
        amp: 0.5,
        offset: 1.0,
        a_lo: 2.0,
        a_hi: 8.0,
        width: 6.0,
    }
}

const ECONOMIC_DEFAULTS: [&str; 3] = ["c = 1 (unit value)", "w_max = 1", "p_max = 2"];

/// Stationary profiles, rate control: `p = 1`, `h = 0.08` on `[3, 7]`,
/// `alpha = 0.002` (used by the stationary solves only).
pub fn profiles() -> Preset {
    let mut doc = base_doc(ControlKind::Rate);
    doc.mortality.density_coefficient = DENSITY_COEFFICIENT;
    Preset {
        name: "profiles",
        description: "stationary profiles, rate control, h = 0.08 on [3, 7], p = 1, alpha = 0.002",
        doc,
        artifact_defaults: [&ECONOMIC_DEFAULTS[..], &["time grid: horizon 10, 499 steps (unused by stationary solves)"]]
            .concat(),
    }
}

/// Stationary profiles, effort control with density feedback `alpha = 0.002`.
pub fn profiles_effort() -> Preset {
    let mut doc = base_doc(ControlKind::Effort);
    doc.mortality.density_coefficient = DENSITY_COEFFICIENT;
    Preset {
        name: "profiles-effort",
        description: "stationary profiles, effort control, h = 0.08 on [3, 7], p = 1, alpha = 0.002",
        doc,
        artifact_defaults: [&ECONOMIC_DEFAULTS[..], &["time grid: horizon 10, 499 steps (unused by stationary solves)"]]
            .concat(),
    }
}

fn dynamics_doc(kind: ControlKind) -> ScenarioDoc {
    let mut doc = base_doc(kind);
    doc.age_grid.n_nodes = 200;
    doc.time_grid = TimeGridSpec {
        horizon: 20.0,
        n_steps: 400,
    };
    doc.control.intensity = Intensity::Window {
        a_lo: 3.0,
        a_hi: 7.0,
        level: 0.06,
        ramp: Some(5.0),
    };
    doc.inflow = TimeFunction::Sinusoid {
        p0: 0.5,
        p1: 0.3,
        period: 8.0,
    };
    doc
}

/// Time-dependent rate dynamics: 200 age nodes, 400 steps on `[0, 20]`,
/// seasonal inflow, harvesting ramped to `0.06` on `[3, 7]` over `[0, 5]`.
pub fn dynamics() -> Preset {
    Preset {
        name: "dynamics",
        description: "rate dynamics, 200 x 400 grid, p(t) = 0.5 + 0.3 sin(2 pi t / 8), u ramped to 0.06 on [3, 7]",
        doc: dynamics_doc(ControlKind::Rate),
        artifact_defaults: [
            &ECONOMIC_DEFAULTS[..],
            &["u_max = 0.15", "x0 = p(0) exp(-int mu) (unharvested survival)"],
        ]
        .concat(),
    }
}

/// Effort variant of [`dynamics`] with `alpha = 0.002`.
pub fn dynamics_effort() -> Preset {
    let mut doc = dynamics_doc(ControlKind::Effort);
    doc.mortality.density_coefficient = DENSITY_COEFFICIENT;
    Preset {
        name: "dynamics-effort",
        description: "effort dynamics, same grid and inflow, w ramped to 0.06 on [3, 7], alpha = 0.002",
        doc,
        artifact_defaults: [
            &ECONOMIC_DEFAULTS[..],
            &["x0 = p(0) exp(-int mu) (unharvested survival)", "effort level 0.06 mirrors the rate level"],
        ]
        .concat(),
    }
}

/// Stationary adjoint and switching structure: windowed sinusoidal `c`,
/// `k = 0.6`, `u_max = 0.15`, multiplier `eta0` on `[8.5, 10]`.
pub fn switching(eta0: f64) -> Preset {
    let mut doc = base_doc(ControlKind::Rate);
    doc.economics.unit_value = sinusoidal_unit_value();
    doc.control.intensity = Intensity::Window {
        a_lo: 3.0,
        a_hi: 7.0,
        level: 0.0,
        ramp: None,
    };
    doc.multiplier = Some(AgeFunction::Window {
        a_lo: 8.5,
        a_hi: MAX_AGE,
        level: eta0,
    });
    Preset {
        name: "switching",
        description: "stationary adjoint, eta on [8.5, 10], c windowed sinusoid, k = 0.6, u_max = 0.15",
        doc,
        artifact_defaults: vec![
            "eta0 = 1 (multiplier level on [8.5, 10])",
            "p_max = 2",
            "w_max = 1",
            "harvest in the state solve: none",
        ],
    }
}

/// Yield comparison: common intensity on `[2, 8]`, `alpha = 0.002`, `p = 1`.
pub fn comparison() -> Preset {
    let mut doc = base_doc(ControlKind::Effort);
    doc.mortality.density_coefficient = DENSITY_COEFFICIENT;
    doc.control.intensity = Intensity::Window {
        a_lo: 2.0,
        a_hi: 8.0,
        level: 0.0,
        ramp: None,
    };
    Preset {
        name: "comparison",
        description: "stationary yield and depletion sweep, h in [0, 0.5] on [2, 8], alpha = 0.002, p = 1",
        doc,
        artifact_defaults: vec![
            "51 sweep points",
            "rate model uses the same density feedback mu(a) + alpha E as the effort model",
            "rate profile truncated at the first zero of the affine formula (linear interpolation inside the cell)",
        ],
    }
}

/// Forward-backward sweep on a unit-Courant grid with the switching
/// experiment's economics.
pub fn fbs() -> Preset {
    let mut doc = base_doc(ControlKind::Rate);
    doc.age_grid.n_nodes = 101;
    doc.time_grid = TimeGridSpec {
        horizon: 20.0,
        n_steps: 200,
    };
    doc.economics.unit_value = sinusoidal_unit_value();
    doc.control.intensity = Intensity::Window {
        a_lo: 3.0,
        a_hi: 7.0,
        level: 0.0,
        ramp: None,
    };
    Preset {
        name: "fbs",
        description: "forward-backward sweep, c windowed sinusoid, k = 0.6, u_max = 0.15, horizon 20",
        doc,
        artifact_defaults: vec![
            "grid: 101 age nodes, 200 steps, horizon 20",
            "p_max = 2",
            "relaxation 0.5, dead zone 0",
        ],
    }
}

/// Coarse unit-Courant scenario for a gradient check: 101 age nodes,
/// horizon 40, 400 steps.
pub fn gradcheck(channel: Channel) -> Preset {
    let mut doc = base_doc(channel.kind());
    doc.age_grid.n_nodes = 101;
    doc.time_grid = TimeGridSpec {
        horizon: 40.0,
        n_steps: 400,
    };
    match channel {
        Channel::RateU | Channel::RateP => {
            doc.control.intensity = Intensity::Window {
                a_lo: 2.0,
                a_hi: 8.0,
                level: 0.02,
                ramp: None,
            };
            doc.multiplier = Some(AgeFunction::Window {
                a_lo: 6.0,
                a_hi: MAX_AGE,
                level: 0.5,
            });
        }
        Channel::EffortW => {
            doc.mortality.density_coefficient = DENSITY_COEFFICIENT;
        }
    }
    Preset {
        name: "gradcheck",
        description: "coarse unit-Courant grid for adjoint gradient checks",
        doc,
        artifact_defaults: vec![
            "grid: 101 age nodes, 400 steps, horizon 40 (dt = spacing)",
            "rate channels: u = 0.02 on [2, 8], multiplier 0.5 on [6, 10] so the costate is nontrivial",
            "effort channel: w = 0.08 on [3, 7], alpha = 0.002",
        ],
    }
}

/// Probe used for each channel's check.
pub fn gradcheck_probe(channel: Channel) -> crate::control::Probe {
    use crate::control::Probe;
    match channel {
        Channel::RateU => Probe {
            t_lo: 4.0,
            t_hi: 5.0,
            a_lo: 2.0,
            a_hi: 6.0,
            step: 1e-3,
        },
        Channel::RateP => Probe {
            t_lo: 1.0,
            t_hi: 2.0,
            a_lo: 0.0,
            a_hi: MAX_AGE,
            step: 1e-3,
        },
        Channel::EffortW => Probe {
            t_lo: 4.0,
            t_hi: 5.0,
            a_lo: 4.0,
            a_hi: 6.0,
            step: 1e-4,
        },
    }
}

/// Looks up a preset by name. `switching` uses [`DEFAULT_ETA0`].
pub fn by_name(name: &str) -> Option<Preset> {
    Some(match name {
        "profiles" => profiles(),
        "profiles-effort" => profiles_effort(),
        "dynamics" => dynamics(),
        "dynamics-effort" => dynamics_effort(),
        "switching" => switching(DEFAULT_ETA0),
        "comparison" => comparison(),
        "fbs" => fbs(),
        _ => return None,
    })
}
