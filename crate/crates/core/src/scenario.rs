//! Declarative problem descriptions and the versioned JSON scenario format.
//!
//! A [`ScenarioDoc`] is the serde image of the file; [`Scenario`] is the
//! validated value every solver consumes. Validation evaluates each parametric
//! function on the solver grid and checks signs and bounds there, so a
//! scenario that parses is safe to hand to any solver of the matching kind.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{cumulative_slice, AgeGrid, Field2D, GridError, Profile, TimeGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid `{field}`: {reason}")]
    Domain { field: String, reason: String },
}

impl ScenarioError {
    fn domain(field: &str, reason: impl Into<String>) -> Self {
        ScenarioError::Domain {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Field path for domain errors, `None` for schema errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Domain { field, .. } => Some(field),
            ScenarioError::Schema(_) => None,
        }
    }
}

/// Parametric or tabulated function of age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeFunction {
    Constant {
        value: f64,
    },
    /// `m0 + m1 * a`
    Linear {
        m0: f64,
        m1: f64,
    },
    /// `level` on the closed interval `[a_lo, a_hi]`, zero elsewhere.
    Window {
        a_lo: f64,
        a_hi: f64,
        level: f64,
    },
    /// `offset + amp * sin(pi (a - a_lo) / width)` on `[a_lo, a_hi]`,
    /// `base` elsewhere.
    WindowedSinusoid {
        base: f64,
        amp: f64,
        offset: f64,
        a_lo: f64,
        a_hi: f64,
        width: f64,
    },
    Tabulated {
        values: Vec<f64>,
    },
}

fn in_window(a: f64, lo: f64, hi: f64) -> bool {
    a >= lo && a <= hi
}

impl AgeFunction {
    pub fn at(&self, a: f64) -> Option<f64> {
        match *self {
            AgeFunction::Constant { value } => Some(value),
            AgeFunction::Linear { m0, m1 } => Some(m0 + m1 * a),
            AgeFunction::Window { a_lo, a_hi, level } => Some(if in_window(a, a_lo, a_hi) { level } else { 0.0 }),
            AgeFunction::WindowedSinusoid {
                base,
                amp,
                offset,
                a_lo,
                a_hi,
                width,
            } => Some(if in_window(a, a_lo, a_hi) {
                offset + amp * (PI * (a - a_lo) / width).sin()
            } else {
                base
            }),
            AgeFunction::Tabulated { .. } => None,
        }
    }

    fn check_window(&self, field: &str, max_age: f64) -> Result<(), ScenarioError> {
        let (lo, hi) = match *self {
            AgeFunction::Window { a_lo, a_hi, .. } => (a_lo, a_hi),
            AgeFunction::WindowedSinusoid { a_lo, a_hi, width, .. } => {
                if !(width > 0.0) {
                    return Err(ScenarioError::domain(field, "width must be positive"));
                }
                (a_lo, a_hi)
            }
            _ => return Ok(()),
        };
        if !(lo < hi) || lo < 0.0 || hi > max_age {
            return Err(ScenarioError::domain(
                field,
                format!("window [{lo}, {hi}] must satisfy 0 <= a_lo < a_hi <= {max_age}"),
            ));
        }
        Ok(())
    }

    /// Node values on `grid`, checked finite and (when `nonneg`) >= 0.
    pub fn evaluate(&self, grid: &AgeGrid, field: &str, nonneg: bool) -> Result<Profile, ScenarioError> {
        self.check_window(field, grid.max_age())?;
        let values = match self {
            AgeFunction::Tabulated { values } => {
                if values.len() != grid.len() {
                    return Err(ScenarioError::domain(
                        field,
                        format!("expected {} tabulated values, got {}", grid.len(), values.len()),
                    ));
                }
                values.clone()
            }
            f => grid.nodes().into_iter().map(|a| f.at(a).unwrap_or(0.0)).collect(),
        };
        check_values(&values, field, nonneg)?;
        Profile::new(*grid, values).map_err(|e| ScenarioError::domain(field, e.to_string()))
    }
}

/// Parametric or tabulated function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFunction {
    Constant {
        value: f64,
    },
    /// `p0 + p1 * sin(2 pi t / period)`
    Sinusoid {
        p0: f64,
        p1: f64,
        period: f64,
    },
    /// One value per time level (`n_steps + 1` entries).
    Tabulated {
        values: Vec<f64>,
    },
}

impl TimeFunction {
    pub fn evaluate(&self, grid: &TimeGrid, field: &str) -> Result<Vec<f64>, ScenarioError> {
        let values: Vec<f64> = match self {
            TimeFunction::Constant { value } => vec![*value; grid.n_levels()],
            TimeFunction::Sinusoid { p0, p1, period } => {
                if !(*period > 0.0) {
                    return Err(ScenarioError::domain(field, "period must be positive"));
                }
                grid.times().into_iter().map(|t| p0 + p1 * (2.0 * PI * t / period).sin()).collect()
            }
            TimeFunction::Tabulated { values } => {
                if values.len() != grid.n_levels() {
                    return Err(ScenarioError::domain(
                        field,
                        format!("expected {} tabulated values, got {}", grid.n_levels(), values.len()),
                    ));
                }
                values.clone()
            }
        };
        check_values(&values, field, true)?;
        Ok(values)
    }

    /// Value at `t = 0` for parametric forms, first entry for tables.
    pub fn initial_value(&self) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Sinusoid { p0, .. } => *p0,
            TimeFunction::Tabulated { values } => values.first().copied().unwrap_or(0.0),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Sinusoid { p0, p1, .. } => p0 + p1.abs(),
            TimeFunction::Tabulated { values } => values.iter().copied().fold(0.0, f64::max),
        }
    }
}

fn check_values(values: &[f64], field: &str, nonneg: bool) -> Result<(), ScenarioError> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(ScenarioError::domain(field, format!("non-finite value at node {i}")));
        }
        if nonneg && v < 0.0 {
            return Err(ScenarioError::domain(field, format!("negative value {v} at node {i}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeGridSpec {
    pub max_age: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSpec {
    pub horizon: f64,
    pub n_steps: usize,
}

/// Baseline mortality plus the additive density law
/// `mu(E, a) = baseline(a) + density_coefficient * E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MortalitySpec {
    pub baseline: AgeFunction,
    #[serde(default)]
    pub density_coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub u_max: f64,
    pub w_max: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicSpec {
    pub discount_rate: f64,
    pub unit_value: AgeFunction,
    pub inflow_cost: TimeFunction,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Additive removal `u(t, a)`.
    Rate,
    /// Extra mortality intensity `w(t, a)`.
    Effort,
}

impl std::fmt::Display for ControlKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlKind::Rate => write!(f, "rate"),
            ControlKind::Effort => write!(f, "effort"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Intensity {
    /// `level * 1_[a_lo, a_hi](a)`, multiplied by `min(t / ramp, 1)` when a
    /// ramp time is given.
    Window {
        a_lo: f64,
        a_hi: f64,
        level: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ramp: Option<f64>,
    },
    /// Either a single age row (time-constant) or one row per time level.
    Tabulated { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub kind: ControlKind,
    pub intensity: Intensity,
}

/// Serde image of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema: u32,
    pub age_grid: AgeGridSpec,
    pub time_grid: TimeGridSpec,
    pub mortality: MortalitySpec,
    pub economics: EconomicSpec,
    pub control: ControlSpec,
    pub inflow: TimeFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_profile: Option<AgeFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<AgeFunction>,
}

/// Validated, immutable problem description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    doc: ScenarioDoc,
    age_grid: AgeGrid,
    time_grid: TimeGrid,
    baseline_mortality: Profile,
    unit_value: Profile,
    initial_profile: Profile,
    multiplier: Profile,
}

/// Parses and validates a JSON scenario document.
pub fn parse_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc = serde_json::from_str(document).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    Scenario::from_doc(doc)
}

fn grid_err(field: &str, e: GridError) -> ScenarioError {
    ScenarioError::domain(field, e.to_string())
}

fn require(cond: bool, field: &str, reason: &str) -> Result<(), ScenarioError> {
    if cond {
        Ok(())
    } else {
        Err(ScenarioError::domain(field, reason))
    }
}

impl Scenario {
    pub fn from_doc(doc: ScenarioDoc) -> Result<Self, ScenarioError> {
        if doc.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                doc.schema
            )));
        }
        let age_grid = AgeGrid::new(doc.age_grid.max_age, doc.age_grid.n_nodes).map_err(|e| grid_err("age_grid", e))?;
        let time_grid =
            TimeGrid::new(doc.time_grid.horizon, doc.time_grid.n_steps, &age_grid).map_err(|e| grid_err("time_grid", e))?;

        let baseline_mortality = doc.mortality.baseline.evaluate(&age_grid, "mortality.baseline", true)?;
        let alpha = doc.mortality.density_coefficient;
        require(
            alpha.is_finite() && alpha >= 0.0,
            "mortality.density_coefficient",
            "must be finite and >= 0",
        )?;

        let econ = &doc.economics;
        require(
            econ.discount_rate.is_finite() && econ.discount_rate > 0.0,
            "economics.discount_rate",
            "must be > 0",
        )?;
        let b = econ.bounds;
        for (name, v) in [("u_max", b.u_max), ("w_max", b.w_max), ("p_max", b.p_max)] {
            require(
                v.is_finite() && v > 0.0,
                &format!("economics.bounds.{name}"),
                "must be finite and > 0",
            )?;
        }
        let unit_value = econ.unit_value.evaluate(&age_grid, "economics.unit_value", true)?;
        econ.inflow_cost.evaluate(&time_grid, "economics.inflow_cost")?;

        let bound = match doc.control.kind {
            ControlKind::Rate => b.u_max,
            ControlKind::Effort => b.w_max,
        };
        check_intensity(&doc.control.intensity, &age_grid, &time_grid, bound)?;

        let inflow = doc.inflow.evaluate(&time_grid, "inflow")?;
        if let Some((n, p)) = inflow.iter().enumerate().find(|(_, &p)| p > b.p_max) {
            return Err(ScenarioError::domain(
                "inflow",
                format!("value {p} at time level {n} exceeds p_max = {}", b.p_max),
            ));
        }

        let initial_profile = match &doc.initial_profile {
            Some(f) => f.evaluate(&age_grid, "initial_profile", true)?,
            None => {
                let survival = cumulative_slice(baseline_mortality.values(), age_grid.spacing());
                let p0 = inflow[0];
                Profile::new(age_grid, survival.iter().map(|m| p0 * (-m).exp()).collect())
                    .map_err(|e| grid_err("initial_profile", e))?
            }
        };
        let multiplier = match &doc.multiplier {
            Some(f) => f.evaluate(&age_grid, "multiplier", true)?,
            None => Profile::zeros(age_grid),
        };

        Ok(Self {
            doc,
            age_grid,
            time_grid,
            baseline_mortality,
            unit_value,
            initial_profile,
            multiplier,
        })
    }

    pub fn doc(&self) -> &ScenarioDoc {
        &self.doc
    }

    pub fn to_doc(&self) -> ScenarioDoc {
        self.doc.clone()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("scenario documents always serialize")
    }

    /// Applies `edit` to a copy of the document and revalidates.
    pub fn with(&self, edit: impl FnOnce(&mut ScenarioDoc)) -> Result<Self, ScenarioError> {
        let mut doc = self.doc.clone();
        edit(&mut doc);
        Self::from_doc(doc)
    }

    /// Same scenario with `factor` times as many age cells and time steps,
    /// so the Courant number is unchanged. Tabulated inputs cannot be
    /// resampled and are rejected.
    pub fn refined(&self, factor: usize) -> Result<Self, ScenarioError> {
        if factor == 0 {
            return Err(ScenarioError::domain("refine", "factor must be >= 1"));
        }
        if let Some(field) = self.tabulated_field() {
            return Err(ScenarioError::domain(field, "tabulated inputs cannot be refined"));
        }
        self.with(|d| {
            d.age_grid.n_nodes = (d.age_grid.n_nodes - 1) * factor + 1;
            d.time_grid.n_steps *= factor;
        })
    }

    fn tabulated_field(&self) -> Option<&'static str> {
        let d = &self.doc;
        let age = |f: &AgeFunction| matches!(f, AgeFunction::Tabulated { .. });
        let time = |f: &TimeFunction| matches!(f, TimeFunction::Tabulated { .. });
        if age(&d.mortality.baseline) {
            Some("mortality.baseline")
        } else if age(&d.economics.unit_value) {
            Some("economics.unit_value")
        } else if time(&d.economics.inflow_cost) {
            Some("economics.inflow_cost")
        } else if matches!(d.control.intensity, Intensity::Tabulated { .. }) {
            Some("control.intensity")
        } else if time(&d.inflow) {
            Some("inflow")
        } else if d.initial_profile.as_ref().is_some_and(age) {
            Some("initial_profile")
        } else if d.multiplier.as_ref().is_some_and(age) {
            Some("multiplier")
        } else {
            None
        }
    }

    pub fn age_grid(&self) -> &AgeGrid {
        &self.age_grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn kind(&self) -> ControlKind {
        self.doc.control.kind
    }

    pub fn discount_rate(&self) -> f64 {
        self.doc.economics.discount_rate
    }

    pub fn bounds(&self) -> Bounds {
        self.doc.economics.bounds
    }

    pub fn density_coefficient(&self) -> f64 {
        self.doc.mortality.density_coefficient
    }

    /// Baseline mortality `mu(a)`.
    pub fn mortality(&self) -> &Profile {
        &self.baseline_mortality
    }

    /// Unit harvesting value `c(a)`.
    pub fn unit_value(&self) -> &Profile {
        &self.unit_value
    }

    pub fn initial_profile(&self) -> &Profile {
        &self.initial_profile
    }

    /// State-constraint multiplier `eta(a)`; zero when not supplied.
    pub fn multiplier(&self) -> &Profile {
        &self.multiplier
    }

    /// Inflow `p(t_n)` at every time level.
    pub fn inflow_series(&self) -> Vec<f64> {
        self.doc.inflow.evaluate(&self.time_grid, "inflow").expect("validated")
    }

    /// Inflow cost `k(t_n)` at every time level.
    pub fn inflow_cost_series(&self) -> Vec<f64> {
        self.doc
            .economics
            .inflow_cost
            .evaluate(&self.time_grid, "economics.inflow_cost")
            .expect("validated")
    }

    /// Harvesting intensity `u` or `w` tabulated on the solver grid.
    pub fn intensity_field(&self) -> Field2D {
        tabulate_intensity(&self.doc.control.intensity, &self.age_grid, &self.time_grid).expect("validated")
    }
}

/// Tabulated controls on the solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTable {
    pub intensity: Field2D,
    pub inflow: Vec<f64>,
}

/// Evaluates the harvesting intensity and the inflow on `time_grid`.
pub fn evaluate_controls(scenario: &Scenario, time_grid: &TimeGrid) -> Result<ControlTable, ScenarioError> {
    let intensity = tabulate_intensity(&scenario.doc.control.intensity, &scenario.age_grid, time_grid)?;
    let inflow = scenario.doc.inflow.evaluate(time_grid, "inflow")?;
    Ok(ControlTable { intensity, inflow })
}

fn ramp_factor(t: f64, ramp: Option<f64>) -> f64 {
    match ramp {
        Some(r) => (t / r).min(1.0),
        None => 1.0,
    }
}

fn tabulate_intensity(intensity: &Intensity, ages: &AgeGrid, times: &TimeGrid) -> Result<Field2D, ScenarioError> {
    const FIELD: &str = "control.intensity";
    match intensity {
        Intensity::Window { a_lo, a_hi, level, ramp } => {
            let (lo, hi, level, ramp) = (*a_lo, *a_hi, *level, *ramp);
            Field2D::from_fn(*times, *ages, |t, a| {
                if in_window(a, lo, hi) {
                    level * ramp_factor(t, ramp)
                } else {
                    0.0
                }
            })
            .map_err(|e| grid_err(FIELD, e))
        }
        Intensity::Tabulated { values } => {
            let rows = values.len();
            if rows != 1 && rows != times.n_levels() {
                return Err(ScenarioError::domain(
                    FIELD,
                    format!("expected 1 or {} rows, got {rows}", times.n_levels()),
                ));
            }
            let mut flat = Vec::with_capacity(times.n_levels() * ages.len());
            for n in 0..times.n_levels() {
                let row = if rows == 1 { &values[0] } else { &values[n] };
                if row.len() != ages.len() {
                    return Err(ScenarioError::domain(
                        FIELD,
                        format!("row {n} has {} values, expected {}", row.len(), ages.len()),
                    ));
                }
                flat.extend_from_slice(row);
            }
            Field2D::from_values(*times, *ages, flat).map_err(|e| grid_err(FIELD, e))
        }
    }
}

fn check_intensity(intensity: &Intensity, ages: &AgeGrid, times: &TimeGrid, bound: f64) -> Result<(), ScenarioError> {
    const FIELD: &str = "control.intensity";
    if let Intensity::Window { a_lo, a_hi, ramp, .. } = intensity {
        if !(a_lo < a_hi) || *a_lo < 0.0 || *a_hi > ages.max_age() {
            return Err(ScenarioError::domain(
                FIELD,
                format!("window [{a_lo}, {a_hi}] must satisfy 0 <= a_lo < a_hi <= {}", ages.max_age()),
            ));
        }
        if let Some(r) = ramp {
            require(r.is_finite() && *r > 0.0, FIELD, "ramp time must be > 0")?;
        }
    }
    let field = tabulate_intensity(intensity, ages, times)?;
    for n in 0..field.n_levels() {
        for (j, &v) in field.row(n).iter().enumerate() {
            if v < 0.0 || v > bound {
                return Err(ScenarioError::domain(
                    FIELD,
                    format!("value {v} at (level {n}, node {j}) outside [0, {bound}]"),
                ));
            }
        }
    }
    Ok(())
}
