//! One function per subcommand. Each writes its CSVs and a manifest into the
//! output directory and returns the manifest plus lines for the terminal.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use harvest_core::adjoint::{solve_rate_adjoint, NonlocalTerm};
use harvest_core::control::{
    complementary_slackness_residual, forward_backward_sweep, gradient_check, stationary_switching,
    switching_violations, sweep_properties, sweep_values, yield_sweep, Channel, FbsCostate, FbsOptions,
    GradientCheck, Mechanism, SweepRow, SweepTemplate,
};
use harvest_core::csv::{fmt_num, write_field, write_profile, write_series, write_table};
use harvest_core::grid::{trapezoid, Field2D, Profile};
use harvest_core::presets::{self, Preset};
use harvest_core::scenario::Intensity;
use harvest_core::stationary::{
    stationary_adjoint, stationary_effort_profile, stationary_rate_truncated, FixedPointOptions,
};
use harvest_core::transport::{solve_forward, SolveReport};
use harvest_core::{parse_scenario, ControlKind, Scenario};
use serde_json::json;

use crate::output::{Output, RunManifest};
use crate::CliError;

/// Tolerance shared by the gradient checks.
pub const GRADIENT_TOL: f64 = 1e-3;
/// Ablated error must exceed the passing error by this factor.
pub const ABLATION_FACTOR: f64 = 10.0;
/// Second differences of the effort yield above this count as non-concave.
pub const CONCAVITY_TOL: f64 = 1e-8;
pub const SLACKNESS_TOL: f64 = 1e-8;
/// PDE costate vs stationary formula, off the multiplier support.
pub const PDE_ADJOINT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct Source {
    /// Built-in parameter set.
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    /// Scenario JSON document.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OutDir {
    /// Existing directory for CSVs and the manifest.
    #[arg(long, env = "HARVEST_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
}

struct Loaded {
    scenario: Scenario,
    label: String,
    preset: Option<String>,
    defaults: Vec<String>,
}

fn from_preset(p: Preset) -> Result<Loaded, CliError> {
    Ok(Loaded {
        scenario: Scenario::from_doc(p.doc)?,
        label: format!("preset:{}", p.name),
        preset: Some(p.name.to_string()),
        defaults: p.artifact_defaults.iter().map(|s| s.to_string()).collect(),
    })
}

fn load(source: &Source, default_preset: &str) -> Result<Loaded, CliError> {
    if let Some(path) = &source.scenario {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let scenario = parse_scenario(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        return Ok(Loaded {
            scenario,
            label: path.display().to_string(),
            preset: None,
            defaults: Vec::new(),
        });
    }
    let name = source.preset.as_deref().unwrap_or(default_preset);
    let preset = presets::by_name(name)
        .ok_or_else(|| CliError::Parse(format!("unknown preset `{name}` (known: {})", presets::NAMES.join(", "))))?;
    from_preset(preset)
}

fn finish(out: Output, loaded: &Loaded, diagnostics: serde_json::Value, passed: bool) -> Result<RunManifest, CliError> {
    out.finish(
        loaded.label.clone(),
        Some(loaded.scenario.to_doc()),
        loaded.defaults.clone(),
        diagnostics,
        passed,
    )
}

fn opt_json(v: Option<f64>) -> serde_json::Value {
    v.map_or(serde_json::Value::Null, |x| json!(x))
}

// ---------------------------------------------------------------------------
// stationary

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismArg {
    Both,
    Rate,
    Effort,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Both => Mechanism::Both,
            MechanismArg::Rate => Mechanism::Rate,
            MechanismArg::Effort => Mechanism::Effort,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct StationaryArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub out: OutDir,
    /// Defaults to both for presets and to the scenario's control kind for files.
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismArg>,
}

/// Stationary profiles under the scenario's final-time control and inflow,
/// with the unharvested baselines.
pub fn stationary(args: &StationaryArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.source, "profiles")?;
    let sc = &loaded.scenario;
    let mut out = Output::new(&args.out.out, "stationary")?;
    let mechanism = args.mechanism.unwrap_or(match (&loaded.preset, sc.kind()) {
        (Some(_), _) => MechanismArg::Both,
        (None, ControlKind::Rate) => MechanismArg::Rate,
        (None, ControlKind::Effort) => MechanismArg::Effort,
    });
    let last = sc.time_grid().n_steps();
    let control = sc.intensity_field().row_profile(last);
    let p = sc.inflow_series()[last];
    let mu = sc.mortality();
    let alpha = sc.density_coefficient();
    let opts = FixedPointOptions::default();
    let zero = Profile::zeros(*sc.age_grid());
    let mut diag = serde_json::Map::new();
    let mut lines = Vec::new();

    if mechanism != MechanismArg::Effort {
        let r = stationary_rate_truncated(mu, &control, p, alpha, &opts)?;
        let base = stationary_rate_truncated(mu, &zero, p, alpha, &opts)?;
        out.write("rate_profile.csv", |w| write_profile(w, &r.profile))?;
        out.write("rate_baseline.csv", |w| write_profile(w, &base.profile))?;
        lines.push(format!(
            "rate: E = {:.6}, yield = {:.6}, baseline E = {:.6}",
            r.aggregate, r.yield_rate, base.aggregate
        ));
        diag.insert(
            "rate".into(),
            json!({
                "aggregate": r.aggregate,
                "yield": r.yield_rate,
                "truncation_age": opt_json(r.crossing),
                "iterations": r.iterations,
                "final_residual": opt_json(r.residual_history.last().copied()),
                "baseline_aggregate": base.aggregate,
            }),
        );
    }
    if mechanism != MechanismArg::Rate {
        let e = stationary_effort_profile(mu, &control, p, alpha, &opts)?;
        let base = stationary_effort_profile(mu, &zero, p, alpha, &opts)?;
        let yield_density = Profile::new(
            *sc.age_grid(),
            control.values().iter().zip(e.profile.values()).map(|(w, x)| w * x).collect(),
        )
        .expect("finite");
        let y = trapezoid(&yield_density);
        out.write("effort_profile.csv", |w| write_profile(w, &e.profile))?;
        out.write("effort_baseline.csv", |w| write_profile(w, &base.profile))?;
        lines.push(format!(
            "effort: E = {:.6}, yield = {:.6}, baseline E = {:.6}, {} fixed-point iterations",
            e.aggregate, y, base.aggregate, e.iterations
        ));
        diag.insert(
            "effort".into(),
            json!({
                "aggregate": e.aggregate,
                "yield": y,
                "iterations": e.iterations,
                "residual_history": e.residual_history,
                "baseline_aggregate": base.aggregate,
            }),
        );
    }
    diag.insert("inflow".into(), json!(p));
    diag.insert("density_coefficient".into(), json!(alpha));
    let manifest = finish(out, &loaded, serde_json::Value::Object(diag), true)?;
    Ok(Outcome { manifest, lines })
}

// ---------------------------------------------------------------------------
// dynamics

#[derive(Args, Debug, Clone)]
pub struct DynamicsArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub out: OutDir,
    /// Also solve on a grid refined by this factor and report the
    /// balance-residual ratio.
    #[arg(long, default_value_t = 1)]
    pub refine: usize,
}

const PROFILE_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn residual_times(report: &SolveReport) -> Vec<f64> {
    let times = report.state.time_grid().times();
    times[..report.balance_residual.len()].to_vec()
}

/// Coarse and refined solves of the same scenario with the ratio of their
/// largest balance residuals.
pub struct Refinement {
    pub coarse: SolveReport,
    pub fine: SolveReport,
    pub ratio: f64,
}

pub fn refinement_study(scenario: &Scenario, factor: usize) -> Result<Refinement, CliError> {
    let coarse = solve_forward(scenario)?;
    let fine = solve_forward(&scenario.refined(factor)?)?;
    let ratio = coarse.max_balance_residual() / fine.max_balance_residual();
    Ok(Refinement { coarse, fine, ratio })
}

pub fn dynamics(args: &DynamicsArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.source, "dynamics")?;
    let sc = &loaded.scenario;
    if args.refine == 0 {
        return Err(CliError::Parse("--refine must be >= 1".into()));
    }
    let mut out = Output::new(&args.out.out, "dynamics")?;
    let rep = solve_forward(sc)?;
    let times = sc.time_grid();
    let levels: Vec<usize> = PROFILE_FRACTIONS
        .iter()
        .map(|f| (f * times.n_steps() as f64).round() as usize)
        .collect();

    out.write("state.csv", |w| write_field(w, &rep.state))?;
    let mut header = vec!["a".to_string()];
    header.extend(levels.iter().map(|&n| format!("t={}", fmt_num(times.time(n)))));
    let rows: Vec<Vec<Option<f64>>> = sc
        .age_grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &a)| std::iter::once(Some(a)).chain(levels.iter().map(|&n| Some(rep.state.get(n, j)))).collect())
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write("profiles.csv", |w| write_table(w, &header_refs, &rows))?;
    out.write("aggregate.csv", |w| write_series(w, "t,E", &times.times(), &rep.aggregate))?;
    out.write("balance_residual.csv", |w| {
        write_series(w, "t,residual", &residual_times(&rep), &rep.balance_residual)
    })?;

    let mut lines = vec![format!(
        "{} model: max balance residual {:.3e}, E(T) = {:.6}, truncated nodes {}",
        rep.kind,
        rep.max_balance_residual(),
        rep.aggregate.last().copied().unwrap_or(0.0),
        rep.active_count()
    )];
    let mut diag = json!({
        "kind": rep.kind.to_string(),
        "max_balance_residual": rep.max_balance_residual(),
        "final_aggregate": rep.aggregate.last(),
        "truncated_nodes": rep.active_count(),
        "min_state": rep.state.min(),
        "profile_levels": levels,
    });
    if rep.kind == ControlKind::Effort {
        let max_e = rep.aggregate.iter().copied().fold(0.0, f64::max);
        diag["nonlocal"] = json!({
            "density_coefficient": sc.density_coefficient(),
            "max_density_mortality": sc.density_coefficient() * max_e,
            "max_aggregate": max_e,
        });
    }
    if args.refine > 1 {
        let fine = solve_forward(&sc.refined(args.refine)?)?;
        let ratio = rep.max_balance_residual() / fine.max_balance_residual();
        out.write("balance_residual_refined.csv", |w| {
            write_series(w, "t,residual", &residual_times(&fine), &fine.balance_residual)
        })?;
        lines.push(format!(
            "refined x{}: max balance residual {:.3e}, ratio {:.4}",
            args.refine,
            fine.max_balance_residual(),
            ratio
        ));
        diag["refinement"] = json!({
            "factor": args.refine,
            "coarse_max_residual": rep.max_balance_residual(),
            "fine_max_residual": fine.max_balance_residual(),
            "ratio": ratio,
        });
    }
    let manifest = finish(out, &loaded, diag, true)?;
    Ok(Outcome { manifest, lines })
}

// ---------------------------------------------------------------------------
// adjoint

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointMode {
    /// Explicit stationary formula only.
    #[default]
    Stationary,
    /// Also solve the time-dependent adjoint and compare.
    Pde,
}

#[derive(Args, Debug, Clone)]
pub struct AdjointArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub out: OutDir,
    /// Multiplier level on the switching preset.
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Dead-zone half-width; defaults to 0.05 on presets and 0 otherwise.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub mode: AdjointMode,
    /// Horizon of the time-dependent solve (rounded to whole age cells).
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
}

const FIGURE_DEAD_ZONE: f64 = 0.05;

/// Ages where the synthesized control changes value.
fn switch_points(ages: &[f64], control: &[f64]) -> Vec<f64> {
    control
        .windows(2)
        .zip(ages.windows(2))
        .filter(|(c, _)| c[0] != c[1])
        .map(|(_, a)| 0.5 * (a[0] + a[1]))
        .collect()
}

/// Time-dependent costate on a unit-Courant grid of roughly `horizon`,
/// driven by the scenario's age multiplier.
///
/// The transposed costate at node `j` belongs to the cell `[a_j, a_j+1]`, so
/// it is compared with the stationary costate averaged over the cell ends.
pub struct PdeAdjointComparison {
    pub horizon: f64,
    /// Cell centres `a_j + h/2`, one per cell.
    pub centres: Vec<f64>,
    pub costate_t0: Vec<f64>,
    pub stationary_centred: Vec<f64>,
    pub boundary: Vec<f64>,
    pub times: Vec<f64>,
    /// Largest difference from the stationary costate over all cells.
    pub max_diff: f64,
    /// Same, over all settled times and the cells where the multiplier
    /// vanishes.
    pub max_diff_off_support: f64,
    /// Spread of `lambda(t, 0)` over times more than one lifetime before
    /// the horizon.
    pub boundary_spread: f64,
}

pub fn pde_adjoint_comparison(sc: &Scenario, stationary: &Profile, horizon: f64) -> Result<PdeAdjointComparison, CliError> {
    let h = sc.age_grid().spacing();
    let steps = (horizon / h).round().max(1.0) as usize;
    let pde = sc.with(|d| {
        d.time_grid.n_steps = steps;
        d.time_grid.horizon = steps as f64 * h;
    })?;
    let eta = Field2D::from_profile(*pde.time_grid(), pde.multiplier());
    let rep = solve_rate_adjoint(&pde, &eta)?;
    let centred: Vec<f64> = stationary.values().windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let centres: Vec<f64> = sc.age_grid().nodes().iter().map(|a| a + 0.5 * h).take(centred.len()).collect();
    let free: Vec<usize> = (0..centred.len()).filter(|&j| pde.multiplier().values()[j + 1] == 0.0).collect();
    let times = pde.time_grid().times();
    // characteristics from these levels leave the age range before the horizon
    let cutoff = pde.time_grid().horizon() - sc.age_grid().max_age() - h;
    let settled: Vec<usize> = (0..times.len()).filter(|&n| times[n] <= cutoff).collect();

    let costate_t0: Vec<f64> = rep.costate.row(0)[..centred.len()].to_vec();
    let max_diff = costate_t0.iter().zip(&centred).map(|(l, s)| (l - s).abs()).fold(0.0, f64::max);
    let mut off = 0.0_f64;
    for &n in &settled {
        for &j in &free {
            off = off.max((rep.costate.get(n, j) - centred[j]).abs());
        }
    }
    let boundary = rep.costate.column(0);
    let values = settled.iter().map(|&n| boundary[n]);
    let spread = values.clone().fold(f64::NEG_INFINITY, f64::max) - values.fold(f64::INFINITY, f64::min);
    Ok(PdeAdjointComparison {
        horizon: pde.time_grid().horizon(),
        centres,
        costate_t0,
        stationary_centred: centred,
        boundary,
        times,
        max_diff,
        max_diff_off_support: off,
        boundary_spread: if settled.is_empty() { f64::NAN } else { spread },
    })
}

pub fn adjoint(args: &AdjointArgs) -> Result<Outcome, CliError> {
    let loaded = match args.eta0 {
        Some(eta0) => {
            if args.source.scenario.is_some() || args.source.preset.as_deref().is_some_and(|p| p != "switching") {
                return Err(CliError::Parse("--eta0 applies to the switching preset only".into()));
            }
            if !(eta0 >= 0.0 && eta0.is_finite()) {
                return Err(CliError::Parse(format!("--eta0 must be >= 0, got {eta0}")));
            }
            from_preset(presets::switching(eta0))?
        }
        None => load(&args.source, "switching")?,
    };
    let sc = &loaded.scenario;
    let eps = args.eps.unwrap_or(if loaded.preset.is_some() { FIGURE_DEAD_ZONE } else { 0.0 });
    if !(eps >= 0.0) {
        return Err(CliError::Parse(format!("--eps must be >= 0, got {eps}")));
    }
    let mut out = Output::new(&args.out.out, "adjoint")?;
    let lambda = stationary_adjoint(sc.mortality(), sc.multiplier(), sc.discount_rate())?;
    let sw = stationary_switching(sc.unit_value(), &lambda, sc.bounds().u_max, eps)?;
    let ages = sc.age_grid().nodes();

    out.write("costate.csv", |w| write_profile(w, &lambda))?;
    out.write("unit_value.csv", |w| write_profile(w, sc.unit_value()))?;
    let rows: Vec<Vec<Option<f64>>> = ages
        .iter()
        .zip(sw.sigma_u.values().iter().zip(sw.u_star.values()))
        .map(|(a, (s, u))| vec![Some(*a), Some(*s), Some(*u)])
        .collect();
    out.write("switching.csv", |w| write_table(w, &["a", "sigma_u", "u_star"], &rows))?;

    let switches = switch_points(&ages, sw.u_star.values());
    let mut lines = vec![
        format!("lambda(0) = {:.6}, lambda(A) = {}", lambda.values()[0], lambda.last()),
        format!("dead zone {eps}; u* switches at ages {switches:.3?}"),
    ];
    let mut diag = json!({
        "lambda_at_birth": lambda.values()[0],
        "lambda_at_max_age": lambda.last(),
        "dead_zone": eps,
        "switch_ages": switches,
        "harvested_nodes": sw.u_star.values().iter().filter(|&&u| u > 0.0).count(),
    });
    let mut passed = true;
    if args.mode == AdjointMode::Pde {
        let cmp = pde_adjoint_comparison(sc, &lambda, args.horizon)?;
        let rows: Vec<Vec<Option<f64>>> = cmp
            .centres
            .iter()
            .zip(cmp.costate_t0.iter().zip(&cmp.stationary_centred))
            .map(|(a, (p, s))| vec![Some(*a), Some(*p), Some(*s)])
            .collect();
        out.write("pde_costate_t0.csv", |w| {
            write_table(w, &["a_centre", "lambda_pde", "lambda_stationary"], &rows)
        })?;
        out.write("pde_boundary.csv", |w| write_series(w, "t,lambda_t_0", &cmp.times, &cmp.boundary))?;
        passed = cmp.max_diff_off_support <= PDE_ADJOINT_TOL;
        lines.push(format!(
            "pde horizon {:.4}: max |lambda - stationary| = {:.3e} ({:.3e} where eta = 0, tol {PDE_ADJOINT_TOL:e}); lambda(t, 0) spread {:.3e}",
            cmp.horizon, cmp.max_diff, cmp.max_diff_off_support, cmp.boundary_spread
        ));
        diag["pde"] = json!({
            "horizon": cmp.horizon,
            "max_diff": cmp.max_diff,
            "max_diff_where_multiplier_vanishes": cmp.max_diff_off_support,
            "tolerance": PDE_ADJOINT_TOL,
            "boundary_spread": cmp.boundary_spread,
            "note": "costate compared at cell centres; on the multiplier support the upwind costate carries an O(h) offset",
        });
    }
    let manifest = finish(out, &loaded, diag, passed)?;
    Ok(Outcome { manifest, lines })
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, default_value_t = presets::SWEEP_H_MAX)]
    pub h_max: f64,
    #[arg(long, default_value_t = presets::SWEEP_POINTS)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
    pub mechanism: MechanismArg,
    /// Worker threads for the sweep points (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Stationary sweep setup taken from a scenario with a windowed intensity.
pub fn sweep_template(sc: &Scenario) -> Result<SweepTemplate, CliError> {
    let (a_lo, a_hi) = match sc.doc().control.intensity {
        Intensity::Window { a_lo, a_hi, .. } => (a_lo, a_hi),
        Intensity::Tabulated { .. } => {
            return Err(CliError::Parse("control.intensity: the sweep needs a window intensity".into()))
        }
    };
    Ok(SweepTemplate {
        mortality: sc.mortality().clone(),
        alpha: sc.density_coefficient(),
        a_lo,
        a_hi,
        inflow: sc.inflow_series()[0],
        fixed_point: FixedPointOptions::default(),
    })
}

pub fn run_sweep(template: &SweepTemplate, h: &[f64], mechanism: Mechanism, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Solve(e.to_string()))?;
    Ok(pool.install(|| yield_sweep(template, h, mechanism))?)
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.source, "comparison")?;
    if !(args.h_max >= 0.0 && args.h_max.is_finite()) || args.points == 0 {
        return Err(CliError::Parse("--h-max must be >= 0 and --points >= 1".into()));
    }
    let template = sweep_template(&loaded.scenario)?;
    let mut out = Output::new(&args.out.out, "sweep")?;
    let mechanism = Mechanism::from(args.mechanism);
    let rows = run_sweep(&template, &sweep_values(args.h_max, args.points), mechanism, args.jobs)?;

    let (header, cells): (&[&str], fn(&SweepRow) -> Vec<Option<f64>>) = match mechanism {
        Mechanism::Both => (&["h", "Y_rate", "Y_effort", "E_rate", "E_effort"], |r| {
            vec![Some(r.h), r.y_rate, r.y_effort, r.e_rate, r.e_effort]
        }),
        Mechanism::Rate => (&["h", "Y_rate", "E_rate"], |r| vec![Some(r.h), r.y_rate, r.e_rate]),
        Mechanism::Effort => (&["h", "Y_effort", "E_effort"], |r| vec![Some(r.h), r.y_effort, r.e_effort]),
    };
    let table: Vec<Vec<Option<f64>>> = rows.iter().map(cells).collect();
    out.write("table.csv", |w| write_table(w, header, &table))?;

    let mut lines = vec![format!("{} points on [0, {}]", rows.len(), args.h_max)];
    let mut diag = json!({
        "points": args.points,
        "h_max": args.h_max,
        "mechanism": mechanism,
        "window": [template.a_lo, template.a_hi],
        "density_coefficient": template.alpha,
        "inflow": template.inflow,
    });
    if let Some(props) = sweep_properties(&rows) {
        let concave = props.max_second_difference_effort <= CONCAVITY_TOL;
        let ordered = props.max_depletion_gap <= 0.0;
        lines.push(format!(
            "effort yield concave: {concave} (max second difference {:.3e}); rate depletes more: {ordered} (max E_rate - E_effort {:.3e}); rate plateau ratio {:.4}",
            props.max_second_difference_effort, props.max_depletion_gap, props.plateau_ratio
        ));
        diag["properties"] = json!(props);
        diag["flags"] = json!({ "effort_yield_concave": concave, "rate_depletes_more": ordered });
    }
    let manifest = finish(out, &loaded, diag, true)?;
    Ok(Outcome { manifest, lines })
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridArg {
    /// 101 age nodes, 400 steps, horizon 40.
    #[default]
    Coarse,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Single channel: rate-u, rate-p or effort-w.
    #[arg(long, conflicts_with = "all")]
    pub channel: Option<Channel>,
    /// All channels plus the nonlocal ablation (the default).
    #[arg(long)]
    pub all: bool,
    /// Drop the aggregate-feedback term from the effort adjoint.
    #[arg(long, requires = "channel")]
    pub ablate_nonlocal: bool,
    #[arg(long, value_enum, default_value_t)]
    pub grid: GridArg,
}

pub fn check_channel(channel: Channel, nonlocal: NonlocalTerm) -> Result<GradientCheck, CliError> {
    let sc = Scenario::from_doc(presets::gradcheck(channel).doc)?;
    Ok(gradient_check(&sc, channel, &presets::gradcheck_probe(channel), nonlocal)?)
}

/// Three passing checks and the ablated effort check.
pub struct GradientSuite {
    pub checks: Vec<GradientCheck>,
    pub ablated: GradientCheck,
}

impl GradientSuite {
    pub fn run() -> Result<Self, CliError> {
        let checks = Channel::ALL
            .into_iter()
            .map(|c| check_channel(c, NonlocalTerm::Included))
            .collect::<Result<Vec<_>, _>>()?;
        let ablated = check_channel(Channel::EffortW, NonlocalTerm::Dropped)?;
        Ok(Self { checks, ablated })
    }

    pub fn effort_error(&self) -> f64 {
        self.checks.iter().find(|c| c.channel == Channel::EffortW).map_or(f64::NAN, |c| c.rel_err)
    }

    pub fn ablation_detected(&self) -> bool {
        self.ablated.rel_err > GRADIENT_TOL && self.ablated.rel_err >= ABLATION_FACTOR * self.effort_error()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.rel_err <= GRADIENT_TOL) && self.ablation_detected()
    }
}

fn nonlocal_name(n: NonlocalTerm) -> &'static str {
    match n {
        NonlocalTerm::Included => "included",
        NonlocalTerm::Dropped => "dropped",
    }
}

fn gradcheck_rows(w: &mut dyn Write, rows: &[(GradientCheck, bool)]) -> std::io::Result<()> {
    writeln!(w, "channel,nonlocal,adjoint_gradient,fd_gradient,rel_err,pass")?;
    for (c, pass) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.channel.name(),
            nonlocal_name(c.nonlocal),
            fmt_num(c.adjoint_gradient),
            fmt_num(c.fd_gradient),
            fmt_num(c.rel_err),
            pass
        )?;
    }
    Ok(())
}

fn check_line(c: &GradientCheck, pass: bool) -> String {
    format!(
        "{:<9} nonlocal {:<8} adjoint {:+.9e}  fd {:+.9e}  rel_err {:.3e}  {}",
        c.channel.name(),
        nonlocal_name(c.nonlocal),
        c.adjoint_gradient,
        c.fd_gradient,
        c.rel_err,
        if pass { "PASS" } else { "FAIL" }
    )
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<Outcome, CliError> {
    let mut out = Output::new(&args.out.out, "gradcheck")?;
    let (rows, passed, extra) = match args.channel {
        Some(channel) => {
            if args.ablate_nonlocal && channel != Channel::EffortW {
                return Err(CliError::Parse("--ablate-nonlocal applies to the effort-w channel".into()));
            }
            let nonlocal = if args.ablate_nonlocal { NonlocalTerm::Dropped } else { NonlocalTerm::Included };
            let c = check_channel(channel, nonlocal)?;
            let pass = c.rel_err <= GRADIENT_TOL;
            (vec![(c, pass)], pass, serde_json::Value::Null)
        }
        None => {
            let suite = GradientSuite::run()?;
            let mut rows: Vec<(GradientCheck, bool)> =
                suite.checks.iter().map(|c| (*c, c.rel_err <= GRADIENT_TOL)).collect();
            // the ablated row passes when it fails by the required margin
            rows.push((suite.ablated, suite.ablation_detected()));
            let extra = json!({
                "ablation_ratio": suite.ablated.rel_err / suite.effort_error(),
                "ablation_required_ratio": ABLATION_FACTOR,
            });
            (rows, suite.passed(), extra)
        }
    };
    out.write("table.csv", |w| gradcheck_rows(w, &rows))?;
    let mut lines: Vec<String> = rows.iter().map(|(c, p)| check_line(c, *p)).collect();
    if args.channel.is_none() {
        lines.push("(the dropped-nonlocal row passes when its error exceeds the tolerance and 10x the included error)".into());
    }
    let diag = json!({
        "grid": "coarse: 101 age nodes, 400 steps, horizon 40",
        "tolerance": GRADIENT_TOL,
        "checks": rows.iter().map(|(c, p)| json!({ "check": c, "pass": p })).collect::<Vec<_>>(),
        "ablation": extra,
    });
    let manifest = out.finish("preset:gradcheck".into(), None, Vec::new(), diag, passed)?;
    Ok(Outcome { manifest, lines })
}

// ---------------------------------------------------------------------------
// fbs

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostateArg {
    #[default]
    Continuous,
    ClampExact,
}

#[derive(Args, Debug, Clone)]
pub struct FbsArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, default_value_t = 0.5)]
    pub relaxation: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Dead-zone half-width.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t)]
    pub costate: CostateArg,
}

/// Switching and slackness audit of a sweep result.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FbsAudit {
    pub violations_u: usize,
    pub violations_p: usize,
    pub slackness: f64,
}

impl FbsAudit {
    pub fn passed(&self) -> bool {
        self.violations_u == 0 && self.violations_p == 0 && self.slackness <= SLACKNESS_TOL
    }
}

pub fn audit_fbs(sc: &Scenario, r: &harvest_core::control::FbsResult, eps: f64) -> Result<FbsAudit, CliError> {
    let b = sc.bounds();
    let slack = complementary_slackness_residual(&r.forward.state, &r.eta_estimate)?;
    Ok(FbsAudit {
        violations_u: switching_violations(r.switching.sigma_u.values(), r.u.values(), b.u_max, eps),
        violations_p: switching_violations(&r.switching.sigma_p, &r.p, b.p_max, eps),
        slackness: slack.residual,
    })
}

pub fn fbs(args: &FbsArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.source, "fbs")?;
    let sc = &loaded.scenario;
    let opts = FbsOptions {
        relaxation: args.relaxation,
        max_iter: args.max_iter,
        tol: args.tol,
        eps: args.eps,
        costate: match args.costate {
            CostateArg::Continuous => FbsCostate::Continuous,
            CostateArg::ClampExact => FbsCostate::ClampExact,
        },
        ..FbsOptions::default()
    };
    let mut out = Output::new(&args.out.out, "fbs")?;
    let r = forward_backward_sweep(sc, &opts)?;
    let audit = audit_fbs(sc, &r, args.eps)?;
    let times = sc.time_grid().times();
    let ages = sc.age_grid().nodes();

    out.write("control_u.csv", |w| write_field(w, &r.u))?;
    out.write("inflow.csv", |w| write_series(w, "t,p", &times, &r.p))?;
    out.write("state.csv", |w| write_field(w, &r.forward.state))?;
    out.write("multiplier.csv", |w| write_field(w, &r.eta_estimate))?;
    let mut rows = Vec::with_capacity(times.len() * ages.len());
    for (n, t) in times.iter().enumerate() {
        for (j, a) in ages.iter().enumerate() {
            rows.push(vec![Some(*t), Some(*a), Some(r.switching.sigma_u.get(n, j)), Some(r.u.get(n, j))]);
        }
    }
    out.write("switching.csv", |w| write_table(w, &["t", "a", "sigma_u", "u_star"], &rows))?;
    let iters: Vec<f64> = (1..=r.history.len()).map(|i| i as f64).collect();
    let values: Vec<f64> = r.history.iter().map(|o| o.value).collect();
    out.write("history.csv", |w| write_series(w, "iteration,J", &iters, &values))?;

    let passed = r.converged && audit.passed();
    let last = r.history.last().copied();
    let mut lines = vec![
        format!(
            "{} iterations, converged {}, J = {:.8} (tail bound {:.3e})",
            r.iterations,
            r.converged,
            last.map_or(f64::NAN, |o| o.value),
            last.map_or(f64::NAN, |o| o.tail_bound)
        ),
        format!(
            "switching violations: u {} p {}; slackness residual {:.3e}",
            audit.violations_u, audit.violations_p, audit.slackness
        ),
    ];
    if let Some(w) = &r.warning {
        lines.push(format!("warning: {w}"));
    }
    let diag = json!({
        "options": opts,
        "iterations": r.iterations,
        "converged": r.converged,
        "warning": r.warning,
        "objective": last,
        "audit": audit,
        "slackness": r.slackness,
        "multiplier_estimate": "heuristic: supported on zeroed nodes, sized from the costate jump at truncation",
    });
    let manifest = finish(out, &loaded, diag, passed)?;
    Ok(Outcome { manifest, lines })
}

/// Command that reproduces each preset's data.
pub fn preset_command(name: &str) -> Option<&'static str> {
    Some(match name {
        "profiles" | "profiles-effort" => "stationary",
        "dynamics" | "dynamics-effort" => "dynamics",
        "switching" => "adjoint",
        "comparison" => "sweep",
        "fbs" => "fbs",
        _ => return None,
    })
}

/// Runs a preset through its command with default options.
pub fn run_preset(name: &str, out: PathBuf) -> Result<Outcome, CliError> {
    let source = Source {
        preset: Some(name.to_string()),
        scenario: None,
    };
    let out = OutDir { out };
    match preset_command(name) {
        Some("stationary") => stationary(&StationaryArgs {
            source,
            out,
            mechanism: None,
        }),
        Some("dynamics") => dynamics(&DynamicsArgs { source, out, refine: 1 }),
        Some("adjoint") => adjoint(&AdjointArgs {
            source,
            out,
            eta0: None,
            eps: None,
            mode: AdjointMode::Stationary,
            horizon: 100.0,
        }),
        Some("sweep") => sweep(&SweepArgs {
            source,
            out,
            h_max: presets::SWEEP_H_MAX,
            points: presets::SWEEP_POINTS,
            mechanism: MechanismArg::Both,
            jobs: 0,
        }),
        Some("fbs") => fbs(&FbsArgs {
            source,
            out,
            relaxation: 0.5,
            max_iter: 200,
            tol: 1e-9,
            eps: 0.0,
            costate: CostateArg::Continuous,
        }),
        _ => Err(CliError::Parse(format!("unknown preset `{name}`"))),
    }
}
