//! The pipeline commands. Each returns the paths it wrote or a [`CliError`]
//! carrying the process exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use densopt_core::sdp::export_sdpa;
use densopt_core::simulate::{discounted_cost, integrate_closed_loop, monte_carlo_suboptimality, SimConfig, SimError};
use densopt_core::sos::SosProgram;
use densopt_core::synthesis::{
    build_density_program, extract_controller, synthesize, OcpProblem, RationalController, SynthesisConfig,
    SynthesisError,
};
use densopt_core::value_bounds::{
    closed_loop_data, gap_report, lower_bound_v, lower_bound_vu, lower_v_program, upper_bound_vu, vu_program,
    BoundSide, ValueBound,
};
use serde::Serialize;
use thiserror::Error;

use crate::artifacts::{sha256_hex, Artifacts, RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::config::{ConfigError, ProblemConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            message: message.into(),
            code: EXIT_USAGE,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "message": self.message,
            "exit_code": self.code,
        })
        .to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError {
            kind: "config",
            message: e.to_string(),
            code: EXIT_USAGE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            kind: "io",
            message: e.to_string(),
            code: EXIT_USAGE,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError {
            kind: "simulate",
            message: e.to_string(),
            code: EXIT_USAGE,
        }
    }
}

fn synthesis_error(e: SynthesisError, bound: bool) -> CliError {
    match e {
        SynthesisError::Infeasible { .. } if bound => CliError {
            kind: "infeasible",
            message: format!("{e}; try a higher degree"),
            code: EXIT_INFEASIBLE,
        },
        SynthesisError::Infeasible { .. } | SynthesisError::Solver { .. } => CliError {
            kind: "solver",
            message: e.to_string(),
            code: EXIT_SOLVER,
        },
        other => CliError {
            kind: "input",
            message: other.to_string(),
            code: EXIT_USAGE,
        },
    }
}

/// Options every command shares.
#[derive(Clone, Debug)]
pub struct Common {
    pub config: PathBuf,
    pub out: PathBuf,
    pub args: Vec<String>,
    pub settings: SynthesisConfig,
}

struct Loaded {
    text: String,
    problem: OcpProblem,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", common.config.display())))?;
    let cfg = ProblemConfig::parse(&text)?;
    let resolved = cfg.resolve(&common.settings)?;
    Ok(Loaded {
        text,
        problem: resolved.problem,
    })
}

fn load_controller(path: &Path) -> Result<RationalController, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    RationalController::from_json(&text).map_err(|e| CliError::usage(e.to_string()))
}

fn load_bound(path: &Path) -> Result<ValueBound, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    ValueBound::from_json(&text).map_err(|e| CliError::usage(e.to_string()))
}

fn manifest(common: &Common, command: &str, loaded: &Loaded) -> RunManifest {
    RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        args: common.args.clone(),
        config_path: common.config.display().to_string(),
        config_sha256: sha256_hex(loaded.text.as_bytes()),
        degrees: BTreeMap::new(),
        solver: serde_json::to_value(&common.settings).expect("settings serialize"),
        seeds: vec![],
        outputs: vec![],
        wall_times: BTreeMap::new(),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

#[derive(Serialize)]
struct DensitySummary<'a> {
    degree: u32,
    objective: f64,
    status: String,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    gap: f64,
    liouville_residual: f64,
    liouville_ok: bool,
    exit_cost: f64,
    rho: String,
    rho0: String,
    rho_t: String,
    sigma: Vec<String>,
    warnings: &'a [String],
}

pub fn cmd_synthesize(common: &Common, d: u32) -> Result<Vec<PathBuf>, CliError> {
    let t0 = Instant::now();
    let loaded = load(common)?;
    let sol = synthesize(&loaded.problem, d, &common.settings).map_err(|e| synthesis_error(e, false))?;
    let ctrl = extract_controller(&sol);
    let summary = DensitySummary {
        degree: d,
        objective: sol.objective,
        status: format!("{:?}", sol.status),
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        liouville_residual: sol.liouville_residual,
        liouville_ok: sol.liouville_ok(),
        exit_cost: loaded.problem.exit_cost,
        rho: sol.rho.to_text(),
        rho0: sol.rho0.to_text(),
        rho_t: sol.rho_t.to_text(),
        sigma: sol.sigma.iter().map(|s| s.to_text()).collect(),
        warnings: &sol.warnings,
    };
    let mut art = Artifacts::new(&common.out);
    art.add(format!("controller_d{d}.json"), ctrl.to_json());
    art.add(format!("density_d{d}.json"), json(&summary));
    art.add(format!("solver_log_density_d{d}.csv"), sol.solver_log.clone());
    let mut man = manifest(common, "synthesize", &loaded);
    man.degrees.insert("synthesis".into(), d);
    man.wall_times.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(art.commit(man)?)
}

/// Grid points per axis for the surface CSV.
fn surface_points(n: usize) -> usize {
    match n {
        1 => 201,
        2 => 51,
        3 => 21,
        _ => 9,
    }
}

fn compute_bound(
    problem: &OcpProblem,
    settings: &SynthesisConfig,
    side: BoundSide,
    d: u32,
    controller: Option<&Path>,
) -> Result<ValueBound, CliError> {
    let sp = problem.scaled().map_err(|e| synthesis_error(e, true))?;
    let bound = match side {
        BoundSide::LowerOnV => lower_bound_v(&sp, d, settings),
        BoundSide::UpperOnVu | BoundSide::LowerOnVu => {
            let path = controller.ok_or_else(|| CliError::usage(format!("{} needs --controller", side.name())))?;
            let ctrl = load_controller(path)?;
            let data = closed_loop_data(&sp, &ctrl).map_err(|e| CliError::usage(e.to_string()))?;
            if side == BoundSide::UpperOnVu {
                upper_bound_vu(&sp, &data, d, settings)
            } else {
                lower_bound_vu(&sp, &data, d, settings)
            }
        }
    };
    bound.map_err(|e| synthesis_error(e, true))
}

fn add_bound(art: &mut Artifacts, problem: &OcpProblem, b: &ValueBound) {
    let tag = format!("{}_d{}", b.side.name(), b.degree);
    art.add(format!("bound_{tag}.json"), b.to_json());
    art.add(
        format!("surface_{tag}.csv"),
        b.surface_csv(&problem.state_set, surface_points(problem.n())),
    );
    art.add(format!("solver_log_{tag}.csv"), b.solver_log.clone());
}

pub fn cmd_bound(
    common: &Common,
    side: BoundSide,
    d: u32,
    controller: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let t0 = Instant::now();
    let loaded = load(common)?;
    // lower-on-V does not depend on the controller
    let controller = if side == BoundSide::LowerOnV { None } else { controller };
    let b = compute_bound(&loaded.problem, &common.settings, side, d, controller)?;
    let mut art = Artifacts::new(&common.out);
    add_bound(&mut art, &loaded.problem, &b);
    let mut man = manifest(common, "bound", &loaded);
    man.degrees.insert(side.name().into(), d);
    man.wall_times.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(art.commit(man)?)
}

#[derive(Serialize)]
struct GapFile {
    upper_side: String,
    lower_side: String,
    upper_degree: u32,
    lower_degree: u32,
    upper_integral: f64,
    lower_integral: f64,
    gap_percent: f64,
}

/// Gap between an upper bound on `V_u` and a lower bound; either computed
/// at degree `d` or read from files.
pub fn cmd_gap(
    common: &Common,
    d: Option<u32>,
    controller: Option<&Path>,
    upper: Option<&Path>,
    lower: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let t0 = Instant::now();
    let loaded = load(common)?;
    let mut art = Artifacts::new(&common.out);
    let mut man = manifest(common, "gap", &loaded);
    let mut fetch = |side: BoundSide, file: Option<&Path>| -> Result<ValueBound, CliError> {
        match file {
            Some(p) => load_bound(p),
            None => {
                let d = d.ok_or_else(|| CliError::usage("gap needs --degree or both bound files"))?;
                let b = compute_bound(&loaded.problem, &common.settings, side, d, controller)?;
                add_bound(&mut art, &loaded.problem, &b);
                man.degrees.insert(side.name().into(), d);
                Ok(b)
            }
        }
    };
    let up = fetch(BoundSide::UpperOnVu, upper)?;
    let lo = fetch(BoundSide::LowerOnV, lower)?;
    if up.side != BoundSide::UpperOnVu {
        return Err(CliError::usage(format!("--upper holds a {} bound", up.side.name())));
    }
    if lo.side == BoundSide::UpperOnVu {
        return Err(CliError::usage("--lower holds an upper bound"));
    }
    let gap = gap_report(&up, &lo).map_err(|e| CliError::usage(e.to_string()))?;
    let file = GapFile {
        upper_side: up.side.name().into(),
        lower_side: lo.side.name().into(),
        upper_degree: up.degree,
        lower_degree: lo.degree,
        upper_integral: up.integral,
        lower_integral: lo.integral,
        gap_percent: gap,
    };
    art.add("gap.json", json(&file));
    man.wall_times.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(art.commit(man)?)
}

#[derive(Serialize)]
struct TrajectorySummary {
    x0: Vec<f64>,
    exit_time: Option<f64>,
    exit_flag: densopt_core::simulate::ExitFlag,
    cost: f64,
    uncertainty: f64,
    samples: usize,
    config: SimConfig,
}

pub enum SimulateMode<'a> {
    Single { x0: Vec<f64> },
    MonteCarlo { n: usize, bound: &'a Path },
}

pub fn cmd_simulate(
    common: &Common,
    controller: &Path,
    mode: SimulateMode<'_>,
    sim: &SimConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let t0 = Instant::now();
    let loaded = load(common)?;
    let ctrl = load_controller(controller)?;
    if *ctrl.state_map() != loaded.problem.state_set.normalizing_map() || ctrl.m() != loaded.problem.m() {
        return Err(CliError::usage("controller does not match the config"));
    }
    let mut art = Artifacts::new(&common.out);
    let mut man = manifest(common, "simulate", &loaded);
    match mode {
        SimulateMode::Single { x0 } => {
            if x0.len() != loaded.problem.n() {
                return Err(CliError::usage(format!(
                    "x0 has {} entries for {} states",
                    x0.len(),
                    loaded.problem.n()
                )));
            }
            let traj = integrate_closed_loop(&loaded.problem, &ctrl, &x0, sim)?;
            let cost = discounted_cost(&traj, &loaded.problem);
            let summary = TrajectorySummary {
                exit_time: traj.exit_time.is_finite().then_some(traj.exit_time),
                exit_flag: traj.exit_flag,
                cost: cost.value,
                uncertainty: cost.uncertainty,
                samples: traj.times.len(),
                config: sim.clone(),
                x0,
            };
            art.add("trajectory.csv", traj.to_csv());
            art.add("trajectory.json", json(&summary));
        }
        SimulateMode::MonteCarlo { n, bound } => {
            if n == 0 {
                return Err(CliError::usage("--mc needs at least one sample"));
            }
            let lower = load_bound(bound)?;
            let report = monte_carlo_suboptimality(&loaded.problem, &ctrl, &lower, n, sim)?;
            art.add("cost_report.json", report.to_json());
            man.seeds.push(sim.seed);
        }
    }
    man.wall_times.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(art.commit(man)?)
}

pub const STAGES: [&str; 4] = ["density", "upper_vu", "lower_vu", "lower_v"];

pub fn stage_program(
    problem: &OcpProblem,
    settings: &SynthesisConfig,
    stage: &str,
    d: u32,
    controller: Option<&Path>,
) -> Result<SosProgram, CliError> {
    let sp = problem.scaled().map_err(|e| synthesis_error(e, false))?;
    let bad = |e: SynthesisError| synthesis_error(e, false);
    match stage {
        "density" => Ok(build_density_program(&sp, d, settings.basis, settings.facial_reduction)
            .map_err(bad)?
            .program),
        "lower_v" => lower_v_program(&sp, d, settings.basis).map_err(bad),
        "upper_vu" | "lower_vu" => {
            let path = controller.ok_or_else(|| CliError::usage(format!("stage {stage} needs --controller")))?;
            let ctrl = load_controller(path)?;
            let data = closed_loop_data(&sp, &ctrl).map_err(|e| CliError::usage(e.to_string()))?;
            let sign = if stage == "upper_vu" { 1.0 } else { -1.0 };
            vu_program(&sp, &data, d, sign, settings.basis).map_err(bad)
        }
        other => Err(CliError::usage(format!(
            "unknown stage {other:?}; expected one of {}",
            STAGES.join(", ")
        ))),
    }
}

pub fn cmd_export_sdpa(
    common: &Common,
    stage: &str,
    d: u32,
    controller: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let t0 = Instant::now();
    if !STAGES.contains(&stage) {
        return Err(CliError::usage(format!(
            "unknown stage {stage:?}; expected one of {}",
            STAGES.join(", ")
        )));
    }
    let loaded = load(common)?;
    let prog = stage_program(&loaded.problem, &common.settings, stage, d, controller)?;
    let compiled = prog.compile().map_err(|e| CliError {
        kind: "compile",
        message: e.to_string(),
        code: EXIT_USAGE,
    })?;
    let mut art = Artifacts::new(&common.out);
    art.add(format!("{stage}_d{d}.dat-s"), export_sdpa(&compiled.sdp));
    art.add(format!("{stage}_d{d}.map"), compiled.variable_map());
    let mut man = manifest(common, "export-sdpa", &loaded);
    man.degrees.insert(stage.into(), d);
    man.wall_times.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(art.commit(man)?)
}
