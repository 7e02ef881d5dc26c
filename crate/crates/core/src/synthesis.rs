//! Density program for controller synthesis and the rational controller
//! `u_i = sigma_i / rho` extracted from its solution.
//!
//! Problems are solved in normalized coordinates: the state set is mapped
//! onto the unit ball or cube by `x = Q y + q` and every input interval onto
//! `[0, u_bar]`. Polynomials in [`DensitySolution`] and [`RationalController`]
//! live in `y`; evaluation helpers take original `x`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polynomial::{divergence_of_product, Basis, BatchEvaluator, MultiIndex, PolyError, PolyVector, Polynomial};
use crate::sdp::{residuals, solve, SdpSolution, SolveStatus, SolverConfig};
use crate::semialgebraic::{normalize_inputs, AffineMap, InputBox, SemialgebraicSet, SetError};
use crate::sos::{CompiledProgram, Decompiled, LinExpr, QuadraticModuleSpec, Sense, SosError, SosProgram};

/// Safety margin of [`auto_m`] and its value when the cost is zero.
pub const EXIT_MARGIN: f64 = 1e-2;
pub const CONTROLLER_SCHEMA_VERSION: u32 = 1;
/// Samples used by the cheap problem sanity checks.
const CHECK_SAMPLES: usize = 512;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("{stage}: solver stopped with status {status:?}")]
    Solver { stage: String, status: SolveStatus },
    #[error("{stage}: program reported infeasible ({status:?})")]
    Infeasible { stage: String, status: SolveStatus },
    #[error("bad controller file: {0}")]
    Controller(String),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

/// Optimal control problem in original coordinates:
/// `xdot = f(x) + sum_i f_ui(x) u_i`, `u in prod [lo_i, hi_i]`, `x in X`,
/// cost `int e^{-beta t} (l_x + sum l_ui u_i) dt + e^{-beta tau} M`.
#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub drift: PolyVector,
    pub input_fields: Vec<PolyVector>,
    pub state_set: SemialgebraicSet,
    pub input_bounds: Vec<(f64, f64)>,
    pub l_x: Polynomial,
    pub l_u: Vec<Polynomial>,
    pub beta: f64,
    pub exit_cost: f64,
    pub rho0_bar: Polynomial,
}

impl OcpProblem {
    pub fn n(&self) -> usize {
        self.state_set.dim()
    }

    pub fn m(&self) -> usize {
        self.input_bounds.len()
    }

    /// Structural checks plus sampled checks of `l >= 0`, `rho0_bar >= 0`
    /// and `M > sup l / beta`. Sampling only finds violations, it proves
    /// nothing; returns warnings for the soft cases.
    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.n();
        let m = self.m();
        let bad = |s: String| Err(SynthesisError::Invalid(s));
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("discount beta = {} must be positive", self.beta));
        }
        if !self.exit_cost.is_finite() {
            return bad("exit cost M must be finite".into());
        }
        if self.drift.len() != n || self.drift.dim() != n {
            return bad(format!("drift must have {n} components in {n} variables"));
        }
        if self.input_fields.len() != m || self.l_u.len() != m {
            return bad(format!("expected {m} input fields and {m} input costs"));
        }
        for (i, f) in self.input_fields.iter().enumerate() {
            if f.len() != n || f.dim() != n {
                return bad(format!(
                    "input field {} must have {n} components in {n} variables",
                    i + 1
                ));
            }
        }
        for (name, p) in [("l_x", &self.l_x), ("rho0", &self.rho0_bar)]
            .into_iter()
            .chain(self.l_u.iter().map(|p| ("l_u", p)))
        {
            if p.dim() != n {
                return bad(format!("{name} has {} variables, expected {n}", p.dim()));
            }
        }
        normalize_inputs(&self.input_bounds)?;

        let mut warnings = Vec::new();
        let pts = match self.state_set.sample_uniform(CHECK_SAMPLES, 0x5eed) {
            Ok(p) => p,
            Err(SetError::SamplingUnsupported) => {
                warnings.push("general state set: sampled sanity checks skipped".into());
                return Ok(warnings);
            }
            Err(e) => return Err(e.into()),
        };
        let mut l_min = f64::INFINITY;
        let mut l_max = f64::NEG_INFINITY;
        for x in &pts {
            if self.rho0_bar.evaluate(x) < -1e-9 {
                return bad(format!("initial weighting is negative at {x:?}"));
            }
            let lx = self.l_x.evaluate(x);
            let (mut lo, mut hi) = (lx, lx);
            for (lu, &(a, b)) in self.l_u.iter().zip(&self.input_bounds) {
                let c = lu.evaluate(x);
                lo += (c * a).min(c * b);
                hi += (c * a).max(c * b);
            }
            l_min = l_min.min(lo);
            l_max = l_max.max(hi);
        }
        if l_min < -1e-9 {
            warnings.push(format!("stage cost takes negative value {l_min:.3e} on X x U"));
        }
        if self.exit_cost * self.beta < l_max {
            return bad(format!(
                "exit cost M = {} is below sup l / beta >= {}",
                self.exit_cost,
                l_max / self.beta
            ));
        }
        Ok(warnings)
    }

    /// The problem in normalized coordinates.
    pub fn scaled(&self) -> Result<ScaledProblem> {
        let map = self.state_set.normalizing_map();
        let inverse = map
            .inverse()
            .ok_or_else(|| SynthesisError::Invalid("state set normalization is singular".into()))?;
        let set = self.state_set.normalized()?;
        let inputs = normalize_inputs(&self.input_bounds)?;
        let mono = |p: &Polynomial| p.convert_basis(Basis::Monomial);
        let mono_v = |v: &PolyVector| v.map(|p| p.convert_basis(Basis::Monomial));
        let fields: Vec<PolyVector> = self.input_fields.iter().map(mono_v).collect();
        let l_u: Vec<Polynomial> = self.l_u.iter().map(mono).collect();
        let rw = inputs.rewrite(&mono_v(&self.drift), &fields, &mono(&self.l_x), &l_u)?;
        Ok(ScaledProblem {
            jacobian: map.det().abs(),
            drift: map.pull_back_field(&rw.drift)?,
            input_fields: rw
                .input_fields
                .iter()
                .map(|f| map.pull_back_field(f))
                .collect::<std::result::Result<_, _>>()?,
            l_x: map.pull_back(&rw.l_x)?,
            l_u: rw
                .l_u
                .iter()
                .map(|p| map.pull_back(p))
                .collect::<std::result::Result<_, _>>()?,
            rho0_bar: map.pull_back(&mono(&self.rho0_bar))?,
            beta: self.beta,
            exit_cost: self.exit_cost,
            set,
            inputs,
            map,
            inverse,
        })
    }
}

/// An [`OcpProblem`] after the coordinate changes; all polynomials are in
/// `y` and the monomial basis, inputs range over `[0, u_bar]`.
#[derive(Clone, Debug)]
pub struct ScaledProblem {
    /// `x = Q y + q`.
    pub map: AffineMap,
    pub inverse: AffineMap,
    /// `|det Q|`, the factor between integrals over `X` and over `Y`.
    pub jacobian: f64,
    pub inputs: InputBox,
    pub set: SemialgebraicSet,
    pub drift: PolyVector,
    pub input_fields: Vec<PolyVector>,
    pub l_x: Polynomial,
    pub l_u: Vec<Polynomial>,
    pub rho0_bar: Polynomial,
    pub beta: f64,
    pub exit_cost: f64,
}

impl ScaledProblem {
    pub fn n(&self) -> usize {
        self.set.dim()
    }

    pub fn m(&self) -> usize {
        self.inputs.m()
    }

    pub fn u_bar(&self) -> f64 {
        self.inputs.u_bar
    }

    /// Largest coefficient of the problem data, the scale of residual checks.
    pub fn data_scale(&self) -> f64 {
        let mut s = self.beta.max(self.exit_cost.abs());
        for p in self
            .drift
            .components()
            .iter()
            .chain(self.input_fields.iter().flat_map(|f| f.components()))
            .chain(self.set.generators())
            .chain(&self.l_u)
            .chain([&self.l_x, &self.rho0_bar])
        {
            s = s.max(p.max_abs_coeff());
        }
        s
    }

    /// Highest degree among the stage costs.
    pub fn cost_degree(&self) -> u32 {
        self.l_u.iter().map(|p| p.degree()).fold(self.l_x.degree(), u32::max)
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        self.inverse.apply(x)
    }
}

/// Options shared by every SOS program this crate builds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Basis for Gram matrices and decision polynomials.
    pub basis: Basis,
    pub solver: SolverConfig,
    /// Use the reduced form of the density program where it is known to be
    /// equivalent (see [`build_density_program`]).
    pub facial_reduction: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            basis: Basis::Chebyshev,
            solver: SolverConfig::default(),
            facial_reduction: true,
        }
    }
}

/// A compiled, solved and decompiled program.
#[derive(Clone, Debug)]
pub struct Solved {
    pub compiled: CompiledProgram,
    pub solution: SdpSolution,
    pub values: Decompiled,
    pub warnings: Vec<String>,
}

/// Compiles and solves `program`; anything but (near) optimality is an
/// error tagged with `stage`.
pub fn solve_program(program: &SosProgram, solver: &SolverConfig, stage: &str) -> Result<Solved> {
    let compiled = program.compile()?;
    log::info!(
        "{stage}: {} rows, {} free, blocks {:?}",
        compiled.sdp.num_constraints(),
        compiled.sdp.num_free,
        compiled.sdp.block_sizes
    );
    let solution = solve(&compiled.sdp, solver);
    let mut warnings = program.warnings().to_vec();
    match solution.status {
        SolveStatus::Optimal => {}
        SolveStatus::NearOptimal => {
            let msg = format!(
                "{stage}: accepted near-optimal solution (gap {:.1e}, pres {:.1e}, dres {:.1e})",
                solution.gap, solution.primal_residual, solution.dual_residual
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        s @ (SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible) => {
            return Err(SynthesisError::Infeasible {
                stage: stage.into(),
                status: s,
            })
        }
        s => {
            return Err(SynthesisError::Solver {
                stage: stage.into(),
                status: s,
            })
        }
    }
    let values = program.decompile(&solution)?;
    Ok(Solved {
        compiled,
        solution,
        values,
        warnings,
    })
}

/// Wraps a solution found elsewhere (e.g. an external solver fed the SDPA
/// export) as if `program` had been solved here. `y` may be empty, in
/// which case the dual residual is not meaningful.
pub fn import_solution(
    program: &SosProgram,
    x_blocks: Vec<DMatrix<f64>>,
    x_free: Vec<f64>,
    y: Vec<f64>,
    status: SolveStatus,
) -> Result<Solved> {
    let compiled = program.compile()?;
    let sdp = &compiled.sdp;
    if x_blocks.len() != sdp.block_sizes.len()
        || x_blocks
            .iter()
            .zip(&sdp.block_sizes)
            .any(|(x, &s)| x.nrows() != s || x.ncols() != s)
        || x_free.len() != sdp.num_free
        || !(y.is_empty() || y.len() == sdp.num_constraints())
    {
        return Err(SynthesisError::Invalid(
            "imported solution does not match the program shape".into(),
        ));
    }
    let mut solution = SdpSolution {
        status,
        x_blocks,
        x_free,
        y,
        z_blocks: Vec::new(),
        primal_objective: 0.0,
        dual_objective: 0.0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        gap: 0.0,
        iterations: 0,
        trace: Vec::new(),
        certificate: None,
    };
    let r = residuals(sdp, &solution);
    let bnorm = sdp.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    solution.primal_objective = r.primal_objective;
    solution.dual_objective = r.dual_objective;
    solution.primal_residual = r.primal_feas / (1.0 + bnorm);
    solution.dual_residual = r.dual_feas;
    solution.gap = r.gap / (1.0 + r.primal_objective.abs() + r.dual_objective.abs());
    let values = program.decompile(&solution)?;
    Ok(Solved {
        warnings: program.warnings().to_vec(),
        compiled,
        solution,
        values,
    })
}

/// Pads `p` with trailing variables that it does not use.
fn lift(p: &Polynomial, total: usize) -> Polynomial {
    let p = p.convert_basis(Basis::Monomial);
    let pad = |a: &MultiIndex| {
        let mut e = a.exponents().to_vec();
        e.resize(total, 0);
        MultiIndex::new(e)
    };
    Polynomial::from_terms(total, Basis::Monomial, p.terms().map(|(a, c)| (pad(a), c)))
}

/// `(1 + margin) * ub / beta` with `ub` an SOS upper bound of `sup l` over
/// `X x U`, floored at the margin.
pub fn auto_m(problem: &OcpProblem, config: &SynthesisConfig) -> Result<f64> {
    let sp = problem.scaled()?;
    let (n, m) = (sp.n(), sp.m());
    let total = n + m;
    let mut l = lift(&sp.l_x, total);
    let mut gens: Vec<Polynomial> = sp.set.generators().iter().map(|g| lift(g, total)).collect();
    for i in 0..m {
        let u = Polynomial::var(total, Basis::Monomial, n + i);
        l = &l + &(&lift(&sp.l_u[i], total) * &u);
        let room = &Polynomial::constant(total, Basis::Monomial, sp.u_bar()) - &u;
        gens.push(&u * &room);
    }
    let base = l
        .degree()
        .max(2)
        .max(gens.iter().map(|g| g.degree()).max().unwrap_or(0));
    let base = base + base % 2;
    let mut last = None;
    for d in [base, base + 2, base + 4] {
        let mut prog = SosProgram::new(total, config.basis);
        let gamma = prog.decision_poly("gamma", 0);
        let spec = QuadraticModuleSpec::module(total, &gens, d);
        prog.add_membership("gamma-l", &gamma.add_poly(&(-&l)), &spec)?;
        let unit: BTreeMap<MultiIndex, f64> = [(MultiIndex::zeros(total), 1.0)].into_iter().collect();
        prog.set_objective(gamma.integrate(&unit)?, Sense::Minimize);
        match solve_program(&prog, &config.solver, "auto_M") {
            Ok(s) => {
                let ub = s.values.objective;
                return Ok(((1.0 + EXIT_MARGIN) * ub / sp.beta).max(EXIT_MARGIN));
            }
            Err(e) => {
                log::warn!("auto_M at degree {d} failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Handles of the decision polynomials of the density program.
#[derive(Clone, Debug)]
pub struct DensityProgram {
    pub program: SosProgram,
    pub degree: u32,
}

pub const RHO: &str = "rho";
pub const RHO0: &str = "rho0";
pub const RHOT: &str = "rhoT";

pub fn sigma_name(i: usize) -> String {
    format!("sigma{}", i + 1)
}

/// The degree-`d` density program in normalized coordinates.
///
/// As written, the memberships force `rho`, `sigma_i` and the leading SOS
/// multipliers of `-rho`, `u_bar rho - sigma_i` and `sigma_i` to vanish on
/// the boundary, so the SDP has no strictly feasible point and interior
/// point accuracy stalls near `sqrt(mu)`. When `X` is cut out by a single
/// generator `g` whose zero set is its whole boundary (ball, interval), an
/// SOS vanishing there is `g^2` times an SOS, and with `reduced` the program
/// uses the equivalent memberships
/// `-rho in g R_{d-2}`, `u_bar rho - sigma_i, sigma_i in g S_{d-2} + g^2 S_{d-4}`.
pub fn build_density_program(sp: &ScaledProblem, d: u32, basis: Basis, reduced: bool) -> Result<DensityProgram> {
    let n = sp.n();
    let mut prog = SosProgram::new(n, basis);
    let rho = prog.decision_poly(RHO, d);
    let rho0 = prog.decision_poly(RHO0, d);
    let rho_t = prog.decision_poly(RHOT, d);
    let sigma: Vec<LinExpr> = (0..sp.m()).map(|i| prog.decision_poly(&sigma_name(i), d)).collect();

    let mut liouville = rho_t.sub(&rho0).add(&rho.scale(sp.beta));
    liouville = liouville.add(&rho.map_linear(|p| divergence_of_product(p, &sp.drift))?);
    for (s, f) in sigma.iter().zip(&sp.input_fields) {
        liouville = liouville.add(&s.map_linear(|p| divergence_of_product(p, f))?);
    }
    prog.add_equality("liouville", liouville)?;

    let gens = sp.set.generators();
    let gbar = sp.set.bar_g();
    let q = || QuadraticModuleSpec::module(n, gens, d);

    let (boundary, box_spec) = if let Some(g) = sp.set.boundary_generator().filter(|_| reduced) {
        let empty = QuadraticModuleSpec { d, terms: vec![] };
        (empty.clone().with_free(g), empty.with_sos(g).with_sos(&(g * g)))
    } else {
        let mut boundary = q();
        for g in gens {
            boundary = boundary.with_free(g);
        }
        (boundary.with_free(&gbar), q().with_scaled_module(&gbar, gens))
    };
    prog.add_membership("-rho", &rho.scale(-1.0), &boundary)?;
    prog.add_membership("rho0-rho0bar", &rho0.add_poly(&(-&sp.rho0_bar)), &q())?;
    for (i, s) in sigma.iter().enumerate() {
        prog.add_membership(
            &format!("ubar*rho-{}", sigma_name(i)),
            &rho.scale(sp.u_bar()).sub(s),
            &box_spec,
        )?;
    }
    prog.add_membership("rhoT", &rho_t, &q())?;
    for (i, s) in sigma.iter().enumerate() {
        prog.add_membership(&sigma_name(i), s, &box_spec)?;
    }

    let deg = d + sp.cost_degree();
    let moments = sp.set.moments(deg)?;
    let mut obj = rho.mul_poly(&sp.l_x)?.integrate(&moments)?;
    for (s, l) in sigma.iter().zip(&sp.l_u) {
        obj = obj.add(&s.mul_poly(l)?.integrate(&moments)?);
    }
    obj = obj.add(&rho_t.integrate(&moments)?.scale(sp.exit_cost));
    prog.set_objective(obj, Sense::Minimize);
    Ok(DensityProgram {
        program: prog,
        degree: d,
    })
}

/// Solution of the density program. Polynomials are in normalized
/// coordinates and the monomial basis.
#[derive(Clone, Debug)]
pub struct DensitySolution {
    pub degree: u32,
    pub rho: Polynomial,
    pub rho0: Polynomial,
    pub rho_t: Polynomial,
    pub sigma: Vec<Polynomial>,
    /// Optimal value over the original state set.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Coefficient infinity norm of the Liouville identity residual.
    pub liouville_residual: f64,
    pub data_scale: f64,
    pub warnings: Vec<String>,
    /// Per-iteration solver trace as CSV text.
    pub solver_log: String,
    pub problem: ScaledProblem,
    pub compiled: CompiledProgram,
}

impl DensitySolution {
    pub fn liouville_ok(&self) -> bool {
        self.liouville_residual <= 1e-6 * (1.0 + self.data_scale)
    }
}

/// `rho_T - rho_0 + beta rho + div(rho f) + sum div(sigma_i f_ui)`.
pub fn liouville_expression(
    sp: &ScaledProblem,
    rho: &Polynomial,
    rho0: &Polynomial,
    rho_t: &Polynomial,
    sigma: &[Polynomial],
) -> Result<Polynomial> {
    let mut r = rho_t.try_sub(rho0)?.try_add(&rho.scale(sp.beta))?;
    r = r.try_add(&divergence_of_product(rho, &sp.drift)?)?;
    for (s, f) in sigma.iter().zip(&sp.input_fields) {
        r = r.try_add(&divergence_of_product(s, f)?)?;
    }
    Ok(r)
}

/// Builds, solves and decodes the density program.
pub fn synthesize(problem: &OcpProblem, d: u32, config: &SynthesisConfig) -> Result<DensitySolution> {
    let mut warnings = problem.validate()?;
    let sp = problem.scaled()?;
    let max_data = sp.drift.degree() + 1;
    if d < max_data {
        warnings.push(format!(
            "degree {d} is below deg f + 1 = {max_data}; the program stays feasible but is coarse"
        ));
    }
    let dp = build_density_program(&sp, d, config.basis, config.facial_reduction)?;
    let solved = solve_program(&dp.program, &config.solver, "density")?;
    decode_density(sp, d, config, solved, warnings)
}

/// Turns a solved density program into a [`DensitySolution`]; `config`
/// must be the one the program was built with.
pub fn decode_density(
    sp: ScaledProblem,
    d: u32,
    config: &SynthesisConfig,
    solved: Solved,
    mut warnings: Vec<String>,
) -> Result<DensitySolution> {
    warnings.extend(solved.warnings);
    let v = &solved.values;
    let mut rho = v.decision(RHO).clone();
    let rho0 = v.decision(RHO0).clone();
    let rho_t = v.decision(RHOT).clone();
    let mut sigma: Vec<Polynomial> = (0..sp.m()).map(|i| v.decision(&sigma_name(i)).clone()).collect();
    if let Some(g) = sp.set.boundary_generator().filter(|_| config.facial_reduction) {
        // Rebuild from the multipliers so that g divides rho and sigma_i
        // exactly rather than up to solver accuracy.
        let g = g.convert_basis(Basis::Monomial);
        rho = g.try_mul(&v.multipliers[0][0])?.scale(-1.0);
        for (i, s) in sigma.iter_mut().enumerate() {
            let mut acc = Polynomial::zero(sp.n(), Basis::Monomial);
            let mut power = g.clone();
            for m in &v.multipliers[3 + sp.m() + i] {
                acc = acc.try_add(&power.try_mul(m)?)?;
                power = power.try_mul(&g)?;
            }
            *s = acc;
        }
    }
    let liouville_residual = liouville_expression(&sp, &rho, &rho0, &rho_t, &sigma)?.max_abs_coeff();
    let sol = DensitySolution {
        degree: d,
        objective: v.objective * sp.jacobian,
        status: solved.solution.status,
        iterations: solved.solution.iterations,
        primal_residual: solved.solution.primal_residual,
        dual_residual: solved.solution.dual_residual,
        gap: solved.solution.gap,
        liouville_residual,
        data_scale: sp.data_scale(),
        warnings,
        solver_log: solved.solution.trace_text(),
        rho,
        rho0,
        rho_t,
        sigma,
        problem: sp,
        compiled: solved.compiled,
    };
    if !sol.liouville_ok() {
        log::warn!(
            "density: Liouville residual {:.3e} above tolerance",
            sol.liouville_residual
        );
    }
    Ok(sol)
}

/// `u_i(x) = clamp(sigma_i(y) / max(rho(y), eps), 0, u_bar)` with
/// `y = Q^{-1}(x - q)`; inputs are then mapped back to their original box.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalController {
    numerators: Vec<Polynomial>,
    denominator: Polynomial,
    u_bar: f64,
    epsilon: f64,
    state_map: AffineMap,
    inputs: InputBox,
    inverse: AffineMap,
    /// Numerators then denominator; built once in [`RationalController::new`].
    batch: BatchEvaluator,
}

/// Default safeguard `1e-8 (1 + |rho|_inf)`, with the sup norm over the
/// normalized set bounded by the coefficient 1-norm.
pub fn default_epsilon(rho: &Polynomial) -> f64 {
    let bound: f64 = rho.convert_basis(Basis::Monomial).terms().map(|(_, c)| c.abs()).sum();
    1e-8 * (1.0 + bound)
}

pub fn extract_controller(sol: &DensitySolution) -> RationalController {
    RationalController::new(
        sol.sigma.clone(),
        sol.rho.clone(),
        default_epsilon(&sol.rho),
        sol.problem.map.clone(),
        sol.problem.inputs.clone(),
    )
    .expect("state map of a solved problem is invertible")
}

#[derive(Serialize, Deserialize)]
struct ControllerFile {
    schema_version: u32,
    state_dim: usize,
    numerators: Vec<String>,
    denominator: String,
    u_bar: f64,
    epsilon: f64,
    input_map: InputBox,
    state_map: AffineMap,
}

impl RationalController {
    pub fn new(
        numerators: Vec<Polynomial>,
        denominator: Polynomial,
        epsilon: f64,
        state_map: AffineMap,
        inputs: InputBox,
    ) -> Result<Self> {
        let inverse = state_map
            .inverse()
            .ok_or_else(|| SynthesisError::Controller("singular state map".into()))?;
        if numerators.len() != inputs.m() {
            return Err(SynthesisError::Controller(format!(
                "{} numerators for {} inputs",
                numerators.len(),
                inputs.m()
            )));
        }
        if !(epsilon > 0.0) {
            return Err(SynthesisError::Controller("epsilon must be positive".into()));
        }
        let mut all: Vec<&Polynomial> = numerators.iter().collect();
        all.push(&denominator);
        let batch = BatchEvaluator::new(&all);
        Ok(RationalController {
            batch,
            u_bar: inputs.u_bar,
            numerators,
            denominator,
            epsilon,
            state_map,
            inputs,
            inverse,
        })
    }

    pub fn m(&self) -> usize {
        self.numerators.len()
    }

    /// `sigma_i` in normalized coordinates.
    pub fn numerators(&self) -> &[Polynomial] {
        &self.numerators
    }

    /// `rho` in normalized coordinates.
    pub fn denominator(&self) -> &Polynomial {
        &self.denominator
    }

    pub fn u_bar(&self) -> f64 {
        self.u_bar
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn state_map(&self) -> &AffineMap {
        &self.state_map
    }

    pub fn inputs(&self) -> &InputBox {
        &self.inputs
    }

    /// `(sigma(y), rho(y))` before division and clamping.
    pub fn raw(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let y = self.inverse.apply(x);
        let mut v = self.batch.evaluate(&y);
        let den = v.pop().expect("denominator is always in the batch");
        (v, den)
    }

    /// Control in `[0, u_bar]^m`.
    pub fn eval_normalized(&self, x: &[f64]) -> Vec<f64> {
        let (num, den) = self.raw(x);
        let den = if den.is_nan() {
            self.epsilon
        } else {
            den.max(self.epsilon)
        };
        num.iter()
            .map(|s| {
                let u = s / den;
                if u.is_nan() {
                    0.0
                } else {
                    u.clamp(0.0, self.u_bar)
                }
            })
            .collect()
    }

    /// Control in the original input box.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.inputs.to_original(&self.eval_normalized(x))
    }

    pub fn to_json(&self) -> String {
        let file = ControllerFile {
            schema_version: CONTROLLER_SCHEMA_VERSION,
            state_dim: self.denominator.dim(),
            numerators: self.numerators.iter().map(|p| p.to_text()).collect(),
            denominator: self.denominator.to_text(),
            u_bar: self.u_bar,
            epsilon: self.epsilon,
            input_map: self.inputs.clone(),
            state_map: self.state_map.clone(),
        };
        serde_json::to_string_pretty(&file).expect("controller serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: String| SynthesisError::Controller(e);
        let file: ControllerFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.schema_version != CONTROLLER_SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", file.schema_version)));
        }
        let parse = |t: &str| Polynomial::parse(t, file.state_dim).map_err(|e| bad(e.to_string()));
        let numerators = file.numerators.iter().map(|t| parse(t)).collect::<Result<Vec<_>>>()?;
        let denominator = parse(&file.denominator)?;
        if file.state_map.dim() != file.state_dim {
            return Err(bad("state map dimension differs from state_dim".into()));
        }
        let c = Self::new(numerators, denominator, file.epsilon, file.state_map, file.input_map)?;
        if c.u_bar != file.u_bar {
            return Err(bad("u_bar disagrees with the input map".into()));
        }
        Ok(c)
    }
}

/// Closed-loop vector field `f(x) + sum f_ui(x) u_i(x)` in original
/// coordinates, inputs in their original box.
pub fn closed_loop_field<'a>(
    problem: &'a OcpProblem,
    ctrl: &'a RationalController,
) -> impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + 'a {
    let n = problem.n();
    // drift components, then each input field, in one batch
    let comps: Vec<&Polynomial> = problem
        .drift
        .components()
        .iter()
        .chain(problem.input_fields.iter().flat_map(|f| f.components()))
        .collect();
    let batch = BatchEvaluator::new(&comps);
    move |x: &[f64]| {
        let u = ctrl.eval(x);
        let v = batch.evaluate(x);
        let mut dx = v[..n].to_vec();
        for (i, ui) in u.iter().enumerate() {
            for (d, c) in dx.iter_mut().zip(&v[n * (i + 1)..n * (i + 2)]) {
                *d += c * ui;
            }
        }
        (dx, u)
    }
}

/// `l_x(x) + sum l_ui(x) u_i` in original coordinates.
pub fn stage_cost(problem: &OcpProblem, x: &[f64], u: &[f64]) -> f64 {
    problem.l_x.evaluate(x) + problem.l_u.iter().zip(u).map(|(l, ui)| l.evaluate(x) * ui).sum::<f64>()
}
