//! Polynomial bounds on the closed-loop value function `V_u` and lower
//! bounds on the optimal value function `V`, plus the average gap metric.
//!
//! `d` is the degree of the bound polynomial. Each certificate uses the
//! smallest even module degree that can match its expression.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::polynomial::{Basis, DomainKind, MultiIndex, PolyVector, Polynomial};
use crate::semialgebraic::{AffineMap, SemialgebraicSet};
use crate::sos::{LinExpr, QuadraticModuleSpec, Sense, SosProgram};
use crate::synthesis::{
    solve_program, RationalController, Result, ScaledProblem, Solved, SynthesisConfig, SynthesisError,
};

pub const BOUND_SCHEMA_VERSION: u32 = 1;
/// Relative coefficient residual below which a polynomial counts as
/// divisible by the boundary generator.
const DIVISION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSide {
    UpperOnVu,
    LowerOnVu,
    LowerOnV,
}

impl BoundSide {
    pub fn name(self) -> &'static str {
        match self {
            BoundSide::UpperOnVu => "upper-on-Vu",
            BoundSide::LowerOnVu => "lower-on-Vu",
            BoundSide::LowerOnV => "lower-on-V",
        }
    }

    pub fn parse(s: &str) -> Option<BoundSide> {
        [BoundSide::UpperOnVu, BoundSide::LowerOnVu, BoundSide::LowerOnV]
            .into_iter()
            .find(|b| b.name() == s)
    }
}

/// `f_hat = rho f + sum f_ui sigma_i`, `l_hat = rho l_x + sum l_ui sigma_i`
/// in normalized coordinates.
#[derive(Clone, Debug)]
pub struct ClosedLoopData {
    pub rho: Polynomial,
    pub f_hat: PolyVector,
    pub l_hat: Polynomial,
    /// When `X = {g >= 0}` and `g` divides `rho` and every `sigma_i`: the
    /// generator and the data divided by it.
    pub factored: Option<Factored>,
}

#[derive(Clone, Debug)]
pub struct Factored {
    pub g: Polynomial,
    pub rho: Polynomial,
    pub f_hat: PolyVector,
    pub l_hat: Polynomial,
}

fn combine(sp: &ScaledProblem, rho: &Polynomial, sigma: &[Polynomial]) -> Result<(PolyVector, Polynomial)> {
    let n = sp.n();
    let mut comps = Vec::with_capacity(n);
    for k in 0..n {
        let mut c = rho.try_mul(&sp.drift.components()[k])?;
        for (s, f) in sigma.iter().zip(&sp.input_fields) {
            c = c.try_add(&s.try_mul(&f.components()[k])?)?;
        }
        comps.push(c);
    }
    let mut l = rho.try_mul(&sp.l_x)?;
    for (s, lu) in sigma.iter().zip(&sp.l_u) {
        l = l.try_add(&s.try_mul(lu)?)?;
    }
    Ok((PolyVector::new(comps)?, l))
}

/// Least-squares quotient `p / g`, if the remainder is negligible.
pub fn divide_exact(p: &Polynomial, g: &Polynomial) -> Option<Polynomial> {
    let p = p.convert_basis(Basis::Monomial);
    let g = g.convert_basis(Basis::Monomial);
    if p.is_zero() {
        return Some(Polynomial::zero(p.dim(), Basis::Monomial));
    }
    let dg = g.degree();
    if p.degree() < dg {
        return None;
    }
    let n = p.dim();
    let rows = MultiIndex::all_up_to(n, p.degree());
    let cols = MultiIndex::all_up_to(n, p.degree() - dg);
    let pos: BTreeMap<&MultiIndex, usize> = rows.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let mut a = DMatrix::zeros(rows.len(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (e, v) in g.terms() {
            a[(pos[&e.add(c)], j)] += v;
        }
    }
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| p.coeff(r)));
    let q = a.clone().svd(true, true).solve(&b, 1e-13).ok()?;
    let resid = (&a * &q - &b).amax();
    if resid > DIVISION_TOL * b.amax() {
        return None;
    }
    Some(Polynomial::from_terms(
        n,
        Basis::Monomial,
        cols.into_iter().zip(q.iter().copied()),
    ))
}

pub fn closed_loop_data(sp: &ScaledProblem, ctrl: &RationalController) -> Result<ClosedLoopData> {
    if ctrl.m() != sp.m() || ctrl.denominator().dim() != sp.n() {
        return Err(SynthesisError::Controller(format!(
            "controller has {} inputs in {} variables, problem has {} in {}",
            ctrl.m(),
            ctrl.denominator().dim(),
            sp.m(),
            sp.n()
        )));
    }
    if *ctrl.state_map() != sp.map {
        return Err(SynthesisError::Controller(
            "controller was built for a different state set".into(),
        ));
    }
    let rho = ctrl.denominator().convert_basis(Basis::Monomial);
    let sigma: Vec<Polynomial> = ctrl
        .numerators()
        .iter()
        .map(|p| p.convert_basis(Basis::Monomial))
        .collect();
    let factored = sp.set.boundary_generator().and_then(|g| {
        let rq = divide_exact(&rho, g)?;
        let sq = sigma.iter().map(|s| divide_exact(s, g)).collect::<Option<Vec<_>>>()?;
        let (f, l) = combine(sp, &rq, &sq).ok()?;
        Some(Factored {
            g: g.clone(),
            rho: rq,
            f_hat: f,
            l_hat: l,
        })
    });
    // with a factorization, use the exact products so both forms agree
    let (rho, f_hat, l_hat) = match &factored {
        Some(fa) => (
            fa.rho.try_mul(&fa.g)?,
            fa.f_hat.map(|c| c * &fa.g),
            fa.l_hat.try_mul(&fa.g)?,
        ),
        None => {
            let (f, l) = combine(sp, &rho, &sigma)?;
            (rho, f, l)
        }
    };
    Ok(ClosedLoopData {
        rho,
        f_hat,
        l_hat,
        factored,
    })
}

/// A certified bound polynomial, in normalized coordinates.
#[derive(Clone, Debug)]
pub struct ValueBound {
    pub side: BoundSide,
    pub degree: u32,
    pub polynomial: Polynomial,
    /// `int_X V dx` over the original state set.
    pub integral: f64,
    /// Coefficient residual of every certificate identity.
    pub certificate_residuals: Vec<(String, f64)>,
    pub status: crate::sdp::SolveStatus,
    pub warnings: Vec<String>,
    /// Per-iteration solver trace; empty for bounds read from disk.
    pub solver_log: String,
    pub state_map: AffineMap,
    inverse: AffineMap,
}

#[derive(Serialize, Deserialize)]
struct BoundFile {
    schema_version: u32,
    side: BoundSide,
    degree: u32,
    state_dim: usize,
    polynomial: String,
    state_map: AffineMap,
    integral_over_x: f64,
    certificate_residuals: BTreeMap<String, f64>,
    status: crate::sdp::SolveStatus,
}

impl ValueBound {
    /// A bound given directly as `polynomial(y)` with `x = state_map(y)`,
    /// e.g. a closed form. None when the map is singular.
    pub fn from_polynomial(
        side: BoundSide,
        polynomial: Polynomial,
        state_map: AffineMap,
        integral: f64,
    ) -> Option<Self> {
        let inverse = state_map.inverse()?;
        Some(ValueBound {
            side,
            degree: polynomial.degree(),
            polynomial,
            integral,
            certificate_residuals: vec![],
            status: crate::sdp::SolveStatus::Optimal,
            warnings: vec![],
            solver_log: String::new(),
            state_map,
            inverse,
        })
    }

    /// Value at an original-coordinate state.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.polynomial.evaluate(&self.inverse.apply(x))
    }

    pub fn max_residual(&self) -> f64 {
        self.certificate_residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        let f = BoundFile {
            schema_version: BOUND_SCHEMA_VERSION,
            side: self.side,
            degree: self.degree,
            state_dim: self.polynomial.dim(),
            polynomial: self.polynomial.to_text(),
            state_map: self.state_map.clone(),
            integral_over_x: self.integral,
            certificate_residuals: self.certificate_residuals.iter().cloned().collect(),
            status: self.status,
        };
        serde_json::to_string_pretty(&f).expect("bound serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: String| SynthesisError::Invalid(format!("bad bound file: {e}"));
        let f: BoundFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if f.schema_version != BOUND_SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", f.schema_version)));
        }
        let polynomial = Polynomial::parse(&f.polynomial, f.state_dim).map_err(|e| bad(e.to_string()))?;
        let inverse = f.state_map.inverse().ok_or_else(|| bad("singular state map".into()))?;
        Ok(ValueBound {
            side: f.side,
            degree: f.degree,
            polynomial,
            integral: f.integral_over_x,
            certificate_residuals: f.certificate_residuals.into_iter().collect(),
            status: f.status,
            warnings: vec![],
            solver_log: String::new(),
            state_map: f.state_map,
            inverse,
        })
    }

    /// `x1,..,xn,value` rows on a grid of `points` per axis over the
    /// bounding box of `set`, keeping points inside the set.
    pub fn surface_csv(&self, set: &SemialgebraicSet, points: usize) -> String {
        let n = self.polynomial.dim();
        let (lo, hi): (Vec<f64>, Vec<f64>) = match set.domain() {
            DomainKind::Box(b) => b.iter().cloned().unzip(),
            DomainKind::Ball { center, radius } => center.iter().map(|c| (c - radius, c + radius)).unzip(),
            DomainKind::General(_) => {
                let r = set.ball_bound().sqrt();
                (vec![-r; n], vec![r; n])
            }
        };
        let points = points.max(2);
        let mut out = String::new();
        let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        out.push_str(&header.join(","));
        out.push_str(",value\n");
        let mut idx = vec![0usize; n];
        'outer: loop {
            let x: Vec<f64> = (0..n)
                .map(|k| lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (points - 1) as f64)
                .collect();
            if set.contains(&x, 1e-12) {
                let cells: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&format!("{},{:?}\n", cells.join(","), self.eval(&x)));
            }
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < points {
                    continue 'outer;
                }
                idx[k] = 0;
            }
            break;
        }
        out
    }
}

fn even_ceil(k: u32) -> u32 {
    k + k % 2
}

/// `sum_k dV/dx_k * field_k`.
fn lie(v: &LinExpr, field: &PolyVector) -> Result<LinExpr> {
    let mut out = LinExpr::zero(v.dim());
    for (k, fk) in field.components().iter().enumerate() {
        out = out.add(&v.differentiate(k)?.mul_poly(fk)?);
    }
    Ok(out)
}

/// `Q_D(X)` with `D` the smallest even degree at least `max(d, deg expr)`.
fn module_for(sp: &ScaledProblem, expr: &LinExpr, d: u32) -> QuadraticModuleSpec {
    QuadraticModuleSpec::module(sp.n(), sp.set.generators(), even_ceil(expr.degree().max(d)))
}

/// `Q_d(X) + g_bar R_{d - deg g_bar}` for the boundary condition.
fn boundary_module(sp: &ScaledProblem, expr: &LinExpr, d: u32) -> QuadraticModuleSpec {
    let gbar = sp.set.bar_g();
    let deg = expr.degree().max(d).max(gbar.degree());
    QuadraticModuleSpec::module(sp.n(), sp.set.generators(), deg).with_free(&gbar)
}

fn finish(
    sp: &ScaledProblem,
    prog: &SosProgram,
    side: BoundSide,
    d: u32,
    config: &SynthesisConfig,
) -> Result<ValueBound> {
    let solved = solve_program(prog, &config.solver, side.name())?;
    decode_bound(sp, side, d, solved)
}

/// Reads the bound polynomial `V` out of a solved bound program.
pub fn decode_bound(sp: &ScaledProblem, side: BoundSide, d: u32, solved: Solved) -> Result<ValueBound> {
    let v = solved.values.decision("V").clone();
    let integral = sp.set.integrate(&v)? * sp.jacobian;
    Ok(ValueBound {
        side,
        degree: d,
        polynomial: v,
        integral,
        certificate_residuals: solved.values.equality_residuals.clone(),
        status: solved.solution.status,
        warnings: solved.warnings,
        solver_log: solved.solution.trace_text(),
        state_map: sp.map.clone(),
        inverse: sp.inverse.clone(),
    })
}

fn objective(sp: &ScaledProblem, v: &LinExpr, d: u32) -> Result<crate::sos::ScalarExpr> {
    Ok(v.integrate(&sp.set.moments(d)?)?)
}

/// Gronwall-type certificate `s (beta rho V - grad V . f_hat - l_hat) in Q(X)`
/// with `s = +1` for the upper bound and `-1` for the lower bound; uses the
/// factored data when available (the expression is then divided by `g`).
pub fn vu_program(sp: &ScaledProblem, data: &ClosedLoopData, d: u32, sign: f64, basis: Basis) -> Result<SosProgram> {
    let mut prog = SosProgram::new(sp.n(), basis);
    let v = prog.decision_poly("V", d);
    let (rho, f_hat, l_hat) = match &data.factored {
        Some(fa) => (&fa.rho, &fa.f_hat, &fa.l_hat),
        None => (&data.rho, &data.f_hat, &data.l_hat),
    };
    let expr = v
        .mul_poly(rho)?
        .scale(sp.beta)
        .sub(&lie(&v, f_hat)?)
        .add_poly(&(-l_hat))
        .scale(sign);
    prog.add_membership("gronwall", &expr, &module_for(sp, &expr, d))?;
    let exit = LinExpr::constant(&Polynomial::constant(sp.n(), Basis::Monomial, sp.exit_cost));
    let boundary = if sign > 0.0 { v.sub(&exit) } else { exit.sub(&v) };
    prog.add_membership("boundary", &boundary, &boundary_module(sp, &boundary, d))?;
    let sense = if sign > 0.0 { Sense::Minimize } else { Sense::Maximize };
    prog.set_objective(objective(sp, &v, d)?, sense);
    Ok(prog)
}

pub fn upper_bound_vu(
    sp: &ScaledProblem,
    data: &ClosedLoopData,
    d: u32,
    config: &SynthesisConfig,
) -> Result<ValueBound> {
    let prog = vu_program(sp, data, d, 1.0, config.basis)?;
    finish(sp, &prog, BoundSide::UpperOnVu, d, config)
}

pub fn lower_bound_vu(
    sp: &ScaledProblem,
    data: &ClosedLoopData,
    d: u32,
    config: &SynthesisConfig,
) -> Result<ValueBound> {
    let prog = vu_program(sp, data, d, -1.0, config.basis)?;
    finish(sp, &prog, BoundSide::LowerOnVu, d, config)
}

/// Program for a lower bound on the optimal value function.
pub fn lower_v_program(sp: &ScaledProblem, d: u32, basis: Basis) -> Result<SosProgram> {
    let mut prog = SosProgram::new(sp.n(), basis);
    let v = prog.decision_poly("V", d);
    let ps: Vec<LinExpr> = sp
        .input_fields
        .iter()
        .zip(&sp.l_u)
        .enumerate()
        .map(|(i, (f, l))| {
            let deg = (d + f.degree()).saturating_sub(1).max(d).max(l.degree());
            prog.decision_poly(&format!("p{}", i + 1), deg)
        })
        .collect();
    let mut hjb = lie(&v, &sp.drift)?.sub(&v.scale(sp.beta)).add_poly(&sp.l_x);
    for p in &ps {
        hjb = hjb.add(&p.scale(sp.u_bar()));
    }
    prog.add_membership("hjb", &hjb, &module_for(sp, &hjb, d))?;
    for (i, p) in ps.iter().enumerate() {
        let e = lie(&v, &sp.input_fields[i])?.add_poly(&sp.l_u[i]).sub(p);
        prog.add_membership(&format!("input{}", i + 1), &e, &module_for(sp, &e, d))?;
        let neg = p.scale(-1.0);
        prog.add_membership(&format!("-p{}", i + 1), &neg, &module_for(sp, &neg, d))?;
    }
    let exit = LinExpr::constant(&Polynomial::constant(sp.n(), Basis::Monomial, sp.exit_cost));
    let boundary = exit.sub(&v);
    prog.add_membership("boundary", &boundary, &boundary_module(sp, &boundary, d))?;
    prog.set_objective(objective(sp, &v, d)?, Sense::Maximize);
    Ok(prog)
}

pub fn lower_bound_v(sp: &ScaledProblem, d: u32, config: &SynthesisConfig) -> Result<ValueBound> {
    let prog = lower_v_program(sp, d, config.basis)?;
    finish(sp, &prog, BoundSide::LowerOnV, d, config)
}

/// `100 int (V_upper - V_lower) / int V_lower`.
pub fn gap_report(upper: &ValueBound, lower: &ValueBound) -> Result<f64> {
    if lower.integral == 0.0 {
        return Err(SynthesisError::Invalid(
            "lower bound integrates to zero; gap undefined".into(),
        ));
    }
    Ok(100.0 * (upper.integral - lower.integral) / lower.integral)
}
