//! Polynomial programs over truncated quadratic modules and their
//! compilation to block-diagonal SDPs.
//!
//! Decision polynomials and multipliers are affine expressions ([`LinExpr`])
//! in scalar unknowns ([`VarId`]): free coefficients or entries of Gram
//! matrices. Every expression is kept in the monomial basis, which is where
//! coefficient matching happens; Gram bases and decision polynomials may be
//! parametrized in either basis.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polynomial::{Basis, MultiIndex, PolyError, Polynomial};
use crate::sdp::{LinearForm, MatEntry, SdpProblem, SdpSolution, SolveStatus};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("Gram degree {0} must be even")]
    OddDegree(i64),
    #[error("{label}: multiplier degree {degree} is negative (generator degree {generator_degree}, d = {d})")]
    NegativeDegree {
        label: String,
        degree: i64,
        generator_degree: u32,
        d: u32,
    },
    #[error("{label}: SOS term of degree {multiplier} times generator of degree {generator} exceeds d = {d}")]
    DegreeBookkeeping {
        label: String,
        multiplier: i64,
        generator: u32,
        d: u32,
    },
    #[error("{label}: expression degree {expr} exceeds the module's reach {reach}")]
    DegreeTooHigh { label: String, expr: u32, reach: i64 },
    #[error("program has no constraints")]
    Empty,
    #[error("variable {0} appears in no constraint and not in the objective")]
    UnusedVariable(String),
    #[error("solution status {0:?} is not solved")]
    NotSolved(SolveStatus),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// A scalar unknown of the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarId {
    Free(usize),
    /// Entry `(p, q)`, `p <= q`, of Gram block `block`.
    Gram {
        block: usize,
        p: usize,
        q: usize,
    },
}

/// Values for every unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub free: Vec<f64>,
    pub grams: Vec<DMatrix<f64>>,
}

impl Assignment {
    pub fn value(&self, v: VarId) -> f64 {
        match v {
            VarId::Free(k) => self.free[k],
            VarId::Gram { block, p, q } => self.grams[block][(p, q)],
        }
    }
}

fn mono(p: &Polynomial) -> Polynomial {
    if p.basis() == Basis::Monomial {
        p.clone()
    } else {
        p.convert_basis(Basis::Monomial)
    }
}

fn add_poly(a: &Polynomial, b: &Polynomial) -> Polynomial {
    a.try_add(b).expect("LinExpr polynomials share dim and basis")
}

/// `constant + sum_v v * P_v` with polynomials in the monomial basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinExpr {
    dim: usize,
    constant: Polynomial,
    terms: BTreeMap<VarId, Polynomial>,
}

impl LinExpr {
    pub fn zero(dim: usize) -> Self {
        LinExpr {
            dim,
            constant: Polynomial::zero(dim, Basis::Monomial),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(p: &Polynomial) -> Self {
        LinExpr {
            dim: p.dim(),
            constant: mono(p),
            terms: BTreeMap::new(),
        }
    }

    pub fn var(v: VarId, p: &Polynomial) -> Self {
        let mut e = LinExpr::zero(p.dim());
        let p = mono(p);
        if !p.is_zero() {
            e.terms.insert(v, p);
        }
        e
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (&VarId, &Polynomial)> {
        self.terms.iter()
    }

    pub fn num_vars(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .values()
            .map(Polynomial::degree)
            .fold(self.constant.degree(), u32::max)
    }

    fn accumulate(&mut self, other: &LinExpr, sign: f64) {
        assert_eq!(self.dim, other.dim, "LinExpr dimension mismatch");
        self.constant = add_poly(&self.constant, &other.constant.scale(sign));
        for (v, p) in &other.terms {
            let sum = match self.terms.get(v) {
                Some(q) => add_poly(q, &p.scale(sign)),
                None => p.scale(sign),
            };
            if sum.is_zero() {
                self.terms.remove(v);
            } else {
                self.terms.insert(*v, sum);
            }
        }
    }

    pub fn add(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.accumulate(other, 1.0);
        out
    }

    pub fn sub(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.accumulate(other, -1.0);
        out
    }

    pub fn add_poly(&self, p: &Polynomial) -> LinExpr {
        self.add(&LinExpr::constant(p))
    }

    pub fn scale(&self, s: f64) -> LinExpr {
        self.map_linear(|p| Ok(p.scale(s))).expect("scaling cannot fail")
    }

    /// Applies a linear operator on polynomials to every part.
    pub fn map_linear<F>(&self, mut f: F) -> Result<LinExpr, PolyError>
    where
        F: FnMut(&Polynomial) -> Result<Polynomial, PolyError>,
    {
        let constant = mono(&f(&self.constant)?);
        let mut terms = BTreeMap::new();
        for (v, p) in &self.terms {
            let q = mono(&f(p)?);
            if !q.is_zero() {
                terms.insert(*v, q);
            }
        }
        Ok(LinExpr {
            dim: self.dim,
            constant,
            terms,
        })
    }

    pub fn mul_poly(&self, q: &Polynomial) -> Result<LinExpr, PolyError> {
        let q = mono(q);
        self.map_linear(|p| p.try_mul(&q))
    }

    pub fn differentiate(&self, var: usize) -> Result<LinExpr, PolyError> {
        self.map_linear(|p| p.differentiate(var))
    }

    pub fn evaluate(&self, a: &Assignment) -> Polynomial {
        let mut acc: BTreeMap<MultiIndex, f64> = self.constant.terms().map(|(k, v)| (k.clone(), v)).collect();
        for (v, p) in &self.terms {
            let x = a.value(*v);
            if x == 0.0 {
                continue;
            }
            for (k, c) in p.terms() {
                *acc.entry(k.clone()).or_insert(0.0) += x * c;
            }
        }
        Polynomial::from_terms(self.dim, Basis::Monomial, acc)
    }

    /// `integral of self` against a moment table.
    pub fn integrate(&self, moments: &BTreeMap<MultiIndex, f64>) -> Result<ScalarExpr, PolyError> {
        let mut out = ScalarExpr::constant(crate::polynomial::integrate(&self.constant, moments)?);
        for (v, p) in &self.terms {
            let c = crate::polynomial::integrate(p, moments)?;
            if c != 0.0 {
                out.coeffs.insert(*v, c);
            }
        }
        Ok(out)
    }
}

/// `constant + sum_v c_v v`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarExpr {
    pub constant: f64,
    pub coeffs: BTreeMap<VarId, f64>,
}

impl ScalarExpr {
    pub fn constant(c: f64) -> Self {
        ScalarExpr {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn add(&self, other: &ScalarExpr) -> ScalarExpr {
        let mut out = self.clone();
        out.constant += other.constant;
        for (v, c) in &other.coeffs {
            *out.coeffs.entry(*v).or_insert(0.0) += c;
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    pub fn scale(&self, s: f64) -> ScalarExpr {
        ScalarExpr {
            constant: self.constant * s,
            coeffs: self
                .coeffs
                .iter()
                .map(|(v, c)| (*v, c * s))
                .filter(|(_, c)| *c != 0.0)
                .collect(),
        }
    }

    pub fn evaluate(&self, a: &Assignment) -> f64 {
        self.coeffs.iter().fold(self.constant, |s, (v, c)| s + c * a.value(*v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierKind {
    Sos,
    Free,
}

/// One summand `generator * multiplier` of a module.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleTerm {
    pub generator: Polynomial,
    pub kind: MultiplierKind,
    /// Multiplier degree; negative means the term is empty.
    pub degree: i64,
}

/// A sum of truncated modules, e.g. `Q_d(X) + g R[x]_{d - deg g}`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticModuleSpec {
    pub d: u32,
    pub terms: Vec<ModuleTerm>,
}

fn even_floor(k: i64) -> i64 {
    2 * k.div_euclid(2)
}

impl QuadraticModuleSpec {
    /// `Q_d(X)` for the given generators: `s0 + sum g_i s_i`.
    pub fn module(dim: usize, generators: &[Polynomial], d: u32) -> Self {
        let one = Polynomial::constant(dim, Basis::Monomial, 1.0);
        let mut spec = QuadraticModuleSpec { d, terms: vec![] };
        spec = spec.with_sos(&one);
        for g in generators {
            spec = spec.with_sos(g);
        }
        spec
    }

    /// Adds `h * s` with `s` SOS of degree `2 floor((d - deg h) / 2)`.
    pub fn with_sos(mut self, h: &Polynomial) -> Self {
        let h = mono(h);
        self.terms.push(ModuleTerm {
            degree: even_floor(self.d as i64 - h.degree() as i64),
            generator: h,
            kind: MultiplierKind::Sos,
        });
        self
    }

    /// Adds `h * q` with `q` free of degree `d - deg h`.
    pub fn with_free(mut self, h: &Polynomial) -> Self {
        let h = mono(h);
        self.terms.push(ModuleTerm {
            degree: self.d as i64 - h.degree() as i64,
            generator: h,
            kind: MultiplierKind::Free,
        });
        self
    }

    /// Adds `h Q_{d - deg h}(X)`: the terms `h s_0 + sum h g_i s_i`.
    pub fn with_scaled_module(mut self, h: &Polynomial, generators: &[Polynomial]) -> Self {
        let h = mono(h);
        self = self.with_sos(&h);
        for g in generators {
            let hg = h.try_mul(&mono(g)).expect("generators share the state dimension");
            self = self.with_sos(&hg);
        }
        self
    }

    /// Highest degree any kept term can produce.
    pub fn reach(&self) -> i64 {
        self.terms
            .iter()
            .filter(|t| t.degree >= 0)
            .map(|t| t.degree + t.generator.degree() as i64)
            .max()
            .unwrap_or(-1)
    }
}

/// Gram parametrization `b(x)' W b(x)` of an SOS polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramBlock {
    pub basis: Basis,
    pub dim: usize,
    pub basis_vector: Vec<MultiIndex>,
    pub label: String,
}

fn divides(a: &MultiIndex, b: &MultiIndex) -> bool {
    a.exponents().iter().zip(b.exponents()).all(|(x, y)| x <= y)
}

/// Leading monomial of `g` in graded order, ties broken towards the last
/// variable. None for constants.
fn leading_monomial(g: &Polynomial) -> Option<MultiIndex> {
    let g = mono(g);
    g.terms()
        .filter(|(_, c)| *c != 0.0)
        .map(|(m, _)| m.clone())
        .max_by(|a, b| {
            a.degree()
                .cmp(&b.degree())
                .then_with(|| a.exponents().iter().rev().cmp(b.exponents().iter().rev()))
        })
        .filter(|m| m.degree() > 0)
}

/// Gram block for SOS polynomials of degree `degree` in `dim` variables.
pub fn gram_parametrize(degree: u32, dim: usize, basis: Basis) -> Result<GramBlock, SosError> {
    if degree % 2 != 0 {
        return Err(SosError::OddDegree(degree as i64));
    }
    Ok(GramBlock {
        basis,
        dim,
        basis_vector: MultiIndex::all_up_to(dim, degree / 2),
        label: String::new(),
    })
}

impl GramBlock {
    pub fn size(&self) -> usize {
        self.basis_vector.len()
    }

    pub fn half_degree(&self) -> u32 {
        self.basis_vector.iter().map(MultiIndex::degree).max().unwrap_or(0)
    }

    fn element(&self, p: usize) -> Polynomial {
        Polynomial::from_terms(self.dim, self.basis, [(self.basis_vector[p].clone(), 1.0)])
    }

    /// `b' W b`, in the monomial basis.
    pub fn expand(&self, w: &DMatrix<f64>) -> Polynomial {
        let mut acc = Polynomial::zero(self.dim, Basis::Monomial);
        let products = gram_products(self);
        let mut k = 0;
        for p in 0..self.size() {
            for q in p..self.size() {
                acc = add_poly(&acc, &products[k].scale(w[(p, q)]));
                k += 1;
            }
        }
        acc
    }
}

/// `b_p b_q` (doubled off the diagonal) in the monomial basis, upper
/// triangle in row-major order.
fn gram_products(block: &GramBlock) -> Vec<Polynomial> {
    let elems: Vec<Polynomial> = (0..block.size()).map(|p| block.element(p)).collect();
    let mut out = Vec::with_capacity(block.size() * (block.size() + 1) / 2);
    for p in 0..block.size() {
        for q in p..block.size() {
            let prod = elems[p].try_mul(&elems[q]).expect("same dim and basis");
            let prod = mono(&prod);
            out.push(if p == q { prod } else { prod.scale(2.0) });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

/// What to do with module terms whose multiplier degree is negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DegreePolicy {
    Strict,
    #[default]
    DropWithWarning,
}

/// A named polynomial with free coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPoly {
    pub name: String,
    pub degree: u32,
    pub basis: Basis,
    pub indices: Vec<MultiIndex>,
    pub offset: usize,
}

impl DecisionPoly {
    fn reconstruct(&self, dim: usize, free: &[f64]) -> Polynomial {
        let p = Polynomial::from_terms(
            dim,
            self.basis,
            self.indices
                .iter()
                .enumerate()
                .map(|(k, a)| (a.clone(), free[self.offset + k])),
        );
        mono(&p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Multiplier {
    Gram(usize),
    Free(DecisionPoly),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipTerm {
    pub generator: Polynomial,
    pub multiplier: Multiplier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub label: String,
    pub equality: usize,
    pub terms: Vec<MembershipTerm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equality {
    pub label: String,
    /// The constraint is `expr = 0`.
    pub expr: LinExpr,
}

/// An SOS program: decision polynomials, memberships, identities and a
/// linear objective.
#[derive(Clone, Debug)]
pub struct SosProgram {
    dim: usize,
    basis: Basis,
    policy: DegreePolicy,
    free_names: Vec<String>,
    decisions: Vec<DecisionPoly>,
    grams: Vec<GramBlock>,
    memberships: Vec<Membership>,
    equalities: Vec<Equality>,
    objective: ScalarExpr,
    sense: Sense,
    warnings: Vec<String>,
    products: HashMap<u32, Vec<Polynomial>>,
}

/// The SDP of a program plus what is needed to map results back.
#[derive(Clone, Debug)]
pub struct CompiledProgram {
    pub sdp: SdpProblem,
    /// `"<equality label>@<monomial>"` per SDP row.
    pub row_labels: Vec<String>,
    pub free_names: Vec<String>,
    pub block_labels: Vec<String>,
    /// Program objective = `objective_sign * sdp objective + objective_constant`.
    pub objective_sign: f64,
    pub objective_constant: f64,
    pub dropped_rows: usize,
}

impl CompiledProgram {
    /// Sidecar text mapping SDP indices to program names.
    pub fn variable_map(&self) -> String {
        let mut s = format!(
            "objective sign {:?} constant {:?}\n",
            self.objective_sign, self.objective_constant
        );
        for (k, n) in self.free_names.iter().enumerate() {
            s.push_str(&format!("free {} {}\n", k + 1, n));
        }
        for (b, n) in self.block_labels.iter().enumerate() {
            s.push_str(&format!("block {} {} size {}\n", b + 1, n, self.sdp.block_sizes[b]));
        }
        for (i, n) in self.row_labels.iter().enumerate() {
            s.push_str(&format!("row {} {}\n", i + 1, n));
        }
        s
    }
}

/// Program values recovered from an SDP solution.
#[derive(Clone, Debug)]
pub struct Decompiled {
    pub status: SolveStatus,
    pub assignment: Assignment,
    /// Decision polynomials in the monomial basis.
    pub decisions: BTreeMap<String, Polynomial>,
    /// Per membership, the multiplier polynomials (SOS or free), in order.
    pub multipliers: Vec<Vec<Polynomial>>,
    /// Coefficient infinity norm of each identity's residual.
    pub equality_residuals: Vec<(String, f64)>,
    pub objective: f64,
}

impl Decompiled {
    pub fn max_residual(&self) -> f64 {
        self.equality_residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn decision(&self, name: &str) -> &Polynomial {
        &self.decisions[name]
    }
}

impl SosProgram {
    pub fn new(dim: usize, basis: Basis) -> Self {
        SosProgram {
            dim,
            basis,
            policy: DegreePolicy::default(),
            free_names: vec![],
            decisions: vec![],
            grams: vec![],
            memberships: vec![],
            equalities: vec![],
            objective: ScalarExpr::default(),
            sense: Sense::Minimize,
            warnings: vec![],
            products: HashMap::new(),
        }
    }

    pub fn with_policy(mut self, policy: DegreePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn grams(&self) -> &[GramBlock] {
        &self.grams
    }

    pub fn memberships(&self) -> &[Membership] {
        &self.memberships
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn decisions(&self) -> &[DecisionPoly] {
        &self.decisions
    }

    pub fn num_free(&self) -> usize {
        self.free_names.len()
    }

    fn new_free_poly(&mut self, name: &str, degree: u32) -> (DecisionPoly, LinExpr) {
        let indices = MultiIndex::all_up_to(self.dim, degree);
        let offset = self.free_names.len();
        let mut expr = LinExpr::zero(self.dim);
        for (k, a) in indices.iter().enumerate() {
            self.free_names.push(format!("{name}[{}]", index_text(a)));
            let phi = Polynomial::from_terms(self.dim, self.basis, [(a.clone(), 1.0)]);
            expr.terms.insert(VarId::Free(offset + k), mono(&phi));
        }
        (
            DecisionPoly {
                name: name.to_string(),
                degree,
                basis: self.basis,
                indices,
                offset,
            },
            expr,
        )
    }

    /// A named polynomial of degree `degree` with free coefficients.
    pub fn decision_poly(&mut self, name: &str, degree: u32) -> LinExpr {
        let (d, e) = self.new_free_poly(name, degree);
        self.decisions.push(d);
        e
    }

    /// An SOS polynomial of (even) degree `degree`, times `generator`.
    fn sos_term(
        &mut self,
        label: &str,
        degree: u32,
        generator: &Polynomial,
        exclude: Option<&MultiIndex>,
    ) -> Result<(usize, LinExpr), SosError> {
        let mut block = gram_parametrize(degree, self.dim, self.basis)?;
        block.label = label.to_string();
        let products = match exclude {
            None => self
                .products
                .entry(degree / 2)
                .or_insert_with(|| gram_products(&block))
                .clone(),
            Some(lm) => {
                block.basis_vector.retain(|b| !divides(lm, b));
                gram_products(&block)
            }
        };
        let idx = self.grams.len();
        let g = mono(generator);
        let is_one = g.num_terms() == 1 && g.coeff(&MultiIndex::zeros(self.dim)) == 1.0;
        let mut expr = LinExpr::zero(self.dim);
        let mut k = 0;
        for p in 0..block.size() {
            for q in p..block.size() {
                let poly = if is_one {
                    products[k].clone()
                } else {
                    products[k].try_mul(&g)?
                };
                if !poly.is_zero() {
                    expr.terms.insert(VarId::Gram { block: idx, p, q }, poly);
                }
                k += 1;
            }
        }
        self.grams.push(block);
        Ok((idx, expr))
    }

    /// A standalone SOS polynomial of even degree (its Gram block is PSD).
    pub fn sos_poly(&mut self, label: &str, degree: u32) -> Result<(usize, LinExpr), SosError> {
        let one = Polynomial::constant(self.dim, Basis::Monomial, 1.0);
        self.sos_term(label, degree, &one, None)
    }

    pub fn add_equality(&mut self, label: &str, expr: LinExpr) -> Result<usize, SosError> {
        if expr.dim() != self.dim {
            return Err(SosError::DimMismatch(expr.dim(), self.dim));
        }
        self.equalities.push(Equality {
            label: label.to_string(),
            expr,
        });
        Ok(self.equalities.len() - 1)
    }

    /// Adds `expr in spec` as `expr - sum generator * multiplier = 0`.
    pub fn add_membership(
        &mut self,
        label: &str,
        expr: &LinExpr,
        spec: &QuadraticModuleSpec,
    ) -> Result<usize, SosError> {
        if expr.dim() != self.dim {
            return Err(SosError::DimMismatch(expr.dim(), self.dim));
        }
        let mut kept = Vec::new();
        for (t_idx, t) in spec.terms.iter().enumerate() {
            if t.degree < 0 {
                match self.policy {
                    DegreePolicy::Strict => {
                        return Err(SosError::NegativeDegree {
                            label: label.to_string(),
                            degree: t.degree,
                            generator_degree: t.generator.degree(),
                            d: spec.d,
                        })
                    }
                    DegreePolicy::DropWithWarning => {
                        let msg = format!(
                            "{label}: term {t_idx} dropped (generator degree {} > d = {})",
                            t.generator.degree(),
                            spec.d
                        );
                        log::warn!("{msg}");
                        self.warnings.push(msg);
                        continue;
                    }
                }
            }
            if t.kind == MultiplierKind::Sos {
                if t.degree % 2 != 0 {
                    return Err(SosError::OddDegree(t.degree));
                }
                if t.degree + t.generator.degree() as i64 > spec.d as i64 {
                    return Err(SosError::DegreeBookkeeping {
                        label: label.to_string(),
                        multiplier: t.degree,
                        generator: t.generator.degree(),
                        d: spec.d,
                    });
                }
            }
            kept.push(t);
        }
        // A cone listed twice, or `h * SOS` next to `h * free` of at least
        // the same degree, adds nothing but degeneracy: the redundant Gram
        // block has no interior on the dual side.
        let covers = |a: &ModuleTerm, b: &ModuleTerm| {
            a.generator == b.generator && a.degree >= b.degree && (a.kind == MultiplierKind::Free || a.kind == b.kind)
        };
        let mut reduced: Vec<&ModuleTerm> = Vec::with_capacity(kept.len());
        for (i, t) in kept.iter().enumerate() {
            let redundant = kept
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && covers(o, t) && (!covers(t, o) || j < i));
            if !redundant {
                reduced.push(t);
            }
        }
        let kept = reduced;
        let reach = spec.reach();
        if expr.degree() as i64 > reach && !(expr.terms.is_empty() && expr.constant.is_zero()) {
            return Err(SosError::DegreeTooHigh {
                label: label.to_string(),
                expr: expr.degree(),
                reach,
            });
        }
        let mut eq = expr.clone();
        let mut terms = Vec::with_capacity(kept.len());
        let kept_all: Vec<ModuleTerm> = kept.iter().map(|t| (*t).clone()).collect();
        for (k, t) in kept.into_iter().enumerate() {
            // With a free `g * R` summand wide enough to absorb `h (g c)^2`,
            // Gram directions inside `g R` are a zero-cost recession of the
            // primal, so the basis is cut to the standard monomials mod g.
            let exclude = match t.kind {
                MultiplierKind::Sos => kept_all.iter().find_map(|o| {
                    let gd = o.generator.degree() as i64;
                    (o.kind == MultiplierKind::Free
                        && gd >= 1
                        && o.degree >= t.generator.degree() as i64 + t.degree - gd)
                        .then(|| leading_monomial(&o.generator))
                        .flatten()
                }),
                MultiplierKind::Free => None,
            };
            let (mult, e) = match t.kind {
                MultiplierKind::Sos => {
                    let (b, e) = self.sos_term(
                        &format!("{label}/s{k}"),
                        t.degree as u32,
                        &t.generator,
                        exclude.as_ref(),
                    )?;
                    (Multiplier::Gram(b), e)
                }
                MultiplierKind::Free => {
                    let (d, e) = self.new_free_poly(&format!("{label}/q{k}"), t.degree as u32);
                    (Multiplier::Free(d), e.mul_poly(&t.generator)?)
                }
            };
            eq = eq.sub(&e);
            terms.push(MembershipTerm {
                generator: t.generator.clone(),
                multiplier: mult,
            });
        }
        let equality = self.add_equality(label, eq)?;
        self.memberships.push(Membership {
            label: label.to_string(),
            equality,
            terms,
        });
        Ok(self.memberships.len() - 1)
    }

    pub fn set_objective(&mut self, objective: ScalarExpr, sense: Sense) {
        self.objective = objective;
        self.sense = sense;
    }

    pub fn objective(&self) -> &ScalarExpr {
        &self.objective
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    fn var_name(&self, v: VarId) -> String {
        match v {
            VarId::Free(k) => self.free_names[k].clone(),
            VarId::Gram { block, p, q } => format!("{}[{p},{q}]", self.grams[block].label),
        }
    }

    /// Compiles to an SDP. Rows are scaled to unit infinity norm and exact
    /// duplicates are removed.
    pub fn compile(&self) -> Result<CompiledProgram, SosError> {
        if self.equalities.is_empty() {
            return Err(SosError::Empty);
        }
        let mut used_free = vec![false; self.free_names.len()];
        let mut used_gram = vec![false; self.grams.len()];
        let mut mark = |v: &VarId| match *v {
            VarId::Free(k) => used_free[k] = true,
            VarId::Gram { block, .. } => used_gram[block] = true,
        };
        for e in &self.equalities {
            e.expr.terms.keys().for_each(&mut mark);
        }
        self.objective.coeffs.keys().for_each(&mut mark);
        if let Some(k) = used_free.iter().position(|u| !u) {
            return Err(SosError::UnusedVariable(self.free_names[k].clone()));
        }
        if let Some(b) = used_gram.iter().position(|u| !u) {
            return Err(SosError::UnusedVariable(self.grams[b].label.clone()));
        }

        let mut constraints = Vec::new();
        let mut rhs = Vec::new();
        let mut row_labels = Vec::new();
        let mut seen: HashMap<Vec<(usize, usize, usize, u64)>, usize> = HashMap::new();
        let mut dropped = 0;
        for eq in &self.equalities {
            let mut rows: BTreeMap<MultiIndex, (f64, Vec<(VarId, f64)>)> = BTreeMap::new();
            for (a, c) in eq.expr.constant.terms() {
                rows.entry(a.clone()).or_default().0 -= c;
            }
            for (v, p) in &eq.expr.terms {
                for (a, c) in p.terms() {
                    rows.entry(a.clone()).or_default().1.push((*v, c));
                }
            }
            for (a, (b, entries)) in rows {
                let mut form = LinearForm::default();
                for (v, c) in entries {
                    match v {
                        VarId::Free(k) => form.free.push((k, c)),
                        VarId::Gram { block, p, q } => form.mat.push(MatEntry {
                            block,
                            row: p,
                            col: q,
                            value: if p == q { c } else { 0.5 * c },
                        }),
                    }
                }
                form.canonicalize();
                let scale = form.max_abs();
                if scale == 0.0 {
                    if b.abs() > 1e-12 {
                        // an unsatisfiable row; keep it so the solver reports it
                        constraints.push(form);
                        rhs.push(b);
                        row_labels.push(format!("{}@{}", eq.label, index_text(&a)));
                    } else {
                        dropped += 1;
                    }
                    continue;
                }
                // sign-normalize so that negated duplicates collide too
                let lead = form
                    .mat
                    .first()
                    .map(|e| e.value)
                    .or_else(|| form.free.first().map(|f| f.1))
                    .unwrap_or(1.0);
                let s = lead.signum() / scale;
                for e in &mut form.mat {
                    e.value *= s;
                }
                for f in &mut form.free {
                    f.1 *= s;
                }
                let b = b * s;
                let mut key: Vec<(usize, usize, usize, u64)> = form
                    .mat
                    .iter()
                    .map(|e| (e.block, e.row, e.col, e.value.to_bits()))
                    .chain(form.free.iter().map(|&(k, v)| (usize::MAX, k, 0, v.to_bits())))
                    .collect();
                key.push((usize::MAX, usize::MAX, usize::MAX, b.to_bits()));
                if seen.contains_key(&key) {
                    dropped += 1;
                    continue;
                }
                seen.insert(key, constraints.len());
                constraints.push(form);
                rhs.push(b);
                row_labels.push(format!("{}@{}", eq.label, index_text(&a)));
            }
        }

        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut objective = LinearForm::default();
        for (v, c) in &self.objective.coeffs {
            let c = sign * c;
            match *v {
                VarId::Free(k) => objective.free.push((k, c)),
                VarId::Gram { block, p, q } => objective.mat.push(MatEntry {
                    block,
                    row: p,
                    col: q,
                    value: if p == q { c } else { 0.5 * c },
                }),
            }
        }
        let sdp = SdpProblem::new(
            self.grams.iter().map(GramBlock::size).collect(),
            self.free_names.len(),
            objective,
            constraints,
            rhs,
        )
        .expect("compiled indices are in range");
        Ok(CompiledProgram {
            sdp,
            row_labels,
            free_names: self.free_names.clone(),
            block_labels: self.grams.iter().map(|g| g.label.clone()).collect(),
            objective_sign: sign,
            objective_constant: self.objective.constant,
            dropped_rows: dropped,
        })
    }

    /// Coefficient infinity norm of every identity at `a`.
    pub fn equality_residuals(&self, a: &Assignment) -> Vec<(String, f64)> {
        self.equalities
            .iter()
            .map(|e| (e.label.clone(), e.expr.evaluate(a).max_abs_coeff()))
            .collect()
    }

    /// Program values at an arbitrary assignment.
    pub fn evaluate(&self, a: &Assignment, status: SolveStatus) -> Decompiled {
        let decisions = self
            .decisions
            .iter()
            .map(|d| (d.name.clone(), d.reconstruct(self.dim, &a.free)))
            .collect();
        let multipliers = self
            .memberships
            .iter()
            .map(|m| {
                m.terms
                    .iter()
                    .map(|t| match &t.multiplier {
                        Multiplier::Gram(b) => self.grams[*b].expand(&a.grams[*b]),
                        Multiplier::Free(d) => d.reconstruct(self.dim, &a.free),
                    })
                    .collect()
            })
            .collect();
        Decompiled {
            status,
            assignment: a.clone(),
            decisions,
            multipliers,
            equality_residuals: self.equality_residuals(a),
            objective: self.objective.evaluate(a),
        }
    }

    /// Maps an SDP solution of [`Self::compile`] back to program values.
    pub fn decompile(&self, solution: &SdpSolution) -> Result<Decompiled, SosError> {
        if !solution.status.is_solved() {
            return Err(SosError::NotSolved(solution.status));
        }
        let a = Assignment {
            free: solution.x_free.clone(),
            grams: solution.x_blocks.clone(),
        };
        Ok(self.evaluate(&a, solution.status))
    }

    /// Names of all unknowns, for diagnostics.
    pub fn describe(&self, v: VarId) -> String {
        self.var_name(v)
    }
}

fn index_text(a: &MultiIndex) -> String {
    a.exponents()
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
