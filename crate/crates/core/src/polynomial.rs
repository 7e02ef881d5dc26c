//! Sparse multivariate polynomials over `f64` in the monomial or the tensor
//! Chebyshev (first kind) basis.
//!
//! A [`Polynomial`] is an immutable value: a variable count, a basis tag and a
//! map from [`MultiIndex`] to coefficient. Coefficients whose magnitude falls
//! below [`PRUNE_TOL`] after an arithmetic operation are dropped.

mod moments;
mod text;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use moments::{integrate, lebesgue_moments, moments_to_json, DomainKind, MomentTable};
pub use text::ParseError;

/// Coefficients with absolute value below this are removed after arithmetic.
pub const PRUNE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("basis mismatch: {0:?} vs {1:?}")]
    BasisMismatch(Basis, Basis),
    #[error("variable index {var} out of range for dimension {dim}")]
    VarOutOfRange { var: usize, dim: usize },
    #[error("no moment available for exponent {0}")]
    MissingMoment(MultiIndex),
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),
    #[error("empty polynomial vector")]
    EmptyVector,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub type Result<T> = std::result::Result<T, PolyError>;

/// Exponent vector of a monomial `x^a` or a tensor Chebyshev term `T_a(x)`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// The index of the single variable `x_var`.
    pub fn unit(dim: usize, var: usize) -> Self {
        let mut e = vec![0; dim];
        e[var] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All indices of total degree at most `max_degree` in graded order.
    pub fn all_up_to(dim: usize, max_degree: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for deg in 0..=max_degree {
            let mut buf = vec![0u32; dim];
            of_degree(dim, deg, 0, &mut buf, &mut out);
        }
        out
    }
}

// Exponent vectors of exactly `remaining` total degree, lexicographically
// descending, which is the order `Ord` uses within one degree.
fn of_degree(dim: usize, remaining: u32, pos: usize, buf: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if dim == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == dim - 1 {
        buf[pos] = remaining;
        out.push(MultiIndex(buf.clone()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        of_degree(dim, remaining - e, pos + 1, buf, out);
    }
    buf[pos] = 0;
}

/// Graded order: total degree first, then lexicographically descending
/// exponents, so `1 < x1 < x2 < x1^2 < x1*x2 < x2^2`.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Monomial,
    Chebyshev,
}

/// Arithmetic selector for [`arith`].
#[derive(Debug, Clone, Copy)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    basis: Basis,
    terms: BTreeMap<MultiIndex, f64>,
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial({:?}, ", self.basis)?;
        f.debug_map().entries(self.terms.iter()).finish()?;
        write!(f, ")")
    }
}

impl Polynomial {
    pub fn zero(dim: usize, basis: Basis) -> Self {
        Polynomial {
            dim,
            basis,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, basis: Basis, c: f64) -> Self {
        Self::from_terms(dim, basis, [(MultiIndex::zeros(dim), c)])
    }

    /// The coordinate `x_var` (which is `T_1(x_var)` in the Chebyshev basis).
    pub fn var(dim: usize, basis: Basis, var: usize) -> Self {
        Self::from_terms(dim, basis, [(MultiIndex::unit(dim, var), 1.0)])
    }

    /// Builds a polynomial, summing repeated indices and pruning tiny terms.
    ///
    /// Panics if an index does not have `dim` entries.
    pub fn from_terms<I>(dim: usize, basis: Basis, terms: I) -> Self
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut map = BTreeMap::new();
        for (idx, c) in terms {
            assert_eq!(idx.dim(), dim, "multi-index length must equal dim");
            *map.entry(idx).or_insert(0.0) += c;
        }
        let mut p = Polynomial { dim, basis, terms: map };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, v)| (k, *v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, idx: &MultiIndex) -> f64 {
        self.terms.get(idx).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    /// Largest coefficient magnitude (coefficient infinity norm).
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn check_compatible(&self, other: &Polynomial) -> Result<()> {
        if self.dim != other.dim {
            return Err(PolyError::DimMismatch(self.dim, other.dim));
        }
        if self.basis != other.basis {
            return Err(PolyError::BasisMismatch(self.basis, other.basis));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (k, v) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(0.0) += v;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (k, v) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(0.0) -= v;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_compatible(other)?;
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        match self.basis {
            Basis::Monomial => {
                for (a, ca) in &self.terms {
                    for (b, cb) in &other.terms {
                        *acc.entry(a.add(b)).or_insert(0.0) += ca * cb;
                    }
                }
            }
            Basis::Chebyshev => {
                for (a, ca) in &self.terms {
                    for (b, cb) in &other.terms {
                        cheb_product(a, b, ca * cb, &mut acc);
                    }
                }
            }
        }
        let mut p = Polynomial {
            dim: self.dim,
            basis: self.basis,
            terms: acc,
        };
        p.prune();
        Ok(p)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= s;
        }
        out.prune();
        out
    }

    /// Exact partial derivative with respect to `x_var`.
    pub fn differentiate(&self, var: usize) -> Result<Polynomial> {
        if var >= self.dim {
            return Err(PolyError::VarOutOfRange { var, dim: self.dim });
        }
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (idx, c) in &self.terms {
            let n = idx.0[var];
            if n == 0 {
                continue;
            }
            match self.basis {
                Basis::Monomial => {
                    let mut e = idx.0.clone();
                    e[var] -= 1;
                    *acc.entry(MultiIndex(e)).or_insert(0.0) += c * n as f64;
                }
                Basis::Chebyshev => {
                    // T_n' = 2n * sum_{j < n, n-1-j even} T_j, with the T_0 term halved.
                    let mut j = n as i64 - 1;
                    while j >= 0 {
                        let mut e = idx.0.clone();
                        e[var] = j as u32;
                        let w = if j == 0 { n as f64 } else { 2.0 * n as f64 };
                        *acc.entry(MultiIndex(e)).or_insert(0.0) += c * w;
                        j -= 2;
                    }
                }
            }
        }
        let mut p = Polynomial {
            dim: self.dim,
            basis: self.basis,
            terms: acc,
        };
        p.prune();
        Ok(p)
    }

    /// Gradient as a vector of partial derivatives.
    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.dim)
            .map(|k| self.differentiate(k).expect("index in range"))
            .collect()
    }

    /// Re-expresses the polynomial in `target`. Conversions use exact integer
    /// (monomial from Chebyshev) or dyadic (Chebyshev from monomial) tables and
    /// compensated accumulation.
    pub fn convert_basis(&self, target: Basis) -> Polynomial {
        if self.basis == target {
            return self.clone();
        }
        let deg = self.degree() as usize;
        let table = match target {
            Basis::Monomial => cheb_to_mono_table(deg),
            Basis::Chebyshev => mono_to_cheb_table(deg),
        };
        let mut acc: BTreeMap<MultiIndex, TwoSum> = BTreeMap::new();
        let mut buf = vec![0u32; self.dim];
        for (idx, &c) in &self.terms {
            expand_tensor(&table, idx, 0, c, &mut buf, &mut acc);
        }
        let mut p = Polynomial {
            dim: self.dim,
            basis: target,
            terms: acc.into_iter().map(|(k, v)| (k, v.value())).collect(),
        };
        p.prune();
        p
    }

    /// Evaluates at `x`; powers (monomial) or the three-term recurrence
    /// (Chebyshev) are tabulated once per variable.
    ///
    /// Panics if `x.len() != dim`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        if self.terms.is_empty() {
            return 0.0;
        }
        let mut max_exp = vec![0u32; self.dim];
        for idx in self.terms.keys() {
            for (m, e) in max_exp.iter_mut().zip(&idx.0) {
                *m = (*m).max(*e);
            }
        }
        let tables: Vec<Vec<f64>> = x
            .iter()
            .zip(&max_exp)
            .map(|(&xi, &m)| match self.basis {
                Basis::Monomial => power_table(xi, m as usize),
                Basis::Chebyshev => cheb_table(xi, m as usize),
            })
            .collect();
        let mut sum = 0.0;
        for (idx, c) in &self.terms {
            let mut t = *c;
            for (k, &e) in idx.0.iter().enumerate() {
                if e > 0 {
                    t *= tables[k][e as usize];
                }
            }
            sum += t;
        }
        sum
    }

    /// Returns `p(Q y + q)` as a polynomial in `y`, in the basis of `self`.
    pub fn affine_substitute(&self, q_mat: &[Vec<f64>], q_vec: &[f64]) -> Result<Polynomial> {
        let n = self.dim;
        if q_mat.len() != n {
            return Err(PolyError::DimMismatch(q_mat.len(), n));
        }
        if let Some(row) = q_mat.iter().find(|r| r.len() != n) {
            return Err(PolyError::DimMismatch(row.len(), n));
        }
        if q_vec.len() != n {
            return Err(PolyError::DimMismatch(q_vec.len(), n));
        }
        let mono = self.convert_basis(Basis::Monomial);
        let lin: Vec<Polynomial> = (0..n)
            .map(|i| {
                let mut terms: Vec<(MultiIndex, f64)> = (0..n).map(|j| (MultiIndex::unit(n, j), q_mat[i][j])).collect();
                terms.push((MultiIndex::zeros(n), q_vec[i]));
                Polynomial::from_terms(n, Basis::Monomial, terms)
            })
            .collect();
        let mut powers: Vec<Vec<Polynomial>> = lin
            .iter()
            .map(|l| vec![Polynomial::constant(n, Basis::Monomial, 1.0), l.clone()])
            .collect();
        let mut out = Polynomial::zero(n, Basis::Monomial);
        for (idx, c) in &mono.terms {
            let mut t = Polynomial::constant(n, Basis::Monomial, *c);
            for (i, &e) in idx.0.iter().enumerate() {
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().unwrap().try_mul(&lin[i])?;
                    powers[i].push(next);
                }
                if e > 0 {
                    t = t.try_mul(&powers[i][e as usize])?;
                }
            }
            out = out.try_add(&t)?;
        }
        Ok(out.convert_basis(self.basis))
    }

    /// Parses the config text format `coef * x1^a1 * ... * xn^an + ...`.
    pub fn parse(text: &str, dim: usize) -> std::result::Result<Polynomial, ParseError> {
        text::parse(text, dim)
    }

    /// Monomial-basis text rendering that [`Polynomial::parse`] reads back
    /// exactly.
    pub fn to_text(&self) -> String {
        text::render(&self.convert_basis(Basis::Monomial))
    }
}

/// `p op q` with dimension and basis checks.
pub fn arith(p: &Polynomial, q: &Polynomial, op: ArithOp) -> Result<Polynomial> {
    match op {
        ArithOp::Add => p.try_add(q),
        ArithOp::Sub => p.try_sub(q),
        ArithOp::Mul => p.try_mul(q),
    }
}

/// `sum_k d(rho * F_k)/dx_k`.
pub fn divergence_of_product(rho: &Polynomial, field: &PolyVector) -> Result<Polynomial> {
    if field.len() != rho.dim() {
        return Err(PolyError::DimMismatch(field.len(), rho.dim()));
    }
    let mut out = Polynomial::zero(rho.dim(), rho.basis());
    for (k, fk) in field.components().iter().enumerate() {
        out = out.try_add(&rho.try_mul(fk)?.differentiate(k)?)?;
    }
    Ok(out)
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl std::ops::$tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            /// Panics on dimension or basis mismatch; use the `try_` form to
            /// handle that case.
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$call(rhs).expect("incompatible polynomials")
            }
        }
    };
}

forward_binop!(Add, add, try_add);
forward_binop!(Sub, sub, try_sub);
forward_binop!(Mul, mul, try_mul);

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.basis {
            Basis::Monomial => write!(f, "{}", text::render(self)),
            Basis::Chebyshev => {
                if self.terms.is_empty() {
                    return write!(f, "0");
                }
                for (i, (idx, c)) in self.terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{c}*T{idx}")?;
                }
                Ok(())
            }
        }
    }
}

/// A list of polynomials sharing dimension and basis (a polynomial vector
/// field or a multiplier tuple).
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVector(Vec<Polynomial>);

impl PolyVector {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let first = components.first().ok_or(PolyError::EmptyVector)?;
        for p in &components[1..] {
            first.check_compatible(p)?;
        }
        Ok(PolyVector(components))
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn basis(&self) -> Basis {
        self.0[0].basis()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|p| p.evaluate(x)).collect()
    }

    pub fn map<F: FnMut(&Polynomial) -> Polynomial>(&self, f: F) -> PolyVector {
        PolyVector(self.0.iter().map(f).collect())
    }

    pub fn into_inner(self) -> Vec<Polynomial> {
        self.0
    }
}

impl std::ops::Index<usize> for PolyVector {
    type Output = Polynomial;
    fn index(&self, i: usize) -> &Polynomial {
        &self.0[i]
    }
}

// T_a * T_b = prod_k (T_{a_k + b_k} + T_{|a_k - b_k|}) / 2, expanded over all
// 2^n sign choices.
fn cheb_product(a: &MultiIndex, b: &MultiIndex, coef: f64, acc: &mut BTreeMap<MultiIndex, f64>) {
    let n = a.dim();
    let active: Vec<usize> = (0..n).filter(|&k| a.0[k] > 0 && b.0[k] > 0).collect();
    let base: Vec<u32> = a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect();
    let w = coef / (1u64 << active.len()) as f64;
    for mask in 0u32..(1 << active.len()) {
        let mut e = base.clone();
        for (bit, &k) in active.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                e[k] = a.0[k].abs_diff(b.0[k]);
            }
        }
        *acc.entry(MultiIndex(e)).or_insert(0.0) += w;
    }
}

/// Row k holds the monomial coefficients of T_k (exact integers).
fn cheb_to_mono_table(deg: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
    if deg >= 1 {
        rows.push(vec![0.0, 1.0]);
    }
    for k in 2..=deg {
        let mut r = vec![0.0; k + 1];
        for (j, c) in rows[k - 1].iter().enumerate() {
            r[j + 1] += 2.0 * c;
        }
        for (j, c) in rows[k - 2].iter().enumerate() {
            r[j] -= c;
        }
        rows.push(r);
    }
    rows
}

/// Row k holds the Chebyshev coefficients of x^k:
/// x^k = 2^{1-k} sum_{j <= k/2} C(k, j) T_{k-2j}, with the T_0 term halved.
fn mono_to_cheb_table(deg: usize) -> Vec<Vec<f64>> {
    (0..=deg)
        .map(|k| {
            let mut r = vec![0.0; k + 1];
            if k == 0 {
                r[0] = 1.0;
                return r;
            }
            let scale = 2f64.powi(1 - k as i32);
            let mut binom = 1.0f64;
            for j in 0..=k / 2 {
                let mut v = binom * scale;
                if 2 * j == k {
                    v *= 0.5;
                }
                r[k - 2 * j] = v;
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
            r
        })
        .collect()
}

/// Neumaier/TwoSum accumulator with an exact-product feed.
#[derive(Default, Clone, Copy)]
struct TwoSum {
    hi: f64,
    lo: f64,
}

impl TwoSum {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p);
        self.lo += e;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

fn expand_tensor(
    table: &[Vec<f64>],
    idx: &MultiIndex,
    pos: usize,
    coef: f64,
    buf: &mut Vec<u32>,
    acc: &mut BTreeMap<MultiIndex, TwoSum>,
) {
    if pos == idx.dim() {
        acc.entry(MultiIndex(buf.clone())).or_default().add(coef);
        return;
    }
    let e = idx.0[pos] as usize;
    for (j, &t) in table[e].iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        buf[pos] = j as u32;
        if pos + 1 == idx.dim() {
            acc.entry(MultiIndex(buf.clone())).or_default().add_product(coef, t);
        } else {
            // Table entries are integers or dyadic rationals, so partial
            // products stay exact until the last factor.
            expand_tensor(table, idx, pos + 1, coef * t, buf, acc);
        }
    }
    buf[pos] = 0;
}

/// Several polynomials in the same variables, flattened for repeated
/// evaluation. Every monomial (or Chebyshev product) that occurs is
/// computed once per point from a shorter one, then each polynomial is a
/// dot product over the shared values.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEvaluator {
    dim: usize,
    basis: Basis,
    max_exp: Vec<usize>,
    /// `(parent, variable, exponent)`: value is `vals[parent] * T_e(x_k)`.
    /// Entry 0 is the constant 1 and has no parent.
    steps: Vec<(usize, usize, usize)>,
    /// Sparse rows `(value index, coefficient)`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl BatchEvaluator {
    /// Panics if the polynomials differ in dimension.
    pub fn new(polys: &[&Polynomial]) -> Self {
        let dim = polys.first().map_or(0, |p| p.dim);
        let basis = polys.first().map_or(Basis::Monomial, |p| p.basis);
        let polys: Vec<Polynomial> = polys
            .iter()
            .map(|p| {
                assert_eq!(p.dim, dim, "batch polynomials must share the dimension");
                p.convert_basis(basis)
            })
            .collect();
        // close the index set under dropping the last nonzero exponent
        let parent = |a: &MultiIndex| -> Option<(MultiIndex, usize, usize)> {
            let k = a.0.iter().rposition(|&e| e > 0)?;
            let mut e = a.0.clone();
            let ek = e[k] as usize;
            e[k] = 0;
            Some((MultiIndex(e), k, ek))
        };
        let mut all: BTreeMap<MultiIndex, usize> = BTreeMap::new();
        let mut stack: Vec<MultiIndex> = polys.iter().flat_map(|p| p.terms.keys().cloned()).collect();
        stack.push(MultiIndex::zeros(dim));
        while let Some(a) = stack.pop() {
            if all.insert(a.clone(), 0).is_none() {
                if let Some((p, _, _)) = parent(&a) {
                    stack.push(p);
                }
            }
        }
        // parents have fewer nonzero exponents, so this order is topological
        let mut order: Vec<MultiIndex> = all.keys().cloned().collect();
        order.sort_by_key(|a| (a.0.iter().filter(|&&e| e > 0).count(), a.clone()));
        for (pos, a) in order.iter().enumerate() {
            all.insert(a.clone(), pos);
        }
        let mut max_exp = vec![0usize; dim];
        let steps = order
            .iter()
            .map(|a| match parent(a) {
                None => (0, 0, 0),
                Some((p, k, e)) => {
                    max_exp[k] = max_exp[k].max(e);
                    (all[&p], k, e)
                }
            })
            .collect();
        let rows = polys
            .iter()
            .map(|p| p.terms.iter().map(|(a, &c)| (all[a], c)).collect())
            .collect();
        BatchEvaluator {
            dim,
            basis,
            max_exp,
            steps,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of every polynomial at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        let tables: Vec<Vec<f64>> = x
            .iter()
            .zip(&self.max_exp)
            .map(|(&xi, &m)| match self.basis {
                Basis::Monomial => power_table(xi, m),
                Basis::Chebyshev => cheb_table(xi, m),
            })
            .collect();
        let mut vals = vec![1.0; self.steps.len()];
        for (i, &(p, k, e)) in self.steps.iter().enumerate().skip(1) {
            vals[i] = vals[p] * tables[k][e];
        }
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(i, c)| c * vals[i]).sum())
            .collect()
    }
}

fn power_table(x: f64, m: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(m + 1);
    t.push(1.0);
    for k in 1..=m {
        t.push(t[k - 1] * x);
    }
    t
}

fn cheb_table(x: f64, m: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(m + 1);
    t.push(1.0);
    if m >= 1 {
        t.push(x);
    }
    for k in 2..=m {
        t.push(2.0 * x * t[k - 1] - t[k - 2]);
    }
    t
}
