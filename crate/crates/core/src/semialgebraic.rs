//! State constraint sets `X = {g_i(x) >= 0}`, input boxes, affine
//! normalizations and uniform sampling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polynomial::{self, Basis, DomainKind, MultiIndex, PolyError, PolyVector, Polynomial};

/// Default tolerance for [`SemialgebraicSet::contains`].
pub const CONTAINS_TOL: f64 = 1e-9;

/// Relative inflation applied to an automatically appended `N - |x|^2`.
pub const BALL_BOUND_INFLATION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("a semialgebraic set needs at least one generator")]
    NoGenerators,
    #[error("generator {0} has dimension {1}, expected {2}")]
    GeneratorDim(usize, usize, usize),
    #[error("degenerate input interval [{0}, {1}]")]
    DegenerateBox(f64, f64),
    #[error("invalid set parameters: {0}")]
    Invalid(String),
    #[error("sampling needs a box or ball domain")]
    SamplingUnsupported,
    #[error("no ball bound N - |x|^2 available for a general domain; add it as a generator or give the moment table a bounding box")]
    MissingBallBound,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `x = Q y + q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub q_mat: Vec<Vec<f64>>,
    pub q_vec: Vec<f64>,
}

impl AffineMap {
    pub fn identity(n: usize) -> Self {
        let q_mat = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        AffineMap {
            q_mat,
            q_vec: vec![0.0; n],
        }
    }

    pub fn diagonal(scale: &[f64], shift: &[f64]) -> Self {
        let n = scale.len();
        let q_mat = (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale[i] } else { 0.0 }).collect())
            .collect();
        AffineMap {
            q_mat,
            q_vec: shift.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.q_vec.len()
    }

    pub fn is_identity(&self) -> bool {
        *self == AffineMap::identity(self.dim())
    }

    fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.q_mat[i][j])
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.q_vec[i] + self.q_mat[i].iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// The map `y = Q^{-1} x - Q^{-1} q`, or `None` if `Q` is singular.
    pub fn inverse(&self) -> Option<AffineMap> {
        let inv = self.matrix().try_inverse()?;
        let shift = -(&inv * DVector::from_column_slice(&self.q_vec));
        let n = self.dim();
        Some(AffineMap {
            q_mat: (0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect(),
            q_vec: shift.iter().copied().collect(),
        })
    }

    /// `p(Q y + q)`.
    pub fn pull_back(&self, p: &Polynomial) -> Result<Polynomial, PolyError> {
        p.affine_substitute(&self.q_mat, &self.q_vec)
    }

    /// Transforms a vector field `xdot = F(x)` into `ydot = Q^{-1} F(Q y + q)`.
    pub fn pull_back_field(&self, field: &PolyVector) -> Result<PolyVector, PolyError> {
        let inv = self
            .inverse()
            .ok_or(PolyError::UnsupportedDomain("singular coordinate map".into()))?;
        let pulled: Vec<Polynomial> = field
            .components()
            .iter()
            .map(|c| self.pull_back(c))
            .collect::<Result<_, _>>()?;
        let n = self.dim();
        let basis = field.basis();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Polynomial::zero(n, basis);
            for (j, pj) in pulled.iter().enumerate() {
                if inv.q_mat[i][j] != 0.0 {
                    acc = acc.try_add(&pj.scale(inv.q_mat[i][j]))?;
                }
            }
            out.push(acc);
        }
        PolyVector::new(out)
    }
}

/// `X = {x : g_i(x) >= 0}` together with the information needed for moments
/// and sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SemialgebraicSet {
    dim: usize,
    generators: Vec<Polynomial>,
    domain: DomainKind,
    ball_bound: f64,
}

impl SemialgebraicSet {
    /// Builds a set from explicit generators. If none of them is of the form
    /// `N - |x|^2`, one is appended with `N` inflated from the tightest
    /// analytic bound of the domain.
    pub fn new(dim: usize, generators: Vec<Polynomial>, domain: DomainKind) -> Result<Self, SetError> {
        if generators.is_empty() {
            return Err(SetError::NoGenerators);
        }
        let mut gens = Vec::with_capacity(generators.len() + 1);
        for (i, g) in generators.into_iter().enumerate() {
            if g.dim() != dim {
                return Err(SetError::GeneratorDim(i, g.dim(), dim));
            }
            gens.push(g.convert_basis(Basis::Monomial));
        }
        let ball_bound = match gens.iter().find_map(ball_generator_bound) {
            Some(n) => n,
            None => {
                let bound = analytic_norm_bound(&domain)? * (1.0 + BALL_BOUND_INFLATION);
                gens.push(ball_generator(dim, bound));
                bound
            }
        };
        Ok(SemialgebraicSet {
            dim,
            generators: gens,
            domain,
            ball_bound,
        })
    }

    /// `{ |x - c|^2 <= r^2 }`.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, SetError> {
        if !(radius > 0.0) {
            return Err(SetError::Invalid(format!("ball radius {radius} must be positive")));
        }
        let n = center.len();
        let mut terms = vec![(MultiIndex::zeros(n), radius * radius)];
        for (k, &c) in center.iter().enumerate() {
            let mut e2 = vec![0; n];
            e2[k] = 2;
            terms.push((MultiIndex::new(e2), -1.0));
            terms.push((MultiIndex::unit(n, k), 2.0 * c));
            terms.push((MultiIndex::zeros(n), -c * c));
        }
        let g = Polynomial::from_terms(n, Basis::Monomial, terms);
        Self::new(n, vec![g], DomainKind::Ball { center, radius })
    }

    /// `prod_k [lo_k, hi_k]`, one generator `(x_k - lo_k)(hi_k - x_k)` per axis.
    pub fn boxed(bounds: Vec<(f64, f64)>) -> Result<Self, SetError> {
        let n = bounds.len();
        let mut gens = Vec::with_capacity(n);
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(SetError::Invalid(format!("box side [{lo}, {hi}] is empty")));
            }
            let mut e2 = vec![0; n];
            e2[k] = 2;
            gens.push(Polynomial::from_terms(
                n,
                Basis::Monomial,
                [
                    (MultiIndex::new(e2), -1.0),
                    (MultiIndex::unit(n, k), lo + hi),
                    (MultiIndex::zeros(n), -lo * hi),
                ],
            ));
        }
        Self::new(n, gens, DomainKind::Box(bounds))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[Polynomial] {
        &self.generators
    }

    pub fn domain(&self) -> &DomainKind {
        &self.domain
    }

    pub fn ball_bound(&self) -> f64 {
        self.ball_bound
    }

    /// Product of all generators.
    pub fn bar_g(&self) -> Polynomial {
        let mut it = self.generators.iter();
        let first = it.next().expect("generators are nonempty").clone();
        it.fold(first, |acc, g| &acc * g)
    }

    /// The generator `g` when `X = {g >= 0}` with `{g = 0}` the whole
    /// boundary (balls and intervals). An SOS vanishing on the boundary is
    /// then `g^2` times an SOS.
    pub fn boundary_generator(&self) -> Option<&Polynomial> {
        let ok = self.generators.len() == 1
            && match &self.domain {
                DomainKind::Ball { .. } => true,
                DomainKind::Box(b) => b.len() == 1,
                DomainKind::General(_) => false,
            };
        ok.then(|| &self.generators[0])
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.generators.iter().all(|g| g.evaluate(x) >= -tol)
    }

    /// Smallest generator value at `x`; negative outside the set.
    pub fn min_generator(&self, x: &[f64]) -> f64 {
        self.generators
            .iter()
            .map(|g| g.evaluate(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn moments(&self, max_degree: u32) -> Result<BTreeMap<MultiIndex, f64>, PolyError> {
        polynomial::lebesgue_moments(&self.domain, self.dim, max_degree)
    }

    pub fn integrate(&self, p: &Polynomial) -> Result<f64, PolyError> {
        polynomial::integrate(p, &self.moments(p.degree())?)
    }

    pub fn volume(&self) -> Result<f64, PolyError> {
        self.integrate(&Polynomial::constant(self.dim, Basis::Monomial, 1.0))
    }

    /// The affine map from normalized coordinates (unit ball or `[-1,1]^n`)
    /// to this set. Identity for general domains.
    pub fn normalizing_map(&self) -> AffineMap {
        match &self.domain {
            DomainKind::Box(b) => {
                let scale: Vec<f64> = b.iter().map(|(lo, hi)| (hi - lo) / 2.0).collect();
                let shift: Vec<f64> = b.iter().map(|(lo, hi)| (hi + lo) / 2.0).collect();
                AffineMap::diagonal(&scale, &shift)
            }
            DomainKind::Ball { center, radius } => AffineMap::diagonal(&vec![*radius; center.len()], center),
            DomainKind::General(_) => AffineMap::identity(self.dim),
        }
    }

    /// This set in the coordinates of [`Self::normalizing_map`].
    pub fn normalized(&self) -> Result<SemialgebraicSet, SetError> {
        match &self.domain {
            DomainKind::Box(b) => Self::boxed(vec![(-1.0, 1.0); b.len()]),
            DomainKind::Ball { center, .. } => Self::ball(vec![0.0; center.len()], 1.0),
            DomainKind::General(_) => Ok(self.clone()),
        }
    }

    /// `count` points drawn uniformly from the set. Point `i` uses its own
    /// ChaCha stream `(seed, i)`, so results do not depend on evaluation order.
    pub fn sample_uniform(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, SetError> {
        (0..count).map(|i| self.sample_point(seed, i as u64)).collect()
    }

    pub fn sample_point(&self, seed: u64, index: u64) -> Result<Vec<f64>, SetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        loop {
            let x = match &self.domain {
                DomainKind::Box(b) => b.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect::<Vec<_>>(),
                DomainKind::Ball { center, radius } => {
                    let n = center.len();
                    let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
                    dir.iter().zip(center).map(|(d, c)| c + r * d / norm).collect()
                }
                DomainKind::General(_) => return Err(SetError::SamplingUnsupported),
            };
            // Guard against boundary rounding so every point satisfies tol = 0.
            if self.contains(&x, 0.0) {
                return Ok(x);
            }
        }
    }
}

/// `N` if `g` is exactly `N - sum_k x_k^2` with `N >= 0`.
fn ball_generator_bound(g: &Polynomial) -> Option<f64> {
    let n = g.dim();
    let mut seen = 0;
    let mut constant = 0.0;
    for (idx, c) in g.terms() {
        let e = idx.exponents();
        if idx.degree() == 0 {
            constant = c;
        } else if idx.degree() == 2 && e.iter().filter(|&&v| v == 2).count() == 1 && c == -1.0 {
            seen += 1;
        } else {
            return None;
        }
    }
    (seen == n && constant >= 0.0).then_some(constant)
}

fn ball_generator(dim: usize, bound: f64) -> Polynomial {
    let mut terms = vec![(MultiIndex::zeros(dim), bound)];
    for k in 0..dim {
        let mut e = vec![0; dim];
        e[k] = 2;
        terms.push((MultiIndex::new(e), -1.0));
    }
    Polynomial::from_terms(dim, Basis::Monomial, terms)
}

/// `sup_{x in X} |x|^2` for boxes and balls, or from a general domain's
/// bounding box.
fn analytic_norm_bound(domain: &DomainKind) -> Result<f64, SetError> {
    let from_box = |b: &[(f64, f64)]| b.iter().map(|(lo, hi)| (lo * lo).max(hi * hi)).sum::<f64>();
    match domain {
        DomainKind::Box(b) => Ok(from_box(b)),
        DomainKind::Ball { center, radius } => {
            let c = center.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((c + radius).powi(2))
        }
        DomainKind::General(t) => t
            .bounding_box
            .as_deref()
            .map(from_box)
            .ok_or(SetError::MissingBallBound),
    }
}

/// `U = [lo_i, hi_i]` mapped onto `[0, u_bar]^m` by `u_orig = lo + s * u_new`
/// with `u_bar` the widest interval and `s_i = (hi_i - lo_i) / u_bar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub u_bar: f64,
    pub original: Vec<(f64, f64)>,
    pub scales: Vec<f64>,
}

/// Input-affine data after the input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RewrittenInputs {
    pub drift: PolyVector,
    pub input_fields: Vec<PolyVector>,
    pub l_x: Polynomial,
    pub l_u: Vec<Polynomial>,
}

impl InputBox {
    pub fn m(&self) -> usize {
        self.original.len()
    }

    /// Maps a normalized input back to the original box.
    pub fn to_original(&self, u_new: &[f64]) -> Vec<f64> {
        self.original
            .iter()
            .zip(&self.scales)
            .zip(u_new)
            .map(|(((lo, _), s), u)| lo + s * u)
            .collect()
    }

    pub fn to_normalized(&self, u_orig: &[f64]) -> Vec<f64> {
        self.original
            .iter()
            .zip(&self.scales)
            .zip(u_orig)
            .map(|(((lo, _), s), u)| (u - lo) / s)
            .collect()
    }

    /// Substitutes `u_orig = lo + s * u_new` into `f + sum f_ui u_i` and
    /// `l_x + sum l_ui u_i`.
    pub fn rewrite(
        &self,
        drift: &PolyVector,
        input_fields: &[PolyVector],
        l_x: &Polynomial,
        l_u: &[Polynomial],
    ) -> Result<RewrittenInputs, PolyError> {
        let mut f = drift.clone();
        let mut lx = l_x.clone();
        let mut fu = Vec::with_capacity(self.m());
        let mut lu = Vec::with_capacity(self.m());
        for (i, &(lo, _)) in self.original.iter().enumerate() {
            let s = self.scales[i];
            if lo != 0.0 {
                let comps = f
                    .components()
                    .iter()
                    .zip(input_fields[i].components())
                    .map(|(a, b)| a.try_add(&b.scale(lo)))
                    .collect::<Result<Vec<_>, _>>()?;
                f = PolyVector::new(comps)?;
                lx = lx.try_add(&l_u[i].scale(lo))?;
            }
            fu.push(input_fields[i].map(|p| p.scale(s)));
            lu.push(l_u[i].scale(s));
        }
        Ok(RewrittenInputs {
            drift: f,
            input_fields: fu,
            l_x: lx,
            l_u: lu,
        })
    }
}

/// Builds the normalized input box for `[lo_i, hi_i]`.
pub fn normalize_inputs(bounds: &[(f64, f64)]) -> Result<InputBox, SetError> {
    for &(lo, hi) in bounds {
        if !(hi > lo) {
            return Err(SetError::DegenerateBox(lo, hi));
        }
    }
    let u_bar = bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    Ok(InputBox {
        u_bar,
        original: bounds.to_vec(),
        scales: bounds.iter().map(|(lo, hi)| (hi - lo) / u_bar).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, n: usize) -> Polynomial {
        Polynomial::parse(text, n).unwrap()
    }

    fn unit_disk() -> SemialgebraicSet {
        SemialgebraicSet::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn bar_g_examples() {
        let disk = unit_disk();
        assert_eq!(disk.generators().len(), 1);
        assert_eq!(disk.bar_g(), p("1 - x1^2 - x2^2", 2));
        let two = SemialgebraicSet::new(
            1,
            vec![p("1 - x1", 1), p("1 + x1", 1), p("2 - x1^2", 1)],
            DomainKind::Box(vec![(-1.0, 1.0)]),
        )
        .unwrap();
        assert_eq!(two.bar_g(), &p("1 - x1^2", 1) * &p("2 - x1^2", 1));
        let single = SemialgebraicSet::new(1, vec![p("4 - x1^2", 1)], DomainKind::Box(vec![(-2.0, 2.0)])).unwrap();
        assert_eq!(single.bar_g(), p("4 - x1^2", 1));
    }

    #[test]
    fn ball_generator_is_present() {
        let sq = SemialgebraicSet::boxed(vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(sq.generators().len(), 3);
        let n = sq.ball_bound();
        assert!((n - 2.0 * (1.0 + 1e-6)).abs() < 1e-12);
        for set in [sq, unit_disk(), SemialgebraicSet::ball(vec![0.5, 0.5], 0.25).unwrap()] {
            assert!(set.generators().iter().any(|g| ball_generator_bound(g).is_some()));
        }
        let off = SemialgebraicSet::ball(vec![0.525; 4], 0.475).unwrap();
        assert!((off.ball_bound() - (1.05f64 + 0.475).powi(2) * (1.0 + 1e-6)).abs() < 1e-9);
        let missing = SemialgebraicSet::new(
            1,
            vec![p("1 - x1", 1)],
            DomainKind::General(polynomial::MomentTable {
                dim: 1,
                moments: BTreeMap::new(),
                bounding_box: None,
            }),
        );
        assert_eq!(missing.unwrap_err(), SetError::MissingBallBound);
        assert_eq!(
            SemialgebraicSet::new(1, vec![], DomainKind::Box(vec![(-1.0, 1.0)])).unwrap_err(),
            SetError::NoGenerators
        );
    }

    #[test]
    fn bar_g_sign_on_interior_and_boundary() {
        let sets = [
            unit_disk(),
            SemialgebraicSet::boxed(vec![(-1.0, 2.0), (0.0, 1.0)]).unwrap(),
            SemialgebraicSet::ball(vec![0.525, 0.525, 0.525], 0.475).unwrap(),
        ];
        for set in &sets {
            let g = set.bar_g();
            for x in set.sample_uniform(100, 1).unwrap() {
                assert!(g.evaluate(&x) > 0.0);
            }
        }
        let g = sets[0].bar_g();
        for k in 0..16 {
            let t = k as f64 * std::f64::consts::PI / 8.0;
            assert!(g.evaluate(&[t.cos(), t.sin()]).abs() < 1e-10);
        }
        let g = sets[1].bar_g();
        for y in [0.0, 0.3, 1.0] {
            assert!(g.evaluate(&[-1.0, y]).abs() < 1e-10);
            assert!(g.evaluate(&[2.0, y]).abs() < 1e-10);
        }
    }

    #[test]
    fn contains_examples() {
        let disk = unit_disk();
        assert!(disk.contains(&[0.0, 0.0], CONTAINS_TOL));
        assert!(!disk.contains(&[2.0, 0.0], CONTAINS_TOL));
        assert!(disk.contains(&[1.0, 0.0], 1e-9));
        assert!(!disk.contains(&[1.0 + 1e-6, 0.0], 1e-9));
    }

    #[test]
    fn input_normalization() {
        let b = normalize_inputs(&[(-1.0, 1.0)]).unwrap();
        assert_eq!(b.u_bar, 2.0);
        let f = PolyVector::new(vec![p("x2 + 0.1*x1^3", 2), p("0", 2)]).unwrap();
        let fu = vec![PolyVector::new(vec![p("0", 2), p("0.3", 2)]).unwrap()];
        let lx = p("x1^2 + x2^2", 2);
        let lu = vec![p("0.5*x1", 2)];
        let r = b.rewrite(&f, &fu, &lx, &lu).unwrap();
        assert_eq!(r.drift[1], p("-0.3", 2));
        assert_eq!(r.l_x, &lx - &lu[0]);
        assert_eq!(r.input_fields, fu);

        let id = normalize_inputs(&[(0.0, 1.0)]).unwrap();
        assert_eq!(id.u_bar, 1.0);
        let r = id.rewrite(&f, &fu, &lx, &lu).unwrap();
        assert_eq!((r.drift, r.l_x), (f.clone(), lx.clone()));

        let shifted = normalize_inputs(&[(2.0, 5.0)]).unwrap();
        assert_eq!(shifted.u_bar, 3.0);
        let r = shifted.rewrite(&f, &fu, &lx, &lu).unwrap();
        assert_eq!(r.drift[1], p("0.6", 2));

        assert_eq!(
            normalize_inputs(&[(1.0, 1.0)]).unwrap_err(),
            SetError::DegenerateBox(1.0, 1.0)
        );
    }

    #[test]
    fn normalization_preserves_closed_loop_field() {
        let bounds = [(-1.0, 1.0), (2.0, 3.0)];
        let b = normalize_inputs(&bounds).unwrap();
        let f = PolyVector::new(vec![p("x1*x2 - x1", 2), p("x2^3", 2)]).unwrap();
        let fu = vec![
            PolyVector::new(vec![p("1 + x2", 2), p("x1", 2)]).unwrap(),
            PolyVector::new(vec![p("0.5", 2), p("-x1*x2", 2)]).unwrap(),
        ];
        let lx = p("x1^2", 2);
        let lu = vec![p("x2", 2), p("1", 2)];
        let r = b.rewrite(&f, &fu, &lx, &lu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
            let un = b.to_normalized(&u);
            assert!(un.iter().all(|&v| (-1e-12..=b.u_bar + 1e-12).contains(&v)));
            for k in 0..2 {
                let orig = f[k].evaluate(&x) + (0..2).map(|i| fu[i][k].evaluate(&x) * u[i]).sum::<f64>();
                let new =
                    r.drift[k].evaluate(&x) + (0..2).map(|i| r.input_fields[i][k].evaluate(&x) * un[i]).sum::<f64>();
                assert!((orig - new).abs() < 1e-10);
            }
            let lo = lx.evaluate(&x) + (0..2).map(|i| lu[i].evaluate(&x) * u[i]).sum::<f64>();
            let ln = r.l_x.evaluate(&x) + (0..2).map(|i| r.l_u[i].evaluate(&x) * un[i]).sum::<f64>();
            assert!((lo - ln).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling() {
        let disk = unit_disk();
        let pts = disk.sample_uniform(1000, 7).unwrap();
        assert_eq!(pts.len(), 1000);
        let mean: Vec<f64> = (0..2).map(|k| pts.iter().map(|x| x[k]).sum::<f64>() / 1000.0).collect();
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
        assert!(pts.iter().all(|x| disk.contains(x, 0.0)));
        assert!(disk.sample_uniform(0, 7).unwrap().is_empty());
        assert_eq!(pts, disk.sample_uniform(1000, 7).unwrap());
        assert_ne!(pts, disk.sample_uniform(1000, 8).unwrap());
        // fraction inside radius 1/2 should be about 1/4
        let inner = pts.iter().filter(|x| x[0] * x[0] + x[1] * x[1] < 0.25).count() as f64 / 1000.0;
        assert!((inner - 0.25).abs() < 0.05);
        let general = SemialgebraicSet::new(
            1,
            vec![p("1 - x1^2", 1)],
            DomainKind::General(polynomial::MomentTable {
                dim: 1,
                moments: BTreeMap::new(),
                bounding_box: Some(vec![(-1.0, 1.0)]),
            }),
        )
        .unwrap();
        assert_eq!(general.sample_uniform(3, 1).unwrap_err(), SetError::SamplingUnsupported);
    }

    #[test]
    fn affine_map_round_trip() {
        let set = SemialgebraicSet::ball(vec![0.525; 2], 0.475).unwrap();
        let map = set.normalizing_map();
        let inv = map.inverse().unwrap();
        let x = [0.3, 0.9];
        let y = inv.apply(&x);
        let back = map.apply(&y);
        assert!((back[0] - x[0]).abs() < 1e-15 && (back[1] - x[1]).abs() < 1e-15);
        assert!((map.det() - 0.475f64.powi(2)).abs() < 1e-15);
        // generator pulled back is a positive multiple of the unit-disk generator
        let g = map.pull_back(&set.generators()[0]).unwrap();
        let unit = set.normalized().unwrap().generators()[0].clone();
        assert!(g.try_sub(&unit.scale(0.475 * 0.475)).unwrap().max_abs_coeff() < 1e-14);
    }
}
