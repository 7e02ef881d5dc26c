//! Infeasible-start primal-dual interior-point method (HKM direction,
//! Mehrotra predictor-corrector). Free variables enter the Schur system as
//! extra columns, giving the augmented system
//!
//! ```text
//! [ M    A_f ] [dy]   [r]
//! [ A_f' 0   ] [dx] = [r_f]
//! ```
//!
//! factored densely with a small quasi-definite regularization and refined
//! against the unregularized matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Certificate, SdpProblem, SdpSolution, SolveStatus, SolverConfig, TraceRow};

const NEAR_GAP: f64 = 1e-6;
const NEAR_FEAS: f64 = 1e-6;
const RAY_TOL_FACTOR: f64 = 10.0;
const REG: f64 = 1e-12;
const RUIZ_SWEEPS: usize = 3;
const REFINE_STEPS: usize = 3;
/// Refinement rounds on the full Newton system.
const NEWTON_REFINE: usize = 2;
/// Iterations without progress tolerated once the best iterate is near optimal.
const NEAR_PATIENCE: usize = 8;
const MIN_STEP: f64 = 1e-8;
const STALL_LIMIT: usize = 3;
const NO_PROGRESS_LIMIT: usize = 30;

/// Residuals recomputed from the problem data and a candidate solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|b - A(X) - A_f x|_2`
    pub primal_feas: f64,
    /// `sqrt(sum |C - A*(y) - Z|_F^2 + |c_f - A_f'y|^2)`
    pub dual_feas: f64,
    /// `|pobj - dobj|`
    pub gap: f64,
    /// `max(0, -lambda_min(X))` over blocks
    pub primal_cone: f64,
    /// `max(0, -lambda_min(Z))` over blocks
    pub dual_cone: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// Recomputes feasibility and gap directly from `problem` and `solution`.
pub fn residuals(problem: &SdpProblem, solution: &SdpSolution) -> Residuals {
    let xb = &solution.x_blocks;
    let xf = &solution.x_free;
    let y = &solution.y;
    let mut pf = 0.0;
    for (form, &b) in problem.constraints.iter().zip(&problem.rhs) {
        let r = b - form.apply(xb, xf);
        pf += r * r;
    }
    let mut dual = problem.objective_blocks();
    let mut cf = problem.objective_free();
    for (form, &yi) in problem.constraints.iter().zip(y) {
        for e in &form.mat {
            dual[e.block][(e.row, e.col)] -= yi * e.value;
            if e.row != e.col {
                dual[e.block][(e.col, e.row)] -= yi * e.value;
            }
        }
        for &(k, v) in &form.free {
            cf[k] -= yi * v;
        }
    }
    let mut df: f64 = cf.iter().map(|v| v * v).sum();
    for (d, z) in dual.iter().zip(&solution.z_blocks) {
        df += (d - z).norm_squared();
    }
    let pobj = problem.primal_objective(xb, xf);
    let dobj: f64 = problem.rhs.iter().zip(y).map(|(b, y)| b * y).sum();
    Residuals {
        primal_feas: pf.sqrt(),
        dual_feas: df.sqrt(),
        gap: (pobj - dobj).abs(),
        primal_cone: cone_violation(xb),
        dual_cone: cone_violation(&solution.z_blocks),
        primal_objective: pobj,
        dual_objective: dobj,
    }
}

fn cone_violation(blocks: &[DMatrix<f64>]) -> f64 {
    blocks
        .iter()
        .filter(|b| b.nrows() > 0)
        .map(|b| (-sym(b).symmetric_eigenvalues().min()).max(0.0))
        .fold(0.0, f64::max)
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

type Entries = Vec<(usize, usize, f64)>;

struct BlockOps {
    n: usize,
    /// constraint index and its entries in this block, ordered by constraint
    cons: Vec<(usize, Entries)>,
}

/// Problem data regrouped per block for the linear maps.
struct Ops {
    m: usize,
    nf: usize,
    blocks: Vec<BlockOps>,
    free_rows: Vec<Vec<(usize, f64)>>,
    c: Vec<DMatrix<f64>>,
    cf: Vec<f64>,
    b: Vec<f64>,
}

impl Ops {
    fn new(p: &SdpProblem) -> Ops {
        let mut blocks: Vec<BlockOps> = p
            .block_sizes
            .iter()
            .map(|&n| BlockOps { n, cons: Vec::new() })
            .collect();
        for (i, form) in p.constraints.iter().enumerate() {
            for e in &form.mat {
                let cons = &mut blocks[e.block].cons;
                match cons.last_mut() {
                    Some((k, ents)) if *k == i => ents.push((e.row, e.col, e.value)),
                    _ => cons.push((i, vec![(e.row, e.col, e.value)])),
                }
            }
        }
        Ops {
            m: p.constraints.len(),
            nf: p.num_free,
            blocks,
            free_rows: p.constraints.iter().map(|c| c.free.clone()).collect(),
            c: p.objective_blocks(),
            cf: p.objective_free(),
            b: p.rhs.clone(),
        }
    }

    /// `A(X) + A_f x`
    fn apply(&self, x: &[DMatrix<f64>], xf: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, xb) in self.blocks.iter().zip(x) {
            for (i, ents) in &blk.cons {
                let mut s = 0.0;
                for &(p, q, v) in ents {
                    s += if p == q { v * xb[(p, p)] } else { 2.0 * v * xb[(p, q)] };
                }
                out[*i] += s;
            }
        }
        for (o, row) in out.iter_mut().zip(&self.free_rows) {
            for &(k, v) in row {
                *o += v * xf[k];
            }
        }
        out
    }

    /// `A*(y)` per block.
    fn adjoint(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut s = DMatrix::zeros(blk.n, blk.n);
                for (i, ents) in &blk.cons {
                    for &(p, q, v) in ents {
                        s[(p, q)] += y[*i] * v;
                        if p != q {
                            s[(q, p)] += y[*i] * v;
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// `A_f' y`
    fn adjoint_free(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nf];
        for (row, &yi) in self.free_rows.iter().zip(y) {
            for &(k, v) in row {
                out[k] += v * yi;
            }
        }
        out
    }

    /// `M_ik = tr(A_i X A_k Z^-1)`, accumulated block by block.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m, self.m);
        for ((blk, xb), zb) in self.blocks.iter().zip(x).zip(zinv) {
            if blk.n == 0 {
                continue;
            }
            let mut g = DMatrix::zeros(blk.n, blk.n);
            for (kk, (k, ek)) in blk.cons.iter().enumerate() {
                g.fill(0.0);
                for &(r, s, v) in ek {
                    g.ger(v, &xb.column(r), &zb.column(s), 1.0);
                    if r != s {
                        g.ger(v, &xb.column(s), &zb.column(r), 1.0);
                    }
                }
                for (i, ei) in &blk.cons[..=kk] {
                    let mut val = 0.0;
                    for &(p, q, u) in ei {
                        val += if p == q {
                            u * g[(p, p)]
                        } else {
                            u * (g[(p, q)] + g[(q, p)])
                        };
                    }
                    m[(*i, *k)] += val;
                    if i != k {
                        m[(*k, *i)] += val;
                    }
                }
            }
        }
        m
    }
}

/// Factored augmented system.
struct Kkt {
    k: DMatrix<f64>,
    /// Symmetric equilibration: the factored matrix is `D k D`.
    d: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Kkt {
    fn new(ops: &Ops, schur: DMatrix<f64>) -> Kkt {
        let (m, nf) = (ops.m, ops.nf);
        let mut k = DMatrix::zeros(m + nf, m + nf);
        k.view_mut((0, 0), (m, m)).copy_from(&schur);
        for (i, row) in ops.free_rows.iter().enumerate() {
            for &(j, v) in row {
                k[(i, m + j)] += v;
                k[(m + j, i)] += v;
            }
        }
        // a few Ruiz sweeps; the Schur block spans many orders of magnitude
        // near the end and partial pivoting alone loses the small rows
        let size = m + nf;
        let mut d = DVector::from_element(size, 1.0);
        let mut kr = k.clone();
        for _ in 0..RUIZ_SWEEPS {
            let mut sweep = DVector::from_element(size, 1.0);
            for i in 0..size {
                let r = kr.row(i).amax();
                if r > 0.0 {
                    sweep[i] = 1.0 / r.sqrt();
                }
            }
            for j in 0..size {
                for i in 0..size {
                    kr[(i, j)] *= sweep[i] * sweep[j];
                }
            }
            d.component_mul_assign(&sweep);
        }
        for i in 0..m {
            kr[(i, i)] += REG;
        }
        for j in 0..nf {
            kr[(m + j, m + j)] -= REG;
        }
        Kkt { k, d, lu: kr.lu() }
    }

    fn solve(&self, r: &DVector<f64>) -> Option<DVector<f64>> {
        let raw = |rhs: &DVector<f64>| {
            self.lu
                .solve(&rhs.component_mul(&self.d))
                .map(|t| t.component_mul(&self.d))
        };
        let mut s = raw(r)?;
        for _ in 0..REFINE_STEPS {
            let res = r - &self.k * &s;
            s += raw(&res)?;
        }
        s.iter().all(|v| v.is_finite()).then_some(s)
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    xf: Vec<f64>,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
}

struct Direction {
    x: Vec<DMatrix<f64>>,
    xf: Vec<f64>,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
}

struct Metrics {
    rp: Vec<f64>,
    rd: Vec<DMatrix<f64>>,
    rf: Vec<f64>,
    pobj: f64,
    dobj: f64,
    mu: f64,
    pres: f64,
    dres: f64,
    gap: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn metrics(ops: &Ops, it: &Iterate, n_total: usize, data_norm: (f64, f64)) -> Metrics {
    let ax = ops.apply(&it.x, &it.xf);
    let rp: Vec<f64> = ops.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let aty = ops.adjoint(&it.y);
    let rd: Vec<DMatrix<f64>> = ops.c.iter().zip(&aty).zip(&it.z).map(|((c, a), z)| c - a - z).collect();
    let atf = ops.adjoint_free(&it.y);
    let rf: Vec<f64> = ops.cf.iter().zip(&atf).map(|(c, a)| c - a).collect();
    let pobj: f64 = ops.c.iter().zip(&it.x).map(|(c, x)| c.dot(x)).sum::<f64>() + dot(&ops.cf, &it.xf);
    let dobj = dot(&ops.b, &it.y);
    let xz: f64 = it.x.iter().zip(&it.z).map(|(x, z)| x.dot(z)).sum();
    let mu = if n_total > 0 { xz / n_total as f64 } else { 0.0 };
    let dres_abs = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + dot(&rf, &rf)).sqrt();
    let denom = 1.0 + pobj.abs() + dobj.abs();
    Metrics {
        pres: norm(&rp) / (1.0 + data_norm.0),
        dres: dres_abs / (1.0 + data_norm.1),
        gap: ((pobj - dobj).abs() / denom).max(xz.abs() / denom),
        rp,
        rd,
        rf,
        pobj,
        dobj,
        mu,
    }
}

/// Largest `alpha` with `X + alpha dX` PSD (infinite if none binds).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let lmin = sym(&w).symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn block_steps(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .zip(dx)
        .map(|(a, d)| max_step(a, d))
        .fold(f64::INFINITY, f64::min)
}

fn inverse_pd(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if z.nrows() == 0 {
        return Some(z.clone());
    }
    let inv = z.clone().cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then(|| sym(&inv))
}

/// Solves the Newton system for the complementarity target `t`
/// (so that `dX = t - sym(X dZ Z^-1)`).
fn direction(
    ops: &Ops,
    it: &Iterate,
    zinv: &[DMatrix<f64>],
    kkt: &Kkt,
    met: &Metrics,
    t: &[DMatrix<f64>],
) -> Option<Direction> {
    let w: Vec<DMatrix<f64>> = t
        .iter()
        .zip(&it.x)
        .zip(&met.rd)
        .zip(zinv)
        .map(|(((t, x), rd), zi)| t - sym(&(x * rd * zi)))
        .collect();
    let aw = ops.apply(&w, &vec![0.0; ops.nf]);
    let mut rhs = DVector::zeros(ops.m + ops.nf);
    for i in 0..ops.m {
        rhs[i] = met.rp[i] - aw[i];
    }
    for j in 0..ops.nf {
        rhs[ops.m + j] = met.rf[j];
    }
    let mut sol = kkt.solve(&rhs)?;
    let mut best: Option<(f64, Direction)> = None;
    for round in 0..=NEWTON_REFINE {
        let dy: Vec<f64> = sol.rows(0, ops.m).iter().copied().collect();
        let dxf: Vec<f64> = sol.rows(ops.m, ops.nf).iter().copied().collect();
        let aty = ops.adjoint(&dy);
        let dz: Vec<DMatrix<f64>> = met.rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
        let dx: Vec<DMatrix<f64>> = t
            .iter()
            .zip(&it.x)
            .zip(&dz)
            .zip(zinv)
            .map(|(((t, x), dz), zi)| t - sym(&(x * dz * zi)))
            .collect();
        // residual of the whole Newton system, not just the Schur part:
        // the Schur matrix and the dX formula round differently
        let adx = ops.apply(&dx, &dxf);
        let afy = ops.adjoint_free(&dy);
        let mut res = DVector::zeros(ops.m + ops.nf);
        for i in 0..ops.m {
            res[i] = met.rp[i] - adx[i];
        }
        for j in 0..ops.nf {
            res[ops.m + j] = met.rf[j] - afy[j];
        }
        let err = res.norm();
        let dir = Direction {
            x: dx,
            xf: dxf,
            y: dy,
            z: dz,
        };
        let improved = best.as_ref().map_or(true, |(e, _)| err < *e);
        if improved {
            best = Some((err, dir));
        }
        if !improved || round == NEWTON_REFINE || err <= 1e-15 * (1.0 + rhs.norm()) {
            break;
        }
        sol += kkt.solve(&res)?;
    }
    best.map(|(_, d)| d)
}

fn initial_point(ops: &Ops) -> Iterate {
    let mut x = Vec::with_capacity(ops.blocks.len());
    let mut z = Vec::with_capacity(ops.blocks.len());
    for (blk, c) in ops.blocks.iter().zip(&ops.c) {
        let n = blk.n as f64;
        let mut ratio: f64 = 0.0;
        let mut anorm: f64 = 0.0;
        for (i, ents) in &blk.cons {
            let fro = ents
                .iter()
                .map(|&(p, q, v)| if p == q { v * v } else { 2.0 * v * v })
                .sum::<f64>()
                .sqrt();
            ratio = ratio.max((1.0 + ops.b[*i].abs()) / (1.0 + fro));
            anorm = anorm.max(fro);
        }
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = 10f64.max(n.sqrt()).max(anorm).max(c.norm());
        x.push(DMatrix::identity(blk.n, blk.n) * xi);
        z.push(DMatrix::identity(blk.n, blk.n) * eta);
    }
    Iterate {
        x,
        xf: vec![0.0; ops.nf],
        y: vec![0.0; ops.m],
        z,
    }
}

fn axpy_blocks(a: &mut [DMatrix<f64>], alpha: f64, d: &[DMatrix<f64>]) {
    for (x, dx) in a.iter_mut().zip(d) {
        *x += dx * alpha;
        let s = sym(x);
        *x = s;
    }
}

fn axpy(a: &mut [f64], alpha: f64, d: &[f64]) {
    for (x, dx) in a.iter_mut().zip(d) {
        *x += alpha * dx;
    }
}

/// Normalized dual improving ray `y / b'y`, if it certifies primal
/// infeasibility to within `tol`.
fn dual_ray(ops: &Ops, it: &Iterate, tol: f64) -> Option<Certificate> {
    let by = dot(&ops.b, &it.y);
    if !(by > 0.0) {
        return None;
    }
    let yb: Vec<f64> = it.y.iter().map(|v| v / by).collect();
    let aty = ops.adjoint(&yb);
    let atf = ops.adjoint_free(&yb);
    let fast: f64 = aty
        .iter()
        .zip(&it.z)
        .map(|(a, z)| (a + z / by).norm_squared())
        .sum::<f64>()
        + dot(&atf, &atf);
    if fast.sqrt() > tol {
        return None;
    }
    let cone = aty
        .iter()
        .filter(|a| a.nrows() > 0)
        .map(|a| a.symmetric_eigenvalues().max().max(0.0))
        .fold(0.0, f64::max);
    let violation = atf.iter().fold(cone, |m, v| m.max(v.abs()));
    (violation <= tol).then_some(Certificate::DualRay { y: yb, violation })
}

/// Normalized primal improving ray `(X, x) / |<C,X> + c'x|`.
fn primal_ray(ops: &Ops, it: &Iterate, pobj: f64, tol: f64) -> Option<Certificate> {
    if !(pobj < 0.0) {
        return None;
    }
    let s = -pobj;
    let xb: Vec<DMatrix<f64>> = it.x.iter().map(|x| x / s).collect();
    let xf: Vec<f64> = it.xf.iter().map(|v| v / s).collect();
    let violation = norm(&ops.apply(&xb, &xf));
    (violation <= tol).then_some(Certificate::PrimalRay {
        x_blocks: xb,
        x_free: xf,
        violation,
    })
}

/// Solves `problem`. Never panics on numerical trouble; breakdowns are
/// reported through [`SolveStatus::NumericalFailure`].
pub fn solve(problem: &SdpProblem, config: &SolverConfig) -> SdpSolution {
    let ops = Ops::new(problem);
    let n_total: usize = problem.block_sizes.iter().sum();
    let data_norm = (
        norm(&ops.b),
        (ops.c.iter().map(|c| c.norm_squared()).sum::<f64>() + dot(&ops.cf, &ops.cf)).sqrt(),
    );
    let ray_tol = RAY_TOL_FACTOR * config.tol_feas;

    let mut it = initial_point(&ops);
    let mut trace = Vec::new();
    let mut best: Option<(f64, Iterate, usize)> = None;
    let mut last_step = 0.0;
    let mut stalls = 0;
    let mut failure = false;

    let finish = |status: SolveStatus,
                  it: Iterate,
                  iterations: usize,
                  trace: Vec<TraceRow>,
                  certificate: Option<Certificate>| {
        let met = metrics(&ops, &it, n_total, data_norm);
        SdpSolution {
            status,
            primal_objective: met.pobj,
            dual_objective: met.dobj,
            primal_residual: met.pres,
            dual_residual: met.dres,
            gap: met.gap,
            x_blocks: it.x,
            x_free: it.xf,
            y: it.y,
            z_blocks: it.z,
            iterations,
            trace,
            certificate,
        }
    };

    let mut iter = 0;
    loop {
        let met = metrics(&ops, &it, n_total, data_norm);
        let finite = met.mu.is_finite() && met.pres.is_finite() && met.dres.is_finite() && met.gap.is_finite();
        if !finite {
            failure = true;
            break;
        }
        trace.push(TraceRow {
            iter,
            mu: met.mu,
            gap: met.gap,
            pres: met.pres,
            dres: met.dres,
            step: last_step,
            pobj: met.pobj,
            dobj: met.dobj,
        });
        log::debug!(
            "{iter}, {:.3e}, {:.3e}, {:.3e}, {:.3e}, {:.3e}",
            met.mu,
            met.gap,
            met.pres,
            met.dres,
            last_step
        );
        if met.pres <= config.tol_feas && met.dres <= config.tol_feas && met.gap <= config.tol_gap {
            return finish(SolveStatus::Optimal, it, iter, trace, None);
        }
        if let Some(cert) = dual_ray(&ops, &it, ray_tol) {
            return finish(SolveStatus::PrimalInfeasible, it, iter, trace, Some(cert));
        }
        if let Some(cert) = primal_ray(&ops, &it, met.pobj, ray_tol) {
            return finish(SolveStatus::DualInfeasible, it, iter, trace, Some(cert));
        }
        let merit = met.pres.max(met.dres).max(met.gap);
        match &best {
            Some((b, _, at)) if merit >= *b => {
                let limit = if *b <= NEAR_GAP.min(NEAR_FEAS) {
                    NEAR_PATIENCE
                } else {
                    NO_PROGRESS_LIMIT
                };
                if iter - at >= limit {
                    failure = true;
                    break;
                }
            }
            _ => best = Some((merit, it.clone(), iter)),
        }
        if iter >= config.max_iters {
            break;
        }
        iter += 1;

        let Some(zinv) = it.z.iter().map(inverse_pd).collect::<Option<Vec<_>>>() else {
            failure = true;
            break;
        };
        let kkt = Kkt::new(&ops, ops.schur(&it.x, &zinv));

        // predictor
        let t_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let Some(aff) = direction(&ops, &it, &zinv, &kkt, &met, &t_aff) else {
            failure = true;
            break;
        };
        let ap = block_steps(&it.x, &aff.x).min(1.0);
        let ad = block_steps(&it.z, &aff.z).min(1.0);
        let sigma = if n_total > 0 && met.mu > 0.0 {
            let mut xz = 0.0;
            for b in 0..it.x.len() {
                let xa = &it.x[b] + &aff.x[b] * ap;
                let za = &it.z[b] + &aff.z[b] * ad;
                xz += xa.dot(&za);
            }
            let mu_aff = (xz / n_total as f64).max(0.0);
            (mu_aff / met.mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // corrector
        let t: Vec<DMatrix<f64>> = (0..it.x.len())
            .map(|b| &zinv[b] * (sigma * met.mu) - &it.x[b] - sym(&(&aff.x[b] * &aff.z[b] * &zinv[b])))
            .collect();
        let Some(dir) = direction(&ops, &it, &zinv, &kkt, &met, &t) else {
            failure = true;
            break;
        };
        let ap = (config.step_fraction * block_steps(&it.x, &dir.x)).min(1.0);
        let ad = (config.step_fraction * block_steps(&it.z, &dir.z)).min(1.0);
        axpy_blocks(&mut it.x, ap, &dir.x);
        axpy(&mut it.xf, ap, &dir.xf);
        axpy(&mut it.y, ad, &dir.y);
        axpy_blocks(&mut it.z, ad, &dir.z);
        last_step = ap.min(ad);
        if ap.max(ad) < MIN_STEP {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                failure = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let Some((_, best_it, _)) = best else {
        return finish(SolveStatus::NumericalFailure, it, iter, trace, None);
    };
    let met = metrics(&ops, &best_it, n_total, data_norm);
    let status = if met.gap <= NEAR_GAP && met.pres <= NEAR_FEAS && met.dres <= NEAR_FEAS {
        SolveStatus::NearOptimal
    } else if failure {
        SolveStatus::NumericalFailure
    } else {
        SolveStatus::MaxIterations
    };
    finish(status, best_it, iter, trace, None)
}
