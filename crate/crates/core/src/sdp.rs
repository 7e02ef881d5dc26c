//! Block-diagonal semidefinite programs with free variables.
//!
//! Primal form solved here:
//!
//! ```text
//! minimize    sum_b <C_b, X_b> + c_f' x
//! subject to  sum_b <A_ib, X_b> + (A_f x)_i = b_i,   i = 1..m
//!             X_b PSD,  x free
//! ```
//!
//! with dual `max b'y  s.t.  Z_b = C_b - sum_i y_i A_ib PSD,  A_f' y = c_f`.
//! Symmetric coefficient matrices are stored as upper-triangle entries.

mod sdpa;
mod solver;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sdpa::{export_sdpa, parse_sdpa, SdpaError};
pub use solver::{residuals, solve, Residuals};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("entry references block {block} but the problem has {blocks} blocks")]
    BadBlock { block: usize, blocks: usize },
    #[error("entry ({row}, {col}) outside block {block} of size {size}")]
    BadIndex {
        block: usize,
        row: usize,
        col: usize,
        size: usize,
    },
    #[error("free variable {var} out of range ({count} free variables)")]
    BadFree { var: usize, count: usize },
    #[error("constraint count {0} does not match right-hand side length {1}")]
    RhsLength(usize, usize),
    #[error("non-finite coefficient in problem data")]
    NonFinite,
}

/// One upper-triangle entry of a symmetric block coefficient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// A linear functional `sum <A_b, X_b> + a_f' x`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub mat: Vec<MatEntry>,
    pub free: Vec<(usize, f64)>,
}

impl LinearForm {
    /// Sorts entries, merges duplicates, mirrors lower-triangle entries and
    /// drops zeros, so equal functionals have identical representations.
    pub fn canonicalize(&mut self) {
        for e in &mut self.mat {
            if e.row > e.col {
                std::mem::swap(&mut e.row, &mut e.col);
            }
        }
        self.mat.sort_by_key(|e| (e.block, e.row, e.col));
        let mut merged: Vec<MatEntry> = Vec::with_capacity(self.mat.len());
        for e in self.mat.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => last.value += e.value,
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.value != 0.0);
        self.mat = merged;

        self.free.sort_by_key(|&(k, _)| k);
        let mut fm: Vec<(usize, f64)> = Vec::with_capacity(self.free.len());
        for (k, v) in self.free.drain(..) {
            match fm.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => fm.push((k, v)),
            }
        }
        fm.retain(|&(_, v)| v != 0.0);
        self.free = fm;
    }

    pub fn is_empty(&self) -> bool {
        self.mat.is_empty() && self.free.is_empty()
    }

    /// Evaluates the functional at `(X, x)`.
    pub fn apply(&self, x_blocks: &[DMatrix<f64>], x_free: &[f64]) -> f64 {
        let mut s = 0.0;
        for e in &self.mat {
            let w = if e.row == e.col { 1.0 } else { 2.0 };
            s += w * e.value * x_blocks[e.block][(e.row, e.col)];
        }
        for &(k, v) in &self.free {
            s += v * x_free[k];
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.mat
            .iter()
            .map(|e| e.value.abs())
            .chain(self.free.iter().map(|f| f.1.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub num_free: usize,
    pub objective: LinearForm,
    pub constraints: Vec<LinearForm>,
    pub rhs: Vec<f64>,
}

impl SdpProblem {
    /// Validates indices and canonicalizes every functional.
    pub fn new(
        block_sizes: Vec<usize>,
        num_free: usize,
        mut objective: LinearForm,
        mut constraints: Vec<LinearForm>,
        rhs: Vec<f64>,
    ) -> Result<Self, SdpError> {
        if constraints.len() != rhs.len() {
            return Err(SdpError::RhsLength(constraints.len(), rhs.len()));
        }
        objective.canonicalize();
        for c in &mut constraints {
            c.canonicalize();
        }
        let p = SdpProblem {
            block_sizes,
            num_free,
            objective,
            constraints,
            rhs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let blocks = self.block_sizes.len();
        for form in std::iter::once(&self.objective).chain(&self.constraints) {
            for e in &form.mat {
                if e.block >= blocks {
                    return Err(SdpError::BadBlock { block: e.block, blocks });
                }
                let size = self.block_sizes[e.block];
                if e.row >= size || e.col >= size || e.row > e.col {
                    return Err(SdpError::BadIndex {
                        block: e.block,
                        row: e.row,
                        col: e.col,
                        size,
                    });
                }
                if !e.value.is_finite() {
                    return Err(SdpError::NonFinite);
                }
            }
            for &(k, v) in &form.free {
                if k >= self.num_free {
                    return Err(SdpError::BadFree {
                        var: k,
                        count: self.num_free,
                    });
                }
                if !v.is_finite() {
                    return Err(SdpError::NonFinite);
                }
            }
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite);
        }
        Ok(())
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Objective value at `(X, x)`.
    pub fn primal_objective(&self, x_blocks: &[DMatrix<f64>], x_free: &[f64]) -> f64 {
        self.objective.apply(x_blocks, x_free)
    }

    /// `C_b` as dense symmetric matrices.
    pub fn objective_blocks(&self) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for e in &self.objective.mat {
            out[e.block][(e.row, e.col)] = e.value;
            out[e.block][(e.col, e.row)] = e.value;
        }
        out
    }

    pub fn objective_free(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.num_free];
        for &(k, v) in &self.objective.free {
            c[k] = v;
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iters: 200,
            step_fraction: 0.98,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol_gap > 0.0 && self.tol_feas > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err("step_fraction must lie in (0, 1)".into());
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        Ok(())
    }
}

/// One line of the solver log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub mu: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub step: f64,
    pub pobj: f64,
    pub dobj: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x_blocks: Vec<DMatrix<f64>>,
    pub x_free: Vec<f64>,
    pub y: Vec<f64>,
    pub z_blocks: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative primal infeasibility `|b - A(X) - A_f x| / (1 + |b|)`.
    pub primal_residual: f64,
    /// Relative dual infeasibility.
    pub dual_residual: f64,
    /// Relative duality gap `|pobj - dobj| / (1 + |pobj| + |dobj|)`.
    pub gap: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Normalized improving ray for infeasible statuses: `y` with
    /// `b'y = 1` (primal infeasible), or `(X, x)` with `<C,X> + c'x = -1`
    /// (dual infeasible).
    pub certificate: Option<Certificate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Certificate {
    /// `b'y = 1`, `A_f'y = 0`, `-A*(y)` PSD (up to the reported violation).
    DualRay { y: Vec<f64>, violation: f64 },
    /// `A(X) + A_f x = 0`, `X` PSD, `<C,X> + c'x = -1` (up to the reported violation).
    PrimalRay {
        x_blocks: Vec<DMatrix<f64>>,
        x_free: Vec<f64>,
        violation: f64,
    },
}

impl SdpSolution {
    /// Solver log in the line format `iter, mu, gap, pres, dres, step`.
    pub fn trace_text(&self) -> String {
        let mut s = String::from("iter, mu, gap, pres, dres, step\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{}, {:.6e}, {:.6e}, {:.6e}, {:.6e}, {:.6e}\n",
                r.iter, r.mu, r.gap, r.pres, r.dres, r.step
            ));
        }
        s
    }

    /// Smallest eigenvalue over all primal blocks.
    pub fn min_primal_eigenvalue(&self) -> f64 {
        self.x_blocks
            .iter()
            .filter(|x| x.nrows() > 0)
            .map(|x| x.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}
