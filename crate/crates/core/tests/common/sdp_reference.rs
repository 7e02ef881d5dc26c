//! Random strictly feasible SDPs and an independent log-barrier
//! reference solver for them.

use densopt_core::sdp::{LinearForm, MatEntry, SdpProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ent(block: usize, row: usize, col: usize, value: f64) -> MatEntry {
    MatEntry { block, row, col, value }
}

pub struct Random {
    pub problem: SdpProblem,
    pub y0: Vec<f64>,
}

/// Strictly feasible random SDP: `b = A(X0)` with `X0` PD and
/// `C = A*(y0) + S0` with `S0` PD.
pub fn random_sdp(seed: u64) -> Random {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nblocks = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..nblocks).map(|_| rng.gen_range(1..=10)).collect();
    let svec: usize = sizes.iter().map(|n| n * (n + 1) / 2).sum();
    let m = rng.gen_range(1..=50usize.min(svec));
    let mut cons = Vec::new();
    for _ in 0..m {
        let mut f = LinearForm::default();
        for (b, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                for j in i..n {
                    if rng.gen_bool(0.4) {
                        f.mat.push(ent(b, i, j, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
        }
        cons.push(f);
    }
    let pd = |rng: &mut ChaCha8Rng, n: usize| {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        DMatrix::identity(n, n) * 0.5 + &g * g.transpose() / n as f64
    };
    let x0: Vec<DMatrix<f64>> = sizes.iter().map(|&n| pd(&mut rng, n)).collect();
    let rhs: Vec<f64> = cons.iter().map(|c| c.apply(&x0, &[])).collect();
    let y0: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut c = LinearForm::default();
    for (b, &n) in sizes.iter().enumerate() {
        let s0 = pd(&mut rng, n);
        for i in 0..n {
            for j in i..n {
                c.mat.push(ent(b, i, j, s0[(i, j)]));
            }
        }
    }
    for (f, &y) in cons.iter().zip(&y0) {
        for e in &f.mat {
            c.mat.push(ent(e.block, e.row, e.col, y * e.value));
        }
    }
    Random {
        problem: SdpProblem::new(sizes, 0, c, cons, rhs).unwrap(),
        y0,
    }
}

fn dense_forms(p: &SdpProblem) -> (Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>) {
    let dense = |f: &LinearForm| {
        let mut out: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for e in &f.mat {
            out[e.block][(e.row, e.col)] += e.value;
            if e.row != e.col {
                out[e.block][(e.col, e.row)] += e.value;
            }
        }
        out
    };
    (dense(&p.objective), p.constraints.iter().map(dense).collect())
}

/// Reference optimum: maximize `t b'y + log det(C - A*(y))` by damped
/// Newton for increasing `t`, starting from the strictly feasible `y0`.
pub fn barrier_reference(p: &SdpProblem, y0: &[f64]) -> f64 {
    let (c, a) = dense_forms(p);
    let m = a.len();
    let slack = |y: &DVector<f64>| -> Vec<DMatrix<f64>> {
        c.iter()
            .enumerate()
            .map(|(b, cb)| {
                let mut s = cb.clone();
                for i in 0..m {
                    s -= &a[i][b] * y[i];
                }
                s
            })
            .collect()
    };
    let phi = |t: f64, y: &DVector<f64>| -> Option<f64> {
        let mut v = t * p.rhs.iter().zip(y.iter()).map(|(b, y)| b * y).sum::<f64>();
        for s in slack(y) {
            let ch = s.cholesky()?;
            v += 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    };
    let mut y = DVector::from_column_slice(y0);
    let mut t = 1.0;
    while t < 1e12 {
        for _ in 0..200 {
            let s = slack(&y);
            let sinv: Vec<DMatrix<f64>> = s.iter().map(|s| s.clone().cholesky().unwrap().inverse()).collect();
            let mut grad = DVector::from_column_slice(&p.rhs) * t;
            let mut hess = DMatrix::zeros(m, m);
            let prods: Vec<Vec<DMatrix<f64>>> = (0..m)
                .map(|i| sinv.iter().enumerate().map(|(b, si)| si * &a[i][b]).collect())
                .collect();
            for i in 0..m {
                grad[i] -= prods[i].iter().map(|x| x.trace()).sum::<f64>();
                for k in 0..=i {
                    let v: f64 = prods[i].iter().zip(&prods[k]).map(|(x, z)| (x * z).trace()).sum();
                    hess[(i, k)] = v;
                    hess[(k, i)] = v;
                }
            }
            let Some(dy) = hess.clone().lu().solve(&grad) else {
                break;
            };
            let dec = grad.dot(&dy);
            if dec < 1e-14 {
                break;
            }
            let f0 = phi(t, &y).unwrap();
            let mut step = 1.0;
            loop {
                let cand = &y + &dy * step;
                if let Some(f) = phi(t, &cand) {
                    if f >= f0 + 0.25 * step * dec {
                        y = cand;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-20 {
                    break;
                }
            }
        }
        t *= 4.0;
    }
    p.rhs.iter().zip(y.iter()).map(|(b, y)| b * y).sum()
}
