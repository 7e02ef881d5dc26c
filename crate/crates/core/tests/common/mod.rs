#![allow(dead_code)]

pub mod sdp_reference;

use densopt_core::polynomial::{PolyVector, Polynomial};
use densopt_core::semialgebraic::SemialgebraicSet;
use densopt_core::synthesis::{auto_m, OcpProblem, SynthesisConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn p(text: &str, n: usize) -> Polynomial {
    Polynomial::parse(text, n).unwrap()
}

pub fn field(comps: &[&str], n: usize) -> PolyVector {
    PolyVector::new(comps.iter().map(|c| p(c, n)).collect()).unwrap()
}

pub fn double_integrator() -> OcpProblem {
    OcpProblem {
        drift: field(&["x2 + 0.1*x1^3", "0"], 2),
        input_fields: vec![field(&["0", "0.3"], 2)],
        state_set: SemialgebraicSet::ball(vec![0.0, 0.0], 1.0).unwrap(),
        input_bounds: vec![(-1.0, 1.0)],
        l_x: p("x1^2 + x2^2", 2),
        l_u: vec![p("0", 2)],
        beta: 1.0,
        exit_cost: 1.01,
        rho0_bar: p("1", 2),
    }
}

/// xdot = u on [-1, 1], u in [-1, 1], l = x^2.
pub fn scalar() -> OcpProblem {
    OcpProblem {
        drift: field(&["0"], 1),
        input_fields: vec![field(&["1"], 1)],
        state_set: SemialgebraicSet::boxed(vec![(-1.0, 1.0)]).unwrap(),
        input_bounds: vec![(-1.0, 1.0)],
        l_x: p("x1^2", 1),
        l_u: vec![p("0", 1)],
        beta: 1.0,
        exit_cost: 1.01,
        rho0_bar: p("1", 1),
    }
}

/// Exact value of the scalar problem: drive to the origin at full speed.
pub fn scalar_value(x: f64) -> f64 {
    // int_0^a e^{-t} (a - t)^2 dt
    let a = x.abs();
    a * a - 2.0 * a + 2.0 - 2.0 * (-a).exp()
}

/// xdot = -x on [-1, 1], no inputs that matter, l = x^2.
pub fn decay() -> OcpProblem {
    OcpProblem {
        drift: field(&["-x1"], 1),
        input_fields: vec![field(&["0"], 1)],
        state_set: SemialgebraicSet::boxed(vec![(-1.0, 1.0)]).unwrap(),
        input_bounds: vec![(0.0, 1.0)],
        l_x: p("x1^2", 1),
        l_u: vec![p("0", 1)],
        beta: 1.0,
        exit_cost: 1.01,
        rho0_bar: p("1", 1),
    }
}

/// Value iteration for the scalar problem on a uniform grid of `points`
/// nodes over [-1, 1] with time step equal to the grid spacing, so every
/// move u in {-1, 0, 1} lands on a node. Leaving X costs `exit`.
pub fn scalar_value_iteration(points: usize, exit: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|j| -1.0 + h * j as f64).collect();
    let disc = (-h).exp();
    let mut v = vec![0.0; points];
    loop {
        let mut change: f64 = 0.0;
        let next: Vec<f64> = (0..points)
            .map(|j| {
                // int_0^h e^{-t} x^2 dt with x frozen over the step
                let run = xs[j] * xs[j] * (1.0 - disc);
                let stay = v[j];
                let left = if j == 0 { exit } else { v[j - 1] };
                let right = if j + 1 == points { exit } else { v[j + 1] };
                run + disc * stay.min(left).min(right)
            })
            .collect();
        for (a, b) in next.iter().zip(&v) {
            change = change.max((a - b).abs());
        }
        v = next;
        if change < 1e-12 {
            break;
        }
    }
    (xs, v)
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

/// Random polynomial OCP with n <= 2, cubic dynamics, one input.
pub fn random_problem(rng: &mut ChaCha8Rng) -> OcpProblem {
    let n = rng.gen_range(1..=2);
    let monomials: &[&str] = if n == 1 {
        &["x1", "x1^2", "x1^3"]
    } else {
        &["x1", "x2", "x1*x2", "x2^2", "x1^3", "x1*x2^2"]
    };
    let mut comp = || {
        let mut s = String::from("0");
        for m in monomials {
            if rng.gen_bool(0.5) {
                s.push_str(&format!(" + {:.3}*{m}", rng.gen_range(0.05..1.0)));
            }
        }
        s
    };
    let drift: Vec<String> = (0..n).map(|_| comp()).collect();
    let gain: Vec<String> = (0..n).map(|_| comp()).collect();
    let state_set = if rng.gen_bool(0.5) {
        SemialgebraicSet::ball(vec![0.0; n], rng.gen_range(0.5..2.0)).unwrap()
    } else {
        SemialgebraicSet::boxed(vec![(-1.0, rng.gen_range(0.5..1.5)); n]).unwrap()
    };
    let l_x = if n == 1 { "x1^2" } else { "x1^2 + x2^2" };
    let mut prob = OcpProblem {
        drift: field(&refs(&drift), n),
        input_fields: vec![field(&refs(&gain), n)],
        state_set,
        input_bounds: vec![(-1.0, 1.0)],
        l_x: p(l_x, n),
        l_u: vec![p("0", n)],
        beta: 1.0,
        exit_cost: 1.0,
        rho0_bar: p("1", n),
    };
    prob.exit_cost = auto_m(&prob, &SynthesisConfig::default()).unwrap();
    prob
}
