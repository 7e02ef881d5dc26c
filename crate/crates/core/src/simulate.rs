//! Closed-loop simulation: fixed-step RK4 with exit detection, discounted
//! cost along a trajectory and Monte-Carlo cost estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semialgebraic::{SemialgebraicSet, SetError};
use crate::synthesis::{closed_loop_field, stage_cost, OcpProblem, RationalController};
use crate::value_bounds::ValueBound;

pub const COST_REPORT_SCHEMA_VERSION: u32 = 1;

/// Tail of the discounted exit cost that the default horizon leaves out.
const TAIL: f64 = 1e-6;
/// Bisection stops once the exit bracket is below `h * EXIT_RESOLUTION`;
/// well under the `h * 1e-3` asked for, so the constraint value at the
/// exit point is small too.
const EXIT_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial state {0:?} is outside the state set")]
    Outside(Vec<f64>),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Set(#[from] SetError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub step: f64,
    /// Horizon cap; `None` picks `T` with `exp(-beta T) M <= 1e-6`.
    pub t_max: Option<f64>,
    pub exit_tol: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            t_max: None,
            exit_tol: 1e-9,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::Config(format!("step must be positive, got {}", self.step)));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SimError::Config(format!("t_max must be positive, got {t}")));
            }
        }
        if !(self.exit_tol >= 0.0) {
            return Err(SimError::Config("exit tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn horizon(&self, beta: f64, exit_cost: f64) -> f64 {
        self.t_max.unwrap_or_else(|| {
            let t = (exit_cost.max(TAIL) / TAIL).ln() / beta;
            t.max(self.step)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitFlag {
    /// Stayed in X up to the horizon.
    Horizon,
    Exited,
    /// The state stopped being finite.
    BlowUp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// `f64::INFINITY` unless the trajectory left X.
    pub exit_time: f64,
    pub exit_flag: ExitFlag,
    pub horizon: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=m).map(|i| format!("u{i}")));
        let mut out = head.join(",");
        out.push('\n');
        for k in 0..self.times.len() {
            let mut row = vec![format!("{:?}", self.times[k])];
            row.extend(self.states[k].iter().map(|v| format!("{v:?}")));
            row.extend(self.inputs[k].iter().map(|v| format!("{v:?}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn rk4<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let shift = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> { base.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(x);
    let k2 = f(&shift(x, &k1, h / 2.0));
    let k3 = f(&shift(x, &k2, h / 2.0));
    let k4 = f(&shift(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Integrates `x' = field(x).0` from `x0`, recording `field(x).1` as the
/// input. Stops at the first step that leaves `set` and bisects it.
pub fn integrate_field<F>(
    set: &SemialgebraicSet,
    field: F,
    x0: &[f64],
    horizon: f64,
    cfg: &SimConfig,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
{
    cfg.validate()?;
    if !set.contains(x0, cfg.exit_tol) {
        return Err(SimError::Outside(x0.to_vec()));
    }
    let h = cfg.step;
    let dyn_only = |x: &[f64]| field(x).0;
    let mut times = vec![0.0];
    let mut states = vec![x0.to_vec()];
    let mut inputs = vec![field(x0).1];
    let mut x = x0.to_vec();
    // guard against 1.0 / 1e-3 rounding up to 1001 steps
    let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
    let mut exit_time = f64::INFINITY;
    let mut flag = ExitFlag::Horizon;
    for k in 0..steps {
        let t = k as f64 * h;
        let step = if k + 1 == steps { horizon - t } else { h };
        let next = rk4(&dyn_only, &x, step);
        if !finite(&next) {
            flag = ExitFlag::BlowUp;
            break;
        }
        if set.contains(&next, cfg.exit_tol) {
            x = next;
            times.push(t + step);
            inputs.push(field(&x).1);
            states.push(x.clone());
            continue;
        }
        let (mut lo, mut hi) = (0.0, step);
        while hi - lo > h * EXIT_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            if set.contains(&rk4(&dyn_only, &x, mid), cfg.exit_tol) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // midpoint sample keeps the last panel a Simpson pair
        for s in [0.5 * hi, hi] {
            let xs = rk4(&dyn_only, &x, s);
            times.push(t + s);
            inputs.push(field(&xs).1);
            states.push(xs);
        }
        exit_time = t + hi;
        flag = ExitFlag::Exited;
        break;
    }
    Ok(Trajectory {
        times,
        states,
        inputs,
        exit_time,
        exit_flag: flag,
        horizon,
    })
}

/// RK4 run of the closed loop in original coordinates.
pub fn integrate_closed_loop(
    problem: &OcpProblem,
    ctrl: &RationalController,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let horizon = cfg.horizon(problem.beta, problem.exit_cost);
    integrate_field(&problem.state_set, closed_loop_field(problem, ctrl), x0, horizon, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountedCost {
    pub value: f64,
    /// `exp(-beta T) M` when the run was truncated at the horizon.
    pub uncertainty: f64,
}

/// Composite Simpson on equal-width pairs of samples, trapezoid on a
/// leftover panel, plus the discounted exit cost.
pub fn discounted_cost(traj: &Trajectory, problem: &OcpProblem) -> DiscountedCost {
    let beta = problem.beta;
    let vals: Vec<f64> = (0..traj.times.len())
        .map(|k| (-beta * traj.times[k]).exp() * stage_cost(problem, &traj.states[k], &traj.inputs[k]))
        .collect();
    let t = &traj.times;
    let mut total = 0.0;
    let mut i = 0;
    while i + 1 < t.len() {
        let h0 = t[i + 1] - t[i];
        if i + 2 < t.len() {
            let h1 = t[i + 2] - t[i + 1];
            if (h0 - h1).abs() <= 1e-9 * h0.max(h1) {
                total += (h0 + h1) / 6.0 * (vals[i] + 4.0 * vals[i + 1] + vals[i + 2]);
                i += 2;
                continue;
            }
        }
        total += 0.5 * h0 * (vals[i] + vals[i + 1]);
        i += 1;
    }
    match traj.exit_flag {
        ExitFlag::Exited => DiscountedCost {
            value: total + (-beta * traj.exit_time).exp() * problem.exit_cost,
            uncertainty: 0.0,
        },
        _ => DiscountedCost {
            value: total,
            uncertainty: (-beta * traj.horizon).exp() * problem.exit_cost,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub schema_version: u32,
    pub initial_states: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub bounds: Vec<f64>,
    pub mean_cost: f64,
    pub mean_bound: f64,
    pub suboptimality_percent: f64,
    pub samples: usize,
    pub seed: u64,
    pub exits: usize,
    pub blow_ups: usize,
    /// Largest truncation uncertainty over the samples.
    pub max_uncertainty: f64,
    pub config: SimConfig,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Simulates `n` uniform initial states (sample `i` from the substream
/// `(seed, i)`) and compares the mean cost with the mean of `lower`.
pub fn monte_carlo_suboptimality(
    problem: &OcpProblem,
    ctrl: &RationalController,
    lower: &ValueBound,
    n: usize,
    cfg: &SimConfig,
) -> Result<CostReport> {
    if n == 0 {
        return Err(SimError::NoSamples);
    }
    cfg.validate()?;
    let runs: Vec<(Vec<f64>, f64, f64, f64, ExitFlag)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x0 = problem.state_set.sample_point(cfg.seed, i as u64)?;
            let traj = integrate_closed_loop(problem, ctrl, &x0, cfg)?;
            let c = discounted_cost(&traj, problem);
            let bound = lower.eval(&x0);
            Ok((x0, c.value, bound, c.uncertainty, traj.exit_flag))
        })
        .collect::<Result<_>>()?;
    let costs: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let bounds: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let mean_cost = costs.iter().sum::<f64>() / n as f64;
    let mean_bound = bounds.iter().sum::<f64>() / n as f64;
    Ok(CostReport {
        schema_version: COST_REPORT_SCHEMA_VERSION,
        mean_cost,
        mean_bound,
        suboptimality_percent: 100.0 * (mean_cost - mean_bound) / mean_bound,
        samples: n,
        seed: cfg.seed,
        exits: runs.iter().filter(|r| r.4 == ExitFlag::Exited).count(),
        blow_ups: runs.iter().filter(|r| r.4 == ExitFlag::BlowUp).count(),
        max_uncertainty: runs.iter().map(|r| r.3).fold(0.0, f64::max),
        initial_states: runs.into_iter().map(|r| r.0).collect(),
        costs,
        bounds,
        config: cfg.clone(),
    })
}
