//! Problem configs: a TOML file with polynomial strings in `x1..xn`.

use densopt_core::polynomial::{PolyVector, Polynomial};
use densopt_core::semialgebraic::SemialgebraicSet;
use densopt_core::synthesis::{auto_m, OcpProblem, SynthesisConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

/// Relative tolerance for a manual scaling to count as the normalizing map.
const SCALING_MATCH: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn field_err(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dynamics: Dynamics,
    pub state_set: StateSet,
    pub inputs: Inputs,
    pub costs: Costs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// Drift, one polynomial per state.
    pub f: Vec<String>,
    /// Input fields, one vector per input.
    pub f_u: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { bounds: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExitCost {
    Value(f64),
    /// Only `"auto"` is accepted.
    Auto(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Costs {
    pub l_x: String,
    pub l_u: Vec<String>,
    pub beta: f64,
    #[serde(rename = "M")]
    pub exit_cost: ExitCost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0_bar: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scaling {
    Auto,
    /// `x = Q y + q`; must agree with the map derived from the state set.
    Manual {
        q_mat: Vec<Vec<f64>>,
        q_vec: Vec<f64>,
    },
}

/// A config turned into a problem, with the exit cost resolved.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub problem: OcpProblem,
    pub exit_cost_auto: bool,
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ProblemConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(field_err("version", format!("unsupported version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n(&self) -> usize {
        self.dynamics.f.len()
    }

    fn poly(&self, field: String, text: &str) -> Result<Polynomial, ConfigError> {
        Polynomial::parse(text, self.n()).map_err(|e| field_err(field, e))
    }

    fn vector(&self, field: &str, comps: &[String]) -> Result<PolyVector, ConfigError> {
        if comps.len() != self.n() {
            return Err(field_err(
                field,
                format!("{} components for {} states", comps.len(), self.n()),
            ));
        }
        let ps = comps
            .iter()
            .enumerate()
            .map(|(i, c)| self.poly(format!("{field}[{i}]"), c))
            .collect::<Result<Vec<_>, _>>()?;
        PolyVector::new(ps).map_err(|e| field_err(field, e))
    }

    fn state_set(&self) -> Result<SemialgebraicSet, ConfigError> {
        let n = self.n();
        let set = match &self.state_set {
            StateSet::Ball { center, radius } => {
                if center.len() != n {
                    return Err(field_err(
                        "state_set.center",
                        format!("length {} for {n} states", center.len()),
                    ));
                }
                SemialgebraicSet::ball(center.clone(), *radius)
            }
            StateSet::Box { bounds } => {
                if bounds.len() != n {
                    return Err(field_err(
                        "state_set.bounds",
                        format!("{} intervals for {n} states", bounds.len()),
                    ));
                }
                SemialgebraicSet::boxed(bounds.iter().map(|b| (b[0], b[1])).collect())
            }
        };
        set.map_err(|e| field_err("state_set", e))
    }

    fn check_scaling(&self, set: &SemialgebraicSet) -> Result<(), ConfigError> {
        let Some(Scaling::Manual { q_mat, q_vec }) = &self.scaling else {
            return Ok(());
        };
        let auto = set.normalizing_map();
        let close = |a: f64, b: f64| (a - b).abs() <= SCALING_MATCH * (1.0 + a.abs().max(b.abs()));
        let same = q_mat.len() == auto.q_mat.len()
            && q_mat
                .iter()
                .zip(&auto.q_mat)
                .all(|(r, s)| r.len() == s.len() && r.iter().zip(s).all(|(a, b)| close(*a, *b)))
            && q_vec.len() == auto.q_vec.len()
            && q_vec.iter().zip(&auto.q_vec).all(|(a, b)| close(*a, *b));
        if same {
            Ok(())
        } else {
            Err(field_err(
                "scaling",
                format!(
                    "manual map must equal the normalizing map of the state set (Q = {:?}, q = {:?})",
                    auto.q_mat, auto.q_vec
                ),
            ))
        }
    }

    /// Builds the problem; `M = "auto"` is resolved with `settings`.
    pub fn resolve(&self, settings: &SynthesisConfig) -> Result<Resolved, ConfigError> {
        let n = self.n();
        if n == 0 {
            return Err(field_err("dynamics.f", "no states"));
        }
        let m = self.dynamics.f_u.len();
        if self.inputs.bounds.len() != m {
            return Err(field_err(
                "inputs.bounds",
                format!("{} intervals for {m} inputs", self.inputs.bounds.len()),
            ));
        }
        if self.costs.l_u.len() != m {
            return Err(field_err(
                "costs.l_u",
                format!("{} costs for {m} inputs", self.costs.l_u.len()),
            ));
        }
        let drift = self.vector("dynamics.f", &self.dynamics.f)?;
        let input_fields = self
            .dynamics
            .f_u
            .iter()
            .enumerate()
            .map(|(i, f)| self.vector(&format!("dynamics.f_u[{i}]"), f))
            .collect::<Result<Vec<_>, _>>()?;
        let state_set = self.state_set()?;
        self.check_scaling(&state_set)?;
        let l_x = self.poly("costs.l_x".into(), &self.costs.l_x)?;
        let l_u = self
            .costs
            .l_u
            .iter()
            .enumerate()
            .map(|(i, l)| self.poly(format!("costs.l_u[{i}]"), l))
            .collect::<Result<Vec<_>, _>>()?;
        let rho0_bar = self.poly("costs.rho0_bar".into(), self.costs.rho0_bar.as_deref().unwrap_or("1"))?;
        let (exit_cost, auto) = match &self.costs.exit_cost {
            ExitCost::Value(v) => (*v, false),
            ExitCost::Auto(s) if s == "auto" => (f64::NAN, true),
            ExitCost::Auto(s) => {
                return Err(field_err(
                    "costs.M",
                    format!("expected a number or \"auto\", got {s:?}"),
                ))
            }
        };
        let mut problem = OcpProblem {
            drift,
            input_fields,
            state_set,
            input_bounds: self.inputs.bounds.iter().map(|b| (b[0], b[1])).collect(),
            l_x,
            l_u,
            beta: self.costs.beta,
            exit_cost,
            rho0_bar,
        };
        if auto {
            problem.exit_cost = 1.0;
            problem.exit_cost = auto_m(&problem, settings).map_err(|e| field_err("costs.M", e))?;
        }
        problem.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Resolved {
            problem,
            exit_cost_auto: auto,
        })
    }
}
