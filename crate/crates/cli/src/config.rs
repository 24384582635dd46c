//! Layered defaults: the checked-in `defaults.toml`, then an optional user
//! file, then command-line flags.

use std::path::Path;

use serde::Deserialize;
use tvflow_core::flow::RofSolver;

use crate::error::CliError;

const BUILTIN: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Implicit,
    Explicit,
    Lagged,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Implicit => "implicit",
            Scheme::Explicit => "explicit",
            Scheme::Lagged => "lagged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Pdhg,
    Chambolle,
}

impl Solver {
    pub fn core(self) -> RofSolver {
        match self {
            Solver::Pdhg => RofSolver::Pdhg,
            Solver::Chambolle => RofSolver::Chambolle,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::Pdhg => "pdhg",
            Solver::Chambolle => "chambolle",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDefaults {
    pub scheme: Scheme,
    pub solver: Solver,
    pub t_end: f64,
    pub nt: usize,
    pub substeps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eps: f64,
    pub explicit_dt: f64,
    pub lagged_dt: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceTimeDefaults {
    pub nt: usize,
    pub t_end: f64,
    pub lr: f64,
    pub epochs: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps_tv: f64,
    pub phi_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDefaults {
    pub t_end: f64,
    pub nt: usize,
    pub eigen_t_end: f64,
    pub eigen_nt: usize,
    pub homogeneity_c: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDefaults {
    pub size: usize,
    pub background: f64,
    pub contrast: f64,
    pub random_shapes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub flow: FlowDefaults,
    pub spacetime: SpaceTimeDefaults,
    pub eval: EvalDefaults,
    pub gen: GenDefaults,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Defaults {
    pub fn builtin() -> Self {
        toml::from_str(BUILTIN).expect("checked-in defaults parse")
    }

    /// Built-in defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(BUILTIN).expect("checked-in defaults parse");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            let user: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            merge(&mut table, user);
        }
        toml::Value::Table(table).try_into().map_err(|e| CliError::config(format!("config: {e}")))
    }
}
