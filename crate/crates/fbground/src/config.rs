//! Plain-text run configuration (TOML blocks) for the command-line tool.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::pipeline::{ParamSpec, PipelineParams, VerifyToggles};
use crate::solver::SolveConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{0}")]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub nonlinearity: NonlinearityBlock,
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub pipeline: PipelineBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityBlock {
    /// "critical" or "subcritical".
    pub kind: String,
    /// Absolute coefficient of the linear term, or...
    pub lambda: Option<f64>,
    /// ...a multiple of the principal eigenvalue.
    pub lambda_factor: Option<f64>,
    /// Absolute critical coefficient, or...
    pub kappa: Option<f64>,
    /// ...a fraction of the boundedness threshold (must lie in (0,1)
    /// unless the supercritical override is set).
    pub kappa_fraction: Option<f64>,
    /// Subcritical exponent in (2, 2*); subcritical kind only.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub eps0: f64,
    pub ratio: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub residual_tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub backtrack: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub path_samples: Option<usize>,
    pub linear_rel_tol: Option<f64>,
    pub linear_max_iters: Option<usize>,
    pub ridge_iters: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineBlock {
    /// lambda_star = factor * lambda1 (default 1.25).
    pub lambda_star_factor: Option<f64>,
    /// Override for M in the compactness threshold.
    pub m_override: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub fbc: bool,
    pub nondegeneracy: bool,
    pub bounds: bool,
    pub sandwich: bool,
    /// Optional refined node counts for the flux verification.
    pub fbc_refine: Option<Vec<usize>>,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock {
            fbc: true,
            nondegeneracy: true,
            bounds: true,
            sandwich: true,
            fbc_refine: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub lambda_factors: Vec<f64>,
    pub kappa_fractions: Vec<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read(format!("{path:?}: {e}")))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match self.nonlinearity.kind.as_str() {
            "critical" => {}
            "subcritical" => {
                if self.nonlinearity.p.is_none() {
                    return Err(ConfigError::Invalid(
                        "subcritical kind needs an exponent p".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown nonlinearity kind {other:?} (expected critical or subcritical)"
                )))
            }
        }
        if self.nonlinearity.lambda.is_none() && self.nonlinearity.lambda_factor.is_none() {
            return Err(ConfigError::Invalid(
                "nonlinearity needs lambda or lambda_factor".into(),
            ));
        }
        if self.nonlinearity.kappa.is_none() && self.nonlinearity.kappa_fraction.is_none() {
            return Err(ConfigError::Invalid(
                "nonlinearity needs kappa or kappa_fraction".into(),
            ));
        }
        if self.schedule.steps == 0 {
            return Err(ConfigError::Invalid("empty schedule".into()));
        }
        if !(self.schedule.eps0 > 0.0) || !(self.schedule.ratio > 0.0 && self.schedule.ratio < 1.0)
        {
            return Err(ConfigError::Invalid(
                "schedule needs eps0 > 0 and ratio in (0,1)".into(),
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.lambda_factors.is_empty() || sweep.kappa_fractions.is_empty() {
                return Err(ConfigError::Invalid("sweep grid is empty".into()));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, ConfigError> {
        Ok(Grid::new(
            self.grid.dim,
            &self.grid.extents,
            &self.grid.nodes,
        )?)
    }

    pub fn solve_config(&self) -> SolveConfig {
        let d = SolveConfig::default();
        SolveConfig {
            residual_tol: self.solver.residual_tol.unwrap_or(d.residual_tol),
            max_newton: self.solver.max_newton.unwrap_or(d.max_newton),
            backtrack: self.solver.backtrack.unwrap_or(d.backtrack),
            max_sweeps: self.solver.max_sweeps.unwrap_or(d.max_sweeps),
            path_samples: self.solver.path_samples.unwrap_or(d.path_samples),
            linear_rel_tol: self.solver.linear_rel_tol.unwrap_or(d.linear_rel_tol),
            linear_max_iters: self.solver.linear_max_iters.unwrap_or(d.linear_max_iters),
            ridge_iters: self.solver.ridge_iters.unwrap_or(d.ridge_iters),
        }
    }

    pub fn pipeline_params(&self, allow_supercritical: bool) -> Result<PipelineParams, ConfigError> {
        let lambda = match (self.nonlinearity.lambda, self.nonlinearity.lambda_factor) {
            (Some(v), None) => ParamSpec::Absolute(v),
            (None, Some(f)) => ParamSpec::Factor(f),
            _ => {
                return Err(ConfigError::Invalid(
                    "specify exactly one of lambda / lambda_factor".into(),
                ))
            }
        };
        let kappa = match (self.nonlinearity.kappa, self.nonlinearity.kappa_fraction) {
            (Some(v), None) => ParamSpec::Absolute(v),
            (None, Some(f)) => {
                if !(f > 0.0 && f < 1.0) && !allow_supercritical {
                    return Err(ConfigError::Invalid(format!(
                        "kappa_fraction {f} outside (0,1); pass --allow-supercritical-kappa to override"
                    )));
                }
                ParamSpec::Factor(f)
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "specify exactly one of kappa / kappa_fraction".into(),
                ))
            }
        };
        Ok(PipelineParams {
            lambda,
            kappa,
            subcritical_p: if self.nonlinearity.kind == "subcritical" {
                self.nonlinearity.p
            } else {
                None
            },
            lambda_star_factor: self.pipeline.lambda_star_factor.unwrap_or(1.25),
            m_override: self.pipeline.m_override,
            eps0: self.schedule.eps0,
            ratio: self.schedule.ratio,
            steps: self.schedule.steps,
            allow_supercritical,
            cfg: self.solve_config(),
        })
    }

    pub fn verify_toggles(&self) -> VerifyToggles {
        VerifyToggles {
            fbc: self.verify.fbc,
            nondegeneracy: self.verify.nondegeneracy,
            bounds: self.verify.bounds,
            sandwich: self.verify.sandwich,
        }
    }
}
