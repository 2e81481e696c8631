//! Plain-text `key=value` configuration files for the optimizer.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! rejected so typos surface immediately.

use std::path::Path;

use thiserror::Error;

use crate::excess::LocationLink;
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

pub fn apply_config_file(cfg: &mut OptimizerConfig, path: &Path) -> Result<(), ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    apply_config_str(cfg, &raw)
}

pub fn apply_config_str(cfg: &mut OptimizerConfig, raw: &str) -> Result<(), ConfigError> {
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Line {
            line: line_no,
            msg: format!("expected key=value, got `{trimmed}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let fail = |msg: String| ConfigError::Line {
            line: line_no,
            msg,
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| fail(format!("bad number `{v}` for {key}")))
        };
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| fail(format!("bad count `{v}` for {key}")))
        };
        match key {
            "max_outer_iters" => cfg.max_outer_iters = parse_usize(value)?,
            "max_inner_iters" => cfg.max_inner_iters = parse_usize(value)?,
            "tol_obj" => cfg.tol_obj = parse_f64(value)?,
            "tol_param" => cfg.tol_param = parse_f64(value)?,
            "armijo_c" => cfg.armijo_c = parse_f64(value)?,
            "backtrack" => cfg.backtrack = parse_f64(value)?,
            "init_step" => cfg.init_step = parse_f64(value)?,
            "constraint_slack" => cfg.constraint_slack = parse_f64(value)?,
            "kappa" => cfg.kappa = Some(parse_f64(value)?),
            "sigma_n" => cfg.sigma_n = Some(parse_f64(value)?),
            "grid_tau_min" => cfg.grid.tau_min = Some(parse_f64(value)?),
            "grid_tau_max" => cfg.grid.tau_max = Some(parse_f64(value)?),
            "grid_points" => cfg.grid.points = parse_usize(value)?,
            "grid_refine" => cfg.grid.refine = parse_usize(value)?,
            "mu_link" => {
                cfg.mu_link = match value {
                    "identity" => LocationLink::Identity,
                    "exp" => LocationLink::Exp,
                    other => return Err(fail(format!("unknown mu_link `{other}`"))),
                }
            }
            other => return Err(fail(format!("unknown key `{other}`"))),
        }
    }
    Ok(())
}
