//! Command-line front end: configuration resolution, commands and output
//! files with provenance.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;

use serde_json::Value;

use args::{Cli, Command, CommonArgs};
use config::{ModelConfig, ModelFamily, RunConfig};
use error::CliError;

/// Loads `--config`, else `--preset`, else the stylized preset, then applies
/// the shared flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset("stylized")?,
    };
    if let Some(f) = common.model {
        cfg.ensure_family(f);
    }
    if let Some(rho) = common.rho {
        cfg.ensure_family(ModelFamily::Bivariate);
        if let ModelConfig::Bivariate(p) = &mut cfg.model {
            p.rho = rho;
        }
    }
    if let Some(s) = common.seed {
        cfg.mc.seed = s;
    }
    if let Some(n) = common.paths {
        cfg.mc.n_paths = n;
    }
    if let Some(m) = common.method {
        cfg.method = Some(m);
    }
    if let Some(d) = &common.out {
        cfg.output.dir = d.clone();
    }
    if let Some(f) = common.format {
        cfg.output.format = f;
    }
    if let Some(t) = common.maturity {
        cfg.payoff.maturity = t;
    }
    if let Some(k) = common.strike {
        cfg.payoff.strike = k;
    }
    Ok(cfg)
}

/// Runs one command and returns its stdout summary.
pub fn execute(cli: &Cli) -> Result<Value, CliError> {
    if let Command::Schema = cli.command {
        return Ok(serde_json::from_str(config::SCHEMA)?);
    }
    let mut cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Simulate(a) => {
            commands::simulate::apply_overrides(&mut cfg, a);
            commands::simulate::run(&cfg)
        }
        Command::Price(a) => {
            commands::price::apply_overrides(&mut cfg, a);
            commands::price::run(&cfg)
        }
        Command::Density(a) => {
            commands::density::apply_overrides(&mut cfg, a);
            commands::density::run(&cfg)
        }
        Command::CheckSymmetry(a) => commands::symmetry::run(&cfg, a),
        Command::Validate(a) => {
            let v = commands::validate::run(&cfg, a.suite)?;
            let failures = v["report"]["failures"].as_u64().unwrap_or(0);
            if failures > 0 {
                let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v)?);
                return Err(CliError::Failed(format!("{failures} validation check(s) failed")));
            }
            Ok(v)
        }
        Command::Schema => unreachable!("handled above"),
    }
}
