use benchsim_core::liesym::{default_grids, invert_joint_density};
use benchsim_core::mlmc::VolPayoff;
use benchsim_core::pricing::{
    fx_call_quadrature, price_terminal_quadrature, price_vol_option, real_world_price, Estimate, Method, Model, PayoffKind, VolMethod, VolOption,
};
use benchsim_core::randkit::domains;
use serde_json::{json, Value};

use crate::args::{PayoffArg, PriceArgs};
use crate::config::{Format, MethodName, ModelConfig, RunConfig};
use crate::error::CliError;
use crate::output::{csv_rows, num, stream_layout, OutDir, Provenance};

pub fn apply_overrides(cfg: &mut RunConfig, args: &PriceArgs) {
    if let Some(p) = args.payoff {
        cfg.set_payoff_kind(match p {
            PayoffArg::IndexCall => PayoffKind::EuCallOnIndex,
            PayoffArg::IndexPut => PayoffKind::EuPutOnIndex,
            PayoffArg::Zcb => PayoffKind::Zcb,
            PayoffArg::VolPut => PayoffKind::VolPut,
            PayoffArg::VolCall => PayoffKind::VolCall,
            PayoffArg::FxCall => PayoffKind::FxCall,
        });
    }
    if let Some(e) = args.eps {
        cfg.mlmc.eps = e;
    }
}

/// Estimator used when the configuration names none.
fn default_method(kind: PayoffKind) -> MethodName {
    match kind {
        PayoffKind::VolPut | PayoffKind::VolCall => MethodName::Quadrature,
        _ => MethodName::Mc,
    }
}

pub fn estimate(cfg: &RunConfig) -> Result<(Estimate, MethodName), CliError> {
    let spec = &cfg.payoff;
    spec.validate()?;
    let method = cfg.method.unwrap_or_else(|| default_method(spec.kind));
    let unsupported = || CliError::config(format!("method {method:?} is not available for payoff {:?} on this model", spec.kind));
    let est = match (&cfg.model, spec.kind) {
        (ModelConfig::Wishart(_), _) => return Err(CliError::config("pricing needs the mmm or bivariate model")),
        (ModelConfig::Mmm(p), PayoffKind::VolPut | PayoffKind::VolCall) => {
            let kind = if spec.kind == PayoffKind::VolPut { VolOption::Put } else { VolOption::Call };
            let payoff = VolPayoff { kind, strike: spec.strike, maturity: spec.maturity };
            match method {
                MethodName::Quadrature => {
                    let (yg, vg) = default_grids(p.y0(), spec.maturity, p.eta, cfg.grid.ny, cfg.grid.nv)?;
                    let grid = invert_joint_density(p.y0(), spec.maturity, p.eta, &cfg.inversion, &yg, &vg)?;
                    price_vol_option(p, payoff, VolMethod::Quadrature(&grid))?
                }
                MethodName::Mlmc => price_vol_option(p, payoff, VolMethod::Mlmc { cfg: &cfg.mlmc, seed: cfg.mc.seed })?,
                MethodName::Mc => return Err(unsupported()),
            }
        }
        (ModelConfig::Mmm(p), PayoffKind::EuCallOnIndex | PayoffKind::EuPutOnIndex | PayoffKind::Zcb) => match method {
            MethodName::Mc => real_world_price(&Model::Mmm(*p), spec, &cfg.mc)?,
            MethodName::Quadrature => price_terminal_quadrature(p, spec)?,
            MethodName::Mlmc => return Err(unsupported()),
        },
        (ModelConfig::Bivariate(p), PayoffKind::FxCall) => match method {
            MethodName::Mc => real_world_price(&Model::Bivariate(*p), spec, &cfg.mc)?,
            MethodName::Quadrature => Estimate::exact(fx_call_quadrature(p, spec.strike, spec.maturity)?, Method::Quadrature),
            MethodName::Mlmc => return Err(unsupported()),
        },
        (ModelConfig::Bivariate(p), PayoffKind::EuCallOnIndex | PayoffKind::EuPutOnIndex | PayoffKind::Zcb) => match method {
            MethodName::Mc => real_world_price(&Model::Bivariate(*p), spec, &cfg.mc)?,
            _ => return Err(unsupported()),
        },
        (ModelConfig::Mmm(_), PayoffKind::FxCall) => return Err(CliError::config("fx_call needs the bivariate model")),
        (ModelConfig::Bivariate(_), _) | (ModelConfig::Mmm(_), _) => return Err(unsupported()),
    };
    Ok((est, method))
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let (est, method) = estimate(cfg)?;
    let (seed, layout) = match method {
        MethodName::Quadrature => (None, "none (deterministic quadrature)".to_string()),
        MethodName::Mlmc => (Some(cfg.mc.seed), stream_layout(domains::MLMC, "level << 48 | sample index")),
        MethodName::Mc => {
            let domain = if matches!(cfg.model, ModelConfig::Bivariate(_)) { domains::BIVARIATE } else { domains::GOP_PATH };
            (Some(cfg.mc.seed), stream_layout(domain, "path index (antithetic pairs share a stream)"))
        }
    };
    let prov = Provenance::new("price", cfg, seed, layout);
    let out = OutDir::create(&cfg.output.dir)?;
    let result = serde_json::to_value(&est)?;
    let estimate_file = match cfg.output.format {
        Format::Json => out.write_json("price.json", &prov, result.clone())?,
        Format::Csv => out.write_csv("price.csv", &prov, |w| ledger(w, cfg, &est))?,
    };
    let ledger_file = out.write_csv("ledger.csv", &prov, |w| ledger(w, cfg, &est))?;
    Ok(json!({ "estimate": result, "files": [estimate_file, ledger_file] }))
}

fn ledger(w: &mut dyn std::io::Write, cfg: &RunConfig, e: &Estimate) -> Result<(), CliError> {
    let kind = serde_json::to_value(cfg.payoff.kind)?.as_str().unwrap_or_default().to_string();
    let method = serde_json::to_value(e.method)?.as_str().unwrap_or_default().to_string();
    let row = vec![
        kind,
        num(cfg.payoff.strike),
        num(cfg.payoff.maturity),
        method,
        num(e.value),
        num(e.std_error),
        num(e.ci_low),
        num(e.ci_high),
        e.n_samples.to_string(),
        e.seed.map_or_else(String::new, |s| s.to_string()),
        e.warnings.join("; "),
    ];
    csv_rows(w, &["payoff", "strike", "maturity", "method", "value", "std_error", "ci_low", "ci_high", "n_samples", "seed", "warnings"], [row])
}
