use benchsim_core::liesym::{default_grids, invert_joint_density, JointDensityGrid};
use benchsim_core::processes::{cir_transition_density, SquareRootParams};
use serde_json::{json, Value};

use crate::args::DensityArgs;
use crate::config::{Format, ModelConfig, RunConfig};
use crate::error::CliError;
use crate::output::{OutDir, Provenance};

pub fn apply_overrides(cfg: &mut RunConfig, args: &DensityArgs) {
    if let Some(n) = args.ny {
        cfg.grid.ny = n;
    }
    if let Some(n) = args.nv {
        cfg.grid.nv = n;
    }
}

/// Largest relative gap between the grid's `Y_T` marginal and the exact
/// transition density, over levels above `1e-3` of the peak.
pub fn marginal_error(g: &JointDensityGrid) -> Result<f64, CliError> {
    let p = SquareRootParams::new(1.0, g.eta, 1.0, g.x)?;
    let exact: Vec<f64> = g.y_grid.iter().map(|&y| cir_transition_density(&p, g.x, y, g.horizon)).collect::<Result<_, _>>()?;
    let peak = exact.iter().cloned().fold(0.0, f64::max);
    Ok(g.y_marginal().iter().zip(&exact).filter(|(_, e)| **e > 1e-3 * peak).map(|(m, e)| ((m - e) / e).abs()).fold(0.0, f64::max))
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let ModelConfig::Mmm(p) = &cfg.model else {
        return Err(CliError::config("density needs the mmm model"));
    };
    p.validate()?;
    let (x, t, eta) = (p.y0(), cfg.payoff.maturity, p.eta);
    let (yg, vg) = default_grids(x, t, eta, cfg.grid.ny, cfg.grid.nv)?;
    let g = invert_joint_density(x, t, eta, &cfg.inversion, &yg, &vg)?;
    let prov = Provenance::new("density", cfg, None, "none (deterministic inversion)");
    let out = OutDir::create(&cfg.output.dir)?;
    let files = match cfg.output.format {
        Format::Csv => vec![out.write_csv("density.csv", &prov, |w| Ok(g.write_csv(w)?))?],
        Format::Json => {
            let (h, d) = (out.path("density.json"), out.path("density.bin"));
            g.write_binary(&h, &d, prov.to_json())?;
            vec![h, d]
        }
    };
    let report = json!({
        "x": x,
        "horizon": t,
        "eta": eta,
        "ny": g.y_grid.len(),
        "nv": g.v_grid.len(),
        "y_range": [g.y_grid[0], g.y_grid[g.y_grid.len() - 1]],
        "v_range": [g.v_grid[0], g.v_grid[g.v_grid.len() - 1]],
        "total_mass": g.total_mass(),
        "y_marginal_max_rel_error": marginal_error(&g)?,
        "mean_v": g.expectation(|_, v| v),
    });
    let report_file = out.write_json("density_report.json", &prov, report.clone())?;
    let mut all = files;
    all.push(report_file);
    Ok(json!({ "report": report, "files": all }))
}
