use benchsim_core::processes::mmm_gop_path;
use benchsim_core::randkit::{domains, par_sample};
use benchsim_core::stats::mean_and_se;
use benchsim_core::wishart::{require_solution, wishart_bm_transition, wishart_euler_step, wishart_ou_path, write_matrix_paths_csv, BivariateSampler, WishartParams};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::args::SimulateArgs;
use crate::config::{Format, ModelConfig, ModelFamily, RunConfig, WishartConfig, WishartScheme};
use crate::error::CliError;
use crate::output::{csv_rows, num, stream_layout, OutDir, Provenance};

pub fn apply_overrides(cfg: &mut RunConfig, args: &SimulateArgs) {
    if args.alpha.is_some() || args.d.is_some() {
        cfg.ensure_family(ModelFamily::Wishart);
        if let ModelConfig::Wishart(w) = &mut cfg.model {
            if let Some(d) = args.d {
                if w.dim().ok() != Some(d) {
                    *w = WishartConfig { d: Some(d), a: None, b: None, x0: None, ..w.clone() };
                }
            }
            if let Some(a) = args.alpha {
                w.alpha = a;
            }
        }
    }
    if let Some(s) = args.steps {
        cfg.grid.steps = s;
    }
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let horizon = cfg.payoff.maturity;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CliError::config(format!("horizon must be positive, got {horizon}")));
    }
    if cfg.grid.steps == 0 {
        return Err(CliError::config("grid.steps must be at least 1"));
    }
    cfg.mc.validate()?;
    match &cfg.model {
        ModelConfig::Mmm(p) => {
            p.validate()?;
            let times = time_grid(horizon, cfg.grid.steps);
            let paths = par_sample(cfg.mc.seed, domains::GOP_PATH, cfg.mc.n_paths, |s, _| mmm_gop_path(s, p, &times))?;
            let prov = Provenance::new("simulate", cfg, Some(cfg.mc.seed), stream_layout(domains::GOP_PATH, "path index"));
            write_scalar_paths(cfg, &prov, &times, &paths, &["gop"])
        }
        ModelConfig::Bivariate(p) => {
            let sampler = BivariateSampler::new(p, horizon)?;
            let paths = par_sample(cfg.mc.seed, domains::BIVARIATE, cfg.mc.n_paths, |s, _| {
                let (a, b) = sampler.sample(s);
                Ok(vec![a, b])
            })?;
            // Terminal draws only: one row per path at the horizon.
            let prov = Provenance::new("simulate", cfg, Some(cfg.mc.seed), stream_layout(domains::BIVARIATE, "path index"));
            write_vector_draws(cfg, &prov, horizon, &paths, &["discounted_gop_a", "discounted_gop_b"])
        }
        ModelConfig::Wishart(w) => {
            let p = w.params()?;
            let class = require_solution(&p)?;
            let times = time_grid(horizon, cfg.grid.steps);
            let (scheme, paths) = simulate_wishart(cfg, w, &p, &times)?;
            let layout = stream_layout(domains::WISHART, "path index");
            let prov = Provenance::new("simulate", cfg, Some(cfg.mc.seed), layout);
            let mut summary = write_matrix_paths(cfg, &prov, &times, &paths)?;
            summary["scheme"] = json!(scheme);
            summary["existence"] = json!(class);
            Ok(summary)
        }
    }
}

fn time_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect()
}

/// `alpha` as a positive integer when it is one.
fn integer_alpha(alpha: f64) -> Option<usize> {
    (alpha >= 1.0 && alpha.fract() == 0.0 && alpha <= 1e6).then_some(alpha as usize)
}

type MatrixPaths = Vec<Vec<DMatrix<f64>>>;

fn simulate_wishart(cfg: &RunConfig, w: &WishartConfig, p: &WishartParams, times: &[f64]) -> Result<(&'static str, MatrixPaths), CliError> {
    let d = p.dim();
    let exact = w.scheme == WishartScheme::Auto;
    // Squaring k Gaussian rows reaches rank at most k, so it needs k >= d.
    let n_int = integer_alpha(p.alpha).filter(|&k| exact && k >= d);
    let squared_bm = p.a == DMatrix::identity(d, d) && p.b == DMatrix::zeros(d, d);
    let seed = cfg.mc.seed;
    let n = cfg.mc.n_paths;
    match n_int {
        Some(k) if squared_bm => {
            let paths = par_sample(seed, domains::WISHART, n, |s, _| {
                let mut x = p.x0.clone();
                let mut out = vec![x.clone()];
                for win in times.windows(2) {
                    x = wishart_bm_transition(s, &x, k, win[1] - win[0])?;
                    out.push(x.clone());
                }
                Ok(out)
            })?;
            Ok(("matrix_brownian_squaring", paths))
        }
        Some(k) => {
            // X = Σ x_k x_kᵀ with dx = b x dt + aᵀ dW.
            let q = p.a.transpose() * &p.a;
            let paths = par_sample(seed, domains::WISHART, n, |s, _| wishart_ou_path(s, k, &p.b, &q, &p.x0, times))?;
            Ok(("ou_squares", paths))
        }
        None => {
            if w.euler_substeps == 0 {
                return Err(CliError::config("model.euler_substeps must be at least 1"));
            }
            let paths = par_sample(seed, domains::WISHART, n, |s, _| {
                let mut x = p.x0.clone();
                let mut out = vec![x.clone()];
                for win in times.windows(2) {
                    let h = (win[1] - win[0]) / w.euler_substeps as f64;
                    for _ in 0..w.euler_substeps {
                        x = wishart_euler_step(s, p, &x, h);
                    }
                    out.push(x.clone());
                }
                Ok(out)
            })?;
            Ok(("euler", paths))
        }
    }
}

fn column_stats(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    mean_and_se(&v)
}

fn write_scalar_paths(cfg: &RunConfig, prov: &Provenance, times: &[f64], paths: &[Vec<f64>], names: &[&str]) -> Result<Value, CliError> {
    let out = OutDir::create(&cfg.output.dir)?;
    let kept = &paths[..paths.len().min(cfg.output.max_paths_written)];
    let stats: Vec<(f64, f64)> = (0..times.len()).map(|k| column_stats(paths.iter().map(|p| p[k]))).collect();
    let summary_rows: Vec<Value> =
        times.iter().zip(&stats).map(|(t, (m, se))| json!({ "time": t, "n": paths.len(), "mean": m, "std_error": se })).collect();
    let files = match cfg.output.format {
        Format::Csv => {
            let a = out.write_csv("paths.csv", prov, |w| {
                let rows = kept.iter().enumerate().flat_map(|(i, p)| times.iter().zip(p).map(move |(t, v)| vec![i.to_string(), num(*t), num(*v)]));
                csv_rows(w, &["path_id", "time", names[0]], rows)
            })?;
            let b = out.write_csv("summary.csv", prov, |w| {
                let rows = times.iter().zip(&stats).map(|(t, (m, se))| vec![num(*t), paths.len().to_string(), num(*m), num(*se)]);
                csv_rows(w, &["time", "n", "mean", "std_error"], rows)
            })?;
            vec![a, b]
        }
        Format::Json => {
            let a = out.write_json("paths.json", prov, json!({ "times": times, "quantity": names[0], "paths": kept }))?;
            let b = out.write_json("summary.json", prov, json!(summary_rows))?;
            vec![a, b]
        }
    };
    Ok(json!({ "files": files, "paths": paths.len(), "summary": summary_rows }))
}

fn write_vector_draws(cfg: &RunConfig, prov: &Provenance, horizon: f64, draws: &[Vec<f64>], names: &[&str]) -> Result<Value, CliError> {
    let out = OutDir::create(&cfg.output.dir)?;
    let kept = &draws[..draws.len().min(cfg.output.max_paths_written)];
    let stats: Vec<(f64, f64)> = (0..names.len()).map(|k| column_stats(draws.iter().map(|p| p[k]))).collect();
    let summary_rows: Vec<Value> = names
        .iter()
        .zip(&stats)
        .map(|(n, (m, se))| json!({ "time": horizon, "component": n, "n": draws.len(), "mean": m, "std_error": se }))
        .collect();
    let files = match cfg.output.format {
        Format::Csv => {
            let mut header = vec!["path_id", "time"];
            header.extend_from_slice(names);
            let a = out.write_csv("paths.csv", prov, |w| {
                let rows = kept.iter().enumerate().map(|(i, p)| {
                    let mut r = vec![i.to_string(), num(horizon)];
                    r.extend(p.iter().map(|v| num(*v)));
                    r
                });
                csv_rows(w, &header, rows)
            })?;
            let b = out.write_csv("summary.csv", prov, |w| {
                let rows = names.iter().zip(&stats).map(|(n, (m, se))| vec![num(horizon), n.to_string(), draws.len().to_string(), num(*m), num(*se)]);
                csv_rows(w, &["time", "component", "n", "mean", "std_error"], rows)
            })?;
            vec![a, b]
        }
        Format::Json => {
            let a = out.write_json("paths.json", prov, json!({ "time": horizon, "components": names, "draws": kept }))?;
            let b = out.write_json("summary.json", prov, json!(summary_rows))?;
            vec![a, b]
        }
    };
    Ok(json!({ "files": files, "paths": draws.len(), "summary": summary_rows }))
}

fn write_matrix_paths(cfg: &RunConfig, prov: &Provenance, times: &[f64], paths: &[Vec<DMatrix<f64>>]) -> Result<Value, CliError> {
    let out = OutDir::create(&cfg.output.dir)?;
    let kept = &paths[..paths.len().min(cfg.output.max_paths_written)];
    let d = paths.first().map_or(0, |p| p[0].nrows());
    let mut stats = Vec::new();
    for (k, t) in times.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let (m, se) = column_stats(paths.iter().map(|p| p[k][(i, j)]));
                stats.push((*t, i, j, m, se));
            }
        }
    }
    let summary_rows: Vec<Value> =
        stats.iter().map(|(t, i, j, m, se)| json!({ "time": t, "i": i, "j": j, "n": paths.len(), "mean": m, "std_error": se })).collect();
    let files = match cfg.output.format {
        Format::Csv => {
            let a = out.write_csv("paths.csv", prov, |w| Ok(write_matrix_paths_csv(w, times, kept)?))?;
            let b = out.write_csv("summary.csv", prov, |w| {
                let rows = stats.iter().map(|(t, i, j, m, se)| vec![num(*t), i.to_string(), j.to_string(), paths.len().to_string(), num(*m), num(*se)]);
                csv_rows(w, &["time", "i", "j", "n", "mean", "std_error"], rows)
            })?;
            vec![a, b]
        }
        Format::Json => {
            let as_rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
            let ps: Vec<Vec<Vec<Vec<f64>>>> = kept.iter().map(|p| p.iter().map(as_rows).collect()).collect();
            let a = out.write_json("paths.json", prov, json!({ "times": times, "paths": ps }))?;
            let b = out.write_json("summary.json", prov, json!(summary_rows))?;
            vec![a, b]
        }
    };
    Ok(json!({ "files": files, "paths": paths.len(), "summary": summary_rows }))
}
