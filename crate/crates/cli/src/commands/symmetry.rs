use benchsim_core::liesym::{case1_symmetry, cauchy_residual, classify_drift, fit_all_cases, DriftProblem, RicattiCase, SymmetryCase1};
use benchsim_core::randkit::RngStream;
use serde_json::{json, Value};

use crate::args::{DriftArg, SymmetryArgs};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{OutDir, Provenance};

pub fn problem(args: &SymmetryArgs) -> Result<(DriftProblem, Value), CliError> {
    let c = args.c;
    Ok(match args.drift {
        DriftArg::Besq => (DriftProblem::besq(args.delta), json!({ "drift": "besq", "delta": args.delta })),
        DriftArg::SquareRoot => (DriftProblem::square_root(args.eta, args.mu), json!({ "drift": "square_root", "eta": args.eta, "mu": args.mu })),
        DriftArg::Heat => (DriftProblem::new(0.0, args.b, |_| 0.0)?.with_derivative(|_| 0.0), json!({ "drift": "heat", "b": args.b })),
        DriftArg::Linear => (DriftProblem::new(1.0, 2.0, move |x| c * x)?.with_derivative(move |_| c), json!({ "drift": "linear", "c": c })),
    })
}

/// Classification grid on `(0, ∞)`.
pub fn x_grid() -> Vec<f64> {
    (1..=40).map(|i| 0.25 * i as f64).collect()
}

/// Finite-difference residual of the first-family image of `u = 1` at
/// `points` pseudo-random `(x, t)` pairs.
pub fn case1_pde_residual(p: &DriftProblem, a: f64, b: f64, points: usize, seed: u64) -> Result<f64, CliError> {
    let s = SymmetryCase1::from_problem(p, a, b);
    let mut rng = RngStream::new(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let (x, t) = (0.2 + 4.8 * rng.uniform(), 0.1 + 1.9 * rng.uniform());
        let w = |x: f64, t: f64| case1_symmetry(p, &s, &|_, t| (-a * t).exp(), 0.3, x, t);
        worst = worst.max(cauchy_residual(p, &w, x, t, 1e-4)?.abs());
    }
    Ok(worst)
}

pub fn run(cfg: &RunConfig, args: &SymmetryArgs) -> Result<Value, CliError> {
    let (p, spec) = problem(args)?;
    let grid = x_grid();
    let matched = classify_drift(&p, &grid)?;
    let fits = fit_all_cases(&p, &grid)?;
    let residual = match &matched {
        Some(c) if c.case == RicattiCase::One => Some(case1_pde_residual(&p, c.constants[0], c.constants[1], 20, cfg.mc.seed)?),
        _ => None,
    };
    let report = json!({
        "problem": spec,
        "gamma": p.gamma,
        "b": p.b,
        "matched_case": matched.as_ref().map(|c| c.case.index()),
        "constants": matched.as_ref().map(|c| c.constants.clone()),
        "fits": fits,
        "case1_pde_residual": residual,
    });
    let prov = Provenance::new("check-symmetry", cfg, Some(cfg.mc.seed), "residual points from stream 0 of the seed");
    let out = OutDir::create(&cfg.output.dir)?;
    let file = out.write_json("symmetry.json", &prov, report.clone())?;
    Ok(json!({ "report": report, "files": [file] }))
}
