//! Oracle suites. Every check compares an engine result with an independent
//! route (closed form, quadrature or a second estimator) at a fixed
//! tolerance and seed.

use benchsim_core::liesym::{classify_drift, default_grids, heat_mgf_check, invert_joint_density, joint_kernel_mu, DriftProblem, RicattiCase};
use benchsim_core::mlmc::MlmcConfig;
use benchsim_core::pricing::{
    benchmarked_savings_mc, benchmarked_savings_quadrature, fx_call_quadrature, parity_gap, price_fx_call, price_terminal_quadrature, price_vol_put,
    real_world_price, McConfig, Model, Monitoring, PayoffKind, PayoffSpec, VolMethod,
};
use benchsim_core::processes::{besq_density, besq_laplace, besq_sample_transition, cir_transition_density, mmm_discounted_terminal, phi_time, MmmParams, SquareRootParams};
use benchsim_core::quad::{integrate, integrate_to_infinity};
use benchsim_core::randkit::{domains, par_sample};
use benchsim_core::stats::{ks_one_sample, mean_and_se};
use benchsim_core::wishart::{sample_noncentral_wishart, wishart_bm_transition, BivariateMmmParams, NoncentralWishartParams};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Suite;
use crate::commands::density::marginal_error;
use crate::commands::symmetry::{case1_pde_residual, x_grid};
use crate::config::{ModelConfig, ModelFamily, RunConfig};
use crate::error::CliError;
use crate::output::{stream_layout, OutDir, Provenance};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    /// Observed discrepancy or statistic.
    pub value: f64,
    /// Bound the value must stay below (or above, for p-values).
    pub bound: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

struct Checks {
    suite: &'static str,
    out: Vec<Check>,
}

impl Checks {
    fn new(suite: &'static str) -> Self {
        Self { suite, out: Vec::new() }
    }

    fn below(&mut self, name: impl Into<String>, value: f64, bound: f64, detail: Option<Value>) {
        self.out.push(Check { suite: self.suite, name: name.into(), value, bound, pass: value < bound, detail });
    }

    fn above(&mut self, name: impl Into<String>, value: f64, bound: f64, detail: Option<Value>) {
        self.out.push(Check { suite: self.suite, name: name.into(), value, bound, pass: value > bound, detail });
    }

    /// `|estimate − target|` in units of `se`, below 3.
    fn within_3se(&mut self, name: impl Into<String>, estimate: f64, se: f64, target: f64) {
        let z = if se > 0.0 { (estimate - target).abs() / se } else if estimate == target { 0.0 } else { f64::INFINITY };
        self.below(name, z, 3.0, Some(json!({ "estimate": estimate, "std_error": se, "target": target })));
    }
}

pub fn normalization() -> Result<Vec<Check>, CliError> {
    let mut c = Checks::new("normalization");
    for &(t, x) in &[(1.0, 1.0), (0.3, 5.0)] {
        let mass = integrate_to_infinity(|y| if y <= 0.0 { 0.0 } else { besq_density(t, x, y, 4.0).unwrap_or(f64::NAN) }, 0.0, 1e-14, 1e-13).value;
        c.below(format!("besq4_density_mass t={t} x={x}"), (mass - 1.0).abs(), 1e-8, None);
    }
    for &(x, t, eta) in &[(20.0, 1.0, 0.05), (1.0, 1.0, 0.1), (0.3, 4.0, 0.5)] {
        let mass = integrate_to_infinity(|y| if y <= 0.0 { 0.0 } else { joint_kernel_mu(x, t, y, 0.0, eta).unwrap_or(f64::NAN) }, 0.0, 1e-12, 1e-10).value;
        c.below(format!("kernel_mu0_mass x={x} t={t} eta={eta}"), (mass - 1.0).abs(), 1e-6, None);
        let p = SquareRootParams::new(1.0, eta, 1.0, x)?;
        let (yg, _) = default_grids(x, t, eta, 60, 2)?;
        let mut worst = 0.0f64;
        for y in yg {
            let k = joint_kernel_mu(x, t, y, 0.0, eta)?;
            let e = cir_transition_density(&p, x, y, t)?;
            if e > 0.0 {
                worst = worst.max(((k - e) / e).abs());
            }
        }
        c.below(format!("kernel_mu0_vs_cir_density x={x} t={t} eta={eta}"), worst, 1e-6, None);
    }
    Ok(c.out)
}

/// KS statistic of exact BESQ(4) draws against the CDF accumulated by
/// quadrature between consecutive order statistics.
pub fn besq_ks_pvalue(draws: &[f64], t: f64, x: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cdf_at = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &y in &sorted {
        if y > prev {
            acc += integrate(|u| if u <= 0.0 { 0.0 } else { besq_density(t, x, u, 4.0).unwrap_or(0.0) }, prev, y, 1e-15, 1e-12).value;
            prev = y;
        }
        cdf_at.push(acc.min(1.0));
    }
    let lookup = |y: f64| {
        let i = sorted.partition_point(|&s| s < y);
        cdf_at[i.min(sorted.len() - 1)]
    };
    ks_one_sample(&sorted, lookup).1
}

pub fn moments(seed: u64) -> Result<Vec<Check>, CliError> {
    let mut c = Checks::new("moments");
    let (x, t) = (1.0, 1.0);
    let draws = par_sample(seed, domains::VALIDATION, 100_000, |s, _| besq_sample_transition(s, x, 4.0, t))?;
    for lambda in [0.3, 1.0, 3.0] {
        let e: Vec<f64> = draws.iter().map(|y| (-lambda * y).exp()).collect();
        let (m, se) = mean_and_se(&e);
        c.within_3se(format!("besq4_laplace lambda={lambda}"), m, se, besq_laplace(x, t, lambda, 4.0));
    }
    let ks_draws = par_sample(seed.wrapping_add(1), domains::VALIDATION, 10_000, |s, _| besq_sample_transition(s, x, 4.0, t))?;
    c.above("besq4_ks_pvalue", besq_ks_pvalue(&ks_draws, t, x), 0.01, None);

    let p = MmmParams::stylized();
    let t = 5.0;
    let s = par_sample(seed.wrapping_add(2), domains::GOP_PATH, 100_000, |st, _| mmm_discounted_terminal(st, &p, t))?;
    let (m, se) = mean_and_se(&s);
    c.within_3se("discounted_gop_mean T=5", m, se, p.s0 + 4.0 * phi_time(&p, t)?);

    let (alpha, d, dt) = (4usize, 2usize, 1.0);
    let x0 = DMatrix::<f64>::identity(d, d);
    let w = par_sample(seed.wrapping_add(3), domains::WISHART, 100_000, |s, _| wishart_bm_transition(s, &x0, alpha, dt))?;
    let target = &x0 + DMatrix::identity(d, d) * (alpha as f64 * dt);
    for i in 0..d {
        for j in 0..d {
            let v: Vec<f64> = w.iter().map(|m| m[(i, j)]).collect();
            let (m, se) = mean_and_se(&v);
            c.within_3se(format!("wishart_bm_mean[{i}{j}]"), m, se, target[(i, j)]);
        }
    }

    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let mm = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, 0.0, -0.2, 0.3, 0.0, 0.8, 0.1]);
    let mmt = &mm * mm.transpose();
    let theta = sigma.clone().try_inverse().expect("sigma is invertible") * &mmt;
    let nw = NoncentralWishartParams::new(4, sigma.clone(), theta)?;
    let draws = par_sample(seed.wrapping_add(4), domains::WISHART, 100_000, |s, _| Ok(sample_noncentral_wishart(s, &nw)))?;
    let target = sigma * 4.0 + mmt;
    for i in 0..2 {
        for j in 0..2 {
            let v: Vec<f64> = draws.iter().map(|m| m[(i, j)]).collect();
            let (m, se) = mean_and_se(&v);
            c.within_3se(format!("noncentral_wishart_mean[{i}{j}]"), m, se, target[(i, j)]);
        }
    }
    Ok(c.out)
}

pub fn symmetry(seed: u64) -> Result<Vec<Check>, CliError> {
    let mut c = Checks::new("symmetry");
    let besq = DriftProblem::besq(4.0);
    let class = classify_drift(&besq, &x_grid())?;
    let (case, a, b) = match &class {
        Some(k) => (k.case.index() as f64, k.constants[0], k.constants[1]),
        None => (0.0, f64::NAN, f64::NAN),
    };
    let is_one = class.as_ref().is_some_and(|k| k.case == RicattiCase::One);
    c.out.push(Check {
        suite: "symmetry",
        name: "besq4_is_case1".into(),
        value: case,
        bound: 1.0,
        pass: is_one,
        detail: Some(json!({ "constants": [a, b] })),
    });
    c.below("besq4_case1_constants", a.abs().max(b.abs()), 1e-8, None);
    if is_one {
        c.below("case1_pde_residual_20pts", case1_pde_residual(&besq, a, b, 20, seed)?, 1e-5, None);
    }
    let mut worst = 0.0f64;
    for &(g, a, x, t) in &[(0.5, 1.0, 0.3, 1.0), (1.0, 0.5, 1.0, 0.5), (2.0, 0.2, -0.4, 2.0), (0.7, 1.5, 0.0, 0.2)] {
        let (l, r) = heat_mgf_check(g, a, x, t)?;
        worst = worst.max(((l - r) / r).abs());
    }
    c.below("heat_mgf_rel_error", worst, 1e-10, None);
    Ok(c.out)
}

pub fn fx_oracle(p: &BivariateMmmParams, strike: f64, maturity: f64) -> Result<Vec<Check>, CliError> {
    let mut c = Checks::new("fx-oracle");
    let v = fx_call_quadrature(p, strike, maturity)?;
    c.out.push(Check {
        suite: "fx-oracle",
        name: format!("fx_call_quadrature K={strike} T={maturity} rho={}", p.rho),
        value: v,
        bound: f64::INFINITY,
        pass: v.is_finite() && v >= 0.0,
        detail: Some(json!({ "value": v })),
    });
    Ok(c.out)
}

pub fn cross_method(cfg: &RunConfig, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut c = Checks::new("cross-method");
    let mc = |n: usize, s: u64| McConfig { n_paths: n, seed: s, ..McConfig::default() };

    let mut biv = BivariateMmmParams::stylized();
    biv.rho = 0.0;
    let q = fx_call_quadrature(&biv, 1.0, 1.0)?;
    let e = price_fx_call(&biv, 1.0, 1.0, &mc(100_000, seed))?;
    c.within_3se("fx_call_rho0 mc vs quadrature", e.value, e.std_error, q);

    let p = MmmParams::stylized();
    let bond = PayoffSpec { kind: PayoffKind::Zcb, strike: 0.0, maturity: 5.0, monitoring: Monitoring::Terminal };
    let q = price_terminal_quadrature(&p, &bond)?.value;
    let e = real_world_price(&Model::Mmm(p), &bond, &mc(100_000, seed.wrapping_add(1)))?;
    c.within_3se("zcb T=5 mc vs quadrature", e.value, e.std_error, q);

    let t = 20.0;
    let q = benchmarked_savings_quadrature(&p, t)?;
    let e = benchmarked_savings_mc(&p, t, &mc(100_000, seed.wrapping_add(2)))?;
    c.within_3se("benchmarked_savings T=20 mc vs quadrature", e.value, e.std_error, q);
    c.above("benchmarked_savings T=20 gap in SE", (1.0 - e.value) / e.std_error, 3.0, None);

    let (yg, vg) = default_grids(p.y0(), 1.0, p.eta, cfg.grid.ny.max(41), cfg.grid.nv.max(41))?;
    let grid = invert_joint_density(p.y0(), 1.0, p.eta, &cfg.inversion, &yg, &vg)?;
    c.below("joint_density_mass", (grid.total_mass() - 1.0).abs(), 2e-3, None);
    c.below("joint_density_y_marginal", marginal_error(&grid)?, 2e-3, None);
    let qv = price_vol_put(&p, 0.2, 1.0, VolMethod::Quadrature(&grid))?;
    let mcfg = MlmcConfig { eps: 5e-4, ..MlmcConfig::default() };
    let mv = price_vol_put(&p, 0.2, 1.0, VolMethod::Mlmc { cfg: &mcfg, seed: seed.wrapping_add(3) })?;
    let se = (qv.std_error.powi(2) + mv.std_error.powi(2)).sqrt();
    c.within_3se("vol_put K=0.2 quadrature vs mlmc", mv.value, se, qv.value);
    let gap = parity_gap(&p, 0.2, 1.0, 64, &mc(10_000, seed.wrapping_add(4)))?;
    c.below("vol_parity_gap_abs", gap.value.abs() + gap.std_error, f64::MIN_POSITIVE, None);
    Ok(c.out)
}

pub fn run(cfg: &RunConfig, suite: Suite) -> Result<Value, CliError> {
    let seed = cfg.mc.seed;
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Normalization {
        checks.extend(normalization()?);
    }
    if all || suite == Suite::Moments {
        checks.extend(moments(seed)?);
    }
    if all || suite == Suite::Symmetry {
        checks.extend(symmetry(seed)?);
    }
    if all || suite == Suite::CrossMethod {
        checks.extend(cross_method(cfg, seed)?);
    }
    if suite == Suite::FxOracle {
        let mut c = cfg.clone();
        c.ensure_family(ModelFamily::Bivariate);
        let ModelConfig::Bivariate(p) = &c.model else { unreachable!("family ensured") };
        checks.extend(fx_oracle(p, c.payoff.strike, c.payoff.maturity)?);
    }
    let failures = checks.iter().filter(|c| !c.pass).count();
    let prov = Provenance::new("validate", cfg, Some(seed), stream_layout(domains::VALIDATION, "sample index; check k uses seed + k"));
    let out = OutDir::create(&cfg.output.dir)?;
    let report = json!({ "suite": format!("{suite:?}"), "checks": checks, "failures": failures });
    let file = out.write_json("validate.json", &prov, report.clone())?;
    Ok(json!({ "report": report, "files": [file] }))
}
