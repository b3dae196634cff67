//! Acceptance gate: one PASS/FAIL line per criterion, sub-check details
//! indented below it. Exits nonzero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use benchsim_cli::commands::{density, validate};
use benchsim_core::liesym::{default_grids, invert_joint_density, InversionConfig};
use benchsim_core::mlmc::{level_statistics, mlmc_run, single_level_estimate, LevelStats, MlmcConfig, VolPayoff};
use benchsim_core::pricing::{
    benchmarked_savings_mc, benchmarked_savings_quadrature, fx_call_quadrature, parity_gap, price_fx_call, price_vol_put, real_world_price, McConfig,
    Model, Monitoring, PayoffKind, PayoffSpec, VolMethod,
};
use benchsim_core::processes::{phi_time, MmmParams};
use benchsim_core::randkit::{domains, par_sample, stream_id, RngStream};
use benchsim_core::stats::ks_two_sample;
use benchsim_core::wishart::{existence_class, wishart_bm_transition, wishart_ou_path, BivariateMmmParams, ExistenceClass, WishartParams};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Master seed of the gate; criterion k draws from `SEED + 1000·k`.
const SEED: u64 = 20_261_015;

fn seed(k: u64) -> u64 {
    SEED + 1000 * k
}

#[derive(Default)]
struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn check(&mut self, pass: bool, what: impl Into<String>) {
        self.lines.push((pass, what.into()));
    }

    fn within(&mut self, name: &str, estimate: f64, se: f64, target: f64, k: f64) {
        let z = if se > 0.0 { (estimate - target).abs() / se } else if estimate == target { 0.0 } else { f64::INFINITY };
        self.check(z < k, format!("{name}: {estimate:.6e} ± {se:.2e} vs {target:.6e} ({z:.2} SE, bound {k})"));
    }

    fn checks(&mut self, checks: Vec<validate::Check>) {
        for c in checks {
            let detail = c.detail.map_or_else(String::new, |d| format!(" {d}"));
            self.check(c.pass, format!("{}: {:.3e} (bound {:.3e}){detail}", c.name, c.value, c.bound));
        }
    }

    fn fail(&mut self, what: impl std::fmt::Display) {
        self.check(false, format!("error: {what}"));
    }
}

type Outcome = Result<(), String>;

fn c1_exact_law(r: &mut Report) -> Outcome {
    let checks = validate::moments(seed(1)).map_err(|e| e.to_string())?;
    r.checks(checks.into_iter().filter(|c| c.name.starts_with("besq4_")).collect());
    Ok(())
}

fn c2_normalization(r: &mut Report) -> Outcome {
    r.checks(validate::normalization().map_err(|e| e.to_string())?);
    Ok(())
}

fn c3_symmetry(r: &mut Report) -> Outcome {
    r.checks(validate::symmetry(seed(3)).map_err(|e| e.to_string())?);
    Ok(())
}

/// Fine-Euler paths of `dY = (1 − ηY)dt + √Y dW` with the trapezoid sum
/// of `dt/Y`; an independent route to the law of `(Y_T, ∫dt/Y)`.
fn fine_euler(x: f64, t: f64, eta: f64, n: usize, steps: usize, seed: u64) -> Vec<(f64, f64)> {
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = RngStream::new(seed, stream_id(domains::VALIDATION, i as u64));
            let mut y = x;
            let mut v = 0.5 / x;
            for j in 0..steps {
                y += (1.0 - eta * y) * dt + y.max(0.0).sqrt() * sq * s.normal();
                v += if j + 1 == steps { 0.5 } else { 1.0 } / y.max(1e-12);
            }
            (y, v * dt)
        })
        .collect()
}

fn c4_joint_density(r: &mut Report) -> Outcome {
    let p = MmmParams::stylized();
    let (x, t, eta) = (p.y0(), 1.0, p.eta);
    let ng = 121;
    let (yg, vg) = default_grids(x, t, eta, ng, ng).map_err(|e| e.to_string())?;
    let g = invert_joint_density(x, t, eta, &InversionConfig::default(), &yg, &vg).map_err(|e| e.to_string())?;
    let mass = g.total_mass();
    r.check((mass - 1.0).abs() < 2e-3, format!("total mass {mass:.9} (bound 1 ± 2e-3)"));
    let me = density::marginal_error(&g).map_err(|e| e.to_string())?;
    r.check(me < 2e-3, format!("Y_T marginal vs exact CIR law, max rel error {me:.2e} (bound 2e-3)"));

    let n = 1_000_000;
    let steps = 10_000;
    let draws = fine_euler(x, t, eta, n, steps, seed(4));
    let cells = 10;
    let k = (ng - 1) / cells;
    let (ylo, yhi, vlo, vhi) = (yg[0], yg[ng - 1], vg[0], vg[ng - 1]);
    let mut counts = vec![[0usize; 10]; cells];
    for &(y, v) in &draws {
        let iy = ((y - ylo) / (yhi - ylo) * cells as f64).floor();
        let iv = ((v - vlo) / (vhi - vlo) * cells as f64).floor();
        if (0.0..cells as f64).contains(&iy) && (0.0..cells as f64).contains(&iv) {
            counts[iy as usize][iv as usize] += 1;
        }
    }
    let mut worst = (0.0f64, 0, 0);
    let mut over = Vec::new();
    for (a, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            let q = g.cell_mass(a * k, (a + 1) * k, b * k, (b + 1) * k).max(0.0);
            let ph = c as f64 / n as f64;
            let se = (q * (1.0 - q) / n as f64).sqrt();
            let z = if se > 0.0 { (ph - q).abs() / se } else if c == 0 { 0.0 } else { f64::INFINITY };
            if z > worst.0 {
                worst = (z, a, b);
            }
            if z >= 3.0 {
                over.push(format!("cell ({a},{b}): density {q:.4e}, histogram {ph:.4e} ({c} paths), {z:.2} SE"));
            }
        }
    }
    r.check(
        over.is_empty(),
        format!("10x10 cells vs {n} fine-Euler paths (dt = 1e-4): worst {:.2} SE at cell ({},{}), {} cell(s) at or beyond 3 SE", worst.0, worst.1, worst.2, over.len()),
    );
    for o in over {
        r.check(false, o);
    }
    Ok(())
}

fn c5_wishart(r: &mut Report) -> Outcome {
    let checks = validate::moments(seed(5)).map_err(|e| e.to_string())?;
    r.checks(checks.into_iter().filter(|c| c.name.starts_with("wishart_bm_mean") || c.name.starts_with("noncentral_wishart_mean")).collect());

    let x0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.5]);
    let (beta, t, n) = (4usize, 0.7, 20_000);
    let eye = DMatrix::identity(2, 2);
    let zero = DMatrix::zeros(2, 2);
    let ou = par_sample(seed(5) + 1, domains::WISHART, n, |s, _| Ok(wishart_ou_path(s, beta, &zero, &eye, &x0, &[t])?.pop().unwrap()))
        .map_err(|e| e.to_string())?;
    let bm = par_sample(seed(5) + 2, domains::VALIDATION, n, |s, _| wishart_bm_transition(s, &x0, beta, t)).map_err(|e| e.to_string())?;
    for i in 0..2 {
        for j in 0..=i {
            let a: Vec<f64> = ou.iter().map(|m| m[(i, j)]).collect();
            let b: Vec<f64> = bm.iter().map(|m| m[(i, j)]).collect();
            let p = ks_two_sample(&a, &b).1;
            r.check(p > 0.01, format!("OU squares vs B-squaring KS entry ({i},{j}): p = {p:.3} (bound 0.01)"));
        }
    }

    let mut wrong = Vec::new();
    let mut cases = 0;
    for d in 1..=6usize {
        let df = d as f64;
        let pd = DMatrix::<f64>::identity(d, d);
        let mut singular = DMatrix::<f64>::zeros(d, d);
        singular[(0, 0)] = 1.0;
        let below = |a: f64| a - 1e-12 * a.max(1.0);
        let grid = [
            (below(df - 1.0), ExistenceClass::None, ExistenceClass::None),
            (df - 1.0, ExistenceClass::Weak, ExistenceClass::Weak),
            (below(df + 1.0), ExistenceClass::Weak, ExistenceClass::Weak),
            (df + 1.0, ExistenceClass::Strong, ExistenceClass::Weak),
            (df + 7.5, ExistenceClass::Strong, ExistenceClass::Weak),
        ];
        for (alpha, want_pd, want_singular) in grid {
            if alpha < 0.0 {
                continue;
            }
            for (x0, want) in [(&pd, want_pd), (&singular, want_singular)] {
                if d == 1 && x0 == &singular {
                    continue;
                }
                cases += 1;
                let p = WishartParams::squared_brownian(alpha, x0.clone()).map_err(|e| e.to_string())?;
                let got = existence_class(&p);
                if got != want {
                    wrong.push(format!("d={d} alpha={alpha} x0 pd={}: {got:?}, expected {want:?}", x0 == &pd));
                }
            }
        }
    }
    r.check(wrong.is_empty(), format!("existence classes at alpha = d-1, d+1 and just below, d = 1..6: {} of {cases} wrong", wrong.len()));
    for w in wrong {
        r.check(false, w);
    }
    Ok(())
}

fn mc(n: usize, seed: u64) -> McConfig {
    McConfig { n_paths: n, seed, ..McConfig::default() }
}

fn c6_pricing(r: &mut Report) -> Outcome {
    let p = MmmParams::stylized();
    for t in [1.0, 5.0, 20.0] {
        let spec = PayoffSpec { kind: PayoffKind::EuCallOnIndex, strike: 0.0, maturity: t, monitoring: Monitoring::Terminal };
        let e = real_world_price(&Model::Mmm(p), &spec, &mc(10_000, seed(6))).map_err(|e| e.to_string())?;
        r.check(e.value == p.s0 && e.std_error == 0.0, format!("numeraire identity T={t}: price {} SE {} vs S0 = {}", e.value, e.std_error, p.s0));
    }

    let fx = BivariateMmmParams { rho: 0.0, ..BivariateMmmParams::stylized() };
    for (i, k) in [0.9, 1.0, 1.1].into_iter().enumerate() {
        let e = price_fx_call(&fx, k, 1.0, &mc(100_000, seed(6) + 1 + i as u64)).map_err(|e| e.to_string())?;
        let q = fx_call_quadrature(&fx, k, 1.0).map_err(|e| e.to_string())?;
        r.within(&format!("FX call rho=0 K={k} T=1 vs nested quadrature"), e.value, e.std_error, q, 3.0);
    }

    let (strike, t) = (0.2, 1.0);
    let (yg, vg) = default_grids(p.y0(), t, p.eta, 121, 121).map_err(|e| e.to_string())?;
    let g = invert_joint_density(p.y0(), t, p.eta, &InversionConfig::default(), &yg, &vg).map_err(|e| e.to_string())?;
    let q = price_vol_put(&p, strike, t, VolMethod::Quadrature(&g)).map_err(|e| e.to_string())?;
    let cfg = MlmcConfig { eps: 5e-4, ..MlmcConfig::default() };
    let m = price_vol_put(&p, strike, t, VolMethod::Mlmc { cfg: &cfg, seed: seed(6) + 10 }).map_err(|e| e.to_string())?;
    let se = (q.std_error.powi(2) + m.std_error.powi(2)).sqrt();
    r.within("vol put K=0.2 T=1: MLMC (eps 5e-4) vs density quadrature", m.value, se, q.value, 3.0);

    let gap = parity_gap(&p, strike, t, 64, &mc(100_000, seed(6) + 11)).map_err(|e| e.to_string())?;
    r.check(gap.value == 0.0 && gap.std_error == 0.0, format!("put-call-forward parity gap over 1e5 paths: mean {} SE {}", gap.value, gap.std_error));
    Ok(())
}

fn c7_supermartingale(r: &mut Report) -> Outcome {
    let p = MmmParams::stylized();
    let t = 5.0;
    let q = benchmarked_savings_quadrature(&p, t).map_err(|e| e.to_string())?;
    let closed = 1.0 - (-p.s0 / (2.0 * phi_time(&p, t).map_err(|e| e.to_string())?)).exp();
    r.check((q - closed).abs() < 1e-10, format!("density quadrature {q:.10} vs 1 - exp(-S0/(2 phi)) = {closed:.10}"));
    let e = benchmarked_savings_mc(&p, t, &mc(100_000_000, seed(7))).map_err(|e| e.to_string())?;
    let gap = (1.0 - e.value) / e.std_error;
    r.check(gap > 3.0, format!("E[S0/S_T] at T=5 over 1e8 paths: {:.6} ± {:.2e}, {gap:.2} SE below 1 (bound 3)", e.value, e.std_error));
    r.within("E[S0/S_T] vs density quadrature", e.value, e.std_error, q, 3.0);
    Ok(())
}

fn c8_mlmc(r: &mut Report) -> Outcome {
    let p = MmmParams::stylized();
    let payoff = VolPayoff::put(0.22, 1.0);
    let cfg = MlmcConfig::default();
    let v: Vec<f64> = (3..=6).map(|l| level_statistics(&p, &payoff, &cfg, l, 10_000, seed(8)).variance).collect();
    for l in 3..=5 {
        let ratio = v[l - 2] / v[l - 3];
        r.check(ratio < 0.9, format!("V_{}/V_{l} = {ratio:.3} (bound 0.9)", l + 1));
    }

    let (top, n) = (4, 40_000);
    let levels: Vec<LevelStats> = (0..=top).map(|l| level_statistics(&p, &payoff, &cfg, l, n, seed(8) + 1)).collect();
    let sum: f64 = levels.iter().map(|l| l.mean).sum();
    let se_sum = levels.iter().map(|l| l.variance / n as f64).sum::<f64>().sqrt();
    let fine = single_level_estimate(&p, &payoff, &cfg, top, n, seed(8) + 2);
    let se = (se_sum.powi(2) + fine.std_error.powi(2)).sqrt();
    r.within("telescoped level means vs level-4 estimator", sum, se, fine.value, 3.0);

    let coarse = mlmc_run(&p, &payoff, &MlmcConfig { eps: 5e-5, ..cfg }, seed(8) + 3).map_err(|e| e.to_string())?;
    let finer = mlmc_run(&p, &payoff, &MlmcConfig { eps: 2.5e-5, ..cfg }, seed(8) + 3).map_err(|e| e.to_string())?;
    let ratio = finer.total_cost / coarse.total_cost;
    r.check(
        ratio >= 3.0,
        format!("cost at eps 2.5e-5 / cost at 5e-5 = {ratio:.2} (bound 3; levels {} -> {})", coarse.levels.len(), finer.levels.len()),
    );
    Ok(())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .map(|it| it.filter_map(Result::ok).map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default())).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn c9_reproducibility(r: &mut Report) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = seed(9).to_string();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("simulate mmm csv", vec!["--paths", "2000", "simulate"]),
        ("simulate mmm json", vec!["--paths", "2000", "--format", "json", "simulate"]),
        ("simulate bivariate", vec!["--preset", "bivariate", "--paths", "2000", "simulate"]),
        ("simulate wishart squaring", vec!["--preset", "wishart", "--paths", "500", "simulate"]),
        ("simulate wishart euler", vec!["--paths", "200", "simulate", "--alpha", "2.5", "--d", "3", "--steps", "4"]),
        ("price index put", vec!["--paths", "20000", "price", "--payoff", "index_put"]),
        ("price fx call", vec!["--rho", "0", "--paths", "20000", "price", "--payoff", "fx_call"]),
        ("price vol put mlmc", vec!["--method", "mlmc", "price", "--payoff", "vol_put", "--eps", "2e-3"]),
        ("price vol put quadrature", vec!["--format", "json", "price", "--payoff", "vol_put"]),
        ("density csv", vec!["density", "--ny", "41", "--nv", "41"]),
        ("density binary", vec!["--format", "json", "density", "--ny", "41", "--nv", "41"]),
        ("check-symmetry", vec!["check-symmetry", "--drift", "besq"]),
        ("validate normalization", vec!["validate", "normalization"]),
    ];
    for (i, (name, args)) in runs.iter().enumerate() {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let dir = tmp.path().join(format!("{i}-{rep}"));
            let o = Command::new(env!("CARGO_BIN_EXE_benchsim"))
                .args(["--seed", &s, "--out", dir.to_str().unwrap()])
                .args(args)
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                r.check(false, format!("{name}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()));
            }
            outs.push((dir_bytes(&dir), o.stdout));
        }
        let files = &outs[0].0;
        let same = !files.is_empty() && outs[0].0 == outs[1].0;
        let bytes: usize = files.iter().map(|f| f.1.len()).sum();
        r.check(same, format!("{name}: {} file(s), {bytes} bytes, identical across runs: {same}", files.len()));
    }
    Ok(())
}

type Criterion = fn(&mut Report) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("exact BESQ law: Laplace transform and KS", c1_exact_law),
        ("density normalization and CIR kernel", c2_normalization),
        ("Lie-symmetry classification, PDE residual, heat MGF", c3_symmetry),
        ("joint-density inversion: mass, marginal, 2-D histogram", c4_joint_density),
        ("Wishart moments, cross-scheme law, existence bounds", c5_wishart),
        ("pricing: numeraire, FX oracle, vol put, parity", c6_pricing),
        ("strict supermartingale at T=5", c7_supermartingale),
        ("MLMC variance decay, telescoping, cost growth", c8_mlmc),
        ("CLI byte-identical reproducibility", c9_reproducibility),
    ];
    let wanted: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    println!("acceptance seed {SEED}");
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if wanted.as_ref().is_some_and(|w| !w.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let mut r = Report::default();
        if let Err(e) = f(&mut r) {
            r.fail(e);
        }
        let pass = !r.lines.is_empty() && r.lines.iter().all(|l| l.0);
        failed += usize::from(!pass);
        println!("criterion {n}: {} {title} ({:.1} s)", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        for (ok, line) in &r.lines {
            println!("    [{}] {line}", if *ok { "ok" } else { "x" });
        }
    }
    println!("acceptance: {failed} criterion(s) failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
