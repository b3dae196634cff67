//! Real-world pricing with the GOP as numéraire: `V₀ = S₀·E[H/S_T]`.
//!
//! Monte Carlo estimates use exact terminal samples, batch-means standard
//! errors and a heavy-tail report on the benchmarked payoffs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::liesym::JointDensityGrid;
use crate::mlmc::{mlmc_run, MlmcConfig, VolPayoff};
use crate::processes::{besq_density, mmm_discounted_terminal, phi_increment, MmmParams};
use crate::quad::integrate_to_infinity;
use crate::randkit::{domains, path_stream, RngStream};
use crate::stats::normal_quantile;
use crate::wishart::{BivariateMmmParams, BivariateSampler};

/// Share of the estimate carried by the top 0.1% of samples above which a
/// heavy-tail warning is attached.
const TAIL_SHARE_LIMIT: f64 = 0.2;
const COVERAGE_ERROR: f64 = 0.99;
const COVERAGE_WARNING: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactMc,
    Quadrature,
    Mlmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Estimate {
    pub fn from_mean_se(value: f64, std_error: f64, n_samples: usize, seed: Option<u64>, method: Method, ci_level: f64) -> Self {
        let z = normal_quantile(0.5 + 0.5 * ci_level);
        Self { value, std_error, ci_low: value - z * std_error, ci_high: value + z * std_error, n_samples, seed, method, warnings: Vec::new() }
    }

    /// A deterministic value with no sampling error.
    pub fn exact(value: f64, method: Method) -> Self {
        Self::from_mean_se(value, 0.0, 0, None, method, 0.99)
    }

    /// `scale·mean(samples)` with a batch-means standard error over
    /// contiguous index blocks.
    pub fn from_samples(samples: &[f64], scale: f64, mc: &McConfig) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let batches = mc.batches(n);
        let se = if batches < 2 {
            0.0
        } else {
            let means: Vec<f64> = (0..batches)
                .map(|b| {
                    let chunk = &samples[b * n / batches..(b + 1) * n / batches];
                    chunk.iter().sum::<f64>() / chunk.len() as f64
                })
                .collect();
            let mm = means.iter().sum::<f64>() / batches as f64;
            (means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / ((batches - 1) * batches) as f64).sqrt()
        };
        let mut e = Self::from_mean_se(scale * mean, scale.abs() * se, n, Some(mc.seed), Method::ExactMc, mc.ci_level);
        if let Some(share) = tail_share(samples) {
            e.attach_tail_warning(share);
        }
        e
    }

    fn attach_tail_warning(&mut self, share: f64) {
        if share > TAIL_SHARE_LIMIT {
            let msg = format!("top 0.1% of samples carry {:.1}% of the estimate; integrability is doubtful", 100.0 * share);
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }
}

/// `scale·E[f(path)]` over `mc.n_paths` paths without storing them: each
/// batch is generated and summed in index order on one worker, keeping only
/// its largest magnitudes for the tail report, and batches merge in order.
pub fn mc_estimate<F>(mc: &McConfig, domain: u8, scale: f64, f: F) -> Result<Estimate>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    mc.validate()?;
    let n = mc.n_paths;
    let batches = mc.batches(n);
    let top = n.div_ceil(1000);
    let parts: Vec<(f64, f64, usize, Vec<f64>)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = (b * n / batches, (b + 1) * n / batches);
            let mut abs = Vec::with_capacity(hi - lo);
            let (mut sum, mut sum_abs) = (0.0, 0.0);
            for i in lo..hi {
                let v = f(&mut path_stream(mc.seed, domain, i, mc.antithetic))?;
                sum += v;
                sum_abs += v.abs();
                abs.push(v.abs());
            }
            let k = top.min(abs.len());
            if k > 0 && k < abs.len() {
                abs.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            }
            abs.truncate(k);
            Ok((sum, sum_abs, hi - lo, abs))
        })
        .collect::<Result<_>>()?;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let mean = total / n as f64;
    let se = if batches < 2 {
        0.0
    } else {
        let means: Vec<f64> = parts.iter().map(|p| p.0 / p.2 as f64).collect();
        let mm = means.iter().sum::<f64>() / batches as f64;
        (means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / ((batches - 1) * batches) as f64).sqrt()
    };
    let mut e = Estimate::from_mean_se(scale * mean, scale.abs() * se, n, Some(mc.seed), Method::ExactMc, mc.ci_level);
    let total_abs: f64 = parts.iter().map(|p| p.1).sum();
    if n >= 1000 && total_abs > 0.0 {
        let mut largest: Vec<f64> = parts.into_iter().flat_map(|p| p.3).collect();
        largest.sort_by(|a, b| b.total_cmp(a));
        let share = largest[..top].iter().sum::<f64>() / total_abs;
        e.attach_tail_warning(share);
    }
    Ok(e)
}

/// Fraction of `Σ|x|` carried by the largest 0.1% of `|x|`.
fn tail_share(samples: &[f64]) -> Option<f64> {
    let total: f64 = samples.iter().map(|x| x.abs()).sum();
    if total == 0.0 || samples.len() < 1000 {
        return None;
    }
    let k = samples.len().div_ceil(1000);
    let mut abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    abs.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Some(abs[..k].iter().sum::<f64>() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Samples per batch for batch-means errors; `None` gives 100 batches.
    pub batch_size: Option<usize>,
    pub ci_level: f64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, seed: 1, batch_size: None, ci_level: 0.99, antithetic: false }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(invalid("n_paths must be at least 2".to_string()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(invalid(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size must be positive".to_string()));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(invalid("antithetic sampling needs an even n_paths".to_string()));
        }
        Ok(())
    }

    fn batches(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => (n / b).max(1),
            None => n.min(100),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    EuCallOnIndex,
    EuPutOnIndex,
    VolPut,
    VolCall,
    FxCall,
    Zcb,
    CustomTerminal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    #[default]
    Terminal,
    Integral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    #[serde(default)]
    pub strike: f64,
    pub maturity: f64,
    #[serde(default)]
    pub monitoring: Monitoring,
}

impl PayoffSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(invalid(format!("strike must be >= 0, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(invalid(format!("maturity must be positive, got {}", self.maturity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Mmm(MmmParams),
    Bivariate(BivariateMmmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolOption {
    Put,
    Call,
}

impl VolOption {
    #[inline]
    pub fn payoff(self, vol: f64, strike: f64) -> f64 {
        match self {
            Self::Put => (strike - vol).max(0.0),
            Self::Call => (vol - strike).max(0.0),
        }
    }
}

/// Terminal claims on the index: `S₀·E[h(S_T)/S_T]` from exact samples.
/// For the bivariate model the index is the domestic GOP `Sᵃ`.
pub fn price_terminal_claim<H>(model: &Model, maturity: f64, mc: &McConfig, h: H) -> Result<Estimate>
where
    H: Fn(f64) -> f64 + Sync,
{
    mc.validate()?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(invalid(format!("maturity must be positive, got {maturity}")));
    }
    match model {
        Model::Mmm(p) => {
            p.validate()?;
            let acc = p.savings_account(maturity);
            mc_estimate(mc, domains::GOP_PATH, p.s0, |s| {
                let st = acc * mmm_discounted_terminal(s, p, maturity)?;
                Ok(h(st) / st)
            })
        }
        Model::Bivariate(p) => {
            let sampler = BivariateSampler::new(p, maturity)?;
            let acc = (p.a.r * maturity).exp();
            mc_estimate(mc, domains::BIVARIATE, p.a.s0, |s| {
                let st = acc * sampler.sample(s).0;
                Ok(h(st) / st)
            })
        }
    }
}

/// Dispatches on the payoff kind. Volatility payoffs need a density grid or
/// an MLMC configuration and go through [`price_vol_put`].
pub fn real_world_price(model: &Model, payoff: &PayoffSpec, mc: &McConfig) -> Result<Estimate> {
    payoff.validate()?;
    let k = payoff.strike;
    let t = payoff.maturity;
    match payoff.kind {
        PayoffKind::EuCallOnIndex => price_terminal_claim(model, t, mc, |s| (s - k).max(0.0)),
        PayoffKind::EuPutOnIndex => price_terminal_claim(model, t, mc, |s| (k - s).max(0.0)),
        PayoffKind::Zcb => price_terminal_claim(model, t, mc, |_| 1.0),
        PayoffKind::FxCall => match model {
            Model::Bivariate(p) => price_fx_call(p, k, t, mc),
            Model::Mmm(_) => Err(invalid("fx_call needs the bivariate model".to_string())),
        },
        PayoffKind::VolPut | PayoffKind::VolCall => {
            Err(invalid("volatility payoffs are priced from a density grid or by MLMC".to_string()))
        }
        PayoffKind::CustomTerminal => Err(invalid("custom payoffs are priced through price_terminal_claim".to_string())),
    }
}

/// `S₀·∫h(S)/S·p(y)dy` for index calls, puts and bonds under the MMM, with
/// `S = e^{rT}y` and `p` the BESQ(4) law of `S̄_T` at time `φ(T)`.
pub fn price_terminal_quadrature(p: &MmmParams, payoff: &PayoffSpec) -> Result<Estimate> {
    p.validate()?;
    payoff.validate()?;
    let (k, t) = (payoff.strike, payoff.maturity);
    let dphi = phi_increment(p.alpha0, p.eta, t);
    let acc = p.savings_account(t);
    let dens = |y: f64| if y <= 0.0 { 0.0 } else { besq_density(dphi, p.s0, y, 4.0).unwrap_or(0.0) };
    let kink = k / acc;
    let value = match payoff.kind {
        PayoffKind::Zcb => integrate_to_infinity(|y| dens(y) / (acc * y), 0.0, 1e-15, 1e-12).value,
        PayoffKind::EuCallOnIndex => {
            integrate_to_infinity(|y| if y <= 0.0 { 0.0 } else { (1.0 - kink / y) * dens(y) }, kink, 1e-15, 1e-12).value
        }
        PayoffKind::EuPutOnIndex => {
            if kink == 0.0 {
                0.0
            } else {
                crate::quad::integrate(|y| if y <= 0.0 { 0.0 } else { (kink / y - 1.0) * dens(y) }, 0.0, kink, 1e-15, 1e-12).value
            }
        }
        other => return Err(invalid(format!("no terminal quadrature for {other:?}"))),
    };
    Ok(Estimate::exact(p.s0 * value, Method::Quadrature))
}

/// How to evaluate a volatility option.
#[derive(Debug, Clone, Copy)]
pub enum VolMethod<'a> {
    Quadrature(&'a JointDensityGrid),
    Mlmc { cfg: &'a MlmcConfig, seed: u64 },
}

/// `S₀·E[(K − √(V_T/T))⁺/S_T]` with `S_T = e^{rT}α_T Y_T`.
pub fn price_vol_put(p: &MmmParams, strike: f64, maturity: f64, method: VolMethod<'_>) -> Result<Estimate> {
    price_vol_option(p, VolPayoff::put(strike, maturity), method)
}

pub fn price_vol_option(p: &MmmParams, payoff: VolPayoff, method: VolMethod<'_>) -> Result<Estimate> {
    p.validate()?;
    payoff.validate()?;
    match method {
        VolMethod::Quadrature(grid) => vol_option_quadrature(p, &payoff, grid),
        VolMethod::Mlmc { cfg, seed } => Ok(mlmc_run(p, &payoff, cfg, seed)?.estimate),
    }
}

fn vol_option_quadrature(p: &MmmParams, payoff: &VolPayoff, grid: &JointDensityGrid) -> Result<Estimate> {
    let t = payoff.maturity;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    if !close(grid.horizon, t) || !close(grid.x, p.y0()) || !close(grid.eta, p.eta) {
        return Err(invalid(format!(
            "grid is for (x, T, eta) = ({}, {}, {}), model needs ({}, {t}, {})",
            grid.x,
            grid.horizon,
            grid.eta,
            p.y0(),
            p.eta
        )));
    }
    let mass = grid.total_mass();
    if mass < COVERAGE_ERROR {
        return Err(Error::Coverage { mass });
    }
    let benchmark = p.savings_account(t) * p.alpha(t);
    let value = grid.expectation(|y, v| payoff.kind.payoff((v / t).sqrt(), payoff.strike) / (benchmark * y));
    let mut e = Estimate::exact(p.s0 * value, Method::Quadrature);
    if mass < COVERAGE_WARNING {
        e.warnings.push(format!("density grid mass {mass:.6} is below {COVERAGE_WARNING}"));
    }
    Ok(e)
}

/// `call − put − (√V̄ − K)` per path with common samples, each leg
/// benchmarked. The identity holds pathwise, so the estimate is exactly 0.
pub fn parity_gap(p: &MmmParams, strike: f64, maturity: f64, steps: usize, mc: &McConfig) -> Result<Estimate> {
    p.validate()?;
    mc.validate()?;
    let sr = p.square_root();
    let benchmark = p.savings_account(maturity) * p.alpha(maturity);
    mc_estimate(mc, domains::VOL_PATH, p.s0, |s| {
        let path = crate::mlmc::euler_vol_path(s, &sr, maturity, steps);
        let vol = (path.integral / maturity).sqrt();
        let call = VolOption::Call.payoff(vol, strike);
        let put = VolOption::Put.payoff(vol, strike);
        let forward = vol - strike;
        Ok((call - put - forward) / (benchmark * path.y_t.max(crate::mlmc::Y_FLOOR)))
    })
}

/// Volatility leg prices (call, put, forward) by Euler Monte Carlo on
/// independent seeds. Their parity combination is zero only in
/// expectation.
pub fn vol_legs_independent(p: &MmmParams, strike: f64, maturity: f64, steps: usize, mc: &McConfig) -> Result<[Estimate; 3]> {
    let sr = p.square_root();
    let benchmark = p.savings_account(maturity) * p.alpha(maturity);
    let leg = |seed: u64, f: &(dyn Fn(f64) -> f64 + Sync)| -> Result<Estimate> {
        let cfg = McConfig { seed, ..*mc };
        mc_estimate(&cfg, domains::VOL_PATH, p.s0, |s| {
            let path = crate::mlmc::euler_vol_path(s, &sr, maturity, steps);
            Ok(f((path.integral / maturity).sqrt()) / (benchmark * path.y_t.max(crate::mlmc::Y_FLOOR)))
        })
    };
    Ok([
        leg(mc.seed, &|v| VolOption::Call.payoff(v, strike))?,
        leg(mc.seed.wrapping_add(1), &|v| VolOption::Put.payoff(v, strike))?,
        leg(mc.seed.wrapping_add(2), &|v| v - strike)?,
    ])
}

/// `Sᵃ₀·E[(e^{r_a T}ȳᵃ/(e^{r_b T}ȳᵇ) − K)⁺ / (e^{r_a T}ȳᵃ)]`.
pub fn price_fx_call(p: &BivariateMmmParams, strike: f64, maturity: f64, mc: &McConfig) -> Result<Estimate> {
    mc.validate()?;
    if !(strike >= 0.0 && strike.is_finite()) {
        return Err(invalid(format!("strike must be >= 0, got {strike}")));
    }
    let sampler = BivariateSampler::new(p, maturity)?;
    let (ea, eb) = ((p.a.r * maturity).exp(), (p.b.r * maturity).exp());
    mc_estimate(mc, domains::BIVARIATE, p.a.s0, |s| {
        let (ya, yb) = sampler.sample(s);
        Ok(fx_call_payoff(ea * ya, eb * yb, strike) / (ea * ya))
    })
}

#[inline]
fn fx_call_payoff(sa: f64, sb: f64, strike: f64) -> f64 {
    (sa / sb - strike).max(0.0)
}

/// Nested quadrature for the FX call over independent scaled `χ'²(4)`
/// marginals. Needs `ρ = 0` unless `K = 0`, where the price reduces to
/// `Sᵃ₀e^{−r_b T}E[1/ȳᵇ]` for any `ρ`.
pub fn fx_call_quadrature(p: &BivariateMmmParams, strike: f64, maturity: f64) -> Result<f64> {
    p.validate()?;
    if !(maturity > 0.0) {
        return Err(invalid(format!("maturity must be positive, got {maturity}")));
    }
    let (pa, pb) = (p.a.phi(maturity), p.b.phi(maturity));
    let (ea, eb) = ((p.a.r * maturity).exp(), (p.b.r * maturity).exp());
    let dens = |phi: f64, s0: f64, y: f64| besq_density(phi, s0, y, 4.0).unwrap_or(0.0);
    if strike == 0.0 {
        let inv_b = integrate_to_infinity(|y| dens(pb, p.b.s0, y) / y, 0.0, 1e-14, 1e-12).value;
        return Ok(p.a.s0 * inv_b / eb);
    }
    if p.rho != 0.0 {
        return Err(invalid("the quadrature oracle needs rho = 0".to_string()));
    }
    let c = ea / eb;
    let inner = |yb: f64| {
        let lo = strike * yb / c;
        integrate_to_infinity(|ya| (c * ya / yb - strike) / (ea * ya) * dens(pa, p.a.s0, ya), lo, 1e-14, 1e-11).value
    };
    let outer = integrate_to_infinity(|yb| if yb <= 0.0 { 0.0 } else { inner(yb) * dens(pb, p.b.s0, yb) }, 0.0, 1e-13, 1e-10);
    Ok(p.a.s0 * outer.value)
}

/// `E[S̄₀/S̄_T] = S̄₀·∫y⁻¹p_{BESQ(4)}(φ(T), S̄₀, y)dy` by quadrature.
pub fn benchmarked_savings_quadrature(p: &MmmParams, maturity: f64) -> Result<f64> {
    p.validate()?;
    let dphi = phi_increment(p.alpha0, p.eta, maturity);
    if dphi == 0.0 {
        return Ok(1.0);
    }
    let q = integrate_to_infinity(|y| besq_density(dphi, p.s0, y, 4.0).unwrap_or(0.0) / y, 0.0, 1e-15, 1e-12);
    Ok(p.s0 * q.value)
}

/// Monte Carlo estimate of `E[S̄₀/S̄_T]` from exact terminal draws.
pub fn benchmarked_savings_mc(p: &MmmParams, maturity: f64, mc: &McConfig) -> Result<Estimate> {
    mc.validate()?;
    p.validate()?;
    mc_estimate(mc, domains::GOP_PATH, p.s0, |s| Ok(1.0 / mmm_discounted_terminal(s, p, maturity)?))
}
