//! Multilevel Monte Carlo for benchmarked volatility options under the
//! minimal market model.
//!
//! Level `ℓ` runs a full-truncation Euler path of `Y` with `m₀·2^ℓ` steps
//! coupled to a coarse path with half as many, the coarse increments being
//! sums of consecutive fine pairs. Realized variance `∫dt/Y` uses the
//! trapezoidal rule on `max(Y, floor)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pricing::{Estimate, Method, VolOption};
use crate::processes::{cir_euler_increment, MmmParams, SquareRootParams};
use crate::randkit::{domains, stream_id, RngStream};

/// Lower bound applied to `Y` inside `1/Y` and in the benchmark.
pub const Y_FLOOR: f64 = 1e-10;
const VARIANCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmcConfig {
    /// Target root-mean-square error in price units.
    pub eps: f64,
    pub l_max: usize,
    /// Euler steps per unit time at level 0.
    pub n0: usize,
    /// Initial samples per level.
    pub pilot_n: usize,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        Self { eps: 5e-4, l_max: 10, n0: 4, pilot_n: 1000 }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.n0 == 0 || self.pilot_n < 2 {
            return Err(invalid("n0 must be >= 1 and pilot_n >= 2".to_string()));
        }
        if self.l_max > 40 {
            return Err(invalid(format!("l_max {} is beyond any useful refinement", self.l_max)));
        }
        Ok(())
    }

    /// Fine steps at `level`: `max(1, ⌈n0·T⌉)·2^level`.
    pub fn steps(&self, maturity: f64, level: usize) -> usize {
        ((self.n0 as f64 * maturity).ceil() as usize).max(1) << level
    }
}

/// Volatility option on `√((1/T)∫₀ᵀds/Y_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolPayoff {
    pub kind: VolOption,
    pub strike: f64,
    pub maturity: f64,
}

impl VolPayoff {
    pub fn put(strike: f64, maturity: f64) -> Self {
        Self { kind: VolOption::Put, strike, maturity }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(invalid(format!("strike must be >= 0, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(invalid(format!("maturity must be positive, got {}", self.maturity)));
        }
        Ok(())
    }

    /// `S₀·payoff(√(v/T)) / S_T` with `S_T = e^{rT}α_T y`.
    pub fn benchmarked(&self, p: &MmmParams, y_t: f64, v: f64) -> f64 {
        let t = self.maturity;
        let vol = (v / t).sqrt();
        p.s0 * self.kind.payoff(vol, self.strike) / (p.savings_account(t) * p.alpha(t) * y_t.max(Y_FLOOR))
    }
}

/// Per-level statistics of the multilevel estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub mean: f64,
    pub variance: f64,
    /// Time steps per sample on the fine path of this level.
    pub cost: f64,
    pub n_assigned: usize,
}

/// Writes `level,mean,variance,cost,n`.
pub fn write_level_stats_csv<W: Write>(out: W, levels: &[LevelStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["level", "mean", "variance", "cost", "n"]).map_err(io)?;
    for l in levels {
        w.write_record([l.level.to_string(), format!("{:e}", l.mean), format!("{:e}", l.variance), l.cost.to_string(), l.n_assigned.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Brownian increments for one coarse step: two fine increments and their
/// sum, which drives the coarse path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementPair {
    pub first: f64,
    pub second: f64,
    pub coarse: f64,
}

/// Draws the coupled increments for one coarse step of length `2h`.
#[inline]
pub fn coupled_increment(stream: &mut RngStream, sqrt_h: f64) -> IncrementPair {
    let first = sqrt_h * stream.normal();
    let second = sqrt_h * stream.normal();
    IncrementPair { first, second, coarse: first + second }
}

/// Terminal value and trapezoidal `∫dt/Y` of one Euler path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub y_t: f64,
    pub integral: f64,
}

#[inline]
fn inv(y: f64) -> f64 {
    1.0 / y.max(Y_FLOOR)
}

/// Single uncoupled Euler path with `steps` steps over `[0, T]`.
pub fn euler_vol_path(stream: &mut RngStream, sr: &SquareRootParams, maturity: f64, steps: usize) -> PathSummary {
    let h = maturity / steps as f64;
    let sh = h.sqrt();
    let mut y = sr.y0;
    let mut acc = 0.5 * inv(y);
    for _ in 0..steps {
        y = cir_euler_increment(sr, y, h, sh * stream.normal());
        acc += inv(y);
    }
    acc -= 0.5 * inv(y);
    PathSummary { y_t: y, integral: acc * h }
}

/// Fine path with `2·coarse_steps` steps and the coarse path driven by the
/// pairwise sums of its increments.
pub fn coupled_vol_paths(stream: &mut RngStream, sr: &SquareRootParams, maturity: f64, coarse_steps: usize) -> (PathSummary, PathSummary) {
    let hc = maturity / coarse_steps as f64;
    let h = 0.5 * hc;
    let sh = h.sqrt();
    let (mut yf, mut yc) = (sr.y0, sr.y0);
    let (mut af, mut ac) = (0.5 * inv(yf), 0.5 * inv(yc));
    for _ in 0..coarse_steps {
        let inc = coupled_increment(stream, sh);
        yf = cir_euler_increment(sr, yf, h, inc.first);
        af += inv(yf);
        yf = cir_euler_increment(sr, yf, h, inc.second);
        af += inv(yf);
        yc = cir_euler_increment(sr, yc, hc, inc.coarse);
        ac += inv(yc);
    }
    af -= 0.5 * inv(yf);
    ac -= 0.5 * inv(yc);
    (PathSummary { y_t: yf, integral: af * h }, PathSummary { y_t: yc, integral: ac * hc })
}

/// `(P_fine, P_coarse)` for one sample at `level`; `P_coarse = 0` at level 0.
pub fn coupled_level_sample(stream: &mut RngStream, p: &MmmParams, payoff: &VolPayoff, cfg: &MlmcConfig, level: usize) -> (f64, f64) {
    let sr = p.square_root();
    let t = payoff.maturity;
    let m = cfg.steps(t, level);
    if level == 0 {
        let f = euler_vol_path(stream, &sr, t, m);
        (payoff.benchmarked(p, f.y_t, f.integral), 0.0)
    } else {
        let (f, c) = coupled_vol_paths(stream, &sr, t, m / 2);
        (payoff.benchmarked(p, f.y_t, f.integral), payoff.benchmarked(p, c.y_t, c.integral))
    }
}

fn level_stream(seed: u64, level: usize, index: usize) -> RngStream {
    RngStream::new(seed, stream_id(domains::MLMC, ((level as u64) << 48) | index as u64))
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: usize,
    s1: f64,
    s2: f64,
}

impl Sums {
    fn mean(&self) -> f64 {
        self.s1 / self.n as f64
    }
    fn variance(&self) -> f64 {
        let m = self.mean();
        (self.s2 / self.n as f64 - m * m).max(VARIANCE_FLOOR)
    }
}

/// Adds samples `[sums.n, sums.n + count)` of level `level`, drawn in
/// parallel and accumulated in index order.
fn extend(sums: &mut Sums, seed: u64, p: &MmmParams, payoff: &VolPayoff, cfg: &MlmcConfig, level: usize, count: usize) {
    let start = sums.n;
    let diffs: Vec<f64> = (start..start + count)
        .into_par_iter()
        .map(|i| {
            let (f, c) = coupled_level_sample(&mut level_stream(seed, level, i), p, payoff, cfg, level);
            f - c
        })
        .collect();
    for d in diffs {
        sums.s1 += d;
        sums.s2 += d * d;
    }
    sums.n += count;
}

/// Mean and variance of `P_ℓ − P_{ℓ−1}` from `n` samples.
pub fn level_statistics(p: &MmmParams, payoff: &VolPayoff, cfg: &MlmcConfig, level: usize, n: usize, seed: u64) -> LevelStats {
    let mut s = Sums::default();
    extend(&mut s, seed, p, payoff, cfg, level, n);
    LevelStats { level, mean: s.mean(), variance: s.variance(), cost: cfg.steps(payoff.maturity, level) as f64, n_assigned: n }
}

/// Plain Euler Monte Carlo at one level: fine payoffs only, on the same
/// streams the multilevel run uses for that level.
pub fn single_level_estimate(p: &MmmParams, payoff: &VolPayoff, cfg: &MlmcConfig, level: usize, n: usize, seed: u64) -> Estimate {
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| coupled_level_sample(&mut level_stream(seed, level, i), p, payoff, cfg, level).0)
        .collect();
    let mut s = Sums::default();
    for v in vals {
        s.s1 += v;
        s.s2 += v * v;
    }
    s.n = n;
    let se = (s.variance() / n as f64).sqrt();
    Estimate::from_mean_se(s.mean(), se, n, Some(seed), Method::Mlmc, 0.99)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcOutcome {
    pub estimate: Estimate,
    pub levels: Vec<LevelStats>,
    /// `Σ N_ℓ C_ℓ` in fine time steps.
    pub total_cost: f64,
    /// Observed weak order used in the bias test.
    pub weak_order: f64,
}

/// Least-squares slope of `log₂|m_ℓ|` over the last (up to three)
/// correction levels, returned as a decay rate clamped to `[0.5, 3]`.
fn decay_rate(values: &[f64], last: usize) -> f64 {
    let first = last.saturating_sub(2).max(1);
    if last < 2 {
        return 1.0;
    }
    let pts: Vec<(f64, f64)> = (first..=last).map(|l| (l as f64, values[l].abs().max(VARIANCE_FLOOR).log2())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (-sxy / sxx).clamp(0.5, 3.0)
}

/// Adaptive multilevel estimator with `N_ℓ = ⌈2ε⁻²√(V_ℓ/C_ℓ)Σ√(V_kC_k)⌉`
/// and a geometric bias test on the last three level means. With
/// `l_max = 0` no bias test is possible and the run is plain Euler Monte
/// Carlo at level 0.
pub fn mlmc_run(p: &MmmParams, payoff: &VolPayoff, cfg: &MlmcConfig, seed: u64) -> Result<MlmcOutcome> {
    p.validate()?;
    payoff.validate()?;
    cfg.validate()?;
    let eps2 = cfg.eps * cfg.eps;
    let cost = |l: usize| cfg.steps(payoff.maturity, l) as f64;

    let mut big_l = cfg.l_max.min(2);
    let mut sums = vec![Sums::default(); big_l + 1];
    let mut add = vec![cfg.pilot_n; big_l + 1];
    let mut gamma = 1.0;
    loop {
        for l in 0..=big_l {
            if add[l] > 0 {
                extend(&mut sums[l], seed, p, payoff, cfg, l, add[l]);
            }
        }
        let mut var: Vec<f64> = sums.iter().map(|s| s.variance()).collect();
        let allocate = |var: &[f64], sums: &[Sums], add: &mut Vec<usize>| {
            let total: f64 = (0..var.len()).map(|l| (var[l] * cost(l)).sqrt()).sum();
            add.resize(var.len(), 0);
            for l in 0..var.len() {
                let target = (2.0 / eps2 * (var[l] / cost(l)).sqrt() * total).ceil() as usize;
                add[l] = target.saturating_sub(sums[l].n);
            }
        };
        allocate(&var, &sums, &mut add);
        if add.iter().zip(&sums).any(|(a, s)| *a as f64 > 0.01 * s.n as f64) {
            continue;
        }

        if big_l == 0 {
            break;
        }
        let means: Vec<f64> = sums.iter().map(|s| s.mean()).collect();
        gamma = decay_rate(&means, big_l);
        let two_g = 2f64.powf(gamma);
        let first = big_l.saturating_sub(2).max(1);
        let remaining = (first..=big_l).map(|l| means[l].abs() / two_g.powi((big_l - l) as i32)).fold(0.0, f64::max);
        if remaining < cfg.eps / 2f64.sqrt() * (two_g - 1.0) {
            break;
        }
        if big_l == cfg.l_max {
            return Err(Error::MlmcNotConverged { max_level: big_l, levels: stats(&sums, &cost) });
        }
        let beta = decay_rate(&var, big_l);
        big_l += 1;
        var.push(var[big_l - 1] / 2f64.powf(beta));
        sums.push(Sums::default());
        allocate(&var, &sums, &mut add);
        add[big_l] = add[big_l].max(cfg.pilot_n);
    }

    let levels = stats(&sums, &cost);
    let value: f64 = levels.iter().map(|l| l.mean).sum();
    let se = levels.iter().map(|l| l.variance / l.n_assigned as f64).sum::<f64>().sqrt();
    let n: usize = levels.iter().map(|l| l.n_assigned).sum();
    let total_cost = levels.iter().map(|l| l.cost * l.n_assigned as f64).sum();
    Ok(MlmcOutcome { estimate: Estimate::from_mean_se(value, se, n, Some(seed), Method::Mlmc, 0.99), levels, total_cost, weak_order: gamma })
}

fn stats(sums: &[Sums], cost: &dyn Fn(usize) -> f64) -> Vec<LevelStats> {
    sums.iter()
        .enumerate()
        .map(|(l, s)| LevelStats { level: l, mean: s.mean(), variance: s.variance(), cost: cost(l), n_assigned: s.n })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_increments_are_pairwise_sums() {
        let mut s = RngStream::new(4, 0);
        let mut t = RngStream::new(4, 0);
        for _ in 0..100 {
            let inc = coupled_increment(&mut s, 0.1);
            let (a, b) = (0.1 * t.normal(), 0.1 * t.normal());
            assert_eq!(inc.first.to_bits(), a.to_bits());
            assert_eq!(inc.second.to_bits(), b.to_bits());
            assert_eq!(inc.coarse.to_bits(), (a + b).to_bits());
        }
    }

    #[test]
    fn deterministic_limit_at_level_zero() {
        // A large Y keeps the noise negligible relative to the ODE path
        // dy = (1 − ηy)dt, and the payoff reduces to the ODE functional.
        let p = MmmParams::new(1.0, 1e-9, 0.05, 0.0).unwrap();
        let payoff = VolPayoff { kind: VolOption::Call, strike: 0.0, maturity: 1.0 };
        let cfg = MlmcConfig { n0: 64, ..MlmcConfig::default() };
        let (f, c) = coupled_level_sample(&mut RngStream::new(1, 0), &p, &payoff, &cfg, 0);
        assert_eq!(c, 0.0);
        let y0 = p.y0();
        let y = |t: f64| 1.0 / 0.05 + (y0 - 1.0 / 0.05) * (-0.05 * t).exp();
        let v: f64 = crate::quad::integrate(|t| 1.0 / y(t), 0.0, 1.0, 1e-20, 1e-12).value;
        let expect = p.s0 * v.sqrt() / (p.alpha(1.0) * y(1.0));
        assert!(((f - expect) / expect).abs() < 1e-3, "{f} vs {expect}");
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(MlmcConfig { eps: 0.0, ..MlmcConfig::default() }.validate().is_err());
        assert!(MlmcConfig { n0: 0, ..MlmcConfig::default() }.validate().is_err());
        assert_eq!(MlmcConfig::default().steps(1.0, 3), 32);
        assert_eq!(MlmcConfig::default().steps(0.1, 0), 1);
    }
}
