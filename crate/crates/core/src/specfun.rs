//! Special-function kernels: log-gamma, modified Bessel functions of the
//! first kind, Kummer's confluent hypergeometric function, the Whittaker
//! M function and the noncentral chi-squared density.
//!
//! Everything that can overflow is evaluated in log-space. All functions are
//! pure and safe to call from any thread.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{domain, invalid, Error, Result};

/// Series truncation and overflow control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPolicy {
    pub rel_tol: f64,
    pub max_terms: usize,
    /// Partial sums are rescaled once they exceed `exp(overflow_guard)`.
    pub overflow_guard: f64,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_terms: 500,
            overflow_guard: 600.0,
        }
    }
}

impl EvalPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_terms == 0 || !(self.overflow_guard > 0.0) {
            return Err(invalid("EvalPolicy requires rel_tol > 0, max_terms >= 1, overflow_guard > 0"));
        }
        Ok(())
    }
}

// Lanczos approximation, g = 671/128, 14 terms.
const LANCZOS_G: f64 = 5.242_187_5;
const LANCZOS_C0: f64 = 0.999_999_999_999_997_1;
const LANCZOS_COEF: [f64; 14] = [
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_747,
    -0.491_913_816_097_620_2,
    0.339_946_499_848_118_9e-4,
    0.465_236_289_270_485_76e-4,
    -0.983_744_753_048_795_6e-4,
    0.158_088_703_224_912_5e-3,
    -0.210_264_441_724_104_88e-3,
    0.217_439_618_115_212_64e-3,
    -0.164_318_106_536_763_9e-3,
    0.844_182_239_838_527_4e-4,
    -0.261_908_384_015_814_1e-4,
    0.368_991_826_595_316_2e-5,
];
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    // Small arguments lose accuracy in the Lanczos sum; shift up by one.
    if x < 0.5 {
        return log_gamma_unchecked(x + 1.0) - x.ln();
    }
    let tmp = x + LANCZOS_G;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = LANCZOS_C0;
    let mut y = x;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (SQRT_2PI * ser / x).ln()
}

/// Complex `ln Γ(z)` for `Re z > 0` (principal branch of the Lanczos form).
pub fn log_gamma_complex(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        return log_gamma_complex(z + 1.0) - z.ln();
    }
    let tmp = z + LANCZOS_G;
    let tmp = (z + 0.5) * tmp.ln() - tmp;
    let mut ser = Complex64::new(LANCZOS_C0, 0.0);
    let mut y = z;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (ser * SQRT_2PI / z).ln()
}

const DEBYE_MIN_ORDER: f64 = 20.0;
const DEBYE_TERMS: usize = 12;

/// `ln I_ν(z)` for `ν ≥ 0`, `z ≥ 0`.
///
/// Ascending series for `z ≤ 20·max(1, ν)`, Hankel's large-argument
/// expansion beyond that, and Debye's uniform expansion once `ν ≥ 20`.
pub fn bessel_i_log(nu: f64, z: f64) -> Result<f64> {
    if !(nu >= 0.0) || !(z >= 0.0) || !nu.is_finite() || !z.is_finite() {
        return Err(domain(format!("bessel_i_log requires nu >= 0 and z >= 0, got nu={nu}, z={z}")));
    }
    if z == 0.0 {
        return Ok(if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if nu >= DEBYE_MIN_ORDER {
        Ok(bessel_i_log_debye(nu, z))
    } else if z <= 20.0 * nu.max(1.0) {
        bessel_i_log_series(nu, z, &EvalPolicy::default())
    } else {
        Ok(bessel_i_log_hankel(nu, z))
    }
}

fn bessel_i_log_series(nu: f64, z: f64, policy: &EvalPolicy) -> Result<f64> {
    let q = 0.25 * z * z;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut scale = 0.0_f64;
    let limit = policy.overflow_guard.exp();
    let mut k = 0usize;
    loop {
        k += 1;
        if k > policy.max_terms {
            return Err(Error::NoConvergence { what: "bessel I series", terms: policy.max_terms });
        }
        let kf = k as f64;
        term *= q / (kf * (kf + nu));
        sum += term;
        if sum > limit {
            sum /= limit;
            term /= limit;
            scale += policy.overflow_guard;
        }
        if kf > 0.5 * z && term < 1e-17 * sum {
            break;
        }
    }
    Ok(nu * (0.5 * z).ln() - log_gamma_unchecked(nu + 1.0) + sum.ln() + scale)
}

fn bessel_i_log_hankel(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut prev = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        term *= -(mu - odd * odd) / (8.0 * k as f64 * z);
        let mag = term.abs();
        if mag >= prev {
            break;
        }
        sum += term;
        if mag < 1e-17 * sum.abs() {
            break;
        }
        prev = mag;
    }
    z - 0.5 * (2.0 * PI * z).ln() + sum.ln()
}

/// Coefficients of Debye's polynomials `u_k(p)`, built from the recursion
/// `u_{k+1} = p²(1−p²)u_k'/2 + (1/8)∫₀^p (1−5t²)u_k(t) dt`.
fn debye_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut out = vec![vec![1.0]];
        for _ in 0..DEBYE_TERMS {
            let u = out.last().unwrap();
            let deg = u.len() - 1;
            let mut next = vec![0.0; deg + 4];
            // p²(1 − p²)/2 · u'
            for (i, &c) in u.iter().enumerate().skip(1) {
                let d = c * i as f64;
                // d · p^{i-1}
                next[i + 1] += 0.5 * d;
                next[i + 3] -= 0.5 * d;
            }
            // (1/8) ∫ (1 − 5t²) u
            for (i, &c) in u.iter().enumerate() {
                next[i + 1] += c / (8.0 * (i + 1) as f64);
                next[i + 3] -= 5.0 * c / (8.0 * (i + 3) as f64);
            }
            while next.len() > 1 && *next.last().unwrap() == 0.0 {
                next.pop();
            }
            out.push(next);
        }
        out
    })
}

fn poly_eval(coef: &[f64], p: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * p + c)
}

fn bessel_i_log_debye(nu: f64, z: f64) -> f64 {
    let w = z / nu;
    let root = (1.0 + w * w).sqrt();
    let p = 1.0 / root;
    let eta = root + (w / (1.0 + root)).ln();
    let mut sum = 0.0;
    let mut nu_pow = 1.0;
    for u in debye_polys() {
        let t = poly_eval(u, p) / nu_pow;
        sum += t;
        if t.abs() < 1e-17 * sum.abs() {
            break;
        }
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.25 * (1.0 + w * w).ln() + sum.ln()
}

/// `ln I_ν(z)` for complex order `ν` with `Re ν > −1` and real `z > 0`, by the
/// ascending series. Used on Laplace-inversion contours where the order
/// depends on the transform variable.
pub fn bessel_i_log_complex_order(nu: Complex64, z: f64, policy: &EvalPolicy) -> Result<Complex64> {
    Ok(nu * (0.5 * z).ln() - log_gamma_complex(nu + 1.0) + bessel_i_series_log(nu, z, policy)?)
}

/// `ln Σ_k (z²/4)^k / (k! (ν+1)_k)`, the order-dependent series factor of
/// `I_ν(z) = (z/2)^ν / Γ(ν+1) · Σ`.
pub(crate) fn bessel_i_series_log(nu: Complex64, z: f64, policy: &EvalPolicy) -> Result<Complex64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("complex-order Bessel requires z > 0, got {z}")));
    }
    let q = 0.25 * z * z;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut scale = 0.0;
    let limit = policy.overflow_guard.exp();
    let max_terms = policy.max_terms.max((2.0 * z) as usize + 200);
    let mut k = 0usize;
    loop {
        k += 1;
        if k > max_terms {
            return Err(Error::NoConvergence { what: "complex-order Bessel series", terms: max_terms });
        }
        let kf = k as f64;
        term *= q / (kf * (nu + kf));
        sum += term;
        if sum.norm() > limit {
            sum /= limit;
            term /= limit;
            scale += policy.overflow_guard;
        }
        if kf * kf > q && term.norm() < 1e-17 * sum.norm() {
            break;
        }
    }
    Ok(sum.ln() + scale)
}

/// Kummer series result as `mantissa · exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    pub fn value(self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

/// Kummer's confluent hypergeometric function `₁F₁(a; c; z)`.
pub fn hyp1f1(a: f64, c: f64, z: f64) -> Result<f64> {
    hyp1f1_with(a, c, z, &EvalPolicy::default())
}

pub fn hyp1f1_with(a: f64, c: f64, z: f64, policy: &EvalPolicy) -> Result<f64> {
    Ok(hyp1f1_scaled(a, c, z, policy)?.value())
}

pub(crate) fn hyp1f1_scaled(a: f64, c: f64, z: f64, policy: &EvalPolicy) -> Result<Scaled> {
    policy.validate()?;
    if !a.is_finite() || !c.is_finite() || !z.is_finite() {
        return Err(domain("hyp1f1 arguments must be finite"));
    }
    if is_nonpositive_integer(c) {
        return Err(invalid(format!("hyp1f1 lower parameter c = {c} is a nonpositive integer")));
    }
    if z == 0.0 || a == 0.0 {
        return Ok(Scaled { mantissa: 1.0, log_scale: 0.0 });
    }
    // Kummer's transformation keeps the series free of alternating signs.
    if z < 0.0 && !is_nonpositive_integer(a) {
        let inner = kummer_series(c - a, c, -z, policy)?;
        return Ok(Scaled { mantissa: inner.mantissa, log_scale: inner.log_scale + z });
    }
    kummer_series(a, c, z, policy)
}

fn kummer_series(a: f64, c: f64, z: f64, policy: &EvalPolicy) -> Result<Scaled> {
    let limit = policy.overflow_guard.exp();
    let mut term = 1.0_f64;
    // Neumaier compensated summation.
    let mut sum = 1.0_f64;
    let mut comp = 0.0_f64;
    let mut scale = 0.0_f64;
    for k in 0..policy.max_terms {
        let kf = k as f64;
        term *= (a + kf) * z / ((c + kf) * (kf + 1.0));
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        if term == 0.0 {
            return Ok(Scaled { mantissa: sum + comp, log_scale: scale });
        }
        if sum.abs() > limit {
            sum /= limit;
            comp /= limit;
            term /= limit;
            scale += policy.overflow_guard;
        }
        let past_peak = kf + 1.0 > (a.abs() + 1.0) && kf + 1.0 > z;
        if past_peak && term.abs() <= policy.rel_tol * 1e-4 * (sum + comp).abs() {
            return Ok(Scaled { mantissa: sum + comp, log_scale: scale });
        }
    }
    Err(Error::NoConvergence { what: "Kummer series", terms: policy.max_terms })
}

/// Whittaker function of the first kind,
/// `M_{k,m}(z) = e^{−z/2} z^{m+1/2} ₁F₁(m − k + 1/2; 1 + 2m; z)`.
pub fn whittaker_m(k: f64, m: f64, z: f64) -> Result<f64> {
    whittaker_m_with(k, m, z, &EvalPolicy::default())
}

pub fn whittaker_m_with(k: f64, m: f64, z: f64, policy: &EvalPolicy) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(domain(format!("whittaker_m requires z >= 0, got {z}")));
    }
    let c = 1.0 + 2.0 * m;
    if is_nonpositive_integer(c) {
        return Err(invalid(format!("whittaker_m: 1 + 2m = {c} is a nonpositive integer")));
    }
    if z == 0.0 {
        let p = m + 0.5;
        return Ok(if p > 0.0 { 0.0 } else if p == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let f = hyp1f1_scaled(m - k + 0.5, c, z, policy)?;
    if f.mantissa == 0.0 {
        return Ok(0.0);
    }
    let log_mag = f.mantissa.abs().ln() + f.log_scale - 0.5 * z + (m + 0.5) * z.ln();
    Ok(f.mantissa.signum() * log_mag.exp())
}

/// Log-density of the central chi-squared law with `df` degrees of freedom.
fn chi2_log_pdf(x: f64, df: f64) -> f64 {
    let h = 0.5 * df;
    (h - 1.0) * x.ln() - 0.5 * x - h * LN_2 - log_gamma_unchecked(h)
}

/// Noncentral chi-squared density, evaluated as a Poisson mixture of central
/// chi-squared densities summed outward from the dominant term.
pub fn ncx2_pdf(x: f64, df: f64, lambda: f64) -> Result<f64> {
    ncx2_pdf_with(x, df, lambda, &EvalPolicy::default())
}

pub fn ncx2_pdf_with(x: f64, df: f64, lambda: f64, policy: &EvalPolicy) -> Result<f64> {
    if !(x >= 0.0) || !(df > 0.0) || !(lambda >= 0.0) || !x.is_finite() || !lambda.is_finite() {
        return Err(domain(format!("ncx2_pdf requires x >= 0, df > 0, lambda >= 0; got x={x}, df={df}, lambda={lambda}")));
    }
    if x == 0.0 {
        return Ok(if df < 2.0 {
            f64::INFINITY
        } else if df == 2.0 {
            0.5 * (-0.5 * lambda).exp()
        } else {
            0.0
        });
    }
    if lambda == 0.0 {
        return Ok(chi2_log_pdf(x, df).exp());
    }
    Ok(ncx2_log_pdf_mixture(x, df, lambda, policy)?.exp())
}

pub(crate) fn ncx2_log_pdf_mixture(x: f64, df: f64, lambda: f64, policy: &EvalPolicy) -> Result<f64> {
    let half_l = 0.5 * lambda;
    let h = 0.5 * df;
    // term_j ∝ (λ/2)^j/j! · (x/2)^j/Γ(h+j); ratio r_j = (λx/4)/((j+1)(h+j)).
    let c = 0.25 * lambda * x;
    // Largest j with (j+1)(h+j) <= c.
    let disc = (h - 1.0) * (h - 1.0) + 4.0 * (c - h).max(-0.25 * (h - 1.0) * (h - 1.0));
    let j_peak = ((-(h + 1.0) + disc.sqrt()) * 0.5).max(0.0).floor() as usize;
    let log_term = |j: usize| -> f64 {
        let jf = j as f64;
        -half_l + jf * half_l.ln() - log_gamma_unchecked(jf + 1.0) + chi2_log_pdf(x, df + 2.0 * jf)
    };
    let base = log_term(j_peak);
    let mut sum = 1.0;
    let mut terms = 1usize;

    // Downward: terms decrease monotonically.
    let mut t = 1.0;
    let mut j = j_peak;
    while j > 0 {
        let jf = (j - 1) as f64;
        let r = c / ((jf + 1.0) * (h + jf));
        t /= r;
        sum += t;
        j -= 1;
        terms += 1;
        if t < policy.rel_tol * 1e-3 * sum {
            break;
        }
        if terms > policy.max_terms * 20 {
            return Err(Error::NoConvergence { what: "ncx2 Poisson mixture", terms });
        }
    }
    // Upward: ratios decrease, so the tail is bounded by a geometric series.
    let mut t = 1.0;
    let mut j = j_peak;
    loop {
        let jf = j as f64;
        let r = c / ((jf + 1.0) * (h + jf));
        t *= r;
        sum += t;
        j += 1;
        terms += 1;
        let rn = c / ((jf + 2.0) * (h + jf + 1.0));
        if rn < 1.0 && t * rn / (1.0 - rn) < policy.rel_tol * 1e-3 * sum {
            break;
        }
        if terms > policy.max_terms * 20 {
            return Err(Error::NoConvergence { what: "ncx2 Poisson mixture", terms });
        }
    }
    Ok(base + sum.ln())
}
