//! One-dimensional processes: the minimal market model's clock, exact
//! squared Bessel and square-root transitions, a full-truncation Euler
//! fallback and GOP path assembly.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::randkit::{sample_ncx2, RngStream};
use crate::specfun::{bessel_i_log, log_gamma_unchecked, ncx2_pdf};

const SMALL_RATE: f64 = 1e-8;

/// Stylized minimal market model.
///
/// The discounted GOP `S̄_t = S_t/S⁰_t` equals `α_t Y_t` with
/// `α_t = α₀e^{ηt}` and `Y` the square-root process
/// `dY = (1 − ηY)dt + √Y dW`, so `Y₀ = s0/alpha0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmmParams {
    pub s0: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub r: f64,
    #[serde(default)]
    pub phi0: f64,
}

impl MmmParams {
    pub fn new(s0: f64, alpha0: f64, eta: f64, r: f64) -> Result<Self> {
        let p = Self { s0, alpha0, eta, r, phi0: 0.0 };
        p.validate()?;
        Ok(p)
    }

    /// Desk-scale defaults used by tests and the `stylized` preset.
    pub fn stylized() -> Self {
        Self { s0: 1.0, alpha0: 0.05, eta: 0.05, r: 0.03, phi0: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s0", self.s0), ("alpha0", self.alpha0), ("eta", self.eta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("MMM parameter {name} must be > 0, got {v}")));
            }
        }
        if !self.r.is_finite() || !self.phi0.is_finite() {
            return Err(invalid("MMM parameters r and phi0 must be finite"));
        }
        Ok(())
    }

    /// `α_t = α₀ e^{ηt}`.
    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha0 * (self.eta * t).exp()
    }

    /// Initial value of the square-root factor, `Y₀ = S̄₀/α₀`.
    pub fn y0(&self) -> f64 {
        self.s0 / self.alpha0
    }

    /// The square-root process driving the index volatility.
    pub fn square_root(&self) -> SquareRootParams {
        SquareRootParams { a: 1.0, b: self.eta, sigma: 1.0, y0: self.y0() }
    }

    pub fn savings_account(&self, t: f64) -> f64 {
        (self.r * t).exp()
    }
}

/// Transformed time `φ(t) = φ(0) + α₀(e^{ηt} − 1)/(4η)`.
pub fn phi_time(p: &MmmParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("phi_time requires t >= 0, got {t}")));
    }
    Ok(p.phi0 + phi_increment(p.alpha0, p.eta, t))
}

pub(crate) fn phi_increment(alpha0: f64, eta: f64, t: f64) -> f64 {
    let x = eta * t;
    if x.abs() < SMALL_RATE {
        0.25 * alpha0 * t * (1.0 + 0.5 * x)
    } else {
        0.25 * alpha0 * x.exp_m1() / eta
    }
}

/// Squared Bessel process `dX = δ dt + 2√X dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesqParams {
    pub delta: f64,
    pub x0: f64,
}

impl BesqParams {
    pub fn new(delta: f64, x0: f64) -> Result<Self> {
        if !(delta >= 0.0) || !(x0 >= 0.0) {
            return Err(invalid(format!("BESQ requires delta >= 0 and x0 >= 0, got ({delta}, {x0})")));
        }
        Ok(Self { delta, x0 })
    }

    /// Index `ν = δ/2 − 1`.
    pub fn index(&self) -> f64 {
        0.5 * self.delta - 1.0
    }

    pub fn can_sample_exactly(&self) -> bool {
        self.delta > 0.0 || self.x0 > 0.0
    }
}

/// Transition density of BESQ(δ) from `x` to `y` over time `t`, oriented as
/// a forward density in `y`.
pub fn besq_density(t: f64, x: f64, y: f64, delta: f64) -> Result<f64> {
    Ok(besq_log_density(t, x, y, delta)?.exp())
}

pub fn besq_log_density(t: f64, x: f64, y: f64, delta: f64) -> Result<f64> {
    if !(t > 0.0) || !(x >= 0.0) || !(y > 0.0) || !(delta > 0.0) {
        return Err(domain(format!("besq_density requires t > 0, x >= 0, y > 0, delta > 0; got t={t}, x={x}, y={y}, delta={delta}")));
    }
    let half = 0.5 * delta;
    if x == 0.0 {
        return Ok(-half * (2.0 * t).ln() + (half - 1.0) * y.ln() - y / (2.0 * t) - log_gamma_unchecked(half));
    }
    let nu = half - 1.0;
    let z = (x * y).sqrt() / t;
    let log_i = if nu >= 0.0 {
        bessel_i_log(nu, z)?
    } else {
        // I_{−ν} ≠ I_ν for non-integer ν; fall back to the noncentral law.
        return Ok(ncx2_pdf(y / t, delta, x / t)?.ln() - t.ln());
    };
    Ok(-(2.0 * t).ln() + 0.5 * nu * (y / x).ln() + log_i - (x + y) / (2.0 * t))
}

/// `E_x[e^{−λX_t}] = exp(−xλ/(1+2λt)) (1+2λt)^{−δ/2}`.
pub fn besq_laplace(x: f64, t: f64, lambda: f64, delta: f64) -> f64 {
    let d = 1.0 + 2.0 * lambda * t;
    (-x * lambda / d - 0.5 * delta * d.ln()).exp()
}

/// Exact BESQ(δ) transition: `X_{t+dt} = dt · χ'²(δ, x/dt)`.
pub fn besq_sample_transition(stream: &mut RngStream, x: f64, delta: f64, dt: f64) -> Result<f64> {
    if !(x >= 0.0) || !(delta > 0.0) || !(dt > 0.0) {
        return Err(domain(format!("besq transition requires x >= 0, delta > 0, dt > 0; got ({x}, {delta}, {dt})")));
    }
    Ok(dt * sample_ncx2(stream, delta, x / dt)?)
}

/// Generalized square-root process `dY = (a − bY)dt + σ√Y dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareRootParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub y0: f64,
}

impl SquareRootParams {
    pub fn new(a: f64, b: f64, sigma: f64, y0: f64) -> Result<Self> {
        let p = Self { a, b, sigma, y0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) || !(self.sigma > 0.0) || !(self.y0 > 0.0) || !self.b.is_finite() {
            return Err(invalid(format!("square-root process requires a >= 0, sigma > 0, y0 > 0; got {self:?}")));
        }
        Ok(())
    }

    /// `4a/σ²`.
    pub fn dimension(&self) -> f64 {
        4.0 * self.a / (self.sigma * self.sigma)
    }

    /// Scale `c` and noncentrality of `Y_{t+dt} = c · χ'²(4a/σ², y e^{−b dt}/c)`.
    pub fn transition_law(&self, y: f64, dt: f64) -> (f64, f64) {
        let bdt = self.b * dt;
        let s2 = self.sigma * self.sigma;
        let c = if bdt.abs() < SMALL_RATE {
            0.25 * s2 * dt * (1.0 - 0.5 * bdt)
        } else {
            s2 * (-(-bdt).exp_m1()) / (4.0 * self.b)
        };
        (c, y * (-bdt).exp() / c)
    }

    /// `E[Y_{t+dt} | Y_t = y]`.
    pub fn conditional_mean(&self, y: f64, dt: f64) -> f64 {
        let bdt = self.b * dt;
        let decay = (-bdt).exp();
        let growth = if bdt.abs() < SMALL_RATE { dt * (1.0 - 0.5 * bdt) } else { -(-bdt).exp_m1() / self.b };
        y * decay + self.a * growth
    }
}

/// Exact transition density of the square-root process.
pub fn cir_transition_density(p: &SquareRootParams, y: f64, y_next: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) || !(y >= 0.0) || !(y_next >= 0.0) {
        return Err(domain("cir density requires dt > 0 and nonnegative states"));
    }
    let (c, lambda) = p.transition_law(y, dt);
    Ok(ncx2_pdf(y_next / c, p.dimension(), lambda)? / c)
}

/// Exact square-root transition via the scaled noncentral chi-squared law.
pub fn cir_sample_transition(stream: &mut RngStream, p: &SquareRootParams, y: f64, dt: f64) -> Result<f64> {
    if !(y >= 0.0) || !(dt > 0.0) {
        return Err(domain(format!("cir transition requires y >= 0, dt > 0; got ({y}, {dt})")));
    }
    if !(p.a > 0.0) && y == 0.0 {
        return Ok(0.0);
    }
    let (c, lambda) = p.transition_law(y, dt);
    if p.a == 0.0 {
        // Zero-dimensional law: point mass at 0 plus a Poisson mixture.
        let j = crate::randkit::sample_poisson(stream, 0.5 * lambda)?;
        if j == 0 {
            return Ok(0.0);
        }
        return Ok(c * crate::randkit::sample_gamma(stream, j as f64, 2.0)?);
    }
    Ok(c * sample_ncx2(stream, p.dimension(), lambda)?)
}

/// Full-truncation Euler step; the returned state may be negative and is
/// only truncated inside the coefficients.
pub fn cir_euler_step(stream: &mut RngStream, p: &SquareRootParams, y: f64, dt: f64) -> f64 {
    let z = stream.normal();
    cir_euler_increment(p, y, dt, dt.sqrt() * z)
}

#[inline]
pub(crate) fn cir_euler_increment(p: &SquareRootParams, y: f64, dt: f64, dw: f64) -> f64 {
    let yp = y.max(0.0);
    y + (p.a - p.b * yp) * dt + p.sigma * yp.sqrt() * dw
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Grid("time grid is empty".into()));
    }
    if !(times[0] >= 0.0) {
        return Err(Error::Grid(format!("first grid time must be >= 0, got {}", times[0])));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// GOP values `S_t = e^{rt} X_{φ(t)}` on `times`, with `X` an exact BESQ(4)
/// path in transformed time started at `S̄₀ = s0`.
pub fn mmm_gop_path(stream: &mut RngStream, p: &MmmParams, times: &[f64]) -> Result<Vec<f64>> {
    check_grid(times)?;
    let mut out = Vec::with_capacity(times.len());
    let mut x = p.s0;
    let mut phi_prev = phi_time(p, 0.0)?;
    for &t in times {
        let phi = phi_time(p, t)?;
        let dphi = phi - phi_prev;
        if dphi > 0.0 {
            x = besq_sample_transition(stream, x, 4.0, dphi)?;
        }
        debug_assert!(x >= 0.0);
        out.push(p.savings_account(t) * x);
        phi_prev = phi;
    }
    Ok(out)
}

/// Discounted GOP at `t` drawn in a single exact step.
pub fn mmm_discounted_terminal(stream: &mut RngStream, p: &MmmParams, t: f64) -> Result<f64> {
    let dphi = phi_increment(p.alpha0, p.eta, t);
    if dphi == 0.0 {
        return Ok(p.s0);
    }
    besq_sample_transition(stream, p.s0, 4.0, dphi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, integrate_to_infinity};

    #[test]
    fn phi_time_values() {
        let p = MmmParams { s0: 1.0, alpha0: 1.0, eta: 0.1, r: 0.0, phi0: 0.0 };
        assert_eq!(phi_time(&p, 0.0).unwrap(), 0.0);
        // Quadrature oracle for (1/4)∫₀¹ e^{0.1 s} ds.
        let q = integrate(|s| 0.25 * (0.1 * s).exp(), 0.0, 1.0, 1e-15, 1e-15).value;
        assert!((q - 0.262_927_295_189_119_06).abs() < 1e-15);
        assert!((phi_time(&p, 1.0).unwrap() - q).abs() < 1e-14);

        let tiny = MmmParams { eta: 1e-12, phi0: 0.3, ..p };
        assert!((phi_time(&tiny, 2.0).unwrap() - 0.3 - 0.5).abs() < 1e-12);
        assert!(phi_time(&p, -1.0).is_err());
        let mut last = -1.0;
        for i in 0..50 {
            let v = phi_time(&p, i as f64 * 0.3).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn stylized_square_root_factor() {
        let p = MmmParams::stylized();
        assert!((p.y0() - 20.0).abs() < 1e-12);
        assert_eq!(p.square_root().dimension(), 4.0);
        assert!(MmmParams::new(1.0, 0.0, 0.05, 0.0).is_err());
    }

    #[test]
    fn besq_density_normalizes() {
        let mass = integrate_to_infinity(|y| besq_density(1.0, 1.0, y, 4.0).unwrap(), 1e-300, 1e-13, 1e-13).value;
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
        for &(t, x, d) in &[(0.5, 3.0, 4.0), (2.0, 0.1, 2.0), (0.3, 7.0, 5.5), (1.0, 2.0, 1.2)] {
            let mass = integrate_to_infinity(|y| besq_density(t, x, y, d).unwrap(), 1e-300, 1e-12, 1e-12).value;
            assert!((mass - 1.0).abs() < 1e-8, "t={t} x={x} d={d}: {mass}");
            let mean = integrate_to_infinity(|y| y * besq_density(t, x, y, d).unwrap(), 1e-300, 1e-12, 1e-12).value;
            assert!((mean - (x + d * t)).abs() < 1e-6, "mean {mean}");
        }
    }

    #[test]
    fn besq_density_zero_start_limit() {
        for &y in &[0.05, 1.0, 4.0] {
            let at_zero = besq_density(0.7, 0.0, y, 4.0).unwrap();
            let near_zero = besq_density(0.7, 1e-14, y, 4.0).unwrap();
            assert!((at_zero - near_zero).abs() < 1e-10, "{at_zero} vs {near_zero}");
        }
        assert!(besq_density(0.0, 1.0, 1.0, 4.0).is_err());
        assert!(besq_density(1.0, 1.0, 0.0, 4.0).is_err());
    }

    #[test]
    fn besq_laplace_matches_density_quadrature() {
        assert_eq!(besq_laplace(1.3, 0.4, 0.0, 4.0), 1.0);
        assert!((besq_laplace(0.0, 0.4, 2.0, 3.0) - 2.6f64.powf(-1.5)).abs() < 1e-15);
        let (x, t, l, d) = (1.0, 0.5, 0.7, 4.0);
        let q = integrate_to_infinity(|y| (-l * y).exp() * besq_density(t, x, y, d).unwrap(), 1e-300, 1e-14, 1e-13).value;
        assert!(((q - besq_laplace(x, t, l, d)) / q).abs() < 1e-6);
    }

    #[test]
    fn cir_law_parameters() {
        let p = SquareRootParams::new(1.0, 0.05, 1.0, 20.0).unwrap();
        assert_eq!(p.dimension(), 4.0);
        let (c, _) = p.transition_law(1.0, 1e-12);
        assert!((c - 0.25e-12).abs() < 1e-24);
        assert!(SquareRootParams::new(-1.0, 0.1, 1.0, 1.0).is_err());
        assert!(SquareRootParams::new(1.0, 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn cir_density_normalizes_and_has_linear_mean() {
        let p = SquareRootParams::new(0.7, 0.9, 0.6, 1.0).unwrap();
        let mass = integrate(|y| cir_transition_density(&p, 1.2, y, 0.8).unwrap(), 0.0, 40.0, 1e-13, 1e-13).value;
        assert!((mass - 1.0).abs() < 1e-9);
        let mean = integrate(|y| y * cir_transition_density(&p, 1.2, y, 0.8).unwrap(), 0.0, 40.0, 1e-13, 1e-13).value;
        assert!((mean - p.conditional_mean(1.2, 0.8)).abs() < 1e-9);
    }

    #[test]
    fn euler_without_noise_is_the_ode_step() {
        let p = SquareRootParams { a: 1.0, b: 0.5, sigma: 0.0, y0: 2.0 };
        let mut s = RngStream::new(1, 1);
        let y = cir_euler_step(&mut s, &p, 2.0, 0.1);
        assert!((y - (2.0 + (1.0 - 1.0) * 0.1)).abs() < 1e-15);
        let y = cir_euler_step(&mut s, &p, -0.5, 0.1);
        assert!((y - (-0.5 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn gop_path_grid_errors() {
        let p = MmmParams::stylized();
        let mut s = RngStream::new(1, 1);
        assert_eq!(mmm_gop_path(&mut s, &p, &[0.0]).unwrap(), vec![p.s0]);
        assert!(mmm_gop_path(&mut s, &p, &[]).is_err());
        assert!(mmm_gop_path(&mut s, &p, &[1.0, 1.0]).is_err());
        assert!(mmm_gop_path(&mut s, &p, &[-1.0, 1.0]).is_err());
    }
}
