//! Symmetry analysis of `u_t = b x^γ u_xx + f(x) u_x − g(x) u`: Ricatti drift
//! conditions, the first-family symmetry, transform identities, and numerical
//! Laplace inversion for the joint law of `(Y_T, ∫₀^T dt/Y_t)` under the
//! square-root process `dY = (1 − ηY)dt + √Y dW`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::quad::{gauss_hermite, integrate, integrate_to_infinity, simpson_weights, trapezoid_weights};
use crate::specfun::{bessel_i_log, bessel_i_series_log, hyp1f1_scaled, log_gamma_complex, log_gamma_unchecked, EvalPolicy};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coefficients of the Cauchy problem `u_t = b x^γ u_xx + f u_x − g u`.
#[derive(Clone)]
pub struct DriftProblem {
    pub gamma: f64,
    pub b: f64,
    f: RealFn,
    g: Option<RealFn>,
    f_prime: Option<RealFn>,
}

impl fmt::Debug for DriftProblem {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.debug_struct("DriftProblem")
            .field("gamma", &self.gamma)
            .field("b", &self.b)
            .field("has_potential", &self.g.is_some())
            .field("has_derivative", &self.f_prime.is_some())
            .finish()
    }
}

impl DriftProblem {
    pub fn new(gamma: f64, b: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if gamma == 2.0 {
            return Err(Error::GammaTwo);
        }
        if !(b > 0.0) || !gamma.is_finite() {
            return Err(invalid(format!("drift problem requires b > 0 and finite gamma, got b={b}, gamma={gamma}")));
        }
        Ok(Self { gamma, b, f: Arc::new(f), g: None, f_prime: None })
    }

    pub fn with_potential(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    pub fn with_derivative(mut self, f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f_prime = Some(Arc::new(f_prime));
        self
    }

    /// Backward equation of BESQ(δ): `γ = 1`, `b = 2`, `f = δ`.
    pub fn besq(delta: f64) -> Self {
        Self::new(1.0, 2.0, move |_| delta).unwrap().with_derivative(|_| 0.0)
    }

    /// Feynman–Kac problem of `dY = (1 − ηY)dt + √Y dW` killed at rate `μ/Y`.
    pub fn square_root(eta: f64, mu: f64) -> Self {
        Self::new(1.0, 0.5, move |x| 1.0 - eta * x)
            .unwrap()
            .with_derivative(move |_| -eta)
            .with_potential(move |x| mu / x)
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn potential(&self, x: f64) -> f64 {
        self.g.as_ref().map_or(0.0, |g| g(x))
    }

    pub fn drift_prime(&self, x: f64) -> f64 {
        match &self.f_prime {
            Some(fp) => fp(x),
            None => {
                let h = 1e-6 * x.abs().max(1.0);
                (self.drift(x + h) - self.drift(x - h)) / (2.0 * h)
            }
        }
    }

    /// `h(x) = x^{1−γ} f(x)` and its derivative.
    fn h_and_derivative(&self, x: f64) -> (f64, f64) {
        let f = self.drift(x);
        let p = x.powf(1.0 - self.gamma);
        (p * f, (1.0 - self.gamma) * p / x * f + p * self.drift_prime(x))
    }

    /// Left side shared by the three drift equations,
    /// `b x h' − b h + h²/2 + 2b x^{2−γ} g(x)`.
    pub fn ricatti_lhs(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(domain(format!("drift equations are posed on x > 0, got {x}")));
        }
        let (h, hp) = self.h_and_derivative(x);
        let v = self.b * x * hp - self.b * h + 0.5 * h * h + 2.0 * self.b * x.powf(2.0 - self.gamma) * self.potential(x);
        if !v.is_finite() {
            return Err(Error::Evaluation { x, reason: "drift, derivative or potential is not finite".into() });
        }
        Ok(v)
    }

    /// `F(x) = ∫₁ˣ f(s)/s^γ ds` by adaptive quadrature.
    pub fn antiderivative_by_quadrature(&self) -> RealFn {
        let f = self.f.clone();
        let gamma = self.gamma;
        Arc::new(move |x: f64| {
            let integrand = |s: f64| f(s) / s.powf(gamma);
            if x >= 1.0 {
                integrate(integrand, 1.0, x, 1e-14, 1e-13).value
            } else {
                -integrate(integrand, x, 1.0, 1e-14, 1e-13).value
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RicattiCase {
    One,
    Two,
    Three,
}

impl RicattiCase {
    pub const ALL: [RicattiCase; 3] = [RicattiCase::One, RicattiCase::Two, RicattiCase::Three];

    pub fn index(self) -> u8 {
        match self {
            RicattiCase::One => 1,
            RicattiCase::Two => 2,
            RicattiCase::Three => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(RicattiCase::One),
            2 => Some(RicattiCase::Two),
            3 => Some(RicattiCase::Three),
            _ => None,
        }
    }

    /// Number of free constants on the right side.
    pub fn arity(self) -> usize {
        if self == RicattiCase::One {
            2
        } else {
            3
        }
    }

    /// Right side as `Σ basis_i(x)·const_i + offset`.
    fn basis(self, p: &DriftProblem, x: f64) -> (Vec<f64>, f64) {
        let g = p.gamma;
        let two_minus = 2.0 - g;
        let quartic = x.powf(4.0 - 2.0 * g) / (2.0 * two_minus * two_minus);
        let quadratic = x.powf(two_minus) / two_minus;
        match self {
            RicattiCase::One => (vec![2.0 * p.b * x.powf(two_minus), 1.0], 0.0),
            RicattiCase::Two => (vec![quartic, quadratic, 1.0], 0.0),
            RicattiCase::Three => {
                let e = 3.0 - 1.5 * g;
                let kappa = g / 8.0 * (g - 4.0) * p.b * p.b;
                (vec![quartic, x.powf(e) / e, quadratic], -kappa)
            }
        }
    }
}

impl fmt::Display for RicattiCase {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(out, "{}", self.index())
    }
}

/// Left minus right side of the selected drift equation at `x`. Unused
/// trailing constants are ignored (case 1 takes `A, B`).
pub fn ricatti_residual(case: RicattiCase, p: &DriftProblem, consts: [f64; 3], x: f64) -> Result<f64> {
    let lhs = p.ricatti_lhs(x)?;
    let (basis, offset) = case.basis(p, x);
    let rhs: f64 = basis.iter().zip(consts).map(|(b, c)| b * c).sum::<f64>() + offset;
    Ok(lhs - rhs)
}

/// Outcome of fitting the drift equations on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftClass {
    pub case: RicattiCase,
    /// `A, B` (case 1) or `A, B, C`.
    pub constants: Vec<f64>,
    /// Sup-norm of the fitted residual over the grid.
    pub residual: f64,
    /// Acceptance threshold `1e-6·(1 + sup|lhs|)`.
    pub tolerance: f64,
}

/// Least-squares fit of each drift family in turn; the first family whose
/// residual clears the tolerance is returned.
pub fn classify_drift(p: &DriftProblem, x_grid: &[f64]) -> Result<Option<DriftClass>> {
    Ok(fit_all_cases(p, x_grid)?.into_iter().find(|c| c.residual < c.tolerance))
}

/// Fits of all three families, matched or not.
pub fn fit_all_cases(p: &DriftProblem, x_grid: &[f64]) -> Result<Vec<DriftClass>> {
    if x_grid.len() < 8 {
        return Err(Error::Grid(format!("drift classification needs at least 8 points, got {}", x_grid.len())));
    }
    if x_grid.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Grid("drift classification grid must lie in (0, ∞)".into()));
    }
    let lhs: Vec<f64> = x_grid.iter().map(|&x| p.ricatti_lhs(x)).collect::<Result<_>>()?;
    let tolerance = 1e-6 * (1.0 + lhs.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut out = Vec::with_capacity(3);
    for case in RicattiCase::ALL {
        let k = case.arity();
        let mut design = DMatrix::zeros(x_grid.len(), k);
        let mut target = DVector::zeros(x_grid.len());
        for (i, &x) in x_grid.iter().enumerate() {
            let (basis, offset) = case.basis(p, x);
            for j in 0..k {
                design[(i, j)] = basis[j];
            }
            target[i] = lhs[i] - offset;
        }
        // Column equilibration before the SVD solve.
        let norms: Vec<f64> = (0..k).map(|j| design.column(j).norm().max(f64::MIN_POSITIVE)).collect();
        for (j, &nj) in norms.iter().enumerate() {
            design.column_mut(j).unscale_mut(nj);
        }
        let svd = design.clone().svd(true, true);
        let sol = svd.solve(&target, 1e-14).map_err(|e| invalid(format!("least squares failed: {e}")))?;
        let fitted = &design * &sol;
        let residual = (fitted - &target).amax();
        let constants = (0..k).map(|j| sol[j] / norms[j]).collect();
        out.push(DriftClass { case, constants, residual, tolerance });
    }
    Ok(out)
}

/// Data of the first-family symmetry: constants `A, B` and an
/// antiderivative `F` with `F' = f/x^γ`.
#[derive(Clone)]
pub struct SymmetryCase1 {
    pub a: f64,
    pub b: f64,
    antiderivative: RealFn,
}

impl fmt::Debug for SymmetryCase1 {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.debug_struct("SymmetryCase1").field("a", &self.a).field("b", &self.b).finish()
    }
}

impl SymmetryCase1 {
    pub fn new(a: f64, b: f64, antiderivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { a, b, antiderivative: Arc::new(antiderivative) }
    }

    /// Uses `F` built by quadrature from the base point 1.
    pub fn from_problem(p: &DriftProblem, a: f64, b: f64) -> Self {
        Self { a, b, antiderivative: p.antiderivative_by_quadrature() }
    }

    pub fn antiderivative(&self, x: f64) -> f64 {
        (self.antiderivative)(x)
    }

    /// Largest relative mismatch between a central difference of `F` and
    /// `f/x^γ` on `grid`.
    pub fn antiderivative_error(&self, p: &DriftProblem, grid: &[f64]) -> f64 {
        grid.iter()
            .map(|&x| {
                let h = 1e-5 * x;
                let fd = (self.antiderivative(x + h) - self.antiderivative(x - h)) / (2.0 * h);
                let exact = p.drift(x) / x.powf(p.gamma);
                (fd - exact).abs() / exact.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

/// The first-family symmetry `Ū_ε(x,t)` applied to a solution `u`.
pub fn case1_symmetry(p: &DriftProblem, s: &SymmetryCase1, u: &dyn Fn(f64, f64) -> f64, eps: f64, x: f64, t: f64) -> Result<f64> {
    let d = 1.0 + 4.0 * eps * t;
    if !(d > 0.0) {
        return Err(domain(format!("symmetry requires 1 + 4εt > 0, got {d}")));
    }
    if !(x > 0.0) || !(t >= 0.0) {
        return Err(domain(format!("symmetry requires x > 0, t >= 0; got ({x}, {t})")));
    }
    let g = p.gamma;
    let k = 2.0 - g;
    let xs = x / d.powf(2.0 / k);
    let log_prefactor = -(1.0 - g) / k * d.ln();
    let gauss = -4.0 * eps * (x.powf(k) + s.a * p.b * k * k * t * t) / (p.b * k * k * d);
    let drift = (s.antiderivative(xs) - s.antiderivative(x)) / (2.0 * p.b);
    Ok((log_prefactor + gauss + drift).exp() * u(xs, t / d))
}

/// `U_λ = Ū_ε` at `ε = b(2−γ)²λ/4`: the transform `∫e^{−λy^{2−γ}}u₀(y)p(t,x,y)dy`.
pub fn symmetry_transform(p: &DriftProblem, s: &SymmetryCase1, u0: &dyn Fn(f64) -> f64, lambda: f64, x: f64, t: f64) -> Result<f64> {
    let eps = 0.25 * p.b * (2.0 - p.gamma).powi(2) * lambda;
    case1_symmetry(p, s, &|y, _| u0(y), eps, x, t)
}

/// Residual `w_t − b x^γ w_xx − f w_x + g w` by central differences with
/// relative step `rel_h`.
pub fn cauchy_residual(p: &DriftProblem, w: &dyn Fn(f64, f64) -> Result<f64>, x: f64, t: f64, rel_h: f64) -> Result<f64> {
    let hx = rel_h * x.abs().max(1e-3);
    let ht = rel_h * t.abs().max(1e-3);
    let c = w(x, t)?;
    let wt = (w(x, t + ht)? - w(x, t - ht)?) / (2.0 * ht);
    let (wp, wm) = (w(x + hx, t)?, w(x - hx, t)?);
    let wx = (wp - wm) / (2.0 * hx);
    let wxx = (wp - 2.0 * c + wm) / (hx * hx);
    Ok(wt - p.b * x.powf(p.gamma) * wxx - p.drift(x) * wx + p.potential(x) * c)
}

/// Gauss–Hermite value of `∫e^{ay}N(x, g²t)(dy)` next to the closed form
/// `exp(a²g²t/2 + ax)`.
pub fn heat_mgf_check(g: f64, a: f64, x: f64, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) || !(g > 0.0) {
        return Err(domain(format!("heat_mgf_check requires g > 0, t > 0; got ({g}, {t})")));
    }
    let (nodes, weights) = gauss_hermite(64);
    let s = g * (2.0 * t).sqrt();
    let lhs = nodes.iter().zip(&weights).map(|(z, w)| w * (a * (x + s * z)).exp()).sum::<f64>() / PI.sqrt();
    Ok((lhs, (0.5 * a * a * g * g * t + a * x).exp()))
}

fn check_joint_args(x: f64, t: f64, eta: f64) -> Result<()> {
    if !(x > 0.0) || !(t > 0.0) || !(eta > 0.0) {
        return Err(domain(format!("joint law requires x > 0, T > 0, eta > 0; got ({x}, {t}, {eta})")));
    }
    Ok(())
}

fn ln_sinh(u: f64) -> f64 {
    u + (-(-2.0 * u).exp()).ln_1p() - LN_2
}

/// `ln` of the order-free kernel factor and the Bessel argument at `y`.
fn kernel_geometry(x: f64, t: f64, y: f64, eta: f64) -> (f64, f64) {
    let u = 0.5 * eta * t;
    let lsh = ln_sinh(u);
    let coth = 1.0 / u.tanh();
    let log_c = eta.ln() - lsh + 0.5 * (y / x).ln() + eta * (t + x - y - (x + y) * coth);
    let log_z = (2.0 * eta).ln() + 0.5 * (x * y).ln() - lsh;
    (log_c, log_z.exp())
}

/// Kernel `p(T,x,y;μ)` whose Laplace transform in `y` is
/// `E_x[exp(−λY_T − μ∫₀^T dt/Y_t)]`; at `μ = 0` it is the transition density
/// of `dY = (1 − ηY)dt + √Y dW`.
pub fn joint_kernel_mu(x: f64, t: f64, y: f64, mu: f64, eta: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(domain(format!("joint kernel requires mu >= 0, got {mu}")));
    }
    joint_kernel_log(x, t, y, mu, eta).map(f64::exp)
}

/// Log-kernel, analytically continued to `μ > −1/8`.
fn joint_kernel_log(x: f64, t: f64, y: f64, mu: f64, eta: f64) -> Result<f64> {
    check_joint_args(x, t, eta)?;
    if !(y > 0.0) {
        return Err(domain(format!("joint kernel requires y > 0, got {y}")));
    }
    if !(mu > -0.125) {
        return Err(domain(format!("joint kernel requires mu > -1/8, got {mu}")));
    }
    let nu = (1.0 + 8.0 * mu).sqrt();
    let (log_c, z) = kernel_geometry(x, t, y, eta);
    Ok(log_c + bessel_i_log(nu, z)?)
}

/// `E_x[exp(−λY_T − μ∫₀^T dt/Y_t)]` by quadrature of the kernel.
pub fn joint_laplace(x: f64, t: f64, lambda: f64, mu: f64, eta: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !(mu >= 0.0) {
        return Err(domain(format!("joint transform requires lambda, mu >= 0; got ({lambda}, {mu})")));
    }
    joint_laplace_continued(x, t, lambda, mu, eta)
}

fn joint_laplace_continued(x: f64, t: f64, lambda: f64, mu: f64, eta: f64) -> Result<f64> {
    check_joint_args(x, t, eta)?;
    let mut failure = None;
    let r = integrate_to_infinity(
        |y| {
            if y <= 0.0 {
                return 0.0;
            }
            match joint_kernel_log(x, t, y, mu, eta) {
                Ok(l) => (l - lambda * y).exp(),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        1e-15,
        1e-12,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

/// Closed form of the joint transform through the Whittaker function
/// `M_{−1, ν/2}`.
pub fn joint_laplace_closed_form(x: f64, t: f64, lambda: f64, mu: f64, eta: f64) -> Result<f64> {
    check_joint_args(x, t, eta)?;
    if !(lambda >= 0.0) || !(mu >= 0.0) {
        return Err(domain(format!("joint transform requires lambda, mu >= 0; got ({lambda}, {mu})")));
    }
    let nu = (1.0 + 8.0 * mu).sqrt();
    let u = 0.5 * eta * t;
    let coth = 1.0 / u.tanh();
    let alpha = eta * (1.0 + coth) + lambda;
    let log_beta = eta.ln() + 0.5 * x.ln() - ln_sinh(u);
    let z = (2.0 * log_beta - alpha.ln()).exp();
    // ln M_{−1,m}(z) = −z/2 + (m + 1/2) ln z + ln ₁F₁(m + 3/2; 1 + 2m; z), m = ν/2.
    let m = 0.5 * nu;
    let f = hyp1f1_scaled(m + 1.5, 1.0 + 2.0 * m, z, &EvalPolicy::default())?;
    let log_m = -0.5 * z + (m + 0.5) * z.ln() + f.mantissa.ln() + f.log_scale;
    let log_v = log_gamma_unchecked(1.5 + m) - log_gamma_unchecked(1.0 + nu) - x.ln()
        + eta * (t + x - x * coth)
        - alpha.ln()
        + 0.5 * z
        + log_m;
    Ok(log_v.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    Talbot,
    EulerAbateWhitt,
}

/// Numerical Laplace inversion settings.
///
/// Talbot uses `nodes` points on the contour `s(θ) = rθ(cot θ + i)` with
/// `r = scaling·nodes/t` (default scaling 0.4). Euler sums the Bromwich
/// trapezoid series on `Re s = A/(2t)` (`A = scaling`, default 18.4) for at
/// least `nodes` terms, extends it until terms fall below `rel_tol·1e-6` of
/// the largest (at most `64·nodes` terms), and then binomially averages the
/// last `min(11, nodes/2)` partial sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub method: InversionMethod,
    pub nodes: usize,
    #[serde(default)]
    pub scaling: Option<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    1e-8
}

/// The joint-law transform grows like `e^{π√(8|s|)/2}` along its branch cut
/// `s < −1/8`, so contours entering the left half-plane lose all precision
/// once `v` is small; the Bromwich-line method is the default.
impl Default for InversionConfig {
    fn default() -> Self {
        Self::euler()
    }
}

impl InversionConfig {
    pub fn talbot() -> Self {
        Self { method: InversionMethod::Talbot, nodes: 32, scaling: None, rel_tol: 1e-8 }
    }

    pub fn euler() -> Self {
        Self { method: InversionMethod::EulerAbateWhitt, nodes: 26, scaling: None, rel_tol: 1e-8 }
    }

    pub fn with_nodes(self, nodes: usize) -> Self {
        Self { nodes, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 8 {
            return Err(invalid(format!("inversion needs at least 8 nodes, got {}", self.nodes)));
        }
        if let Some(s) = self.scaling {
            if !(s > 0.0) {
                return Err(invalid(format!("inversion scaling must be > 0, got {s}")));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid("inversion rel_tol must be > 0"));
        }
        Ok(())
    }

    /// Second configuration for the internal consistency check: three
    /// quarters of the Talbot nodes, or the Euler series on a line shifted to
    /// `A + 4.6` (a hundredfold smaller aliasing error).
    pub fn consistency_variant(&self) -> Self {
        match self.method {
            InversionMethod::Talbot => Self { nodes: (self.nodes * 3 / 4).max(8), ..*self },
            InversionMethod::EulerAbateWhitt => Self { scaling: Some(self.scaling.unwrap_or(18.4) + 4.6), ..*self },
        }
    }
}

/// Inverts a Laplace transform given through its logarithm.
pub fn invert_laplace<F>(mut log_transform: F, t: f64, cfg: &InversionConfig) -> Result<f64>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    Ok(invert_many(t, cfg, 1, |s, _| log_transform(s))?[0])
}

/// Inverts `count` transforms at the same point `t`; `log_f(s, i)` is the
/// logarithm of transform `i` at `s`. Transforms are queried node by node,
/// so per-node work can be cached by the caller.
pub fn invert_many<F>(t: f64, cfg: &InversionConfig, count: usize, mut log_f: F) -> Result<Vec<f64>>
where
    F: FnMut(Complex64, usize) -> Result<Complex64>,
{
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(domain(format!("inversion point must be > 0, got {t}")));
    }
    match cfg.method {
        InversionMethod::Talbot => {
            let m = cfg.nodes as f64;
            let r = cfg.scaling.unwrap_or(0.4) * m / t;
            let mut out = vec![0.0; count];
            for k in 0..cfg.nodes {
                let (s, w) = if k == 0 {
                    (Complex64::new(r, 0.0), Complex64::new(0.5 * r / m, 0.0))
                } else {
                    let th = k as f64 * PI / m;
                    let cot = 1.0 / th.tan();
                    let sigma = th + (th * cot - 1.0) * cot;
                    (Complex64::new(r * th * cot, r * th), Complex64::new(r / m, r / m * sigma))
                };
                for (i, o) in out.iter_mut().enumerate() {
                    *o += (w * (t * s + log_f(s, i)?).exp()).re;
                }
            }
            Ok(out)
        }
        InversionMethod::EulerAbateWhitt => euler_many(t, cfg, count, log_f),
    }
}

#[derive(Clone, Default)]
struct EulerState {
    partial: f64,
    max_term: f64,
    quiet: usize,
    stop: Option<usize>,
    tail: Vec<f64>,
    value: Option<f64>,
}

fn euler_many<F>(t: f64, cfg: &InversionConfig, count: usize, mut log_f: F) -> Result<Vec<f64>>
where
    F: FnMut(Complex64, usize) -> Result<Complex64>,
{
    let a = cfg.scaling.unwrap_or(18.4);
    let m = (cfg.nodes / 2).min(11);
    let n_min = cfg.nodes - m;
    let cap = 64 * cfg.nodes;
    let tol = cfg.rel_tol * 1e-6;
    let mut binom = vec![1.0f64; m + 1];
    for j in 1..=m {
        binom[j] = binom[j - 1] * (m + 1 - j) as f64 / j as f64;
    }
    let norm = 2f64.powi(m as i32);
    let mut state = vec![EulerState::default(); count];
    let mut remaining = count;
    let mut k = 0usize;
    while remaining > 0 {
        let s = Complex64::new(a, 2.0 * PI * k as f64) / (2.0 * t);
        let half = if k == 0 { 0.5 } else { 1.0 };
        for (i, st) in state.iter_mut().enumerate() {
            if st.value.is_some() {
                continue;
            }
            // e^{ts} = e^{A/2}(−1)^k is real on these nodes.
            let term = half * (t * s + log_f(s, i)?).exp().re / t;
            st.partial += term;
            st.max_term = st.max_term.max(term.abs());
            match st.stop {
                Some(n) => {
                    st.tail.push(st.partial);
                    if k == n + m {
                        st.value = Some(st.tail.iter().zip(&binom).map(|(s, b)| s * b).sum::<f64>() / norm);
                        remaining -= 1;
                    }
                }
                None => {
                    st.quiet = if term.abs() <= tol * st.max_term { st.quiet + 1 } else { 0 };
                    if (k + 1 >= n_min && st.quiet >= 3) || k >= cap {
                        st.stop = Some(k);
                        st.tail.push(st.partial);
                        if m == 0 {
                            st.value = Some(st.partial);
                            remaining -= 1;
                        }
                    }
                }
            }
        }
        k += 1;
    }
    Ok(state.into_iter().map(|s| s.value.unwrap()).collect())
}

/// Joint density of `(Y_T, V_T = ∫₀^T dt/Y_t)` on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensityGrid {
    pub y_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    /// Row-major in `y`: `values[iy·nv + iv]`.
    pub values: Vec<f64>,
    pub y_weights: Vec<f64>,
    pub v_weights: Vec<f64>,
    pub horizon: f64,
    pub x: f64,
    pub eta: f64,
}

impl JointDensityGrid {
    pub fn value(&self, iy: usize, iv: usize) -> f64 {
        self.values[iy * self.v_grid.len() + iv]
    }

    pub fn total_mass(&self) -> f64 {
        self.y_marginal().iter().zip(&self.y_weights).map(|(m, w)| m * w).sum()
    }

    /// `∫ q(y, v) dv` at each grid level `y`.
    pub fn y_marginal(&self) -> Vec<f64> {
        let nv = self.v_grid.len();
        (0..self.y_grid.len())
            .map(|iy| self.values[iy * nv..(iy + 1) * nv].iter().zip(&self.v_weights).map(|(q, w)| q * w).sum())
            .collect()
    }

    pub fn v_marginal(&self) -> Vec<f64> {
        let nv = self.v_grid.len();
        (0..nv)
            .map(|iv| (0..self.y_grid.len()).map(|iy| self.values[iy * nv + iv] * self.y_weights[iy]).sum())
            .collect()
    }

    /// `Σ φ(y, v) q(y, v) w_y w_v` over the grid.
    pub fn expectation(&self, phi: impl Fn(f64, f64) -> f64) -> f64 {
        let nv = self.v_grid.len();
        let mut acc = 0.0;
        for (iy, &y) in self.y_grid.iter().enumerate() {
            let mut row = 0.0;
            for (iv, &v) in self.v_grid.iter().enumerate() {
                let q = self.values[iy * nv + iv];
                if q != 0.0 {
                    row += phi(y, v) * q * self.v_weights[iv];
                }
            }
            acc += row * self.y_weights[iy];
        }
        acc
    }

    /// Mass of the cell spanned by grid indices `[y0, y1] × [v0, v1]`,
    /// integrated by composite Simpson within the cell (trapezoid along an
    /// axis with an odd number of intervals).
    pub fn cell_mass(&self, y0: usize, y1: usize, v0: usize, v1: usize) -> f64 {
        let wy = simpson_weights(&self.y_grid[y0..=y1]);
        let wv = simpson_weights(&self.v_grid[v0..=v1]);
        let nv = self.v_grid.len();
        let mut acc = 0.0;
        for (a, iy) in (y0..=y1).enumerate() {
            let row: f64 = (v0..=v1).zip(&wv).map(|(iv, w)| self.values[iy * nv + iv] * w).sum();
            acc += row * wy[a];
        }
        acc
    }

    /// CSV with columns `y, v, density, weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "v", "density", "weight"]).map_err(csv_err)?;
        for (iy, y) in self.y_grid.iter().enumerate() {
            for (iv, v) in self.v_grid.iter().enumerate() {
                let rec = [y, v, &self.value(iy, iv), &(self.y_weights[iy] * self.v_weights[iv])].map(|x| format!("{x:e}"));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// JSON header plus a raw little-endian `f64` matrix file.
    pub fn write_binary(&self, header_path: &Path, data_path: &Path, provenance: serde_json::Value) -> Result<()> {
        let header = GridHeader {
            x: self.x,
            horizon: self.horizon,
            eta: self.eta,
            ny: self.y_grid.len(),
            nv: self.v_grid.len(),
            layout: "row-major y by v, little-endian f64".into(),
            data_file: data_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            y_grid: self.y_grid.clone(),
            v_grid: self.v_grid.clone(),
            total_mass: self.total_mass(),
            provenance,
        };
        std::fs::write(header_path, serde_json::to_string_pretty(&header)? + "\n")?;
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(data_path, bytes)?;
        Ok(())
    }

    pub fn read_binary(header_path: &Path) -> Result<Self> {
        let header: GridHeader = serde_json::from_str(&std::fs::read_to_string(header_path)?)?;
        let data_path = header_path.with_file_name(&header.data_file);
        let mut raw = Vec::new();
        std::fs::File::open(&data_path)?.read_to_end(&mut raw)?;
        if raw.len() != 8 * header.ny * header.nv || header.y_grid.len() != header.ny || header.v_grid.len() != header.nv {
            return Err(Error::Grid(format!("density file {} does not match its header", data_path.display())));
        }
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            y_weights: trapezoid_weights(&header.y_grid),
            v_weights: trapezoid_weights(&header.v_grid),
            y_grid: header.y_grid,
            v_grid: header.v_grid,
            values,
            horizon: header.horizon,
            x: header.x,
            eta: header.eta,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    x: f64,
    horizon: f64,
    eta: f64,
    ny: usize,
    nv: usize,
    layout: String,
    data_file: String,
    y_grid: Vec<f64>,
    v_grid: Vec<f64>,
    total_mass: f64,
    provenance: serde_json::Value,
}

fn check_grid(g: &[f64], name: &str) -> Result<()> {
    if g.len() < 2 || g[0] <= 0.0 || g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid(format!("{name} grid must be positive, strictly increasing and have >= 2 points")));
    }
    Ok(())
}

/// Evenly spaced grids covering the bulk of `(Y_T, V_T)`: `Y_T` from its
/// exact mean and variance, `V_T` from moments obtained by differentiating
/// the `λ = 0` transform in `μ`.
pub fn default_grids(x: f64, t: f64, eta: f64, ny: usize, nv: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_joint_args(x, t, eta)?;
    if ny < 2 || nv < 2 {
        return Err(Error::Grid("grids need at least 2 points".into()));
    }
    let e = (-eta * t).exp();
    let my = x * e + (1.0 - e) / eta;
    let sy = (x * (e - e * e) / eta + (1.0 - e).powi(2) / (2.0 * eta * eta)).sqrt();
    let y_lo = (my - 7.0 * sy).max(1e-3 * sy);
    let y_hi = my + 10.0 * sy;

    let v_guess = t / my;
    let h = (0.02 / v_guess).min(0.04);
    let lp = joint_laplace_continued(x, t, 0.0, h, eta)?;
    let lm = joint_laplace_continued(x, t, 0.0, -h, eta)?;
    let mv = (lm - lp) / (2.0 * h);
    let second = (lp - 2.0 + lm) / (h * h);
    let sv = (second - mv * mv).max(1e-6 * mv * mv).sqrt();
    let v_lo = (mv - 6.0 * sv).max(0.05 * mv);
    let v_hi = mv + 14.0 * sv;
    let lin = |a: f64, b: f64, n: usize| (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect::<Vec<_>>();
    Ok((lin(y_lo, y_hi, ny), lin(v_lo, v_hi, nv)))
}

/// Inverts `μ ↦ p(T,x,y;μ)` at every `v` of the grid.
///
/// Negative values below `1e-10·max(1, peak)` in magnitude are clipped to 0;
/// larger negatives, or a relative disagreement above `1e-4` between the
/// configured and the check node count on cells carrying at least `1e-6` of
/// the peak, raise [`Error::InversionDiagnostic`].
pub fn invert_joint_density(x: f64, t: f64, eta: f64, cfg: &InversionConfig, y_grid: &[f64], v_grid: &[f64]) -> Result<JointDensityGrid> {
    check_joint_args(x, t, eta)?;
    cfg.validate()?;
    check_grid(y_grid, "y")?;
    check_grid(v_grid, "v")?;
    let geometry: Vec<(f64, f64)> = y_grid.iter().map(|&y| kernel_geometry(x, t, y, eta)).collect();
    let variant = cfg.consistency_variant();
    let columns: Vec<(Vec<f64>, Vec<f64>)> = v_grid
        .par_iter()
        .map(|&v| Ok((density_column(&geometry, v, cfg)?, density_column(&geometry, v, &variant)?)))
        .collect::<Result<_>>()?;

    let (ny, nv) = (y_grid.len(), v_grid.len());
    let mut values = vec![0.0; ny * nv];
    let mut check = vec![0.0; ny * nv];
    for (iv, (col, chk)) in columns.iter().enumerate() {
        for iy in 0..ny {
            values[iy * nv + iv] = col[iy];
            check[iy * nv + iv] = chk[iy];
        }
    }
    let peak = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let clip = 1e-10 * peak.max(1.0);
    for (i, v) in values.iter_mut().enumerate() {
        let (y, vv) = (y_grid[i / nv], v_grid[i % nv]);
        if *v < 0.0 {
            if *v < -clip {
                return Err(Error::InversionDiagnostic { rel_diff: *v / peak, y, v: vv });
            }
            *v = 0.0;
        }
        if *v >= 1e-6 * peak {
            let rel = (*v - check[i]).abs() / *v;
            if rel > 1e-4 {
                return Err(Error::InversionDiagnostic { rel_diff: rel, y, v: vv });
            }
        }
    }
    Ok(JointDensityGrid {
        y_weights: trapezoid_weights(y_grid),
        v_weights: trapezoid_weights(v_grid),
        y_grid: y_grid.to_vec(),
        v_grid: v_grid.to_vec(),
        values,
        horizon: t,
        x,
        eta,
    })
}

fn density_column(geometry: &[(f64, f64)], v: f64, cfg: &InversionConfig) -> Result<Vec<f64>> {
    let policy = EvalPolicy::default();
    let mut cached: Option<(Complex64, Complex64, Complex64)> = None;
    invert_many(v, cfg, geometry.len(), |s, i| {
        let (nu, lg) = match cached {
            Some((cs, nu, lg)) if cs == s => (nu, lg),
            _ => {
                let nu = (1.0 + 8.0 * s).sqrt();
                let lg = log_gamma_complex(nu + 1.0);
                cached = Some((s, nu, lg));
                (nu, lg)
            }
        };
        let (log_c, z) = geometry[i];
        Ok(log_c - lg + nu * (0.5 * z).ln() + bessel_i_series_log(nu, z, &policy)?)
    })
}
