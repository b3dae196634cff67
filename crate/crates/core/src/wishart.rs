//! Matrix-valued processes: Wishart existence bounds, exact simulation for
//! integer degrees of freedom (squared matrix Brownian motion and sums of
//! Ornstein–Uhlenbeck outer products), noncentral Wishart draws, the
//! bivariate minimal market model and an Euler fallback.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::processes::{check_grid, phi_increment};
use crate::randkit::{check_symmetric, cholesky_lower, sample_matrix_normal, MatrixNormalParams, RngStream};

/// Eigenvalues above `-PSD_TOL·scale` are treated as roundoff and clipped.
const PSD_TOL: f64 = 1e-12;
const THETA_TOL: f64 = 1e-8;

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.amax().max(1.0)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigen-decomposition with eigenvalues sorted in descending
/// order, so downstream factors are deterministic.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Rebuilds `m` with eigenvalues below zero set to zero. `m` must be
/// symmetric.
pub fn clip_to_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    if values.iter().all(|&l| l >= 0.0) {
        return m.clone();
    }
    let lambda = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|l| l.max(0.0))));
    symmetrize(&(&vectors * lambda * vectors.transpose()))
}

/// Principal square root of a PSD matrix, negative roundoff eigenvalues
/// read as zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    let root = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|l| l.max(0.0).sqrt())));
    symmetrize(&(&vectors * root * vectors.transpose()))
}

#[inline]
fn debug_assert_psd(m: &DMatrix<f64>) {
    if cfg!(debug_assertions) {
        let s = scale_of(m);
        for i in 0..m.nrows() {
            for j in 0..i {
                debug_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-10 * s, "asymmetric output");
            }
        }
        let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
        debug_assert!(min >= -1e-10 * s, "output eigenvalue {min}");
    }
}

/// `n × p` matrix `C` with `CᵀC = S`. Row `k < rank` is `√λ_k v_kᵀ` for the
/// `k`-th largest eigenpair; remaining rows are zero.
pub fn psd_factor(s: &DMatrix<f64>, rows: usize) -> Result<DMatrix<f64>> {
    check_symmetric(s, "S")?;
    let p = s.nrows();
    let (values, vectors) = sorted_eigen(&symmetrize(s));
    let sc = scale_of(s);
    if let Some(&min) = values.last() {
        if min < -PSD_TOL * sc {
            return Err(Error::NotPositiveSemidefinite(format!("smallest eigenvalue {min:e}")));
        }
    }
    let rank = values.iter().filter(|&&l| l > PSD_TOL * sc * p as f64).count();
    if rows < rank {
        return Err(invalid(format!("{rows} rows cannot carry a rank-{rank} matrix")));
    }
    let mut c = DMatrix::zeros(rows, p);
    for k in 0..rank {
        let r = values[k].sqrt();
        for j in 0..p {
            c[(k, j)] = r * vectors[(j, k)];
        }
    }
    Ok(c)
}

/// `WIS_d(x0, α, b, a)`:
/// `dX = (αaᵀa + bX + Xbᵀ)dt + √X dW a + aᵀdWᵀ√X`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    pub alpha: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x0: DMatrix<f64>,
}

impl WishartParams {
    /// Symmetrizes `x0` and clips roundoff-negative eigenvalues to zero.
    pub fn new(alpha: f64, a: DMatrix<f64>, b: DMatrix<f64>, x0: DMatrix<f64>) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let d = x0.nrows();
        if d == 0 || a.shape() != (d, d) || b.shape() != (d, d) {
            return Err(invalid("a, b and x0 must be square of equal dimension".to_string()));
        }
        check_symmetric(&x0, "x0")?;
        let x0 = symmetrize(&x0);
        let min = SymmetricEigen::new(x0.clone()).eigenvalues.min();
        if min < -PSD_TOL * scale_of(&x0) {
            return Err(Error::NotPositiveSemidefinite(format!("x0 has eigenvalue {min:e}")));
        }
        let x0 = if min < 0.0 { clip_to_psd(&x0) } else { x0 };
        Ok(Self { alpha, a, b, x0 })
    }

    /// Squared matrix Brownian motion: `a = I`, `b = 0`.
    pub fn squared_brownian(alpha: f64, x0: DMatrix<f64>) -> Result<Self> {
        let d = x0.nrows();
        Self::new(alpha, DMatrix::identity(d, d), DMatrix::zeros(d, d), x0)
    }

    pub fn dim(&self) -> usize {
        self.x0.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExistenceClass {
    Strong,
    Weak,
    None,
}

/// Strong if `x0` is positive definite and `α ≥ d + 1`; weak if `x0` is
/// PSD and `α ≥ d − 1`; otherwise no guarantee.
pub fn existence_class(p: &WishartParams) -> ExistenceClass {
    let d = p.dim() as f64;
    let pd = SymmetricEigen::new(p.x0.clone()).eigenvalues.min() > 0.0;
    if pd && p.alpha >= d + 1.0 {
        ExistenceClass::Strong
    } else if p.alpha >= d - 1.0 {
        ExistenceClass::Weak
    } else {
        ExistenceClass::None
    }
}

/// [`existence_class`], failing with [`Error::Existence`] when neither bound
/// holds.
pub fn require_solution(p: &WishartParams) -> Result<ExistenceClass> {
    match existence_class(p) {
        ExistenceClass::None => {
            let d = p.dim();
            Err(Error::Existence(format!(
                "alpha = {} is below d - 1 = {}; a unique weak solution needs alpha >= d - 1 (strong: alpha >= d + 1 with x0 positive definite)",
                p.alpha,
                d as f64 - 1.0
            )))
        }
        c => Ok(c),
    }
}

/// Exact step of `X = BᵀB` with `B` an `n × d` Brownian motion started at
/// `C = psd_factor(x, n)`.
pub fn wishart_bm_transition(stream: &mut RngStream, x: &DMatrix<f64>, n: usize, dt: f64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("n must be at least 1".to_string()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let c = psd_factor(x, n)?;
    let sd = dt.sqrt();
    let g = DMatrix::from_fn(n, x.nrows(), |i, j| c[(i, j)] + sd * stream.normal());
    let out = symmetrize(&(g.transpose() * g));
    debug_assert_psd(&out);
    Ok(out)
}

/// `W_p(n, Σ, Θ)` for integer `n`, prepared for repeated draws.
#[derive(Debug, Clone)]
pub struct NoncentralWishartParams {
    n: usize,
    sigma: DMatrix<f64>,
    theta: DMatrix<f64>,
    normal: MatrixNormalParams,
}

impl NoncentralWishartParams {
    /// Recovers the `p × n` mean `M` with `MMᵀ = ΣΘ` after symmetrizing
    /// and clipping roundoff-negative eigenvalues.
    pub fn new(n: usize, sigma: DMatrix<f64>, theta: DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        if n == 0 {
            return Err(invalid("n must be at least 1".to_string()));
        }
        if theta.shape() != (p, p) {
            return Err(invalid("Theta must match Sigma".to_string()));
        }
        check_symmetric(&sigma, "Sigma")?;
        let st = &sigma * &theta;
        let sc = scale_of(&st);
        let asym = (&st - st.transpose()).amax();
        if asym > THETA_TOL * sc {
            return Err(Error::NotPositiveSemidefinite(format!("Sigma*Theta is asymmetric by {asym:e}")));
        }
        let st = symmetrize(&st);
        let (values, _) = sorted_eigen(&st);
        let min = values.last().copied().unwrap_or(0.0);
        if min < -THETA_TOL * sc {
            return Err(Error::NotPositiveSemidefinite(format!("Sigma*Theta has eigenvalue {min:e}")));
        }
        let mean = psd_factor(&clip_to_psd(&st), n)?.transpose();
        let normal = MatrixNormalParams::with_identity_columns(mean, sigma.clone())?;
        Ok(Self { n, sigma, theta, normal })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }
    /// The recovered `p × n` mean.
    pub fn mean_factor(&self) -> &DMatrix<f64> {
        self.normal.mean()
    }
}

/// `XXᵀ` with `X ~ N_{p,n}(M, Σ ⊗ I_n)`.
pub fn sample_noncentral_wishart(stream: &mut RngStream, p: &NoncentralWishartParams) -> DMatrix<f64> {
    let x = sample_matrix_normal(stream, &p.normal);
    let out = symmetrize(&(&x * x.transpose()));
    debug_assert_psd(&out);
    out
}

/// Exact transition of `dX = AX dt + Qᵀ dW` over a fixed `dt`.
#[derive(Debug, Clone)]
pub struct OuTransition {
    propagator: DMatrix<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl OuTransition {
    /// Van Loan: `exp([[−A, QᵀQ], [0, Aᵀ]]·dt) = [[·, F₁₂], [0, F₂₂]]` gives
    /// `e^{A dt} = F₂₂ᵀ` and covariance `F₂₂ᵀF₁₂`.
    pub fn new(a: &DMatrix<f64>, q: &DMatrix<f64>, dt: f64) -> Result<Self> {
        let d = a.nrows();
        if a.shape() != (d, d) || q.shape() != (d, d) {
            return Err(invalid("A and Q must be square of equal dimension".to_string()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        let mut block = DMatrix::zeros(2 * d, 2 * d);
        block.view_mut((0, 0), (d, d)).copy_from(&(-a * dt));
        block.view_mut((0, d), (d, d)).copy_from(&(q.transpose() * q * dt));
        block.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * dt));
        let e = block.exp();
        let propagator = e.view((d, d), (d, d)).transpose();
        let covariance = symmetrize(&(&propagator * e.view((0, d), (d, d))));
        let factor = match cholesky_lower(&covariance, "OU covariance") {
            Ok(l) => l,
            Err(_) => {
                let (values, _) = sorted_eigen(&covariance);
                let min = values.last().copied().unwrap_or(0.0);
                if min < -PSD_TOL * scale_of(&covariance) {
                    return Err(Error::NotPositiveSemidefinite(format!("OU covariance eigenvalue {min:e}")));
                }
                psd_factor(&clip_to_psd(&covariance), d)?.transpose()
            }
        };
        Ok(Self { propagator, covariance, factor })
    }

    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.propagator
    }
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn step(&self, stream: &mut RngStream, x: &DVector<f64>) -> DVector<f64> {
        let z = DVector::from_fn(x.len(), |_, _| stream.normal());
        &self.propagator * x + &self.factor * z
    }
}

pub fn ou_exact_step(stream: &mut RngStream, a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    Ok(OuTransition::new(a, q, dt)?.step(stream, x))
}

/// `V_t = Σ_{k=1}^{β} X_k X_kᵀ` on `times` (from `t = 0`), each `X_k` an
/// exact OU path started at row `k` of `psd_factor(x0, β)`.
pub fn wishart_ou_path(
    stream: &mut RngStream,
    beta: usize,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    times: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    check_grid(times)?;
    if beta == 0 {
        return Err(invalid("beta must be at least 1".to_string()));
    }
    let d = x0.nrows();
    let c = psd_factor(x0, beta)?;
    let mut xs: Vec<DVector<f64>> = (0..beta).map(|k| c.row(k).transpose()).collect();
    let mut out = Vec::with_capacity(times.len());
    let mut t_prev = 0.0;
    for &t in times {
        let dt = t - t_prev;
        if dt > 0.0 {
            let tr = OuTransition::new(a, q, dt)?;
            for x in xs.iter_mut() {
                *x = tr.step(stream, x);
            }
        }
        let mut v = DMatrix::zeros(d, d);
        for x in &xs {
            v += x * x.transpose();
        }
        debug_assert_psd(&v);
        out.push(v);
        t_prev = t;
    }
    Ok(out)
}

/// Euler–Maruyama step with `√X` from the eigen-decomposition; the result is
/// symmetrized and projected onto the PSD cone by eigenvalue clipping.
pub fn wishart_euler_step(stream: &mut RngStream, p: &WishartParams, x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let d = p.dim();
    let sd = dt.sqrt();
    let dw = DMatrix::from_fn(d, d, |_, _| sd * stream.normal());
    let root = psd_sqrt(x);
    let drift = p.a.transpose() * &p.a * p.alpha + &p.b * x + x * p.b.transpose();
    let noise = &root * &dw * &p.a;
    let next = x + drift * dt + &noise + noise.transpose();
    let out = clip_to_psd(&symmetrize(&next));
    debug_assert_psd(&out);
    out
}

/// One currency leg of the bivariate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrencyLeg {
    pub r: f64,
    pub alpha0: f64,
    pub eta: f64,
    /// Initial discounted GOP `s̄₀`.
    pub s0: f64,
}

impl CurrencyLeg {
    fn validate(&self, name: &str) -> Result<()> {
        for (v, what) in [(self.alpha0, "alpha0"), (self.eta, "eta"), (self.s0, "s0")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name}.{what} must be positive, got {v}")));
            }
        }
        if !self.r.is_finite() {
            return Err(invalid(format!("{name}.r must be finite")));
        }
        Ok(())
    }

    pub fn phi(&self, t: f64) -> f64 {
        phi_increment(self.alpha0, self.eta, t)
    }
}

/// Two discounted GOPs as the diagonal of `XXᵀ` for a `2 × 4` matrix of
/// time-changed Brownian motions with offsets `w` and row correlation `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateMmmParams {
    pub a: CurrencyLeg,
    pub b: CurrencyLeg,
    pub rho: f64,
    /// `w[i][k]`, `i` the Brownian index and `k` the currency. Defaults to
    /// `w[0][k] = √s̄₀ᵏ` and zeros elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<[[f64; 2]; 4]>,
}

impl BivariateMmmParams {
    pub fn stylized() -> Self {
        Self {
            a: CurrencyLeg { r: 0.02, alpha0: 0.05, eta: 0.04, s0: 1.0 },
            b: CurrencyLeg { r: 0.04, alpha0: 0.05, eta: 0.06, s0: 1.0 },
            rho: 0.3,
            w: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.a.validate("a")?;
        self.b.validate("b")?;
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if let Some(w) = self.w {
            for (k, leg) in [self.a, self.b].iter().enumerate() {
                let ss: f64 = w.iter().map(|row| row[k] * row[k]).sum();
                if (ss - leg.s0).abs() > 1e-12 * leg.s0.max(1.0) {
                    return Err(invalid(format!("column {k} of w has squared norm {ss}, expected {}", leg.s0)));
                }
            }
        }
        Ok(())
    }

    pub fn offsets(&self) -> [[f64; 2]; 4] {
        self.w.unwrap_or([[self.a.s0.sqrt(), self.b.s0.sqrt()], [0.0; 2], [0.0; 2], [0.0; 2]])
    }

    /// Row covariance of `X_T`: `φᵏ(T)` on the diagonal and
    /// `(ρ/4)∫₀ᵀ√(α¹_s α²_s)ds` off it.
    pub fn sigma(&self, t: f64) -> Matrix2<f64> {
        let kappa = 0.5 * (self.a.eta + self.b.eta);
        let off = 0.25 * self.rho * (self.a.alpha0 * self.b.alpha0).sqrt() * (kappa * t).exp_m1() / kappa;
        Matrix2::new(self.a.phi(t), off, off, self.b.phi(t))
    }
}

/// Prepared terminal law of the bivariate model at a fixed horizon.
#[derive(Debug, Clone)]
pub struct BivariateSampler {
    normal: MatrixNormalParams,
    horizon: f64,
}

impl BivariateSampler {
    pub fn new(p: &BivariateMmmParams, t: f64) -> Result<Self> {
        p.validate()?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("T must be positive, got {t}")));
        }
        let w = p.offsets();
        let mean = DMatrix::from_fn(2, 4, |k, i| w[i][k]);
        let s = p.sigma(t);
        let sigma = DMatrix::from_fn(2, 2, |i, j| s[(i, j)]);
        Ok(Self { normal: MatrixNormalParams::with_identity_columns(mean, sigma)?, horizon: t })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Diagonal of `XXᵀ`: the discounted GOPs `(s̄ᵃ_T, s̄ᵇ_T)`.
    pub fn sample(&self, stream: &mut RngStream) -> (f64, f64) {
        let x = sample_matrix_normal(stream, &self.normal);
        let sa = x.row(0).norm_squared();
        let sb = x.row(1).norm_squared();
        (sa, sb)
    }
}

pub fn bivariate_terminal_sample(stream: &mut RngStream, p: &BivariateMmmParams, t: f64) -> Result<(f64, f64)> {
    Ok(BivariateSampler::new(p, t)?.sample(stream))
}

/// Long-format CSV `path_id,time,i,j,value` for matrix paths.
pub fn write_matrix_paths_csv<W: Write>(out: W, times: &[f64], paths: &[Vec<DMatrix<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "time", "i", "j", "value"]).map_err(csv_err)?;
    for (pid, path) in paths.iter().enumerate() {
        for (t, m) in times.iter().zip(path) {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_record([pid.to_string(), format!("{t:e}"), i.to_string(), j.to_string(), format!("{:e}", m[(i, j)])])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
