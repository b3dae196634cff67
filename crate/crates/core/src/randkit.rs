//! Reproducible random streams and exact samplers.
//!
//! Every Monte Carlo path draws from its own [`RngStream`], identified by a
//! `(seed, stream_id)` pair. The generator is ChaCha8 with its native 64-bit
//! stream selector, so a path's numbers depend only on its identity and not
//! on how paths are spread across worker threads.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{domain, invalid, Error, Result};

/// Upper byte of a stream id names the consumer, the low 56 bits index
/// paths (or samples) within it.
pub fn stream_id(domain: u8, index: u64) -> u64 {
    debug_assert!(index < (1 << 56));
    ((domain as u64) << 56) | index
}

/// Consumer tags for [`stream_id`].
pub mod domains {
    pub const GOP_PATH: u8 = 1;
    pub const CIR_PATH: u8 = 2;
    pub const BIVARIATE: u8 = 3;
    pub const WISHART: u8 = 4;
    pub const MLMC: u8 = 5;
    pub const VALIDATION: u8 = 6;
    pub const VOL_PATH: u8 = 7;
}

/// Draws `n` values in parallel, value `i` from its own stream
/// `stream_id(domain, i)`. The output is in index order for any thread count.
pub fn par_sample<T, F>(seed: u64, domain: u8, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut RngStream, usize) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut RngStream::new(seed, stream_id(domain, i as u64)), i))
        .collect()
}

/// Stream for path `i`. With `antithetic`, paths `2k` and `2k + 1` share
/// substream `k` and the odd member negates every normal.
pub fn path_stream(seed: u64, domain: u8, i: usize, antithetic: bool) -> RngStream {
    if antithetic {
        let id = stream_id(domain, (i / 2) as u64);
        if i % 2 == 1 {
            RngStream::antithetic(seed, id)
        } else {
            RngStream::new(seed, id)
        }
    } else {
        RngStream::new(seed, stream_id(domain, i as u64))
    }
}

/// [`par_sample`] with optional antithetic pairing via [`path_stream`].
pub fn par_sample_paths<T, F>(seed: u64, domain: u8, n: usize, antithetic: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut RngStream, usize) -> Result<T> + Sync,
{
    (0..n).into_par_iter().map(|i| f(&mut path_stream(seed, domain, i, antithetic), i)).collect()
}

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    antithetic: bool,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, antithetic: false, rng }
    }

    /// Same underlying sequence, but every standard normal is negated.
    pub fn antithetic(seed: u64, stream_id: u64) -> Self {
        Self { antithetic: true, ..Self::new(seed, stream_id) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1).
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        if self.antithetic {
            -z
        } else {
            z
        }
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn sample_normal(stream: &mut RngStream) -> f64 {
    stream.normal()
}

/// Gamma draw (Marsaglia–Tsang squeeze, boosted for shape < 1).
pub fn sample_gamma(stream: &mut RngStream, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(domain(format!("gamma requires shape > 0 and scale > 0, got ({shape}, {scale})")));
    }
    let g = Gamma::new(shape, scale).map_err(|e| invalid(e.to_string()))?;
    Ok(g.sample(stream.inner()))
}

pub fn sample_poisson(stream: &mut RngStream, mean: f64) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(domain(format!("poisson requires mean >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|e| invalid(e.to_string()))?;
    let k: f64 = p.sample(stream.inner());
    Ok(k as u64)
}

/// Which exact construction [`sample_ncx2`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ncx2Branch {
    /// `χ²_{df−1} + (Z + √λ)²`, valid for `df > 1`.
    ShiftedNormal,
    /// `χ²_{df+2J}` with `J ~ Poisson(λ/2)`, valid for every `df > 0`.
    PoissonMixture,
}

/// Exact noncentral chi-squared draw.
pub fn sample_ncx2(stream: &mut RngStream, df: f64, lambda: f64) -> Result<f64> {
    let branch = if df > 1.0 { Ncx2Branch::ShiftedNormal } else { Ncx2Branch::PoissonMixture };
    sample_ncx2_with(stream, df, lambda, branch)
}

pub fn sample_ncx2_with(stream: &mut RngStream, df: f64, lambda: f64, branch: Ncx2Branch) -> Result<f64> {
    if !(df > 0.0) || !(lambda >= 0.0) || !df.is_finite() || !lambda.is_finite() {
        return Err(domain(format!("ncx2 requires df > 0 and lambda >= 0, got ({df}, {lambda})")));
    }
    match branch {
        Ncx2Branch::ShiftedNormal => {
            if df <= 1.0 {
                return Err(invalid("shifted-normal ncx2 branch needs df > 1"));
            }
            let z = stream.normal() + lambda.sqrt();
            let rest = sample_gamma(stream, 0.5 * (df - 1.0), 2.0)?;
            Ok(rest + z * z)
        }
        Ncx2Branch::PoissonMixture => {
            let j = sample_poisson(stream, 0.5 * lambda)?;
            sample_gamma(stream, 0.5 * df + j as f64, 2.0)
        }
    }
}

/// Matrix-variate normal `N_{p,n}(M, Σ ⊗ Ψ)` with precomputed Cholesky
/// factors of the row and column covariances.
#[derive(Debug, Clone)]
pub struct MatrixNormalParams {
    mean: DMatrix<f64>,
    sigma: DMatrix<f64>,
    psi: DMatrix<f64>,
    l_sigma: DMatrix<f64>,
    l_psi: DMatrix<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

pub(crate) fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(invalid(format!("{name} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(invalid(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

pub(crate) fn cholesky_lower(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

impl MatrixNormalParams {
    pub fn new(mean: DMatrix<f64>, sigma: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&sigma, "Sigma")?;
        check_symmetric(&psi, "Psi")?;
        if sigma.nrows() != mean.nrows() || psi.nrows() != mean.ncols() {
            return Err(invalid(format!(
                "dimension mismatch: M is {}x{}, Sigma is {}x{}, Psi is {}x{}",
                mean.nrows(),
                mean.ncols(),
                sigma.nrows(),
                sigma.ncols(),
                psi.nrows(),
                psi.ncols()
            )));
        }
        let l_sigma = cholesky_lower(&sigma, "Sigma")?;
        let l_psi = cholesky_lower(&psi, "Psi")?;
        Ok(Self { mean, sigma, psi, l_sigma, l_psi })
    }

    /// Column covariance defaults to the identity.
    pub fn with_identity_columns(mean: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mean.ncols();
        Self::new(mean, sigma, DMatrix::identity(n, n))
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }
    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }
    pub fn cols(&self) -> usize {
        self.mean.ncols()
    }
}

/// `X = M + L_Σ G L_Ψᵀ` with `G` a matrix of independent standard normals.
pub fn sample_matrix_normal(stream: &mut RngStream, params: &MatrixNormalParams) -> DMatrix<f64> {
    let (p, n) = (params.rows(), params.cols());
    let g = DMatrix::from_fn(p, n, |_, _| stream.normal());
    &params.mean + &params.l_sigma * g * params.l_psi.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, mean_and_se};

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<f64> = (0..16).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.normal()).collect();
        let xc: Vec<f64> = (0..16).map(|_| c.normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let mut d = RngStream::antithetic(7, 3);
        let xd: Vec<f64> = (0..16).map(|_| d.normal()).collect();
        assert!(xa.iter().zip(&xd).all(|(a, d)| *a == -*d));
    }

    #[test]
    fn degenerate_and_invalid_parameters() {
        let mut s = RngStream::new(1, 0);
        assert_eq!(sample_poisson(&mut s, 0.0).unwrap(), 0);
        assert!(sample_poisson(&mut s, -1.0).is_err());
        assert!(sample_gamma(&mut s, 0.0, 1.0).is_err());
        assert!(sample_gamma(&mut s, 1.0, -1.0).is_err());
        assert!(sample_ncx2(&mut s, 0.0, 1.0).is_err());
        assert!(sample_ncx2(&mut s, 2.0, -0.1).is_err());
        assert!(sample_ncx2_with(&mut s, 0.5, 1.0, Ncx2Branch::ShiftedNormal).is_err());
    }

    #[test]
    fn gamma_moments() {
        let mut s = RngStream::new(11, 0);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| sample_gamma(&mut s, 1.0, 0.7).unwrap()).collect();
        let (m, se) = mean_and_se(&x);
        assert!((m - 0.7).abs() < 3.0 * se);

        let x: Vec<f64> = (0..n).map(|_| sample_gamma(&mut s, 2.6, 0.8).unwrap()).collect();
        let (m, se) = mean_and_se(&x);
        assert!((m - 2.08).abs() < 3.0 * se, "{m}");
        let sq: Vec<f64> = x.iter().map(|v| (v - 2.08).powi(2)).collect();
        let (v, vse) = mean_and_se(&sq);
        assert!((v - 1.664).abs() < 3.0 * vse, "{v}");
    }

    #[test]
    fn ncx2_branches_agree() {
        let mut a = RngStream::new(5, 1);
        let mut b = RngStream::new(5, 2);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| sample_ncx2_with(&mut a, 1.5, 2.0, Ncx2Branch::ShiftedNormal).unwrap()).collect();
        let y: Vec<f64> = (0..n).map(|_| sample_ncx2_with(&mut b, 1.5, 2.0, Ncx2Branch::PoissonMixture).unwrap()).collect();
        let (_, p) = ks_two_sample(&x, &y);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ncx2_matches_sum_of_shifted_squares() {
        let shifts = [0.4, -1.1, 0.9];
        let lambda: f64 = shifts.iter().map(|w| w * w).sum();
        let mut a = RngStream::new(9, 1);
        let mut b = RngStream::new(9, 2);
        let n = 10_000;
        let x: Vec<f64> = (0..n)
            .map(|_| shifts.iter().map(|w| (a.normal() + w).powi(2)).sum())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| sample_ncx2(&mut b, 3.0, lambda).unwrap()).collect();
        let (_, p) = ks_two_sample(&x, &y);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn matrix_normal_rejects_bad_covariance() {
        let m = DMatrix::zeros(2, 3);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            MatrixNormalParams::with_identity_columns(m.clone(), not_pd),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(MatrixNormalParams::with_identity_columns(m, asym).is_err());
    }

    #[test]
    fn matrix_normal_identity_case() {
        let params = MatrixNormalParams::with_identity_columns(DMatrix::zeros(2, 3), DMatrix::identity(2, 2)).unwrap();
        let mut s = RngStream::new(3, 0);
        let n = 20_000;
        let mut sq = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sample_matrix_normal(&mut s, &params);
            sq.push(x[(1, 2)] * x[(1, 2)]);
        }
        let (v, se) = mean_and_se(&sq);
        assert!((v - 1.0).abs() < 3.0 * se);
    }
}
