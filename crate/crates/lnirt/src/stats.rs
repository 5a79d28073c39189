//! Random-variate generators and matrix-statistics primitives.
//!
//! Everything here is deterministic given an [`Rng`]: the same
//! `(seed, stream_id)` pair reproduces the same variate sequence bit for
//! bit, and distinct stream ids give independent streams. Each sampler
//! documents the order in which it consumes variates so a stream can be
//! replayed against an independent implementation.

use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded, multi-stream random number generator.
///
/// Backed by ChaCha12. One `Rng` per chain / replication; instances are not
/// shared across threads.
#[derive(Debug, Clone)]
pub struct Rng {
    chacha: ChaCha12Rng,
    seed: u64,
    stream_id: u64,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut chacha = ChaCha12Rng::seed_from_u64(seed);
        chacha.set_stream(stream_id);
        Self {
            chacha,
            seed,
            stream_id,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.chacha.random::<f64>()
    }

    /// Standard normal draw.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.chacha)
    }
}

/// Symmetry tolerance (relative to the largest absolute entry).
const SYMMETRY_RTOL: f64 = 1e-12;

/// Validated symmetric positive-definite matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Checks squareness, symmetry (to `1e-12` relative tolerance), and that
    /// a Cholesky factorization succeeds (after at most one jitter retry).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_spd(&m, "matrix")?;
        Ok(Self(m))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

/// Validates the [`SpdMatrix`] invariant on a plain matrix.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {:?}, expected square",
            m.shape()
        )));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::Numerical(format!(
                    "{what} is not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    cholesky_with_jitter(m).map(|_| ())
}

/// Cholesky factorization with a single jitter retry.
///
/// On failure, adds `1e-8 x mean(diag)` to the diagonal and tries once more;
/// a second failure is a fatal numerical error.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, Dyn>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol);
    }
    let p = m.nrows();
    let jitter = 1e-8 * m.diagonal().sum() / p.max(1) as f64;
    let mut jittered = m.clone();
    for i in 0..p {
        jittered[(i, i)] += jitter;
    }
    jittered
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("Cholesky failed for {p}x{p} matrix even after jitter")))
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = cholesky_with_jitter(m)?.inverse();
    Ok(symmetrize(inv))
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `mean + L z` for a lower Cholesky factor `L` and standard normals `z`.
pub fn mvn_from_standard_normals(
    mean: &DVector<f64>,
    chol_l: &DMatrix<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    mean + chol_l * z
}

/// Multivariate normal draw.
///
/// Consumes exactly `p` standard normals `z_1..z_p` in component order and
/// returns `mean + L z`, `L` the lower Cholesky factor of `cov`.
pub fn mvn_sample(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
    let p = mean.len();
    if cov.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "mean has {p} entries but cov is {:?}",
            cov.shape()
        )));
    }
    let chol = cholesky_with_jitter(cov)?;
    let z = DVector::from_fn(p, |_, _| rng.standard_normal());
    Ok(mvn_from_standard_normals(mean, &chol.l(), &z))
}

/// Multivariate normal draw in precision form.
///
/// Samples `N(P^-1 rhs, P^-1)` by solving `L L' = P`, `mean = P^-1 rhs`, and
/// returning `mean + L^-T z` with `p` standard normals consumed in component
/// order. This is the natural form for conjugate Gibbs updates.
pub fn mvn_sample_precision(
    precision: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    let p = rhs.len();
    if precision.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {p} entries but precision is {:?}",
            precision.shape()
        )));
    }
    let chol = cholesky_with_jitter(precision)?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(p, |_, _| rng.standard_normal());
    let l = chol.l();
    let spread = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor in precision sampling".into()))?;
    Ok(mean + spread)
}

/// Log-density of `N(mean, cov)` at `x`.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let p = mean.len();
    if x.len() != p || cov.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, mean {p}, cov {:?}",
            x.len(),
            cov.shape()
        )));
    }
    let chol = cholesky_with_jitter(cov)?;
    let l = chol.l();
    let log_det = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
    let centered = x - mean;
    let y = l
        .solve_lower_triangular(&centered)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor in mvn density".into()))?;
    Ok(-0.5 * (p as f64 * crate::model::LN_2PI + log_det + y.norm_squared()))
}

/// Schur-complement pieces for conditioning a zero-indexed block.
///
/// Returns `(gain, cond_cov)` where, for a normal vector with covariance
/// `cov`, the distribution of the free block given `fixed` values `v` is
/// `N(mean_free + gain (v - mean_fixed), cond_cov)`. `fixed_idx` must be
/// strictly increasing and a nonempty proper subset of `0..p`.
pub fn schur_condition(
    cov: &DMatrix<f64>,
    fixed_idx: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = cov.nrows();
    if cov.ncols() != p {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    if fixed_idx.is_empty() || fixed_idx.len() >= p {
        return Err(Error::InvalidArgument(
            "fixed index set must be a nonempty proper subset".into(),
        ));
    }
    if fixed_idx.windows(2).any(|w| w[0] >= w[1]) || *fixed_idx.last().unwrap() >= p {
        return Err(Error::InvalidArgument(
            "fixed indices must be strictly increasing and in range".into(),
        ));
    }
    let free_idx: Vec<usize> = (0..p).filter(|j| !fixed_idx.contains(j)).collect();
    let nf = fixed_idx.len();
    let nr = free_idx.len();
    let sigma_ff = DMatrix::from_fn(nf, nf, |a, b| cov[(fixed_idx[a], fixed_idx[b])]);
    let sigma_rf = DMatrix::from_fn(nr, nf, |a, b| cov[(free_idx[a], fixed_idx[b])]);
    let sigma_rr = DMatrix::from_fn(nr, nr, |a, b| cov[(free_idx[a], free_idx[b])]);
    let chol_ff = cholesky_with_jitter(&sigma_ff)
        .map_err(|_| Error::Numerical("singular fixed-block covariance".into()))?;
    // gain = Sigma_rf Sigma_ff^-1, computed as (Sigma_ff^-1 Sigma_fr)'.
    let gain = chol_ff.solve(&sigma_rf.transpose()).transpose();
    let cond_cov = symmetrize(&sigma_rr - &gain * sigma_rf.transpose());
    Ok((gain, cond_cov))
}

/// Conditional mean and covariance of the free block of a multivariate
/// normal given fixed values for the indexed block.
pub fn mvn_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    fixed_idx: &[usize],
    fixed_vals: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if fixed_vals.len() != fixed_idx.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} fixed indices but {} fixed values",
            fixed_idx.len(),
            fixed_vals.len()
        )));
    }
    if mean.len() != cov.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mean has {} entries but cov is {:?}",
            mean.len(),
            cov.shape()
        )));
    }
    let (gain, cond_cov) = schur_condition(cov, fixed_idx)?;
    let p = mean.len();
    let free_idx: Vec<usize> = (0..p).filter(|j| !fixed_idx.contains(j)).collect();
    let deviation = DVector::from_fn(fixed_idx.len(), |a, _| fixed_vals[a] - mean[fixed_idx[a]]);
    let mean_free = DVector::from_fn(free_idx.len(), |a, _| mean[free_idx[a]]);
    Ok((mean_free + &gain * deviation, cond_cov))
}

/// Lower-triangular Bartlett factor for a Wishart draw.
///
/// Variate consumption per row `i = 0..p`: first one chi-square draw with
/// `df - i` degrees of freedom for the diagonal, then `i` standard normals
/// for the subdiagonal entries `j = 0..i` in column order.
fn bartlett_lower(p: usize, df: f64, rng: &mut Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).expect("validated df");
        a[(i, i)] = chi.sample(&mut rng.chacha).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    a
}

/// Assembles a Wishart draw from a scale Cholesky factor and a Bartlett
/// factor: `W = (L A)(L A)'`.
pub fn wishart_from_bartlett(scale_chol_l: &DMatrix<f64>, bartlett: &DMatrix<f64>) -> DMatrix<f64> {
    let m = scale_chol_l * bartlett;
    symmetrize(&m * m.transpose())
}

/// Wishart draw with the given scale matrix and degrees of freedom (`df >= p`),
/// by Bartlett decomposition. See [`wishart_from_bartlett`] and
/// `bartlett_lower` for the variate-consumption order.
pub fn wishart_sample(scale: &DMatrix<f64>, df: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df < p as f64 {
        return Err(Error::InvalidArgument(format!(
            "Wishart degrees of freedom {df} below dimension {p}"
        )));
    }
    let chol = cholesky_with_jitter(scale)?;
    let a = bartlett_lower(p, df, rng);
    Ok(wishart_from_bartlett(&chol.l(), &a))
}

/// Inverse-Wishart draw: the inverse of a Wishart draw whose scale is the
/// inverse of `scale`. Consumes the same variates as [`wishart_sample`].
pub fn invwishart_sample(scale: &DMatrix<f64>, df: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let inv_scale = spd_inverse(scale)?;
    let w = wishart_sample(&inv_scale, df, rng)?;
    spd_inverse(&w)
}

/// Gamma draw with the given shape and *rate* (mean `shape / rate`).
///
/// Implemented as a unit-rate draw divided by `rate`, so matched rng states
/// scale exactly across rates. Valid for any `shape > 0`.
pub fn gamma_sample(shape: f64, rate: f64, rng: &mut Rng) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma parameters must be positive, got shape={shape}, rate={rate}"
        )));
    }
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("gamma shape rejected: {e}")))?;
    Ok(g.sample(&mut rng.chacha) / rate)
}

/// Converts a covariance matrix to the correlation matrix
/// `corr_ij = cov_ij / sqrt(cov_ii cov_jj)` with an exactly unit diagonal.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    if cov.ncols() != p {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let mut sds = Vec::with_capacity(p);
    for i in 0..p {
        let v = cov[(i, i)];
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diagonal entry {i} is {v}; correlations need positive variances"
            )));
        }
        sds.push(v.sqrt());
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sds[i] * sds[j])
        }
    }))
}
