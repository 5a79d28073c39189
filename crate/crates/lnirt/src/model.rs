//! Measurement models and the joint likelihood.
//!
//! Conventions used throughout the crate:
//!
//! - `n` indexes persons (`0..N`), `i` indexes items (`0..I`), `k` indexes
//!   latent dimensions.
//! - Correctness: `logit P(Y_ni = 1) = q_i' theta_n + d_i`, the compensatory
//!   multidimensional Rasch model; with a single all-ones loading column it
//!   reduces to the unidimensional Rasch model.
//! - Response times: `log T_ni ~ Normal(xi_i - q_i' tau_n, omega_i^-2)`, the
//!   (multidimensional) log-normal RT model. `omega_i` is the reciprocal of
//!   the residual standard deviation of `log T`.
//! - Person latents have mean zero by construction (identification); their
//!   joint covariance is `sigma_person` over the stacked vector
//!   `(theta_n, tau_n)`.
//! - Missing cells contribute nothing to the likelihood.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without intermediate underflow.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Bernoulli log-mass of `y` under logit `z`.
#[inline]
pub(crate) fn bernoulli_log_mass(y: bool, z: f64) -> f64 {
    if y {
        log_sigmoid(z)
    } else {
        log_sigmoid(-z)
    }
}

/// Log-density of `Normal(mean, 1/omega^2)` at `x`, parameterized by the
/// reciprocal standard deviation `omega`.
#[inline]
pub(crate) fn normal_log_density_recip_sd(x: f64, mean: f64, omega: f64) -> f64 {
    let r = omega * (x - mean);
    omega.ln() - 0.5 * LN_2PI - 0.5 * r * r
}

/// Binary item-by-dimension loading structure.
///
/// Row `i` records which latent dimensions item `i` engages; every item must
/// load on at least one dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QMatrix {
    entries: DMatrix<f64>,
    item_ids: Vec<String>,
    dim_labels: Vec<String>,
}

impl QMatrix {
    /// Validates and wraps a loading matrix. Entries must be exactly 0 or 1,
    /// every row needs at least one 1, and both dimensions must be nonempty.
    pub fn new(
        entries: DMatrix<f64>,
        item_ids: Vec<String>,
        dim_labels: Vec<String>,
    ) -> Result<Self> {
        let (n_items, n_dims) = entries.shape();
        if n_items == 0 || n_dims == 0 {
            return Err(Error::InvalidData(
                "Q-matrix must have at least one item and one dimension".into(),
            ));
        }
        if item_ids.len() != n_items {
            return Err(Error::DimensionMismatch(format!(
                "Q-matrix has {n_items} rows but {} item ids",
                item_ids.len()
            )));
        }
        if dim_labels.len() != n_dims {
            return Err(Error::DimensionMismatch(format!(
                "Q-matrix has {n_dims} columns but {} dimension labels",
                dim_labels.len()
            )));
        }
        for i in 0..n_items {
            let mut any = false;
            for k in 0..n_dims {
                let v = entries[(i, k)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidData(format!(
                        "Q-matrix entry for item '{}', dimension '{}' is {v}; entries must be 0 or 1",
                        item_ids[i], dim_labels[k]
                    )));
                }
                any |= v == 1.0;
            }
            if !any {
                return Err(Error::InvalidData(format!(
                    "Q-matrix row for item '{}' is all zero; every item must load on a dimension",
                    item_ids[i]
                )));
            }
        }
        Ok(Self {
            entries,
            item_ids,
            dim_labels,
        })
    }

    /// A between-item design assigning item `i` to dimension `i mod n_dims`.
    pub fn balanced(n_items: usize, n_dims: usize) -> Result<Self> {
        if n_items == 0 || n_dims == 0 {
            return Err(Error::InvalidArgument(
                "balanced Q-matrix needs n_items >= 1 and n_dims >= 1".into(),
            ));
        }
        let entries = DMatrix::from_fn(n_items, n_dims, |i, k| if i % n_dims == k { 1.0 } else { 0.0 });
        let item_ids = (1..=n_items).map(|i| format!("item{i:02}")).collect();
        let dim_labels = (1..=n_dims).map(|k| format!("dim{k}")).collect();
        Self::new(entries, item_ids, dim_labels)
    }

    pub fn n_items(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn dim_labels(&self) -> &[String] {
        &self.dim_labels
    }

    /// Loading row of one item as a contiguous vector.
    pub fn row(&self, item: usize) -> Vec<f64> {
        (0..self.n_dims()).map(|k| self.entries[(item, k)]).collect()
    }
}

/// The three ability/speed structures.
///
/// - `UaUs`: unidimensional ability, unidimensional speed; both loading
///   matrices collapse to a single all-ones column.
/// - `MaUs`: multidimensional ability (Q-matrix), unidimensional speed.
/// - `MaMs`: both ability and speed follow the Q-matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelStructure {
    UaUs,
    MaUs,
    MaMs,
}

impl ModelStructure {
    pub fn label(&self) -> &'static str {
        match self {
            ModelStructure::UaUs => "UA_US",
            ModelStructure::MaUs => "MA_US",
            ModelStructure::MaMs => "MA_MS",
        }
    }
}

impl std::fmt::Display for ModelStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModelStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "UA_US" | "ua_us" | "ua-us" => Ok(ModelStructure::UaUs),
            "MA_US" | "ma_us" | "ma-us" => Ok(ModelStructure::MaUs),
            "MA_MS" | "ma_ms" | "ma-ms" => Ok(ModelStructure::MaMs),
            other => Err(Error::InvalidArgument(format!(
                "unknown structure '{other}' (expected UA_US, MA_US, or MA_MS)"
            ))),
        }
    }
}

/// Effective loading matrices `(q_ability, q_speed)` for a structure.
///
/// `MaMs` uses the Q-matrix on both sides, `MaUs` keeps it only for ability,
/// and `UaUs` collapses both sides to a single all-ones column.
pub fn effective_q(structure: ModelStructure, q: &QMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let ones = DMatrix::from_element(q.n_items(), 1, 1.0);
    match structure {
        ModelStructure::MaMs => (q.entries().clone(), q.entries().clone()),
        ModelStructure::MaUs => (q.entries().clone(), ones),
        ModelStructure::UaUs => (ones.clone(), ones),
    }
}

/// Observed responses and response times, with independent per-cell
/// missingness. Response times are stored in seconds and must be strictly
/// positive where present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedData {
    n_persons: usize,
    n_items: usize,
    responses: Vec<Option<bool>>,
    rts: Vec<Option<f64>>,
}

impl ObservedData {
    pub fn new(
        n_persons: usize,
        n_items: usize,
        responses: Vec<Option<bool>>,
        rts: Vec<Option<f64>>,
    ) -> Result<Self> {
        let cells = n_persons * n_items;
        if responses.len() != cells || rts.len() != cells {
            return Err(Error::DimensionMismatch(format!(
                "expected {cells} cells ({n_persons} persons x {n_items} items), got {} responses and {} RTs",
                responses.len(),
                rts.len()
            )));
        }
        for (idx, rt) in rts.iter().enumerate() {
            if let Some(t) = rt {
                if !t.is_finite() || *t <= 0.0 {
                    return Err(Error::InvalidData(format!(
                        "RT at person {}, item {} is {t}; observed RTs must be strictly positive",
                        idx / n_items + 1,
                        idx % n_items + 1
                    )));
                }
            }
        }
        Ok(Self {
            n_persons,
            n_items,
            responses,
            rts,
        })
    }

    /// Builds fully observed data from dense matrices. Response entries must
    /// be exactly 0 or 1; RT entries must be strictly positive.
    pub fn from_complete(responses: &DMatrix<f64>, rts: &DMatrix<f64>) -> Result<Self> {
        if responses.shape() != rts.shape() {
            return Err(Error::DimensionMismatch(format!(
                "response matrix is {:?} but RT matrix is {:?}",
                responses.shape(),
                rts.shape()
            )));
        }
        let (n, i) = responses.shape();
        let mut resp = Vec::with_capacity(n * i);
        let mut times = Vec::with_capacity(n * i);
        for r in 0..n {
            for c in 0..i {
                let y = responses[(r, c)];
                if y != 0.0 && y != 1.0 {
                    return Err(Error::InvalidData(format!(
                        "response at person {}, item {} is {y}; must be 0 or 1",
                        r + 1,
                        c + 1
                    )));
                }
                resp.push(Some(y == 1.0));
                times.push(Some(rts[(r, c)]));
            }
        }
        Self::new(n, i, resp, times)
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn response(&self, person: usize, item: usize) -> Option<bool> {
        self.responses[person * self.n_items + item]
    }

    #[inline]
    pub fn rt(&self, person: usize, item: usize) -> Option<f64> {
        self.rts[person * self.n_items + item]
    }

    pub fn responses(&self) -> &[Option<bool>] {
        &self.responses
    }

    pub fn rts(&self) -> &[Option<f64>] {
        &self.rts
    }

    pub fn n_observed_responses(&self) -> usize {
        self.responses.iter().filter(|r| r.is_some()).count()
    }

    pub fn n_observed_rts(&self) -> usize {
        self.rts.iter().filter(|r| r.is_some()).count()
    }

    pub(crate) fn with_rts(&self, rts: Vec<Option<f64>>) -> Result<Self> {
        Self::new(self.n_persons, self.n_items, self.responses.clone(), rts)
    }
}

/// Person-level latent variables and their covariance.
///
/// `theta` is N x K_theta (logit-scale ability), `tau` is N x K_tau
/// (log-seconds-scale speed). Means are identically zero by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonParams {
    pub theta: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    /// Covariance of the stacked `(theta_n, tau_n)` vector; `K* x K*` with
    /// `K* = K_theta + K_tau`.
    pub sigma_person: DMatrix<f64>,
}

impl PersonParams {
    pub fn n_persons(&self) -> usize {
        self.theta.nrows()
    }

    pub fn k_theta(&self) -> usize {
        self.theta.ncols()
    }

    pub fn k_tau(&self) -> usize {
        self.tau.ncols()
    }

    pub fn k_star(&self) -> usize {
        self.k_theta() + self.k_tau()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.nrows() != self.theta.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} rows but tau has {}",
                self.theta.nrows(),
                self.tau.nrows()
            )));
        }
        let k = self.k_star();
        if self.sigma_person.shape() != (k, k) {
            return Err(Error::DimensionMismatch(format!(
                "sigma_person is {:?}, expected {k}x{k}",
                self.sigma_person.shape()
            )));
        }
        crate::stats::check_spd(&self.sigma_person, "sigma_person")
    }
}

/// Item-level parameters plus their hyper-layer.
///
/// `d` is the intercept (easiness), `xi` the time-intensity in log-seconds,
/// `omega` the reciprocal residual standard deviation of `log T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemParams {
    pub d: Vec<f64>,
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub mu_d: f64,
    pub mu_xi: f64,
    /// 2x2 covariance of `(d_i, xi_i)` around `(mu_d, mu_xi)`.
    pub sigma_item: DMatrix<f64>,
}

impl ItemParams {
    pub fn n_items(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.len() != self.d.len() || self.omega.len() != self.d.len() {
            return Err(Error::DimensionMismatch(format!(
                "item parameter lengths disagree: d={}, xi={}, omega={}",
                self.d.len(),
                self.xi.len(),
                self.omega.len()
            )));
        }
        if let Some((i, w)) = self
            .omega
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w <= 0.0)
        {
            return Err(Error::InvalidData(format!(
                "omega for item {} is {w}; must be positive",
                i + 1
            )));
        }
        if self.sigma_item.shape() != (2, 2) {
            return Err(Error::DimensionMismatch(format!(
                "sigma_item is {:?}, expected 2x2",
                self.sigma_item.shape()
            )));
        }
        crate::stats::check_spd(&self.sigma_item, "sigma_item")
    }
}

fn check_loading_row(theta_row: &[f64], q_row: &[f64]) -> Result<()> {
    if theta_row.len() != q_row.len() {
        return Err(Error::DimensionMismatch(format!(
            "latent vector has {} dimensions but loading row has {}",
            theta_row.len(),
            q_row.len()
        )));
    }
    if let Some(v) = q_row.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::InvalidData(format!(
            "loading entry {v} is not binary"
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Success probability `P(Y = 1) = sigmoid(q' theta + d)`.
///
/// The result is pinned strictly inside `(0, 1)`: values that would round to
/// 0 or 1 are moved to the nearest representable interior float, nothing
/// more.
pub fn ra_success_prob(theta_row: &[f64], q_row: &[f64], d: f64) -> Result<f64> {
    check_loading_row(theta_row, q_row)?;
    let z = dot(q_row, theta_row) + d;
    Ok(sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Expected log response time `xi - q' tau` (log-seconds).
pub fn rt_mean(xi: f64, q_row: &[f64], tau_row: &[f64]) -> Result<f64> {
    check_loading_row(tau_row, q_row)?;
    Ok(xi - dot(q_row, tau_row))
}

/// Log-density of `log T` under the log-normal RT model with reciprocal
/// residual standard deviation `omega`.
pub fn rt_log_density(
    log_t: f64,
    xi: f64,
    q_row: &[f64],
    tau_row: &[f64],
    omega: f64,
) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "omega must be positive, got {omega}"
        )));
    }
    let mean = rt_mean(xi, q_row, tau_row)?;
    Ok(normal_log_density_recip_sd(log_t, mean, omega))
}

fn check_joint_dims(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
    q_speed: &DMatrix<f64>,
) -> Result<()> {
    let n = data.n_persons();
    let i = data.n_items();
    if persons.n_persons() != n {
        return Err(Error::DimensionMismatch(format!(
            "data has {n} persons but person parameters have {}",
            persons.n_persons()
        )));
    }
    if items.n_items() != i {
        return Err(Error::DimensionMismatch(format!(
            "data has {i} items but item parameters have {}",
            items.n_items()
        )));
    }
    if q_ability.nrows() != i || q_speed.nrows() != i {
        return Err(Error::DimensionMismatch(format!(
            "loading matrices have {} / {} rows for {i} items",
            q_ability.nrows(),
            q_speed.nrows()
        )));
    }
    if q_ability.ncols() != persons.k_theta() {
        return Err(Error::DimensionMismatch(format!(
            "ability loadings have {} columns but theta has {}",
            q_ability.ncols(),
            persons.k_theta()
        )));
    }
    if q_speed.ncols() != persons.k_tau() {
        return Err(Error::DimensionMismatch(format!(
            "speed loadings have {} columns but tau has {}",
            q_speed.ncols(),
            persons.k_tau()
        )));
    }
    Ok(())
}

/// Joint log-likelihood of responses and log response times.
///
/// Sums, over non-missing cells, the Bernoulli log-mass of each response and
/// the normal log-density of each log RT; missing cells contribute zero.
/// Cells are visited person-major, response term before RT term, so the
/// accumulation order is reproducible.
pub fn joint_log_likelihood(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
    q_speed: &DMatrix<f64>,
) -> Result<f64> {
    check_joint_dims(data, persons, items, q_ability, q_speed)?;
    let k_theta = persons.k_theta();
    let k_tau = persons.k_tau();
    let mut ll = 0.0;
    for n in 0..data.n_persons() {
        for i in 0..data.n_items() {
            if let Some(y) = data.response(n, i) {
                let mut z = items.d[i];
                for k in 0..k_theta {
                    z += q_ability[(i, k)] * persons.theta[(n, k)];
                }
                ll += bernoulli_log_mass(y, z);
            }
            if let Some(t) = data.rt(n, i) {
                let mut mean = items.xi[i];
                for k in 0..k_tau {
                    mean -= q_speed[(i, k)] * persons.tau[(n, k)];
                }
                ll += normal_log_density_recip_sd(t.ln(), mean, items.omega[i]);
            }
        }
    }
    Ok(ll)
}

/// `-2 x` the joint log-likelihood.
pub fn deviance(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
    q_speed: &DMatrix<f64>,
) -> Result<f64> {
    Ok(-2.0 * joint_log_likelihood(data, persons, items, q_ability, q_speed)?)
}

/// Locates the first cell whose likelihood contribution is non-finite, for
/// error reporting when a chain goes pathological.
pub(crate) fn find_nonfinite_cell(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
    q_speed: &DMatrix<f64>,
) -> Option<(usize, usize)> {
    for n in 0..data.n_persons() {
        for i in 0..data.n_items() {
            if let Some(y) = data.response(n, i) {
                let mut z = items.d[i];
                for k in 0..persons.k_theta() {
                    z += q_ability[(i, k)] * persons.theta[(n, k)];
                }
                if !bernoulli_log_mass(y, z).is_finite() {
                    return Some((n, i));
                }
            }
            if let Some(t) = data.rt(n, i) {
                let mut mean = items.xi[i];
                for k in 0..persons.k_tau() {
                    mean -= q_speed[(i, k)] * persons.tau[(n, k)];
                }
                if !normal_log_density_recip_sd(t.ln(), mean, items.omega[i]).is_finite() {
                    return Some((n, i));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_item_params(d: Vec<f64>, xi: Vec<f64>, omega: Vec<f64>) -> ItemParams {
        ItemParams {
            d,
            xi,
            omega,
            mu_d: 0.0,
            mu_xi: 4.3,
            sigma_item: DMatrix::identity(2, 2),
        }
    }

    #[test]
    fn success_prob_zero_logit_is_half() {
        let p = ra_success_prob(&[0.0, 0.0], &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn success_prob_compensates_to_half() {
        let p = ra_success_prob(&[1.0, 1.0], &[1.0, 1.0], -2.0).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn success_prob_single_loaded_dimension() {
        // d from a fitted example; inverse-logit(0.567).
        let p = ra_success_prob(&[0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], 0.567).unwrap();
        assert_relative_eq!(p, 0.638, epsilon = 1e-3);
        assert_relative_eq!(p, sigmoid(0.567), epsilon = 1e-15);
    }

    #[test]
    fn success_prob_rejects_dimension_mismatch() {
        assert!(ra_success_prob(&[0.0, 0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn success_prob_strictly_interior_at_extremes() {
        let hi = ra_success_prob(&[0.0], &[1.0], 500.0).unwrap();
        let lo = ra_success_prob(&[0.0], &[1.0], -500.0).unwrap();
        assert!(hi < 1.0 && hi > 0.5);
        assert!(lo > 0.0 && lo < 0.5);
    }

    #[test]
    fn rt_mean_zero_speed_returns_xi() {
        assert_eq!(rt_mean(4.224, &[1.0], &[0.0]).unwrap(), 4.224);
    }

    #[test]
    fn rt_mean_ignores_unloaded_dimensions() {
        assert_eq!(rt_mean(5.0, &[1.0, 0.0], &[1.0, 99.0]).unwrap(), 4.0);
    }

    #[test]
    fn rt_mean_is_compensatory() {
        let a = rt_mean(5.0, &[1.0, 1.0], &[0.3, 0.7]).unwrap();
        let b = rt_mean(5.0, &[1.0, 1.0], &[0.7, 0.3]).unwrap();
        assert_eq!(a, 4.0);
        assert_eq!(b, 4.0);
    }

    #[test]
    fn rt_log_density_mode_values() {
        let at_mode = rt_log_density(4.0, 4.0, &[1.0], &[0.0], 1.0).unwrap();
        assert_relative_eq!(at_mode, -0.91894, epsilon = 1e-5);
        let at_mode2 = rt_log_density(4.0, 4.0, &[1.0], &[0.0], 2.0).unwrap();
        assert_relative_eq!(at_mode2, -0.22579, epsilon = 1e-5);
        let off = rt_log_density(5.0, 4.0, &[1.0], &[0.0], 1.0).unwrap();
        assert_relative_eq!(off, -1.41894, epsilon = 1e-5);
    }

    #[test]
    fn rt_log_density_rejects_nonpositive_omega() {
        assert!(rt_log_density(4.0, 4.0, &[1.0], &[0.0], 0.0).is_err());
        assert!(rt_log_density(4.0, 4.0, &[1.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn rt_log_density_integrates_to_one() {
        // Simpson's rule over mean +/- 8 sd.
        let (xi, omega) = (4.3, 1.7);
        let tau = [0.4, -0.2];
        let q = [1.0, 1.0];
        let mean = rt_mean(xi, &q, &tau).unwrap();
        let sd = 1.0 / omega;
        let m = 4000; // even
        let h = 16.0 * sd / m as f64;
        let mut total = 0.0;
        for j in 0..=m {
            let x = mean - 8.0 * sd + j as f64 * h;
            let w = if j == 0 || j == m {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += w * rt_log_density(x, xi, &q, &tau, omega).unwrap().exp();
        }
        total *= h / 3.0;
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    fn single_cell_data(y: Option<bool>, t: Option<f64>) -> ObservedData {
        ObservedData::new(1, 1, vec![y], vec![t]).unwrap()
    }

    fn single_cell_persons() -> PersonParams {
        PersonParams {
            theta: DMatrix::zeros(1, 1),
            tau: DMatrix::zeros(1, 1),
            sigma_person: DMatrix::identity(2, 2),
        }
    }

    #[test]
    fn joint_log_likelihood_single_cell() {
        // Y=1 with P=0.5 plus an RT at the mode with omega=1.
        let data = single_cell_data(Some(true), Some(4.0f64.exp()));
        let persons = single_cell_persons();
        let items = unit_item_params(vec![0.0], vec![4.0], vec![1.0]);
        let q = DMatrix::from_element(1, 1, 1.0);
        let ll = joint_log_likelihood(&data, &persons, &items, &q, &q).unwrap();
        assert_relative_eq!(ll, -1.61208, epsilon = 2e-5);
    }

    #[test]
    fn joint_log_likelihood_skips_missing_rt() {
        let data = single_cell_data(Some(true), None);
        let persons = single_cell_persons();
        let items = unit_item_params(vec![0.0], vec![4.0], vec![1.0]);
        let q = DMatrix::from_element(1, 1, 1.0);
        let ll = joint_log_likelihood(&data, &persons, &items, &q, &q).unwrap();
        // log 0.5, the Bernoulli term alone.
        assert_relative_eq!(ll, 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn joint_log_likelihood_empty_data_is_zero() {
        let data = ObservedData::new(0, 1, vec![], vec![]).unwrap();
        let persons = PersonParams {
            theta: DMatrix::zeros(0, 1),
            tau: DMatrix::zeros(0, 1),
            sigma_person: DMatrix::identity(2, 2),
        };
        let items = unit_item_params(vec![0.0], vec![4.0], vec![1.0]);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(
            joint_log_likelihood(&data, &persons, &items, &q, &q).unwrap(),
            0.0
        );
    }

    #[test]
    fn deviance_is_minus_two_log_likelihood() {
        let data = single_cell_data(Some(true), Some(4.0f64.exp()));
        let persons = single_cell_persons();
        let items = unit_item_params(vec![0.0], vec![4.0], vec![1.0]);
        let q = DMatrix::from_element(1, 1, 1.0);
        let ll = joint_log_likelihood(&data, &persons, &items, &q, &q).unwrap();
        let dev = deviance(&data, &persons, &items, &q, &q).unwrap();
        assert_eq!(dev, -2.0 * ll);
        assert_relative_eq!(dev, 3.22417, epsilon = 4e-5);
    }

    #[test]
    fn effective_q_per_structure() {
        let q = QMatrix::balanced(10, 4).unwrap();
        let ones = DMatrix::from_element(10, 1, 1.0);

        let (qa, qs) = effective_q(ModelStructure::MaMs, &q);
        assert_eq!(&qa, q.entries());
        assert_eq!(&qs, q.entries());

        let (qa, qs) = effective_q(ModelStructure::MaUs, &q);
        assert_eq!(&qa, q.entries());
        assert_eq!(qs, ones);

        let (qa, qs) = effective_q(ModelStructure::UaUs, &q);
        assert_eq!(qa, ones);
        assert_eq!(qs, ones);
    }

    #[test]
    fn qmatrix_rejects_zero_row_and_nonbinary() {
        let entries = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let err = QMatrix::new(
            entries,
            vec!["a".into(), "b".into()],
            vec!["k1".into(), "k2".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("'b'"));

        let entries = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        assert!(QMatrix::new(entries, vec!["a".into()], vec!["k1".into(), "k2".into()]).is_err());
    }

    #[test]
    fn observed_data_rejects_nonpositive_rt() {
        assert!(ObservedData::new(1, 1, vec![None], vec![Some(0.0)]).is_err());
        assert!(ObservedData::new(1, 1, vec![None], vec![Some(-3.0)]).is_err());
    }

    #[test]
    fn likelihood_decomposes_over_cells() {
        let data = ObservedData::new(
            2,
            2,
            vec![Some(true), Some(false), None, Some(true)],
            vec![Some(30.0), None, Some(55.0), Some(80.0)],
        )
        .unwrap();
        let persons = PersonParams {
            theta: DMatrix::from_row_slice(2, 1, &[0.3, -0.8]),
            tau: DMatrix::from_row_slice(2, 1, &[0.1, -0.4]),
            sigma_person: DMatrix::identity(2, 2),
        };
        let items = unit_item_params(vec![0.2, -1.0], vec![4.0, 4.5], vec![2.0, 1.5]);
        let q = DMatrix::from_element(2, 1, 1.0);
        let full = joint_log_likelihood(&data, &persons, &items, &q, &q).unwrap();

        // Drop the (person 2, item 1) RT cell and compare against its term.
        let mut rts = data.rts().to_vec();
        rts[2] = None;
        let reduced_data = ObservedData::new(2, 2, data.responses().to_vec(), rts).unwrap();
        let reduced = joint_log_likelihood(&reduced_data, &persons, &items, &q, &q).unwrap();
        let term = rt_log_density(55.0f64.ln(), items.xi[0], &[1.0], &[-0.4], items.omega[0]).unwrap();
        assert_relative_eq!(full - reduced, term, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn theta_and_q() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
            (1usize..=4)
                .prop_flat_map(|k| {
                    (
                        proptest::collection::vec(-3.0f64..3.0, k),
                        proptest::collection::vec(proptest::bool::ANY, k),
                        -3.0f64..3.0,
                    )
                })
                .prop_map(|(theta, qb, d)| {
                    let mut q: Vec<f64> = qb.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
                    // At least one loaded dimension.
                    q[0] = 1.0;
                    (theta, q, d)
                })
        }

        proptest! {
            #[test]
            fn monotone_in_loaded_constant_in_unloaded(
                (theta, q, d) in theta_and_q(),
                bump in 0.25f64..2.0,
                which in 0usize..4,
            ) {
                let k = theta.len();
                let dim = which % k;
                let base = ra_success_prob(&theta, &q, d).unwrap();
                let mut shifted = theta.clone();
                shifted[dim] += bump;
                let moved = ra_success_prob(&shifted, &q, d).unwrap();
                if q[dim] == 1.0 {
                    prop_assert!(moved > base);
                } else {
                    prop_assert_eq!(moved, base);
                }
            }

            #[test]
            fn compensatory_pairs_match_exactly(
                a in -2.0f64..2.0,
                b in -2.0f64..2.0,
                xi in 3.0f64..5.0,
                log_t in 2.0f64..6.0,
                omega in 0.5f64..4.0,
            ) {
                // Swapping the components of a two-dimensional speed vector
                // leaves the sum bitwise identical.
                let q = [1.0, 1.0];
                let d1 = rt_log_density(log_t, xi, &q, &[a, b], omega).unwrap();
                let d2 = rt_log_density(log_t, xi, &q, &[b, a], omega).unwrap();
                prop_assert_eq!(d1, d2);
            }
        }
    }
}
