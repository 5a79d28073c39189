//! Simulation of persons, items, responses, and response times from the
//! generative model, for recovery studies and testing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    effective_q, ra_success_prob, ItemParams, ModelStructure, ObservedData, PersonParams, QMatrix,
};
use crate::stats::{cholesky_with_jitter, mvn_from_standard_normals, Rng, SpdMatrix};

/// How true residual precisions are generated.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// Every item gets the same `omega` (so true `omega` has zero variance).
    Constant(f64),
    /// `omega_i = exp(Normal(log_mean, log_sd))`.
    Lognormal { log_mean: f64, log_sd: f64 },
}

/// Design of a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_persons: usize,
    pub q: QMatrix,
    pub structure: ModelStructure,
    /// Covariance of the stacked `(theta, tau)` person vector; its dimension
    /// must equal `k_theta + k_tau` implied by `structure` and `q`.
    pub sigma_person: SpdMatrix,
    pub mu_d: f64,
    pub mu_xi: f64,
    pub sigma_item: SpdMatrix,
    pub omega_mode: OmegaMode,
    /// Each RT cell is independently set missing with this probability.
    pub missing_rate: f64,
}

impl SimDesign {
    pub fn k_theta(&self) -> usize {
        match self.structure {
            ModelStructure::UaUs => 1,
            _ => self.q.n_dims(),
        }
    }

    pub fn k_tau(&self) -> usize {
        match self.structure {
            ModelStructure::MaMs => self.q.n_dims(),
            _ => 1,
        }
    }

    pub fn k_star(&self) -> usize {
        self.k_theta() + self.k_tau()
    }

    pub fn n_items(&self) -> usize {
        self.q.n_items()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_star();
        if self.sigma_person.dim() != k {
            return Err(Error::DimensionMismatch(format!(
                "sigma_person is {}x{} but the {} structure implies K* = {k}",
                self.sigma_person.dim(),
                self.sigma_person.dim(),
                self.structure
            )));
        }
        if self.sigma_item.dim() != 2 {
            return Err(Error::DimensionMismatch(
                "sigma_item must be 2x2".into(),
            ));
        }
        if let OmegaMode::Constant(w) = self.omega_mode {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "constant omega must be positive, got {w}"
                )));
            }
        }
        if let OmegaMode::Lognormal { log_sd, .. } = self.omega_mode {
            if log_sd < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "lognormal omega sd must be nonnegative, got {log_sd}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidConfig(format!(
                "missing_rate must be in [0, 1), got {}",
                self.missing_rate
            )));
        }
        Ok(())
    }
}

impl Default for SimDesign {
    /// Desk-scale recovery design: 500 persons, 20 items split over two
    /// dimensions, abilities with unit variance and 0.7 within-block
    /// correlation, speeds with variance 0.3 and 0.7 within-block
    /// correlation, ability-speed cross-correlations of -0.3, and constant
    /// true `omega = 2`.
    fn default() -> Self {
        let q = QMatrix::balanced(20, 2).expect("static design");
        let sigma_person =
            block_sigma_person(&[1.0, 1.0], &[0.3, 0.3], 0.7, 0.7, -0.3).expect("static design");
        SimDesign {
            n_persons: 500,
            q,
            structure: ModelStructure::MaMs,
            sigma_person,
            mu_d: 0.0,
            mu_xi: 4.3,
            sigma_item: SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.25]))
                .expect("static design"),
            omega_mode: OmegaMode::Constant(2.0),
            missing_rate: 0.0,
        }
    }
}

/// Builds a person covariance from block variances and correlations:
/// `within_theta` / `within_tau` correlate dimensions inside each block and
/// `cross` correlates every (ability, speed) pair.
pub fn block_sigma_person(
    theta_vars: &[f64],
    tau_vars: &[f64],
    within_theta: f64,
    within_tau: f64,
    cross: f64,
) -> Result<SpdMatrix> {
    let kt = theta_vars.len();
    let ku = tau_vars.len();
    let k = kt + ku;
    if k == 0 {
        return Err(Error::InvalidArgument("no variances supplied".into()));
    }
    let sd = |j: usize| -> f64 {
        if j < kt {
            theta_vars[j].sqrt()
        } else {
            tau_vars[j - kt].sqrt()
        }
    };
    let corr = |i: usize, j: usize| -> f64 {
        if i == j {
            1.0
        } else if i < kt && j < kt {
            within_theta
        } else if i >= kt && j >= kt {
            within_tau
        } else {
            cross
        }
    };
    let m = DMatrix::from_fn(k, k, |i, j| corr(i, j) * sd(i) * sd(j));
    SpdMatrix::new(m)
}

/// A complete simulated dataset with its generating parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub data: ObservedData,
    pub persons: PersonParams,
    pub items: ItemParams,
}

/// Draws `N` person vectors from `Normal(0, sigma_person)` and splits them
/// into ability and speed blocks. Each person consumes `K*` standard normals
/// in component order, persons in index order.
pub fn simulate_persons(design: &SimDesign, rng: &mut Rng) -> Result<PersonParams> {
    design.validate()?;
    let n = design.n_persons;
    let kt = design.k_theta();
    let ku = design.k_tau();
    let k = kt + ku;
    let chol = cholesky_with_jitter(design.sigma_person.as_matrix())?.l();
    let zero = DVector::zeros(k);
    let mut theta = DMatrix::zeros(n, kt);
    let mut tau = DMatrix::zeros(n, ku);
    for p in 0..n {
        let z = DVector::from_fn(k, |_, _| rng.standard_normal());
        let omega_vec = mvn_from_standard_normals(&zero, &chol, &z);
        for j in 0..kt {
            theta[(p, j)] = omega_vec[j];
        }
        for j in 0..ku {
            tau[(p, j)] = omega_vec[kt + j];
        }
    }
    Ok(PersonParams {
        theta,
        tau,
        sigma_person: design.sigma_person.as_matrix().clone(),
    })
}

/// Draws item parameters: `(d_i, xi_i)` from the bivariate normal around
/// `(mu_d, mu_xi)` for all items first (two normals each, item order), then
/// `omega_i` per `omega_mode` (one normal per item in the lognormal mode;
/// none in the constant mode).
pub fn simulate_items(design: &SimDesign, rng: &mut Rng) -> Result<ItemParams> {
    design.validate()?;
    let n_items = design.n_items();
    let chol = cholesky_with_jitter(design.sigma_item.as_matrix())?.l();
    let mean = DVector::from_row_slice(&[design.mu_d, design.mu_xi]);
    let mut d = Vec::with_capacity(n_items);
    let mut xi = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let z = DVector::from_fn(2, |_, _| rng.standard_normal());
        let pair = mvn_from_standard_normals(&mean, &chol, &z);
        d.push(pair[0]);
        xi.push(pair[1]);
    }
    let omega = match design.omega_mode {
        OmegaMode::Constant(w) => vec![w; n_items],
        OmegaMode::Lognormal { log_mean, log_sd } => (0..n_items)
            .map(|_| (log_mean + log_sd * rng.standard_normal()).exp())
            .collect(),
    };
    Ok(ItemParams {
        d,
        xi,
        omega,
        mu_d: design.mu_d,
        mu_xi: design.mu_xi,
        sigma_item: design.sigma_item.as_matrix().clone(),
    })
}

/// Bernoulli responses with cell probabilities from [`ra_success_prob`].
/// One uniform per cell, cells visited person-major.
pub fn simulate_responses(
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    let n = persons.n_persons();
    let n_items = items.n_items();
    if q_ability.nrows() != n_items || q_ability.ncols() != persons.k_theta() {
        return Err(Error::DimensionMismatch(format!(
            "ability loadings are {:?} for {n_items} items and {} dimensions",
            q_ability.shape(),
            persons.k_theta()
        )));
    }
    let kt = persons.k_theta();
    let mut theta_row = vec![0.0; kt];
    let mut q_row = vec![0.0; kt];
    let mut out = DMatrix::zeros(n, n_items);
    for p in 0..n {
        for (k, v) in theta_row.iter_mut().enumerate() {
            *v = persons.theta[(p, k)];
        }
        for i in 0..n_items {
            for k in 0..kt {
                q_row[k] = q_ability[(i, k)];
            }
            let prob = ra_success_prob(&theta_row, &q_row, items.d[i])?;
            out[(p, i)] = if rng.uniform() < prob { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// Response times `T = exp(xi - q' tau + e/omega)`, one standard normal per
/// cell, cells visited person-major. All outputs are strictly positive.
pub fn simulate_rts(
    persons: &PersonParams,
    items: &ItemParams,
    q_speed: &DMatrix<f64>,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    let n = persons.n_persons();
    let n_items = items.n_items();
    if q_speed.nrows() != n_items || q_speed.ncols() != persons.k_tau() {
        return Err(Error::DimensionMismatch(format!(
            "speed loadings are {:?} for {n_items} items and {} dimensions",
            q_speed.shape(),
            persons.k_tau()
        )));
    }
    let ku = persons.k_tau();
    let mut out = DMatrix::zeros(n, n_items);
    for p in 0..n {
        for i in 0..n_items {
            let mut mean = items.xi[i];
            for k in 0..ku {
                mean -= q_speed[(i, k)] * persons.tau[(p, k)];
            }
            let log_t = mean + rng.standard_normal() / items.omega[i];
            out[(p, i)] = log_t.exp();
        }
    }
    Ok(out)
}

/// Independently sets each RT cell missing with probability `missing_rate`;
/// responses are untouched. One uniform per RT cell in person-major order.
/// A rate of exactly zero returns the input unchanged without consuming any
/// variates.
pub fn inject_missing(data: &ObservedData, missing_rate: f64, rng: &mut Rng) -> Result<ObservedData> {
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::InvalidArgument(format!(
            "missing rate must be in [0, 1), got {missing_rate}"
        )));
    }
    if missing_rate == 0.0 {
        return Ok(data.clone());
    }
    let rts = data
        .rts()
        .iter()
        .map(|rt| {
            if rng.uniform() < missing_rate {
                None
            } else {
                *rt
            }
        })
        .collect();
    data.with_rts(rts)
}

/// Simulates a full dataset: persons, items, responses, response times, and
/// RT missingness, in that rng order.
pub fn simulate_dataset(design: &SimDesign, rng: &mut Rng) -> Result<SimulatedDataset> {
    design.validate()?;
    let (q_ability, q_speed) = effective_q(design.structure, &design.q);
    let persons = simulate_persons(design, rng)?;
    let items = simulate_items(design, rng)?;
    let responses = simulate_responses(&persons, &items, &q_ability, rng)?;
    let rts = simulate_rts(&persons, &items, &q_speed, rng)?;
    let complete = ObservedData::from_complete(&responses, &rts)?;
    let data = inject_missing(&complete, design.missing_rate, rng)?;
    Ok(SimulatedDataset {
        data,
        persons,
        items,
    })
}
