//! Metropolis-within-Gibbs estimation of the joint model.
//!
//! Every full conditional that is available in closed form is drawn exactly:
//! speeds `tau_n` (normal), time-intensities `xi_i` (normal), residual
//! precisions `omega_i^2` (gamma), the person covariance (inverse-Wishart),
//! and the item hyper-layer (normal + inverse-Wishart). The logistic part of
//! the model (abilities `theta_nk` and intercepts `d_i`) uses
//! componentwise random-walk Metropolis with Robbins-Monro scale adaptation
//! toward a target acceptance rate, active during burn-in only and frozen
//! afterwards.
//!
//! One iteration updates, in this fixed order: all `tau_n`, all `theta_n`,
//! all `xi_i`, all `d_i`, all `omega_i`, `sigma_person`, then the item
//! hyper-parameters `(mu_d, mu_xi, sigma_item)`.
//!
//! Chain `c` draws from the stream `(config.seed, stream_id = c)`; chains
//! therefore differ only through their rng stream and can run concurrently.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, bernoulli_log_mass, ItemParams, ModelStructure, ObservedData, PersonParams, QMatrix,
};
use crate::stats::{
    gamma_sample, invwishart_sample, mvn_sample, mvn_sample_precision, schur_condition,
    spd_inverse, Rng,
};

/// MCMC run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub initial_proposal_sd: f64,
    /// Target Metropolis acceptance rate for scale adaptation.
    pub adapt_target: f64,
    /// Adaptation is applied every this many burn-in iterations.
    pub adapt_window: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 2,
            n_iterations: 10_000,
            n_burnin: 5_000,
            thin: 1,
            seed: 42,
            initial_proposal_sd: 0.5,
            adapt_target: 0.44,
            adapt_window: 50,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::InvalidConfig("n_chains must be at least 1".into()));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::InvalidConfig(format!(
                "n_burnin ({}) must be smaller than n_iterations ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.initial_proposal_sd > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial_proposal_sd must be positive, got {}",
                self.initial_proposal_sd
            )));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "adapt_target must be in (0, 1), got {}",
                self.adapt_target
            )));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig("adapt_window must be at least 1".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn n_kept(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.thin
    }
}

/// Prior constants.
///
/// The covariance hyper-priors are `sigma_person ~ InvWishart(r I, df)` with
/// `df` defaulting to `K*`, and `sigma_item ~ InvWishart(r I, 2)`. Residual
/// precisions have `omega^2 ~ Gamma(shape, rate)` (equivalently
/// `omega^-2 ~ InvGamma`), and the item means have independent normal
/// priors. The second argument of the normal hyper-priors is interpreted as
/// a variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub r_person_scale: f64,
    /// Degrees of freedom for the person covariance prior; `None` resolves
    /// to `K*` at model construction.
    pub df_person: Option<f64>,
    pub r_item_scale: f64,
    pub df_item: f64,
    pub omega_precision_shape: f64,
    pub omega_precision_rate: f64,
    pub mu_d_mean: f64,
    pub mu_d_var: f64,
    pub mu_xi_mean: f64,
    pub mu_xi_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            r_person_scale: 1.0,
            df_person: None,
            r_item_scale: 1.0,
            df_item: 2.0,
            omega_precision_shape: 1.0,
            omega_precision_rate: 1.0,
            mu_d_mean: 0.0,
            mu_d_var: 2.0,
            mu_xi_mean: 4.3,
            mu_xi_var: 2.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_person_scale", self.r_person_scale),
            ("r_item_scale", self.r_item_scale),
            ("omega_precision_shape", self.omega_precision_shape),
            ("omega_precision_rate", self.omega_precision_rate),
            ("mu_d_var", self.mu_d_var),
            ("mu_xi_var", self.mu_xi_var),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.df_item < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "df_item must be at least 2, got {}",
                self.df_item
            )));
        }
        Ok(())
    }
}

/// Accept/reject bookkeeping for one family of Metropolis parameters.
#[derive(Debug, Clone)]
pub struct MhCounters {
    pub accepts: Vec<u64>,
    pub proposals: Vec<u64>,
    window_accepts: Vec<u32>,
    window_proposals: Vec<u32>,
}

impl MhCounters {
    fn new(len: usize) -> Self {
        MhCounters {
            accepts: vec![0; len],
            proposals: vec![0; len],
            window_accepts: vec![0; len],
            window_proposals: vec![0; len],
        }
    }

    #[inline]
    fn record(&mut self, idx: usize, accepted: bool) {
        self.proposals[idx] += 1;
        self.window_proposals[idx] += 1;
        if accepted {
            self.accepts[idx] += 1;
            self.window_accepts[idx] += 1;
        }
    }

    fn reset_totals(&mut self) {
        self.accepts.iter_mut().for_each(|v| *v = 0);
        self.proposals.iter_mut().for_each(|v| *v = 0);
    }

    pub fn rates(&self) -> Vec<f64> {
        self.accepts
            .iter()
            .zip(&self.proposals)
            .map(|(a, p)| if *p == 0 { f64::NAN } else { *a as f64 / *p as f64 })
            .collect()
    }
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub persons: PersonParams,
    pub items: ItemParams,
    pub iteration: usize,
    /// Proposal standard deviation per `theta[n,k]`, indexed `n * k_theta + k`.
    pub theta_proposal_sd: Vec<f64>,
    /// Proposal standard deviation per `d[i]`.
    pub d_proposal_sd: Vec<f64>,
    pub theta_counters: MhCounters,
    pub d_counters: MhCounters,
    adapt_batches: usize,
}

impl ChainState {
    /// Robbins-Monro rescaling of every proposal sd toward the target
    /// acceptance rate, using the acceptance fraction since the previous
    /// call. The step size shrinks with the batch index so late burn-in
    /// barely moves the scales.
    pub fn apply_adaptation(&mut self, target: f64) {
        self.adapt_batches += 1;
        let step = (1.0 / (self.adapt_batches as f64).sqrt()).min(0.5);
        adapt_family(&mut self.theta_proposal_sd, &mut self.theta_counters, target, step);
        adapt_family(&mut self.d_proposal_sd, &mut self.d_counters, target, step);
    }

    /// Clears cumulative acceptance totals (called at the end of burn-in so
    /// reported rates cover the sampling phase only).
    pub fn reset_acceptance(&mut self) {
        self.theta_counters.reset_totals();
        self.d_counters.reset_totals();
    }

    pub fn validate(&self) -> Result<()> {
        self.persons.validate()?;
        self.items.validate()?;
        if self.theta_proposal_sd.iter().chain(&self.d_proposal_sd).any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("proposal sd must stay positive".into()));
        }
        Ok(())
    }
}

fn adapt_family(sds: &mut [f64], counters: &mut MhCounters, target: f64, step: f64) {
    for (idx, sd) in sds.iter_mut().enumerate() {
        let props = counters.window_proposals[idx];
        if props == 0 {
            continue;
        }
        let rate = counters.window_accepts[idx] as f64 / props as f64;
        *sd *= ((rate - target) * step).exp();
        counters.window_accepts[idx] = 0;
        counters.window_proposals[idx] = 0;
    }
}

/// Which scalar lives in which column of a draw row.
///
/// Column order: `theta[n,k]` (person-major), `tau[n,k]`, `d[i]`, `xi[i]`,
/// `omega[i]`, `mu_d`, `mu_xi`, the upper triangle of `sigma_person`
/// (row-major, diagonal included), then the upper triangle of `sigma_item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_persons: usize,
    pub k_theta: usize,
    pub k_tau: usize,
    pub n_items: usize,
}

impl ParamLayout {
    pub fn k_star(&self) -> usize {
        self.k_theta + self.k_tau
    }

    fn sigma_person_len(&self) -> usize {
        self.k_star() * (self.k_star() + 1) / 2
    }

    pub fn n_params(&self) -> usize {
        self.n_persons * (self.k_theta + self.k_tau) + 3 * self.n_items + 2
            + self.sigma_person_len()
            + 3
    }

    pub fn theta_col(&self, n: usize, k: usize) -> usize {
        n * self.k_theta + k
    }

    pub fn tau_col(&self, n: usize, k: usize) -> usize {
        self.n_persons * self.k_theta + n * self.k_tau + k
    }

    pub fn d_col(&self, i: usize) -> usize {
        self.n_persons * self.k_star() + i
    }

    pub fn xi_col(&self, i: usize) -> usize {
        self.d_col(self.n_items) + i
    }

    pub fn omega_col(&self, i: usize) -> usize {
        self.xi_col(self.n_items) + i
    }

    pub fn mu_d_col(&self) -> usize {
        self.omega_col(self.n_items)
    }

    pub fn mu_xi_col(&self) -> usize {
        self.mu_d_col() + 1
    }

    pub fn sigma_person_col(&self, row: usize, col: usize) -> usize {
        debug_assert!(row <= col);
        let k = self.k_star();
        // Offset of the (row, col) entry inside the row-major upper triangle:
        // rows 0..row contribute k - j entries each.
        let before = row * k - (row * row - row) / 2;
        self.mu_xi_col() + 1 + before + (col - row)
    }

    pub fn sigma_item_col(&self, row: usize, col: usize) -> usize {
        debug_assert!(row <= col && col < 2);
        self.mu_xi_col() + 1 + self.sigma_person_len() + row + col
    }

    /// Column names, `param[index]` style with 1-based indices.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params());
        for n in 0..self.n_persons {
            for k in 0..self.k_theta {
                names.push(format!("theta[{},{}]", n + 1, k + 1));
            }
        }
        for n in 0..self.n_persons {
            for k in 0..self.k_tau {
                names.push(format!("tau[{},{}]", n + 1, k + 1));
            }
        }
        for label in ["d", "xi", "omega"] {
            for i in 0..self.n_items {
                names.push(format!("{label}[{}]", i + 1));
            }
        }
        names.push("mu_d".into());
        names.push("mu_xi".into());
        let ks = self.k_star();
        for r in 0..ks {
            for c in r..ks {
                names.push(format!("sigma_person[{},{}]", r + 1, c + 1));
            }
        }
        for (r, c) in [(0, 0), (0, 1), (1, 1)] {
            names.push(format!("sigma_item[{},{}]", r + 1, c + 1));
        }
        names
    }

    fn fill_row(&self, state: &ChainState, out: &mut Vec<f64>) {
        for n in 0..self.n_persons {
            for k in 0..self.k_theta {
                out.push(state.persons.theta[(n, k)]);
            }
        }
        for n in 0..self.n_persons {
            for k in 0..self.k_tau {
                out.push(state.persons.tau[(n, k)]);
            }
        }
        out.extend_from_slice(&state.items.d);
        out.extend_from_slice(&state.items.xi);
        out.extend_from_slice(&state.items.omega);
        out.push(state.items.mu_d);
        out.push(state.items.mu_xi);
        let ks = self.k_star();
        for r in 0..ks {
            for c in r..ks {
                out.push(state.persons.sigma_person[(r, c)]);
            }
        }
        for (r, c) in [(0, 0), (0, 1), (1, 1)] {
            out.push(state.items.sigma_item[(r, c)]);
        }
    }

    /// Rebuilds parameter structs from one stored draw row.
    pub fn extract(&self, row: &[f64]) -> (PersonParams, ItemParams) {
        let mut theta = DMatrix::zeros(self.n_persons, self.k_theta);
        let mut tau = DMatrix::zeros(self.n_persons, self.k_tau);
        for n in 0..self.n_persons {
            for k in 0..self.k_theta {
                theta[(n, k)] = row[self.theta_col(n, k)];
            }
            for k in 0..self.k_tau {
                tau[(n, k)] = row[self.tau_col(n, k)];
            }
        }
        let ks = self.k_star();
        let mut sigma_person = DMatrix::zeros(ks, ks);
        for r in 0..ks {
            for c in r..ks {
                let v = row[self.sigma_person_col(r, c)];
                sigma_person[(r, c)] = v;
                sigma_person[(c, r)] = v;
            }
        }
        let mut sigma_item = DMatrix::zeros(2, 2);
        for (r, c) in [(0, 0), (0, 1), (1, 1)] {
            let v = row[self.sigma_item_col(r, c)];
            sigma_item[(r, c)] = v;
            sigma_item[(c, r)] = v;
        }
        let persons = PersonParams {
            theta,
            tau,
            sigma_person,
        };
        let items = ItemParams {
            d: (0..self.n_items).map(|i| row[self.d_col(i)]).collect(),
            xi: (0..self.n_items).map(|i| row[self.xi_col(i)]).collect(),
            omega: (0..self.n_items).map(|i| row[self.omega_col(i)]).collect(),
            mu_d: row[self.mu_d_col()],
            mu_xi: row[self.mu_xi_col()],
            sigma_item,
        };
        (persons, items)
    }
}

/// Post-burn-in Metropolis acceptance rates of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub theta_mean: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub d_mean: f64,
    pub d_min: f64,
    pub d_max: f64,
}

fn rate_stats(rates: &[f64]) -> (f64, f64, f64) {
    let finite: Vec<f64> = rates.iter().cloned().filter(|r| r.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Retained draws of one chain, stored row-major (draw x parameter).
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub values: Vec<f64>,
    pub deviance: Vec<f64>,
    pub n_kept: usize,
    pub acceptance: AcceptanceSummary,
}

/// Retained post-burn-in draws of every parameter, per chain.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    layout: ParamLayout,
    chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn new(layout: ParamLayout, chains: Vec<ChainDraws>) -> Result<Self> {
        let n_params = layout.n_params();
        for (c, chain) in chains.iter().enumerate() {
            if chain.values.len() != chain.n_kept * n_params {
                return Err(Error::DimensionMismatch(format!(
                    "chain {c} stores {} values for {} draws of {n_params} parameters",
                    chain.values.len(),
                    chain.n_kept
                )));
            }
            if chain.deviance.len() != chain.n_kept {
                return Err(Error::DimensionMismatch(format!(
                    "chain {c} has {} deviance entries for {} draws",
                    chain.deviance.len(),
                    chain.n_kept
                )));
            }
        }
        Ok(Self { layout, chains })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_kept(&self, chain: usize) -> usize {
        self.chains[chain].n_kept
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params()
    }

    pub fn chains(&self) -> &[ChainDraws] {
        &self.chains
    }

    #[inline]
    pub fn value(&self, chain: usize, draw: usize, col: usize) -> f64 {
        self.chains[chain].values[draw * self.layout.n_params() + col]
    }

    pub fn column(&self, chain: usize, col: usize) -> Vec<f64> {
        (0..self.n_kept(chain)).map(|d| self.value(chain, d, col)).collect()
    }

    /// One column pooled over chains, in chain order.
    pub fn pooled_column(&self, col: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for c in 0..self.n_chains() {
            out.extend(self.column(c, col));
        }
        out
    }

    pub fn pooled_deviance(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for chain in &self.chains {
            out.extend_from_slice(&chain.deviance);
        }
        out
    }

    /// Posterior mean of every parameter, pooled over chains.
    pub fn posterior_means(&self) -> Vec<f64> {
        let p = self.n_params();
        let mut sums = vec![0.0; p];
        let mut count = 0usize;
        for chain in &self.chains {
            for d in 0..chain.n_kept {
                let row = &chain.values[d * p..(d + 1) * p];
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
            }
            count += chain.n_kept;
        }
        sums.iter_mut().for_each(|s| *s /= count as f64);
        sums
    }

    /// Parameter structs at one retained draw.
    pub fn extract_state(&self, chain: usize, draw: usize) -> (PersonParams, ItemParams) {
        let p = self.layout.n_params();
        let row = &self.chains[chain].values[draw * p..(draw + 1) * p];
        self.layout.extract(row)
    }
}

/// Per-iteration conditional pieces shared across persons and items.
///
/// All of these depend only on `sigma_person`, `sigma_item`, and the item
/// means, which change once per iteration.
pub struct StepCache {
    /// tau | theta: mean `g_tau theta_n`, covariance `v_tau`.
    g_tau: DMatrix<f64>,
    v_tau: DMatrix<f64>,
    v_tau_prec: DMatrix<f64>,
    /// theta | tau: mean `g_theta tau_n`, precision `v_theta_prec`.
    g_theta: DMatrix<f64>,
    v_theta_prec: DMatrix<f64>,
    /// d | xi: mean `mu_d + d_gain (xi - mu_xi)`, variance `d_var`.
    d_gain: f64,
    d_var: f64,
    /// xi | d: mean `mu_xi + xi_gain (d - mu_d)`, variance `xi_var`.
    xi_gain: f64,
    xi_var: f64,
}

/// A dataset bound to a structure and priors, ready for sampling.
///
/// Construction validates dimensions once and precomputes per-person and
/// per-item observed-cell indexes; all update methods then run without
/// further shape checks.
pub struct JointModel {
    data: ObservedData,
    structure: ModelStructure,
    priors: PriorSpec,
    q_ability: DMatrix<f64>,
    q_speed: DMatrix<f64>,
    k_theta: usize,
    k_tau: usize,
    r_person: DMatrix<f64>,
    df_person: f64,
    r_item: DMatrix<f64>,
    log_rts: Vec<Option<f64>>,
    qa_rows: Vec<Vec<f64>>,
    qs_rows: Vec<Vec<f64>>,
    /// Items with an observed response for person `n`, split by ability
    /// dimension: `person_dim_items[n][k]` lists items with `q_ab[i,k] = 1`.
    person_dim_items: Vec<Vec<Vec<usize>>>,
    /// Items with an observed RT for person `n`.
    person_rt_items: Vec<Vec<usize>>,
    /// Persons with an observed response for item `i`.
    item_resp_persons: Vec<Vec<usize>>,
    /// Persons with an observed RT for item `i`.
    item_rt_persons: Vec<Vec<usize>>,
}

impl JointModel {
    pub fn new(
        data: &ObservedData,
        q: &QMatrix,
        structure: ModelStructure,
        priors: PriorSpec,
    ) -> Result<Self> {
        priors.validate()?;
        if data.n_items() != q.n_items() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} items but the Q-matrix has {}",
                data.n_items(),
                q.n_items()
            )));
        }
        let (q_ability, q_speed) = model::effective_q(structure, q);
        let k_theta = q_ability.ncols();
        let k_tau = q_speed.ncols();
        let k_star = k_theta + k_tau;
        let df_person = priors.df_person.unwrap_or(k_star as f64);
        if df_person < k_star as f64 {
            return Err(Error::InvalidConfig(format!(
                "df_person ({df_person}) must be at least K* = {k_star}"
            )));
        }
        let n = data.n_persons();
        let n_items = data.n_items();
        let log_rts: Vec<Option<f64>> = data.rts().iter().map(|t| t.map(f64::ln)).collect();
        let qa_rows: Vec<Vec<f64>> = (0..n_items)
            .map(|i| (0..k_theta).map(|k| q_ability[(i, k)]).collect())
            .collect();
        let qs_rows: Vec<Vec<f64>> = (0..n_items)
            .map(|i| (0..k_tau).map(|k| q_speed[(i, k)]).collect())
            .collect();
        let mut person_dim_items = vec![vec![Vec::new(); k_theta]; n];
        let mut person_rt_items = vec![Vec::new(); n];
        let mut item_resp_persons = vec![Vec::new(); n_items];
        let mut item_rt_persons = vec![Vec::new(); n_items];
        for p in 0..n {
            for i in 0..n_items {
                if data.response(p, i).is_some() {
                    item_resp_persons[i].push(p);
                    for k in 0..k_theta {
                        if qa_rows[i][k] == 1.0 {
                            person_dim_items[p][k].push(i);
                        }
                    }
                }
                if data.rt(p, i).is_some() {
                    person_rt_items[p].push(i);
                    item_rt_persons[i].push(p);
                }
            }
        }
        Ok(Self {
            data: data.clone(),
            structure,
            q_ability,
            q_speed,
            k_theta,
            k_tau,
            r_person: DMatrix::identity(k_star, k_star) * priors.r_person_scale,
            df_person,
            r_item: DMatrix::identity(2, 2) * priors.r_item_scale,
            priors,
            log_rts,
            qa_rows,
            qs_rows,
            person_dim_items,
            person_rt_items,
            item_resp_persons,
            item_rt_persons,
        })
    }

    pub fn data(&self) -> &ObservedData {
        &self.data
    }

    pub fn structure(&self) -> ModelStructure {
        self.structure
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn q_ability(&self) -> &DMatrix<f64> {
        &self.q_ability
    }

    pub fn q_speed(&self) -> &DMatrix<f64> {
        &self.q_speed
    }

    pub fn n_persons(&self) -> usize {
        self.data.n_persons()
    }

    pub fn n_items(&self) -> usize {
        self.data.n_items()
    }

    pub fn k_theta(&self) -> usize {
        self.k_theta
    }

    pub fn k_tau(&self) -> usize {
        self.k_tau
    }

    pub fn k_star(&self) -> usize {
        self.k_theta + self.k_tau
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_persons: self.n_persons(),
            k_theta: self.k_theta,
            k_tau: self.k_tau,
            n_items: self.n_items(),
        }
    }

    #[inline]
    fn log_rt(&self, person: usize, item: usize) -> f64 {
        self.log_rts[person * self.data.n_items() + item].expect("indexed cell is observed")
    }

    /// Conditional pieces for the current covariance/hyper values.
    pub fn build_cache(&self, state: &ChainState) -> Result<StepCache> {
        let sp = &state.persons.sigma_person;
        let theta_idx: Vec<usize> = (0..self.k_theta).collect();
        let tau_idx: Vec<usize> = (self.k_theta..self.k_star()).collect();
        let (g_tau, v_tau) = schur_condition(sp, &theta_idx)?;
        let v_tau_prec = spd_inverse(&v_tau)?;
        let (g_theta, v_theta) = schur_condition(sp, &tau_idx)?;
        let v_theta_prec = spd_inverse(&v_theta)?;
        let si = &state.items.sigma_item;
        let d_var = si[(0, 0)] - si[(0, 1)] * si[(0, 1)] / si[(1, 1)];
        let xi_var = si[(1, 1)] - si[(0, 1)] * si[(0, 1)] / si[(0, 0)];
        if !(d_var > 0.0) || !(xi_var > 0.0) {
            return Err(Error::Numerical(
                "item covariance produced a nonpositive conditional variance".into(),
            ));
        }
        Ok(StepCache {
            g_tau,
            v_tau,
            v_tau_prec,
            g_theta,
            v_theta_prec,
            d_gain: si[(0, 1)] / si[(1, 1)],
            d_var,
            xi_gain: si[(0, 1)] / si[(0, 0)],
            xi_var,
        })
    }

    fn cond_tau_mean(&self, cache: &StepCache, state: &ChainState, n: usize) -> DVector<f64> {
        let theta_n = DVector::from_fn(self.k_theta, |k, _| state.persons.theta[(n, k)]);
        &cache.g_tau * theta_n
    }

    fn cond_theta_mean(&self, cache: &StepCache, state: &ChainState, n: usize) -> DVector<f64> {
        let tau_n = DVector::from_fn(self.k_tau, |k, _| state.persons.tau[(n, k)]);
        &cache.g_theta * tau_n
    }

    /// Precision and precision-weighted mean of the `tau_n` full
    /// conditional.
    fn tau_precision_rhs(
        &self,
        cache: &StepCache,
        state: &ChainState,
        n: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let m0 = self.cond_tau_mean(cache, state, n);
        let mut precision = cache.v_tau_prec.clone();
        let mut rhs = &cache.v_tau_prec * &m0;
        for &i in &self.person_rt_items[n] {
            let w2 = state.items.omega[i] * state.items.omega[i];
            let q = &self.qs_rows[i];
            let resid = state.items.xi[i] - self.log_rt(n, i);
            for a in 0..self.k_tau {
                if q[a] == 0.0 {
                    continue;
                }
                rhs[a] += w2 * q[a] * resid;
                for b in 0..self.k_tau {
                    precision[(a, b)] += w2 * q[a] * q[b];
                }
            }
        }
        (precision, rhs)
    }

    /// Exact Gibbs draw of `tau_n`. A person with no observed RTs is drawn
    /// from the conditional prior given `theta_n` (same variates as
    /// [`mvn_sample`]); otherwise the draw uses the precision form.
    pub fn update_tau(&self, state: &mut ChainState, n: usize, rng: &mut Rng) -> Result<()> {
        let cache = self.build_cache(state)?;
        self.update_tau_cached(&cache, state, n, rng)
    }

    fn update_tau_cached(
        &self,
        cache: &StepCache,
        state: &mut ChainState,
        n: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let draw = if self.person_rt_items[n].is_empty() {
            let m0 = self.cond_tau_mean(cache, state, n);
            mvn_sample(&m0, &cache.v_tau, rng)?
        } else {
            let (precision, rhs) = self.tau_precision_rhs(cache, state, n);
            mvn_sample_precision(&precision, &rhs, rng)?
        };
        for k in 0..self.k_tau {
            state.persons.tau[(n, k)] = draw[k];
        }
        Ok(())
    }

    /// Mean and covariance of the `tau_n` full conditional, for oracle
    /// comparisons.
    pub fn tau_full_conditional(
        &self,
        state: &ChainState,
        n: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let cache = self.build_cache(state)?;
        if self.person_rt_items[n].is_empty() {
            return Ok((self.cond_tau_mean(&cache, state, n), cache.v_tau.clone()));
        }
        let (precision, rhs) = self.tau_precision_rhs(&cache, state, n);
        let cov = spd_inverse(&precision)?;
        let mean = &cov * rhs;
        Ok((mean, cov))
    }

    /// Componentwise random-walk Metropolis update of `theta_n`. Consumes
    /// one standard normal and one uniform per dimension, in dimension
    /// order; the target is the Bernoulli likelihood over loaded items times
    /// the conditional prior of `theta_n` given `tau_n`.
    pub fn update_theta(&self, state: &mut ChainState, n: usize, rng: &mut Rng) -> Result<()> {
        let cache = self.build_cache(state)?;
        self.update_theta_cached(&cache, state, n, rng)
    }

    fn update_theta_cached(
        &self,
        cache: &StepCache,
        state: &mut ChainState,
        n: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let kt = self.k_theta;
        let m = self.cond_theta_mean(cache, state, n);
        let mut cur: Vec<f64> = (0..kt).map(|k| state.persons.theta[(n, k)]).collect();
        for k in 0..kt {
            let idx = n * kt + k;
            let sd = state.theta_proposal_sd[idx];
            if !(sd > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate proposal sd {sd} for theta[{},{}]",
                    n + 1,
                    k + 1
                )));
            }
            let delta = sd * rng.standard_normal();
            let mut delta_ll = 0.0;
            for &i in &self.person_dim_items[n][k] {
                let y = self.data.response(n, i).expect("indexed cell is observed");
                let qa = &self.qa_rows[i];
                let mut z = state.items.d[i];
                for a in 0..kt {
                    z += qa[a] * cur[a];
                }
                // Loaded items have qa[k] = 1, so the proposal shifts z by delta.
                delta_ll += bernoulli_log_mass(y, z + delta) - bernoulli_log_mass(y, z);
            }
            let quad_old = quad_form(&cache.v_theta_prec, &cur, &m);
            cur[k] += delta;
            let quad_new = quad_form(&cache.v_theta_prec, &cur, &m);
            let log_alpha = delta_ll - 0.5 * (quad_new - quad_old);
            let accepted = rng.uniform().ln() < log_alpha;
            if accepted {
                state.persons.theta[(n, k)] = cur[k];
            } else {
                cur[k] -= delta;
            }
            state.theta_counters.record(idx, accepted);
        }
        Ok(())
    }

    /// Conditional prior of `theta_n` given `tau_n` (the Metropolis target
    /// with the likelihood removed).
    pub fn theta_conditional_prior(
        &self,
        state: &ChainState,
        n: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let cache = self.build_cache(state)?;
        let mean = self.cond_theta_mean(&cache, state, n);
        let cov = spd_inverse(&cache.v_theta_prec)?;
        Ok((mean, cov))
    }

    /// Random-walk Metropolis update of `d_i` against the Bernoulli
    /// likelihood of item `i` and the conditional prior of `d_i` given
    /// `xi_i`. One standard normal and one uniform consumed.
    pub fn update_d(&self, state: &mut ChainState, i: usize, rng: &mut Rng) -> Result<()> {
        let cache = self.build_cache(state)?;
        self.update_d_cached(&cache, state, i, rng)
    }

    fn update_d_cached(
        &self,
        cache: &StepCache,
        state: &mut ChainState,
        i: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let sd = state.d_proposal_sd[i];
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "degenerate proposal sd {sd} for d[{}]",
                i + 1
            )));
        }
        let (m, v) = self.d_conditional_prior_cached(cache, state, i);
        let cur = state.items.d[i];
        let delta = sd * rng.standard_normal();
        let prop = cur + delta;
        let mut delta_ll = 0.0;
        let qa = &self.qa_rows[i];
        for &p in &self.item_resp_persons[i] {
            let y = self.data.response(p, i).expect("indexed cell is observed");
            let mut z = cur;
            for (a, q) in qa.iter().enumerate() {
                z += q * state.persons.theta[(p, a)];
            }
            delta_ll += bernoulli_log_mass(y, z + delta) - bernoulli_log_mass(y, z);
        }
        let log_alpha =
            delta_ll - 0.5 * ((prop - m).powi(2) - (cur - m).powi(2)) / v;
        let accepted = rng.uniform().ln() < log_alpha;
        if accepted {
            state.items.d[i] = prop;
        }
        state.d_counters.record(i, accepted);
        Ok(())
    }

    fn d_conditional_prior_cached(
        &self,
        cache: &StepCache,
        state: &ChainState,
        i: usize,
    ) -> (f64, f64) {
        let m = state.items.mu_d + cache.d_gain * (state.items.xi[i] - state.items.mu_xi);
        (m, cache.d_var)
    }

    /// Conditional prior of `d_i` given `xi_i` under the current hyper
    /// values.
    pub fn d_conditional_prior(&self, state: &ChainState, i: usize) -> Result<(f64, f64)> {
        let cache = self.build_cache(state)?;
        Ok(self.d_conditional_prior_cached(&cache, state, i))
    }

    /// Mean and variance of the `xi_i` full conditional: pseudo-observations
    /// `z_n = log T_ni + q_i' tau_n` around `xi_i` with precision
    /// `omega_i^2`, combined with the conditional prior of `xi_i` given
    /// `d_i`.
    pub fn xi_full_conditional(&self, state: &ChainState, i: usize) -> Result<(f64, f64)> {
        let cache = self.build_cache(state)?;
        Ok(self.xi_full_conditional_cached(&cache, state, i))
    }

    fn xi_full_conditional_cached(
        &self,
        cache: &StepCache,
        state: &ChainState,
        i: usize,
    ) -> (f64, f64) {
        let prior_mean = state.items.mu_xi + cache.xi_gain * (state.items.d[i] - state.items.mu_d);
        let prior_var = cache.xi_var;
        let w2 = state.items.omega[i] * state.items.omega[i];
        let qs = &self.qs_rows[i];
        let mut sum_z = 0.0;
        let obs = &self.item_rt_persons[i];
        for &p in obs {
            let mut z = self.log_rt(p, i);
            for (a, q) in qs.iter().enumerate() {
                z += q * state.persons.tau[(p, a)];
            }
            sum_z += z;
        }
        let precision = 1.0 / prior_var + obs.len() as f64 * w2;
        let mean = (prior_mean / prior_var + w2 * sum_z) / precision;
        (mean, 1.0 / precision)
    }

    /// Exact Gibbs draw of `xi_i`. One standard normal consumed.
    pub fn update_xi(&self, state: &mut ChainState, i: usize, rng: &mut Rng) -> Result<()> {
        let cache = self.build_cache(state)?;
        self.update_xi_cached(&cache, state, i, rng)
    }

    fn update_xi_cached(
        &self,
        cache: &StepCache,
        state: &mut ChainState,
        i: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let (mean, var) = self.xi_full_conditional_cached(cache, state, i);
        state.items.xi[i] = mean + var.sqrt() * rng.standard_normal();
        Ok(())
    }

    /// Shape and rate of the gamma full conditional of the residual
    /// precision `omega_i^2`.
    pub fn omega_full_conditional(&self, state: &ChainState, i: usize) -> (f64, f64) {
        let qs = &self.qs_rows[i];
        let obs = &self.item_rt_persons[i];
        let mut sse = 0.0;
        for &p in obs {
            let mut resid = self.log_rt(p, i) - state.items.xi[i];
            for (a, q) in qs.iter().enumerate() {
                resid += q * state.persons.tau[(p, a)];
            }
            sse += resid * resid;
        }
        (
            self.priors.omega_precision_shape + obs.len() as f64 / 2.0,
            self.priors.omega_precision_rate + sse / 2.0,
        )
    }

    /// Exact Gibbs draw of `omega_i` via its squared value.
    pub fn update_omega(&self, state: &mut ChainState, i: usize, rng: &mut Rng) -> Result<()> {
        let (shape, rate) = self.omega_full_conditional(state, i);
        let precision = gamma_sample(shape, rate, rng)?;
        state.items.omega[i] = precision.sqrt();
        Ok(())
    }

    /// Scale matrix and degrees of freedom of the inverse-Wishart full
    /// conditional of `sigma_person`.
    pub fn sigma_person_conditional(&self, state: &ChainState) -> (DMatrix<f64>, f64) {
        let ks = self.k_star();
        let n = self.n_persons();
        let mut scatter = DMatrix::zeros(ks, ks);
        let mut omega_n = DVector::zeros(ks);
        for p in 0..n {
            for k in 0..self.k_theta {
                omega_n[k] = state.persons.theta[(p, k)];
            }
            for k in 0..self.k_tau {
                omega_n[self.k_theta + k] = state.persons.tau[(p, k)];
            }
            for a in 0..ks {
                for b in 0..ks {
                    scatter[(a, b)] += omega_n[a] * omega_n[b];
                }
            }
        }
        invwishart_posterior(&self.r_person, self.df_person, &scatter, n)
    }

    /// Exact Gibbs draw of `sigma_person`.
    pub fn update_sigma_person(&self, state: &mut ChainState, rng: &mut Rng) -> Result<()> {
        let (scale, df) = self.sigma_person_conditional(state);
        state.persons.sigma_person = invwishart_sample(&scale, df, rng)?;
        Ok(())
    }

    /// Precision-form parameters of the normal full conditional of
    /// `(mu_d, mu_xi)`.
    pub fn mu_full_conditional(&self, state: &ChainState) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (precision, rhs) = self.mu_precision_rhs(state)?;
        let cov = spd_inverse(&precision)?;
        let mean = &cov * rhs;
        Ok((mean, cov))
    }

    fn mu_precision_rhs(&self, state: &ChainState) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let sigma_inv = spd_inverse(&state.items.sigma_item)?;
        let n_items = self.n_items() as f64;
        let prior_prec = DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0 / self.priors.mu_d_var,
            1.0 / self.priors.mu_xi_var,
        ]));
        let prior_mean = DVector::from_row_slice(&[self.priors.mu_d_mean, self.priors.mu_xi_mean]);
        let mut psi_sum = DVector::zeros(2);
        for i in 0..self.n_items() {
            psi_sum[0] += state.items.d[i];
            psi_sum[1] += state.items.xi[i];
        }
        let precision = &prior_prec + &sigma_inv * n_items;
        let rhs = prior_prec * prior_mean + sigma_inv * psi_sum;
        Ok((precision, rhs))
    }

    /// Scale matrix and degrees of freedom of the inverse-Wishart full
    /// conditional of `sigma_item`, at the current `(mu_d, mu_xi)`.
    pub fn sigma_item_conditional(&self, state: &ChainState) -> (DMatrix<f64>, f64) {
        let mut scatter = DMatrix::zeros(2, 2);
        for i in 0..self.n_items() {
            let dd = state.items.d[i] - state.items.mu_d;
            let dx = state.items.xi[i] - state.items.mu_xi;
            scatter[(0, 0)] += dd * dd;
            scatter[(0, 1)] += dd * dx;
            scatter[(1, 0)] += dd * dx;
            scatter[(1, 1)] += dx * dx;
        }
        invwishart_posterior(&self.r_item, self.priors.df_item, &scatter, self.n_items())
    }

    /// Exact Gibbs draws of `(mu_d, mu_xi)` and then `sigma_item`.
    pub fn update_item_hyper(&self, state: &mut ChainState, rng: &mut Rng) -> Result<()> {
        let (precision, rhs) = self.mu_precision_rhs(state)?;
        let mu = mvn_sample_precision(&precision, &rhs, rng)?;
        state.items.mu_d = mu[0];
        state.items.mu_xi = mu[1];
        let (scale, df) = self.sigma_item_conditional(state);
        state.items.sigma_item = invwishart_sample(&scale, df, rng)?;
        Ok(())
    }

    /// One full update cycle.
    pub fn step(&self, state: &mut ChainState, rng: &mut Rng) -> Result<()> {
        let cache = self.build_cache(state)?;
        for n in 0..self.n_persons() {
            self.update_tau_cached(&cache, state, n, rng)?;
        }
        for n in 0..self.n_persons() {
            self.update_theta_cached(&cache, state, n, rng)?;
        }
        for i in 0..self.n_items() {
            self.update_xi_cached(&cache, state, i, rng)?;
        }
        for i in 0..self.n_items() {
            self.update_d_cached(&cache, state, i, rng)?;
        }
        for i in 0..self.n_items() {
            self.update_omega(state, i, rng)?;
        }
        self.update_sigma_person(state, rng)?;
        self.update_item_hyper(state, rng)?;
        state.iteration += 1;
        Ok(())
    }

    /// Starting values: latents from `Normal(0, 0.5^2)`, intercepts at the
    /// clamped logit of the item proportion correct, time-intensities at the
    /// item mean of observed `log T`, `omega` at the reciprocal sd of item
    /// `log T` clamped to `[0.2, 10]`, covariances at identity, and hyper
    /// means at their prior means. Items with no observed cells fall back to
    /// prior means. Consumes `N x K_theta` then `N x K_tau` standard
    /// normals, row-major.
    pub fn initialize_state(&self, rng: &mut Rng, initial_proposal_sd: f64) -> ChainState {
        let n = self.n_persons();
        let n_items = self.n_items();
        let mut theta = DMatrix::zeros(n, self.k_theta);
        for p in 0..n {
            for k in 0..self.k_theta {
                theta[(p, k)] = 0.5 * rng.standard_normal();
            }
        }
        let mut tau = DMatrix::zeros(n, self.k_tau);
        for p in 0..n {
            for k in 0..self.k_tau {
                tau[(p, k)] = 0.5 * rng.standard_normal();
            }
        }
        let mut d = Vec::with_capacity(n_items);
        let mut xi = Vec::with_capacity(n_items);
        let mut omega = Vec::with_capacity(n_items);
        for i in 0..n_items {
            let persons = &self.item_resp_persons[i];
            if persons.is_empty() {
                d.push(self.priors.mu_d_mean);
            } else {
                let hits = persons
                    .iter()
                    .filter(|&&p| self.data.response(p, i) == Some(true))
                    .count() as f64;
                let prop = hits / persons.len() as f64;
                d.push((prop / (1.0 - prop)).ln().clamp(-4.0, 4.0));
            }
            let rts = &self.item_rt_persons[i];
            if rts.is_empty() {
                xi.push(self.priors.mu_xi_mean);
                omega.push(1.0);
            } else {
                let logs: Vec<f64> = rts.iter().map(|&p| self.log_rt(p, i)).collect();
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                xi.push(mean);
                if logs.len() < 2 {
                    omega.push(1.0);
                } else {
                    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                        / (logs.len() - 1) as f64;
                    omega.push((1.0 / var.sqrt()).clamp(0.2, 10.0));
                }
            }
        }
        ChainState {
            persons: PersonParams {
                theta,
                tau,
                sigma_person: DMatrix::identity(self.k_star(), self.k_star()),
            },
            items: ItemParams {
                d,
                xi,
                omega,
                mu_d: self.priors.mu_d_mean,
                mu_xi: self.priors.mu_xi_mean,
                sigma_item: DMatrix::identity(2, 2),
            },
            iteration: 0,
            theta_proposal_sd: vec![initial_proposal_sd; n * self.k_theta],
            d_proposal_sd: vec![initial_proposal_sd; n_items],
            theta_counters: MhCounters::new(n * self.k_theta),
            d_counters: MhCounters::new(n_items),
            adapt_batches: 0,
        }
    }

    /// Conditional joint deviance of the current state.
    pub fn deviance_at(&self, state: &ChainState) -> Result<f64> {
        model::deviance(
            &self.data,
            &state.persons,
            &state.items,
            &self.q_ability,
            &self.q_speed,
        )
    }

    /// Runs one chain on the stream `(config.seed, chain_index)` and returns
    /// its retained draws. Adaptation is applied every `adapt_window`
    /// iterations during burn-in and frozen afterwards; the deviance is
    /// recorded for every retained draw.
    pub fn run_chain(&self, config: &SamplerConfig, chain_index: usize) -> Result<ChainDraws> {
        config.validate()?;
        let mut rng = Rng::new(config.seed, chain_index as u64);
        let mut state = self.initialize_state(&mut rng, config.initial_proposal_sd);
        let layout = self.layout();
        let n_kept = config.n_kept();
        let mut values = Vec::with_capacity(n_kept * layout.n_params());
        let mut deviance = Vec::with_capacity(n_kept);
        for it in 1..=config.n_iterations {
            self.step(&mut state, &mut rng)?;
            if it <= config.n_burnin {
                if it.is_multiple_of(config.adapt_window) {
                    state.apply_adaptation(config.adapt_target);
                }
                if it == config.n_burnin {
                    state.reset_acceptance();
                }
            } else if (it - config.n_burnin).is_multiple_of(config.thin) {
                let dev = self.deviance_at(&state)?;
                if !dev.is_finite() {
                    let cell = model::find_nonfinite_cell(
                        &self.data,
                        &state.persons,
                        &state.items,
                        &self.q_ability,
                        &self.q_speed,
                    );
                    return Err(Error::Numerical(match cell {
                        Some((n, i)) => format!(
                            "non-finite likelihood at iteration {it}, person {}, item {}",
                            n + 1,
                            i + 1
                        ),
                        None => format!("non-finite deviance at iteration {it}"),
                    }));
                }
                layout.fill_row(&state, &mut values);
                deviance.push(dev);
            }
        }
        let (theta_mean, theta_min, theta_max) = rate_stats(&state.theta_counters.rates());
        let (d_mean, d_min, d_max) = rate_stats(&state.d_counters.rates());
        Ok(ChainDraws {
            values,
            deviance,
            n_kept,
            acceptance: AcceptanceSummary {
                theta_mean,
                theta_min,
                theta_max,
                d_mean,
                d_min,
                d_max,
            },
        })
    }

    /// Runs all configured chains (concurrently) and merges them in chain
    /// order.
    pub fn run_chains(&self, config: &SamplerConfig) -> Result<PosteriorDraws> {
        config.validate()?;
        let chains = (0..config.n_chains)
            .into_par_iter()
            .map(|c| self.run_chain(config, c))
            .collect::<Result<Vec<_>>>()?;
        PosteriorDraws::new(self.layout(), chains)
    }
}

/// Conjugate inverse-Wishart posterior update: prior scale plus scatter,
/// prior degrees of freedom plus observation count.
pub fn invwishart_posterior(
    prior_scale: &DMatrix<f64>,
    prior_df: f64,
    scatter: &DMatrix<f64>,
    n_obs: usize,
) -> (DMatrix<f64>, f64) {
    (prior_scale + scatter, prior_df + n_obs as f64)
}

#[inline]
fn quad_form(precision: &DMatrix<f64>, v: &[f64], mean: &DVector<f64>) -> f64 {
    let k = v.len();
    let mut s = 0.0;
    for a in 0..k {
        let da = v[a] - mean[a];
        for b in 0..k {
            s += da * precision[(a, b)] * (v[b] - mean[b]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dataset, SimDesign};
    use crate::stats::check_spd;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn empty_data(n: usize, i: usize) -> ObservedData {
        ObservedData::new(n, i, vec![None; n * i], vec![None; n * i]).unwrap()
    }

    fn default_model(data: &ObservedData, q: &QMatrix) -> JointModel {
        JointModel::new(data, q, ModelStructure::MaMs, PriorSpec::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig {
            n_burnin: 10,
            n_iterations: 10,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn initialization_matches_data_summaries() {
        // Item 1: half correct -> d = 0. Item 2: all correct -> clamp at 4.
        // Observed log RTs average 4.2 -> xi = 4.2.
        let t = 4.2f64.exp();
        let data = ObservedData::new(
            2,
            2,
            vec![Some(true), Some(true), Some(false), Some(true)],
            vec![Some(t), None, Some(t), None],
        )
        .unwrap();
        let q = QMatrix::balanced(2, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(1, 0);
        let state = model.initialize_state(&mut rng, 0.5);
        assert_eq!(state.items.d[0], 0.0);
        assert_eq!(state.items.d[1], 4.0);
        assert_abs_diff_eq!(state.items.xi[0], 4.2, epsilon = 1e-12);
        // Item 2 has no observed RTs: prior means.
        assert_eq!(state.items.xi[1], 4.3);
        assert_eq!(state.items.omega[1], 1.0);
    }

    #[test]
    fn tau_update_without_rts_is_a_conditional_prior_draw() {
        let data = empty_data(1, 4);
        let q = QMatrix::balanced(4, 2).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(7, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.persons.sigma_person = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, -0.2, -0.1, 0.5, 1.0, -0.1, -0.2, -0.2, -0.1, 0.4, 0.2, -0.1, -0.2,
                0.2, 0.4,
            ],
        );
        let mut rng_a = Rng::new(9, 9);
        let mut rng_b = rng_a.clone();
        let cache = model.build_cache(&state).unwrap();
        let m0 = model.cond_tau_mean(&cache, &state, 0);
        let expected = mvn_sample(&m0, &cache.v_tau, &mut rng_b).unwrap();
        model.update_tau(&mut state, 0, &mut rng_a).unwrap();
        assert_eq!(state.persons.tau[(0, 0)], expected[0]);
        assert_eq!(state.persons.tau[(0, 1)], expected[1]);
    }

    #[test]
    fn tau_conditional_concentrates_at_high_precision() {
        // One item, K_tau = 1, omega = 100: the posterior mean lands within
        // 0.01 of xi - log T.
        let t: f64 = 60.0;
        let data = ObservedData::new(1, 1, vec![None], vec![Some(t)]).unwrap();
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(3, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.items.xi[0] = 4.5;
        state.items.omega[0] = 100.0;
        let (mean, _) = model.tau_full_conditional(&state, 0).unwrap();
        assert_abs_diff_eq!(mean[0], 4.5 - t.ln(), epsilon = 0.01);
    }

    #[test]
    fn xi_conditional_flat_prior_limit() {
        // With a near-flat conditional prior the posterior mean approaches
        // the average pseudo-observation.
        let data = ObservedData::new(
            2,
            1,
            vec![None, None],
            vec![Some(50.0), Some(90.0)],
        )
        .unwrap();
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(4, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        // sigma_item with a huge xi variance stands in for v -> infinity.
        state.items.sigma_item = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e6]);
        state.persons.tau[(0, 0)] = 0.3;
        state.persons.tau[(1, 0)] = -0.1;
        let z_mean = ((50.0f64.ln() + 0.3) + (90.0f64.ln() - 0.1)) / 2.0;
        let (mean, _) = model.xi_full_conditional(&state, 0).unwrap();
        assert_abs_diff_eq!(mean, z_mean, epsilon = 0.01);
    }

    #[test]
    fn xi_update_without_rts_uses_conditional_prior() {
        let data = empty_data(1, 1);
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(5, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.items.sigma_item = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.9]);
        state.items.d[0] = 1.2;
        state.items.mu_d = 0.5;
        state.items.mu_xi = 4.0;
        let (mean, var) = model.xi_full_conditional(&state, 0).unwrap();
        let expected_mean = 4.0 + 0.4 / 1.0 * (1.2 - 0.5);
        let expected_var = 0.9 - 0.4 * 0.4 / 1.0;
        assert_abs_diff_eq!(mean, expected_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(var, expected_var, epsilon = 1e-12);
    }

    #[test]
    fn omega_conditional_arithmetic() {
        // No observations: the prior gamma(1, 1). Two exact-fit observations:
        // gamma(2, 1), mean precision 2.
        let data = empty_data(1, 1);
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(6, 0);
        let state = model.initialize_state(&mut rng, 0.5);
        assert_eq!(model.omega_full_conditional(&state, 0), (1.0, 1.0));

        let t = 4.0f64.exp();
        let data = ObservedData::new(2, 1, vec![None, None], vec![Some(t), Some(t)]).unwrap();
        let model = default_model(&data, &q);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.items.xi[0] = 4.0;
        state.persons.tau[(0, 0)] = 0.0;
        state.persons.tau[(1, 0)] = 0.0;
        let (shape, rate) = model.omega_full_conditional(&state, 0);
        assert_abs_diff_eq!(shape, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rate, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_person_prior_draw_when_no_persons() {
        let data = empty_data(0, 2);
        let q = QMatrix::balanced(2, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(8, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        let (scale, df) = model.sigma_person_conditional(&state);
        assert_eq!(scale, DMatrix::identity(2, 2));
        assert_eq!(df, 2.0);
        let mut rng_a = Rng::new(11, 0);
        let mut rng_b = rng_a.clone();
        model.update_sigma_person(&mut state, &mut rng_a).unwrap();
        let expected = invwishart_sample(&scale, df, &mut rng_b).unwrap();
        assert_eq!(state.persons.sigma_person, expected);
    }

    #[test]
    fn sigma_person_posterior_tracks_empirical_scatter() {
        // With many persons the posterior mean of sigma_person approaches
        // the empirical covariance of the latents.
        let design = SimDesign {
            n_persons: 10_000,
            ..SimDesign::default()
        };
        let mut rng = Rng::new(12, 0);
        let ds = simulate_dataset(&design, &mut rng).unwrap();
        let model = default_model(&ds.data, &design.q);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.persons.theta = ds.persons.theta.clone();
        state.persons.tau = ds.persons.tau.clone();
        let n = design.n_persons as f64;
        let (scale, df) = model.sigma_person_conditional(&state);
        let ks = model.k_star();
        let posterior_mean = &scale / (df - ks as f64 - 1.0);
        // Empirical second-moment matrix (means are zero by construction).
        let mut emp = DMatrix::zeros(ks, ks);
        for p in 0..design.n_persons {
            let v: Vec<f64> = (0..2)
                .map(|k| ds.persons.theta[(p, k)])
                .chain((0..2).map(|k| ds.persons.tau[(p, k)]))
                .collect();
            for a in 0..ks {
                for b in 0..ks {
                    emp[(a, b)] += v[a] * v[b] / n;
                }
            }
        }
        let diff = (&posterior_mean - &emp).norm() / emp.norm();
        assert!(diff < 0.05, "relative Frobenius distance {diff}");
    }

    #[test]
    fn item_hyper_concentrates_on_item_averages() {
        let n_items = 10_000;
        let q = QMatrix::balanced(n_items, 2).unwrap();
        let data = empty_data(1, n_items);
        let model = default_model(&data, &q);
        let mut rng = Rng::new(13, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        for i in 0..n_items {
            state.items.d[i] = -1.2 + 0.001 * (i % 7) as f64;
            state.items.xi[i] = 4.6 - 0.001 * (i % 5) as f64;
        }
        let d_bar = state.items.d.iter().sum::<f64>() / n_items as f64;
        let xi_bar = state.items.xi.iter().sum::<f64>() / n_items as f64;
        let (mean, _) = model.mu_full_conditional(&state).unwrap();
        assert_abs_diff_eq!(mean[0], d_bar, epsilon = 0.02);
        assert_abs_diff_eq!(mean[1], xi_bar, epsilon = 0.02);
    }

    #[test]
    fn d_update_recovers_truth_at_large_n() {
        // 2000 persons answering one item generated at d = 0, abilities held
        // at their true values: the posterior mean of d lands within 0.15.
        let n = 2000;
        let mut rng = Rng::new(14, 0);
        let mut responses = Vec::with_capacity(n);
        let mut thetas = Vec::with_capacity(n);
        for _ in 0..n {
            let theta = rng.standard_normal();
            let p = crate::model::ra_success_prob(&[theta], &[1.0], 0.0).unwrap();
            responses.push(Some(rng.uniform() < p));
            thetas.push(theta);
        }
        let data = ObservedData::new(n, 1, responses, vec![None; n]).unwrap();
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut state = model.initialize_state(&mut rng, 0.5);
        for (p, theta) in thetas.iter().enumerate() {
            state.persons.theta[(p, 0)] = *theta;
        }
        // Burn-in with adaptation, then average kept draws.
        for it in 1..=1000 {
            model.update_d(&mut state, 0, &mut rng).unwrap();
            if it % 50 == 0 {
                state.apply_adaptation(0.44);
            }
        }
        let mut sum = 0.0;
        let kept = 4000;
        for _ in 0..kept {
            model.update_d(&mut state, 0, &mut rng).unwrap();
            sum += state.items.d[0];
        }
        assert_abs_diff_eq!(sum / kept as f64, 0.0, epsilon = 0.15);
    }

    #[test]
    fn zero_proposal_sd_is_rejected() {
        let data = empty_data(1, 1);
        let q = QMatrix::balanced(1, 1).unwrap();
        let model = default_model(&data, &q);
        let mut rng = Rng::new(15, 0);
        let mut state = model.initialize_state(&mut rng, 0.5);
        state.theta_proposal_sd[0] = 0.0;
        assert!(model.update_theta(&mut state, 0, &mut rng).is_err());
        state.d_proposal_sd[0] = 0.0;
        assert!(model.update_d(&mut state, 0, &mut rng).is_err());
    }

    fn small_fit() -> (SimDesign, SamplerConfig) {
        let design = SimDesign {
            n_persons: 40,
            q: QMatrix::balanced(8, 2).unwrap(),
            missing_rate: 0.1,
            ..SimDesign::default()
        };
        let config = SamplerConfig {
            n_iterations: 120,
            n_burnin: 60,
            thin: 2,
            seed: 99,
            ..SamplerConfig::default()
        };
        (design, config)
    }

    #[test]
    fn retained_draw_count_and_determinism() {
        let (design, config) = small_fit();
        let mut rng = Rng::new(16, 0);
        let ds = simulate_dataset(&design, &mut rng).unwrap();
        let model = default_model(&ds.data, &design.q);
        let draws_a = model.run_chains(&config).unwrap();
        let draws_b = model.run_chains(&config).unwrap();
        assert_eq!(draws_a.n_kept(0), (120 - 60) / 2);
        for c in 0..2 {
            assert_eq!(draws_a.chains()[c].values, draws_b.chains()[c].values);
            assert_eq!(draws_a.chains()[c].deviance, draws_b.chains()[c].deviance);
        }
        // Chains with different indexes differ only through their stream.
        assert_ne!(draws_a.chains()[0].values, draws_a.chains()[1].values);
        let chain1_again = model.run_chain(&config, 1).unwrap();
        assert_eq!(chain1_again.values, draws_a.chains()[1].values);
    }

    #[test]
    fn state_invariants_hold_across_iterations() {
        let design = SimDesign {
            n_persons: 30,
            q: QMatrix::balanced(6, 2).unwrap(),
            missing_rate: 0.25,
            ..SimDesign::default()
        };
        let mut rng = Rng::new(17, 0);
        let ds = simulate_dataset(&design, &mut rng).unwrap();
        let model = default_model(&ds.data, &design.q);
        let mut chain_rng = Rng::new(18, 0);
        let mut state = model.initialize_state(&mut chain_rng, 0.5);
        for it in 1..=1000 {
            model.step(&mut state, &mut chain_rng).unwrap();
            state.validate().unwrap();
            check_spd(&state.persons.sigma_person, "sigma_person").unwrap();
            check_spd(&state.items.sigma_item, "sigma_item").unwrap();
            assert!(state.items.omega.iter().all(|w| *w > 0.0), "iteration {it}");
        }
    }

    #[test]
    fn layout_roundtrip() {
        let (design, config) = small_fit();
        let mut rng = Rng::new(19, 0);
        let ds = simulate_dataset(&design, &mut rng).unwrap();
        let model = default_model(&ds.data, &design.q);
        let draws = model.run_chains(&config).unwrap();
        let layout = draws.layout();
        assert_eq!(layout.names().len(), layout.n_params());
        let (persons, items) = draws.extract_state(0, 3);
        assert_eq!(persons.theta[(5, 1)], draws.value(0, 3, layout.theta_col(5, 1)));
        assert_eq!(items.xi[2], draws.value(0, 3, layout.xi_col(2)));
        assert_eq!(
            persons.sigma_person[(2, 1)],
            draws.value(0, 3, layout.sigma_person_col(1, 2))
        );
        persons.validate().unwrap();
        items.validate().unwrap();
    }
}
