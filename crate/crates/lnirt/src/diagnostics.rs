//! Convergence assessment, posterior predictive checks, information
//! criteria, and posterior summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ra_success_prob, ItemParams, ObservedData, PersonParams};
use crate::sampler::{AcceptanceSummary, JointModel, PosteriorDraws};
use crate::stats::Rng;

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Potential scale reduction factor of one scalar parameter.
///
/// With `W` the mean within-chain sample variance and `B/L` the sample
/// variance of the chain means, returns
/// `sqrt( ((L-1)/L * W + B/L) / W )`. A `W` of exactly zero yields infinity
/// when the chains disagree and 1 by convention when they are identical.
pub fn psrf(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument(
            "PSRF needs at least two chains".into(),
        ));
    }
    let len = chains[0].len();
    if len < 2 {
        return Err(Error::InvalidArgument(
            "PSRF needs at least two draws per chain".into(),
        ));
    }
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::DimensionMismatch(
            "PSRF chains must have equal lengths".into(),
        ));
    }
    let l = len as f64;
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / l)
        .collect();
    let var_means = sample_variance(&means);
    if w == 0.0 {
        return Ok(if var_means > 0.0 { f64::INFINITY } else { 1.0 });
    }
    Ok((((l - 1.0) / l * w + var_means) / w).sqrt())
}

/// PSRF of every stored parameter, in layout order. Requires at least two
/// chains of equal length.
pub fn psrf_all(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    let n_chains = draws.n_chains();
    if n_chains < 2 {
        return Err(Error::InvalidArgument(
            "PSRF needs at least two chains".into(),
        ));
    }
    let mut out = Vec::with_capacity(draws.n_params());
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_chains);
    for col in 0..draws.n_params() {
        columns.clear();
        for c in 0..n_chains {
            columns.push(draws.column(c, col));
        }
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        out.push(psrf(&refs)?);
    }
    Ok(out)
}

/// Sum of squared Pearson residuals of the responses over non-missing cells.
pub fn ra_discrepancy(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_ability: &DMatrix<f64>,
) -> Result<f64> {
    let kt = persons.k_theta();
    let mut theta_row = vec![0.0; kt];
    let mut q_row = vec![0.0; kt];
    let mut total = 0.0;
    for n in 0..data.n_persons() {
        for (k, v) in theta_row.iter_mut().enumerate() {
            *v = persons.theta[(n, k)];
        }
        for i in 0..data.n_items() {
            if let Some(y) = data.response(n, i) {
                for k in 0..kt {
                    q_row[k] = q_ability[(i, k)];
                }
                let p = ra_success_prob(&theta_row, &q_row, items.d[i])?;
                let r = (if y { 1.0 } else { 0.0 } - p) / (p * (1.0 - p)).sqrt();
                total += r * r;
            }
        }
    }
    Ok(total)
}

/// Sum of squared standardized log-RT errors,
/// `(omega_i (log T_ni - (xi_i - q_i' tau_n)))^2`, over non-missing cells.
pub fn rt_discrepancy(
    data: &ObservedData,
    persons: &PersonParams,
    items: &ItemParams,
    q_speed: &DMatrix<f64>,
) -> Result<f64> {
    let ku = persons.k_tau();
    let mut total = 0.0;
    for n in 0..data.n_persons() {
        for i in 0..data.n_items() {
            if let Some(t) = data.rt(n, i) {
                let mut mean = items.xi[i];
                for k in 0..ku {
                    mean -= q_speed[(i, k)] * persons.tau[(n, k)];
                }
                let r = items.omega[i] * (t.ln() - mean);
                total += r * r;
            }
        }
    }
    Ok(total)
}

/// Fraction of draws whose replicated discrepancy meets or exceeds the
/// realized one (ties count toward the numerator).
pub fn ppp_fraction(realized: &[f64], replicated: &[f64]) -> f64 {
    debug_assert_eq!(realized.len(), replicated.len());
    let hits = realized
        .iter()
        .zip(replicated)
        .filter(|(obs, rep)| rep >= obs)
        .count();
    hits as f64 / realized.len() as f64
}

fn selected_draws(draws: &PosteriorDraws, thin: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for c in 0..draws.n_chains() {
        for j in (0..draws.n_kept(c)).step_by(thin) {
            out.push((c, j));
        }
    }
    out
}

/// Posterior predictive p-value for the response model.
///
/// Every `thin`-th retained draw contributes one comparison: the realized
/// Pearson-residual discrepancy of the observed responses against the same
/// discrepancy on a response matrix replicated at that draw (one uniform per
/// observed response cell, person-major).
pub fn ppmc_ra(
    draws: &PosteriorDraws,
    data: &ObservedData,
    q_ability: &DMatrix<f64>,
    rng: &mut Rng,
    thin: usize,
) -> Result<f64> {
    if thin == 0 {
        return Err(Error::InvalidArgument("ppmc thin must be at least 1".into()));
    }
    let mut realized = Vec::new();
    let mut replicated = Vec::new();
    for (c, j) in selected_draws(draws, thin) {
        let (persons, items) = draws.extract_state(c, j);
        realized.push(ra_discrepancy(data, &persons, &items, q_ability)?);
        let kt = persons.k_theta();
        let mut theta_row = vec![0.0; kt];
        let mut q_row = vec![0.0; kt];
        let mut rep = 0.0;
        for n in 0..data.n_persons() {
            for (k, v) in theta_row.iter_mut().enumerate() {
                *v = persons.theta[(n, k)];
            }
            for i in 0..data.n_items() {
                if data.response(n, i).is_some() {
                    for k in 0..kt {
                        q_row[k] = q_ability[(i, k)];
                    }
                    let p = ra_success_prob(&theta_row, &q_row, items.d[i])?;
                    let y_rep = if rng.uniform() < p { 1.0 } else { 0.0 };
                    let r = (y_rep - p) / (p * (1.0 - p)).sqrt();
                    rep += r * r;
                }
            }
        }
        replicated.push(rep);
    }
    if realized.is_empty() {
        return Err(Error::InvalidArgument("no draws selected for PPMC".into()));
    }
    Ok(ppp_fraction(&realized, &replicated))
}

/// Posterior predictive p-value for the RT model, with the standardized
/// log-RT error discrepancy and replicated log RTs (one standard normal per
/// observed RT cell, person-major).
pub fn ppmc_rt(
    draws: &PosteriorDraws,
    data: &ObservedData,
    q_speed: &DMatrix<f64>,
    rng: &mut Rng,
    thin: usize,
) -> Result<f64> {
    if thin == 0 {
        return Err(Error::InvalidArgument("ppmc thin must be at least 1".into()));
    }
    let mut realized = Vec::new();
    let mut replicated = Vec::new();
    for (c, j) in selected_draws(draws, thin) {
        let (persons, items) = draws.extract_state(c, j);
        realized.push(rt_discrepancy(data, &persons, &items, q_speed)?);
        // The standardized replicate error is a plain standard normal.
        let mut rep = 0.0;
        for n in 0..data.n_persons() {
            for i in 0..data.n_items() {
                if data.rt(n, i).is_some() {
                    let z = rng.standard_normal();
                    rep += z * z;
                }
            }
        }
        replicated.push(rep);
    }
    if realized.is_empty() {
        return Err(Error::InvalidArgument("no draws selected for PPMC".into()));
    }
    Ok(ppp_fraction(&realized, &replicated))
}

/// Information criteria computed from retained deviances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfoCriteria {
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    pub d_bar: f64,
    pub p_e: f64,
    pub param_count: usize,
}

/// `AIC = D_bar + p`, `BIC = D_bar + (ln N - 1) p`, `DIC = D_bar + p_e` with
/// `p_e = var(D) / 2`, all from deviances pooled over chains.
pub fn information_criteria(
    draws: &PosteriorDraws,
    param_count: usize,
    n_persons: usize,
) -> Result<InfoCriteria> {
    let deviances = draws.pooled_deviance();
    information_criteria_from_deviances(&deviances, param_count, n_persons)
}

/// Same arithmetic on a raw deviance sequence.
pub fn information_criteria_from_deviances(
    deviances: &[f64],
    param_count: usize,
    n_persons: usize,
) -> Result<InfoCriteria> {
    if deviances.len() < 2 {
        return Err(Error::InvalidArgument(
            "information criteria need at least two retained deviances".into(),
        ));
    }
    let d_bar = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let p_e = sample_variance(deviances) / 2.0;
    let p = param_count as f64;
    Ok(InfoCriteria {
        aic: d_bar + p,
        bic: d_bar + ((n_persons as f64).ln() - 1.0) * p,
        dic: d_bar + p_e,
        d_bar,
        p_e,
        param_count,
    })
}

/// Default count of estimated parameters for AIC/BIC: `3I` item parameters,
/// the two hyper means, the 3 unique entries of `sigma_item`, and the
/// `K*(K*+1)/2` unique entries of `sigma_person`. Person latents are
/// excluded.
pub fn default_param_count(n_items: usize, k_star: usize) -> usize {
    3 * n_items + 2 + 3 + k_star * (k_star + 1) / 2
}

/// Posterior mean and standard deviation of one parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psrf: Option<f64>,
}

/// Pooled posterior mean and sample sd per parameter, in layout order.
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    let names = draws.layout().names();
    names
        .into_iter()
        .enumerate()
        .map(|(col, name)| {
            let pooled = draws.pooled_column(col);
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let sd = sample_variance(&pooled).sqrt();
            ParamSummary {
                name,
                mean,
                sd,
                psrf: None,
            }
        })
        .collect()
}

/// Everything a fit reports: per-parameter summaries, predictive checks,
/// and information criteria.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub structure: String,
    pub n_persons: usize,
    pub n_items: usize,
    pub n_chains: usize,
    pub n_kept_per_chain: usize,
    pub ppp_ra: f64,
    pub ppp_rt: f64,
    pub criteria: InfoCriteria,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_psrf: Option<f64>,
    pub acceptance: Vec<AcceptanceSummary>,
    pub parameters: Vec<ParamSummary>,
}

/// Assembles the full fit summary from retained draws. PSRF values are
/// attached when at least two chains were run; replicated datasets for the
/// predictive checks use every `ppmc_thin`-th retained draw and the supplied
/// rng.
pub fn compute_fit_summary(
    model: &JointModel,
    draws: &PosteriorDraws,
    param_count: usize,
    ppmc_thin: usize,
    rng: &mut Rng,
) -> Result<FitSummary> {
    let mut parameters = summarize(draws);
    let mut max_psrf = None;
    if draws.n_chains() >= 2 {
        let values = psrf_all(draws)?;
        let mut max = f64::NEG_INFINITY;
        for (summary, value) in parameters.iter_mut().zip(&values) {
            summary.psrf = Some(*value);
            max = max.max(*value);
        }
        max_psrf = Some(max);
    }
    let ppp_ra = ppmc_ra(draws, model.data(), model.q_ability(), rng, ppmc_thin)?;
    let ppp_rt = ppmc_rt(draws, model.data(), model.q_speed(), rng, ppmc_thin)?;
    let criteria = information_criteria(draws, param_count, model.n_persons())?;
    Ok(FitSummary {
        structure: model.structure().label().to_string(),
        n_persons: model.n_persons(),
        n_items: model.n_items(),
        n_chains: draws.n_chains(),
        n_kept_per_chain: draws.n_kept(0),
        ppp_ra,
        ppp_rt,
        criteria,
        max_psrf,
        acceptance: draws.chains().iter().map(|c| c.acceptance.clone()).collect(),
        parameters,
    })
}
