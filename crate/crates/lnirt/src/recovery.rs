//! Simulate -> fit -> summarize replication harness with bias, RMSE, and
//! true-vs-estimated correlations per parameter family.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::psrf_all;
use crate::error::{Error, Result};
use crate::sampler::{JointModel, PriorSpec, SamplerConfig};
use crate::sim::{simulate_dataset, SimDesign};
use crate::stats::Rng;

/// Replications whose maximum PSRF reaches this value are flagged as
/// non-convergent and excluded from the report.
pub const PSRF_EXCLUSION_THRESHOLD: f64 = 1.2;

/// Mean of `estimate - true_value` over replications.
pub fn bias(estimates: &[f64], true_value: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("bias of an empty sample".into()));
    }
    Ok(estimates.iter().map(|e| e - true_value).sum::<f64>() / estimates.len() as f64)
}

/// Root mean squared error against a fixed true value.
pub fn rmse(estimates: &[f64], true_value: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty sample".into()));
    }
    let mse = estimates
        .iter()
        .map(|e| (e - true_value).powi(2))
        .sum::<f64>()
        / estimates.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation between estimates and truths. Returns `None` when
/// either side has zero variance (for example a constant true `omega`),
/// mirroring an "NA" entry.
pub fn cor(estimates: &[f64], truths: &[f64]) -> Result<Option<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two pairs".into(),
        ));
    }
    let n = estimates.len() as f64;
    let me = estimates.iter().sum::<f64>() / n;
    let mt = truths.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        sxy += (e - me) * (t - mt);
        sxx += (e - me).powi(2);
        syy += (t - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx.sqrt() * syy.sqrt())))
}

/// Recovery statistics of one parameter family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyRecovery {
    pub family: String,
    /// Mean, over entities (items, persons, or entries), of the per-entity
    /// mean error across replications.
    pub bias: f64,
    /// Mean, over entities, of the absolute per-entity mean error.
    pub mean_abs_bias: f64,
    /// Mean, over entities, of the per-entity RMSE across replications.
    pub rmse: f64,
    /// Pearson correlation of (estimate, truth) pairs pooled over entities
    /// and replications; `None` when the truths are constant.
    pub cor: Option<f64>,
}

/// Convergence record of one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationDiag {
    pub replication: usize,
    pub max_psrf: f64,
    pub accepted: bool,
}

/// Output of [`run_replications`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub families: Vec<FamilyRecovery>,
    pub n_replications: usize,
    pub n_excluded: usize,
    pub replications: Vec<ReplicationDiag>,
    pub base_seed: u64,
}

impl RecoveryReport {
    pub fn family(&self, name: &str) -> Option<&FamilyRecovery> {
        self.families.iter().find(|f| f.family == name)
    }
}

/// (estimate, truth) pairs per entity of one family, one inner pair per
/// replication.
struct FamilyAccumulator {
    name: String,
    /// `pairs[entity]` collects (estimate, truth) across replications.
    pairs: Vec<Vec<(f64, f64)>>,
}

impl FamilyAccumulator {
    fn new(name: impl Into<String>, n_entities: usize) -> Self {
        Self {
            name: name.into(),
            pairs: vec![Vec::new(); n_entities],
        }
    }

    fn push(&mut self, entity: usize, estimate: f64, truth: f64) {
        self.pairs[entity].push((estimate, truth));
    }

    fn finish(self) -> Result<FamilyRecovery> {
        let mut entity_bias = Vec::with_capacity(self.pairs.len());
        let mut entity_rmse = Vec::with_capacity(self.pairs.len());
        let mut est_pool = Vec::new();
        let mut truth_pool = Vec::new();
        for entity in &self.pairs {
            if entity.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "family {} has an entity with no accepted replications",
                    self.name
                )));
            }
            let errs: Vec<f64> = entity.iter().map(|(e, t)| e - t).collect();
            entity_bias.push(errs.iter().sum::<f64>() / errs.len() as f64);
            entity_rmse
                .push((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt());
            for (e, t) in entity {
                est_pool.push(*e);
                truth_pool.push(*t);
            }
        }
        let n_entities = entity_bias.len() as f64;
        let correlation = if est_pool.len() >= 2 {
            cor(&est_pool, &truth_pool)?
        } else {
            None
        };
        Ok(FamilyRecovery {
            family: self.name,
            bias: entity_bias.iter().sum::<f64>() / n_entities,
            mean_abs_bias: entity_bias.iter().map(|b| b.abs()).sum::<f64>() / n_entities,
            rmse: entity_rmse.iter().sum::<f64>() / n_entities,
            cor: correlation,
        })
    }
}

struct ReplicationOutcome {
    diag: ReplicationDiag,
    /// Per family: (entity, estimate, truth) triples.
    contributions: Vec<Vec<(usize, f64, f64)>>,
}

/// Runs `n_replications` rounds of simulate -> fit -> posterior means and
/// aggregates recovery statistics per parameter family.
///
/// Replication `r` (1-based) simulates on the stream `(base_seed, r)` and
/// fits with the sampler seed `base_seed + r` (chains on streams `0..C` of
/// that seed), so reports are reproducible bit for bit. Replications run
/// concurrently and are merged in replication order. A replication whose
/// maximum PSRF reaches [`PSRF_EXCLUSION_THRESHOLD`] is excluded from the
/// statistics; the exclusion count and per-replication diagnostics are
/// reported. Requires at least two chains.
pub fn run_replications(
    design: &SimDesign,
    fit_config: &SamplerConfig,
    priors: &PriorSpec,
    n_replications: usize,
    base_seed: u64,
) -> Result<RecoveryReport> {
    design.validate()?;
    fit_config.validate()?;
    if n_replications == 0 {
        return Err(Error::InvalidArgument(
            "recovery needs at least one replication".into(),
        ));
    }
    if fit_config.n_chains < 2 {
        return Err(Error::InvalidConfig(
            "the recovery convergence gate needs at least two chains".into(),
        ));
    }

    let families = family_names(design);
    let outcomes = (1..=n_replications)
        .into_par_iter()
        .map(|r| run_one(design, fit_config, priors, base_seed, r, &families))
        .collect::<Result<Vec<_>>>()?;

    let mut accumulators: Vec<FamilyAccumulator> = families
        .iter()
        .map(|(name, n_entities)| FamilyAccumulator::new(name.clone(), *n_entities))
        .collect();
    let mut replications = Vec::with_capacity(n_replications);
    let mut n_excluded = 0usize;
    for outcome in outcomes {
        if outcome.diag.accepted {
            for (acc, contribs) in accumulators.iter_mut().zip(&outcome.contributions) {
                for (entity, est, truth) in contribs {
                    acc.push(*entity, *est, *truth);
                }
            }
        } else {
            n_excluded += 1;
        }
        replications.push(outcome.diag);
    }
    if n_excluded == n_replications {
        return Err(Error::Numerical(
            "every recovery replication failed the convergence gate".into(),
        ));
    }
    let families = accumulators
        .into_iter()
        .map(FamilyAccumulator::finish)
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryReport {
        families,
        n_replications,
        n_excluded,
        replications,
        base_seed,
    })
}

/// One row per family: d, xi, omega, theta/tau per dimension, the unique
/// entries of each covariance, and the two hyper means.
fn family_names(design: &SimDesign) -> Vec<(String, usize)> {
    let n_items = design.n_items();
    let n = design.n_persons;
    let kt = design.k_theta();
    let ku = design.k_tau();
    let ks = design.k_star();
    let mut out = vec![
        ("d".to_string(), n_items),
        ("xi".to_string(), n_items),
        ("omega".to_string(), n_items),
    ];
    for k in 0..kt {
        out.push((format!("theta{}", k + 1), n));
    }
    for k in 0..ku {
        out.push((format!("tau{}", k + 1), n));
    }
    out.push(("sigma_person".to_string(), ks * (ks + 1) / 2));
    out.push(("sigma_item".to_string(), 3));
    out.push(("mu_d".to_string(), 1));
    out.push(("mu_xi".to_string(), 1));
    out
}

fn run_one(
    design: &SimDesign,
    fit_config: &SamplerConfig,
    priors: &PriorSpec,
    base_seed: u64,
    replication: usize,
    families: &[(String, usize)],
) -> Result<ReplicationOutcome> {
    let mut sim_rng = Rng::new(base_seed, replication as u64);
    let ds = simulate_dataset(design, &mut sim_rng)?;
    let model = JointModel::new(&ds.data, &design.q, design.structure, priors.clone())?;
    let rep_config = SamplerConfig {
        seed: base_seed.wrapping_add(replication as u64),
        ..fit_config.clone()
    };
    let draws = model.run_chains(&rep_config)?;
    let psrfs = psrf_all(&draws)?;
    let max_psrf = psrfs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let accepted = max_psrf < PSRF_EXCLUSION_THRESHOLD;

    let mut contributions: Vec<Vec<(usize, f64, f64)>> =
        families.iter().map(|_| Vec::new()).collect();
    if accepted {
        let means = draws.posterior_means();
        let layout = draws.layout();
        let n_items = design.n_items();
        let n = design.n_persons;
        let kt = design.k_theta();
        let ku = design.k_tau();
        let ks = design.k_star();
        let mut fam = 0usize;
        for i in 0..n_items {
            contributions[fam].push((i, means[layout.d_col(i)], ds.items.d[i]));
        }
        fam += 1;
        for i in 0..n_items {
            contributions[fam].push((i, means[layout.xi_col(i)], ds.items.xi[i]));
        }
        fam += 1;
        for i in 0..n_items {
            contributions[fam].push((i, means[layout.omega_col(i)], ds.items.omega[i]));
        }
        fam += 1;
        for k in 0..kt {
            for p in 0..n {
                contributions[fam].push((p, means[layout.theta_col(p, k)], ds.persons.theta[(p, k)]));
            }
            fam += 1;
        }
        for k in 0..ku {
            for p in 0..n {
                contributions[fam].push((p, means[layout.tau_col(p, k)], ds.persons.tau[(p, k)]));
            }
            fam += 1;
        }
        let sigma_true = design.sigma_person.as_matrix();
        let mut entry = 0usize;
        for r in 0..ks {
            for c in r..ks {
                contributions[fam].push((
                    entry,
                    means[layout.sigma_person_col(r, c)],
                    sigma_true[(r, c)],
                ));
                entry += 1;
            }
        }
        fam += 1;
        let item_true = design.sigma_item.as_matrix();
        for (entry, (r, c)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            contributions[fam].push((entry, means[layout.sigma_item_col(r, c)], item_true[(r, c)]));
        }
        fam += 1;
        contributions[fam].push((0, means[layout.mu_d_col()], design.mu_d));
        fam += 1;
        contributions[fam].push((0, means[layout.mu_xi_col()], design.mu_xi));
    }
    Ok(ReplicationOutcome {
        diag: ReplicationDiag {
            replication,
            max_psrf,
            accepted,
        },
        contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelStructure, QMatrix};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn bias_cases() {
        assert_eq!(bias(&[1.0, 2.0, 3.0], 2.0).unwrap(), 0.0);
        assert_eq!(bias(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(bias(&[3.0, 3.0], 2.0).unwrap(), 1.0);
        assert!(bias(&[], 0.0).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_relative_eq!(
            rmse(&[1.0, 2.0, 3.0], 2.0).unwrap(),
            (2.0f64 / 3.0).sqrt(),
            epsilon = 1e-12
        );
        assert_eq!(rmse(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(rmse(&[3.0, 3.0], 2.0).unwrap(), 1.0);
        assert!(rmse(&[], 0.0).is_err());
    }

    #[test]
    fn cor_cases() {
        let truths = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(cor(&truths, &truths).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        let negated: Vec<f64> = truths.iter().map(|t| -t).collect();
        assert_relative_eq!(cor(&negated, &truths).unwrap().unwrap(), -1.0, epsilon = 1e-12);
        // Constant truths (a constant true omega): NA.
        assert_eq!(cor(&truths, &[2.0; 4]).unwrap(), None);
        assert!(cor(&truths, &[1.0]).is_err());
    }

    #[test]
    fn bias_and_rmse_translation_equivariance() {
        let estimates = [0.4, 1.9, -0.7, 2.2];
        let truth = 0.5;
        let shift = 13.25;
        let shifted: Vec<f64> = estimates.iter().map(|e| e + shift).collect();
        assert_relative_eq!(
            bias(&estimates, truth).unwrap(),
            bias(&shifted, truth + shift).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            rmse(&estimates, truth).unwrap(),
            rmse(&shifted, truth + shift).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rmse_squared_decomposition() {
        // rmse^2 = bias^2 + population variance of the estimates.
        let estimates = [1.3, 0.2, -0.9, 2.4, 1.1];
        let truth = 0.4;
        let b = bias(&estimates, truth).unwrap();
        let r = rmse(&estimates, truth).unwrap();
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(r * r, b * b + var, epsilon = 1e-12);
    }

    #[test]
    fn report_shape_and_reproducibility() {
        let design = SimDesign {
            n_persons: 50,
            q: QMatrix::balanced(8, 2).unwrap(),
            ..SimDesign::default()
        };
        let config = SamplerConfig {
            n_iterations: 2000,
            n_burnin: 1000,
            ..SamplerConfig::default()
        };
        let priors = PriorSpec::default();
        let report = run_replications(&design, &config, &priors, 2, 77).unwrap();
        // d, xi, omega, theta1, theta2, tau1, tau2, sigma_person, sigma_item,
        // mu_d, mu_xi.
        let expected: Vec<&str> = vec![
            "d",
            "xi",
            "omega",
            "theta1",
            "theta2",
            "tau1",
            "tau2",
            "sigma_person",
            "sigma_item",
            "mu_d",
            "mu_xi",
        ];
        let got: Vec<&str> = report.families.iter().map(|f| f.family.as_str()).collect();
        assert_eq!(got, expected);
        assert_eq!(report.replications.len(), 2);
        for family in &report.families {
            assert!(family.rmse >= family.bias.abs());
        }
        // omega truths are constant in the default design.
        assert_eq!(report.family("omega").unwrap().cor, None);

        let again = run_replications(&design, &config, &priors, 2, 77).unwrap();
        for (a, b) in report.families.iter().zip(&again.families) {
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert_eq!(a.rmse.to_bits(), b.rmse.to_bits());
        }
    }

    #[test]
    fn uaus_design_report_families() {
        let design = SimDesign {
            n_persons: 50,
            q: QMatrix::balanced(8, 2).unwrap(),
            structure: ModelStructure::UaUs,
            sigma_person: crate::sim::block_sigma_person(&[1.0], &[0.3], 0.0, 0.0, -0.3).unwrap(),
            ..SimDesign::default()
        };
        let config = SamplerConfig {
            n_iterations: 2000,
            n_burnin: 1000,
            ..SamplerConfig::default()
        };
        let report = run_replications(&design, &config, &PriorSpec::default(), 1, 5).unwrap();
        let got: Vec<&str> = report.families.iter().map(|f| f.family.as_str()).collect();
        assert!(got.contains(&"theta1"));
        assert!(!got.contains(&"theta2"));
        assert!(got.contains(&"tau1"));
    }
}
