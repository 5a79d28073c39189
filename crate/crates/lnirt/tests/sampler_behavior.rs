//! Sampler behavior on the default desk-scale design that is too slow for a
//! unit test: post-adaptation Metropolis acceptance rates.

use lnirt::sampler::{JointModel, PriorSpec, SamplerConfig};
use lnirt::sim::{simulate_dataset, SimDesign};
use lnirt::stats::Rng;

#[test]
fn desk_scale_acceptance_rates_land_near_target() {
    let design = SimDesign::default();
    let mut rng = Rng::new(800, 1);
    let ds = simulate_dataset(&design, &mut rng).unwrap();
    let model =
        JointModel::new(&ds.data, &design.q, design.structure, PriorSpec::default()).unwrap();
    let config = SamplerConfig {
        n_iterations: 1500,
        n_burnin: 750,
        seed: 801,
        ..SamplerConfig::default()
    };
    let draws = model.run_chains(&config).unwrap();
    for (c, chain) in draws.chains().iter().enumerate() {
        let acc = &chain.acceptance;
        for (label, value) in [
            ("theta min", acc.theta_min),
            ("theta max", acc.theta_max),
            ("d min", acc.d_min),
            ("d max", acc.d_max),
        ] {
            assert!(
                (0.2..=0.6).contains(&value),
                "chain {c}: {label} acceptance {value} outside [0.2, 0.6]"
            );
        }
        // The adapted rates concentrate near the 0.44 target.
        assert!((acc.theta_mean - 0.44).abs() < 0.08, "theta mean {}", acc.theta_mean);
        assert!((acc.d_mean - 0.44).abs() < 0.08, "d mean {}", acc.d_mean);
    }
}
