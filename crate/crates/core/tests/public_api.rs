use npglm::dp::{sample_stick_weights, stick_weights};
use npglm::random::sample_polya_gamma;
use npglm::simulation::{evaluate, generate_dataset, generate_truth, Scenario};
use npglm::summary::{equal_tailed_interval, hpd_interval};
use npglm::{
    build_dataset, cluster_summary, run_chain, ChainConfig, Covariate, DatasetSchema,
    FunctionalMode, InterceptMode, ModelSpec, RawRow, RngStream,
};
use proptest::prelude::*;

fn rows(n: usize) -> Vec<RawRow> {
    (0..n)
        .map(|i| RawRow {
            y: (i % 3 == 0) as u8 as f64,
            group: i % 4 + 1,
            age: (i % 5 + 20) as f64,
            level: i % 2,
            covariates: vec![(i % 3) as f64, i as f64 / 10.0],
        })
        .collect()
}

fn schema() -> DatasetSchema {
    DatasetSchema {
        covariates: vec![Covariate::factor("edu", &["mid", "high"]), Covariate::numeric("w")],
        num_levels: 2,
        num_groups: None,
    }
}

#[test]
fn raw_rows_round_trip() {
    let r = rows(40);
    let data = build_dataset(&r, &schema()).unwrap();
    assert_eq!(data.to_raw_rows(), r);
    assert_eq!(data.num_groups(), 4);
    assert_eq!(data.column_names(), ["mid", "high", "w"]);
}

#[test]
fn short_chain_end_to_end() {
    let truth = generate_truth(Scenario::Two, 9).unwrap();
    let data = generate_dataset(&truth).unwrap();
    let config = ChainConfig { iterations: 40, burn_in: 10, thin: 3, seed: 9 };
    let draws = run_chain(&data, &ModelSpec::for_dataset(&data), &config).unwrap();
    assert_eq!(draws.len(), 10);
    assert_eq!(draws.iterations.first(), Some(&10));
    let metrics = evaluate(&draws, &truth).unwrap();
    assert_eq!(metrics.curves.len(), 3);
    let clusters = cluster_summary(&draws).unwrap();
    for g in 0..33 {
        assert_eq!(clusters.coclustering[g][g], 1.0);
    }
}

#[test]
fn gaussian_intercepts_reject_cluster_summary() {
    let data = build_dataset(&rows(40), &schema()).unwrap();
    let mut spec = ModelSpec::for_dataset(&data);
    spec.intercepts = InterceptMode::Gaussian;
    spec.functional = FunctionalMode::Parabolic;
    let config = ChainConfig { iterations: 30, burn_in: 5, thin: 1, seed: 2 };
    let draws = run_chain(&data, &spec, &config).unwrap();
    assert!(cluster_summary(&draws).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polya_gamma_draws_are_positive(c in -50.0f64..50.0, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0).rng();
        for _ in 0..20 {
            let w = sample_polya_gamma(c, &mut rng);
            prop_assert!(w.is_finite() && w > 0.0);
        }
    }

    #[test]
    fn sampled_sticks_give_a_distribution(
        assignments in prop::collection::vec(0usize..6, 1..40),
        alpha in 0.05f64..20.0,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 1).rng();
        let sticks = sample_stick_weights(&assignments, alpha, 6, &mut rng).unwrap();
        prop_assert_eq!(sticks[5], 1.0);
        let w = stick_weights(&sticks).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn hpd_never_wider_than_equal_tailed(
        samples in prop::collection::vec(-1e3f64..1e3, 20..300),
        mass in 0.5f64..0.99,
    ) {
        let (lo, hi) = hpd_interval(&samples, mass).unwrap();
        let (elo, ehi) = equal_tailed_interval(&samples, mass).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!(hi - lo <= ehi - elo + 1e-9);
        let inside = samples.iter().filter(|&&x| x >= lo && x <= hi).count();
        prop_assert!(inside as f64 >= mass * samples.len() as f64);
    }
}
