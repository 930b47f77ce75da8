use std::path::PathBuf;

use gweat::spec_file::write_spec;
use gweat::synthetic::{generate, PlantedBiasParams};
use gweat::{
    read_store, render_report, run_suite, write_store, Experiment, Granularity, PermutationPlan,
    ReportFormat, RunConfig,
};

fn fixture(dir: &std::path::Path, params: &PlantedBiasParams) -> (PathBuf, PathBuf) {
    let (spec, store) = generate(params).unwrap();
    let spec_path = dir.join(format!("spec-{}.json", params.seed));
    let store_path = dir.join(format!("store-{}.gweb", params.seed));
    write_spec(&spec, &spec_path).unwrap();
    write_store(&store, &store_path).unwrap();
    (spec_path, store_path)
}

#[test]
fn one_spec_three_experiments_three_granularities() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, store) = fixture(dir.path(), &PlantedBiasParams::default());
    let config = RunConfig {
        specs: vec![spec],
        stores: Granularity::ALL.iter().map(|&g| (g, store.clone())).collect(),
        ..Default::default()
    };
    let outcome = run_suite(&config).unwrap();
    assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
    let cells: Vec<(Experiment, Granularity)> = outcome
        .results
        .iter()
        .map(|r| (r.experiment, r.granularity))
        .collect();
    let expected: Vec<_> = [Experiment::E1, Experiment::E2, Experiment::E3]
        .iter()
        .flat_map(|&e| Granularity::ALL.map(|g| (e, g)))
        .collect();
    assert_eq!(cells, expected);
    assert_eq!(outcome.exit_code(), 0);
}

#[test]
fn missing_store_keeps_other_granularities() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, store) = fixture(dir.path(), &PlantedBiasParams::default());
    let mut config = RunConfig {
        specs: vec![spec],
        experiments: vec![Experiment::E1],
        ..Default::default()
    };
    config.stores.insert(Granularity::W, store.clone());
    config.stores.insert(Granularity::S, store);
    config.stores.insert(Granularity::C, dir.path().join("absent.gweb"));
    let outcome = run_suite(&config).unwrap();
    let granularities: Vec<_> = outcome.results.iter().map(|r| r.granularity).collect();
    assert_eq!(granularities, [Granularity::W, Granularity::S]);
    assert_eq!(outcome.errors.len(), 1);
    assert_eq!(outcome.errors[0].granularity, Some(Granularity::C));
    assert_eq!(outcome.exit_code(), 2);
    let table = render_report(&outcome, ReportFormat::Table);
    assert!(table.contains("errors:") && table.contains("granularity=C"));
}

#[test]
fn store_missing_keys_is_a_cell_error() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, _) = fixture(dir.path(), &PlantedBiasParams::default());
    let (_, other) = fixture(
        dir.path(),
        &PlantedBiasParams {
            n_targets_per_set: 3,
            seed: 9,
            ..Default::default()
        },
    );
    let config = RunConfig {
        specs: vec![spec],
        stores: [(Granularity::W, other)].into(),
        experiments: vec![Experiment::E2],
        ..Default::default()
    };
    let outcome = run_suite(&config).unwrap();
    assert!(outcome.results.is_empty());
    assert_eq!(outcome.errors.len(), 1);
    assert!(outcome.errors[0].message.contains("tx003"), "{}", outcome.errors[0].message);
}

#[test]
fn monte_carlo_results_record_their_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, store) = fixture(
        dir.path(),
        &PlantedBiasParams {
            n_targets_per_set: 12,
            association_strength: 1.0,
            ..Default::default()
        },
    );
    let mut plan = PermutationPlan::default().with_seed(17);
    plan.n_samples = 999;
    let config = RunConfig {
        specs: vec![spec],
        stores: [(Granularity::S, store.clone())].into(),
        experiments: vec![Experiment::E1],
        plan,
        ..Default::default()
    };
    let outcome = run_suite(&config).unwrap();
    let r = &outcome.results[0];
    assert_eq!(r.seed, Some(17));
    assert_eq!(r.n_permutations, 999);
    assert!(r.p_value >= 1.0 / 1000.0);
    assert!(read_store(&store).unwrap().metadata_value("seed").is_some());
}

#[test]
fn invalid_config_is_rejected_up_front() {
    let config = RunConfig::default();
    assert!(run_suite(&config).is_err());
}
