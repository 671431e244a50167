use std::fs;

use condgpc::experiment::{
    compare_strategies, prepare, preset, run_pipeline, ExperimentConfig, Stage, Strategy,
};
use condgpc::forward::ForwardModel;
use condgpc::Error;

fn smoke() -> ExperimentConfig {
    preset("1d-smoke").unwrap()
}

#[test]
fn constant_conductivity_is_recovered_exactly() {
    let c = ExperimentConfig {
        sigma_k: 0.0,
        ..smoke()
    };
    let r = run_pipeline(&c, None).unwrap();
    assert_eq!(r.linf, 0.0);
    assert_eq!(r.l2, 0.0);
}

#[test]
fn repeated_strategy_gives_identical_columns() {
    let c = smoke();
    let cmp =
        compare_strategies(&c, &[Strategy::Variance, Strategy::Variance], &[3], None).unwrap();
    assert_eq!(cmp.rows.len(), 2);
    assert_eq!(cmp.rows[0], cmp.rows[1]);
}

#[test]
fn single_strategy_is_per_seed_runs() {
    let c = smoke();
    let cmp = compare_strategies(&c, &[Strategy::Uniform], &[1, 2], None).unwrap();
    for (row, seed) in cmp.rows.iter().zip([1, 2]) {
        let solo = run_pipeline(
            &ExperimentConfig {
                seed,
                strategy: Strategy::Uniform,
                ..c.clone()
            },
            None,
        )
        .unwrap();
        assert_eq!((row.linf, row.l2), (solo.linf, solo.l2));
    }
}

#[test]
fn reference_solution_matches_a_fresh_solve() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepare(&smoke(), Some(dir.path()), Stage::Reference).unwrap();
    let u = p.solver.solve(&p.kappa_reference).unwrap();
    assert_eq!(u.values(), p.u_reference.values());
    assert!(dir.path().join("reference/kappa.csv").exists());
    assert!(!dir.path().join("surrogate").exists());
}

#[test]
fn failures_name_the_stage_and_keep_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke();
    c.sampler.chains = Some(3);
    let err = run_pipeline(&c, Some(dir.path())).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "infer"),
        other => panic!("unexpected error {other}"),
    }
    assert!(dir.path().join("placement.csv").exists());
    assert!(!dir.path().join("report.json").exists());
    let config: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config, c);
}
