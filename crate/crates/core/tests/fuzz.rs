mod common;

use common::fuzz::run_sequence;

#[test]
fn random_sequences_hold_every_invariant() {
    let (mut records, mut adopted, mut completed) = (0, 0, 0);
    for seed in 0..300 {
        let out = run_sequence(seed, 120);
        assert!(out.violations.is_empty(), "seed {seed}: {:#?}", out.violations);
        assert_eq!(out.bundles, out.bundles_with_default);
        records += out.records;
        adopted += out.goals_adopted;
        completed += out.completed_sessions;
    }
    assert!(records > 30 && adopted > 100 && completed > 100, "fuzz too shallow");
}
