use mediator_core::conversation::ConversationKind;
use mediator_core::metrics::gini;
use mediator_core::router::DeliveryScope;
use mediator_core::scenario::{plan_steps, run_scenario, ReplayOptions, Scenario};
use mediator_core::{ConversationState, Error};

#[test]
fn reference_scenario_completes_cleanly() {
    let run = run_scenario(&Scenario::reference(), &ReplayOptions::default()).unwrap();
    let r = &run.report;
    assert!(r.ok, "{:#?}", r.violations);
    assert_eq!(r.meetings.len(), 2);
    assert!(r.sessions.iter().all(|s| s.final_state == ConversationState::Complete));
    assert_eq!(r.feedback_records, 2);
    assert!(r.sessions.iter().all(|s| s.degraded_replies == 0), "{:#?}", r.sessions);

    // Gini values against the raw speaking intervals in the scenario file.
    let control = gini(&[100_000.0, 90_000.0, 110_000.0]).unwrap();
    let treatment = gini(&[200_000.0, 50_000.0, 30_000.0]).unwrap();
    assert_eq!(r.meetings[0].gini, Some(control));
    assert_eq!(r.meetings[1].gini, Some(treatment));
    let pair = &r.metrics.comparison.pairs[0];
    assert_eq!(pair.delta, treatment - control);

    let ihp: Vec<_> = r.sessions.iter().filter(|s| s.kind == ConversationKind::Ihp).collect();
    assert_eq!(ihp.len(), 3);
    for s in ihp {
        assert_eq!(s.context_scopes.last(), Some(&DeliveryScope::AgentDefault));
    }
}

#[test]
fn crash_and_restart_reaches_the_same_state() {
    let scenario = Scenario::reference();
    let baseline = run_scenario(&scenario, &ReplayOptions::default()).unwrap();
    let steps = plan_steps(&scenario).len();
    for crash in [1, steps / 3, steps / 2, steps - 1] {
        let dir = tempfile::tempdir().unwrap();
        let opts = ReplayOptions {
            data_dir: Some(dir.path().to_owned()),
            crash_after: Some(crash),
            snapshot_every: Some(7),
        };
        let run = run_scenario(&scenario, &opts).unwrap();
        assert!(run.report.ok);
        assert!(run.report.recovery.as_ref().unwrap().truncated_tail);
        assert_eq!(run.state, baseline.state, "crash after step {crash}");
        assert_eq!(run.report.state_checksum, baseline.report.state_checksum);
    }
}

#[test]
fn missing_goal_proposal_stalls() {
    let mut scenario = Scenario::reference();
    scenario
        .mock_script
        .entries
        .retain(|e| !matches!(e.directive, Some(mediator_core::llm::Directive::ProposeGoal { .. })));
    match run_scenario(&scenario, &ReplayOptions::default()) {
        Err(Error::State { message, .. }) => assert!(message.starts_with("protocol stall"), "{message}"),
        other => panic!("expected a stall, got {:?}", other.map(|r| r.report.ok)),
    }
}

#[test]
fn no_feedback_means_default_item_only() {
    let mut scenario = Scenario::reference();
    for msgs in scenario.meetings[0].post_meeting.values_mut() {
        *msgs = vec!["nothing to add".into()];
    }
    let run = run_scenario(&scenario, &ReplayOptions::default()).unwrap();
    assert!(run.report.ok);
    assert_eq!(run.report.feedback_records, 0);
    for s in run.report.sessions.iter().filter(|s| s.kind == ConversationKind::Ihp) {
        assert_eq!(s.context_scopes, vec![DeliveryScope::AgentDefault]);
    }
}
