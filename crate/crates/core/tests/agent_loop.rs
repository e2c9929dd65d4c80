//! Planning loop under fault-injecting backends, plus trace completeness and
//! determinism with the template backend.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provfig::agent::{run_loop, Budget, DataContext, FaultMode, LoopConfig, LoopError, ScriptedBackend, TemplateBackend};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::ledger::{ArtifactState, UserInputRecord};
use provfig::testkit::{fixed_time, loop_trial};
use provfig::StepStatus;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_fault_mode_terminates_within_budget(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = loop_trial(&mut rng, &FaultMode::ALL).map_err(TestCaseError::fail)?;
        prop_assert!(t.used <= t.units);
    }
}

#[test]
fn invalid_column_first_recovers_with_one_failed_entry() {
    let catalog = demo_catalog(DemoSeeds::default()).unwrap();
    let input = UserInputRecord::new(Some("mean by category".into()), None, fixed_time());
    let state = ArtifactState::new("a");
    let out = run_loop(
        &input,
        &state,
        &catalog,
        &ScriptedBackend::new(FaultMode::InvalidColumnFirst),
        DataContext::default(),
        &LoopConfig::default(),
        &mut |_| {},
    )
    .unwrap();
    let statuses: Vec<StepStatus> = out.trace.entries.iter().map(|e| e.status).collect();
    assert_eq!(statuses, vec![StepStatus::Failed, StepStatus::Ok]);
    assert!(out.converged);
}

#[test]
fn always_fail_and_zero_budget_end_in_errors() {
    let catalog = demo_catalog(DemoSeeds::default()).unwrap();
    let input = UserInputRecord::new(Some("anything".into()), None, fixed_time());
    let state = ArtifactState::new("a");
    let run = |mode, units| {
        let cfg = LoopConfig {
            budget: Budget { units },
            ..LoopConfig::default()
        };
        run_loop(&input, &state, &catalog, &ScriptedBackend::new(mode), DataContext::default(), &cfg, &mut |_| {})
    };
    assert!(matches!(run(FaultMode::AlwaysFail, 64), Err(LoopError::AllBranchesFailed { .. })));
    assert!(matches!(run(FaultMode::Valid, 0), Err(LoopError::BudgetExhausted { .. })));
    assert!(matches!(run(FaultMode::Unavailable, 64), Err(LoopError::Backend(_))));
    // Retries are capped: the same failing plan runs at most max_retries + 1 times.
    let t = run(FaultMode::AlwaysFail, 64).unwrap_err();
    assert!(t.trace().unwrap().entries.len() <= LoopConfig::default().max_retries + 1);
}

#[test]
fn trace_accounts_for_every_query_and_is_deterministic() {
    let catalog = demo_catalog(DemoSeeds::default()).unwrap();
    let input = UserInputRecord::new(Some("plot mean temp by month for Florida as a line chart".into()), None, fixed_time());
    let state = ArtifactState::new("a");
    let go = || {
        let mut events = Vec::new();
        let before = catalog.queries_executed();
        let out = run_loop(
            &input,
            &state,
            &catalog,
            &TemplateBackend::default(),
            DataContext::default(),
            &LoopConfig::default(),
            &mut |e| events.push(e.clone()),
        )
        .unwrap();
        let delta = catalog.queries_executed() - before;
        (out, events, delta)
    };
    let (a, ev_a, delta) = go();
    assert_eq!(a.trace.entries.iter().map(|e| e.queries).sum::<u64>(), delta);
    assert!(delta > 0);
    let (b, ev_b, _) = go();
    assert_eq!(serde_json::to_vec(&a.trace).unwrap(), serde_json::to_vec(&b.trace).unwrap());
    assert_eq!(ev_a, ev_b);
    assert_eq!(a.best.figure.content_digest(), b.best.figure.content_digest());
}

#[test]
fn trials_cover_commits_and_failures_for_each_fault() {
    let modes = [FaultMode::InvalidColumnFirst, FaultMode::AlwaysFail, FaultMode::OversizedPlan];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = std::collections::BTreeMap::new();
    for _ in 0..300 {
        let t = loop_trial(&mut rng, &modes).unwrap();
        let e = seen.entry(format!("{:?}", t.mode)).or_insert((0, 0));
        if t.committed {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    assert_eq!(seen.len(), 3);
    assert_eq!(seen["AlwaysFail"].0, 0);
    assert!(seen["InvalidColumnFirst"].0 > 0 && seen["InvalidColumnFirst"].1 > 0, "{seen:?}");
    assert!(seen["OversizedPlan"].0 > 0 && seen["OversizedPlan"].1 > 0, "{seen:?}");
}
