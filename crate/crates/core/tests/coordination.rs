//! Propagation along a recorded schema equals extending the source afresh.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use provfig::coordination::{propagate, propagation_order, would_cycle, CoordinationError, CoordinationSchema, Propagation};
use provfig::explore::extend_from_selection;
use provfig::testkit::{coordination_trial, fixed_time, propagating_gesture, random_catalog};
use provfig::{Gesture, InteractionEvent, Operation};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn propagation_equals_fresh_extension(seed in any::<u64>(), rows in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(&mut rng, rows);
        let Some(trial) = coordination_trial(&mut rng, &catalog) else {
            return Err(TestCaseError::reject("no trial"));
        };
        let mut target = trial.target.clone();
        for _ in 0..3 {
            let Some(g) = propagating_gesture(&mut rng, &trial) else { break };
            let out = propagate(&trial.schema, &trial.source, &target, &g, &catalog, fixed_time()).unwrap();
            let ev = InteractionEvent { figure_id: trial.source.figure_id.clone(), gesture: g, at: fixed_time() };
            let fresh = extend_from_selection(&trial.source, &ev, &trial.steps, &catalog, &target.figure_id).unwrap();
            match out {
                Propagation::Updated { figure, predicate } => {
                    prop_assert_eq!(&predicate, &fresh.predicate);
                    prop_assert_eq!(figure.content_digest(), fresh.figure.content_digest());
                    prop_assert_eq!(figure.meta.operation, Operation::CoordinateUpdate);
                    prop_assert_eq!(figure.meta.parent_version.as_ref(), Some(&target.meta.version_id));
                    prop_assert_ne!(&figure.meta.version_id, &target.meta.version_id);
                    figure.check().unwrap();
                    target = figure;
                }
                Propagation::Unchanged { .. } => {
                    prop_assert_eq!(target.data.digest, fresh.figure.data.digest);
                    prop_assert_eq!(&target.visualization, &fresh.figure.visualization);
                }
            }
        }
    }
}

#[test]
fn mismatched_kind_and_empty_selection_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let catalog = random_catalog(&mut rng, 120);
    let mut checked_kind = false;
    let mut checked_empty = false;
    for _ in 0..200 {
        let Some(t) = coordination_trial(&mut rng, &catalog) else { continue };
        if t.schema.trigger == provfig::InteractionKind::Interval2d {
            let g = Gesture::Click {
                mark_ids: vec![t.source.visualization.marks[0].mark_id.clone()],
            };
            let e = propagate(&t.schema, &t.source, &t.target, &g, &catalog, fixed_time()).unwrap_err();
            assert!(matches!(e, CoordinationError::KindMismatch { .. }), "{e:?}");
            checked_kind = true;
        }
        if let Gesture::Brush1d { channel, .. } = t.schema.last_gesture {
            let g = Gesture::Brush1d { channel, lo: 1e12, hi: 2e12 };
            if let Err(e) = propagate(&t.schema, &t.source, &t.target, &g, &catalog, fixed_time()) {
                // Nothing inside gives a comparison-only predicate, which binds the same column.
                assert!(matches!(e, CoordinationError::EmptySelection | CoordinationError::BindingMismatch { .. }), "{e:?}");
                checked_empty |= matches!(e, CoordinationError::EmptySelection);
            }
        }
        if checked_kind && checked_empty {
            return;
        }
    }
    panic!("kind {checked_kind} empty {checked_empty}");
}

fn edge(base: &CoordinationSchema, id: usize, s: usize, t: usize) -> CoordinationSchema {
    CoordinationSchema {
        schema_id: format!("cs-{id:04}"),
        source_figure: format!("f{s}"),
        target_figure: format!("f{t}"),
        ..base.clone()
    }
}

#[test]
fn guarded_graphs_stay_acyclic_and_order_is_topological() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let catalog = random_catalog(&mut rng, 60);
    let base = coordination_trial(&mut rng, &catalog).unwrap().schema;
    for round in 0..200 {
        let n = rng.random_range(2..12);
        let mut edges: Vec<CoordinationSchema> = Vec::new();
        for i in 0..rng.random_range(1..30) {
            let (s, t) = (rng.random_range(0..n), rng.random_range(0..n));
            if would_cycle(&edges, &format!("f{s}"), &format!("f{t}")) {
                continue;
            }
            edges.push(edge(&base, i, s, t));
        }
        let order = propagation_order(&edges).unwrap();
        assert_eq!(order.len(), edges.len(), "round {round}");
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        for a in &edges {
            for b in &edges {
                if a.target_figure == b.source_figure {
                    assert!(pos[a.schema_id.as_str()] < pos[b.schema_id.as_str()]);
                }
            }
        }
        // Forcing a back edge is detected.
        if let Some(e) = edges.first() {
            let mut cyclic = edges.clone();
            let back = edge(&base, 999, e.target_figure[1..].parse().unwrap(), e.source_figure[1..].parse().unwrap());
            cyclic.push(back);
            assert!(matches!(propagation_order(&cyclic), Err(CoordinationError::CycleDetected(_))));
        }
    }
}
