//! Randomized commit/checkout/branch sequences against the ledger invariants, and
//! persistence of the seven tables.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provfig::store::{History, StorageError, Tables};
use provfig::testkit::ledger_workout;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn workouts_keep_the_dag_and_snapshots(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, stats) = ledger_workout(&mut rng, 300, 10).map_err(TestCaseError::fail)?;
        prop_assert!(stats.commits > 0 && stats.branches > 0 && stats.noops > 0);
        let dir = tempfile::tempdir().unwrap();
        h.save(dir.path()).unwrap();
        let back = History::load(dir.path()).unwrap();
        prop_assert_eq!(back.ledger.snapshot_hashes(), h.ledger.snapshot_hashes());
        prop_assert_eq!(&back.ledger, &h.ledger);
        prop_assert_eq!(&back, &h);
    }
}

#[test]
fn merges_and_rejected_cycles_both_occur() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (_, stats) = ledger_workout(&mut rng, 2000, 50).unwrap();
    assert!(stats.merges > 0, "{stats:?}");
    assert!(stats.cycles_rejected > 0, "{stats:?}");
}

fn saved() -> Tables {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, _) = ledger_workout(&mut rng, 120, 10).unwrap();
    h.to_tables()
}

fn rejects(t: Tables) -> bool {
    matches!(History::from_tables(t), Err(StorageError::Integrity { .. }))
}

#[test]
fn dangling_references_are_rejected() {
    let base = saved();
    assert!(History::from_tables(base.clone()).is_ok());

    let mut t = base.clone();
    t.figure_versions.pop();
    assert!(rejects(t), "missing figure version");

    let mut t = base.clone();
    t.conversations.clear();
    assert!(rejects(t), "messages without conversation");

    let mut t = base.clone();
    t.artifacts[0].head_version = "av-nowhere".into();
    assert!(rejects(t), "unknown head");

    let mut t = base.clone();
    let v = t.artifact_versions.iter_mut().find(|v| !v.parents.is_empty()).unwrap();
    v.parents[0].parent = "av-nowhere".into();
    assert!(rejects(t), "unknown parent");

    let mut t = base.clone();
    t.message_artifact[0].version_id = "av-nowhere".into();
    assert!(rejects(t), "message link to unknown version");

    let mut t = base;
    t.figures[0].code.pop();
    assert!(rejects(t), "code disagrees with records");
}

#[test]
fn jsonl_round_trip_is_lossless() {
    let t = saved();
    let docs: std::collections::BTreeMap<&str, String> = t.to_jsonl().into_iter().collect();
    assert_eq!(docs.len(), 7);
    let back = Tables::from_jsonl(|n| docs.get(n).cloned()).unwrap();
    assert_eq!(back, t);
}
