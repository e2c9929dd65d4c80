//! Export, import and verification of artifact bundles, including tampered ones.

use std::collections::BTreeMap;

use provfig::bundle::{read_bundle, rewrite_entry, verify_bundle};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::session::{MessageRequest, SessionConfig, Workspace};
use provfig::testkit::{fixed_time, run_exploration};
use provfig::{Digest, TableCatalog};

fn workspace() -> Workspace {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    ws.fixed_clock = Some(fixed_time());
    ws
}

/// figure version id → data digest, over every version of an artifact.
fn digests(ws: &Workspace, aid: &str) -> BTreeMap<String, Digest> {
    let mut out = BTreeMap::new();
    for v in ws.history.ledger.versions_of(aid) {
        for f in v.state.figures.values() {
            out.insert(f.meta.version_id.clone(), f.data.digest);
        }
    }
    out
}

#[test]
fn explorations_replay_identically_after_import() {
    let mut ws = workspace();
    let mut ops = BTreeMap::new();
    for seed in 0..24 {
        let ex = run_exploration(&mut ws, seed).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        for (k, n) in ex.operations {
            *ops.entry(k).or_insert(0) += n;
        }
        let bytes = ws.export(&ex.artifact_id).unwrap();
        let report = verify_bundle(&bytes).unwrap();
        assert!(report.ok(), "{}", report.table());

        let mut fresh = Workspace::new(TableCatalog::new());
        let summary = fresh.import(&bytes).unwrap();
        assert_eq!(summary.artifact_id, ex.artifact_id);
        assert_eq!(digests(&fresh, &ex.artifact_id), digests(&ws, &ex.artifact_id));
        for v in fresh.history.ledger.versions_of(&ex.artifact_id) {
            let r = fresh.replay(&v.version_id).unwrap();
            assert!(r.all_matched(), "seed {seed} version {}", v.version_id);
        }
        // Importing again adds nothing.
        assert_eq!(fresh.import(&bytes).unwrap().versions_added, 0);
    }
    for op in ["generate", "extend", "coordinate_update"] {
        assert!(ops.keys().any(|k| serde_json::to_value(k).unwrap() == op), "{ops:?}");
    }
}

fn florida_bundle() -> (Workspace, String, String, Vec<u8>) {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    let r = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some("plot mean temp by month for Florida as a line chart".into()),
                ..Default::default()
            },
            &mut |_| {},
        )
        .unwrap();
    let aid = ws.session_info(&sid).unwrap().artifact_id;
    let bytes = ws.export(&aid).unwrap();
    (ws, aid, r.figure_ids[0].clone(), bytes)
}

#[test]
fn a_flipped_csv_byte_names_the_figure() {
    let (_, _, fid, bytes) = florida_bundle();
    assert_eq!(verify_bundle(&bytes).unwrap().exit_code(), 0);
    let bad = rewrite_entry(&bytes, &format!("figures/{fid}/data.csv"), |b| {
        let i = b.iter().rposition(|c| c.is_ascii_digit()).unwrap();
        b[i] = if b[i] == b'9' { b'0' } else { b[i] + 1 };
    })
    .unwrap();
    let report = verify_bundle(&bad).unwrap();
    assert_eq!(report.exit_code(), 2);
    assert_eq!(report.mismatched(), vec![fid.as_str()]);
    assert!(report.table().contains("MISMATCH"));
}

#[test]
fn a_tampered_source_table_fails_verification_and_import() {
    let (_, _, _, bytes) = florida_bundle();
    let bad = rewrite_entry(&bytes, "catalog/temps.csv", |b| {
        let i = b.iter().rposition(|c| c.is_ascii_digit()).unwrap();
        b[i] = if b[i] == b'9' { b'0' } else { b[i] + 1 };
    })
    .unwrap();
    let report = verify_bundle(&bad).unwrap();
    assert!(!report.ok());
    assert!(report.table_errors.contains_key("temps"));
    assert_eq!(Workspace::default().import(&bad).unwrap_err().status(), 422);
}

#[test]
fn truncated_and_foreign_bytes_are_malformed() {
    let (_, _, _, bytes) = florida_bundle();
    assert!(read_bundle(&bytes[..bytes.len() / 2]).is_err());
    assert!(read_bundle(b"not a zip").is_err());
    let wrong = rewrite_entry(&bytes, "bundle.json", |b| {
        let mut v: serde_json::Value = serde_json::from_slice(b).unwrap();
        v["format_version"] = 99.into();
        *b = serde_json::to_vec(&v).unwrap();
    })
    .unwrap();
    assert!(read_bundle(&wrong).is_err());
}

#[test]
fn diverged_imports_conflict_and_descendants_fast_forward() {
    let (mut ws, aid, fid, old) = florida_bundle();
    let sid = ws.history.conversations.keys().next().unwrap().clone();
    let mut other = Workspace::new(TableCatalog::new());
    other.import(&old).unwrap();
    ws.post_message(
        &sid,
        MessageRequest {
            text: Some("use a log scale".into()),
            interaction: None,
            target_figure: Some(fid.clone()),
        },
        &mut |_| {},
    )
    .unwrap();
    let newer = ws.export(&aid).unwrap();
    let s = other.import(&newer).unwrap();
    assert_eq!(Some(s.head_version.as_str()), ws.history.ledger.head(&aid));
    assert!(s.versions_added >= 1);

    // Importing an ancestor leaves the head where it is.
    let head = other.history.ledger.head(&aid).unwrap().to_string();
    other.import(&old).unwrap();
    assert_eq!(other.history.ledger.head(&aid).unwrap(), head);
}

#[test]
fn bundles_are_byte_identical_across_exports() {
    let (ws, aid, _, bytes) = florida_bundle();
    assert_eq!(ws.export(&aid).unwrap(), bytes);
    let (_, _, _, again) = florida_bundle();
    assert_eq!(again, bytes);
}
