//! Workspace turns: stream shape, request guards, read-only calls and interrupted turns.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use provfig::agent::{FaultMode, ScriptedBackend};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::session::{
    run_turn, run_turn_with, Emitter, EventKind, MessageRequest, SessionConfig, SessionError, StreamEvent,
    UpdateStatus, Workspace,
};
use provfig::testkit::fixed_time;
use provfig::{Channel, Gesture, InteractionEvent};

fn workspace() -> Workspace {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    ws.fixed_clock = Some(fixed_time());
    ws
}

fn text(t: &str) -> MessageRequest {
    MessageRequest {
        text: Some(t.into()),
        ..Default::default()
    }
}

fn florida(ws: &mut Workspace, sid: &str) -> String {
    let r = ws
        .post_message(sid, text("plot mean temp by month for Florida as a line chart"), &mut |_| {})
        .unwrap();
    assert_eq!(r.error, None);
    r.figure_ids[0].clone()
}

type Fingerprint = (usize, usize, usize, Option<String>, Vec<(String, provfig::Digest)>);

fn fingerprint(ws: &Workspace, aid: &str) -> Fingerprint {
    (
        ws.history.ledger.versions.len(),
        ws.history.messages.len(),
        ws.history.message_artifact.len(),
        ws.history.ledger.head(aid).map(str::to_string),
        ws.history.ledger.snapshot_hashes().into_iter().collect(),
    )
}

const MESSAGES: [&str; 6] = [
    "plot mean temp by month for Florida as a line chart",
    "rank state by mean temp",
    "percentage of department using a pie chart",
    "compare innovation across all departments over time and explain drivers",
    "what should I look at next?",
    "plot mean of no_such_thing by nowhere",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Dense sequence numbers and one terminal event, whatever the backend does.
    #[test]
    fn streams_are_dense_with_one_terminal_event(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = workspace();
        let backend = ["template", "scripted", "scripted:always_fail", "scripted:unavailable", "scripted:invalid_column_first"]
            [rng.random_range(0..5)];
        let sid = ws.create_session(SessionConfig { backend: backend.into(), ..Default::default() }).unwrap();
        for _ in 0..3 {
            let mut events: Vec<StreamEvent> = Vec::new();
            let msg = MESSAGES[rng.random_range(0..MESSAGES.len())];
            ws.post_message(&sid, text(msg), &mut |e| events.push(e)).unwrap();
            let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
            prop_assert_eq!(seqs, (0..events.len() as u64).collect::<Vec<_>>());
            prop_assert_eq!(events.iter().filter(|e| e.kind.is_terminal()).count(), 1);
            prop_assert!(events.last().unwrap().kind.is_terminal());
            let ready = events.iter().filter(|e| matches!(e.kind, EventKind::FigureReady { .. })).count();
            prop_assert!(ready <= 1);
            if ready == 1 {
                let done = matches!(events.last().unwrap().kind, EventKind::Done { version_id: Some(_), .. });
                prop_assert!(done);
            }
        }
    }
}

#[test]
fn sessions_are_retrievable_and_ids_distinct() {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    let ids: BTreeSet<String> = (0..100).map(|_| ws.create_session(SessionConfig::default()).unwrap()).collect();
    assert_eq!(ids.len(), 100);
    for id in &ids {
        assert_eq!(ws.session_info(id).unwrap().session_id, *id);
    }
    let bad = SessionConfig {
        backend: "oracle".into(),
        ..Default::default()
    };
    assert_eq!(ws.create_session(bad).unwrap_err().status(), 400);
    assert_eq!(ws.session_info("s-missing").unwrap_err().status(), 404);
}

#[test]
fn malformed_requests_leave_the_ledger_alone() {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    let fid = florida(&mut ws, &sid);
    let aid = ws.session_info(&sid).unwrap().artifact_id;
    let before = fingerprint(&ws, &aid);
    let brush = |lo, hi| InteractionEvent {
        figure_id: fid.clone(),
        gesture: Gesture::Brush1d { channel: Channel::X, lo, hi },
        at: fixed_time(),
    };
    let req = MessageRequest {
        text: Some("rank state by mean temp".into()),
        interaction: Some(brush(8.0, 6.0)),
        target_figure: None,
    };
    assert_eq!(ws.post_message(&sid, req, &mut |_| {}).unwrap_err().status(), 422);
    assert_eq!(ws.post_gesture(brush(8.0, 6.0)).unwrap_err().status(), 422);
    assert_eq!(ws.post_gesture(brush(f64::NAN, 6.0)).unwrap_err().status(), 422);
    let mut ghost = brush(6.0, 8.0);
    ghost.figure_id = "nope".into();
    assert_eq!(ws.post_gesture(ghost.clone()).unwrap_err().status(), 404);
    let req = MessageRequest {
        text: None,
        interaction: Some(ghost),
        target_figure: None,
    };
    assert_eq!(ws.post_message(&sid, req, &mut |_| {}).unwrap_err().status(), 404);
    assert_eq!(ws.post_message(&sid, MessageRequest::default(), &mut |_| {}).unwrap_err().status(), 400);
    assert_eq!(ws.post_message("s-none", text("hi"), &mut |_| {}).unwrap_err().status(), 404);
    assert_eq!(fingerprint(&ws, &aid), before);
}

#[test]
fn reads_are_side_effect_free() {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    let fid = florida(&mut ws, &sid);
    let info = ws.session_info(&sid).unwrap();
    let before = fingerprint(&ws, &info.artifact_id);
    let head = info.head_version.clone().unwrap();
    let a = ws.export(&info.artifact_id).unwrap();
    let b = ws.export(&info.artifact_id).unwrap();
    assert_eq!(a, b);
    assert!(ws.replay(&head).unwrap().all_matched());
    assert_eq!(ws.session_info(&sid).unwrap(), info);
    let files = provfig::bundle::figure_files(ws.locate_figure(&fid).unwrap().figure(&fid).unwrap());
    let again = provfig::bundle::figure_files(ws.locate_figure(&fid).unwrap().figure(&fid).unwrap());
    assert_eq!(files, again);
    assert_eq!(fingerprint(&ws, &info.artifact_id), before);
    assert!(matches!(ws.replay("v-unknown"), Err(SessionError::NotFound(_))));
    assert!(matches!(ws.export("art-unknown"), Err(SessionError::NotFound(_))));
}

#[test]
fn an_abandoned_turn_commits_nothing() {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    florida(&mut ws, &sid);
    let aid = ws.session_info(&sid).unwrap().artifact_id;
    let before = fingerprint(&ws, &aid);
    // The loop runs to completion but the process "dies" before the turn is applied.
    let turn = ws.prepare_message(&sid, text("rank state by mean temp")).unwrap();
    let mut sink = |_: StreamEvent| {};
    let result = run_turn(&turn, &mut Emitter::new(&mut sink));
    assert!(matches!(result.outcome, Some(Ok(_))));
    drop(result);
    assert_eq!(fingerprint(&ws, &aid), before);
    // A failing turn that is applied records messages but no version.
    let turn = ws.prepare_message(&sid, text("anything")).unwrap();
    let mut events = Vec::new();
    let mut sink = |e: StreamEvent| events.push(e);
    let mut em = Emitter::new(&mut sink);
    let result = run_turn_with(&turn, &ScriptedBackend::new(FaultMode::AlwaysFail), &mut em);
    let reply = ws.finish_message(turn, result, &mut em).unwrap();
    assert!(reply.error.is_some() && reply.version_id.is_none());
    assert!(matches!(events.last().unwrap().kind, EventKind::Error { .. }));
    let after = fingerprint(&ws, &aid);
    assert_eq!((after.0, after.2, &after.3, &after.4), (before.0, before.2, &before.3, &before.4));
    assert_eq!(after.1, before.1 + 2);
}

#[test]
fn gestures_without_schemas_echo_and_empty_brushes_do_not_commit() {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    let fid = florida(&mut ws, &sid);
    let aid = ws.session_info(&sid).unwrap().artifact_id;
    let before = fingerprint(&ws, &aid);
    let ev = |lo, hi| InteractionEvent {
        figure_id: fid.clone(),
        gesture: Gesture::Brush1d { channel: Channel::X, lo, hi },
        at: fixed_time(),
    };
    let echo = ws.post_gesture(ev(6.0, 8.0)).unwrap();
    assert_eq!(echo.selected_count, 3);
    assert!(echo.updates.is_empty() && echo.version_id.is_none());
    assert_eq!(fingerprint(&ws, &aid), before);

    let r = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some("rank state by mean temp".into()),
                interaction: Some(ev(6.0, 8.0)),
                target_figure: None,
            },
            &mut |_| {},
        )
        .unwrap();
    assert_eq!(r.error, None);
    let before = fingerprint(&ws, &aid);
    let empty = ws.post_gesture(ev(40.0, 50.0)).unwrap();
    assert_eq!(empty.selected_count, 0);
    assert_eq!(empty.updates.len(), 1);
    assert!(matches!(empty.updates[0].status, UpdateStatus::EmptySelection | UpdateStatus::Failed));
    assert!(empty.version_id.is_none());
    assert_eq!(fingerprint(&ws, &aid), before);
}

#[test]
fn saved_workspaces_reopen_with_the_same_ledger_and_tables() {
    let mut ws = workspace();
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    florida(&mut ws, &sid);
    let dir = tempfile::tempdir().unwrap();
    ws.save(dir.path()).unwrap();
    let back = Workspace::open(dir.path(), provfig::TableCatalog::new()).unwrap();
    assert_eq!(back.history, ws.history);
    assert_eq!(back.catalog.manifest(), ws.catalog.manifest());
    let info = back.session_info(&sid).unwrap();
    assert!(back.replay(info.head_version.as_deref().unwrap()).unwrap().all_matched());
}
