//! The binary's subcommands and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use provfig::bundle::rewrite_entry;
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::session::{MessageRequest, SessionConfig, Workspace};
use provfig::testkit::fixed_time;

fn provfig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provfig")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A data directory holding one session with the Florida line, and its artifact id.
fn seeded_dir(dir: &Path) -> (String, String) {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    ws.fixed_clock = Some(fixed_time());
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
    ws.save(dir).unwrap();
    (ws.session_info(&sid).unwrap().artifact_id, r.figure_ids[0].clone())
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let o = provfig(&["verify", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&provfig(&["frobnicate"])), 1);
    assert_eq!(code(&provfig(&["verify"])), 1);
    assert_eq!(code(&provfig(&["--help"])), 0);
    assert_eq!(code(&provfig(&["verify", "--bundle", "/nonexistent.zip"])), 1);
    assert_eq!(code(&provfig(&["serve", "--backend", "oracle"])), 1);
}

#[test]
fn demo_reports_tables_and_saves_them() {
    let dir = tempfile::tempdir().unwrap();
    let o = provfig(&["demo", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("temps") && l.contains(" 6600 rows")), "{out}");
    assert!(out.contains("Florida"));
    let ws = Workspace::open(dir.path(), provfig::TableCatalog::new()).unwrap();
    assert_eq!(ws.catalog.table("temps").unwrap().rows.len(), 6600);
}

#[test]
fn export_verify_replay_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (aid, fid) = seeded_dir(dir.path());
    let d = dir.path().to_str().unwrap();
    let zip = dir.path().join("a.zip");
    let z = zip.to_str().unwrap();
    assert_eq!(code(&provfig(&["export", "--artifact", &aid, "--out", z, "--data-dir", d])), 0);
    assert_eq!(code(&provfig(&["export", "--artifact", "art-nope", "--out", z, "--data-dir", d])), 1);

    let o = provfig(&["verify", "--bundle", z]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("match"));
    assert_eq!(code(&provfig(&["replay", "--bundle", z])), 0);

    let bytes = std::fs::read(&zip).unwrap();
    let flipped = rewrite_entry(&bytes, &format!("figures/{fid}/data.csv"), |b| {
        let i = b.iter().rposition(|c| c.is_ascii_digit()).unwrap();
        b[i] = if b[i] == b'9' { b'0' } else { b[i] + 1 };
    })
    .unwrap();
    let bad = dir.path().join("bad.zip");
    std::fs::write(&bad, flipped).unwrap();
    let o = provfig(&["verify", "--bundle", z, "--bundle", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(&fid));

    let cut = dir.path().join("cut.zip");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&provfig(&["verify", "--bundle", cut.to_str().unwrap()])), 1);
    assert_eq!(code(&provfig(&["replay", "--bundle", cut.to_str().unwrap()])), 1);
}

#[test]
fn import_into_a_fresh_directory_then_replay_by_version() {
    let src = tempfile::tempdir().unwrap();
    let (aid, _) = seeded_dir(src.path());
    let zip = src.path().join("a.zip");
    let o = provfig(&["export", "--artifact", &aid, "--out", zip.to_str().unwrap(), "--data-dir", src.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let dst = tempfile::tempdir().unwrap();
    let d = dst.path().join("data");
    let o = provfig(&["import", "--bundle", zip.to_str().unwrap(), "--data-dir", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ws = Workspace::open(&d, provfig::TableCatalog::new()).unwrap();
    let head = ws.history.ledger.head(&aid).unwrap().to_string();
    let o = provfig(&["replay", "--data-dir", d.to_str().unwrap(), "--version", &head, "--json"]);
    assert_eq!(code(&o), 0);
    let reports: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(reports[0]["figures"][0]["matched"], true);
    assert_eq!(code(&provfig(&["replay", "--data-dir", d.to_str().unwrap(), "--version", "v-nope"])), 1);
}

#[test]
fn eval_bundled_and_generated_suites() {
    let out = tempfile::tempdir().unwrap();
    let o = provfig(&["eval", "--jobs", "4", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(first.starts_with("overall") && first.matches("100.0%").count() == 3, "{first}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 60);

    let spec = out.path().join("spec.json");
    std::fs::write(&spec, r#"{"figure_types":["bar","pie"],"interaction_types":["single_mark"],"tiers":[1],"reps":1,"coordination":false}"#).unwrap();
    let gen = |dir: &Path| {
        let o = provfig(&["eval", "--generate", spec.to_str().unwrap(), "--seed", "9", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.join("suite.jsonl")).unwrap()
    };
    let a = gen(&out.path().join("g1"));
    let b = gen(&out.path().join("g2"));
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&provfig(&["eval", "--data-dir", empty.path().to_str().unwrap()])), 1);
    let junk = out.path().join("junk.jsonl");
    std::fs::write(&junk, "{not json}\n").unwrap();
    assert_eq!(code(&provfig(&["eval", "--suite", junk.to_str().unwrap()])), 1);
}
