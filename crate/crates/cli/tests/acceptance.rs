//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use provfig::agent::FaultMode;
use provfig::coordination::{propagate, Propagation};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::eval::{parse_suite, BUNDLED_SUITE};
use provfig::explore::extend_from_selection;
use provfig::interaction::interaction_to_predicate;
use provfig::session::Workspace;
use provfig::store::History;
use provfig::testkit::{
    climate_scenario, coordination_trial, figure_with_gesture, fixed_time, geometric_selection, ledger_workout,
    loop_trial, propagating_gesture, random_catalog, rows_satisfying, run_exploration, GESTURE_KINDS,
};
use provfig::{execute_plan, reference_execute, rounded_digest, ChartType, Digest, InteractionEvent};

type Check = Result<String, String>;

fn replay_determinism() -> Check {
    let t0 = Instant::now();
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).map_err(|e| e.to_string())?);
    ws.fixed_clock = Some(fixed_time());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut paths = Vec::new();
    let mut ops: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..200u64 {
        let ex = run_exploration(&mut ws, seed).map_err(|e| format!("session {seed}: {e}"))?;
        for (k, n) in ex.operations {
            *ops.entry(format!("{k:?}")).or_default() += n;
        }
        let bytes = ws.export(&ex.artifact_id).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("{}.zip", ex.artifact_id));
        std::fs::write(&p, bytes).map_err(|e| e.to_string())?;
        paths.push(p);
    }
    let mut expected: BTreeMap<(String, String), Digest> = BTreeMap::new();
    for v in ws.history.ledger.versions.values() {
        for (fid, f) in &v.state.figures {
            expected.insert((v.version_id.clone(), fid.clone()), f.data.digest);
        }
    }
    let mut args = vec!["replay".to_string(), "--json".into()];
    for p in &paths {
        args.push("--bundle".into());
        args.push(p.display().to_string());
    }
    let out = Command::new(env!("CARGO_BIN_EXE_provfig"))
        .args(&args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("replay exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let mut compared = 0usize;
    let mut mismatched = 0usize;
    for r in reports.as_array().ok_or("replay output is not a list")? {
        let version = r["version_id"].as_str().unwrap_or_default().to_string();
        for f in r["figures"].as_array().into_iter().flatten() {
            let fid = f["figure_id"].as_str().unwrap_or_default().to_string();
            let want = expected.get(&(version.clone(), fid)).map(|d| serde_json::to_value(d).expect("json"));
            compared += 1;
            if f["matched"] != true || want.as_ref() != Some(&f["replayed_digest"]) {
                mismatched += 1;
            }
        }
    }
    let verify = Command::new(env!("CARGO_BIN_EXE_provfig"))
        .arg("verify")
        .args(paths.iter().flat_map(|p| ["--bundle".to_string(), p.display().to_string()]))
        .output()
        .map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let summary = format!(
        "200 sessions, {} versions, {compared} figure replays in a fresh process, {mismatched} mismatches, verify exit {:?}, ops {ops:?}, {secs:.1}s",
        ws.history.ledger.versions.len(),
        verify.status.code()
    );
    if mismatched == 0 && compared >= expected.len() && verify.status.success() && secs < 120.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut coverage: BTreeMap<String, usize> = BTreeMap::new();
    let mut mismatches = 0usize;
    let mut pairs = 0usize;
    let mut max_rows = 0usize;
    let combos: Vec<(ChartType, provfig::InteractionKind)> = ChartType::ALL
        .iter()
        .flat_map(|c| GESTURE_KINDS.iter().map(move |k| (*c, *k)))
        .collect();
    let mut misses: BTreeMap<String, usize> = BTreeMap::new();
    let mut i = 0usize;
    while pairs < 1000 {
        let (chart, kind) = combos[i % combos.len()];
        i += 1;
        if i > 20_000 {
            return Err(format!("only {pairs} pairs generated; coverage {coverage:?}"));
        }
        let rows = if rng.random_bool(0.05) { 10_000 } else { rng.random_range(1..2_000) };
        let catalog = random_catalog(&mut rng, rows);
        let key = format!("{chart:?}/{kind:?}");
        let Some((fig, g)) = figure_with_gesture(&mut rng, &catalog, chart, kind, "f1") else {
            *misses.entry(key).or_default() += 1;
            continue;
        };
        max_rows = max_rows.max(fig.data.len());
        let map = fig.mark_map().map_err(|e| e.to_string())?;
        let ev = InteractionEvent {
            figure_id: "f1".into(),
            gesture: g.clone(),
            at: fixed_time(),
        };
        let ok = match interaction_to_predicate(&ev, &map, &fig.visualization, &fig.data) {
            Ok(p) => rows_satisfying(&fig.data, &p) == geometric_selection(&fig, &g),
            Err(_) => false,
        };
        if !ok {
            mismatches += 1;
        }
        pairs += 1;
        *coverage.entry(key).or_default() += 1;
    }
    let line = format!(
        "{pairs} pairs over {} of 18 chart/gesture combinations, {mismatches} mismatches, largest slice {max_rows} rows; per combination {coverage:?}",
        coverage.len()
    );
    if mismatches == 0 && coverage.len() == 18 {
        Ok(line)
    } else {
        Err(format!("{line}; generator misses {misses:?}"))
    }
}

fn coordination_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut events = 0usize;
    let mut mismatches = 0usize;
    let mut updated = 0usize;
    let mut tries = 0usize;
    while events < 300 {
        tries += 1;
        if tries > 5_000 {
            return Err(format!("only {events} events generated"));
        }
        let rows = rng.random_range(2..400);
        let catalog = random_catalog(&mut rng, rows);
        let Some(trial) = coordination_trial(&mut rng, &catalog) else { continue };
        let mut target = trial.target.clone();
        for _ in 0..3 {
            let Some(g) = propagating_gesture(&mut rng, &trial) else { break };
            let ev = InteractionEvent {
                figure_id: trial.source.figure_id.clone(),
                gesture: g.clone(),
                at: fixed_time(),
            };
            let fresh = extend_from_selection(&trial.source, &ev, &trial.steps, &catalog, &target.figure_id);
            events += 1;
            match (propagate(&trial.schema, &trial.source, &target, &g, &catalog, fixed_time()), fresh) {
                (Ok(Propagation::Updated { figure, predicate }), Ok(fresh)) => {
                    if figure.content_digest() != fresh.figure.content_digest() || predicate != fresh.predicate {
                        mismatches += 1;
                    }
                    updated += 1;
                    target = figure;
                }
                (Ok(Propagation::Unchanged { .. }), Ok(fresh)) => {
                    if target.data.digest != fresh.figure.data.digest || target.visualization != fresh.figure.visualization {
                        mismatches += 1;
                    }
                }
                _ => mismatches += 1,
            }
        }
    }
    let line = format!("{events} propagation events ({updated} produced new versions), {mismatches} mismatches");
    if mismatches == 0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn engine_vs_oracle() -> Check {
    let catalog = demo_catalog(DemoSeeds::default()).map_err(|e| e.to_string())?;
    let cases = parse_suite(BUNDLED_SUITE).map_err(|e| e.to_string())?;
    let mut plans = 0usize;
    let mut bad = Vec::new();
    for c in &cases {
        let mut steps = vec![("initial", &c.initial.oracle_plan), ("followup", &c.followup.oracle_plan)];
        if let Some(k) = &c.coordination {
            steps.push(("coordination", &k.oracle_plan));
        }
        for (name, p) in steps {
            plans += 1;
            let same = match (execute_plan(p, &catalog), reference_execute(p, &catalog)) {
                (Ok(a), Ok(b)) => rounded_digest(&a) == rounded_digest(&b) && a.row_keys() == b.row_keys(),
                _ => false,
            };
            if !same {
                bad.push(format!("{}/{name}", c.case_id));
            }
        }
    }
    let line = format!("{} cases, {plans} plans, {} match the reference evaluator", cases.len(), plans - bad.len());
    if bad.is_empty() && cases.len() == 60 {
        Ok(line)
    } else {
        Err(format!("{line}; differing: {bad:?}"))
    }
}

fn climate() -> Check {
    climate_scenario().map(|()| {
        "12-vertex Florida line; summer brush gives 50 bars in oracle order; winter click updates them to the oracle winter order as coordinate_update".to_string()
    })
}

fn loop_robustness() -> Check {
    let modes = [FaultMode::InvalidColumnFirst, FaultMode::AlwaysFail, FaultMode::OversizedPlan];
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut by_mode: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    for i in 0..500 {
        match loop_trial(&mut rng, &modes) {
            Ok(t) => {
                let e = by_mode.entry(format!("{:?}", t.mode)).or_default();
                if t.committed {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
            Err(e) => failures.push(format!("trial {i}: {e}")),
        }
    }
    let line = format!(
        "500 trials, {} within budget with no partial commit; (committed, rejected) per mode {by_mode:?}",
        500 - failures.len()
    );
    if failures.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; {}", failures.join("; ")))
    }
}

fn ledger_integrity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let (h, stats) = ledger_workout(&mut rng, 10_000, 1_000)?;
    let before = h.ledger.snapshot_hashes();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    h.save(dir.path()).map_err(|e| e.to_string())?;
    let back = History::load(dir.path()).map_err(|e| e.to_string())?;
    back.ledger.check_dag()?;
    if back.ledger.snapshot_hashes() != before {
        return Err("snapshot hashes changed across save/load".into());
    }
    if back != h {
        return Err("history differs after save/load".into());
    }
    let arts: BTreeSet<&String> = back.ledger.artifacts.keys().collect();
    Ok(format!(
        "{} operations ({} commits, {} branches, {} merges, {} rejected cycles, {} no-op checkouts) over {} artifacts and {} versions; DAG and snapshot hashes unchanged after save/load",
        stats.operations,
        stats.commits,
        stats.branches,
        stats.merges,
        stats.cycles_rejected,
        stats.noops,
        arts.len(),
        back.ledger.versions.len()
    ))
}

fn main() {
    // libtest-style flags (e.g. --nocapture) are accepted and ignored.
    let criteria: [(&str, fn() -> Check); 7] = [
        ("replay determinism", replay_determinism),
        ("bidirectional round-trip", round_trip),
        ("coordination equivalence", coordination_equivalence),
        ("engine vs oracle", engine_vs_oracle),
        ("climate walkthrough", climate),
        ("agent-loop robustness", loop_robustness),
        ("ledger integrity", ledger_integrity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
