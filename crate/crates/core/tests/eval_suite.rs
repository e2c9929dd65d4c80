use provfig::agent::{FaultMode, ScriptedBackend, TemplateBackend};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::eval::{
    generate_suite, parse_suite, recheck_oracles, run_suite, suite_to_jsonl, SuiteSpec, BUNDLED_SUITE,
    DEFAULT_SUITE_SEED,
};

fn suite_text() -> String {
    let cat = demo_catalog(DemoSeeds::default()).unwrap();
    suite_to_jsonl(&generate_suite(&cat, &SuiteSpec::default(), DEFAULT_SUITE_SEED).unwrap())
}

#[test]
fn bundled_suite_is_regenerable() {
    let text = suite_text();
    if std::env::var_os("PROVFIG_BLESS").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/suite.jsonl"), &text).unwrap();
        return;
    }
    assert_eq!(text, BUNDLED_SUITE, "run with PROVFIG_BLESS=1 to refresh assets/suite.jsonl");
}

#[test]
fn same_seed_same_bytes() {
    assert_eq!(suite_text(), suite_text());
    let cat = demo_catalog(DemoSeeds::default()).unwrap();
    let other = suite_to_jsonl(&generate_suite(&cat, &SuiteSpec::default(), DEFAULT_SUITE_SEED + 1).unwrap());
    assert_ne!(other, suite_text());
}

#[test]
fn grid_is_covered() {
    let cases = parse_suite(BUNDLED_SUITE).unwrap();
    assert_eq!(cases.len(), 60);
    let cells: std::collections::BTreeSet<_> =
        cases.iter().map(|c| (c.tier, c.figure_type, c.interaction_type)).collect();
    assert_eq!(cells.len(), 30);
    assert!(cases.iter().all(|c| c.coordination.is_some()));
}

#[test]
fn oracles_agree_on_second_pass() {
    let cat = demo_catalog(DemoSeeds::default()).unwrap();
    let cases = parse_suite(BUNDLED_SUITE).unwrap();
    assert_eq!(recheck_oracles(&cases, &cat), Ok(180));
}

#[test]
fn template_backend_scores_full_marks() {
    let cat = demo_catalog(DemoSeeds::default()).unwrap();
    let cases = parse_suite(BUNDLED_SUITE).unwrap();
    let report = run_suite(&cases, &TemplateBackend::default(), &cat);
    let bad: Vec<_> = report
        .cases
        .iter()
        .filter(|r| {
            !(r.initial.correct && r.followup.correct && r.coordination.as_ref().is_none_or(|c| c.correct))
        })
        .collect();
    for b in &bad {
        eprintln!("{}", serde_json::to_string(b).unwrap());
    }
    eprintln!("{}", report.metrics.to_table());
    assert!(bad.is_empty(), "{} cases short of full marks", bad.len());
    let all = &report.metrics.overall.all;
    assert_eq!(all.execution_success_rate, 1.0);
    assert_eq!(all.end_to_end_accuracy, 1.0);
}

#[test]
fn always_fail_backend_reports_na() {
    let cat = demo_catalog(DemoSeeds::default()).unwrap();
    let cases = parse_suite(BUNDLED_SUITE).unwrap();
    let report = run_suite(&cases[..6], &ScriptedBackend::new(FaultMode::AlwaysFail), &cat);
    let m = &report.metrics.overall;
    assert_eq!(m.all.execution_success_rate, 0.0);
    assert_eq!(m.all.conditional_accuracy, None);
    assert_eq!(m.all.end_to_end_accuracy, 0.0);
}

#[test]
fn bad_suite_line_is_rejected() {
    let err = parse_suite("{\"case_id\": 3}\n").unwrap_err();
    assert!(err.to_string().contains("line 1"));
}
