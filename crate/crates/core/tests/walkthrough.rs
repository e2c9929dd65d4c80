//! The climate walkthrough end to end through the workspace API, checked against
//! rankings computed directly from the generated CSV.

use std::collections::BTreeMap;

use provfig::demo::{demo_catalog, temps_csv, DemoSeeds};
use provfig::figure::Operation;
use provfig::session::{EventKind, MessageRequest, SessionConfig, StreamEvent, UpdateStatus, Workspace};
use provfig::{Channel, ChartType, Gesture, InteractionEvent, Value};

/// (state, month, temp) from the raw generator output.
fn raw_rows() -> Vec<(String, u32, f64)> {
    let text = temps_csv(DemoSeeds::default().temps);
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let month: u32 = f[1][5..7].parse().unwrap();
            (f[0].to_string(), month, f[2].parse().unwrap())
        })
        .collect()
}

fn oracle_ranking(months: &[u32]) -> Vec<String> {
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (s, m, t) in raw_rows() {
        if months.contains(&m) {
            let e = acc.entry(s).or_default();
            e.0 += t;
            e.1 += 1.0;
        }
    }
    let mut v: Vec<(String, f64)> = acc.into_iter().map(|(s, (sum, n))| (s, sum / n)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v.into_iter().map(|(s, _)| s).collect()
}

fn x_order(chart: &provfig::ChartDoc) -> Vec<String> {
    chart
        .marks
        .iter()
        .map(|m| m.channel_values[&Channel::X].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn florida_then_summer_ranking_then_winter() {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    let sid = ws.create_session(SessionConfig::default()).unwrap();
    let mut events: Vec<StreamEvent> = Vec::new();
    let r1 = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some("Plot the average monthly temperature in Florida over the past ten years (2014 to 2024).".into()),
                ..Default::default()
            },
            &mut |e| events.push(e),
        )
        .unwrap();
    assert_eq!(r1.error, None, "{events:?}");
    assert!(matches!(events.last().unwrap().kind, EventKind::Done { .. }));
    assert!(events.iter().any(|e| matches!(e.kind, EventKind::FigureReady { .. })));
    let line_id = r1.figure_ids[0].clone();
    let head = ws.head_state(&ws.session_info(&sid).unwrap().artifact_id).unwrap();
    let line = head.figure(&line_id).unwrap();
    assert_eq!(line.visualization.chart_type, ChartType::Line);
    assert_eq!(line.visualization.marks.len(), 12);

    // Florida July warmer than January, straight from the CSV.
    let fl: Vec<_> = raw_rows().into_iter().filter(|r| r.0 == "FL").collect();
    let mean = |m| {
        let v: Vec<f64> = fl.iter().filter(|r| r.1 == m).map(|r| r.2).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(7) > mean(1));

    let brush = InteractionEvent::new(
        line_id.clone(),
        Gesture::Brush1d {
            channel: Channel::X,
            lo: 6.0,
            hi: 8.0,
        },
    );
    let r2 = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some("Show me the average temperature of each U.S. state in the past 10 years (2014-2024), and rank them from hottest to coolest.".into()),
                interaction: Some(brush),
                target_figure: None,
            },
            &mut |_| {},
        )
        .unwrap();
    assert_eq!(r2.error, None);
    let bar_id = r2.figure_ids[0].clone();
    let head = ws.head_state(&ws.session_info(&sid).unwrap().artifact_id).unwrap();
    let bars = head.figure(&bar_id).unwrap();
    assert_eq!(bars.visualization.chart_type, ChartType::Bar);
    assert_eq!(bars.visualization.marks.len(), 50);
    assert_eq!(x_order(&bars.visualization), oracle_ranking(&[6, 7, 8]));
    assert_eq!(head.schemas.len(), 1);

    let winter: Vec<String> = line
        .visualization
        .marks
        .iter()
        .filter(|m| {
            let x = m.channel_values[&Channel::X].as_f64().unwrap() as u32;
            [12, 1, 2].contains(&x)
        })
        .map(|m| m.mark_id.clone())
        .collect();
    assert_eq!(winter.len(), 3);
    let g = ws
        .post_gesture(InteractionEvent::new(line_id.clone(), Gesture::Click { mark_ids: winter }))
        .unwrap();
    assert_eq!(g.updates.len(), 1);
    assert_eq!(g.updates[0].status, UpdateStatus::Updated);
    assert!(g.predicate.columns().contains("month"));
    let head = ws.head_state(&ws.session_info(&sid).unwrap().artifact_id).unwrap();
    let bars = head.figure(&bar_id).unwrap();
    assert_eq!(bars.meta.operation, Operation::CoordinateUpdate);
    assert_eq!(x_order(&bars.visualization), oracle_ranking(&[12, 1, 2]));
    assert_ne!(oracle_ranking(&[12, 1, 2]), oracle_ranking(&[6, 7, 8]));
    let _ = Value::num(0.0);
}

#[test]
fn scenario_helper_agrees() {
    provfig::testkit::climate_scenario().unwrap();
    assert_ne!(provfig::testkit::climate_ranking(&[12, 1, 2]), provfig::testkit::climate_ranking(&[6, 7, 8]));
}
