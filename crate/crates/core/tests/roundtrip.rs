//! Gesture → predicate → rows agrees with the marks the gesture covers, for every chart
//! type and gesture kind.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provfig::interaction::{gesture_to_predicate, interaction_to_predicate};
use provfig::testkit::{expected_mark_rows, figure_with_gesture, geometric_selection, random_catalog, rows_satisfying, GESTURE_KINDS};
use provfig::{ChartType, Gesture, InteractionEvent, InteractionKind};

fn chart_strategy() -> impl Strategy<Value = ChartType> {
    prop::sample::select(ChartType::ALL.to_vec())
}

fn kind_strategy() -> impl Strategy<Value = InteractionKind> {
    prop::sample::select(GESTURE_KINDS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn predicate_rows_equal_covered_rows(seed in any::<u64>(), rows in 1usize..400, chart in chart_strategy(), kind in kind_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(&mut rng, rows);
        let Some((fig, g)) = figure_with_gesture(&mut rng, &catalog, chart, kind, "f1") else {
            return Err(TestCaseError::reject("no figure supports this gesture"));
        };
        let map = fig.mark_map().unwrap();
        let ev = InteractionEvent { figure_id: "f1".into(), gesture: g.clone(), at: provfig::testkit::fixed_time() };
        let p = interaction_to_predicate(&ev, &map, &fig.visualization, &fig.data).unwrap();
        prop_assert_eq!(rows_satisfying(&fig.data, &p), geometric_selection(&fig, &g), "{:?} on {:?}: {}", g, fig.actions(), p);
        match &g {
            Gesture::Click { .. } => prop_assert!(p.atoms.iter().all(|a| !a.is_range())),
            Gesture::Brush1d { .. } => prop_assert!(p.atoms.iter().all(|a| !a.is_membership())),
            Gesture::Brush2d { .. } if !matches!(chart, ChartType::Pie | ChartType::Table) => {
                prop_assert!(p.atoms.iter().all(|a| !a.is_membership()))
            }
            _ => {}
        }
    }

    #[test]
    fn marks_partition_the_rows(seed in any::<u64>(), rows in 1usize..300, chart in chart_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(&mut rng, rows);
        let Some(fig) = provfig::testkit::random_figure(&mut rng, &catalog, chart, "f1") else {
            return Err(TestCaseError::reject("no figure"));
        };
        fig.check().unwrap();
        let got: BTreeSet<_> = fig.visualization.marks.iter().map(|m| m.row_keys.clone()).collect();
        prop_assert_eq!(got.len(), fig.visualization.marks.len());
        prop_assert_eq!(got, expected_mark_rows(&fig.visualization, &fig.data));
        // Marks are a pure function of chart and data.
        let (again, _) = provfig::materialize_marks(&fig.visualization, &fig.data).unwrap();
        prop_assert_eq!(&again, &fig.visualization.marks);
    }
}

#[test]
fn wrong_figure_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let catalog = random_catalog(&mut rng, 50);
    let (fig, g) = figure_with_gesture(&mut rng, &catalog, ChartType::Bar, InteractionKind::SingleSelect, "f1").unwrap();
    let map = fig.mark_map().unwrap();
    let ev = InteractionEvent { figure_id: "other".into(), gesture: g, at: provfig::testkit::fixed_time() };
    assert!(interaction_to_predicate(&ev, &map, &fig.visualization, &fig.data).is_err());
}

#[test]
fn inverted_bounds_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let catalog = random_catalog(&mut rng, 50);
    let (fig, _) = figure_with_gesture(&mut rng, &catalog, ChartType::Scatter, InteractionKind::Interval2d, "f1").unwrap();
    let map = fig.mark_map().unwrap();
    let g = Gesture::Brush2d { x_lo: 2.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
    assert!(gesture_to_predicate(&g, &map, &fig.visualization, &fig.data).is_err());
    let g = Gesture::Brush1d { channel: provfig::Channel::X, lo: f64::NAN, hi: 1.0 };
    assert!(gesture_to_predicate(&g, &map, &fig.visualization, &fig.data).is_err());
}
