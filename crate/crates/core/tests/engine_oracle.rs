//! The engine against the row-at-a-time evaluator over random plans.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use provfig::eval::{parse_suite, BUNDLED_SUITE};
use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::testkit::{random_catalog, random_plan};
use provfig::{compute_digest, execute_plan, reference_execute, rounded_digest};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn engine_matches_reference(seed in any::<u64>(), rows in 0usize..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(&mut rng, rows);
        let plan = random_plan(&mut rng, &catalog);
        let got = execute_plan(&plan, &catalog);
        let want = reference_execute(&plan, &catalog);
        match (got, want) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.schema, &b.schema, "{}", plan.to_sql());
                prop_assert_eq!(rounded_digest(&a), rounded_digest(&b), "{}", plan.to_sql());
                prop_assert_eq!(a.row_keys(), b.row_keys(), "{}", plan.to_sql());
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{}: engine {:?} vs reference {:?}", plan.to_sql(), a.err(), b.err()),
        }
    }

    #[test]
    fn execution_is_deterministic_with_full_lineage(seed in any::<u64>(), rows in 1usize..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(&mut rng, rows);
        let plan = random_plan(&mut rng, &catalog);
        if let Ok(a) = execute_plan(&plan, &catalog) {
            let b = execute_plan(&plan, &catalog).unwrap();
            prop_assert_eq!(compute_digest(&a), compute_digest(&b));
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.lineage.sources.clone(), plan.sources());
            prop_assert!(!a.lineage.predicate.is_empty());
            prop_assert!(a.lineage.transforms.len() >= plan.sources().len());
        }
    }
}

#[test]
fn bundled_suite_plans_match_reference() {
    let catalog = demo_catalog(DemoSeeds::default()).unwrap();
    let cases = parse_suite(BUNDLED_SUITE).unwrap();
    let mut n = 0;
    for c in &cases {
        let mut plans = vec![&c.initial.oracle_plan, &c.followup.oracle_plan];
        if let Some(k) = &c.coordination {
            plans.push(&k.oracle_plan);
        }
        for p in plans {
            let a = execute_plan(p, &catalog).unwrap();
            let b = reference_execute(p, &catalog).unwrap();
            assert_eq!(rounded_digest(&a), rounded_digest(&b), "{}: {}", c.case_id, p.to_sql());
            n += 1;
        }
    }
    assert_eq!(n, 180);
}
