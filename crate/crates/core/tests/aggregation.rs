mod support;

use heritage_core::config::PipelineConfig;
use heritage_core::heritage::{aggregate_per_epc, filter_visibility};
use proptest::prelude::*;
use support::{aggregation_fixture, oracle_aggregate};

fn check(seed: u64, n_records: usize, n_epcs: usize) -> Result<(), TestCaseError> {
    let cfg = PipelineConfig::default();
    let (records, epcs) = aggregation_fixture(seed, n_records, n_epcs);
    let (visible, excluded) = filter_visibility(&records, &cfg);
    prop_assert_eq!(visible.len() + excluded.len(), records.len());
    let agg = aggregate_per_epc(&visible, &epcs, &[]);
    let oracle = oracle_aggregate(&records, &epcs, cfg.visibility_min as u8);
    prop_assert_eq!(agg.epcs.len(), oracle.len());
    for e in &agg.epcs {
        let (max, image, n) = &oracle[&e.epc_id];
        prop_assert_eq!(&e.predicted_heritage_value, max);
        prop_assert_eq!(&e.best_observation.as_ref().map(|o| o.image_id.clone()), image);
        prop_assert_eq!(&e.n_observations, n);
    }
    let linked = visible.iter().filter(|r| r.epc_id.as_deref().is_some_and(|id| oracle.contains_key(id))).count();
    prop_assert_eq!(agg.residuals.len(), visible.len() - linked);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_epc_max_matches_group_by(seed in any::<u64>(), n_epcs in 1usize..300) {
        check(seed, 1000, n_epcs)?;
    }
}

#[test]
fn visibility_limit_is_inclusive() {
    let cfg = PipelineConfig::default();
    let (records, _) = aggregation_fixture(3, 1000, 50);
    let (visible, _) = filter_visibility(&records, &cfg);
    let vis = |v: u8| records.iter().filter(|r| r.visibility() == Some(v)).count();
    let kept = |v: u8| visible.iter().filter(|r| r.visibility() == Some(v)).count();
    assert!(vis(49) > 0 && vis(50) > 0);
    assert_eq!(kept(49), 0);
    assert_eq!(kept(50), vis(50));
}
