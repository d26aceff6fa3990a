use heritage_core::assessor::{
    generate_assessment, mock_respond, parse_assessment, to_json_string, FaultMode, FieldKind, SCHEMA,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_fault_is_rejected_naming_its_field() {
    let modes = FaultMode::all();
    let numeric = SCHEMA.iter().filter(|s| s.kind.is_numeric()).count();
    let categorical = SCHEMA.iter().filter(|s| s.kind.is_categorical()).count();
    assert_eq!(modes.len(), 2 + SCHEMA.len() + numeric + categorical);
    for seed in 0..20u64 {
        for m in &modes {
            let raw = mock_respond(seed, Some(*m), "h");
            let errs = parse_assessment(&raw).expect_err(&format!("{m} accepted"));
            assert!(errs.iter().any(|e| e.field == m.expected_field()), "{m}: {errs:?}");
        }
    }
}

#[test]
fn choice_fields_without_na_reject_na() {
    for s in SCHEMA.iter().filter(|s| matches!(s.kind, FieldKind::Choice { na: false, .. })) {
        let mut v: serde_json::Value = serde_json::from_str(mock_respond(1, None, "h")
            .trim_start_matches("```json").trim_end_matches("```")).unwrap();
        v[s.name] = "N/A".into();
        let errs = parse_assessment(&v.to_string()).unwrap_err();
        assert!(errs.iter().any(|e| e.field == s.name), "{}: {errs:?}", s.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn valid_responses_are_accepted(seed in any::<u64>()) {
        prop_assert!(parse_assessment(&mock_respond(seed, None, "h")).is_ok());
    }

    #[test]
    fn serialize_parse_round_trip(seed in any::<u64>()) {
        let a = generate_assessment(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(parse_assessment(&to_json_string(&a)).unwrap(), a);
    }
}
