//! The staged weight presets under `configs/` stay loadable as partial
//! energy-spec JSON and keep their intended schedule: stage 1 aligns to the
//! supervision terms with landmarks off, stages 2 and 3 re-enable landmarks.

use std::path::PathBuf;

use skelfit_core::EnergySpec;

fn load(name: &str) -> EnergySpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let spec: EnergySpec = serde_json::from_str(&text).expect("parse");
    spec.validate().expect("valid");
    spec
}

#[test]
fn stage_presets_load_and_follow_the_schedule() {
    let defaults = EnergySpec::default();
    let s1 = load("stage1.json");
    let s2 = load("stage2.json");
    let s3 = load("stage3.json");

    assert_eq!(s1.lambda_l, 0.0, "stage 1 runs without the landmark term");
    assert!(s2.lambda_l > 0.0 && s3.lambda_l > 0.0);
    assert!(
        s3.lambda_l < s2.lambda_l,
        "stage 3 relaxes the landmark weight"
    );

    assert!(
        s1.lambda_r > 0.0 && s1.lambda_t > 0.0,
        "stage 1 is supervision-driven"
    );
    assert_eq!(s1.lambda_r, s2.lambda_r);
    assert_eq!(s1.lambda_t, s2.lambda_t);

    // Unspecified fields fall back to the defaults.
    for spec in [&s1, &s2, &s3] {
        assert_eq!(spec.lambda_ct, defaults.lambda_ct);
        assert_eq!(spec.lambda_j, defaults.lambda_j);
        assert_eq!(spec.lambda_clv, defaults.lambda_clv);
        assert_eq!(spec.robust, defaults.robust);
    }
    assert_eq!(s3.lambda_r, defaults.lambda_r);
    assert_eq!(s3.lambda_t, defaults.lambda_t);
}
