use hdevcs::generate::{generate_fleet, FleetGenParams, ObjectiveMode};
use hdevcs::io::scenario_file::{EventDoc, RhDoc, ScenarioFile};
use hdevcs::io::IoError;
use proptest::prelude::*;

fn roundtrip(file: &ScenarioFile) -> ScenarioFile {
    let dir = tempfile::tempdir().unwrap();
    file.save(dir.path()).unwrap();
    ScenarioFile::load(dir.path()).unwrap()
}

#[test]
fn system1_bundle_roundtrips_exactly() {
    let params = FleetGenParams::system1(11);
    let file = ScenarioFile {
        scenario: generate_fleet(&params).unwrap(),
        seed: Some(11),
        generation: Some(params),
        rh: Some(RhDoc {
            window: 12,
            total_steps: 37,
            warm_start: true,
            events: vec![EventDoc {
                step: 4,
                agent: "evb:3".into(),
                objective: "constant_power".into(),
            }],
        }),
    };
    assert_eq!(roundtrip(&file), file);
}

#[test]
fn schema_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let file = ScenarioFile::new(generate_fleet(&FleetGenParams::fixture(0)).unwrap());
    file.save(dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(ScenarioFile::load(dir.path()), Err(IoError::Manifest(_))));
}

#[test]
fn missing_rows_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = ScenarioFile::new(generate_fleet(&FleetGenParams::fixture(0)).unwrap());
    file.save(dir.path()).unwrap();
    let path = dir.path().join("netload.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| *l != text.lines().nth(3).unwrap()).collect();
    std::fs::write(&path, kept.join("\n")).unwrap();
    assert!(matches!(ScenarioFile::load(dir.path()), Err(IoError::Gap { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_fixtures_roundtrip(seed in 0u64..10_000, mode in 0usize..3) {
        let objective = [ObjectiveMode::Cr, ObjectiveMode::CrBdr, ObjectiveMode::Mixed][mode];
        let params = FleetGenParams::fixture(seed).with_objective(objective);
        let file = ScenarioFile {
            scenario: generate_fleet(&params).unwrap(),
            seed: Some(seed),
            generation: Some(params),
            rh: None,
        };
        prop_assert_eq!(roundtrip(&file), file);
    }
}
