use std::path::PathBuf;

use xfluid_core::model::file::{load_scenario, parse_scenario, scenario_hash, serialize_scenario};
use xfluid_core::{validate_scenario, Piece, ViolationKind};

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn seven_scenarios_ship() {
    let names: Vec<String> = shipped()
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "oscillation_aband",
            "oscillation_extreme",
            "oscillation_k35",
            "release_threshold",
            "single_overload",
            "sinusoidal",
            "switching"
        ]
    );
}

#[test]
fn roundtrip_is_identity() {
    for path in shipped() {
        let s = load_scenario(&path).unwrap();
        let text = serialize_scenario(&s);
        let back = parse_scenario(&text).unwrap();
        assert_eq!(back, s, "{}", path.display());
        assert_eq!(serialize_scenario(&back), text);
        assert_eq!(scenario_hash(&back), scenario_hash(&s));
    }
}

#[test]
fn only_zero_patience_is_flagged() {
    for path in shipped() {
        let s = load_scenario(&path).unwrap();
        let v = validate_scenario(&s);
        assert!(
            v.iter().all(|v| v.kind == ViolationKind::ZeroPatience),
            "{}: {v:?}",
            path.display()
        );
        let extreme = path.ends_with("oscillation_extreme.toml");
        assert_eq!(!v.is_empty(), extreme, "{}", path.display());
        s.ensure_runnable().unwrap();
    }
}

#[test]
fn switching_covers_both_overloads() {
    let s = load_scenario(
        &shipped()
            .into_iter()
            .find(|p| p.ends_with("switching.toml"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(s.breakpoints(), vec![20.0]);
    assert_eq!(
        s.lambda[1].pieces().to_vec(),
        vec![
            Piece::constant(0.0, 20.0, 1.0),
            Piece::constant(20.0, 40.0, 1.4)
        ]
    );
}
