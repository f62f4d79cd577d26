use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xfluid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfluid"))
        .args(args)
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn thresholds_example() {
    let o = xfluid(&[
        "thresholds",
        "--mu11",
        "1",
        "--mu21",
        "0.5",
        "--theta1",
        "0.5",
        "--tau21",
        "0.01",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).lines().next().unwrap(),
        "T=9.2103, q1(T)=0.0660, recommend k21 > 0.066"
    );
    assert!(stdout(&o).contains("1.01"));
}

#[test]
fn inspect_example_state() {
    let o = xfluid(&[
        "inspect",
        &scenario("single_overload"),
        "--t",
        "25",
        "--state",
        "0.5,0.2,1,0.3,0,0.7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for want in [
        "delta+  = -1.6900",
        "delta-  = 0.1900",
        "class   = Ergodic",
        "pi      = 0.1011",
    ] {
        assert!(out.contains(want), "missing {want:?} in\n{out}");
    }
}

#[test]
fn missing_scenario_is_io_error() {
    let o = xfluid(&["fluid", "no/such/file.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario not found"));
}

#[test]
fn unequal_ratio_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("single_overload"))
        .unwrap()
        .replace("r12 = 1.0", "r12 = 1.5");
    let path = dir.path().join("r.toml");
    fs::write(&path, text).unwrap();
    let o = xfluid(&["fluid", p(&path), "-o", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("fluid Pi unsupported for ratio != 1"));
}

#[test]
fn invalid_scenarios_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let base = fs::read_to_string(scenario("single_overload")).unwrap();
    fs::write(&path, base.replace("mu11 = 1.0", "mu11 = -1.0")).unwrap();
    assert_eq!(xfluid(&["fluid", p(&path)]).status.code(), Some(4));
    fs::write(&path, base.replace("[run]", "[run]\nextra = 1")).unwrap();
    assert_eq!(xfluid(&["fluid", p(&path)]).status.code(), Some(4));
}

#[test]
fn bad_step_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = xfluid(&[
        "fluid",
        &scenario("single_overload"),
        "-h",
        "0.3",
        "-o",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn zero_patience_warns_but_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = xfluid(&[
        "fluid",
        &scenario("oscillation_extreme"),
        "-h",
        "0.01",
        "-o",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn fluid_writes_csv_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let o = xfluid(&[
        "fluid",
        &scenario("single_overload"),
        "-h",
        "0.001",
        "-o",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("fluid.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,q1,q2,z11,z12,z21,z22,pi12,pi21,regime,d12,d21"
    );
    assert_eq!(csv.lines().count(), 60_002);
    let worst = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect::<Vec<_>>())
        .filter(|c| {
            let t: f64 = c[0].parse().unwrap();
            (25.0..40.0).contains(&t)
        })
        .map(|c| c[10].parse::<f64>().unwrap().abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "{worst}");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fluid.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["scenario_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = xfluid(&[
            "simulate",
            &scenario("single_overload"),
            "-R",
            "1",
            "--seed",
            "42",
            "-n",
            "50",
            "-o",
            p(dir.path()),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["ensemble.csv", "ensemble_std.csv", "ensemble.meta.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("ensemble.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 42);
    assert_eq!(meta["n"], 50);
}

#[test]
fn simulate_accepts_unequal_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("single_overload"))
        .unwrap()
        .replace("r12 = 1.0", "r12 = 1.5");
    let path = dir.path().join("r.toml");
    fs::write(&path, text).unwrap();
    let o = xfluid(&[
        "simulate",
        p(&path),
        "-R",
        "2",
        "-n",
        "20",
        "-o",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn compare_end_to_end_and_grid_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let sc = scenario("switching");
    assert!(xfluid(&["fluid", &sc, "-h", "0.01", "-o", d])
        .status
        .success());
    assert!(xfluid(&["simulate", &sc, "-R", "20", "-n", "100", "-o", d])
        .status
        .success());
    let fluid = dir.path().join("fluid.csv");
    let ens = dir.path().join("ensemble.csv");
    let o = xfluid(&[
        "compare",
        &sc,
        "--fluid",
        p(&fluid),
        "--ensemble",
        p(&ens),
        "-o",
        d,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("[20, 21)"));
    assert!(dir.path().join("compare.csv").exists());

    let coarse = dir.path().join("coarse");
    assert!(xfluid(&["fluid", &sc, "-h", "0.5", "-o", p(&coarse)])
        .status
        .success());
    let o = xfluid(&[
        "compare",
        &sc,
        "--fluid",
        p(&coarse.join("fluid.csv")),
        "--ensemble",
        p(&ens),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("grid mismatch"));
}

#[test]
fn larger_systems_are_less_noisy() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("single_overload");
    let mut spread = Vec::new();
    for n in ["50", "400"] {
        let out = dir.path().join(n);
        assert!(
            xfluid(&["simulate", &sc, "-R", "50", "-n", n, "-o", p(&out)])
                .status
                .success()
        );
        let text = fs::read_to_string(out.join("ensemble_std.csv")).unwrap();
        let q1_std: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        spread.push(q1_std);
    }
    assert!(spread[0] > 2.0 * spread[1], "{spread:?}");
}
