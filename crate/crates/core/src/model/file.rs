//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! [rates]
//! mu11 = 1.0
//! mu12 = 0.8
//! mu21 = 0.8
//! mu22 = 1.0
//! theta1 = 0.5
//! theta2 = 0.5
//!
//! [control]
//! mode = "fqr-art"          # or "fqr-t-one-way"
//! r12 = 1.0
//! r21 = 1.0
//! k12 = 0.3
//! k21 = 0.3
//! tau12 = 0.02              # optional in one-way mode
//! tau21 = 0.02
//! # k12_abs, k21_abs, tau12_abs, tau21_abs: optional absolute overrides
//!
//! [arrivals.class1]
//! pieces = ["0 20 constant 1", "20 40 sinusoid 1.1 0.1 0"]
//! [arrivals.class2]
//! pieces = ["0 40 constant 1"]
//! [staffing.pool1]
//! pieces = ["0 40 constant 1"]
//! [staffing.pool2]
//! pieces = ["0 40 constant 1"]
//!
//! [run]
//! n = 400
//! horizon = 40.0
//! x0 = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]   # q1, q2, z11, z12, z21, z22; optional
//! ```
//!
//! A piece is `"start end constant a"` or `"start end sinusoid a b c"`
//! (value `a + b sin t + c cos t`). Thresholds accept `inf`. Unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{ControlMode, ControlParams, FluidState, Piece, RateFunction, Scenario, ServiceRates};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    rates: RawRates,
    control: RawControl,
    arrivals: RawArrivals,
    staffing: RawStaffing,
    run: RawRun,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    mu11: f64,
    mu12: f64,
    mu21: f64,
    mu22: f64,
    theta1: f64,
    theta2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    mode: String,
    r12: f64,
    r21: f64,
    k12: f64,
    k21: f64,
    tau12: Option<f64>,
    tau21: Option<f64>,
    k12_abs: Option<f64>,
    k21_abs: Option<f64>,
    tau12_abs: Option<f64>,
    tau21_abs: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArrivals {
    class1: RawFunction,
    class2: RawFunction,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStaffing {
    pool1: RawFunction,
    pool2: RawFunction,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    pieces: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    n: u64,
    horizon: f64,
    x0: Option<[f64; 6]>,
}

impl RawFunction {
    fn build(&self, name: &str) -> Result<RateFunction> {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                p.parse::<Piece>()
                    .map_err(|e| Error::Parse(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RateFunction::new(pieces))
    }
}

/// Parses a scenario document. The result is not validated.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mode: ControlMode = raw.control.mode.parse()?;
    let c = &raw.control;
    let tau = |v: Option<f64>, name: &str| -> Result<f64> {
        match (v, mode) {
            (Some(v), _) => Ok(v),
            (None, ControlMode::FqrTOneWay) => Ok(0.0),
            (None, ControlMode::FqrArt) => Err(Error::Parse(format!(
                "control.{name} is required in fqr-art mode"
            ))),
        }
    };
    let control = ControlParams {
        r12: c.r12,
        r21: c.r21,
        k12: c.k12,
        k21: c.k21,
        tau12: tau(c.tau12, "tau12")?,
        tau21: tau(c.tau21, "tau21")?,
        mode,
        k12_abs: c.k12_abs,
        k21_abs: c.k21_abs,
        tau12_abs: c.tau12_abs,
        tau21_abs: c.tau21_abs,
    };
    let r = &raw.rates;
    Ok(Scenario {
        rates: ServiceRates {
            mu11: r.mu11,
            mu12: r.mu12,
            mu21: r.mu21,
            mu22: r.mu22,
            theta1: r.theta1,
            theta2: r.theta2,
        },
        control,
        lambda: [
            raw.arrivals.class1.build("arrivals.class1")?,
            raw.arrivals.class2.build("arrivals.class2")?,
        ],
        m: [
            raw.staffing.pool1.build("staffing.pool1")?,
            raw.staffing.pool2.build("staffing.pool2")?,
        ],
        n: raw.run.n,
        horizon: raw.run.horizon,
        x0: raw.run.x0.map(FluidState::from_array).unwrap_or_default(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:?}")
    }
}

fn write_function(out: &mut String, header: &str, f: &RateFunction) {
    let pieces: Vec<String> = f.pieces().iter().map(|p| format!("\"{p}\"")).collect();
    let _ = writeln!(out, "\n[{header}]\npieces = [{}]", pieces.join(", "));
}

/// Serializes a scenario in the format accepted by [`parse_scenario`].
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let r = &s.rates;
    let _ = writeln!(out, "[rates]");
    for (k, v) in [
        ("mu11", r.mu11),
        ("mu12", r.mu12),
        ("mu21", r.mu21),
        ("mu22", r.mu22),
        ("theta1", r.theta1),
        ("theta2", r.theta2),
    ] {
        let _ = writeln!(out, "{k} = {}", num(v));
    }
    let c = &s.control;
    let _ = writeln!(out, "\n[control]\nmode = \"{}\"", c.mode);
    for (k, v) in [
        ("r12", c.r12),
        ("r21", c.r21),
        ("k12", c.k12),
        ("k21", c.k21),
        ("tau12", c.tau12),
        ("tau21", c.tau21),
    ] {
        let _ = writeln!(out, "{k} = {}", num(v));
    }
    for (k, v) in [
        ("k12_abs", c.k12_abs),
        ("k21_abs", c.k21_abs),
        ("tau12_abs", c.tau12_abs),
        ("tau21_abs", c.tau21_abs),
    ] {
        if let Some(v) = v {
            let _ = writeln!(out, "{k} = {}", num(v));
        }
    }
    write_function(&mut out, "arrivals.class1", &s.lambda[0]);
    write_function(&mut out, "arrivals.class2", &s.lambda[1]);
    write_function(&mut out, "staffing.pool1", &s.m[0]);
    write_function(&mut out, "staffing.pool2", &s.m[1]);
    let x0: Vec<String> = s.x0.to_array().iter().map(|&v| num(v)).collect();
    let _ = writeln!(
        out,
        "\n[run]\nn = {}\nhorizon = {}\nx0 = [{}]",
        s.n,
        num(s.horizon),
        x0.join(", ")
    );
    out
}

/// Hex SHA-256 of the canonical serialization.
pub fn scenario_hash(s: &Scenario) -> String {
    format!("{:x}", Sha256::digest(serialize_scenario(s).as_bytes()))
}
