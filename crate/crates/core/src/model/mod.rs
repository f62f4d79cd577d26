//! Domain types shared by the simulator and the fluid engine.

pub mod file;
pub mod rate;

use std::fmt;

pub use rate::{Piece, PieceKind, RateFunction};

use crate::error::{Error, Result};

/// Slack allowed when checking fluid staffing constraints.
pub const SLACK_TOL: f64 = 1e-9;

/// Class index (0 = class 1, 1 = class 2) or pool index, depending on context.
pub type Idx = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceRates {
    pub mu11: f64,
    pub mu12: f64,
    pub mu21: f64,
    pub mu22: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl ServiceRates {
    /// Service rate of a class-`class` customer in pool `pool` (0-based).
    pub fn mu(&self, class: Idx, pool: Idx) -> f64 {
        match (class, pool) {
            (0, 0) => self.mu11,
            (0, 1) => self.mu12,
            (1, 0) => self.mu21,
            (1, 1) => self.mu22,
            _ => panic!("index out of range: ({class}, {pool})"),
        }
    }

    pub fn theta(&self, class: Idx) -> f64 {
        [self.theta1, self.theta2][class]
    }

    pub fn max_mu(&self) -> f64 {
        self.mu11.max(self.mu12).max(self.mu21).max(self.mu22)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Class i may be sent to pool j only while `Z_{j,i} = 0`.
    FqrTOneWay,
    /// Sharing gated by release thresholds `Z_{j,i} <= tau_{j,i}`.
    FqrArt,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::FqrTOneWay => "fqr-t-one-way",
            ControlMode::FqrArt => "fqr-art",
        }
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fqr-t-one-way" => Ok(ControlMode::FqrTOneWay),
            "fqr-art" => Ok(ControlMode::FqrArt),
            other => Err(Error::Parse(format!(
                "unknown control mode `{other}` (expected `fqr-art` or `fqr-t-one-way`)"
            ))),
        }
    }
}

/// Routing parameters. Thresholds are in fluid scale; the `*_abs` fields
/// optionally override the derived stochastic thresholds with absolute counts.
/// An infinite activation threshold disables sharing in that direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    pub r12: f64,
    pub r21: f64,
    pub k12: f64,
    pub k21: f64,
    pub tau12: f64,
    pub tau21: f64,
    pub mode: ControlMode,
    pub k12_abs: Option<f64>,
    pub k21_abs: Option<f64>,
    pub tau12_abs: Option<f64>,
    pub tau21_abs: Option<f64>,
}

impl ControlParams {
    pub fn new(r: f64, k: f64, tau: f64, mode: ControlMode) -> Self {
        ControlParams {
            r12: r,
            r21: r,
            k12: k,
            k21: k,
            tau12: tau,
            tau21: tau,
            mode,
            k12_abs: None,
            k21_abs: None,
            tau12_abs: None,
            tau21_abs: None,
        }
    }

    pub fn unit_ratios(&self) -> bool {
        self.r12 == 1.0 && self.r21 == 1.0
    }

    /// Stochastic activation threshold for sharing class `from` into the other pool.
    pub fn k_n(&self, from: Idx, n: u64) -> f64 {
        let (k, abs) = if from == 0 {
            (self.k12, self.k12_abs)
        } else {
            (self.k21, self.k21_abs)
        };
        abs.unwrap_or_else(|| scale_threshold(k, n))
    }

    /// Stochastic release threshold `tau^n_{j,i}` guarding sharing of class `from = i`
    /// into pool `j`; it bounds `Z_{j,i}`.
    pub fn tau_n_guarding(&self, from: Idx, n: u64) -> f64 {
        // sharing 1 -> 2 is guarded by tau_21, sharing 2 -> 1 by tau_12
        let (tau, abs) = if from == 0 {
            (self.tau21, self.tau21_abs)
        } else {
            (self.tau12, self.tau12_abs)
        };
        abs.unwrap_or_else(|| scale_threshold(tau, n))
    }

    /// Fluid release threshold guarding sharing of class `from` into the other pool.
    pub fn tau_guarding(&self, from: Idx) -> f64 {
        if from == 0 {
            self.tau21
        } else {
            self.tau12
        }
    }
}

fn scale_threshold(x: f64, n: u64) -> f64 {
    if x.is_finite() {
        (x * n as f64).round()
    } else {
        x
    }
}

/// Fluid state `(q1, q2, z11, z12, z21, z22)`; `z_ij` is class i served in pool j.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FluidState {
    pub q1: f64,
    pub q2: f64,
    pub z11: f64,
    pub z12: f64,
    pub z21: f64,
    pub z22: f64,
}

impl FluidState {
    pub const ZERO: FluidState = FluidState {
        q1: 0.0,
        q2: 0.0,
        z11: 0.0,
        z12: 0.0,
        z21: 0.0,
        z22: 0.0,
    };

    pub fn from_array(a: [f64; 6]) -> Self {
        FluidState {
            q1: a[0],
            q2: a[1],
            z11: a[2],
            z12: a[3],
            z21: a[4],
            z22: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.q1, self.q2, self.z11, self.z12, self.z21, self.z22]
    }

    pub fn q(&self, i: Idx) -> f64 {
        [self.q1, self.q2][i]
    }

    pub fn z(&self, class: Idx, pool: Idx) -> f64 {
        self.to_array()[2 + 2 * class + pool]
    }

    pub fn q_mut(&mut self, i: Idx) -> &mut f64 {
        match i {
            0 => &mut self.q1,
            1 => &mut self.q2,
            _ => panic!("class index out of range: {i}"),
        }
    }

    pub fn z_mut(&mut self, class: Idx, pool: Idx) -> &mut f64 {
        match (class, pool) {
            (0, 0) => &mut self.z11,
            (0, 1) => &mut self.z12,
            (1, 0) => &mut self.z21,
            (1, 1) => &mut self.z22,
            _ => panic!("index out of range: ({class}, {pool})"),
        }
    }

    /// Busy content of pool `j`.
    pub fn pool_busy(&self, pool: Idx) -> f64 {
        self.z(0, pool) + self.z(1, pool)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Invariant violations against staffing levels `m1`, `m2`.
    pub fn problems(&self, m1: f64, m2: f64) -> Vec<String> {
        const NAMES: [&str; 6] = ["q1", "q2", "z11", "z12", "z21", "z22"];
        let mut out = Vec::new();
        for (name, v) in NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() || v < 0.0 {
                out.push(format!(
                    "{name} must be a finite nonnegative number (got {v})"
                ));
            }
        }
        if self.pool_busy(0) > m1 + SLACK_TOL {
            out.push(format!(
                "z11 + z21 = {} exceeds m1 = {m1}",
                self.pool_busy(0)
            ));
        }
        if self.pool_busy(1) > m2 + SLACK_TOL {
            out.push(format!(
                "z12 + z22 = {} exceeds m2 = {m2}",
                self.pool_busy(1)
            ));
        }
        out
    }
}

/// Integer state of the stochastic system; `z[i][j]` counts class i in pool j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimState {
    pub q: [u64; 2],
    pub z: [[u64; 2]; 2],
    /// Agents currently in each pool (busy or idle).
    pub headcount: [u64; 2],
    /// Staffing targets `ceil(m^n_j(t))`.
    pub target: [u64; 2],
}

impl SimState {
    pub fn busy(&self, pool: Idx) -> u64 {
        self.z[0][pool] + self.z[1][pool]
    }

    pub fn idle(&self, pool: Idx) -> u64 {
        self.headcount[pool].saturating_sub(self.busy(pool))
    }

    /// `D_{1,2} = Q1 - r12 Q2 - k^n_{1,2}`.
    pub fn d12(&self, c: &ControlParams, n: u64) -> f64 {
        self.q[0] as f64 - c.r12 * self.q[1] as f64 - c.k_n(0, n)
    }

    /// `D_{2,1} = r21 Q2 - Q1 - k^n_{2,1}`.
    pub fn d21(&self, c: &ControlParams, n: u64) -> f64 {
        c.r21 * self.q[1] as f64 - self.q[0] as f64 - c.k_n(1, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub rates: ServiceRates,
    pub control: ControlParams,
    pub lambda: [RateFunction; 2],
    pub m: [RateFunction; 2],
    pub n: u64,
    pub horizon: f64,
    pub x0: FluidState,
}

impl Scenario {
    pub fn lambda_at(&self, class: Idx, t: f64) -> Result<f64> {
        self.lambda[class].eval(t)
    }

    pub fn m_at(&self, pool: Idx, t: f64) -> Result<f64> {
        self.m[pool].eval(t)
    }

    /// Stochastic staffing target `ceil(n m_j(t))`.
    pub fn staffing_target(&self, pool: Idx, t: f64) -> Result<u64> {
        let v = self.n as f64 * self.m[pool].eval(t)?;
        Ok((v - 1e-9).ceil().max(0.0) as u64)
    }

    /// Sorted interior breakpoints of all rate and staffing functions in `(0, horizon)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .lambda
            .iter()
            .chain(self.m.iter())
            .flat_map(|f| f.breakpoints().collect::<Vec<_>>())
            .filter(|&b| b > rate::BREAK_TOL && b < self.horizon - rate::BREAK_TOL)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= rate::BREAK_TOL);
        out
    }

    /// Copy with every rate and staffing function held at its value at `t`.
    pub fn frozen_at(&self, t: f64) -> Result<Scenario> {
        let mut s = self.clone();
        for i in 0..2 {
            s.lambda[i] = self.lambda[i].frozen_at(t)?;
            s.m[i] = self.m[i].frozen_at(t)?;
        }
        Ok(s)
    }

    /// Errors unless every violation is a zero patience rate. Runs without
    /// abandonment are legitimate experiments even though the strict
    /// invariant asks for positive patience rates.
    pub fn ensure_runnable(&self) -> Result<()> {
        let v: Vec<Violation> = validate_scenario(self)
            .into_iter()
            .filter(|v| v.kind != ViolationKind::ZeroPatience)
            .collect();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonPositiveRate,
    ZeroPatience,
    Control,
    RateFunction,
    Horizon,
    Scale,
    InitialState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Every violated invariant of `s`; empty when the scenario is valid.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    let r = &s.rates;
    for (name, v) in [
        ("mu_11", r.mu11),
        ("mu_12", r.mu12),
        ("mu_21", r.mu21),
        ("mu_22", r.mu22),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            out.push(Violation::new(
                NonPositiveRate,
                format!("{name} must be > 0"),
            ));
        }
    }
    for (name, v) in [("theta_1", r.theta1), ("theta_2", r.theta2)] {
        if v == 0.0 {
            out.push(Violation::new(ZeroPatience, format!("{name} must be > 0")));
        } else if !(v > 0.0 && v.is_finite()) {
            out.push(Violation::new(
                NonPositiveRate,
                format!("{name} must be > 0"),
            ));
        }
    }

    let c = &s.control;
    let mut positive = vec![
        ("r_12", c.r12),
        ("r_21", c.r21),
        ("k_12", c.k12),
        ("k_21", c.k21),
    ];
    if c.mode == ControlMode::FqrArt {
        positive.push(("tau_12", c.tau12));
        positive.push(("tau_21", c.tau21));
    }
    for (name, v) in positive {
        if !(v > 0.0) {
            out.push(Violation::new(Control, format!("{name} must be > 0")));
        }
    }
    for (name, v) in [("r_12", c.r12), ("r_21", c.r21)] {
        if !v.is_finite() {
            out.push(Violation::new(Control, format!("{name} must be finite")));
        }
    }
    for (name, v) in [
        ("k12_abs", c.k12_abs),
        ("k21_abs", c.k21_abs),
        ("tau12_abs", c.tau12_abs),
        ("tau21_abs", c.tau21_abs),
    ] {
        if let Some(v) = v {
            if !(v >= 0.0) {
                out.push(Violation::new(Control, format!("{name} must be >= 0")));
            }
        }
    }

    if !(s.horizon > 0.0 && s.horizon.is_finite()) {
        out.push(Violation::new(Horizon, "horizon must be > 0"));
    }
    if s.n == 0 {
        out.push(Violation::new(Scale, "n must be >= 1"));
    }

    let names = ["lambda_1", "lambda_2", "m_1", "m_2"];
    let mut functions_ok = true;
    for (name, f) in names.iter().zip(s.lambda.iter().chain(s.m.iter())) {
        let problems = f.problems(name);
        functions_ok &= problems.is_empty();
        out.extend(
            problems
                .into_iter()
                .map(|p| Violation::new(RateFunction, p)),
        );
        if let Some((start, end)) = f.domain() {
            if start.abs() > rate::BREAK_TOL || end < s.horizon - rate::BREAK_TOL {
                functions_ok = false;
                out.push(Violation::new(
                    RateFunction,
                    format!(
                        "{name}: domain [{start}, {end}) does not cover [0, {}]",
                        s.horizon
                    ),
                ));
            }
        }
    }

    if functions_ok {
        let m1 = s.m[0].eval(0.0).unwrap_or(f64::NAN);
        let m2 = s.m[1].eval(0.0).unwrap_or(f64::NAN);
        out.extend(
            s.x0.problems(m1, m2)
                .into_iter()
                .map(|p| Violation::new(InitialState, format!("x0: {p}"))),
        );
    }
    out
}

/// `d_{1,2}(x) = q1 - r12 q2 - k12`.
pub fn d12(x: &FluidState, c: &ControlParams) -> f64 {
    x.q1 - c.r12 * x.q2 - c.k12
}

/// `d_{2,1}(x) = r21 q2 - q1 - k21`.
pub fn d21(x: &FluidState, c: &ControlParams) -> f64 {
    c.r21 * x.q2 - x.q1 - c.k21
}

/// `d` for sharing class `from` into the other pool.
pub fn d_dir(x: &FluidState, c: &ControlParams, from: Idx) -> f64 {
    if from == 0 {
        d12(x, c)
    } else {
        d21(x, c)
    }
}

/// Total rate at which busy agents complete service.
pub fn total_service_rate(x: &FluidState, r: &ServiceRates) -> f64 {
    r.mu11 * x.z11 + r.mu12 * x.z12 + r.mu21 * x.z21 + r.mu22 * x.z22
}
