//! The fluid model: regime classification and the right-hand side.
//!
//! When both pools are full, agents freed in pool j take the head of queue i
//! with probability `Pi_{i,j}` supplied by the averaging principle (see
//! [`crate::ftsp`]). Agents become available in a full pool at rate
//! `A_j = (completions in pool j) + m_j'(t)`, so that busy content keeps
//! tracking a time-varying staffing level. A pool with idle capacity admits
//! its own class directly and, while the other queue sits at its activation
//! threshold, the excess inflow of that queue. An overstaffed pool admits
//! nobody until service completions bring it back to its staffing level.

pub mod closed_form;
pub mod solver;

use std::fmt;

use crate::error::Result;
use crate::ftsp::{big_pi_with, pool_completion_rates, release_open};
use crate::model::{d12, d21, FluidState, Idx, Scenario};

pub use solver::{euler_solve, FluidPoint, FluidTrajectory, Integrator};

/// Tolerance for deciding that a pool is exactly at its staffing level.
pub const EPS_FULL: f64 = 1e-9;
/// Negative coordinates down to this size are rounding and get clamped to 0.
pub const EPS_NEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolStatus {
    Full,
    Slack,
    Overstaffed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeTag {
    BothFull,
    Slack1,
    Slack2,
    SlackBoth,
    Overstaffed1,
    Overstaffed2,
}

impl RegimeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeTag::BothFull => "BOTH_FULL",
            RegimeTag::Slack1 => "SLACK_1",
            RegimeTag::Slack2 => "SLACK_2",
            RegimeTag::SlackBoth => "SLACK_BOTH",
            RegimeTag::Overstaffed1 => "OVERSTAFFED_1",
            RegimeTag::Overstaffed2 => "OVERSTAFFED_2",
        }
    }
}

impl std::str::FromStr for RegimeTag {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        use RegimeTag::*;
        [
            BothFull,
            Slack1,
            Slack2,
            SlackBoth,
            Overstaffed1,
            Overstaffed2,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| crate::error::Error::Parse(format!("unknown regime `{s}`")))
    }
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    pub tag: RegimeTag,
    pub pools: [PoolStatus; 2],
}

pub fn pool_status(busy: f64, m: f64) -> PoolStatus {
    if busy > m + EPS_FULL {
        PoolStatus::Overstaffed
    } else if busy >= m - EPS_FULL {
        PoolStatus::Full
    } else {
        PoolStatus::Slack
    }
}

pub fn classify_regime(x: &FluidState, t: f64, s: &Scenario) -> Result<Regime> {
    use PoolStatus::*;
    let pools = [
        pool_status(x.pool_busy(0), s.m_at(0, t)?),
        pool_status(x.pool_busy(1), s.m_at(1, t)?),
    ];
    let tag = match pools {
        [Overstaffed, _] => RegimeTag::Overstaffed1,
        [_, Overstaffed] => RegimeTag::Overstaffed2,
        [Full, Full] => RegimeTag::BothFull,
        [Slack, Full] => RegimeTag::Slack1,
        [Full, Slack] => RegimeTag::Slack2,
        [Slack, Slack] => RegimeTag::SlackBoth,
    };
    Ok(Regime { tag, pools })
}

/// Right-hand side at one state, with the flows behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhsEval {
    pub dx: FluidState,
    pub regime: Regime,
    /// `pi[i]`: fraction of the other pool's freed capacity given to class i
    /// (1 while class i overflows into an idle pool).
    pub pi: [f64; 2],
    /// `adm[i][j]`: rate at which class i enters service in pool j.
    pub adm: [[f64; 2]; 2],
    /// Pools whose busy content follows the staffing level over the step.
    pub tracks_m: [bool; 2],
}

impl RhsEval {
    pub fn sup_norm(&self) -> f64 {
        self.dx.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Time derivative of the fluid state. `on_boundary[i]` marks the state as
/// sitting on the boundary `d = 0` for sharing class i into the other pool.
pub fn rhs(x: &FluidState, t: f64, s: &Scenario, on_boundary: [bool; 2]) -> Result<RhsEval> {
    use PoolStatus::*;
    let regime = classify_regime(x, t, s)?;
    let st = regime.pools;
    let r = &s.rates;
    let lambda = [s.lambda_at(0, t)?, s.lambda_at(1, t)?];
    let mdot = [s.m[0].derivative(t)?, s.m[1].derivative(t)?];
    let completions = pool_completion_rates(x, r);
    let d = [d12(x, &s.control), d21(x, &s.control)];

    let mut avail = [0.0; 2];
    let mut tracks_m = [false; 2];
    for j in 0..2 {
        if st[j] == Full {
            let a = completions[j] + mdot[j];
            avail[j] = a.max(0.0);
            tracks_m[j] = a >= 0.0;
        }
    }

    // sharing fractions in full pools
    let mut pi = [0.0; 2];
    for i in 0..2 {
        let j = 1 - i;
        if st[j] == Full && st[i] != Slack {
            pi[i] = big_pi_with(x, t, s, i, d[i], on_boundary[i], avail)?;
        }
    }
    if pi[0] > 0.0 && pi[1] > 0.0 {
        // only reachable with unequal ratios; larger d wins, ties to class 1
        let loser = if d[0] >= d[1] { 1 } else { 0 };
        pi[loser] = 0.0;
    }

    let mut from_queue = [[0.0; 2]; 2];
    let mut queue_in = [0.0; 2];
    let mut direct = [0.0; 2];
    for i in 0..2 {
        if st[i] == Slack {
            direct[i] = lambda[i];
        } else {
            queue_in[i] = lambda[i];
        }
    }
    for j in 0..2 {
        if st[j] == Full {
            let i = 1 - j;
            from_queue[i][j] = pi[i] * avail[j];
            from_queue[j][j] = (1.0 - pi[i]) * avail[j];
        }
    }

    // overflow into a pool with idle capacity
    for i in 0..2 {
        let j = 1 - i;
        if st[j] != Slack || st[i] == Slack {
            continue;
        }
        if !(d[i] > 0.0 || on_boundary[i]) || !release_open(x, s, i) {
            continue;
        }
        let net = queue_in[i] - r.theta(i) * x.q(i) - from_queue[i][0] - from_queue[i][1];
        if net > 0.0 {
            from_queue[i][j] += net;
            pi[i] = 1.0;
        }
    }

    let mut dq = [0.0; 2];
    for i in 0..2 {
        dq[i] = queue_in[i] - r.theta(i) * x.q(i) - from_queue[i][0] - from_queue[i][1];
        if x.q(i) <= 0.0 && dq[i] < 0.0 {
            // an empty queue cannot feed its admissions; the agents stay idle
            let mut deficit = -dq[i];
            for j in [i, 1 - i] {
                let cut = deficit.min(from_queue[i][j]);
                if cut > 0.0 {
                    from_queue[i][j] -= cut;
                    deficit -= cut;
                    tracks_m[j] = false;
                }
            }
            dq[i] = 0.0;
        }
    }

    let mut adm = from_queue;
    for i in 0..2 {
        adm[i][i] += direct[i];
    }
    let dz = |i: Idx, j: Idx| adm[i][j] - r.mu(i, j) * x.z(i, j);
    let dx = FluidState {
        q1: dq[0],
        q2: dq[1],
        z11: dz(0, 0),
        z12: dz(0, 1),
        z21: dz(1, 0),
        z22: dz(1, 1),
    };
    Ok(RhsEval {
        dx,
        regime,
        pi,
        adm,
        tracks_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::base;
    use crate::model::{Piece, RateFunction};
    use approx::assert_abs_diff_eq;

    #[test]
    fn regimes() {
        let s = base(1.0, 1.0, 40.0);
        let full = FluidState {
            z11: 1.0,
            z22: 1.0,
            ..FluidState::ZERO
        };
        assert_eq!(
            classify_regime(&full, 0.0, &s).unwrap().tag,
            RegimeTag::BothFull
        );
        let slack1 = FluidState { z11: 0.9, ..full };
        assert_eq!(
            classify_regime(&slack1, 0.0, &s).unwrap().tag,
            RegimeTag::Slack1
        );
        let mut jump = s.clone();
        jump.m[0] = RateFunction::new(vec![
            Piece::constant(0.0, 20.0, 1.05),
            Piece::constant(20.0, 40.0, 1.0),
        ]);
        let x = FluidState {
            z11: 1.05,
            z22: 1.0,
            ..FluidState::ZERO
        };
        assert_eq!(
            classify_regime(&x, 19.0, &jump).unwrap().tag,
            RegimeTag::BothFull
        );
        assert_eq!(
            classify_regime(&x, 20.0, &jump).unwrap().tag,
            RegimeTag::Overstaffed1
        );
    }

    #[test]
    fn both_full_without_sharing() {
        let s = base(1.4, 1.0, 40.0);
        let x = FluidState {
            q1: 0.2,
            q2: 0.1,
            z11: 0.9,
            z12: 0.0,
            z21: 0.1,
            z22: 1.0,
        };
        let ev = rhs(&x, 0.0, &s, [false; 2]).unwrap();
        assert_eq!(ev.pi, [0.0, 0.0]);
        assert_abs_diff_eq!(
            ev.dx.q1,
            1.4 - 0.5 * 0.2 - (0.9 + 0.8 * 0.1),
            epsilon = 1e-14
        );
        // busy content stays at the staffing level
        assert_abs_diff_eq!(ev.dx.z11 + ev.dx.z21, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ev.dx.z12 + ev.dx.z22, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn fixed_point_of_single_overload() {
        let s = base(1.4, 1.0, 40.0);
        let sh = 5.0 / 36.0;
        let x = FluidState {
            q1: 0.8 - 1.6 * sh,
            q2: 2.0 * sh,
            z11: 1.0,
            z12: sh,
            z21: 0.0,
            z22: 1.0 - sh,
        };
        let ev = rhs(&x, 0.0, &s, [true, false]).unwrap();
        assert!(ev.sup_norm() < 1e-9, "{:?}", ev.dx);
        assert_abs_diff_eq!(ev.pi[0], 4.0 / 35.0, epsilon = 1e-12);
        // balance of pool 2
        assert_abs_diff_eq!(
            ev.pi[0] * 1.0 * x.z22,
            (1.0 - ev.pi[0]) * 0.8 * x.z12,
            epsilon = 1e-12
        );
    }

    #[test]
    fn slack_both_is_erlang() {
        let s = base(0.5, 0.7, 10.0);
        let x = FluidState {
            z11: 0.3,
            z22: 0.2,
            z12: 0.1,
            ..FluidState::ZERO
        };
        let ev = rhs(&x, 0.0, &s, [false; 2]).unwrap();
        assert_eq!(ev.regime.tag, RegimeTag::SlackBoth);
        assert_abs_diff_eq!(ev.dx.z11, 0.5 - 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.dx.z22, 0.7 - 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.dx.z12, -0.08, epsilon = 1e-15);
        assert_eq!(ev.dx.q1, 0.0);
    }

    #[test]
    fn overflow_into_slack_pool() {
        let s = base(1.4, 0.5, 10.0);
        let x = FluidState {
            q1: 0.3,
            q2: 0.0,
            z11: 1.0,
            z12: 0.0,
            z21: 0.0,
            z22: 0.5,
        };
        let ev = rhs(&x, 0.0, &s, [true, false]).unwrap();
        assert_eq!(ev.regime.tag, RegimeTag::Slack2);
        // excess of class 1 at the threshold: 1.4 - 0.5 * 0.3 - 1
        assert_abs_diff_eq!(ev.dx.z12, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(ev.dx.q1, 0.0, epsilon = 1e-14);
        let off = rhs(&x, 0.0, &s, [false, false]).unwrap();
        assert_abs_diff_eq!(off.dx.q1, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn overstaffed_pool_only_drains() {
        let mut s = base(1.0, 1.0, 40.0);
        s.m[0] = RateFunction::new(vec![
            Piece::constant(0.0, 20.0, 1.05),
            Piece::constant(20.0, 40.0, 1.0),
        ]);
        let x = FluidState {
            q1: 0.1,
            z11: 1.0,
            z21: 0.05,
            z22: 1.0,
            ..FluidState::ZERO
        };
        let ev = rhs(&x, 20.0, &s, [false; 2]).unwrap();
        assert_eq!(ev.regime.tag, RegimeTag::Overstaffed1);
        assert_abs_diff_eq!(ev.dx.z11, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.dx.z21, -0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.dx.q1, 1.0 - 0.05, epsilon = 1e-15);
    }

    #[test]
    fn empty_queue_in_full_pool_goes_slack() {
        let s = base(0.5, 1.0, 10.0);
        let x = FluidState {
            z11: 1.0,
            z22: 1.0,
            ..FluidState::ZERO
        };
        let ev = rhs(&x, 0.0, &s, [false; 2]).unwrap();
        assert_eq!(ev.dx.q1, 0.0);
        assert_abs_diff_eq!(ev.dx.z11, -0.5, epsilon = 1e-15);
        assert!(!ev.tracks_m[0]);
        assert!(ev.tracks_m[1]);
    }

    #[test]
    fn staffing_derivative_enters_availability() {
        let mut s = base(1.3, 1.0, 20.0);
        s.m[0] = RateFunction::new(vec![Piece::sinusoid(0.0, 20.0, 1.0, 0.05, -0.05)]);
        let m0 = s.m_at(0, 1.0).unwrap();
        let x = FluidState {
            q1: 0.2,
            z11: m0,
            z22: 1.0,
            ..FluidState::ZERO
        };
        let ev = rhs(&x, 1.0, &s, [false; 2]).unwrap();
        let mdot = s.m[0].derivative(1.0).unwrap();
        assert_abs_diff_eq!(ev.dx.z11, mdot, epsilon = 1e-14);
        assert_abs_diff_eq!(ev.dx.q1, 1.3 - 0.1 - m0 - mdot, epsilon = 1e-14);
    }
}
