//! Fixed-step Euler integration of the fluid model.
//!
//! The state is never projected onto a boundary `d = 0`. Instead a per-direction
//! flag records that `d` changed sign between two iterates; while it is set the
//! sharing probability comes from the FTSP, which keeps `d` stationary. The flag
//! is dropped when the release gate closes, when the FTSP is not ergodic and `d`
//! moves off zero, or once `|d|` leaves a band of width `10 h` times the rate
//! scale.

use std::io::{self, Write};

use super::{rhs, PoolStatus, RegimeTag, RhsEval, EPS_FULL, EPS_NEG};
use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::ftsp::release_open;
use crate::model::{d12, d21, d_dir, FluidState, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidPoint {
    pub t: f64,
    pub x: FluidState,
    pub pi: [f64; 2],
    pub regime: RegimeTag,
    pub d: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    pub h: f64,
    pub points: Vec<FluidPoint>,
}

pub const FLUID_CSV_HEADER: &str = "t,q1,q2,z11,z12,z21,z22,pi12,pi21,regime,d12,d21";

impl FluidTrajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{FLUID_CSV_HEADER}")?;
        for p in &self.points {
            let x = p.x.to_array();
            let nums: Vec<String> = std::iter::once(p.t)
                .chain(x)
                .chain(p.pi)
                .map(sig9)
                .collect();
            writeln!(
                w,
                "{},{},{},{}",
                nums.join(","),
                p.regime,
                sig9(p.d[0]),
                sig9(p.d[1])
            )?;
        }
        Ok(())
    }

    /// Point at grid time `t` (nearest grid index).
    pub fn at(&self, t: f64) -> &FluidPoint {
        let k = ((t / self.h).round() as usize).min(self.points.len() - 1);
        &self.points[k]
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }
}

/// Euler stepper with boundary bookkeeping. Exposed so that fixed-point
/// searches can reuse the exact same step.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    s: &'a Scenario,
    flags: [bool; 2],
    eps_b: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(s: &'a Scenario, h: f64) -> Self {
        let lambda_bar = s.lambda[0].sup() + s.lambda[1].sup();
        let m_bar = s.m[0].sup() + s.m[1].sup();
        let scale = lambda_bar + s.rates.max_mu() * m_bar;
        Integrator {
            s,
            flags: [false; 2],
            eps_b: 10.0 * h * scale.max(1.0),
        }
    }

    pub fn flags(&self) -> [bool; 2] {
        self.flags
    }

    pub fn set_flag(&mut self, dir: usize, on: bool) {
        self.flags[dir] = on;
    }

    pub fn eps_b(&self) -> f64 {
        self.eps_b
    }

    pub fn eval(&self, x: &FluidState, t: f64) -> Result<RhsEval> {
        rhs(x, t, self.s, self.flags)
    }

    /// Puts idle capacity at time `t` to work on waiting fluid: first the
    /// other class if sharing into this pool is active, down to its
    /// threshold, then the pool's own queue. Returns the directions whose
    /// `d` was brought to 0.
    pub fn absorb(&self, x: &mut FluidState, t: f64) -> Result<[bool; 2]> {
        let c = &self.s.control;
        let mut landed = [false; 2];
        for _ in 0..2 {
            for j in 0..2 {
                let mut idle = self.s.m_at(j, t)? - x.pool_busy(j);
                if idle <= EPS_FULL {
                    continue;
                }
                let i = 1 - j;
                let d = d_dir(x, c, i);
                if d > 0.0 && release_open(x, self.s, i) {
                    let coef = if i == 0 { 1.0 } else { c.r21 };
                    let need = (d / coef).min(x.q(i));
                    let u = idle.min(need);
                    *x.q_mut(i) -= u;
                    *x.z_mut(i, j) += u;
                    idle -= u;
                    landed[i] |= u >= d / coef;
                }
                let v = idle.min(x.q(j));
                *x.q_mut(j) -= v;
                *x.z_mut(j, j) += v;
            }
        }
        Ok(landed)
    }

    /// One Euler step from `(x, t)` to `t_next` using the already evaluated
    /// right-hand side, followed by absorption at `t_next` and flag updates.
    pub fn step(
        &mut self,
        x: &FluidState,
        t: f64,
        t_next: f64,
        ev: &RhsEval,
    ) -> Result<FluidState> {
        let s = self.s;
        let dt = t_next - t;
        let mut a = x.to_array();
        for (v, dv) in a.iter_mut().zip(ev.dx.to_array()) {
            *v += dt * dv;
        }
        let mut y = FluidState::from_array(a);

        for j in 0..2 {
            let m_left = s.m[j].eval_left(t_next)?;
            let i = 1 - j;
            if ev.tracks_m[j] {
                let own = m_left - y.z(i, j);
                if own >= 0.0 {
                    *y.z_mut(j, j) = own;
                }
            } else if ev.regime.pools[j] != PoolStatus::Overstaffed {
                // admissions beyond capacity go back to their queues
                let mut excess = y.pool_busy(j) - m_left;
                for class in [i, j] {
                    if excess <= 0.0 {
                        break;
                    }
                    let back = excess.min(dt * ev.adm[class][j]).min(y.z(class, j));
                    *y.z_mut(class, j) -= back;
                    *y.q_mut(class) += back;
                    excess -= back;
                }
            }
        }

        for i in 0..2 {
            if y.q(i) < 0.0 {
                // admissions the queue could not supply are undone
                let mut deficit = -y.q(i);
                *y.q_mut(i) = 0.0;
                for j in [i, 1 - i] {
                    let back = deficit.min(y.z(i, j).max(0.0));
                    *y.z_mut(i, j) -= back;
                    deficit -= back;
                }
            }
        }

        let mut a = y.to_array();
        for v in a.iter_mut() {
            if !v.is_finite() {
                return Err(Error::IntegrationFailure {
                    t: t_next,
                    reason: "non-finite state".into(),
                });
            }
            if *v < 0.0 {
                if *v < -EPS_NEG {
                    return Err(Error::IntegrationFailure {
                        t: t_next,
                        reason: format!("negative coordinate {v}"),
                    });
                }
                *v = 0.0;
            }
        }
        let mut y = FluidState::from_array(a);

        let c = &s.control;
        let d_prev = [d12(x, c), d21(x, c)];
        let landed = self.absorb(&mut y, t_next)?;
        for dir in 0..2 {
            if !release_open(&y, s, dir) {
                // no sharing in this direction, so d moves freely
                self.flags[dir] = false;
                continue;
            }
            let d_new = d_dir(&y, c, dir);
            let crossed =
                (d_prev[dir] < 0.0 && d_new >= 0.0) || (d_prev[dir] > 0.0 && d_new <= 0.0);
            if crossed || landed[dir] {
                self.flags[dir] = true;
            } else if self.flags[dir] {
                // a flagged, open direction with Pi at 0 or 1 has a non-ergodic
                // boundary, so d is leaving it
                let leaving = (ev.pi[dir] == 0.0 || ev.pi[dir] == 1.0) && d_new != 0.0;
                if leaving || d_new.abs() > self.eps_b {
                    self.flags[dir] = false;
                }
            }
        }
        Ok(y)
    }
}

fn is_multiple(v: f64, h: f64) -> bool {
    let k = v / h;
    (k - k.round()).abs() <= 1e-6
}

/// Integrates the fluid model on the grid `t_k = k h` over `[0, horizon]`.
pub fn euler_solve(s: &Scenario, h: f64) -> Result<FluidTrajectory> {
    s.ensure_runnable()?;
    if !s.control.unit_ratios() {
        return Err(Error::UnsupportedRatio {
            r12: s.control.r12,
            r21: s.control.r21,
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(format!(
            "step must be positive, got {h}"
        )));
    }
    if !is_multiple(s.horizon, h) {
        return Err(Error::InvalidStep(format!(
            "step {h} does not divide the horizon {}",
            s.horizon
        )));
    }
    for b in s.breakpoints() {
        if !is_multiple(b, h) {
            return Err(Error::InvalidStep(format!(
                "breakpoint {b} is not on the grid of step {h}"
            )));
        }
    }
    let shortest = s
        .lambda
        .iter()
        .chain(s.m.iter())
        .flat_map(|f| f.pieces().iter().map(|p| p.end.min(s.horizon) - p.start))
        .filter(|&len| len > 0.0)
        .fold(f64::INFINITY, f64::min);
    if h >= shortest {
        return Err(Error::InvalidStep(format!(
            "step {h} is not smaller than the shortest piece ({shortest})"
        )));
    }

    let steps = (s.horizon / h).round() as usize;
    let mut integ = Integrator::new(s, h);
    let mut x = s.x0;
    integ.absorb(&mut x, 0.0)?;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * h;
        let ev = integ.eval(&x, t)?;
        points.push(FluidPoint {
            t,
            x,
            pi: ev.pi,
            regime: ev.regime.tag,
            d: [d12(&x, &s.control), d21(&x, &s.control)],
        });
        if k == steps {
            break;
        }
        x = integ.step(&x, t, (k + 1) as f64 * h, &ev)?;
    }
    Ok(FluidTrajectory { h, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::base;
    use crate::model::{Piece, RateFunction};

    #[test]
    fn zero_input_stays_zero() {
        let s = base(0.0, 0.0, 5.0);
        let traj = euler_solve(&s, 0.01).unwrap();
        assert_eq!(traj.points.len(), 501);
        assert!(traj.points.iter().all(|p| p.x == FluidState::ZERO));
    }

    #[test]
    fn step_must_fit_grid() {
        let mut s = base(1.0, 1.0, 10.0);
        assert!(matches!(euler_solve(&s, 0.3), Err(Error::InvalidStep(_))));
        s.lambda[0] = RateFunction::new(vec![
            Piece::constant(0.0, 5.05, 1.0),
            Piece::constant(5.05, 10.0, 1.0),
        ]);
        assert!(matches!(euler_solve(&s, 0.1), Err(Error::InvalidStep(_))));
        assert!(matches!(euler_solve(&s, -0.1), Err(Error::InvalidStep(_))));
    }

    #[test]
    fn ratio_other_than_one_rejected() {
        let mut s = base(1.0, 1.0, 10.0);
        s.control.r12 = 1.5;
        assert!(matches!(
            euler_solve(&s, 0.01),
            Err(Error::UnsupportedRatio { .. })
        ));
    }

    #[test]
    fn conservation_in_overload() {
        // total content changes only through arrivals, services and abandonment
        let s = base(1.4, 1.0, 10.0);
        let h = 1e-3;
        let traj = euler_solve(&s, h).unwrap();
        let r = &s.rates;
        let mut expected = 0.0;
        for w in traj.points.windows(2) {
            let x = &w[0].x;
            let out = crate::model::total_service_rate(x, r) + r.theta1 * x.q1 + r.theta2 * x.q2;
            expected += h * (2.4 - out);
            let total: f64 = w[1].x.to_array().iter().sum();
            assert!(
                (total - expected).abs() < 1e-9,
                "t = {}: {total} vs {expected}",
                w[1].t
            );
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = base(0.5, 0.5, 1.0);
        let traj = euler_solve(&s, 0.5).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], FLUID_CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0,0,0,0,0,0,0,0,SLACK_BOTH,-0.3,-0.3");
    }

    fn switching() -> Scenario {
        let mut s = base(1.4, 1.0, 40.0);
        s.lambda = [
            RateFunction::new(vec![
                Piece::constant(0.0, 20.0, 1.4),
                Piece::constant(20.0, 40.0, 1.0),
            ]),
            RateFunction::new(vec![
                Piece::constant(0.0, 20.0, 1.0),
                Piece::constant(20.0, 40.0, 1.4),
            ]),
        ];
        s
    }

    #[test]
    fn coarse_step_does_not_freeze_off_the_boundary() {
        // d21 turns positive while the release gate is still closed; once the
        // gate opens sharing must start rather than hold d21 where it is
        let s = switching();
        let coarse = euler_solve(&s, 0.01).unwrap();
        let fine = euler_solve(&s, 0.0025).unwrap();
        for (p, q) in coarse.points.iter().zip(fine.points.iter().step_by(4)) {
            for (u, v) in p.x.to_array().iter().zip(q.x.to_array()) {
                assert!((u - v).abs() < 0.05, "t={} {u} vs {v}", p.t);
            }
        }
        assert!(coarse.at(39.0).d[1].abs() < 5e-3);
    }

    #[test]
    fn flag_dropped_when_boundary_repels() {
        // sharing 1 -> 2 on the boundary until t = 20, then class 1 is relieved
        // and d12 falls away; no sharing may be credited off the boundary
        let mut s = base(1.3, 1.0, 40.0);
        s.lambda = [
            RateFunction::new(vec![
                Piece::sinusoid(0.0, 20.0, 1.3, 0.1, 0.0),
                Piece::constant(20.0, 40.0, 1.0),
            ]),
            RateFunction::new(vec![
                Piece::constant(0.0, 20.0, 1.0),
                Piece::sinusoid(20.0, 40.0, 1.1, 0.1, 0.0),
            ]),
        ];
        s.m[0] = RateFunction::new(vec![
            Piece::sinusoid(0.0, 20.0, 1.0, 0.05, -0.05),
            Piece::constant(20.0, 40.0, 1.0),
        ]);
        let traj = euler_solve(&s, 0.01).unwrap();
        let on = traj.at(19.0);
        assert!(on.d[0].abs() < 0.05 && on.pi[0] > 0.0 && on.pi[0] < 1.0);
        for p in traj.points.iter().filter(|p| p.t > 21.0 && p.d[0] < -0.05) {
            assert_eq!(p.pi[0], 0.0, "t={} d12={}", p.t, p.d[0]);
        }
    }
}
