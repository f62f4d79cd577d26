//! Derived quantities: load classes, quasistationary points, threshold
//! sizing, emptying times, oscillation statistics and fluid-vs-simulation
//! error reports.

use std::fmt::Write as _;

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::fluid::closed_form::q1_recovery_closed_form;
use crate::fluid::{FluidTrajectory, Integrator};
use crate::model::{d_dir, FluidState, Idx, Piece, RateFunction, Scenario};
use crate::sim::EnsembleSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadClass {
    Underloaded,
    Normal,
    Overloaded,
}

/// `beta_i(t) = lambda_i(t) / (mu_ii m_i(t)) - 1` and its sign class.
pub fn classify_load(s: &Scenario, t: f64, pool: Idx) -> Result<(LoadClass, f64)> {
    let m = s.m_at(pool, t)?;
    if m <= 0.0 {
        return Err(Error::Domain(format!(
            "staffing of pool {} is zero at t = {t}",
            pool + 1
        )));
    }
    let beta = s.lambda_at(pool, t)? / (s.rates.mu(pool, pool) * m) - 1.0;
    let class = if beta > 0.0 {
        LoadClass::Overloaded
    } else if beta < 0.0 {
        LoadClass::Underloaded
    } else {
        LoadClass::Normal
    };
    Ok((class, beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiStationary {
    pub x: FluidState,
    pub pi: [f64; 2],
    /// Sup norm of the right-hand side at `x`, from a fresh evaluation.
    pub residual: f64,
    pub steps: usize,
}

const QS_STEP: f64 = 0.01;
const QS_BUDGET: usize = 2_000_000;
const QS_TOL: f64 = 1e-10;

/// Scenario with all functions frozen at their values at `t` over `[0, inf)`.
fn freeze(s: &Scenario, t: f64) -> Result<Scenario> {
    let mut f = s.clone();
    let hold = |g: &RateFunction| -> Result<RateFunction> {
        Ok(RateFunction::new(vec![Piece::constant(
            0.0,
            f64::MAX,
            g.eval(t)?,
        )]))
    };
    for i in 0..2 {
        f.lambda[i] = hold(&s.lambda[i])?;
        f.m[i] = hold(&s.m[i])?;
    }
    f.horizon = f64::MAX;
    Ok(f)
}

/// Integrates the system with coefficients frozen at `t_freeze`, starting
/// from `start`, until the right-hand side vanishes. Steps that would carry
/// `d` across zero are shortened to land on the boundary.
pub fn quasistationary_point(
    s: &Scenario,
    t_freeze: f64,
    start: &FluidState,
) -> Result<QuasiStationary> {
    if !s.control.unit_ratios() {
        return Err(Error::UnsupportedRatio {
            r12: s.control.r12,
            r21: s.control.r21,
        });
    }
    let frozen = freeze(s, t_freeze)?;
    let c = &frozen.control;
    let mut integ = Integrator::new(&frozen, QS_STEP);
    let mut x = *start;
    integ.absorb(&mut x, 0.0)?;
    let mut t = 0.0;
    let mut residual = f64::INFINITY;
    for step in 0..QS_BUDGET {
        let ev = integ.eval(&x, t)?;
        residual = ev.sup_norm();
        if residual < QS_TOL {
            let check = integ.eval(&x, t)?;
            return Ok(QuasiStationary {
                x,
                pi: check.pi,
                residual: check.sup_norm(),
                steps: step,
            });
        }
        let mut dt = QS_STEP;
        // stop exactly where a pool fills or a queue empties, so that no
        // capacity correction moves the state off the boundary
        for j in 0..2 {
            let gap = frozen.m_at(j, t)? - x.pool_busy(j);
            let rate = ev.dx.z(0, j) + ev.dx.z(1, j);
            if gap > 0.0 && rate > 0.0 && gap < dt * rate {
                dt = gap / rate;
            }
            let (q, dq) = (x.q(j), ev.dx.q(j));
            if q > 0.0 && dq < 0.0 && q < -dt * dq {
                dt = -q / dq;
            }
        }
        let mut land = None;
        for dir in 0..2 {
            if integ.flags()[dir] {
                continue;
            }
            let d = d_dir(&x, c, dir);
            let dd = if dir == 0 {
                ev.dx.q1 - c.r12 * ev.dx.q2
            } else {
                c.r21 * ev.dx.q2 - ev.dx.q1
            };
            let d_next = d + dt * dd;
            if (d < 0.0 && d_next > 0.0) || (d > 0.0 && d_next < 0.0) {
                let hit = -d / dd;
                if hit > 0.0 && hit < dt {
                    dt = hit;
                    land = Some(dir);
                }
            }
        }
        x = integ.step(&x, t, t + dt, &ev)?;
        t += dt;
        if let Some(dir) = land {
            integ.set_flag(dir, true);
        }
    }
    Err(Error::NonConvergence {
        steps: QS_BUDGET,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSizing {
    pub t_release: f64,
    pub q1_at_t: f64,
    pub recommended_k21: f64,
    pub trace: Vec<String>,
}

/// Sizes the activation threshold `k21` so that, after an overload of class
/// 2 ends, queue 1 stays below it until pool 1 has released its class-2
/// content down to `tau21`. Pool 1 is assumed critically loaded
/// (`lambda_1 = mu11 m1`) and the initial conditions are bounded by
/// `q1_bound` and `z0_bound`.
pub fn activation_threshold_size(
    mu11: f64,
    mu21: f64,
    theta1: f64,
    m1: f64,
    tau21: f64,
    q1_bound: f64,
    z0_bound: f64,
) -> Result<ThresholdSizing> {
    if !(mu11 > mu21 && mu21 > 0.0) {
        return Err(Error::Domain(format!(
            "requires mu11 > mu21 > 0 (got mu11 = {mu11}, mu21 = {mu21})"
        )));
    }
    if !(theta1 > 0.0 && tau21 > 0.0 && q1_bound >= 0.0 && z0_bound > 0.0 && m1 > 0.0) {
        return Err(Error::Domain(
            "theta1, tau21, z0_bound and m1 must be positive".into(),
        ));
    }
    let mut trace = vec![format!(
        "lambda_1 = mu11 * m1 = {}; bounds q1(0) <= {q1_bound}, z21(0) <= {z0_bound}",
        mu11 * m1
    )];
    if tau21 >= z0_bound {
        trace.push(format!(
            "tau21 = {tau21} >= z21(0) bound = {z0_bound}: no wait, T = 0"
        ));
        return Ok(ThresholdSizing {
            t_release: 0.0,
            q1_at_t: q1_bound,
            recommended_k21: q1_bound,
            trace,
        });
    }
    let t = (z0_bound / tau21).ln() / mu21;
    trace.push(format!(
        "z21(t) = {z0_bound} exp(-{mu21} t) reaches tau21 = {tau21} at T = ln({z0_bound} / {tau21}) / {mu21} = {t:.4}"
    ));
    let q = q1_recovery_closed_form(q1_bound, z0_bound, mu11, mu21, theta1, t);
    let branch = if (theta1 - mu21).abs() <= 1e-12 * theta1.max(mu21) {
        "theta1 = mu21: q1(t) = (q0 + (mu11 - mu21) z0 t) exp(-theta1 t)"
    } else {
        "q1(t) = q0 exp(-theta1 t) + (mu11 - mu21) z0 (exp(-mu21 t) - exp(-theta1 t)) / (theta1 - mu21)"
    };
    trace.push(format!("{branch}; q1(T) = {q:.4}"));
    trace.push(format!(
        "check: a bound of 1.01 is sometimes quoted for q1(T) here; it does not solve the ODE, which gives {q:.4}"
    ));
    trace.push("k21 is in fluid scale; fluctuations of order sqrt(n) argue for a larger stochastic threshold".into());
    Ok(ThresholdSizing {
        t_release: t,
        q1_at_t: q,
        recommended_k21: q,
        trace,
    })
}

/// Expected time for `z0` busy agents at rate `mu` to all finish: the exact
/// harmonic sum and its `ln(z0) / mu` approximation.
pub fn emptying_time_estimate(z0: u64, mu: f64) -> Result<(f64, f64)> {
    if z0 == 0 || !(mu > 0.0) {
        return Err(Error::Domain("requires z0 >= 1 and mu > 0".into()));
    }
    let harmonic: f64 = (1..=z0).rev().map(|j| 1.0 / j as f64).sum::<f64>() / mu;
    Ok((harmonic, (z0 as f64).ln() / mu))
}

/// Trapezoidal time average of `values` over `[from, last time]`.
pub fn time_average(times: &[f64], values: &[f64], from: f64) -> f64 {
    let mut area = 0.0;
    let mut span = 0.0;
    for k in 1..times.len() {
        let (t0, t1) = (times[k - 1], times[k]);
        if t1 <= from {
            continue;
        }
        let (a, v0) = if t0 < from {
            let w = (from - t0) / (t1 - t0);
            (from, values[k - 1] + w * (values[k] - values[k - 1]))
        } else {
            (t0, values[k - 1])
        };
        area += 0.5 * (v0 + values[k]) * (t1 - a);
        span += t1 - a;
    }
    if span > 0.0 {
        area / span
    } else {
        0.0
    }
}

/// Time averages of `(z12, z21)` after `burn_in`.
pub fn oscillation_metric(
    times: &[f64],
    z12: &[f64],
    z21: &[f64],
    burn_in: f64,
) -> Result<(f64, f64)> {
    match times.last() {
        Some(&end) if end > burn_in => Ok((
            time_average(times, z12, burn_in),
            time_average(times, z21, burn_in),
        )),
        _ => Err(Error::Domain(format!(
            "horizon must exceed the burn-in {burn_in}"
        ))),
    }
}

pub fn oscillation_metric_fluid(traj: &FluidTrajectory, burn_in: f64) -> Result<(f64, f64)> {
    let times = traj.times();
    let z12: Vec<f64> = traj.points.iter().map(|p| p.x.z12).collect();
    let z21: Vec<f64> = traj.points.iter().map(|p| p.x.z21).collect();
    oscillation_metric(&times, &z12, &z21, burn_in)
}

/// Heuristic collapse detector: the shared content stays well above the
/// release threshold on average.
pub fn is_congestion_collapse(avg_shared: f64, tau: f64) -> bool {
    avg_shared > 5.0 * tau
}

pub const COORDS: [&str; 6] = ["q1", "q2", "z11", "z12", "z21", "z22"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoordError {
    pub sup: f64,
    pub mean_abs: f64,
    pub sup_excised: f64,
    pub mean_abs_excised: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub coords: [CoordError; 6],
    pub excised: Vec<(f64, f64)>,
    pub points: usize,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coord,sup,mean_abs,sup_excised,mean_abs_excised\n");
        for (name, e) in COORDS.iter().zip(&self.coords) {
            let _ = writeln!(
                out,
                "{name},{},{},{},{}",
                sig9(e.sup),
                sig9(e.mean_abs),
                sig9(e.sup_excised),
                sig9(e.mean_abs_excised)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("grid points compared: {}\n", self.points);
        let windows: Vec<String> = self
            .excised
            .iter()
            .map(|(a, b)| format!("[{a}, {b})"))
            .collect();
        let _ = writeln!(
            out,
            "excised windows: {}",
            if windows.is_empty() {
                "none".into()
            } else {
                windows.join(" ")
            }
        );
        let _ = writeln!(
            out,
            "{:<5} {:>12} {:>12} {:>12} {:>12}",
            "coord", "sup", "mean_abs", "sup_exc", "mean_exc"
        );
        for (name, e) in COORDS.iter().zip(&self.coords) {
            let _ = writeln!(
                out,
                "{name:<5} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                e.sup, e.mean_abs, e.sup_excised, e.mean_abs_excised
            );
        }
        out
    }
}

/// Errors of the ensemble means against the fluid trajectory on the ensemble
/// grid, which must be a subset of the fluid grid with the same horizon.
/// Windows `[b, b + w)` after each breakpoint are left out of the excised
/// variants.
pub fn compare(
    fluid: &FluidTrajectory,
    ens: &EnsembleSummary,
    breakpoints: &[f64],
    w: f64,
) -> Result<ComparisonReport> {
    let (Some(f_last), Some(&e_last)) = (fluid.points.last(), ens.times.last()) else {
        return Err(Error::GridMismatch("empty trajectory".into()));
    };
    if (f_last.t - e_last).abs() > 1e-9 * e_last.abs().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "fluid ends at {} but ensemble ends at {e_last}",
            f_last.t
        )));
    }
    let excised: Vec<(f64, f64)> = breakpoints.iter().map(|&b| (b, b + w)).collect();
    let in_window = |t: f64| excised.iter().any(|&(a, b)| t >= a - 1e-9 && t < b - 1e-9);

    let mut errs = [CoordError::default(); 6];
    let mut sums = [0.0; 6];
    let mut sums_exc = [0.0; 6];
    let mut kept = 0usize;
    for (k, &t) in ens.times.iter().enumerate() {
        let idx = (t / fluid.h).round() as usize;
        let p = fluid
            .points
            .get(idx)
            .filter(|p| (p.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| {
                Error::GridMismatch(format!("ensemble time {t} is not on the fluid grid"))
            })?;
        let x = p.x.to_array();
        let m = ens.state_mean(k);
        let skip = in_window(t);
        if !skip {
            kept += 1;
        }
        for c in 0..6 {
            let e = (x[c] - m[c]).abs();
            errs[c].sup = errs[c].sup.max(e);
            sums[c] += e;
            if !skip {
                errs[c].sup_excised = errs[c].sup_excised.max(e);
                sums_exc[c] += e;
            }
        }
    }
    let total = ens.times.len();
    for c in 0..6 {
        errs[c].mean_abs = sums[c] / total as f64;
        errs[c].mean_abs_excised = if kept > 0 {
            sums_exc[c] / kept as f64
        } else {
            0.0
        };
    }
    Ok(ComparisonReport {
        coords: errs,
        excised,
        points: total,
    })
}
