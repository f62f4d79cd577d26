//! The fast-time-scale process (FTSP) at a fluid point.
//!
//! Near the boundary `d_{i,j} = 0` the scaled queue difference moves on a
//! fast time scale as a two-sided birth-death chain: one pair of rates above
//! zero and another at or below zero. Its long-run fraction of time above zero
//! is the averaging-principle probability `pi`. Only unit ratio parameters are
//! supported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{total_service_rate, ControlMode, FluidState, Idx, Scenario, ServiceRates};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtspRates {
    pub lambda_plus: f64,
    pub mu_plus: f64,
    pub lambda_minus: f64,
    pub mu_minus: f64,
}

impl FtspRates {
    pub fn delta_plus(&self) -> f64 {
        self.lambda_plus - self.mu_plus
    }

    pub fn delta_minus(&self) -> f64 {
        self.lambda_minus - self.mu_minus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtspClass {
    Ergodic,
    /// `pi = 1`
    DriftPos,
    /// `pi = 0`
    DriftNeg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtspProfile {
    pub rates: FtspRates,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub klass: FtspClass,
    pub pi: f64,
}

impl FtspProfile {
    pub fn from_rates(rates: FtspRates) -> Result<Self> {
        let (dp, dm) = (rates.delta_plus(), rates.delta_minus());
        let klass = classify(dp, dm)?;
        let pi = match klass {
            FtspClass::Ergodic => pi_boundary(dp, dm)?,
            FtspClass::DriftPos => 1.0,
            FtspClass::DriftNeg => 0.0,
        };
        Ok(FtspProfile {
            rates,
            delta_plus: dp,
            delta_minus: dm,
            klass,
            pi,
        })
    }
}

/// Rates for sharing class `from` into the other pool, given arrival rates
/// `lambda` and the rates `avail[j]` at which agents of pool `j` become free.
pub fn rates_from_flows(
    x: &FluidState,
    rates: &ServiceRates,
    lambda: [f64; 2],
    avail: [f64; 2],
    from: Idx,
) -> FtspRates {
    let (i, j) = (from, 1 - from);
    let qi = rates.theta(i) * x.q(i);
    let qj = rates.theta(j) * x.q(j);
    FtspRates {
        lambda_plus: lambda[i] + qj,
        mu_plus: lambda[j] + avail[i] + avail[j] + qi,
        lambda_minus: lambda[i] + avail[j] + qj,
        mu_minus: lambda[j] + avail[i] + qi,
    }
}

fn check_ratio(s: &Scenario) -> Result<()> {
    if s.control.unit_ratios() {
        Ok(())
    } else {
        Err(Error::UnsupportedRatio {
            r12: s.control.r12,
            r21: s.control.r21,
        })
    }
}

/// Completion rate of the busy agents of each pool.
pub fn pool_completion_rates(x: &FluidState, r: &ServiceRates) -> [f64; 2] {
    [
        r.mu11 * x.z11 + r.mu21 * x.z21,
        r.mu12 * x.z12 + r.mu22 * x.z22,
    ]
}

/// FTSP profile for direction `from` at `x` and time `t`.
pub fn ftsp_profile(x: &FluidState, t: f64, s: &Scenario, from: Idx) -> Result<FtspProfile> {
    check_ratio(s)?;
    let lambda = [s.lambda_at(0, t)?, s.lambda_at(1, t)?];
    let avail = pool_completion_rates(x, &s.rates);
    debug_assert!((avail[0] + avail[1] - total_service_rate(x, &s.rates)).abs() < 1e-12);
    FtspProfile::from_rates(rates_from_flows(x, &s.rates, lambda, avail, from))
}

/// Birth and death rates of the FTSP of `D_{1,2}`.
pub fn ftsp_rates_12(x: &FluidState, t: f64, s: &Scenario) -> Result<FtspRates> {
    check_ratio(s)?;
    let lambda = [s.lambda_at(0, t)?, s.lambda_at(1, t)?];
    Ok(rates_from_flows(
        x,
        &s.rates,
        lambda,
        pool_completion_rates(x, &s.rates),
        0,
    ))
}

/// Birth and death rates of the FTSP of `D_{2,1}`.
pub fn ftsp_rates_21(x: &FluidState, t: f64, s: &Scenario) -> Result<FtspRates> {
    check_ratio(s)?;
    let lambda = [s.lambda_at(0, t)?, s.lambda_at(1, t)?];
    Ok(rates_from_flows(
        x,
        &s.rates,
        lambda,
        pool_completion_rates(x, &s.rates),
        1,
    ))
}

pub fn classify(delta_plus: f64, delta_minus: f64) -> Result<FtspClass> {
    let pos = delta_plus >= 0.0;
    let neg = delta_minus <= 0.0;
    match (pos, neg) {
        (true, true) => Err(Error::InconsistentDrifts {
            delta_plus,
            delta_minus,
        }),
        (true, false) => Ok(FtspClass::DriftPos),
        (false, true) => Ok(FtspClass::DriftNeg),
        (false, false) => Ok(FtspClass::Ergodic),
    }
}

/// `pi = delta- / (delta- - delta+)`, the fraction of time above zero of an
/// ergodic two-sided chain.
pub fn pi_boundary(delta_plus: f64, delta_minus: f64) -> Result<f64> {
    if !(delta_plus < 0.0 && delta_minus > 0.0) {
        return Err(Error::Domain(format!(
            "pi requires delta+ < 0 < delta- (got delta+ = {delta_plus}, delta- = {delta_minus})"
        )));
    }
    Ok(delta_minus / (delta_minus - delta_plus))
}

/// Whether sharing of class `from` into the other pool is allowed by the
/// release rule at fluid state `x`.
pub fn release_open(x: &FluidState, s: &Scenario, from: Idx) -> bool {
    let wrong_way = x.z(1 - from, from);
    match s.control.mode {
        ControlMode::FqrArt => wrong_way < s.control.tau_guarding(from),
        ControlMode::FqrTOneWay => wrong_way == 0.0,
    }
}

/// Gated sharing probability `Pi` for direction `from`, with agent
/// availability rates `avail` (see [`pool_completion_rates`]).
pub fn big_pi_with(
    x: &FluidState,
    t: f64,
    s: &Scenario,
    from: Idx,
    d_value: f64,
    on_boundary: bool,
    avail: [f64; 2],
) -> Result<f64> {
    check_ratio(s)?;
    if !release_open(x, s, from) {
        return Ok(0.0);
    }
    if !on_boundary {
        if d_value > 0.0 {
            return Ok(1.0);
        }
        if d_value < 0.0 {
            return Ok(0.0);
        }
    }
    let lambda = [s.lambda_at(0, t)?, s.lambda_at(1, t)?];
    Ok(FtspProfile::from_rates(rates_from_flows(x, &s.rates, lambda, avail, from))?.pi)
}

/// Gated sharing probability `Pi` for direction `from`.
pub fn big_pi(
    x: &FluidState,
    t: f64,
    s: &Scenario,
    from: Idx,
    d_value: f64,
    on_boundary: bool,
) -> Result<f64> {
    big_pi_with(
        x,
        t,
        s,
        from,
        d_value,
        on_boundary,
        pool_completion_rates(x, &s.rates),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub pi: f64,
    pub std_err: f64,
}

/// Simulates the two-sided birth-death chain from 0 up to `horizon` and
/// estimates its fraction of time above zero, with a batch-means standard error.
pub fn ftsp_oracle(rates: &FtspRates, horizon: f64, seed: u64) -> Result<OracleEstimate> {
    if !(rates.delta_plus() < 0.0 && rates.delta_minus() > 0.0) {
        return Err(Error::Domain("oracle requires an ergodic chain".into()));
    }
    const BATCHES: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let up_total = rates.lambda_plus + rates.mu_plus;
    let down_total = rates.lambda_minus + rates.mu_minus;
    let p_up_birth = rates.lambda_plus / up_total;
    let p_down_birth = rates.lambda_minus / down_total;
    let batch_len = horizon / BATCHES as f64;

    let mut level: i64 = 0;
    let mut batch_ratios = Vec::with_capacity(BATCHES);
    let (mut pos_all, mut time_all) = (0.0, 0.0);
    for _ in 0..BATCHES {
        let (mut pos, mut time) = (0.0, 0.0);
        // holding times replaced by their means; the embedded chain is exact
        while time < batch_len {
            let u: f64 = rng.gen();
            if level > 0 {
                let dt = 1.0 / up_total;
                pos += dt;
                time += dt;
                level += if u < p_up_birth { 1 } else { -1 };
            } else {
                time += 1.0 / down_total;
                level += if u < p_down_birth { 1 } else { -1 };
            }
        }
        batch_ratios.push(pos / time);
        pos_all += pos;
        time_all += time;
    }
    let pi = pos_all / time_all;
    let mean = batch_ratios.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok(OracleEstimate {
        pi,
        std_err: (var / BATCHES as f64).sqrt(),
    })
}
