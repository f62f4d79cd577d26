//! Event-driven simulation of the stochastic X model.
//!
//! Arrivals are nonhomogeneous Poisson processes sampled by thinning against
//! the per-piece bound `n (a + |b| + |c|)`. One uniformized clock drives all
//! events; service completions and abandonments use their exact rates
//! between events since those only change at events.

pub mod ensemble;

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::model::file::scenario_hash;
use crate::model::{ControlMode, Idx, Scenario, SimState};

pub use ensemble::{ensemble_mean, EnsembleSummary};

/// Creates the generator of replication `rep` under `seed`.
pub fn rng_for(seed: u64, rep: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalRoute {
    OwnPool,
    OtherPool,
    Enqueue,
}

/// Stochastic-scale routing parameters of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Router {
    /// Activation thresholds `k^n` for sharing class 1, class 2.
    pub k: [f64; 2],
    /// Release thresholds bounding `Z_{j,i}` when sharing class i.
    pub tau: [f64; 2],
    pub r12: f64,
    pub r21: f64,
    pub mode: ControlMode,
}

impl Router {
    pub fn new(s: &Scenario) -> Self {
        let c = &s.control;
        Router {
            k: [c.k_n(0, s.n), c.k_n(1, s.n)],
            tau: [c.tau_n_guarding(0, s.n), c.tau_n_guarding(1, s.n)],
            r12: c.r12,
            r21: c.r21,
            mode: c.mode,
        }
    }

    /// `D_{1,2}` for `from = 0`, `D_{2,1}` for `from = 1`.
    pub fn d(&self, st: &SimState, from: Idx) -> f64 {
        let (q1, q2) = (st.q[0] as f64, st.q[1] as f64);
        if from == 0 {
            q1 - self.r12 * q2 - self.k[0]
        } else {
            self.r21 * q2 - q1 - self.k[1]
        }
    }

    /// Release condition for sending class `from` to the other pool.
    pub fn release_open(&self, st: &SimState, from: Idx) -> bool {
        let wrong_way = st.z[1 - from][from];
        match self.mode {
            ControlMode::FqrArt => wrong_way as f64 <= self.tau[from],
            ControlMode::FqrTOneWay => wrong_way == 0,
        }
    }

    /// Whether the event "all free agents serve class `from`" holds.
    pub fn sharing(&self, st: &SimState, from: Idx) -> bool {
        self.d(st, from) > 0.0 && self.release_open(st, from)
    }

    pub fn route_on_arrival(&self, st: &SimState, class: Idx) -> ArrivalRoute {
        let other = 1 - class;
        if st.idle(class) > 0 {
            ArrivalRoute::OwnPool
        } else if st.idle(other) > 0 && self.sharing(st, class) {
            ArrivalRoute::OtherPool
        } else {
            ArrivalRoute::Enqueue
        }
    }

    /// Class whose head-of-line customer a newly free agent of `pool` takes.
    pub fn route_on_completion(&self, st: &SimState, pool: Idx) -> Option<Idx> {
        let share = [self.sharing(st, 0), self.sharing(st, 1)];
        let pick = match share {
            [true, true] => Some(if self.d(st, 0) >= self.d(st, 1) { 0 } else { 1 }),
            [true, false] => Some(0),
            [false, true] => Some(1),
            [false, false] => None,
        };
        match pick {
            Some(c) if st.q[c] > 0 => Some(c),
            _ if st.q[pool] > 0 => Some(pool),
            _ => None,
        }
    }
}

/// Moves headcounts toward the targets: additions are immediate, and only
/// idle agents can be removed here.
pub fn apply_staffing(st: &mut SimState, targets: [u64; 2]) {
    st.target = targets;
    for j in 0..2 {
        if st.headcount[j] < targets[j] {
            st.headcount[j] = targets[j];
        } else if st.headcount[j] > targets[j] {
            let removable = st.idle(j).min(st.headcount[j] - targets[j]);
            st.headcount[j] -= removable;
        }
    }
}

/// Lets idle agents pick up waiting customers.
fn dispatch_idle(router: &Router, st: &mut SimState) {
    loop {
        let mut moved = false;
        for j in 0..2 {
            while st.idle(j) > 0 {
                match router.route_on_completion(st, j) {
                    Some(c) => {
                        st.q[c] -= 1;
                        st.z[c][j] += 1;
                        moved = true;
                    }
                    None => break,
                }
            }
        }
        if !moved {
            break;
        }
    }
}

/// Called after every state change; returning `true` stops the run.
pub trait Observer {
    fn observe(&mut self, t: f64, st: &SimState) -> bool;
}

impl Observer for () {
    fn observe(&mut self, _: f64, _: &SimState) -> bool {
        false
    }
}

/// Stops at the first time `Z_{class,pool} <= level`.
#[derive(Debug, Clone)]
pub struct FirstPassage {
    pub class: Idx,
    pub pool: Idx,
    pub level: u64,
    pub hit: Option<f64>,
}

impl Observer for FirstPassage {
    fn observe(&mut self, t: f64, st: &SimState) -> bool {
        if st.z[self.class][self.pool] <= self.level {
            self.hit = Some(t);
            true
        } else {
            false
        }
    }
}

/// One grid sample: counts and headcounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sample {
    pub q: [u64; 2],
    pub z: [[u64; 2]; 2],
    pub hc: [u64; 2],
}

impl Sample {
    fn of(st: &SimState) -> Self {
        Sample {
            q: st.q,
            z: st.z,
            hc: st.headcount,
        }
    }

    /// `(Q1, Q2, Z11, Z12, Z21, Z22, hc1, hc2)`.
    pub fn to_array(&self) -> [u64; 8] {
        [
            self.q[0],
            self.q[1],
            self.z[0][0],
            self.z[0][1],
            self.z[1][0],
            self.z[1][1],
            self.hc[0],
            self.hc[1],
        ]
    }
}

pub const SIM_CSV_HEADER: &str = "t,q1,q2,z11,z12,z21,z22,hc1,hc2";

/// Uniform output grid `k * step` over `[0, horizon]`.
pub fn output_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidStep(format!(
            "grid step must be positive, got {step}"
        )));
    }
    let k = horizon / step;
    if (k - k.round()).abs() > 1e-6 {
        return Err(Error::InvalidStep(format!(
            "grid step {step} does not divide the horizon {horizon}"
        )));
    }
    Ok((0..=k.round() as usize).map(|i| i as f64 * step).collect())
}

fn initial_state(s: &Scenario) -> Result<SimState> {
    let n = s.n as f64;
    let x = &s.x0;
    let mut st = SimState {
        q: [(n * x.q1).round() as u64, (n * x.q2).round() as u64],
        z: [
            [(n * x.z11).round() as u64, (n * x.z12).round() as u64],
            [(n * x.z21).round() as u64, (n * x.z22).round() as u64],
        ],
        ..SimState::default()
    };
    let targets = [s.staffing_target(0, 0.0)?, s.staffing_target(1, 0.0)?];
    st.headcount = [targets[0].max(st.busy(0)), targets[1].max(st.busy(1))];
    apply_staffing(&mut st, targets);
    Ok(st)
}

/// Runs one path over `[0, horizon]`, sampling the state at `grid` times
/// and reporting every state change to `obs`. Stops early if the observer asks.
pub fn run_path<O: Observer>(
    s: &Scenario,
    rng: &mut ChaCha8Rng,
    grid: &[f64],
    obs: &mut O,
) -> Result<Vec<Sample>> {
    s.ensure_runnable()?;
    let router = Router::new(s);
    let n = s.n as f64;
    let r = &s.rates;
    let mu = [[r.mu11, r.mu12], [r.mu21, r.mu22]];
    let theta = [r.theta1, r.theta2];
    let mut st = initial_state(s)?;
    dispatch_idle(&router, &mut st);
    let mut samples = Vec::with_capacity(grid.len());
    let mut t = 0.0;
    let record_until = |samples: &mut Vec<Sample>, st: &SimState, until: f64, inclusive: bool| {
        while let Some(&g) = grid.get(samples.len()) {
            if g < until || (inclusive && g <= until) {
                samples.push(Sample::of(st));
            } else {
                break;
            }
        }
    };
    if obs.observe(t, &st) {
        record_until(&mut samples, &st, f64::INFINITY, true);
        return Ok(samples);
    }

    let functions: Vec<_> = s.lambda.iter().chain(s.m.iter()).collect();
    loop {
        let (maj1, _) = s.lambda[0].majorant_at(t)?;
        let (maj2, _) = s.lambda[1].majorant_at(t)?;
        let bound = [n * maj1, n * maj2];
        let boundary = functions
            .iter()
            .filter_map(|f| f.next_breakpoint_after(t))
            .fold(s.horizon, f64::min);

        let mut total = bound[0] + bound[1];
        for i in 0..2 {
            total += theta[i] * st.q[i] as f64;
            for j in 0..2 {
                total += mu[i][j] * st.z[i][j] as f64;
            }
        }
        let dt = if total > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / total
        } else {
            f64::INFINITY
        };
        let t_cand = t + dt;

        if t_cand >= boundary {
            record_until(&mut samples, &st, boundary, false);
            t = boundary;
            if t >= s.horizon {
                break;
            }
            apply_staffing(
                &mut st,
                [s.staffing_target(0, t)?, s.staffing_target(1, t)?],
            );
            dispatch_idle(&router, &mut st);
            if obs.observe(t, &st) {
                break;
            }
            continue;
        }

        record_until(&mut samples, &st, t_cand, false);
        t = t_cand;
        apply_staffing(
            &mut st,
            [s.staffing_target(0, t)?, s.staffing_target(1, t)?],
        );

        let mut u = rng.gen::<f64>() * total;
        let mut handled = false;
        for (i, &b) in bound.iter().enumerate() {
            if u < b {
                if rng.gen::<f64>() * b < n * s.lambda_at(i, t)? {
                    match router.route_on_arrival(&st, i) {
                        ArrivalRoute::OwnPool => st.z[i][i] += 1,
                        ArrivalRoute::OtherPool => st.z[i][1 - i] += 1,
                        ArrivalRoute::Enqueue => st.q[i] += 1,
                    }
                }
                handled = true;
                break;
            }
            u -= b;
        }
        if !handled {
            'completion: for i in 0..2 {
                for j in 0..2 {
                    let rate = mu[i][j] * st.z[i][j] as f64;
                    if u < rate {
                        st.z[i][j] -= 1;
                        if st.headcount[j] > st.target[j] {
                            st.headcount[j] -= 1;
                        } else if let Some(c) = router.route_on_completion(&st, j) {
                            st.q[c] -= 1;
                            st.z[c][j] += 1;
                        }
                        handled = true;
                        break 'completion;
                    }
                    u -= rate;
                }
            }
        }
        if !handled {
            // abandonment; the last bucket also absorbs round-off in `u`
            let rate0 = theta[0] * st.q[0] as f64;
            let i = if u < rate0 || st.q[1] == 0 { 0 } else { 1 };
            if st.q[i] > 0 {
                st.q[i] -= 1;
            }
        }
        dispatch_idle(&router, &mut st);
        if obs.observe(t, &st) {
            break;
        }
    }
    record_until(&mut samples, &st, f64::INFINITY, true);
    Ok(samples)
}

/// A sampled path with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub n: u64,
    pub grid: Vec<f64>,
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub scenario_hash: String,
}

impl EventLog {
    /// Writes the path scaled by `1/n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{SIM_CSV_HEADER}")?;
        let n = self.n as f64;
        for (t, smp) in self.grid.iter().zip(&self.samples) {
            let cols: Vec<String> = std::iter::once(sig9(*t))
                .chain(smp.to_array().iter().map(|&c| sig9(c as f64 / n)))
                .collect();
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Samples one path on the grid of spacing `grid_step`.
pub fn simulate_path(s: &Scenario, seed: u64, grid_step: f64) -> Result<EventLog> {
    let grid = output_grid(s.horizon, grid_step)?;
    let mut rng = rng_for(seed, 0);
    let samples = run_path(s, &mut rng, &grid, &mut ())?;
    Ok(EventLog {
        n: s.n,
        grid,
        samples,
        seed,
        scenario_hash: scenario_hash(s),
    })
}

/// First time `Z_{class,pool}` falls to `level` or below in replication `rep`.
pub fn first_passage_time(
    s: &Scenario,
    seed: u64,
    rep: u64,
    class: Idx,
    pool: Idx,
    level: u64,
) -> Result<Option<f64>> {
    let mut obs = FirstPassage {
        class,
        pool,
        level,
        hit: None,
    };
    let mut rng = rng_for(seed, rep);
    run_path(s, &mut rng, &[], &mut obs)?;
    Ok(obs.hit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::base;
    use crate::model::{ControlParams, FluidState};

    fn router(mode: ControlMode) -> Router {
        Router {
            k: [100.0, 100.0],
            tau: [10.0, 10.0],
            r12: 1.0,
            r21: 1.0,
            mode,
        }
    }

    fn full(q: [u64; 2]) -> SimState {
        SimState {
            q,
            z: [[100, 0], [0, 100]],
            headcount: [100, 100],
            target: [100, 100],
        }
    }

    #[test]
    fn arrival_prefers_own_pool() {
        let mut st = full([500, 0]);
        st.headcount[0] = 101;
        assert_eq!(
            router(ControlMode::FqrArt).route_on_arrival(&st, 0),
            ArrivalRoute::OwnPool
        );
    }

    #[test]
    fn arrival_enqueues_without_overload() {
        let mut st = full([50, 0]);
        st.headcount[1] = 101;
        assert_eq!(
            router(ControlMode::FqrArt).route_on_arrival(&st, 0),
            ArrivalRoute::Enqueue
        );
        st.q[0] = 101;
        assert_eq!(
            router(ControlMode::FqrArt).route_on_arrival(&st, 0),
            ArrivalRoute::OtherPool
        );
    }

    #[test]
    fn arrival_blocked_by_release_threshold() {
        let mut st = full([300, 0]);
        st.headcount[1] = 101;
        st.z[1][0] = 11;
        st.z[0][0] = 89;
        assert_eq!(
            router(ControlMode::FqrArt).route_on_arrival(&st, 0),
            ArrivalRoute::Enqueue
        );
        st.z[1][0] = 10;
        st.z[0][0] = 90;
        assert_eq!(
            router(ControlMode::FqrArt).route_on_arrival(&st, 0),
            ArrivalRoute::OtherPool
        );
        assert_eq!(
            router(ControlMode::FqrTOneWay).route_on_arrival(&st, 0),
            ArrivalRoute::Enqueue
        );
    }

    #[test]
    fn completion_routing() {
        let rt = router(ControlMode::FqrArt);
        assert_eq!(rt.route_on_completion(&full([200, 50]), 1), Some(0));
        assert_eq!(rt.route_on_completion(&full([20, 50]), 0), Some(0));
        assert_eq!(rt.route_on_completion(&full([20, 50]), 1), Some(1));
        assert_eq!(rt.route_on_completion(&full([0, 0]), 1), None);
        assert_eq!(rt.route_on_completion(&full([0, 150]), 0), Some(1));
    }

    #[test]
    fn staffing_changes() {
        let mut st = SimState {
            q: [0, 0],
            z: [[102, 0], [0, 100]],
            headcount: [105, 100],
            target: [105, 100],
        };
        apply_staffing(&mut st, [100, 100]);
        assert_eq!(st.headcount, [102, 100]);
        apply_staffing(&mut st, [105, 100]);
        assert_eq!(st.headcount, [105, 100]);
        assert_eq!(st.idle(0), 3);
        let before = st;
        apply_staffing(&mut st, [105, 100]);
        assert_eq!(st, before);
    }

    #[test]
    fn staffing_decrease_completes_through_services() {
        // two busy agents above target leave as they finish
        let mut s = base(0.0, 0.0, 50.0);
        s.n = 100;
        s.m[0] = crate::model::RateFunction::new(vec![
            crate::model::Piece::constant(0.0, 1.0, 1.05),
            crate::model::Piece::constant(1.0, 50.0, 1.0),
        ]);
        s.x0 = FluidState {
            z11: 1.02,
            ..FluidState::ZERO
        };
        let log = simulate_path(&s, 3, 1.0).unwrap();
        assert_eq!(log.samples[0].hc[0], 105);
        assert_eq!(log.samples[1].hc[0], 100.max(log.samples[1].z[0][0]));
        assert!(log.samples.iter().all(|smp| smp.hc[0] >= smp.z[0][0]));
        assert_eq!(log.samples[50].hc[0], 100);
    }

    #[test]
    fn no_input_stays_empty() {
        let s = base(0.0, 0.0, 10.0);
        let log = simulate_path(&s, 1, 0.5).unwrap();
        assert_eq!(log.samples.len(), 21);
        assert!(log
            .samples
            .iter()
            .all(|smp| smp.q == [0, 0] && smp.z == [[0, 0], [0, 0]]));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = base(1.2, 0.9, 10.0);
        assert_eq!(
            simulate_path(&s, 42, 0.1).unwrap(),
            simulate_path(&s, 42, 0.1).unwrap()
        );
        assert_ne!(
            simulate_path(&s, 42, 0.1).unwrap().samples,
            simulate_path(&s, 43, 0.1).unwrap().samples
        );
    }

    #[test]
    fn one_way_never_shares_both_ways() {
        struct NoTwoWay;
        impl Observer for NoTwoWay {
            fn observe(&mut self, _: f64, st: &SimState) -> bool {
                assert!(st.z[0][1] == 0 || st.z[1][0] == 0, "{st:?}");
                false
            }
        }
        let mut s = base(1.3, 1.0, 30.0);
        s.lambda[1] = crate::model::RateFunction::new(vec![
            crate::model::Piece::constant(0.0, 15.0, 0.8),
            crate::model::Piece::constant(15.0, 30.0, 1.4),
        ]);
        s.lambda[0] = crate::model::RateFunction::new(vec![
            crate::model::Piece::constant(0.0, 15.0, 1.4),
            crate::model::Piece::constant(15.0, 30.0, 0.8),
        ]);
        s.control = ControlParams::new(1.0, 0.05, 0.0, ControlMode::FqrTOneWay);
        s.n = 50;
        for seed in 0..5 {
            run_path(&s, &mut rng_for(seed, 0), &[], &mut NoTwoWay).unwrap();
        }
    }
}
