//! Averages over independent replications.

use std::io::{self, Write};

use rayon::prelude::*;

use super::{output_grid, rng_for, run_path, SIM_CSV_HEADER};
use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::model::Scenario;

/// Pointwise mean and standard deviation of the scaled coordinates
/// `(q1, q2, z11, z12, z21, z22, hc1, hc2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub reps: u64,
    pub times: Vec<f64>,
    pub mean: Vec<[f64; 8]>,
    pub std: Vec<[f64; 8]>,
}

#[derive(Clone)]
struct Sums {
    sum: Vec<[u64; 8]>,
    sq: Vec<[u128; 8]>,
}

impl Sums {
    fn zeros(len: usize) -> Self {
        Sums {
            sum: vec![[0; 8]; len],
            sq: vec![[0; 8]; len],
        }
    }

    fn merge(mut self, other: Sums) -> Sums {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            for k in 0..8 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.sq.iter_mut().zip(&other.sq) {
            for k in 0..8 {
                a[k] += b[k];
            }
        }
        self
    }
}

/// Runs `reps` replications (streams `0..reps` of `seed`) in parallel.
/// Sums are exact integers, so the result does not depend on scheduling.
pub fn ensemble_mean(
    s: &Scenario,
    reps: u64,
    grid_step: f64,
    seed: u64,
) -> Result<EnsembleSummary> {
    if reps == 0 {
        return Err(Error::Domain("replication count must be >= 1".into()));
    }
    let grid = output_grid(s.horizon, grid_step)?;
    let len = grid.len();
    let sums = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<Sums> {
            let samples = run_path(s, &mut rng_for(seed, rep), &grid, &mut ())?;
            let mut acc = Sums::zeros(len);
            for (k, smp) in samples.iter().enumerate() {
                for (c, v) in smp.to_array().into_iter().enumerate() {
                    acc.sum[k][c] += v;
                    acc.sq[k][c] += v as u128 * v as u128;
                }
            }
            Ok(acc)
        })
        .try_reduce(|| Sums::zeros(len), |a, b| Ok(a.merge(b)))?;

    let n = s.n as f64;
    let r = reps as f64;
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for k in 0..len {
        let mut m = [0.0; 8];
        let mut sd = [0.0; 8];
        for c in 0..8 {
            let sum = sums.sum[k][c] as f64;
            m[c] = sum / r / n;
            if reps > 1 {
                // sum of squared deviations, computed in exact integers
                let ss = sums.sq[k][c] as f64 - sum * sum / r;
                sd[c] = (ss.max(0.0) / (r - 1.0)).sqrt() / n;
            }
        }
        mean.push(m);
        std.push(sd);
    }
    Ok(EnsembleSummary {
        reps,
        times: grid,
        mean,
        std,
    })
}

impl EnsembleSummary {
    fn write_rows<W: Write>(&self, mut w: W, rows: &[[f64; 8]]) -> io::Result<()> {
        writeln!(w, "{SIM_CSV_HEADER}")?;
        for (t, row) in self.times.iter().zip(rows) {
            let cols: Vec<String> = std::iter::once(*t)
                .chain(row.iter().copied())
                .map(sig9)
                .collect();
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }

    pub fn write_mean_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_rows(w, &self.mean)
    }

    pub fn write_std_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_rows(w, &self.std)
    }

    /// Mean of the six state coordinates at grid index `k`.
    pub fn state_mean(&self, k: usize) -> [f64; 6] {
        let m = &self.mean[k];
        [m[0], m[1], m[2], m[3], m[4], m[5]]
    }
}
