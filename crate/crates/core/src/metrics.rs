//! Benchmark metrics: per-worker test error, relative gain against a
//! single-worker baseline, consensus diameter, and work-unit scaling
//! reports.
//!
//! `err` is the unnormalized sum of squared residuals over the test set,
//! exactly as compared across runs; series built from snapshots of runs
//! with the same metronome align by global worker-event count.

use crate::data::Observation;
use crate::error::{Error, Result};
use crate::estimator::EstimateVector;
use crate::runtime::{SimOutput, Snapshot};

/// `sum over the test set of (y - r(x))^2`. The estimate's grid must be the
/// test points, in the same order.
pub fn err(estimate: &EstimateVector, test: &[Observation]) -> Result<f64> {
    if estimate.values.len() != test.len() {
        return Err(Error::invalid_input(format!(
            "estimate covers {} points but the test set has {}",
            estimate.values.len(),
            test.len()
        )));
    }
    for (k, obs) in test.iter().enumerate() {
        if estimate.grid.point(k) != obs.x.as_slice() {
            return Err(Error::invalid_input(format!(
                "grid point {k} does not match the test point"
            )));
        }
    }
    Ok(err_values(&estimate.values, test))
}

fn err_values(values: &[f64], test: &[Observation]) -> f64 {
    values
        .iter()
        .zip(test.iter())
        .map(|(r, obs)| {
            let d = obs.y - r;
            d * d
        })
        .sum()
}

/// `(ERR - mean(ERR_i)) / ERR`; negative when the distributed mean error
/// exceeds the baseline.
pub fn relative_gain(err_baseline: f64, errs: &[f64]) -> Result<f64> {
    if !(err_baseline > 0.0) {
        return Err(Error::invalid_input(
            "relative gain is undefined for a zero baseline error",
        ));
    }
    if errs.is_empty() {
        return Err(Error::invalid_input("need at least one worker error"));
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok((err_baseline - mean) / err_baseline)
}

/// Largest pointwise spread `max_i r_i(x) - min_i r_i(x)` over the grid.
pub fn consensus_diameter(states: &[&[f64]]) -> Result<f64> {
    let first = states
        .first()
        .ok_or_else(|| Error::invalid_input("need at least one state"))?;
    let n = first.len();
    if states.iter().any(|s| s.len() != n) {
        return Err(Error::invalid_input("states cover different grids"));
    }
    let mut diameter = 0.0f64;
    for k in 0..n {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in states {
            lo = lo.min(s[k]);
            hi = hi.max(s[k]);
        }
        diameter = diameter.max(hi - lo);
    }
    Ok(diameter)
}

// ---------------------------------------------------------------------------
// Series
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub worker_events: u64,
    pub computes: u64,
    pub per_worker: Vec<f64>,
    pub mean: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub rows: Vec<ErrorRow>,
}

impl ErrorSeries {
    /// The row closest to the given fraction of total progress.
    pub fn at_progress(&self, fraction: f64) -> Option<&ErrorRow> {
        let last = self.rows.last()?;
        let target = (last.worker_events as f64 * fraction).round() as i64;
        self.rows
            .iter()
            .min_by_key(|r| (r.worker_events as i64 - target).abs())
    }

    pub fn final_row(&self) -> Option<&ErrorRow> {
        self.rows.last()
    }
}

/// Evaluates test errors and the consensus diameter at every snapshot.
pub fn error_series(snapshots: &[Snapshot], test: &[Observation]) -> Result<ErrorSeries> {
    let mut rows = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let per_worker: Vec<f64> = snap
            .estimates
            .iter()
            .map(|values| {
                if values.len() != test.len() {
                    Err(Error::invalid_input("snapshot grid does not match the test set"))
                } else {
                    Ok(err_values(values, test))
                }
            })
            .collect::<Result<_>>()?;
        let mean = per_worker.iter().sum::<f64>() / per_worker.len() as f64;
        let states: Vec<&[f64]> = snap.estimates.iter().map(|v| v.as_slice()).collect();
        rows.push(ErrorRow {
            worker_events: snap.worker_events,
            computes: snap.computes,
            per_worker,
            mean,
            diameter: consensus_diameter(&states)?,
        });
    }
    Ok(ErrorSeries { rows })
}

#[derive(Debug, Clone)]
pub struct GainRow {
    pub worker_events: u64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct GainSeries {
    pub rows: Vec<GainRow>,
}

impl GainSeries {
    pub fn final_gain(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gain)
    }

    /// `(min, median, max)` over the series.
    pub fn summary(&self) -> Option<(f64, f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let mut gains: Vec<f64> = self.rows.iter().map(|r| r.gain).collect();
        gains.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some((gains[0], gains[gains.len() / 2], gains[gains.len() - 1]))
    }
}

/// Relative gain per snapshot, aligning baseline and distributed series on
/// common worker-event counts. Runs with the same metronome and total data
/// budget produce identical event grids, so the intersection is the whole
/// series up to boundary effects. Snapshots with a zero baseline error are
/// skipped (the gain is undefined there).
pub fn gain_series(baseline: &ErrorSeries, distributed: &ErrorSeries) -> GainSeries {
    let mut rows = Vec::new();
    let mut b = baseline.rows.iter().peekable();
    for row in &distributed.rows {
        while let Some(cand) = b.peek() {
            if cand.worker_events < row.worker_events {
                b.next();
            } else {
                break;
            }
        }
        match b.peek() {
            Some(cand) if cand.worker_events == row.worker_events => {
                let err_baseline = cand.per_worker[0];
                if err_baseline > 0.0 {
                    let mean = row.mean;
                    rows.push(GainRow {
                        worker_events: row.worker_events,
                        gain: (err_baseline - mean) / err_baseline,
                    });
                }
            }
            _ => {}
        }
    }
    GainSeries { rows }
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub m: usize,
    pub tau: u64,
    pub total_worker_events: u64,
    /// Largest per-worker event count.
    pub makespan_events: u64,
    /// Largest per-worker work-unit count (averages cost one unit plus one
    /// per consumed fresh value).
    pub makespan_work: u64,
    /// Baseline work divided by the worker count.
    pub optimal_work: f64,
    /// `makespan_work / optimal_work`.
    pub overhead_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub baseline_work: u64,
    pub rows: Vec<ScalingRow>,
}

/// Work-unit scaling against the single-worker baseline. All runs must have
/// processed the same total number of observations.
pub fn scaling_report(runs: &[(usize, u64, &SimOutput)], baseline: &SimOutput) -> Result<ScalingReport> {
    let baseline_computes = baseline.stats.total_computes;
    let baseline_work: u64 = baseline.workers.iter().map(|w| w.stats.work_units).sum();
    let mut rows = Vec::with_capacity(runs.len());
    for &(m, tau, sim) in runs {
        if sim.stats.total_computes != baseline_computes {
            return Err(Error::invalid_input(format!(
                "run with m = {m} processed {} observations, baseline processed {}",
                sim.stats.total_computes, baseline_computes
            )));
        }
        let makespan_events = sim.workers.iter().map(|w| w.events).max().unwrap_or(0);
        let makespan_work = sim
            .workers
            .iter()
            .map(|w| w.stats.work_units)
            .max()
            .unwrap_or(0);
        let optimal_work = baseline_work as f64 / m as f64;
        rows.push(ScalingRow {
            m,
            tau,
            total_worker_events: sim.stats.total_worker_events,
            makespan_events,
            makespan_work,
            optimal_work,
            overhead_ratio: makespan_work as f64 / optimal_work,
        });
    }
    Ok(ScalingReport {
        baseline_work,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::QueryGrid;
    use std::sync::Arc;

    fn obs(points: &[(f64, f64)]) -> Vec<Observation> {
        points
            .iter()
            .map(|&(x, y)| Observation { x: vec![x], y })
            .collect()
    }

    fn estimate(test: &[Observation], values: Vec<f64>) -> EstimateVector {
        EstimateVector {
            grid: Arc::new(QueryGrid::from_observations(test).unwrap()),
            values,
            t: 1,
        }
    }

    #[test]
    fn err_examples() {
        let test = obs(&[(0.0, 1.0)]);
        let perfect = estimate(&test, vec![1.0]);
        assert_eq!(err(&perfect, &test).unwrap(), 0.0);

        let half = estimate(&test, vec![0.5]);
        assert_eq!(err(&half, &test).unwrap(), 0.25);

        let test2 = obs(&[(0.0, 1.0), (1.0, 0.0)]);
        let e = estimate(&test2, vec![0.9, 0.2]);
        let got = err(&e, &test2).unwrap();
        assert!((got - 0.05).abs() < 1e-15);
    }

    #[test]
    fn err_rejects_mismatched_grids() {
        let test = obs(&[(0.0, 1.0), (1.0, 0.0)]);
        let e = estimate(&obs(&[(0.0, 1.0), (0.5, 0.0)]), vec![0.0, 0.0]);
        assert!(err(&e, &test).is_err());
    }

    #[test]
    fn relative_gain_examples() {
        assert_eq!(relative_gain(2.0, &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_gain(2.0, &[1.0, 1.0]).unwrap(), 0.5);
        let got = relative_gain(1.0, &[1.02]).unwrap();
        assert!((got - (-0.02)).abs() < 1e-12);
        assert!(relative_gain(0.0, &[1.0]).is_err());
    }

    /// The gain formula against an independently coded evaluation on random
    /// inputs.
    #[test]
    fn relative_gain_matches_independent_evaluation() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..200 {
            let e: f64 = rng.random::<f64>() + 0.01;
            let errs: Vec<f64> = (0..rng.random_range(1..6))
                .map(|_| rng.random::<f64>() * 2.0)
                .collect();
            let got = relative_gain(e, &errs).unwrap();
            let mut acc = 0.0;
            for v in &errs {
                acc += v / errs.len() as f64;
            }
            let want = 1.0 - acc / e;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn diameter_examples() {
        let a = vec![0.1, 0.2];
        let b = vec![0.1, 0.2];
        assert_eq!(consensus_diameter(&[&a, &b]).unwrap(), 0.0);

        let c = vec![0.0];
        let d = vec![1.0];
        assert_eq!(consensus_diameter(&[&c, &d]).unwrap(), 1.0);

        let x = vec![0.1];
        let y = vec![0.4];
        let z = vec![0.2];
        let got = consensus_diameter(&[&x, &y, &z]).unwrap();
        assert!((got - 0.3).abs() < 1e-15);

        let short = vec![0.0, 0.0];
        assert!(consensus_diameter(&[&c, &short]).is_err());
    }
}
