//! Agreement coefficients of the linear iteration and derived sequences.
//!
//! By linearity, every state of the iteration expands over the initial
//! values and past computation terms:
//!
//! ```text
//! z_t[i] = sum_j phi[i][j](t, 0) * z_1[j]
//!        + sum_{tau < t} sum_j phi[i][j](t, tau) * s_tau[j]
//! ```
//!
//! The coefficients are recovered by impulse response: a unit initial value
//! at agent `j` (for `tau = 0`), or a unit step `s_tau[j] = 1` (for
//! `tau >= 1`), with everything else zero. Under the schedule assumptions
//! (Tsitsiklis et al., 1986) the coefficients are nonnegative with row sums
//! in `[0, 1]`, the `tau = 0` row sums are exactly 1, and for each `(j, tau)`
//! the cross-agent spread decays geometrically in `t - tau` towards a common
//! limit bounded away from zero.
//!
//! On a finite horizon the limits are estimated by the value at the final
//! state, with the residual cross-agent spread reported as the approximation
//! error, and the decay constants `(A, rho)` are fitted by least squares on
//! the log-spread.

use crate::agreement::linear::{run_linear_model, StepLog};
use crate::agreement::schedule::CommSchedule;
use crate::error::{Error, Result};
use crate::estimator::BandwidthSchedule;

/// Coefficient probes plus fitted decay constants.
#[derive(Debug, Clone)]
pub struct AgreementCoefficients {
    pub m: usize,
    /// The probed `tau` values.
    pub probes: Vec<u64>,
    /// `final_slice[p][i][j] = phi[i][j](T+1, probes[p])` at the final state.
    pub final_slice: Vec<Vec<Vec<f64>>>,
    /// Limit estimates `limits[p][j]`, taken from the last agent's row of
    /// the final state.
    pub limits: Vec<Vec<f64>>,
    /// Fitted `A` of the spread bound `A * rho^(t - tau)`.
    pub decay_amplitude: f64,
    /// Fitted `rho`; decaying schedules give `rho < 1`.
    pub decay_rate: f64,
    /// Least-squares slope of `ln spread` against `t - tau` (negative for
    /// geometric decay).
    pub decay_slope: f64,
    /// Smallest limit estimate over all probes (the `eta` lower bound).
    pub min_limit: f64,
    /// Largest cross-agent spread remaining at the final state.
    pub max_final_spread: f64,
    /// Smallest coefficient observed anywhere (nonnegativity check).
    pub min_phi: f64,
    /// Extremes of the row sums `sum_j phi[i][j](t, tau)` over all probes.
    pub min_row_sum: f64,
    pub max_row_sum: f64,
    /// Largest deviation of a `tau = 0` row sum from exactly 1.
    pub max_phi0_row_sum_dev: f64,
}

/// Runs one impulse response: trajectory of `phi[.][j](t, tau)` for all
/// agents and states `t = 1..=T+1` (zero for `t <= tau`).
fn impulse_response(sched: &CommSchedule, j: usize, tau: u64) -> Result<Vec<Vec<f64>>> {
    let m = sched.m;
    let num_steps = sched.num_steps();
    let mut initial = vec![0.0; m];
    let log = if tau == 0 {
        initial[j] = 1.0;
        StepLog::scalar(&initial, num_steps)?
    } else {
        let mut log = StepLog::scalar(&initial, num_steps)?;
        log.set_step(tau, j, vec![1.0])?;
        log
    };
    let traj = run_linear_model(sched, &log)?;
    Ok(traj.into_iter().map(|states| states.into_iter().map(|v| v[0]).collect()).collect())
}

/// Default probe set: `tau = 0`, `tau = 1`, and two interior checkpoints.
pub fn default_probes(num_steps: usize) -> Vec<u64> {
    let t = num_steps as u64;
    let mut probes = vec![0, 1, t / 4, t / 2];
    probes.sort_unstable();
    probes.dedup();
    probes.retain(|&p| p <= t);
    probes
}

/// Computes coefficient probes and fits the spread decay.
///
/// Probes should stay well below the horizon; the limit estimate for a probe
/// `tau` has only `T - tau` instants to converge.
pub fn agreement_coefficients(
    sched: &CommSchedule,
    probes: &[u64],
) -> Result<AgreementCoefficients> {
    let m = sched.m;
    let num_steps = sched.num_steps() as u64;
    if probes.is_empty() {
        return Err(Error::invalid_input("need at least one probe"));
    }
    if probes.iter().any(|&p| p > num_steps) {
        return Err(Error::invalid_input("probe tau beyond the horizon"));
    }

    let mut final_slice = Vec::with_capacity(probes.len());
    let mut limits = Vec::with_capacity(probes.len());
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut min_phi = f64::INFINITY;
    let mut min_row_sum = f64::INFINITY;
    let mut max_row_sum = f64::NEG_INFINITY;
    let mut max_phi0_dev = 0.0f64;
    let mut max_final_spread = 0.0f64;

    for &tau in probes {
        // trajectories[j][t-1][i]
        let mut trajectories = Vec::with_capacity(m);
        for j in 0..m {
            trajectories.push(impulse_response(sched, j, tau)?);
        }
        let t_final = num_steps + 1;

        let mut slice = vec![vec![0.0; m]; m];
        let mut probe_limits = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                slice[i][j] = trajectories[j][(t_final - 1) as usize][i];
            }
            probe_limits[j] = trajectories[j][(t_final - 1) as usize][m - 1];
        }

        for t in (tau + 1)..=t_final {
            let idx = (t - 1) as usize;
            for i in 0..m {
                let mut row_sum = 0.0;
                for j in 0..m {
                    let v = trajectories[j][idx][i];
                    min_phi = min_phi.min(v);
                    row_sum += v;
                }
                min_row_sum = min_row_sum.min(row_sum);
                max_row_sum = max_row_sum.max(row_sum);
                if tau == 0 {
                    max_phi0_dev = max_phi0_dev.max((row_sum - 1.0).abs());
                }
            }
            // cross-agent spread per source agent j
            for j in 0..m {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..m {
                    let v = trajectories[j][idx][i];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let spread = hi - lo;
                let delta = t - tau;
                if delta >= 2 && spread > 0.0 {
                    samples.push((delta as f64, spread.ln()));
                }
                if t == t_final {
                    max_final_spread = max_final_spread.max(spread);
                }
            }
        }

        final_slice.push(slice);
        limits.push(probe_limits);
    }

    let (intercept, slope) = least_squares(&samples);
    let min_limit = limits
        .iter()
        .flat_map(|l| l.iter().copied())
        .fold(f64::INFINITY, f64::min);

    Ok(AgreementCoefficients {
        m,
        probes: probes.to_vec(),
        final_slice,
        limits,
        decay_amplitude: intercept.exp(),
        decay_rate: slope.exp(),
        decay_slope: slope,
        min_limit,
        max_final_spread,
        min_phi,
        min_row_sum,
        max_row_sum,
        max_phi0_row_sum_dev: max_phi0_dev,
    })
}

/// Ordinary least squares `y = intercept + slope * x`; degenerate sample
/// sets fall back to a flat fit.
fn least_squares(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        let y = samples.first().map(|s| s.1).unwrap_or(f64::NEG_INFINITY);
        return (y, 0.0);
    }
    let sx: f64 = samples.iter().map(|s| s.0).sum();
    let sy: f64 = samples.iter().map(|s| s.1).sum();
    let sxx: f64 = samples.iter().map(|s| s.0 * s.0).sum();
    let sxy: f64 = samples.iter().map(|s| s.0 * s.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return (sy / n, 0.0);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (intercept, slope)
}

/// Full limit table `limits[tau][j]` for `tau = 0..=num_steps`, estimated at
/// the final state. Quadratic in the horizon; intended for analysis-sized
/// schedules.
pub fn limit_coefficients(sched: &CommSchedule) -> Result<Vec<Vec<f64>>> {
    let m = sched.m;
    let num_steps = sched.num_steps() as u64;
    let mut limits = Vec::with_capacity((num_steps + 1) as usize);
    for tau in 0..=num_steps {
        let mut row = vec![0.0; m];
        for j in 0..m {
            let traj = impulse_response(sched, j, tau)?;
            row[j] = traj[num_steps as usize][m - 1];
        }
        limits.push(row);
    }
    Ok(limits)
}

/// The agreement trajectory: the value all agents would converge to if
/// computation stopped at each instant while communication continued.
#[derive(Debug, Clone)]
pub struct AgreementTrajectory {
    /// `z_star[t-1]` per component, for states `t = 1..=num_steps+1`.
    pub z_star: Vec<Vec<f64>>,
    /// Largest deviation between the recursion and the direct expansion.
    pub recursion_vs_direct: f64,
}

/// Evaluates the agreement sequence
///
/// ```text
/// z*_1     = sum_j limits[0][j] * z_1[j]
/// z*_{t+1} = z*_t + sum_j limits[t][j] * s_t[j]
/// ```
///
/// and cross-checks it against the direct (non-incremental) expansion.
pub fn agreement_sequence(
    sched: &CommSchedule,
    log: &StepLog,
    limits: &[Vec<f64>],
) -> Result<AgreementTrajectory> {
    let m = sched.m;
    let num_steps = sched.num_steps();
    if log.m() != m || log.num_steps() != num_steps {
        return Err(Error::invalid_input("schedule and step log disagree"));
    }
    if limits.len() < num_steps + 1 {
        return Err(Error::invalid_input("need limits for tau = 0..=num_steps"));
    }
    let width = log.width();

    let mut z = vec![0.0; width];
    for j in 0..m {
        for c in 0..width {
            z[c] += limits[0][j] * log.initial()[j][c];
        }
    }
    let mut z_star = Vec::with_capacity(num_steps + 1);
    z_star.push(z.clone());
    for t in 1..=num_steps as u64 {
        for j in 0..m {
            if let Some(s) = log.step(t, j) {
                let w = limits[t as usize][j];
                for c in 0..width {
                    z[c] += w * s[c];
                }
            }
        }
        z_star.push(z.clone());
    }

    // direct expansion, summed independently per state
    let mut max_dev = 0.0f64;
    for (idx, z_rec) in z_star.iter().enumerate() {
        let t = (idx + 1) as u64;
        let mut direct = vec![0.0; width];
        for j in 0..m {
            for c in 0..width {
                direct[c] += limits[0][j] * log.initial()[j][c];
            }
        }
        for tau in 1..t {
            for j in 0..m {
                if let Some(s) = log.step(tau, j) {
                    let w = limits[tau as usize][j];
                    for c in 0..width {
                        direct[c] += w * s[c];
                    }
                }
            }
        }
        for c in 0..width {
            max_dev = max_dev.max((direct[c] - z_rec[c]).abs());
        }
    }

    Ok(AgreementTrajectory {
        z_star,
        recursion_vs_direct: max_dev,
    })
}

/// The geometric-tail sequence bounding worker disagreement:
///
/// ```text
/// xi_t = sum_{tau=0}^{t-1} rho^(t-tau) / ((tau+1) * h_{tau+1}^d)
/// ```
///
/// evaluated by the exact recursion
/// `xi_{t+1} = rho * (xi_t + 1 / ((t+1) h_{t+1}^d))`. When `t * h_t^d`
/// diverges, the sequence tends to zero.
pub fn disagreement_bound_sequence(
    bandwidth: &BandwidthSchedule,
    dim: usize,
    rho: f64,
    t_max: u64,
) -> Result<Vec<f64>> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::invalid_input("rho must lie in (0, 1)"));
    }
    if t_max < 1 {
        return Err(Error::invalid_input("horizon must be >= 1"));
    }
    let hd = |t: u64| -> Result<f64> { Ok(bandwidth.at(t)?.powi(dim as i32)) };
    let mut out = Vec::with_capacity(t_max as usize);
    let mut xi = rho / (1.0 * hd(1)?);
    out.push(xi);
    for t in 1..t_max {
        let next_term = 1.0 / ((t + 1) as f64 * hd(t + 1)?);
        xi = rho * (xi + next_term);
        out.push(xi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::schedule::{
        random_valid_schedule, AgentRow, CommSchedule, ScheduleConstants, ScheduleStep, WeightEntry,
    };

    fn single_agent(num_steps: usize) -> CommSchedule {
        CommSchedule {
            m: 1,
            steps: (0..num_steps)
                .map(|_| ScheduleStep {
                    rows: vec![AgentRow::Identity],
                    computing: vec![true],
                })
                .collect(),
            constants: ScheduleConstants {
                alpha: 1.0,
                b1: 0,
                b2: 0,
            },
        }
    }

    fn full_averaging(m: usize, num_steps: usize) -> CommSchedule {
        let steps = (0..num_steps)
            .map(|idx| {
                let t = (idx + 1) as u64;
                let w = 1.0 / m as f64;
                let rows = (0..m)
                    .map(|_| {
                        AgentRow::Weighted(
                            (0..m)
                                .map(|j| WeightEntry {
                                    peer: j,
                                    weight: w,
                                    sent_at: t,
                                })
                                .collect(),
                        )
                    })
                    .collect();
                ScheduleStep {
                    rows,
                    computing: vec![false; m],
                }
            })
            .collect();
        CommSchedule {
            m,
            steps,
            constants: ScheduleConstants {
                alpha: 1.0 / m as f64,
                b1: 0,
                b2: 0,
            },
        }
    }

    #[test]
    fn single_agent_coefficients_are_all_one() {
        let sched = single_agent(10);
        for tau in [0u64, 1, 5, 9] {
            let traj = impulse_response(&sched, 0, tau).unwrap();
            for t in (tau + 1)..=10 {
                assert_eq!(traj[t as usize][0], 1.0, "tau={tau} t={t}");
            }
        }
    }

    #[test]
    fn two_agent_averaging_splits_the_impulse() {
        let sched = full_averaging(2, 12);
        let coeffs = agreement_coefficients(&sched, &[0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((coeffs.final_slice[0][i][j] - 0.5).abs() < 1e-12);
            }
        }
        assert!(coeffs.max_final_spread < 1e-12);
    }

    #[test]
    fn phi0_row_sums_are_one_on_random_schedules() {
        for seed in 0..4 {
            let sched = random_valid_schedule(4, 80, 2, seed);
            let coeffs = agreement_coefficients(&sched, &[0, 1, 10, 40]).unwrap();
            assert!(coeffs.max_phi0_row_sum_dev < 1e-12, "seed {seed}");
            assert!(coeffs.min_phi >= -1e-12);
            assert!(coeffs.min_row_sum >= -1e-10);
            assert!(coeffs.max_row_sum <= 1.0 + 1e-10);
            assert!(coeffs.decay_slope < 0.0, "seed {seed}: no decay");
            assert!(coeffs.min_limit > 0.0);
        }
    }

    #[test]
    fn agreement_sequence_matches_known_cases() {
        // all steps zero: z* is constant
        let sched = random_valid_schedule(3, 50, 1, 7);
        let log = StepLog::scalar(&[0.2, 0.4, 0.9], 50).unwrap();
        let limits = limit_coefficients(&sched).unwrap();
        let traj = agreement_sequence(&sched, &log, &limits).unwrap();
        let first = traj.z_star[0][0];
        for z in &traj.z_star {
            assert_eq!(z[0], first);
        }
        assert!(traj.recursion_vs_direct <= 1e-10);

        // single agent: z*_t equals the agent's own trajectory
        let sched = single_agent(6);
        let mut log = StepLog::scalar(&[0.5], 6).unwrap();
        for t in 1..=6 {
            log.set_step(t, 0, vec![0.1 * t as f64]).unwrap();
        }
        let limits = limit_coefficients(&sched).unwrap();
        let traj = agreement_sequence(&sched, &log, &limits).unwrap();
        let z = run_linear_model(&sched, &log).unwrap();
        for (idx, state) in z.iter().enumerate() {
            assert!((traj.z_star[idx][0] - state[0][0]).abs() < 1e-12);
        }

        // symmetric two-agent averaging with initial (0, 1): z* = 0.5
        let sched = full_averaging(2, 8);
        let log = StepLog::scalar(&[0.0, 1.0], 8).unwrap();
        let limits = limit_coefficients(&sched).unwrap();
        let traj = agreement_sequence(&sched, &log, &limits).unwrap();
        for z in &traj.z_star {
            assert!((z[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_starts_at_rho_and_decays() {
        let bw = BandwidthSchedule::PowerLaw { exponent: 0.2 };
        let xi = disagreement_bound_sequence(&bw, 1, 0.5, 1).unwrap();
        assert_eq!(xi[0], 0.5);

        let xi = disagreement_bound_sequence(&bw, 1, 0.5, 10_000).unwrap();
        assert!(xi[9_999] < xi[999]);
        assert!(xi[9_999] < 1e-2);
    }

    #[test]
    fn xi_matches_a_direct_double_loop() {
        // h_t = 1 for all t: cross-check the recursion against independent
        // direct summation
        let bw = BandwidthSchedule::Table(vec![1.0]);
        let rho = 0.5;
        let xi = disagreement_bound_sequence(&bw, 3, rho, 200).unwrap();
        for t in [1u64, 2, 17, 100, 200] {
            let mut direct = 0.0;
            for tau in 0..t {
                direct += rho.powi((t - tau) as i32) / ((tau + 1) as f64);
            }
            let got = xi[(t - 1) as usize];
            assert!(
                (got - direct).abs() <= 1e-12 * (1.0 + direct.abs()),
                "t={t}: {got} vs {direct}"
            );
        }
    }
}
