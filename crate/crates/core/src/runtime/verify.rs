//! Oracle verification of a run: converts its trace to a communication
//! schedule, validates the schedule assumptions, replays the linear model,
//! and compares the replay against the runtime's estimates at every worker
//! event. The runtime and the replay share combination order and step
//! values, so agreement is expected bit for bit; the acceptance tolerance
//! is `1e-12` per component.
//!
//! Deterministic runs are compared by re-executing the simulation with the
//! same seed and streaming the estimates into the comparator (also
//! re-checking that the re-execution reproduces the recorded trace).
//! Concurrent runs cannot be re-executed, so they must record per-event
//! estimates.

use crate::agreement::{
    agreement_coefficients, AgreementCoefficients, LinearReplay, ValidationReport,
};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::runtime::convert::{trace_to_schedule, ConvertedSchedule};
use crate::runtime::deterministic::run_deterministic_with;
use crate::runtime::trace::TraceEvent;
use crate::runtime::{RunInputs, SimOutput};

pub const REPLAY_TOLERANCE: f64 = 1e-12;

/// First point where replay and runtime disagree beyond tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub event: u64,
    pub worker: usize,
    pub grid_index: usize,
    pub runtime: f64,
    pub replay: f64,
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub conversion: ConvertedSchedule,
    pub validation: ValidationReport,
    pub coefficients: AgreementCoefficients,
    pub events_checked: u64,
    pub max_deviation: f64,
    pub divergence: Option<Divergence>,
    pub replay_ok: bool,
    pub assumptions_ok: bool,
    pub phi_ok: bool,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.replay_ok && self.assumptions_ok && self.phi_ok
    }

    pub fn render_summary(&self) -> String {
        let measured = &self.validation.measured;
        let mut out = String::new();
        out.push_str(&format!(
            "replay: {} ({} events, max deviation {:.3e})\n",
            if self.replay_ok { "PASS" } else { "FAIL" },
            self.events_checked,
            self.max_deviation
        ));
        if let Some(d) = &self.divergence {
            out.push_str(&format!(
                "first divergence: event {} worker {} grid {} runtime {} replay {}\n",
                d.event, d.worker, d.grid_index, d.runtime, d.replay
            ));
        }
        out.push_str(&format!(
            "realized constants: alpha={} B1={} B2={}\n",
            measured.alpha,
            measured.b1,
            measured
                .b2
                .map(|v| v.to_string())
                .unwrap_or_else(|| "n/a".into())
        ));
        out.push_str(&format!(
            "agreement coefficients: A={:.4} rho={:.6} eta_lower={:.3e} final_spread={:.3e}\n",
            self.coefficients.decay_amplitude,
            self.coefficients.decay_rate,
            self.coefficients.min_limit,
            self.coefficients.max_final_spread
        ));
        out
    }
}

struct ReplayComparator<'a> {
    replay: LinearReplay<'a>,
    event_instants: &'a [Option<u64>],
    max_deviation: f64,
    divergence: Option<Divergence>,
    events_checked: u64,
}

impl<'a> ReplayComparator<'a> {
    fn observe(&mut self, event: &TraceEvent, values: &[f64]) {
        if !event.kind.is_worker_event() {
            return;
        }
        if let Some(g) = self.event_instants[event.index as usize] {
            while self.replay.t() < g + 1 {
                self.replay.advance();
            }
        }
        // skipped no-op events compare against the unchanged current state
        let expected = self.replay.state(event.actor);
        self.events_checked += 1;
        for (k, (&got, &want)) in values.iter().zip(expected.iter()).enumerate() {
            let dev = (got - want).abs();
            if dev > self.max_deviation {
                self.max_deviation = dev;
            }
            if dev > REPLAY_TOLERANCE && self.divergence.is_none() {
                self.divergence = Some(Divergence {
                    event: event.index,
                    worker: event.actor,
                    grid_index: k,
                    runtime: got,
                    replay: want,
                });
            }
        }
    }
}

/// Verifies a finished run against the linear-model oracle.
///
/// For deterministic runs `inputs` must describe the same run (the
/// simulation is re-executed); concurrent runs are verified from their
/// recorded per-event estimates.
pub fn verify_run(cfg: &RunConfig, inputs: RunInputs<'_>, sim: &SimOutput) -> Result<VerifyOutcome> {
    let m = sim.trace.m;
    let initial: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let first = &inputs.shards[i][0];
            vec![first.y; inputs.grid.len()]
        })
        .collect();
    let conversion = trace_to_schedule(&sim.trace, initial)?;
    let validation = conversion.schedule.validate();

    let mut comparator = ReplayComparator {
        replay: LinearReplay::new(&conversion.schedule, &conversion.log)?,
        event_instants: &conversion.event_instants,
        max_deviation: 0.0,
        divergence: None,
        events_checked: 0,
    };

    match cfg.mode {
        Mode::Deterministic => {
            let mut cursor = 0usize;
            let mut mismatch: Option<u64> = None;
            let rerun = run_deterministic_with(cfg, inputs, |event, values| {
                // the rerun must retrace the recorded events exactly
                while cursor < sim.trace.events.len()
                    && sim.trace.events[cursor].index < event.index
                {
                    cursor += 1;
                }
                let recorded = sim.trace.events.get(cursor);
                let matches = recorded.map_or(false, |r| {
                    r.index == event.index
                        && r.actor == event.actor
                        && r.local_t == event.local_t
                        && r.kind == event.kind
                });
                if !matches && mismatch.is_none() {
                    mismatch = Some(event.index);
                }
                comparator.observe(event, values);
            })?;
            if let Some(at) = mismatch {
                return Err(Error::Integrity(format!(
                    "re-execution diverged from the recorded trace at event {at}"
                )));
            }
            if let Some(at) = rerun.trace.first_difference(&sim.trace) {
                return Err(Error::Integrity(format!(
                    "re-execution trace differs from the recorded trace at event {at}"
                )));
            }
        }
        Mode::Concurrent => {
            let estimates = sim.per_event_estimates.as_ref().ok_or_else(|| {
                Error::Verification(
                    "concurrent verification needs per-event estimates (record_estimates)".into(),
                )
            })?;
            if estimates.len() != sim.trace.events.len() {
                return Err(Error::Integrity(
                    "recorded estimates do not align with the trace".into(),
                ));
            }
            for (event, values) in sim.trace.events.iter().zip(estimates.iter()) {
                if let Some(values) = values {
                    comparator.observe(event, values);
                }
            }
        }
    }

    let ReplayComparator {
        max_deviation,
        divergence,
        events_checked,
        ..
    } = comparator;

    let num_steps = conversion.schedule.num_steps() as u64;
    let probes: Vec<u64> = [0u64, 1, num_steps / 4, num_steps / 2]
        .into_iter()
        .filter(|&p| p <= num_steps)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let coefficients = agreement_coefficients(&conversion.schedule, &probes)?;

    let replay_ok = divergence.is_none();
    let assumptions_ok = validation.core_pass();
    let phi_ok = coefficients.min_phi >= -1e-12
        && coefficients.min_row_sum >= -1e-10
        && coefficients.max_row_sum <= 1.0 + 1e-10
        && coefficients.max_phi0_row_sum_dev <= 1e-10
        && coefficients.min_limit > 0.0;

    Ok(VerifyOutcome {
        conversion,
        validation,
        coefficients,
        events_checked,
        max_deviation,
        divergence,
        replay_ok,
        assumptions_ok,
        phi_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::data::Observation;
    use crate::estimator::{
        BandwidthSchedule, Estimator, KernelKind, KernelSpec, QueryGrid, StepSchedule,
    };
    use crate::runtime::deterministic::run_deterministic;
    use std::sync::Arc;

    fn setup(m: usize, per_shard: usize, seed: u64) -> (Estimator, Vec<Vec<Observation>>, Arc<QueryGrid>) {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let est = Estimator::new(
            KernelSpec::new(KernelKind::Naive, 1).unwrap(),
            BandwidthSchedule::default_for_dim(1),
            StepSchedule::unit(),
            false,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let shards = (0..m)
            .map(|_| {
                (0..per_shard)
                    .map(|_| Observation {
                        x: vec![rng.random::<f64>()],
                        y: rng.random::<f64>() * 2.0 - 1.0,
                    })
                    .collect()
            })
            .collect();
        let grid = Arc::new(
            QueryGrid::new(1, &[vec![0.1], vec![0.4], vec![0.7]]).unwrap(),
        );
        (est, shards, grid)
    }

    #[test]
    fn deterministic_run_replays_exactly() {
        let (est, shards, grid) = setup(3, 120, 17);
        let mut cfg = RunConfig::default();
        cfg.m = 3;
        cfg.tau = 2;
        cfg.seed = 4;
        cfg.record_steps = true;
        let inputs = || RunInputs {
            estimator: &est,
            shards: &shards,
            grid: grid.clone(),
            test_values: None,
        };
        let sim = run_deterministic(&cfg, inputs()).unwrap();
        let outcome = verify_run(&cfg, inputs(), &sim).unwrap();
        assert!(outcome.replay_ok, "{}", outcome.render_summary());
        assert_eq!(outcome.max_deviation, 0.0, "replay should be bit-exact");
        assert!(outcome.assumptions_ok, "{}", outcome.validation.render());
        assert!(outcome.phi_ok, "{}", outcome.render_summary());
        assert!(outcome.events_checked > 0);
    }

    #[test]
    fn corrupted_traces_are_rejected_with_a_location() {
        let (est, shards, grid) = setup(2, 60, 23);
        let mut cfg = RunConfig::default();
        cfg.m = 2;
        cfg.tau = 2;
        cfg.seed = 9;
        cfg.record_steps = true;
        let inputs = || RunInputs {
            estimator: &est,
            shards: &shards,
            grid: grid.clone(),
            test_values: None,
        };
        let mut sim = run_deterministic(&cfg, inputs()).unwrap();
        // corrupt one consumed version field
        let target = sim
            .trace
            .events
            .iter()
            .position(|e| matches!(&e.kind, crate::runtime::EventKind::Average { consumed } if !consumed.is_empty()))
            .expect("some averaging event consumed a value");
        if let crate::runtime::EventKind::Average { consumed } =
            &mut sim.trace.events[target].kind
        {
            consumed[0].1 += 1;
        }
        let err = verify_run(&cfg, inputs(), &sim);
        match err {
            Err(Error::Integrity(msg)) => {
                assert!(
                    msg.contains("diverged")
                        || msg.contains("never produced")
                        || msg.contains("before it exists"),
                    "{msg}"
                );
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }
}
