//! Converts a run trace into a communication schedule and step log for the
//! linear-model replay.
//!
//! Events are packed greedily into global instants: an instant holds at
//! most one event per worker and never both a version's producing compute
//! and a consumer of that version. Queue forwards are plumbing and carry no
//! state change of their own; averaging events that consumed nothing are
//! identity steps and are skipped likewise (their effect on the worker's
//! local counters is already baked into the recorded versions).
//!
//! Within an instant `g`:
//!
//! * a computing event becomes a computing instant for its worker (identity
//!   row) with the recorded step vector as `s_g`;
//! * an averaging event becomes an equal-neighbor row over the worker and
//!   the consumed senders, each consumed `(j, v)` pointing at the instant
//!   where version `v` first became `j`'s state (`tau` = producing instant
//!   plus one);
//! * every other worker gets an identity row.
//!
//! Instants at which only averaging events land have no computing agent;
//! with aligned metronomes that is unavoidable (all workers can face an
//! averaging turn at once, and an averaging event can never share an
//! instant with its own worker's next compute), so the activity check `5a`
//! is reported by the validator rather than guaranteed here. The convexity
//! and delay assumptions hold by construction.

use std::collections::HashMap;

use crate::agreement::{CommSchedule, ScheduleConstants, ScheduleStep, StepLog, WeightEntry};
use crate::agreement::schedule::AgentRow;
use crate::error::{Error, Result};
use crate::runtime::trace::{EventKind, RunTrace};

/// Conversion result: the schedule, the step log, and the instant each
/// trace event was assigned to (`None` for forwards and skipped no-ops).
#[derive(Debug, Clone)]
pub struct ConvertedSchedule {
    pub schedule: CommSchedule,
    pub log: StepLog,
    pub event_instants: Vec<Option<u64>>,
    /// Averaging events that consumed nothing and were skipped.
    pub skipped_noops: u64,
}

pub fn trace_to_schedule(trace: &RunTrace, initial: Vec<Vec<f64>>) -> Result<ConvertedSchedule> {
    let m = trace.m;
    if initial.len() != m {
        return Err(Error::invalid_input("initial state count must equal m"));
    }
    let width = initial.first().map(|v| v.len()).unwrap_or(0);

    // pass 1: assign instants greedily
    let mut event_instants: Vec<Option<u64>> = vec![None; trace.events.len()];
    // (worker, version) -> instant of the producing compute event
    let mut births: Vec<HashMap<u64, u64>> = vec![HashMap::new(); m];
    let mut open_workers: Vec<bool> = vec![false; m];
    let mut open_members: Vec<usize> = Vec::new();
    let mut current_instant: u64 = 1;
    let mut skipped_noops = 0u64;

    for (pos, ev) in trace.events.iter().enumerate() {
        if ev.index != pos as u64 {
            return Err(Error::Integrity(format!(
                "trace event at position {pos} carries index {}",
                ev.index
            )));
        }
        let (worker, consumed): (usize, &[(usize, u64)]) = match &ev.kind {
            EventKind::Forward => continue,
            EventKind::Compute => (ev.actor, &[]),
            EventKind::Average { consumed } => {
                if consumed.is_empty() {
                    skipped_noops += 1;
                    continue;
                }
                (ev.actor, consumed.as_slice())
            }
        };
        if worker >= m {
            return Err(Error::Integrity(format!("worker {worker} out of range")));
        }
        let mut needs_close = open_workers[worker];
        if !needs_close {
            for (j, v) in consumed {
                if *j >= m {
                    return Err(Error::Integrity(format!("sender {j} out of range")));
                }
                if births[*j].get(v) == Some(&current_instant) {
                    needs_close = true;
                    break;
                }
            }
        }
        if needs_close {
            current_instant += 1;
            for &w in &open_members {
                open_workers[w] = false;
            }
            open_members.clear();
        }
        open_workers[worker] = true;
        open_members.push(worker);
        event_instants[pos] = Some(current_instant);
        if matches!(ev.kind, EventKind::Compute) {
            births[worker].insert(ev.local_t, current_instant);
        }
    }
    let num_steps = if open_members.is_empty() && current_instant == 1 {
        0
    } else {
        current_instant as usize
    };

    // pass 2: build rows and the step log
    let mut steps: Vec<ScheduleStep> = (0..num_steps).map(|_| ScheduleStep::idle(m)).collect();
    let mut log = StepLog::new(initial, num_steps)?;
    let mut max_fresh = 0usize;

    for (pos, ev) in trace.events.iter().enumerate() {
        let Some(g) = event_instants[pos] else { continue };
        let step = &mut steps[(g - 1) as usize];
        match &ev.kind {
            EventKind::Compute => {
                step.computing[ev.actor] = true;
                let deltas = ev.step.as_ref().ok_or_else(|| {
                    Error::Integrity(
                        "trace lacks recorded step vectors; rerun with step recording".into(),
                    )
                })?;
                if deltas.len() != width {
                    return Err(Error::Integrity("step vector width mismatch".into()));
                }
                log.set_step(g, ev.actor, deltas.clone())?;
            }
            EventKind::Average { consumed } => {
                let weight = 1.0 / (1 + consumed.len()) as f64;
                max_fresh = max_fresh.max(consumed.len());
                let mut entries: Vec<WeightEntry> = Vec::with_capacity(consumed.len() + 1);
                let mut own_added = false;
                for (j, v) in consumed {
                    if *j > ev.actor && !own_added {
                        entries.push(WeightEntry {
                            peer: ev.actor,
                            weight,
                            sent_at: g,
                        });
                        own_added = true;
                    }
                    let birth = births[*j].get(v).copied().ok_or_else(|| {
                        Error::Integrity(format!(
                            "consumed version {v} of worker {j} was never produced"
                        ))
                    })?;
                    // version v became j's state one instant after its
                    // producing event
                    let sent_at = birth + 1;
                    if sent_at > g {
                        return Err(Error::Integrity(format!(
                            "version {v} of worker {j} consumed at instant {g} before it exists"
                        )));
                    }
                    entries.push(WeightEntry {
                        peer: *j,
                        weight,
                        sent_at,
                    });
                }
                if !own_added {
                    entries.push(WeightEntry {
                        peer: ev.actor,
                        weight,
                        sent_at: g,
                    });
                }
                step.rows[ev.actor] = AgentRow::Weighted(entries);
            }
            EventKind::Forward => unreachable!(),
        }
    }

    let mut schedule = CommSchedule {
        m,
        steps,
        constants: ScheduleConstants {
            alpha: 1.0 / (1 + max_fresh).max(1) as f64,
            b1: 0,
            b2: 0,
        },
    };
    let measured = crate::agreement::schedule::measure_constants(&schedule);
    schedule.constants = ScheduleConstants {
        alpha: measured.alpha,
        b1: measured.b1,
        b2: measured.b2.unwrap_or(0),
    };

    Ok(ConvertedSchedule {
        schedule,
        log,
        event_instants,
        skipped_noops,
    })
}
