//! Concurrent mode: one thread per worker and per queue, communicating only
//! over channels. No data structure is shared mutably; each queue thread is
//! the single writer of its map, and per-entry write epochs instrument that
//! discipline so a violation would be counted rather than silently race.
//!
//! A global atomic counter stamps every event as it commits. A worker
//! acquires its stamp before broadcasting the new value, so any consumer of
//! that value commits later and the merged trace is causally ordered and
//! replayable.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::RunConfig;
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, QueryGrid};
use crate::runtime::{
    num_queues, queue_of, EstimateMessage, EventKind, QueueMap, RunInputs, RunStats, RunTrace,
    SimOutput, Snapshot, TraceEvent, WorkerState,
};

enum QueueMsg {
    Worker(EstimateMessage),
    Ring(Vec<Option<EstimateMessage>>),
    GetFresh {
        reply: Sender<Vec<Option<EstimateMessage>>>,
    },
    Shutdown,
}

struct QueueThread {
    m: usize,
    rx: Receiver<QueueMsg>,
    next: Sender<QueueMsg>,
    epochs: Arc<Vec<AtomicU64>>,
    conflicts: Arc<AtomicU64>,
    counter: Arc<AtomicU64>,
}

struct QueueLog {
    forwards: Vec<(u64, u64)>, // (stamp, hop count)
}

impl QueueThread {
    fn run(self) -> QueueLog {
        let mut map = QueueMap::new(self.m);
        let mut hops = 0u64;
        let mut log = QueueLog {
            forwards: Vec::new(),
        };
        while let Ok(msg) = self.rx.recv() {
            match msg {
                QueueMsg::Worker(msg) => {
                    let sender = msg.sender;
                    let begin = self.epochs[sender].fetch_add(1, Ordering::SeqCst);
                    if begin % 2 != 0 {
                        self.conflicts.fetch_add(1, Ordering::SeqCst);
                    }
                    map.apply_worker_message(msg);
                    self.epochs[sender].fetch_add(1, Ordering::SeqCst);
                }
                QueueMsg::Ring(snapshot) => {
                    for (j, incoming) in snapshot.iter().enumerate() {
                        if incoming.is_some() {
                            let begin = self.epochs[j].fetch_add(1, Ordering::SeqCst);
                            if begin % 2 != 0 {
                                self.conflicts.fetch_add(1, Ordering::SeqCst);
                            }
                        }
                    }
                    map.merge_snapshot(&snapshot);
                    for (j, incoming) in snapshot.iter().enumerate() {
                        if incoming.is_some() {
                            self.epochs[j].fetch_add(1, Ordering::SeqCst);
                        }
                    }
                    hops += 1;
                    let stamp = self.counter.fetch_add(1, Ordering::SeqCst);
                    log.forwards.push((stamp, hops));
                    // forward the updated content; a shut-down neighbor just
                    // drops the token
                    let _ = self.next.send(QueueMsg::Ring(map.snapshot()));
                }
                QueueMsg::GetFresh { reply } => {
                    let _ = reply.send(map.snapshot());
                }
                QueueMsg::Shutdown => break,
            }
        }
        log
    }
}

struct WorkerLog {
    state: WorkerState,
    events: Vec<(u64, TraceEvent)>,
    estimates: Vec<Option<Vec<f64>>>,
}

#[allow(clippy::too_many_arguments)]
fn worker_thread(
    mut state: WorkerState,
    estimator: Estimator,
    shard: Vec<Observation>,
    tau: u64,
    queue: Sender<QueueMsg>,
    counter: Arc<AtomicU64>,
    record_steps: bool,
    record_estimates: bool,
    snapshot_every: u64,
    test_values: Option<Arc<Vec<f64>>>,
) -> WorkerLog {
    let mut events: Vec<(u64, TraceEvent)> = Vec::new();
    let mut estimates: Vec<Option<Vec<f64>>> = Vec::new();
    let (reply_tx, reply_rx) = channel();
    let mut deltas: Vec<f64> = Vec::new();
    loop {
        if state.next_is_compute(tau) {
            let delta_slot = record_steps.then_some(&mut deltas);
            match state.compute_step(&estimator, &shard, delta_slot) {
                None => break,
                Some(msg) => {
                    // stamp and log before broadcasting so every consumer
                    // of this version commits later
                    let stamp = counter.fetch_add(1, Ordering::SeqCst);
                    events.push((
                        stamp,
                        TraceEvent {
                            index: stamp,
                            actor: state.id,
                            local_t: state.events,
                            kind: EventKind::Compute,
                            step: record_steps.then(|| deltas.clone()),
                        },
                    ));
                    if record_estimates {
                        estimates.push(Some(state.estimate.values.clone()));
                    }
                    if queue.send(QueueMsg::Worker(msg)).is_err() {
                        break;
                    }
                }
            }
        } else {
            if queue
                .send(QueueMsg::GetFresh {
                    reply: reply_tx.clone(),
                })
                .is_err()
            {
                break;
            }
            let Ok(entries) = reply_rx.recv() else { break };
            let fresh = state.fresh_from(&entries);
            let consumed: Vec<(usize, u64)> = fresh.iter().map(|f| (f.sender, f.version)).collect();
            state.average_step(&fresh);
            let stamp = counter.fetch_add(1, Ordering::SeqCst);
            events.push((
                stamp,
                TraceEvent {
                    index: stamp,
                    actor: state.id,
                    local_t: state.events,
                    kind: EventKind::Average { consumed },
                    step: None,
                },
            ));
            if record_estimates {
                estimates.push(Some(state.estimate.values.clone()));
            }
        }
        if snapshot_every > 0 && state.events % snapshot_every == 0 {
            if let Some(test) = &test_values {
                let err: f64 = state
                    .estimate
                    .values
                    .iter()
                    .zip(test.iter())
                    .map(|(r, y)| (y - r) * (y - r))
                    .sum();
                state.stats.err_series.push((state.events, err));
            }
        }
    }
    WorkerLog {
        state,
        events,
        estimates,
    }
}

/// Runs the concurrent mode and merges the per-thread logs into one trace
/// ordered by the global counter.
pub fn run_concurrent(cfg: &RunConfig, inputs: RunInputs<'_>) -> Result<SimOutput> {
    cfg.validate_runtime(inputs.shards.len())?;
    let started = Instant::now();
    let m = cfg.m;
    let q = num_queues(m);
    let snapshot_every = cfg.snapshot_cadence(inputs.shards);

    let counter = Arc::new(AtomicU64::new(0));
    let conflicts = Arc::new(AtomicU64::new(0));

    let mut queue_txs: Vec<Sender<QueueMsg>> = Vec::with_capacity(q);
    let mut queue_rxs: Vec<Option<Receiver<QueueMsg>>> = Vec::with_capacity(q);
    for _ in 0..q {
        let (tx, rx) = channel();
        queue_txs.push(tx);
        queue_rxs.push(Some(rx));
    }

    let mut queue_handles = Vec::with_capacity(q);
    for id in 0..q {
        let thread = QueueThread {
            m,
            rx: queue_rxs[id].take().expect("receiver taken once"),
            next: queue_txs[(id + 1) % q].clone(),
            epochs: Arc::new((0..m).map(|_| AtomicU64::new(0)).collect()),
            conflicts: conflicts.clone(),
            counter: counter.clone(),
        };
        queue_handles.push(
            thread::Builder::new()
                .name(format!("queue-{id}"))
                .spawn(move || thread.run())
                .map_err(Error::Io)?,
        );
    }

    // ring bootstrap: one seeded queue receives an empty snapshot and emits
    // its content to the next queue
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let start_queue = rng.random_range(0..q);
    queue_txs[start_queue]
        .send(QueueMsg::Ring(vec![None; m]))
        .map_err(|_| Error::Integrity("bootstrap queue hung up".into()))?;

    let mut worker_handles = Vec::with_capacity(m);
    for id in 0..m {
        let state = WorkerState::init(id, m, inputs.estimator, &inputs.shards[id], inputs.grid.clone())?;
        let estimator = inputs.estimator.clone();
        let shard = inputs.shards[id].clone();
        let queue = queue_txs[queue_of(id)].clone();
        let counter = counter.clone();
        let test_values = inputs.test_values.clone();
        let tau = cfg.tau;
        let record_steps = cfg.record_steps;
        let record_estimates = cfg.record_estimates;
        worker_handles.push(
            thread::Builder::new()
                .name(format!("worker-{id}"))
                .spawn(move || {
                    worker_thread(
                        state,
                        estimator,
                        shard,
                        tau,
                        queue,
                        counter,
                        record_steps,
                        record_estimates,
                        snapshot_every,
                        test_values,
                    )
                })
                .map_err(Error::Io)?,
        );
    }

    let mut worker_logs: Vec<WorkerLog> = Vec::with_capacity(m);
    for handle in worker_handles {
        worker_logs.push(
            handle
                .join()
                .map_err(|_| Error::Integrity("worker thread panicked".into()))?,
        );
    }
    for tx in &queue_txs {
        let _ = tx.send(QueueMsg::Shutdown);
    }
    drop(queue_txs);
    let mut queue_logs: Vec<QueueLog> = Vec::with_capacity(q);
    for handle in queue_handles {
        queue_logs.push(
            handle
                .join()
                .map_err(|_| Error::Integrity("queue thread panicked".into()))?,
        );
    }

    // merge the per-thread logs by stamp
    let mut merged: Vec<(u64, TraceEvent, Option<Vec<f64>>)> = Vec::new();
    for (wid, log) in worker_logs.iter_mut().enumerate() {
        let estimates = std::mem::take(&mut log.estimates);
        let mut est_iter = estimates.into_iter();
        for (stamp, event) in log.events.drain(..) {
            let est = if cfg.record_estimates {
                est_iter.next().flatten()
            } else {
                None
            };
            debug_assert_eq!(event.actor, wid);
            merged.push((stamp, event, est));
        }
    }
    for (qid, log) in queue_logs.iter().enumerate() {
        for &(stamp, hops) in &log.forwards {
            merged.push((
                stamp,
                TraceEvent {
                    index: stamp,
                    actor: qid,
                    local_t: hops,
                    kind: EventKind::Forward,
                    step: None,
                },
                None,
            ));
        }
    }
    merged.sort_by_key(|(stamp, _, _)| *stamp);
    // stamps are dense: every fetch_add corresponds to exactly one event
    for (rank, (stamp, _, _)) in merged.iter().enumerate() {
        if *stamp != rank as u64 {
            return Err(Error::Integrity(format!(
                "event stamps are not dense at rank {rank} (stamp {stamp})"
            )));
        }
    }

    let mut events = Vec::with_capacity(merged.len());
    let mut per_event_estimates = cfg.record_estimates.then(|| Vec::with_capacity(merged.len()));
    for (_, event, est) in merged {
        if let Some(rec) = per_event_estimates.as_mut() {
            rec.push(est);
        }
        events.push(event);
    }

    let workers: Vec<WorkerState> = worker_logs.into_iter().map(|l| l.state).collect();
    let stats = RunStats {
        total_worker_events: workers.iter().map(|w| w.events).sum(),
        total_computes: workers.iter().map(|w| w.stats.computes).sum(),
        queue_forwards: queue_logs.iter().map(|l| l.forwards.len() as u64).sum(),
        write_conflicts: conflicts.load(Ordering::SeqCst),
        wall_time: started.elapsed(),
    };

    // final synchronized snapshot (workers have all stopped)
    let snapshots = vec![Snapshot {
        worker_events: stats.total_worker_events,
        computes: stats.total_computes,
        estimates: workers.iter().map(|w| w.estimate.values.clone()).collect(),
    }];

    Ok(SimOutput {
        workers,
        trace: RunTrace {
            m,
            tau: cfg.tau,
            seed: cfg.seed,
            mode: cfg.mode,
            events,
        },
        snapshots,
        stats,
        per_event_estimates,
    })
}

// The grid type is shared across threads inside Arc.
#[allow(dead_code)]
fn _assert_send_sync(g: Arc<QueryGrid>) -> impl Send + Sync {
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;
    use crate::estimator::{BandwidthSchedule, KernelKind, KernelSpec, StepSchedule};

    #[test]
    fn concurrent_run_completes_and_orders_events() {
        let est = Estimator::new(
            KernelSpec::new(KernelKind::Naive, 1).unwrap(),
            BandwidthSchedule::default_for_dim(1),
            StepSchedule::unit(),
            false,
        )
        .unwrap();
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(1);
        let shards: Vec<Vec<Observation>> = (0..4)
            .map(|_| {
                (0..60)
                    .map(|_| Observation {
                        x: vec![rng.random::<f64>()],
                        y: rng.random::<f64>() * 2.0 - 1.0,
                    })
                    .collect()
            })
            .collect();
        let grid = Arc::new(QueryGrid::new(1, &[vec![0.2], vec![0.8]]).unwrap());
        let mut cfg = RunConfig::default();
        cfg.m = 4;
        cfg.tau = 2;
        cfg.mode = Mode::Concurrent;
        cfg.record_steps = true;
        cfg.record_estimates = true;
        let out = run_concurrent(
            &cfg,
            RunInputs {
                estimator: &est,
                shards: &shards,
                grid,
                test_values: None,
            },
        )
        .unwrap();
        assert_eq!(out.stats.write_conflicts, 0);
        for (w, shard) in out.workers.iter().zip(&shards) {
            assert!(w.done);
            assert_eq!(w.cursor, shard.len());
        }
        // event indices are dense and causally ordered: every consumed
        // version was produced at an earlier index
        let mut produced = std::collections::HashSet::new();
        for ev in &out.trace.events {
            match &ev.kind {
                EventKind::Compute => {
                    produced.insert((ev.actor, ev.local_t));
                }
                EventKind::Average { consumed } => {
                    for pair in consumed {
                        assert!(produced.contains(pair), "consumed before production");
                    }
                }
                EventKind::Forward => {}
            }
        }
    }
}
