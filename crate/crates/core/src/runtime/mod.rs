//! The asynchronous execution engine: workers performing recursive kernel
//! regression steps under a metronome, twin-worker queues holding
//! latest-known estimate maps, and a ring of queues circulating one snapshot
//! so that at any instant only two queues communicate and every queue map
//! has a single writer.
//!
//! Workers alternate between computing steps (consume the next observation
//! from the private shard, update the estimate, broadcast the new value to
//! the serving queue) and averaging steps (combine the estimate with every
//! not-yet-used fresh value found in the serving queue, with equal-neighbor
//! weights). The metronome parameter `tau` makes every `tau`-th local event
//! an averaging step.
//!
//! Two modes share the worker and queue mechanics:
//!
//! * deterministic — a seeded scheduler interleaves worker events and ring
//!   hops in one thread; identical seeds give byte-identical traces;
//! * concurrent — one thread per worker and per queue, message passing
//!   only, with a global atomic counter ordering the trace.
//!
//! Every run emits a replayable [`RunTrace`]; `trace_to_schedule` converts
//! it into a communication schedule plus step log whose linear-model replay
//! reproduces the worker estimates exactly.

pub mod concurrent;
pub mod convert;
pub mod deterministic;
pub mod trace;
pub mod verify;

pub use concurrent::run_concurrent;
pub use convert::{trace_to_schedule, ConvertedSchedule};
pub use deterministic::{run_deterministic, run_deterministic_with};
pub use trace::{EventKind, RunTrace, TraceEvent};
pub use verify::{verify_run, Divergence, VerifyOutcome};

use std::sync::Arc;

use crate::config::{Mode, RunConfig};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimateVector, QueryGrid};

/// True when local instant `t` is a computing instant of the metronome:
/// every instant not divisible by `tau` computes, so each worker performs
/// one averaging step per `tau - 1` computation steps.
pub fn metronome_is_computing(tau: u64, t: u64) -> Result<bool> {
    if tau < 2 {
        return Err(Error::config("tau", "metronome must be >= 2"));
    }
    if t < 1 {
        return Err(Error::invalid_input("instant must be >= 1"));
    }
    Ok(t % tau != 0)
}

/// A broadcast estimate: the sender's values at some version of its local
/// event counter. Payloads are shared, never mutated after sending.
#[derive(Debug, Clone)]
pub struct EstimateMessage {
    pub sender: usize,
    pub version: u64,
    pub payload: Arc<Vec<f64>>,
}

/// The latest-known estimate of every worker, as kept by one queue.
#[derive(Debug, Clone, Default)]
pub struct QueueMap {
    pub entries: Vec<Option<EstimateMessage>>,
}

impl QueueMap {
    pub fn new(m: usize) -> Self {
        QueueMap {
            entries: vec![None; m],
        }
    }

    /// Replaces the sender's entry when the message is newer; stale
    /// messages are dropped silently.
    pub fn apply_worker_message(&mut self, msg: EstimateMessage) -> bool {
        let slot = &mut self.entries[msg.sender];
        match slot {
            Some(existing) if existing.version >= msg.version => false,
            _ => {
                *slot = Some(msg);
                true
            }
        }
    }

    /// Entrywise max-version merge of a ring snapshot.
    pub fn merge_snapshot(&mut self, snapshot: &[Option<EstimateMessage>]) {
        for (slot, incoming) in self.entries.iter_mut().zip(snapshot.iter()) {
            if let Some(msg) = incoming {
                match slot {
                    Some(existing) if existing.version >= msg.version => {}
                    _ => *slot = Some(msg.clone()),
                }
            }
        }
    }

    pub fn snapshot(&self) -> Vec<Option<EstimateMessage>> {
        self.entries.clone()
    }
}

/// Checks that `next` describes a single directed cycle covering all
/// queues.
pub fn validate_ring(next: &[usize]) -> Result<()> {
    let q = next.len();
    if q == 0 {
        return Err(Error::config("ring", "needs at least one queue"));
    }
    if next.iter().any(|&n| n >= q) {
        return Err(Error::config("ring", "link target out of range"));
    }
    let mut seen = vec![false; q];
    let mut cur = 0;
    for _ in 0..q {
        if seen[cur] {
            return Err(Error::config("ring", "links do not form a single cycle"));
        }
        seen[cur] = true;
        cur = next[cur];
    }
    if cur != 0 || seen.iter().any(|&s| !s) {
        return Err(Error::config("ring", "links do not form a single cycle"));
    }
    Ok(())
}

/// The queue serving a worker: workers `2k` and `2k+1` are twins on queue
/// `k`; an odd worker count leaves the last queue with a single worker.
pub fn queue_of(worker: usize) -> usize {
    worker / 2
}

pub fn num_queues(m: usize) -> usize {
    m.div_ceil(2)
}

/// Per-worker counters and extremes, accumulated while running.
#[derive(Debug, Clone)]
pub struct WorkerStats {
    pub computes: u64,
    pub averages: u64,
    pub fresh_consumed: u64,
    /// Work units: 1 per compute, 1 + consumed fresh values per average.
    pub work_units: u64,
    pub min_value: f64,
    pub max_value: f64,
    /// Largest unclamped `eps * K` encountered.
    pub max_gain: f64,
    /// Self-sampled test error, recorded in concurrent mode as
    /// `(local events, err)` pairs.
    pub err_series: Vec<(u64, f64)>,
}

impl Default for WorkerStats {
    fn default() -> Self {
        WorkerStats {
            computes: 0,
            averages: 0,
            fresh_consumed: 0,
            work_units: 0,
            min_value: f64::INFINITY,
            max_value: f64::NEG_INFINITY,
            max_gain: 0.0,
            err_series: Vec::new(),
        }
    }
}

/// One worker: estimate, local event counter, per-peer consumed versions,
/// and the cursor into its private shard.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub estimate: EstimateVector,
    /// Local event counter (each compute or average increments it by one).
    pub events: u64,
    pub used_versions: Vec<u64>,
    pub cursor: usize,
    pub done: bool,
    pub stats: WorkerStats,
}

impl WorkerState {
    /// Initializes from the first shard observation (`r_1 = y_1`), leaving
    /// the cursor on the second observation.
    pub fn init(
        id: usize,
        m: usize,
        estimator: &Estimator,
        shard: &[Observation],
        grid: Arc<QueryGrid>,
    ) -> Result<Self> {
        let first = shard
            .first()
            .ok_or_else(|| Error::invalid_input(format!("shard {id} is empty")))?;
        let estimate = estimator.init(first, grid)?;
        let mut stats = WorkerStats::default();
        stats.min_value = first.y;
        stats.max_value = first.y;
        Ok(WorkerState {
            id,
            estimate,
            events: 0,
            used_versions: vec![0; m],
            cursor: 1,
            done: false,
            stats,
        })
    }

    /// The local instant of the worker's next event.
    pub fn next_instant(&self) -> u64 {
        self.events + 1
    }

    /// Whether the next event computes (single workers have no peers, but
    /// still take their no-op averaging turns so event counts are
    /// comparable across worker counts).
    pub fn next_is_compute(&self, tau: u64) -> bool {
        self.next_instant() % tau != 0
    }

    /// Performs one computing step; returns the broadcast message, or
    /// `None` (and marks the worker done) when the shard is exhausted. No
    /// event is counted in the exhausted case.
    pub fn compute_step(
        &mut self,
        estimator: &Estimator,
        shard: &[Observation],
        mut deltas: Option<&mut Vec<f64>>,
    ) -> Option<EstimateMessage> {
        let Some(obs) = shard.get(self.cursor) else {
            self.done = true;
            return None;
        };
        self.cursor += 1;
        let step_stats = estimator.step_into(&mut self.estimate, obs, deltas.as_deref_mut());
        self.events += 1;
        self.stats.computes += 1;
        self.stats.work_units += 1;
        self.stats.max_gain = self.stats.max_gain.max(step_stats.max_gain);
        self.track_extremes();
        Some(EstimateMessage {
            sender: self.id,
            version: self.events,
            payload: Arc::new(self.estimate.values.clone()),
        })
    }

    /// Filters a queue map down to fresh values: senders other than the
    /// worker itself whose version exceeds the last consumed one. Entries
    /// come back in ascending sender order.
    pub fn fresh_from(&self, entries: &[Option<EstimateMessage>]) -> Vec<EstimateMessage> {
        entries
            .iter()
            .flatten()
            .filter(|msg| msg.sender != self.id && msg.version > self.used_versions[msg.sender])
            .cloned()
            .collect()
    }

    /// One averaging step: equal-neighbor combination of the own value and
    /// the fresh values, applied in ascending worker order so a replay
    /// summing in the same order is bit-identical. An empty fresh set
    /// leaves the estimate unchanged.
    pub fn average_step(&mut self, fresh: &[EstimateMessage]) {
        if !fresh.is_empty() {
            let weight = 1.0 / (1 + fresh.len()) as f64;
            let n = self.estimate.values.len();
            let mut acc = vec![0.0; n];
            let mut it = fresh.iter().peekable();
            let mut own_added = false;
            // ascending sender order with the own value at its own rank
            loop {
                match it.peek() {
                    Some(msg) if msg.sender < self.id => {
                        let msg = it.next().unwrap();
                        for c in 0..n {
                            acc[c] += weight * msg.payload[c];
                        }
                    }
                    _ if !own_added => {
                        for c in 0..n {
                            acc[c] += weight * self.estimate.values[c];
                        }
                        own_added = true;
                    }
                    Some(_) => {
                        let msg = it.next().unwrap();
                        for c in 0..n {
                            acc[c] += weight * msg.payload[c];
                        }
                    }
                    None => break,
                }
            }
            for msg in fresh {
                self.used_versions[msg.sender] = msg.version;
            }
            self.estimate.values = acc;
        }
        self.events += 1;
        self.stats.averages += 1;
        self.stats.work_units += 1 + fresh.len() as u64;
        self.stats.fresh_consumed += fresh.len() as u64;
        self.track_extremes();
    }

    fn track_extremes(&mut self) {
        for &v in &self.estimate.values {
            if v < self.stats.min_value {
                self.stats.min_value = v;
            }
            if v > self.stats.max_value {
                self.stats.max_value = v;
            }
        }
    }
}

/// Synchronized view of all worker estimates at one moment (deterministic
/// mode only; concurrent workers self-sample instead).
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Global worker events completed when the snapshot was taken.
    pub worker_events: u64,
    /// Global computing steps completed.
    pub computes: u64,
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub total_worker_events: u64,
    pub total_computes: u64,
    pub queue_forwards: u64,
    /// Conflicting map writes observed by the epoch instrumentation
    /// (concurrent mode; the single-writer discipline keeps this at zero).
    pub write_conflicts: u64,
    pub wall_time: std::time::Duration,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub workers: Vec<WorkerState>,
    pub trace: RunTrace,
    pub snapshots: Vec<Snapshot>,
    pub stats: RunStats,
    /// Post-event estimate values aligned with `trace.events` (recorded
    /// when `record_estimates` is set; `None` entries for queue forwards).
    pub per_event_estimates: Option<Vec<Option<Vec<f64>>>>,
}

/// Inputs the runtime does not derive from the config: the estimator, the
/// per-worker shards, and the query grid. `test_values` enables
/// self-sampled error series in concurrent mode.
pub struct RunInputs<'a> {
    pub estimator: &'a Estimator,
    pub shards: &'a [Vec<Observation>],
    pub grid: Arc<QueryGrid>,
    pub test_values: Option<Arc<Vec<f64>>>,
}

/// Dispatches on `cfg.mode`.
pub fn run_simulation(cfg: &RunConfig, inputs: RunInputs<'_>) -> Result<SimOutput> {
    cfg.validate_runtime(inputs.shards.len())?;
    match cfg.mode {
        Mode::Deterministic => run_deterministic(cfg, inputs),
        Mode::Concurrent => run_concurrent(cfg, inputs),
    }
}

impl RunConfig {
    /// Runtime-facing validation (shard count against `m`, metronome).
    pub fn validate_runtime(&self, num_shards: usize) -> Result<()> {
        if self.m != num_shards {
            return Err(Error::config(
                "m",
                format!("{} shards supplied for m = {}", num_shards, self.m),
            ));
        }
        if self.tau < 2 {
            return Err(Error::config("tau", "metronome must be >= 2"));
        }
        Ok(())
    }

    /// Snapshot cadence in worker events: the configured value, or roughly
    /// twenty snapshots per run when unset.
    pub fn snapshot_cadence(&self, shards: &[Vec<Observation>]) -> u64 {
        if self.snapshot_every > 0 {
            return self.snapshot_every;
        }
        let computes: u64 = shards.iter().map(|s| (s.len().saturating_sub(1)) as u64).sum();
        let events = computes * self.tau / (self.tau - 1);
        (events / 20).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{BandwidthSchedule, KernelKind, KernelSpec, StepSchedule};

    #[test]
    fn metronome_follows_the_complement_rule() {
        assert!(metronome_is_computing(2, 3).unwrap());
        assert!(!metronome_is_computing(2, 4).unwrap());
        // tau = M^2 with M = 3
        assert!(!metronome_is_computing(9, 9).unwrap());
        assert!(metronome_is_computing(9, 10).unwrap());
        assert!(metronome_is_computing(1, 1).is_err());
    }

    #[test]
    fn queue_map_keeps_the_newest_version() {
        let mut map = QueueMap::new(4);
        let msg = |sender: usize, version: u64| EstimateMessage {
            sender,
            version,
            payload: Arc::new(vec![version as f64]),
        };
        assert!(map.apply_worker_message(msg(2, 5)));
        assert_eq!(map.entries[2].as_ref().unwrap().version, 5);

        // stale and same-version messages are dropped
        assert!(!map.apply_worker_message(msg(2, 5)));
        assert!(!map.apply_worker_message(msg(2, 3)));
        assert_eq!(map.entries[2].as_ref().unwrap().version, 5);

        // snapshot merge is an entrywise max
        let snapshot = vec![None, None, Some(msg(2, 3)), Some(msg(3, 7))];
        map.merge_snapshot(&snapshot);
        assert_eq!(map.entries[2].as_ref().unwrap().version, 5);
        assert_eq!(map.entries[3].as_ref().unwrap().version, 7);
    }

    #[test]
    fn ring_validation() {
        validate_ring(&[0]).unwrap();
        validate_ring(&[1, 2, 0]).unwrap();
        assert!(validate_ring(&[0, 1, 2]).is_err()); // three self-loops
        assert!(validate_ring(&[1, 0, 2]).is_err()); // two cycles
    }

    #[test]
    fn average_step_examples() {
        let estimator = Estimator::new(
            KernelSpec::new(KernelKind::Naive, 1).unwrap(),
            BandwidthSchedule::default_for_dim(1),
            StepSchedule::unit(),
            false,
        )
        .unwrap();
        let grid = Arc::new(QueryGrid::new(1, &[vec![0.0], vec![1.0]]).unwrap());
        let shard = vec![Observation {
            x: vec![0.5],
            y: 0.0,
        }];
        let mut w = WorkerState::init(0, 3, &estimator, &shard, grid).unwrap();

        // empty fresh set: values unchanged, event still counted
        w.average_step(&[]);
        assert_eq!(w.estimate.values, vec![0.0, 0.0]);
        assert_eq!(w.events, 1);

        // one fresh value of all-ones: halfway
        let fresh = vec![EstimateMessage {
            sender: 1,
            version: 4,
            payload: Arc::new(vec![1.0, 1.0]),
        }];
        w.average_step(&fresh);
        assert_eq!(w.estimate.values, vec![0.5, 0.5]);
        assert_eq!(w.used_versions[1], 4);

        // two fresh values equal to the own value: unchanged
        let same = |sender| EstimateMessage {
            sender,
            version: 9,
            payload: Arc::new(vec![0.5, 0.5]),
        };
        w.average_step(&[same(1), same(2)]);
        for &v in &w.estimate.values {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
