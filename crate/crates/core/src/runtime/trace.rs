//! Run traces: the time-ordered record of every worker and queue event,
//! sufficient to reconstruct a communication schedule and replay the run.
//!
//! Serialized form is CSV with one record per event:
//! `event,actor,kind,local_t,consumed`, where `consumed` lists the
//! `sender:version` pairs an averaging step combined (empty otherwise).
//! Step vectors attached to compute events are in-memory only; a verifier
//! re-derives them by deterministic re-execution.

use std::io::{BufRead, Write};

use crate::config::Mode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// A computing step; the broadcast version equals the worker's
    /// post-event counter (`local_t`).
    Compute,
    /// An averaging step and the `(sender, version)` pairs it consumed,
    /// in ascending sender order.
    Average { consumed: Vec<(usize, u64)> },
    /// A ring hop: the acting queue merged the circulating snapshot and
    /// forwarded its map to the next queue.
    Forward,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Compute => "compute",
            EventKind::Average { .. } => "average",
            EventKind::Forward => "forward",
        }
    }

    pub fn is_worker_event(&self) -> bool {
        !matches!(self, EventKind::Forward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    /// Global order (0-based, shared by worker and queue events).
    pub index: u64,
    /// Worker id for compute/average, queue id for forward.
    pub actor: usize,
    /// The actor's own event counter after this event (the metronome
    /// position for workers, the hop count for queues).
    pub local_t: u64,
    pub kind: EventKind,
    /// Exact per-grid-point increments of a compute step (recorded when the
    /// run is asked to; never serialized).
    pub step: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub m: usize,
    pub tau: u64,
    pub seed: u64,
    pub mode: Mode,
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    /// Structural equality ignoring the in-memory step vectors; returns the
    /// index of the first differing event.
    pub fn first_difference(&self, other: &RunTrace) -> Option<u64> {
        if self.m != other.m || self.tau != other.tau || self.seed != other.seed {
            return Some(0);
        }
        let n = self.events.len().max(other.events.len());
        for idx in 0..n {
            match (self.events.get(idx), other.events.get(idx)) {
                (Some(a), Some(b)) => {
                    if a.index != b.index
                        || a.actor != b.actor
                        || a.local_t != b.local_t
                        || a.kind != b.kind
                    {
                        return Some(idx as u64);
                    }
                }
                _ => return Some(idx as u64),
            }
        }
        None
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "trace,m={},tau={},seed={},mode={}",
            self.m,
            self.tau,
            self.seed,
            self.mode.name()
        )?;
        writeln!(out, "event,actor,kind,local_t,consumed")?;
        for ev in &self.events {
            let consumed = match &ev.kind {
                EventKind::Average { consumed } => consumed
                    .iter()
                    .map(|(s, v)| format!("{s}:{v}"))
                    .collect::<Vec<_>>()
                    .join("|"),
                _ => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{}",
                ev.index,
                ev.actor,
                ev.kind.name(),
                ev.local_t,
                consumed
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<RunTrace> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))??;
        let mut m = None;
        let mut tau = None;
        let mut seed = None;
        let mut mode = None;
        for field in header.split(',') {
            if field == "trace" {
                continue;
            }
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad trace header field `{field}`")))?;
            match key {
                "m" => m = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                "tau" => tau = Some(value.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
                "mode" => mode = Some(Mode::parse(value)?),
                other => return Err(Error::Parse(format!("unknown trace header key `{other}`"))),
            }
        }
        let (Some(m), Some(tau), Some(seed), Some(mode)) = (m, tau, seed, mode) else {
            return Err(Error::Parse("trace header missing fields".into()));
        };
        // column header
        lines
            .next()
            .ok_or_else(|| Error::Parse("trace file missing column header".into()))??;
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("bad trace record `{line}`")));
            }
            let index: u64 = fields[0].parse().map_err(|_| bad(&line))?;
            let actor: usize = fields[1].parse().map_err(|_| bad(&line))?;
            let local_t: u64 = fields[3].parse().map_err(|_| bad(&line))?;
            let kind = match fields[2] {
                "compute" => EventKind::Compute,
                "average" => {
                    let mut consumed = Vec::new();
                    if !fields[4].is_empty() {
                        for pair in fields[4].split('|') {
                            let (s, v) = pair.split_once(':').ok_or_else(|| bad(&line))?;
                            consumed.push((
                                s.parse().map_err(|_| bad(&line))?,
                                v.parse().map_err(|_| bad(&line))?,
                            ));
                        }
                    }
                    EventKind::Average { consumed }
                }
                "forward" => EventKind::Forward,
                other => return Err(Error::Parse(format!("unknown event kind `{other}`"))),
            };
            events.push(TraceEvent {
                index,
                actor,
                local_t,
                kind,
                step: None,
            });
        }
        Ok(RunTrace {
            m,
            tau,
            seed,
            mode,
            events,
        })
    }
}

fn bad(line: &str) -> Error {
    Error::Parse(format!("bad trace record `{line}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> RunTrace {
        RunTrace {
            m: 2,
            tau: 2,
            seed: 7,
            mode: Mode::Deterministic,
            events: vec![
                TraceEvent {
                    index: 0,
                    actor: 0,
                    local_t: 1,
                    kind: EventKind::Compute,
                    step: Some(vec![0.5]),
                },
                TraceEvent {
                    index: 1,
                    actor: 0,
                    local_t: 1,
                    kind: EventKind::Forward,
                    step: None,
                },
                TraceEvent {
                    index: 2,
                    actor: 1,
                    local_t: 1,
                    kind: EventKind::Average {
                        consumed: vec![(0, 1)],
                    },
                    step: None,
                },
            ],
        }
    }

    #[test]
    fn csv_roundtrip_drops_only_steps() {
        let trace = sample_trace();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = RunTrace::read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(trace.first_difference(&back), None);
        assert_eq!(back.events[0].step, None);
    }

    #[test]
    fn first_difference_localizes_corruption() {
        let trace = sample_trace();
        let mut corrupted = trace.clone();
        if let EventKind::Average { consumed } = &mut corrupted.events[2].kind {
            consumed[0].1 = 99;
        }
        assert_eq!(trace.first_difference(&corrupted), Some(2));
        assert_eq!(trace.first_difference(&trace.clone()), None);
    }
}
