//! The distributed linear iteration driven by a schedule and a step log:
//!
//! ```text
//! z_{t+1}[i] = sum_j a_t[i][j] * z_{tau_t[i][j]}[j] + s_t[i]
//! ```
//!
//! States are vectors of `width` components evolved componentwise under one
//! shared schedule. The replay keeps only as much history as the largest
//! delay in the schedule requires, so horizons of tens of thousands of
//! instants stream in bounded memory.
//!
//! Weighted rows are applied in peer order with the stored weights, which
//! makes the arithmetic reproducible: a runtime that combines values in the
//! same order produces bit-identical trajectories.

use crate::agreement::schedule::{AgentRow, CommSchedule};
use crate::error::{Error, Result};

/// Initial states plus the computation terms `s_t[i]` feeding the linear
/// iteration. Steps are stored sparsely; absent entries are zero, and
/// entries may only be attached to computing instants of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    m: usize,
    width: usize,
    num_steps: usize,
    initial: Vec<Vec<f64>>,
    steps: Vec<Vec<(usize, Vec<f64>)>>,
}

impl StepLog {
    pub fn new(initial: Vec<Vec<f64>>, num_steps: usize) -> Result<Self> {
        let m = initial.len();
        if m == 0 {
            return Err(Error::invalid_input("step log needs at least one agent"));
        }
        let width = initial[0].len();
        if width == 0 || initial.iter().any(|v| v.len() != width) {
            return Err(Error::invalid_input("initial states must share one width"));
        }
        Ok(StepLog {
            m,
            width,
            num_steps,
            initial,
            steps: vec![Vec::new(); num_steps],
        })
    }

    /// Convenience constructor for scalar problems.
    pub fn scalar(initial: &[f64], num_steps: usize) -> Result<Self> {
        StepLog::new(initial.iter().map(|&v| vec![v]).collect(), num_steps)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn initial(&self) -> &[Vec<f64>] {
        &self.initial
    }

    /// Records `s_t[agent] = values` (replacing any previous entry).
    pub fn set_step(&mut self, t: u64, agent: usize, values: Vec<f64>) -> Result<()> {
        if t < 1 || t as usize > self.num_steps {
            return Err(Error::invalid_input(format!("step instant {t} out of range")));
        }
        if agent >= self.m {
            return Err(Error::invalid_input(format!("agent {agent} out of range")));
        }
        if values.len() != self.width {
            return Err(Error::invalid_input("step width mismatch"));
        }
        let list = &mut self.steps[(t - 1) as usize];
        match list.binary_search_by_key(&agent, |(a, _)| *a) {
            Ok(pos) => list[pos].1 = values,
            Err(pos) => list.insert(pos, (agent, values)),
        }
        Ok(())
    }

    pub fn step(&self, t: u64, agent: usize) -> Option<&[f64]> {
        let list = &self.steps[(t - 1) as usize];
        list.binary_search_by_key(&agent, |(a, _)| *a)
            .ok()
            .map(|pos| list[pos].1.as_slice())
    }

    /// Componentwise sum of two logs over the same shape.
    pub fn add(&self, other: &StepLog) -> Result<StepLog> {
        if self.m != other.m || self.width != other.width || self.num_steps != other.num_steps {
            return Err(Error::invalid_input("step log shapes differ"));
        }
        let initial = self
            .initial
            .iter()
            .zip(&other.initial)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let mut out = StepLog::new(initial, self.num_steps)?;
        for t in 1..=self.num_steps as u64 {
            for agent in 0..self.m {
                let a = self.step(t, agent);
                let b = other.step(t, agent);
                if a.is_none() && b.is_none() {
                    continue;
                }
                let zero = vec![0.0; self.width];
                let a = a.unwrap_or(&zero);
                let b = b.unwrap_or(&zero);
                out.set_step(t, agent, a.iter().zip(b).map(|(x, y)| x + y).collect())?;
            }
        }
        Ok(out)
    }
}

/// Streaming evaluation of the linear iteration with bounded history.
pub struct LinearReplay<'a> {
    sched: &'a CommSchedule,
    log: &'a StepLog,
    /// Ring buffer of the most recent `depth` states; slot `t % depth`
    /// holds state `t`.
    hist: Vec<Vec<Vec<f64>>>,
    depth: usize,
    t: u64,
    scratch: Vec<Vec<f64>>,
}

impl<'a> LinearReplay<'a> {
    pub fn new(sched: &'a CommSchedule, log: &'a StepLog) -> Result<Self> {
        if log.m() != sched.m {
            return Err(Error::invalid_input("schedule and step log disagree on agents"));
        }
        if log.num_steps() != sched.num_steps() {
            return Err(Error::invalid_input(format!(
                "schedule has {} steps but the log has {}",
                sched.num_steps(),
                log.num_steps()
            )));
        }
        let depth = (sched.max_staleness() as usize) + 1;
        let mut hist = vec![vec![vec![0.0; log.width()]; sched.m]; depth];
        hist[1 % depth] = log.initial().to_vec();
        Ok(LinearReplay {
            sched,
            log,
            hist,
            depth,
            t: 1,
            scratch: vec![vec![0.0; log.width()]; sched.m],
        })
    }

    /// Current state index (states are `1..=num_steps+1`).
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn state(&self, agent: usize) -> &[f64] {
        &self.hist[(self.t as usize) % self.depth][agent]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.hist[(self.t as usize) % self.depth]
    }

    /// Applies the transition at the current instant; returns `false` once
    /// the horizon is exhausted.
    pub fn advance(&mut self) -> bool {
        let t = self.t;
        if t as usize > self.sched.num_steps() {
            return false;
        }
        let step = &self.sched.steps[(t - 1) as usize];
        let width = self.log.width();
        for i in 0..self.sched.m {
            let out = &mut self.scratch[i];
            match &step.rows[i] {
                AgentRow::Identity => {
                    out.copy_from_slice(&self.hist[(t as usize) % self.depth][i]);
                }
                AgentRow::Weighted(entries) => {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for e in entries {
                        if e.weight == 0.0 {
                            continue;
                        }
                        debug_assert!(t - e.sent_at < self.depth as u64);
                        let src = &self.hist[(e.sent_at as usize) % self.depth][e.peer];
                        for c in 0..width {
                            out[c] += e.weight * src[c];
                        }
                    }
                }
            }
            if let Some(s) = self.log.step(t, i) {
                for c in 0..width {
                    out[c] += s[c];
                }
            }
        }
        let next_slot = ((t + 1) as usize) % self.depth;
        std::mem::swap(&mut self.hist[next_slot], &mut self.scratch);
        self.t += 1;
        true
    }
}

/// Runs the iteration to the horizon and collects every state:
/// `trajectory[t-1][agent]` is the state at instant `t` for
/// `t = 1..=num_steps+1`. Intended for analysis-sized problems; big replays
/// should stream through [`LinearReplay`].
pub fn run_linear_model(sched: &CommSchedule, log: &StepLog) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut replay = LinearReplay::new(sched, log)?;
    let mut out = Vec::with_capacity(sched.num_steps() + 1);
    out.push(replay.states().to_vec());
    while replay.advance() {
        out.push(replay.states().to_vec());
    }
    Ok(out)
}
