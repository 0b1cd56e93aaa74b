//! Communication schedules for the distributed linear iteration and the
//! validator for the standing assumptions on them.
//!
//! A schedule fixes, for every instant `t = 1..=T` and agent `i`, the convex
//! combination row `a_t[i][j]`, the send instants `tau_t[i][j]` of consumed
//! values, and whether the agent performs a computation at `t`. The checks
//! follow the assumption set of Tsitsiklis, Bertsekas & Athans (1986) and
//! Blondel et al. (2005):
//!
//! * rows are stochastic, self-weights at least `alpha`, nonzero weights in
//!   `[alpha, 1]`;
//! * computing instants carry identity rows; the self-delay is `t`; delays
//!   are bounded by `B1`;
//! * the union communication graph is strongly connected, with recurring
//!   edges reappearing within `B2` instants;
//! * some agent computes at every instant.
//!
//! Connectivity and recurrence quantify over an infinite horizon; on a
//! finite schedule the validator measures the smallest window scale `W`
//! such that every length-`W` window of the union graph is strongly
//! connected (suffixes shorter than `W` at the end of the horizon are
//! reported as unverifiable rather than failed), and it measures `B2` from
//! gaps between edge recurrences. Validation never fails hard: every check
//! reports pass/fail plus a witness.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Declared schedule constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConstants {
    /// Weight floor `alpha` in `(0, 1]`.
    pub alpha: f64,
    /// Delay bound: `t - B1 <= tau <= t`.
    pub b1: u64,
    /// Recurrence bound for edges that occur more than once.
    pub b2: u64,
}

/// One nonzero entry of a combination row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEntry {
    pub peer: usize,
    pub weight: f64,
    /// Send instant of the consumed value (`tau`), in `1..=t`.
    pub sent_at: u64,
}

/// One agent's combination row at one instant. Entries are sorted by peer
/// and include the agent itself; `Identity` abbreviates the row
/// `a[i][i] = 1` with `tau = t`.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentRow {
    Identity,
    Weighted(Vec<WeightEntry>),
}

/// All rows plus the computing flags for one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub rows: Vec<AgentRow>,
    pub computing: Vec<bool>,
}

impl ScheduleStep {
    pub fn idle(m: usize) -> Self {
        ScheduleStep {
            rows: vec![AgentRow::Identity; m],
            computing: vec![false; m],
        }
    }
}

/// A complete communication schedule over a finite horizon.
///
/// `steps[t-1]` describes the transition from state `t` to state `t+1`, so a
/// schedule with `T` steps drives trajectories with states `1..=T+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommSchedule {
    pub m: usize,
    pub steps: Vec<ScheduleStep>,
    pub constants: ScheduleConstants,
}

const ROW_SUM_TOL: f64 = 1e-9;
const WEIGHT_TOL: f64 = 1e-12;

impl CommSchedule {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Largest `t - sent_at` over all entries (how far back a replay must
    /// keep history).
    pub fn max_staleness(&self) -> u64 {
        let mut max = 0;
        for (idx, step) in self.steps.iter().enumerate() {
            let t = (idx + 1) as u64;
            for row in &step.rows {
                if let AgentRow::Weighted(entries) = row {
                    for e in entries {
                        max = max.max(t.saturating_sub(e.sent_at));
                    }
                }
            }
        }
        max
    }

    /// Builds a schedule from dense weight/delay arrays
    /// (`weights[t-1][i][j]`, `delays[t-1][i][j]`).
    pub fn from_dense(
        m: usize,
        weights: &[Vec<Vec<f64>>],
        delays: &[Vec<Vec<u64>>],
        computing: &[Vec<bool>],
        constants: ScheduleConstants,
    ) -> Result<Self> {
        if weights.len() != delays.len() || weights.len() != computing.len() {
            return Err(Error::invalid_input("dense schedule arrays disagree on length"));
        }
        let mut steps = Vec::with_capacity(weights.len());
        for (idx, (w_t, d_t)) in weights.iter().zip(delays.iter()).enumerate() {
            let t = (idx + 1) as u64;
            let mut rows = Vec::with_capacity(m);
            for i in 0..m {
                rows.push(row_from_dense(i, t, &w_t[i], &d_t[i]));
            }
            steps.push(ScheduleStep {
                rows,
                computing: computing[idx].clone(),
            });
        }
        Ok(CommSchedule { m, steps, constants })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_schedule(self)
    }
}

/// Converts one dense row into the sparse representation, preserving any
/// zero-weight entry whose delay deviates from `t` so the validator can
/// still flag it.
fn row_from_dense(i: usize, t: u64, weights: &[f64], delays: &[u64]) -> AgentRow {
    let mut entries = Vec::new();
    let mut identity = true;
    for j in 0..weights.len() {
        let w = weights[j];
        let d = delays[j];
        if w != 0.0 || d != t {
            entries.push(WeightEntry {
                peer: j,
                weight: w,
                sent_at: d,
            });
            if !(j == i && w == 1.0 && d == t) {
                identity = false;
            }
        }
    }
    if identity && entries.len() == 1 {
        AgentRow::Identity
    } else if entries.is_empty() {
        // all-zero row: invalid, keep explicit so validation reports it
        AgentRow::Weighted(vec![])
    } else {
        AgentRow::Weighted(entries)
    }
}

// ---------------------------------------------------------------------------
// Equal-neighbor weights
// ---------------------------------------------------------------------------

/// Uniform combination weights over each agent's neighbor set (which must
/// contain the agent itself): `a[i][j] = 1 / #N_i` for `j` in `N_i`.
/// The implied weight floor is `1/m`.
pub fn equal_neighbor_weights(neighbor_sets: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let m = neighbor_sets.len();
    let mut rows = Vec::with_capacity(m);
    for (i, set) in neighbor_sets.iter().enumerate() {
        if !set.contains(&i) {
            return Err(Error::invalid_input(format!(
                "neighbor set of agent {i} must contain the agent itself"
            )));
        }
        if set.iter().any(|&j| j >= m) {
            return Err(Error::invalid_input("neighbor index out of range"));
        }
        let mut sorted = set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let w = 1.0 / sorted.len() as f64;
        let mut row = vec![0.0; m];
        for j in sorted {
            row[j] = w;
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Random valid schedules
// ---------------------------------------------------------------------------

/// Generates a schedule satisfying all assumptions by construction: one
/// rotating computer per instant (identity row), every other agent averaging
/// over itself, its ring successor, and a random extra subset of peers, with
/// delays drawn uniformly from `[0, b1]`.
///
/// Every length-2 window of the union graph contains the full directed ring,
/// so the connectivity window scale is at most 2.
pub fn random_valid_schedule(m: usize, num_steps: usize, b1: u64, seed: u64) -> CommSchedule {
    assert!(m >= 1 && num_steps >= 1);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(num_steps);
    for idx in 0..num_steps {
        let t = (idx + 1) as u64;
        let computer = idx % m;
        let mut rows = Vec::with_capacity(m);
        let mut computing = vec![false; m];
        for i in 0..m {
            if i == computer || m == 1 {
                computing[i] = true;
                rows.push(AgentRow::Identity);
                continue;
            }
            let mut peers = vec![i, (i + 1) % m];
            for j in 0..m {
                if j != i && j != (i + 1) % m && rng.random::<f64>() < 0.3 {
                    peers.push(j);
                }
            }
            peers.sort_unstable();
            peers.dedup();
            let w = 1.0 / peers.len() as f64;
            let entries = peers
                .iter()
                .map(|&j| {
                    let sent_at = if j == i {
                        t
                    } else {
                        let max_delay = b1.min(t - 1);
                        t - rng.random_range(0..=max_delay)
                    };
                    WeightEntry {
                        peer: j,
                        weight: w,
                        sent_at,
                    }
                })
                .collect();
            rows.push(AgentRow::Weighted(entries));
        }
        steps.push(ScheduleStep { rows, computing });
    }
    let mut sched = CommSchedule {
        m,
        steps,
        constants: ScheduleConstants {
            alpha: 1.0 / m as f64,
            b1,
            b2: 0,
        },
    };
    let measured = measure_constants(&sched);
    sched.constants.b2 = measured.b2.unwrap_or(0);
    sched
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    /// Short identifier, e.g. `"1a"`.
    pub id: &'static str,
    pub name: &'static str,
    pub status: CheckStatus,
    /// Human-readable witnesses for failures (capped).
    pub witnesses: Vec<String>,
    /// Additional notes (finite-horizon caveats, measured values).
    pub notes: Vec<String>,
}

impl AssumptionCheck {
    fn new(id: &'static str, name: &'static str) -> Self {
        AssumptionCheck {
            id,
            name,
            status: CheckStatus::Pass,
            witnesses: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, witness: String) {
        self.status = CheckStatus::Fail;
        if self.witnesses.len() < 8 {
            self.witnesses.push(witness);
        }
    }
}

/// Constants realized by a schedule, as opposed to the declared ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredConstants {
    /// Smallest nonzero weight.
    pub alpha: f64,
    /// Largest delay `t - tau`.
    pub b1: u64,
    /// Largest recurrence gap minus one over edges occurring at least twice
    /// (`None` when no edge recurs).
    pub b2: Option<u64>,
    /// Smallest window scale at which every window's union graph is strongly
    /// connected (`None` when no scale works).
    pub connectivity_window: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub measured: MeasuredConstants,
}

impl ValidationReport {
    pub fn check(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn passed(&self, id: &str) -> bool {
        self.check(id).map(|c| c.status == CheckStatus::Pass).unwrap_or(false)
    }

    /// The checks that any schedule produced by the runtime satisfies by
    /// construction (convexity and delay discipline).
    pub fn core_pass(&self) -> bool {
        ["1a", "1b", "1c", "2a", "2b", "2c", "2d"]
            .iter()
            .all(|id| self.passed(id))
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
            };
            out.push_str(&format!("assumption {:<3} {:<28} {}\n", c.id, c.name, status));
            for w in &c.witnesses {
                out.push_str(&format!("    witness: {w}\n"));
            }
            for n in &c.notes {
                out.push_str(&format!("    note: {n}\n"));
            }
        }
        out.push_str(&format!(
            "measured: alpha={} b1={} b2={} connectivity_window={}\n",
            self.measured.alpha,
            self.measured.b1,
            self.measured
                .b2
                .map(|v| v.to_string())
                .unwrap_or_else(|| "n/a".into()),
            self.measured
                .connectivity_window
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
        ));
        out
    }
}

fn edge_sets(sched: &CommSchedule) -> Vec<Vec<(usize, usize)>> {
    sched
        .steps
        .iter()
        .map(|step| {
            let mut edges = Vec::new();
            for (i, row) in step.rows.iter().enumerate() {
                if let AgentRow::Weighted(entries) = row {
                    for e in entries {
                        if e.peer != i && e.weight > 0.0 {
                            edges.push((i, e.peer));
                        }
                    }
                }
            }
            edges
        })
        .collect()
}

/// Strong connectivity of the directed graph given by an `m x m` adjacency
/// count matrix (self-loops ignored).
fn strongly_connected(m: usize, counts: &[u32]) -> bool {
    if m <= 1 {
        return true;
    }
    let reach = |reverse: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut found = 1;
        while let Some(u) = stack.pop() {
            for v in 0..m {
                let has = if reverse {
                    counts[v * m + u] > 0
                } else {
                    counts[u * m + v] > 0
                };
                if has && !seen[v] {
                    seen[v] = true;
                    found += 1;
                    stack.push(v);
                }
            }
        }
        found == m
    };
    reach(false) && reach(true)
}

/// Smallest `w` such that every length-`w` window of the union graph is
/// strongly connected. Monotone in `w`, so a doubling-plus-binary search
/// applies.
fn connectivity_window(m: usize, edges: &[Vec<(usize, usize)>]) -> Option<usize> {
    let t = edges.len();
    if m <= 1 {
        return Some(1);
    }
    if t == 0 {
        return None;
    }
    let ok = |w: usize| -> bool {
        let mut counts = vec![0u32; m * m];
        for step_edges in edges.iter().take(w) {
            for &(i, j) in step_edges {
                counts[i * m + j] += 1;
            }
        }
        if !strongly_connected(m, &counts) {
            return false;
        }
        for start in 1..=(t - w) {
            for &(i, j) in &edges[start - 1] {
                counts[i * m + j] -= 1;
            }
            for &(i, j) in &edges[start + w - 1] {
                counts[i * m + j] += 1;
            }
            if !strongly_connected(m, &counts) {
                return false;
            }
        }
        true
    };
    if !ok(t) {
        return None;
    }
    let mut hi = 1;
    while hi < t && !ok(hi) {
        hi *= 2;
    }
    let mut hi = hi.min(t);
    let mut lo = (hi / 2).max(1);
    // invariant: ok(hi), and lo is below the answer unless lo == hi
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(hi)
}

pub(crate) fn measure_constants(sched: &CommSchedule) -> MeasuredConstants {
    let mut alpha = 1.0f64;
    let mut b1 = 0u64;
    for (idx, step) in sched.steps.iter().enumerate() {
        let t = (idx + 1) as u64;
        for row in &step.rows {
            if let AgentRow::Weighted(entries) = row {
                for e in entries {
                    if e.weight > 0.0 {
                        alpha = alpha.min(e.weight);
                        b1 = b1.max(t.saturating_sub(e.sent_at));
                    }
                }
            }
        }
    }
    let edges = edge_sets(sched);
    let mut last_seen: Vec<Option<u64>> = vec![None; sched.m * sched.m];
    let mut b2: Option<u64> = None;
    for (idx, step_edges) in edges.iter().enumerate() {
        let t = (idx + 1) as u64;
        for &(i, j) in step_edges {
            let slot = &mut last_seen[i * sched.m + j];
            if let Some(prev) = *slot {
                let gap = t - prev;
                let need = gap.saturating_sub(1);
                b2 = Some(b2.map_or(need, |cur| cur.max(need)));
            }
            *slot = Some(t);
        }
    }
    MeasuredConstants {
        alpha,
        b1,
        b2,
        connectivity_window: connectivity_window(sched.m, &edges),
    }
}

fn validate_schedule(sched: &CommSchedule) -> ValidationReport {
    let m = sched.m;
    let alpha = sched.constants.alpha;
    let b1 = sched.constants.b1;

    let mut c1a = AssumptionCheck::new("1a", "row-stochastic weights");
    let mut c1b = AssumptionCheck::new("1b", "self-weight floor");
    let mut c1c = AssumptionCheck::new("1c", "nonzero weights in [alpha, 1]");
    let mut c2a = AssumptionCheck::new("2a", "identity rows while computing");
    let mut c2b = AssumptionCheck::new("2b", "zero weights carry tau = t");
    let mut c2c = AssumptionCheck::new("2c", "self-delay tau = t");
    let mut c2d = AssumptionCheck::new("2d", "delays within [t - B1, t]");
    let mut c3 = AssumptionCheck::new("3", "union graph strongly connected");
    let mut c4 = AssumptionCheck::new("4", "bounded intercommunication");
    let mut c5a = AssumptionCheck::new("5a", "some agent computes at every t");

    for (idx, step) in sched.steps.iter().enumerate() {
        let t = (idx + 1) as u64;
        for i in 0..m {
            let row = &step.rows[i];
            match row {
                AgentRow::Identity => {}
                AgentRow::Weighted(entries) => {
                    let sum: f64 = entries.iter().map(|e| e.weight).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        c1a.fail(format!("t={t} i={i}: row sum {sum}"));
                    }
                    let self_entry = entries.iter().find(|e| e.peer == i);
                    match self_entry {
                        Some(e) => {
                            if e.weight < alpha - WEIGHT_TOL {
                                c1b.fail(format!("t={t} i={i}: self-weight {}", e.weight));
                            }
                            if e.weight > 0.0 && e.sent_at != t {
                                c2c.fail(format!("t={t} i={i}: self tau {}", e.sent_at));
                            }
                        }
                        None => c1b.fail(format!("t={t} i={i}: self-weight 0")),
                    }
                    for e in entries {
                        if e.weight == 0.0 {
                            if e.sent_at != t {
                                c2b.fail(format!(
                                    "t={t} i={i} j={}: zero weight with tau {}",
                                    e.peer, e.sent_at
                                ));
                            }
                            continue;
                        }
                        if e.weight < alpha - WEIGHT_TOL || e.weight > 1.0 + WEIGHT_TOL {
                            c1c.fail(format!("t={t} i={i} j={}: weight {}", e.peer, e.weight));
                        }
                        if e.sent_at < 1 || e.sent_at > t || t - e.sent_at > b1 {
                            c2d.fail(format!("t={t} i={i} j={}: tau {}", e.peer, e.sent_at));
                        }
                    }
                    if step.computing[i] {
                        let is_identity = entries.len() == 1
                            && entries[0].peer == i
                            && entries[0].weight == 1.0
                            && entries[0].sent_at == t;
                        if !is_identity {
                            c2a.fail(format!("t={t} i={i}: non-identity row while computing"));
                        }
                    }
                }
            }
        }
        if !step.computing.iter().any(|&c| c) {
            c5a.fail(format!("t={t}: no computing agent"));
        }
    }

    let measured = measure_constants(sched);

    match measured.connectivity_window {
        Some(w) => {
            c3.notes.push(format!(
                "every length-{w} window is strongly connected; the final {} suffix starts are shorter than {w} and unverifiable at this horizon",
                w.saturating_sub(1)
            ));
        }
        None => {
            // find a concrete unreachable pair in the full union as witness
            let edges = edge_sets(sched);
            let mut counts = vec![0u32; m * m];
            for step_edges in &edges {
                for &(i, j) in step_edges {
                    counts[i * m + j] += 1;
                }
            }
            c3.fail(if strongly_connected(m, &counts) {
                "full union is connected but some window suffix never reconnects".into()
            } else {
                "union graph over the whole horizon is not strongly connected".into()
            });
        }
    }

    match measured.b2 {
        Some(measured_b2) => {
            if measured_b2 > sched.constants.b2 {
                c4.fail(format!(
                    "recurring edge gap needs B2 = {measured_b2}, declared {}",
                    sched.constants.b2
                ));
            } else {
                c4.notes.push(format!("measured B2 = {measured_b2}"));
            }
        }
        None => c4.notes.push("no edge recurs within the horizon".into()),
    }

    ValidationReport {
        checks: vec![c1a, c1b, c1c, c2a, c2b, c2c, c2d, c3, c4, c5a],
        measured,
    }
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Writes the line-oriented schedule format: a header with the constants,
/// then one record per `(t, i)` holding the dense weight row, the dense
/// delay row, and the computing flag.
pub fn write_schedule<W: Write>(out: &mut W, sched: &CommSchedule) -> Result<()> {
    writeln!(
        out,
        "schedule,m={},steps={},alpha={},b1={},b2={}",
        sched.m,
        sched.steps.len(),
        sched.constants.alpha,
        sched.constants.b1,
        sched.constants.b2
    )?;
    writeln!(out, "t,i,computing,weights,delays")?;
    for (idx, step) in sched.steps.iter().enumerate() {
        let t = (idx + 1) as u64;
        for i in 0..sched.m {
            let mut weights = vec![0.0; sched.m];
            let mut delays = vec![t; sched.m];
            match &step.rows[i] {
                AgentRow::Identity => {
                    weights[i] = 1.0;
                }
                AgentRow::Weighted(entries) => {
                    for e in entries {
                        weights[e.peer] = e.weight;
                        delays[e.peer] = e.sent_at;
                    }
                }
            }
            let w: Vec<String> = weights.iter().map(|v| format!("{v}")).collect();
            let d: Vec<String> = delays.iter().map(|v| format!("{v}")).collect();
            writeln!(
                out,
                "{t},{i},{},{},{}",
                u8::from(step.computing[i]),
                w.join(";"),
                d.join(";")
            )?;
        }
    }
    Ok(())
}

/// Reads the format produced by [`write_schedule`].
pub fn read_schedule<R: BufRead>(input: R) -> Result<CommSchedule> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty schedule file".into()))??;
    let mut m = None;
    let mut num_steps = None;
    let mut alpha = None;
    let mut b1 = None;
    let mut b2 = None;
    for field in header.split(',') {
        if field == "schedule" {
            continue;
        }
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad schedule header field `{field}`")))?;
        match key {
            "m" => m = Some(value.parse::<usize>().map_err(bad_header)?),
            "steps" => num_steps = Some(value.parse::<usize>().map_err(bad_header)?),
            "alpha" => alpha = Some(value.parse::<f64>().map_err(bad_header)?),
            "b1" => b1 = Some(value.parse::<u64>().map_err(bad_header)?),
            "b2" => b2 = Some(value.parse::<u64>().map_err(bad_header)?),
            other => return Err(Error::Parse(format!("unknown schedule header key `{other}`"))),
        }
    }
    let (m, num_steps) = match (m, num_steps) {
        (Some(m), Some(t)) => (m, t),
        _ => return Err(Error::Parse("schedule header missing m/steps".into())),
    };
    let constants = ScheduleConstants {
        alpha: alpha.ok_or_else(|| Error::Parse("schedule header missing alpha".into()))?,
        b1: b1.ok_or_else(|| Error::Parse("schedule header missing b1".into()))?,
        b2: b2.ok_or_else(|| Error::Parse("schedule header missing b2".into()))?,
    };
    // column header
    lines
        .next()
        .ok_or_else(|| Error::Parse("schedule file missing column header".into()))??;

    let mut steps = vec![ScheduleStep::idle(m); num_steps];
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("bad schedule record `{line}`")));
        }
        let t: u64 = fields[0].parse().map_err(|_| bad_record(&line))?;
        let i: usize = fields[1].parse().map_err(|_| bad_record(&line))?;
        let computing = fields[2] == "1";
        let weights: Vec<f64> = fields[3]
            .split(';')
            .map(|s| s.parse::<f64>().map_err(|_| bad_record(&line)))
            .collect::<Result<_>>()?;
        let delays: Vec<u64> = fields[4]
            .split(';')
            .map(|s| s.parse::<u64>().map_err(|_| bad_record(&line)))
            .collect::<Result<_>>()?;
        if t as usize == 0 || t as usize > num_steps || i >= m || weights.len() != m || delays.len() != m {
            return Err(Error::Parse(format!("schedule record out of range `{line}`")));
        }
        let step = &mut steps[(t - 1) as usize];
        step.rows[i] = row_from_dense(i, t, &weights, &delays);
        step.computing[i] = computing;
    }
    Ok(CommSchedule { m, steps, constants })
}

fn bad_header<E: std::fmt::Display>(e: E) -> Error {
    Error::Parse(format!("bad schedule header value: {e}"))
}

fn bad_record(line: &str) -> Error {
    Error::Parse(format!("bad schedule record `{line}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 3 agents on a ring: agents with even index compute at odd instants
    /// and vice versa; averaging agents combine themselves and their ring
    /// successor with weight 1/2 and zero delay.
    pub(crate) fn alternating_ring(m: usize, num_steps: usize) -> CommSchedule {
        let mut steps = Vec::new();
        for idx in 0..num_steps {
            let t = (idx + 1) as u64;
            let mut rows = Vec::new();
            let mut computing = vec![false; m];
            for i in 0..m {
                let computes = (i % 2 == 0) == (t % 2 == 1);
                if computes {
                    computing[i] = true;
                    rows.push(AgentRow::Identity);
                } else {
                    let succ = (i + 1) % m;
                    let mut entries = vec![
                        WeightEntry {
                            peer: i,
                            weight: 0.5,
                            sent_at: t,
                        },
                        WeightEntry {
                            peer: succ,
                            weight: 0.5,
                            sent_at: t,
                        },
                    ];
                    entries.sort_by_key(|e| e.peer);
                    rows.push(AgentRow::Weighted(entries));
                }
            }
            steps.push(ScheduleStep { rows, computing });
        }
        CommSchedule {
            m,
            steps,
            constants: ScheduleConstants {
                alpha: 0.5,
                b1: 0,
                b2: 1,
            },
        }
    }

    #[test]
    fn isolated_agents_fail_connectivity() {
        let m = 3;
        let steps: Vec<ScheduleStep> = (0..10)
            .map(|_| {
                let mut s = ScheduleStep::idle(m);
                s.computing = vec![true; m];
                s
            })
            .collect();
        let sched = CommSchedule {
            m,
            steps,
            constants: ScheduleConstants {
                alpha: 1.0,
                b1: 0,
                b2: 0,
            },
        };
        let report = sched.validate();
        assert!(!report.passed("3"));
        assert!(report.passed("1a"));
        assert!(report.passed("5a"));
    }

    #[test]
    fn alternating_ring_passes_every_assumption() {
        let sched = alternating_ring(3, 20);
        let report = sched.validate();
        assert!(report.all_pass(), "{}", report.render());
        assert_eq!(report.measured.alpha, 0.5);
        assert_eq!(report.measured.b1, 0);
        assert_eq!(report.measured.connectivity_window, Some(2));
    }

    #[test]
    fn delay_bound_violation_is_witnessed() {
        let mut sched = alternating_ring(3, 10);
        // agent 1 averages at t = 5 in this pattern; make it consume a
        // value sent at 1 while declaring B1 = 2
        sched.constants.b1 = 2;
        if let AgentRow::Weighted(entries) = &mut sched.steps[4].rows[1] {
            entries[1].sent_at = 1;
        } else {
            panic!("expected averaging row");
        }
        let report = sched.validate();
        assert!(!report.passed("2d"));
        let witness = &report.check("2d").unwrap().witnesses[0];
        assert!(witness.contains("t=5") && witness.contains("i=1") && witness.contains("j=2"));
    }

    #[test]
    fn equal_neighbor_rows() {
        let rows = equal_neighbor_weights(&[vec![0]]).unwrap();
        assert_eq!(rows, vec![vec![1.0]]);

        let rows = equal_neighbor_weights(&[vec![0, 1], vec![1]]).unwrap();
        assert_eq!(rows[0], vec![0.5, 0.5]);
        assert_eq!(rows[1], vec![0.0, 1.0]);

        let full: Vec<Vec<usize>> = (0..4).map(|_| vec![0, 1, 2, 3]).collect();
        let rows = equal_neighbor_weights(&full).unwrap();
        for row in &rows {
            assert!(row.iter().all(|&w| w == 0.25));
        }

        assert!(equal_neighbor_weights(&[vec![1], vec![1]]).is_err());
    }

    #[test]
    fn random_schedules_validate() {
        for seed in 0..5 {
            let sched = random_valid_schedule(4, 60, 3, seed);
            let report = sched.validate();
            assert!(report.all_pass(), "seed {seed}:\n{}", report.render());
        }
    }

    #[test]
    fn schedule_text_roundtrip() {
        let sched = random_valid_schedule(3, 15, 2, 9);
        let mut buf = Vec::new();
        write_schedule(&mut buf, &sched).unwrap();
        let back = read_schedule(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(sched, back);
        let mut buf2 = Vec::new();
        write_schedule(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn zero_weight_with_bad_delay_is_reported() {
        let m = 2;
        let weights = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let delays = vec![vec![vec![1, 1], vec![3, 1]]]; // tau=3 for a zero weight at t=1
        let computing = vec![vec![true, true]];
        let sched = CommSchedule::from_dense(
            m,
            &weights,
            &delays,
            &computing,
            ScheduleConstants {
                alpha: 1.0,
                b1: 0,
                b2: 0,
            },
        )
        .unwrap();
        let report = sched.validate();
        assert!(!report.passed("2b"));
    }
}
