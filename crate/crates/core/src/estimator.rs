//! Recursive kernel regression in the stochastic-approximation form
//! introduced by Révész (1973, 1977).
//!
//! The estimate is maintained pointwise over a fixed query grid. Starting
//! from `r_1(x) = y_1`, each observation `(X, Y)` updates every grid point:
//!
//! ```text
//! r_{t+1}(x) = r_t(x) + g * (Y - r_t(x)),      g = eps_{t+1} * K_{t+1}(x, X)
//! ```
//!
//! which is the compact form `r_{t+1} = r_t - eps * H(Z, r_t)` with
//! `H(Z, r) = (r - Y) * K`. For `g` in `[0, 1]` the update is a convex
//! combination of the current value and the response, so estimates driven by
//! responses bounded by `gamma` stay in `[-gamma, gamma]` whenever
//! `sup eps_t * K_t <= 1`.
//!
//! Two kernels are built in, both of the form `K_t(x,z) = h_t^{-d} k(|x-z|/h_t)`:
//! Gaussian (`k(r) = exp(-r^2)`) and naive (`k(r) = 1[r <= 1]`). The profile
//! `k` doubles as the nonincreasing envelope `L`, so
//! `h^d K_h(x,z) = L(|x-z|/h)` holds with equality.
//!
//! Step sizes satisfy `C1/t <= eps_t <= C2/t` with the convention
//! `eps_1 = 1`; the default rule is the deterministic lower bound `C1/t`,
//! with an optional midpoint rule. The default bandwidth is the power law
//! `h_t = t^(-d/(d+4))` with `h_1 = 1`.

use std::sync::Arc;

use crate::data::Observation;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Query grid
// ---------------------------------------------------------------------------

/// Fixed evaluation points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    dim: usize,
    coords: Vec<f64>,
}

impl QueryGrid {
    pub fn new(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim < 1 {
            return Err(Error::invalid_input("grid dimension must be >= 1"));
        }
        if points.is_empty() {
            return Err(Error::invalid_input("query grid must be nonempty"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::invalid_input(format!(
                    "grid point has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Ok(QueryGrid { dim, coords })
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let dim = obs
            .first()
            .map(|o| o.x.len())
            .ok_or_else(|| Error::invalid_input("query grid must be nonempty"))?;
        let points: Vec<Vec<f64>> = obs.iter().map(|o| o.x.clone()).collect();
        QueryGrid::new(dim, &points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &z) in a.iter().zip(b.iter()) {
        let d = x - z;
        acc += d * d;
    }
    acc
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
    Naive,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "naive" => Ok(KernelKind::Naive),
            other => Err(Error::Parse(format!("unknown kernel `{other}`"))),
        }
    }
}

/// A scaled kernel family `K_h(x,z) = h^{-d} k(|x-z|/h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::invalid_input("kernel dimension must be >= 1"));
        }
        Ok(KernelSpec { kind, dim })
    }

    /// `K_h(x, z)`. Symmetric and nonnegative; errors on dimension mismatch
    /// or a nonpositive bandwidth.
    pub fn evaluate(&self, h: f64, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != self.dim || z.len() != self.dim {
            return Err(Error::invalid_input(format!(
                "kernel expects dimension {}, got {} and {}",
                self.dim,
                x.len(),
                z.len()
            )));
        }
        if h <= 0.0 {
            return Err(Error::invalid_input("bandwidth must be positive"));
        }
        Ok(self.eval_sq(h, squared_distance(x, z)))
    }

    /// Kernel value from a precomputed squared distance (hot path).
    #[inline]
    pub fn eval_sq(&self, h: f64, sq_dist: f64) -> f64 {
        let scale = h.powi(-(self.dim as i32));
        match self.kind {
            KernelKind::Gaussian => scale * (-sq_dist / (h * h)).exp(),
            KernelKind::Naive => {
                if sq_dist <= h * h {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    /// The nonincreasing envelope `L` with `h^d K_h(x,z) <= L(|x-z|/h)`.
    pub fn envelope(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => (-r * r).exp(),
            KernelKind::Naive => {
                if r <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Bandwidth sequence `h_t`. The power-law form is `h_t = t^(-exponent)`
/// with `h_1 = 1`; a custom table may be supplied instead (values past the
/// end of the table repeat the last entry).
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthSchedule {
    PowerLaw { exponent: f64 },
    Table(Vec<f64>),
}

impl BandwidthSchedule {
    /// The default exponent `d/(d+4)`.
    pub fn default_for_dim(dim: usize) -> Self {
        BandwidthSchedule::PowerLaw {
            exponent: dim as f64 / (dim as f64 + 4.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BandwidthSchedule::PowerLaw { exponent } => {
                if !exponent.is_finite() || *exponent <= 0.0 {
                    return Err(Error::invalid_input("bandwidth exponent must be positive"));
                }
            }
            BandwidthSchedule::Table(values) => {
                if values.is_empty() || values.iter().any(|&h| !(h > 0.0)) {
                    return Err(Error::invalid_input(
                        "bandwidth table must be nonempty and positive",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `h_t` for `t >= 1`.
    pub fn at(&self, t: u64) -> Result<f64> {
        if t < 1 {
            return Err(Error::invalid_input("iteration index must be >= 1"));
        }
        Ok(match self {
            BandwidthSchedule::PowerLaw { exponent } => {
                if t == 1 {
                    1.0
                } else {
                    (t as f64).powf(-exponent)
                }
            }
            BandwidthSchedule::Table(values) => {
                let idx = ((t - 1) as usize).min(values.len() - 1);
                values[idx]
            }
        })
    }

    pub fn power_law_exponent(&self) -> Option<f64> {
        match self {
            BandwidthSchedule::PowerLaw { exponent } => Some(*exponent),
            BandwidthSchedule::Table(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `eps_t = C1 / t` (the default: deterministic and reproducible).
    Lower,
    /// `eps_t = (C1 + C2) / (2t)`.
    Midpoint,
}

impl StepRule {
    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Lower => "lower",
            StepRule::Midpoint => "midpoint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(StepRule::Lower),
            "midpoint" => Ok(StepRule::Midpoint),
            other => Err(Error::Parse(format!("unknown step rule `{other}`"))),
        }
    }
}

/// Step-size sequence with `eps_1 = 1` and `C1/t <= eps_t <= C2/t` for
/// `t >= 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    c1: f64,
    c2: f64,
    rule: StepRule,
}

impl StepSchedule {
    pub fn new(c1: f64, c2: f64, rule: StepRule) -> Result<Self> {
        if !(c1 > 0.0) || !(c2 > 0.0) {
            return Err(Error::invalid_input("step constants must be positive"));
        }
        if c1 > c2 {
            return Err(Error::invalid_input("step constants must satisfy C1 <= C2"));
        }
        Ok(StepSchedule { c1, c2, rule })
    }

    /// `C1 = C2 = 1`, so `eps_t = 1/t`.
    pub fn unit() -> Self {
        StepSchedule {
            c1: 1.0,
            c2: 1.0,
            rule: StepRule::Lower,
        }
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `eps_t` for `t >= 1`.
    pub fn at(&self, t: u64) -> Result<f64> {
        if t < 1 {
            return Err(Error::invalid_input("iteration index must be >= 1"));
        }
        if t == 1 {
            return Ok(1.0);
        }
        Ok(match self.rule {
            StepRule::Lower => self.c1 / t as f64,
            StepRule::Midpoint => (self.c1 + self.c2) / (2.0 * t as f64),
        })
    }
}

// ---------------------------------------------------------------------------
// Estimate state
// ---------------------------------------------------------------------------

/// Estimate values over a query grid together with the iteration counter of
/// the recursion (the number of observations incorporated so far).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateVector {
    pub grid: Arc<QueryGrid>,
    pub values: Vec<f64>,
    pub t: u64,
}

// ---------------------------------------------------------------------------
// Estimator
// ---------------------------------------------------------------------------

/// Closed-form analysis of `sup_t eps_t K_t(x,z)` for the configured
/// schedules. The bound `<= 1` is a hypothesis of the consistency theory and
/// the precondition of the boundedness lemma; several standard experiment
/// configurations violate it, so violation is reported rather than rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBoundReport {
    /// Whether `sup eps_t K_t <= 1` holds. `None` when the schedule is not a
    /// power law (no closed form; a numeric probe is used instead).
    pub analytic: Option<bool>,
    /// Estimate of the supremum (`f64::INFINITY` when it grows without
    /// bound).
    pub sup_estimate: f64,
    /// Final verdict used by the runtime.
    pub holds: bool,
}

/// Kernel, bandwidth schedule, step schedule, and the gain-clamp policy,
/// validated together at construction.
#[derive(Debug, Clone)]
pub struct Estimator {
    kernel: KernelSpec,
    bandwidth: BandwidthSchedule,
    step: StepSchedule,
    clamp_gain: bool,
    gain_bound: GainBoundReport,
}

impl Estimator {
    pub fn new(
        kernel: KernelSpec,
        bandwidth: BandwidthSchedule,
        step: StepSchedule,
        clamp_gain: bool,
    ) -> Result<Self> {
        bandwidth.validate()?;
        let gain_bound = analyze_gain_bound(&kernel, &bandwidth, &step);
        Ok(Estimator {
            kernel,
            bandwidth,
            step,
            clamp_gain,
            gain_bound,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn bandwidth(&self) -> &BandwidthSchedule {
        &self.bandwidth
    }

    pub fn step_schedule(&self) -> &StepSchedule {
        &self.step
    }

    pub fn clamp_gain(&self) -> bool {
        self.clamp_gain
    }

    pub fn gain_bound(&self) -> &GainBoundReport {
        &self.gain_bound
    }

    /// `r_1(x) = y_1` at every grid point.
    pub fn init(&self, first: &Observation, grid: Arc<QueryGrid>) -> Result<EstimateVector> {
        if grid.is_empty() {
            return Err(Error::invalid_input("query grid must be nonempty"));
        }
        if first.x.len() != grid.dim() {
            return Err(Error::invalid_input(
                "observation dimension does not match the grid",
            ));
        }
        let values = vec![first.y; grid.len()];
        Ok(EstimateVector { grid, values, t: 1 })
    }

    /// One recursion step in place. When `deltas` is given it receives the
    /// exact per-point increments that were added, so a linear-model replay
    /// applying `r + delta` reproduces the new state bit for bit.
    pub fn step_into(
        &self,
        est: &mut EstimateVector,
        obs: &Observation,
        mut deltas: Option<&mut Vec<f64>>,
    ) -> StepStats {
        debug_assert_eq!(obs.x.len(), est.grid.dim());
        let t_next = est.t + 1;
        let eps = self.step.at(t_next).expect("t >= 2");
        let h = self.bandwidth.at(t_next).expect("t >= 2");
        let grid = est.grid.clone();
        if let Some(d) = deltas.as_deref_mut() {
            d.resize(est.values.len(), 0.0);
        }
        let mut max_gain = 0.0f64;
        for k in 0..grid.len() {
            let sq = squared_distance(grid.point(k), &obs.x);
            let kernel_value = self.kernel.eval_sq(h, sq);
            let mut gain = eps * kernel_value;
            if gain > max_gain {
                max_gain = gain;
            }
            if self.clamp_gain && gain > 1.0 {
                gain = 1.0;
            }
            let delta = gain * (obs.y - est.values[k]);
            est.values[k] += delta;
            if let Some(d) = deltas.as_deref_mut() {
                d[k] = delta;
            }
        }
        est.t = t_next;
        StepStats { max_gain }
    }

    /// Pure version of [`Estimator::step_into`].
    pub fn step(&self, est: &EstimateVector, obs: &Observation) -> EstimateVector {
        let mut next = est.clone();
        self.step_into(&mut next, obs, None);
        next
    }

    /// The single-node baseline: initialize on the first observation, then
    /// apply the recursion to the rest of the stream in order.
    pub fn fit(&self, stream: &[Observation], grid: Arc<QueryGrid>) -> Result<EstimateVector> {
        let first = stream
            .first()
            .ok_or_else(|| Error::invalid_input("observation stream must be nonempty"))?;
        let mut est = self.init(first, grid)?;
        for obs in &stream[1..] {
            self.step_into(&mut est, obs, None);
        }
        Ok(est)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Largest unclamped `eps * K` seen across the grid.
    pub max_gain: f64,
}

/// For a power-law bandwidth `h_t = t^(-beta)` and steps bounded by `C2/t`,
/// `sup_{t>=2,x,z} eps_t K_t = sup_t C2 t^(beta*d - 1) L(0)`: finite iff
/// `beta*d <= 1`, in which case it is at most `C2 * L(0)` (and `eps_1 K_1 = 1`
/// by convention). Table schedules are probed numerically over the table.
fn analyze_gain_bound(
    kernel: &KernelSpec,
    bandwidth: &BandwidthSchedule,
    step: &StepSchedule,
) -> GainBoundReport {
    let l0 = kernel.envelope(0.0);
    let d = kernel.dim as f64;
    match bandwidth {
        BandwidthSchedule::PowerLaw { exponent } => {
            let bd = exponent * d;
            if bd > 1.0 {
                GainBoundReport {
                    analytic: Some(false),
                    sup_estimate: f64::INFINITY,
                    holds: false,
                }
            } else {
                let sup = step.c2() * l0;
                let holds = sup <= 1.0;
                GainBoundReport {
                    analytic: Some(holds),
                    sup_estimate: sup,
                    holds,
                }
            }
        }
        BandwidthSchedule::Table(values) => {
            let mut sup = 1.0f64; // eps_1 * K_1 = 1 by convention
            for (idx, &h) in values.iter().enumerate() {
                let t = (idx + 1).max(2) as u64;
                let eps = step.c2() / t as f64;
                sup = sup.max(eps * h.powi(-(kernel.dim as i32)) * l0);
            }
            GainBoundReport {
                analytic: None,
                sup_estimate: sup,
                holds: sup <= 1.0,
            }
        }
    }
}
