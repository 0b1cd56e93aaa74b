//! Synthetic regression data: design distributions, response models, the
//! bounded-response truncation filter, and train/test sharding.
//!
//! Three response models are built in (dimensions 2, 4, 4):
//!
//! ```text
//! Model 1:  y = x1^2 + exp(-x2^2)
//! Model 2:  y = x1*x2 + x3^2 - x4                             + N(0, 0.05)
//! Model 3:  y = 1[x1 > 0] + 1[x4 - x2 > 1 + x3] + x2^3
//!               + exp(-x2^2)                                  + N(0, 0.05)
//! ```
//!
//! `N(0, 0.05)` is a centered Gaussian with *variance* 0.05. Any draw whose
//! response satisfies `|y| > 1` is discarded (drop-and-continue: the
//! effective sample size shrinks and is reported). The boundary `|y| = 1`
//! is kept.
//!
//! Two design distributions are supported: uniform over `(0,1)^d`, and a
//! centered Gaussian with covariance `S[i][j] = 2^(-|i-j|)` (sampled through
//! a Cholesky factor, verified positive definite at construction).
//!
//! All generators are seeded and reproduce byte-identical streams for a
//! given `(spec, n, seed)` within one build.

use std::io::{BufRead, Write};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One labelled example: feature vector in `R^d` plus a scalar response.
///
/// After the truncation filter, `|y| <= 1` holds for every observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

// ---------------------------------------------------------------------------
// Designs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Uniform,
    Gaussian,
}

impl DesignKind {
    pub fn name(&self) -> &'static str {
        match self {
            DesignKind::Uniform => "uniform",
            DesignKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DesignKind::Uniform),
            "gaussian" => Ok(DesignKind::Gaussian),
            other => Err(Error::Parse(format!("unknown design `{other}`"))),
        }
    }
}

/// A design distribution over `R^d`.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub dim: usize,
    /// Lower Cholesky factor of the Gaussian covariance (row-major), present
    /// only for the Gaussian design.
    chol: Option<Vec<f64>>,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::invalid_input("design dimension must be >= 1"));
        }
        let chol = match kind {
            DesignKind::Uniform => None,
            DesignKind::Gaussian => {
                let cov = covariance_matrix(dim);
                Some(cholesky(&cov, dim)?)
            }
        };
        Ok(DesignSpec { kind, dim, chol })
    }
}

/// Covariance `S[i][j] = 2^(-|i-j|)` of the Gaussian design, row-major.
pub fn covariance_matrix(dim: usize) -> Vec<f64> {
    let mut cov = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            cov[i * dim + j] = 2f64.powi(-((i as i32) - (j as i32)).abs());
        }
    }
    cov
}

/// Lower Cholesky factor of a symmetric matrix; errors unless the matrix is
/// positive definite.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::invalid_input(
                        "design covariance is not positive definite",
                    ));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Streaming sampler of design points.
pub struct DesignSampler {
    spec: DesignSpec,
    rng: StdRng,
}

impl DesignSampler {
    pub fn new(spec: DesignSpec, seed: u64) -> Self {
        DesignSampler {
            spec,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        sample_point(&self.spec, &mut self.rng)
    }
}

fn sample_point(spec: &DesignSpec, rng: &mut StdRng) -> Vec<f64> {
    match spec.kind {
        DesignKind::Uniform => (0..spec.dim)
            .map(|_| loop {
                // open interval (0, 1): reject the measure-zero left endpoint
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            })
            .collect(),
        DesignKind::Gaussian => {
            let d = spec.dim;
            let l = spec.chol.as_ref().expect("gaussian design has a factor");
            let z: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            (0..d)
                .map(|i| (0..=i).map(|j| l[i * d + j] * z[j]).sum())
                .collect()
        }
    }
}

/// Draws `n` i.i.d. design points with a fresh seeded generator.
pub fn sample_design(spec: &DesignSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n < 1 {
        return Err(Error::invalid_input("sample size must be >= 1"));
    }
    let mut s = DesignSampler::new(spec.clone(), seed);
    Ok((0..n).map(|_| s.next_point()).collect())
}

// ---------------------------------------------------------------------------
// Response models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    One,
    Two,
    Three,
}

impl ModelId {
    pub fn from_index(idx: u32) -> Result<Self> {
        match idx {
            1 => Ok(ModelId::One),
            2 => Ok(ModelId::Two),
            3 => Ok(ModelId::Three),
            other => Err(Error::invalid_input(format!("unknown model id {other}"))),
        }
    }

    pub fn index(&self) -> u32 {
        match self {
            ModelId::One => 1,
            ModelId::Two => 2,
            ModelId::Three => 3,
        }
    }

    /// Feature dimension the model is defined on.
    pub fn dim(&self) -> usize {
        match self {
            ModelId::One => 2,
            ModelId::Two | ModelId::Three => 4,
        }
    }

    /// Noise standard deviation (variance 0.05 for models 2 and 3).
    pub fn noise_std(&self) -> f64 {
        match self {
            ModelId::One => 0.0,
            ModelId::Two | ModelId::Three => 0.05f64.sqrt(),
        }
    }
}

/// Noise-free part of the response.
pub fn model_mean(model: ModelId, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::invalid_input(format!(
            "model {} expects dimension {}, got {}",
            model.index(),
            model.dim(),
            x.len()
        )));
    }
    Ok(match model {
        ModelId::One => x[0] * x[0] + (-x[1] * x[1]).exp(),
        ModelId::Two => x[0] * x[1] + x[2] * x[2] - x[3],
        ModelId::Three => {
            let ind1 = if x[0] > 0.0 { 1.0 } else { 0.0 };
            let ind2 = if x[3] - x[1] > 1.0 + x[2] { 1.0 } else { 0.0 };
            ind1 + ind2 + x[1] * x[1] * x[1] + (-x[1] * x[1]).exp()
        }
    })
}

/// Full response: model mean plus Gaussian noise. Returns `None` when the
/// truncation filter discards the draw (`|y| > 1`).
pub fn response(model: ModelId, x: &[f64], noise: &mut StdRng) -> Result<Option<f64>> {
    let mean = model_mean(model, x)?;
    let y = match model.noise_std() {
        s if s > 0.0 => {
            let dist = Normal::new(0.0, s).expect("valid std");
            mean + dist.sample(noise)
        }
        _ => mean,
    };
    Ok(if y.abs() > 1.0 { None } else { Some(y) })
}

/// Counts from one generation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenStats {
    /// Raw draws requested.
    pub raw: usize,
    /// Draws surviving the `|y| <= 1` filter.
    pub kept: usize,
}

/// Generates `n` raw draws from the design, computes responses, and applies
/// the truncation filter. A single seeded generator drives both the design
/// coordinates and the noise, so the stream is reproducible.
pub fn generate_observations(
    model: ModelId,
    design: DesignKind,
    n: usize,
    seed: u64,
) -> Result<(Vec<Observation>, GenStats)> {
    let spec = DesignSpec::new(design, model.dim())?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_point(&spec, &mut rng);
        if let Some(y) = response(model, &x, &mut rng)? {
            kept.push(Observation { x, y });
        }
    }
    let stats = GenStats {
        raw: n,
        kept: kept.len(),
    };
    Ok((kept, stats))
}

// ---------------------------------------------------------------------------
// Sharding
// ---------------------------------------------------------------------------

/// Train/test split: one private observation sequence per worker plus a
/// shared test set.
#[derive(Debug, Clone)]
pub struct ShardedDataset {
    pub shards: Vec<Vec<Observation>>,
    pub test: Vec<Observation>,
    pub seed: u64,
}

/// Splits observations into a test set of `round(test_fraction * n)` points
/// and `m` training shards. Test indices are chosen first; the remainder is
/// dealt round-robin after a seeded shuffle, so shard sizes differ by at
/// most one.
pub fn shard(
    observations: Vec<Observation>,
    m: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<ShardedDataset> {
    if m < 1 {
        return Err(Error::invalid_input("worker count must be >= 1"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid_input("test fraction must be in [0, 1)"));
    }
    let n = observations.len();
    if n < m + 1 {
        return Err(Error::invalid_input(format!(
            "need at least {} observations after truncation to shard across {} workers, got {}",
            m + 1,
            m,
            n
        )));
    }
    let test_size = (test_fraction * n as f64).round() as usize;
    if n - test_size < m {
        return Err(Error::invalid_input(
            "not enough training observations for every shard to be nonempty",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut observations: Vec<Option<Observation>> = observations.into_iter().map(Some).collect();
    let mut take = |idx: usize| observations[idx].take().expect("index used once");

    let test: Vec<Observation> = order[..test_size].iter().map(|&i| take(i)).collect();
    let mut shards: Vec<Vec<Observation>> = vec![Vec::new(); m];
    for (k, &i) in order[test_size..].iter().enumerate() {
        shards[k % m].push(take(i));
    }
    Ok(ShardedDataset { shards, test, seed })
}

// ---------------------------------------------------------------------------
// CSV import/export
// ---------------------------------------------------------------------------

/// Writes observations as `x_1,..,x_d,y` with a header row.
pub fn write_csv<W: Write>(out: &mut W, observations: &[Observation]) -> Result<()> {
    let dim = observations.first().map(|o| o.x.len()).unwrap_or(0);
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
    header.push("y".to_string());
    writeln!(out, "{}", header.join(","))?;
    for obs in observations {
        if obs.x.len() != dim {
            return Err(Error::invalid_input("mixed dimensions in observation list"));
        }
        let mut fields: Vec<String> = obs.x.iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", obs.y));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads observations written by [`write_csv`].
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<Observation>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.last() != Some(&"y") || cols.len() < 2 {
        return Err(Error::Parse("dataset header must be x_1,..,x_d,y".into()));
    }
    let dim = cols.len() - 1;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "dataset line {}: expected {} fields, got {}",
                lineno + 2,
                dim + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("dataset line {}: {e}", lineno + 2)))
        };
        let x = fields[..dim].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let y = parse(fields[dim])?;
        out.push(Observation { x, y });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_coordinates_are_in_open_unit_interval() {
        let spec = DesignSpec::new(DesignKind::Uniform, 2).unwrap();
        for x in sample_design(&spec, 2000, 7).unwrap() {
            assert_eq!(x.len(), 2);
            assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn gaussian_sample_covariance_matches_target() {
        let d = 4;
        let spec = DesignSpec::new(DesignKind::Gaussian, d).unwrap();
        let n = 100_000;
        let draws = sample_design(&spec, n, 42).unwrap();
        let target = covariance_matrix(d);
        // Monte Carlo estimate of the covariance, entrywise within 0.02.
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for x in &draws {
                    acc += x[i] * x[j];
                }
                let est = acc / n as f64;
                assert!(
                    (est - target[i * d + j]).abs() < 0.02,
                    "cov[{i}][{j}] = {est}, want {}",
                    target[i * d + j]
                );
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_stream() {
        let spec = DesignSpec::new(DesignKind::Gaussian, 4).unwrap();
        let a = sample_design(&spec, 500, 11).unwrap();
        let b = sample_design(&spec, 500, 11).unwrap();
        assert_eq!(a, b);
        let (obs_a, _) = generate_observations(ModelId::Two, DesignKind::Uniform, 500, 3).unwrap();
        let (obs_b, _) = generate_observations(ModelId::Two, DesignKind::Uniform, 500, 3).unwrap();
        assert_eq!(obs_a, obs_b);
    }

    #[test]
    fn model1_boundary_kept_and_overflow_discarded() {
        // y = 0 + e^0 = 1 exactly: |y| = 1 is not above 1, so it is kept.
        let mut rng = StdRng::seed_from_u64(0);
        let y = response(ModelId::One, &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(y, Some(1.0));
        // y = 1 + 1 = 2 is discarded.
        let y = response(ModelId::One, &[1.0, 0.0], &mut rng).unwrap();
        assert_eq!(y, None);
    }

    #[test]
    fn model2_mean_vanishes_at_origin() {
        assert_eq!(model_mean(ModelId::Two, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn model_dimension_mismatch_is_an_error() {
        assert!(model_mean(ModelId::One, &[0.0; 4]).is_err());
        assert!(model_mean(ModelId::Three, &[0.0; 2]).is_err());
    }

    /// Independent hand-coded evaluation of each model formula, compared
    /// against the generator on fixed seeded inputs.
    #[test]
    fn model_formula_spot_checks() {
        fn oracle(model: ModelId, x: &[f64]) -> f64 {
            match model {
                ModelId::One => {
                    let t1 = x[0].powi(2);
                    let t2 = f64::exp(-(x[1].powi(2)));
                    t1 + t2
                }
                ModelId::Two => {
                    let t1 = x[0] * x[1];
                    let t2 = x[2].powi(2);
                    t1 + t2 - x[3]
                }
                ModelId::Three => {
                    let mut acc = 0.0;
                    if x[0] > 0.0 {
                        acc += 1.0;
                    }
                    if x[3] - x[1] > 1.0 + x[2] {
                        acc += 1.0;
                    }
                    acc + x[1].powi(3) + f64::exp(-(x[1].powi(2)))
                }
            }
        }
        for model in [ModelId::One, ModelId::Two, ModelId::Three] {
            let spec = DesignSpec::new(DesignKind::Gaussian, model.dim()).unwrap();
            let xs = sample_design(&spec, 20, 99).unwrap();
            for x in &xs {
                let got = model_mean(model, x).unwrap();
                let want = oracle(model, x);
                assert!(
                    (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                    "model {}: got {got}, want {want}",
                    model.index()
                );
            }
        }
    }

    #[test]
    fn truncation_bounds_every_kept_response() {
        for design in [DesignKind::Uniform, DesignKind::Gaussian] {
            for model in [ModelId::One, ModelId::Two, ModelId::Three] {
                let (obs, stats) = generate_observations(model, design, 2000, 5).unwrap();
                assert_eq!(stats.raw, 2000);
                assert_eq!(stats.kept, obs.len());
                assert!(obs.iter().all(|o| o.y.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn shard_sizes_follow_the_split_rule() {
        let obs: Vec<Observation> = (0..100)
            .map(|i| Observation {
                x: vec![i as f64],
                y: 0.0,
            })
            .collect();
        let ds = shard(obs, 4, 0.2, 17).unwrap();
        assert_eq!(ds.test.len(), 20);
        assert_eq!(ds.shards.len(), 4);
        for s in &ds.shards {
            assert_eq!(s.len(), 20);
        }
    }

    #[test]
    fn single_worker_gets_the_whole_training_set() {
        let obs: Vec<Observation> = (0..50)
            .map(|i| Observation {
                x: vec![i as f64],
                y: 0.0,
            })
            .collect();
        let ds = shard(obs, 1, 0.2, 17).unwrap();
        assert_eq!(ds.test.len(), 10);
        assert_eq!(ds.shards[0].len(), 40);
    }

    #[test]
    fn sharding_is_seeded_and_disjoint() {
        let obs: Vec<Observation> = (0..101)
            .map(|i| Observation {
                x: vec![i as f64],
                y: 0.0,
            })
            .collect();
        let a = shard(obs.clone(), 3, 0.2, 9).unwrap();
        let b = shard(obs, 3, 0.2, 9).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.shards, b.shards);

        let mut seen = std::collections::BTreeSet::new();
        for o in a.test.iter().chain(a.shards.iter().flatten()) {
            assert!(seen.insert(o.x[0] as i64), "observation assigned twice");
        }
        assert_eq!(seen.len(), 101);
        let sizes: Vec<usize> = a.shards.iter().map(|s| s.len()).collect();
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let (obs, _) = generate_observations(ModelId::One, DesignKind::Uniform, 200, 23).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &obs).unwrap();
        let back = read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(obs, back);
    }

    #[test]
    fn shard_rejects_too_few_observations() {
        let obs: Vec<Observation> = (0..3)
            .map(|_| Observation {
                x: vec![0.0],
                y: 0.0,
            })
            .collect();
        assert!(shard(obs, 4, 0.2, 1).is_err());
    }
}
