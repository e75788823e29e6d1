//! Simulation, sharding and per-unit fitting for end-to-end experiments.
//!
//! [`simulate_mixture`] draws labelled samples from Gaussian mixtures with an
//! optional noise component, [`split_into_units`] distributes a sample over
//! `m` units and [`fit_gaussian_clusters`] is the per-unit engine that turns
//! a shard into a k-feature report. The engine is a plain trimmed Gaussian
//! mixture fit:
//!
//! 1. multi-start trimmed k-means locates the clusters;
//! 2. trimmed EM refines means, covariances and weights, discarding the
//!    `⌈γn⌉` points of lowest mixture likelihood at every iteration;
//! 3. a reweighting pass keeps every point whose Mahalanobis distance to its
//!    nearest component is below the 99% χ² quantile, reruns EM on those
//!    points and rescales the covariances by the truncated-normal consistency
//!    factor, so that fixed trimming does not shrink them.
//!
//! With `γ = 0` the fit is ordinary EM from the k-means start.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::aggregate::UnitReport;
use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SymMatrix};
use crate::wasserstein::{GaussianDistribution, QuantileFunction};

pub const DEFAULT_FIT_STARTS: usize = 10;
const KMEANS_MAX_ITERATIONS: usize = 50;
const EM_MAX_ITERATIONS: usize = 100;
const EM_TOL: f64 = 1e-8;
/// Coverage of the χ² acceptance region used by the reweighting pass.
const REWEIGHT_COVERAGE: f64 = 0.99;

/// Where a simulated row came from. Kept for evaluation only; estimators never read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleLabel {
    Component(usize),
    Noise,
}

/// Row-major `n × d` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<SampleLabel>>,
}

impl SampleMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSample("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidSample(format!(
                "{} values do not fill rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite value".into()));
        }
        Ok(SampleMatrix {
            dim,
            data,
            labels: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidSample("no rows".into()))?;
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Simulation labels, if the sample was simulated.
    pub fn provenance(&self) -> Option<&[SampleLabel]> {
        self.labels.as_deref()
    }

    /// Rows `indices` in order, duplicates allowed; labels follow their rows.
    pub fn select(&self, indices: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        SampleMatrix {
            dim: self.dim,
            data,
            labels,
        }
    }
}

/// Gaussian mixture with an optional noise component and padding coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub components: Vec<(GaussianDistribution, f64)>,
    pub noise: Option<(GaussianDistribution, f64)>,
    /// Independent standard normal coordinates appended to every row.
    pub extra_noise_dims: usize,
}

impl MixtureSpec {
    pub fn new(
        components: Vec<(GaussianDistribution, f64)>,
        noise: Option<(GaussianDistribution, f64)>,
        extra_noise_dims: usize,
    ) -> Result<Self> {
        let spec = MixtureSpec {
            components,
            noise,
            extra_noise_dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Five bivariate components with 2% background noise.
    ///
    /// | component | mean | covariance | proportion |
    /// |---|---|---|---|
    /// | 1 | (0, 0) | (4, 2; 2, 4) | 0.15 |
    /// | 2 | (−3, 4) | (2, −1; −1, 4) | 0.15 |
    /// | 3 | (6, 6) | (2, 0; 0, 3) | 0.15 |
    /// | 4 | (5, 0) | (2, 0; 0, 2) | 0.20 |
    /// | 5 | (1, 5) | (2, −1; −1, 1) | 0.33 |
    /// | noise | (2, 2.5) | 4 I | 0.02 |
    pub fn reference_five(extra_noise_dims: usize) -> Self {
        let g = |m: [f64; 2], c: [[f64; 2]; 2]| {
            GaussianDistribution::from_parts(m.to_vec(), &[c[0].to_vec(), c[1].to_vec()])
                .expect("reference covariances are positive definite")
        };
        let components = vec![
            (g([0.0, 0.0], [[4.0, 2.0], [2.0, 4.0]]), 0.15),
            (g([-3.0, 4.0], [[2.0, -1.0], [-1.0, 4.0]]), 0.15),
            (g([6.0, 6.0], [[2.0, 0.0], [0.0, 3.0]]), 0.15),
            (g([5.0, 0.0], [[2.0, 0.0], [0.0, 2.0]]), 0.20),
            (g([1.0, 5.0], [[2.0, -1.0], [-1.0, 1.0]]), 0.33),
        ];
        let noise = (g([2.0, 2.5], [[4.0, 0.0], [0.0, 4.0]]), 0.02);
        MixtureSpec {
            components,
            noise: Some(noise),
            extra_noise_dims,
        }
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .components
            .first()
            .or(self.noise.as_ref())
            .ok_or_else(|| Error::InvalidMixture("no components".into()))?;
        let d = first.0.dim();
        let mut total = 0.0;
        for (g, p) in self.components.iter().chain(self.noise.iter()) {
            if g.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: g.dim(),
                });
            }
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::InvalidMixture(format!("invalid proportion {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!("proportions sum to {total}")));
        }
        Ok(())
    }

    /// Dimension of the informative coordinates.
    pub fn base_dim(&self) -> usize {
        self.components
            .first()
            .or(self.noise.as_ref())
            .map_or(0, |c| c.0.dim())
    }

    /// Dimension of simulated rows, padding included.
    pub fn dim(&self) -> usize {
        self.base_dim() + self.extra_noise_dims
    }

    /// The non-noise components, i.e. the k-feature an ideal engine would report.
    pub fn truth(&self) -> Vec<GaussianDistribution> {
        self.components.iter().map(|(g, _)| g.clone()).collect()
    }

    /// Component proportions renormalized over the non-noise part.
    pub fn truth_weights(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.1).sum();
        self.components.iter().map(|c| c.1 / total).collect()
    }
}

/// Draws `n` rows; every row first draws its source and then `mean + Σ^{1/2} z`.
pub fn simulate_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<SampleMatrix> {
    spec.validate()?;
    let sources: Vec<(&GaussianDistribution, SampleLabel)> = spec
        .components
        .iter()
        .enumerate()
        .map(|(i, (g, _))| (g, SampleLabel::Component(i)))
        .chain(spec.noise.iter().map(|(g, _)| (g, SampleLabel::Noise)))
        .collect();
    let proportions: Vec<f64> = spec
        .components
        .iter()
        .chain(spec.noise.iter())
        .map(|c| c.1)
        .collect();
    let picker =
        WeightedIndex::new(&proportions).map_err(|e| Error::InvalidMixture(e.to_string()))?;
    let roots: Vec<SymMatrix> = sources
        .iter()
        .map(|(g, _)| g.cov().sqrt().matrix().clone())
        .collect();

    let base = spec.base_dim();
    let dim = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; base];
    for _ in 0..n {
        let s = picker.sample(&mut rng);
        let (g, label) = sources[s];
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let root = &roots[s];
        for r in 0..base {
            let shift: f64 = (0..base).map(|c| root.get(r, c) * z[c]).sum();
            data.push(g.mean()[r] + shift);
        }
        for _ in 0..spec.extra_noise_dims {
            data.push(rng.sample(StandardNormal));
        }
        labels.push(label);
    }
    Ok(SampleMatrix {
        dim,
        data,
        labels: Some(labels),
    })
}

/// Sample quantile function on the midpoint grid: `value[j] = x_(⌈t_j n⌉)`,
/// the generalized inverse of the empirical distribution function.
pub fn empirical_quantiles(values: &[f64], grid_size: usize) -> Result<QuantileFunction> {
    if values.is_empty() {
        return Err(Error::InvalidSample("empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // t_j n = (2j + 1) n / (2G); its ceiling in exact integer arithmetic.
    let g = grid_size as u128;
    QuantileFunction::new(
        (0..grid_size)
            .map(|j| {
                let num = (2 * j as u128 + 1) * n as u128;
                let rank = num.div_ceil(2 * g) as usize;
                sorted[rank.clamp(1, n) - 1]
            })
            .collect(),
    )
}

/// How a sample is distributed over units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Disjoint shards whose sizes differ by at most one.
    Partition,
    /// Independent subsamples of the given size, drawn without replacement.
    Subsample(usize),
    /// Independent resamples of the given size, drawn with replacement.
    Bootstrap(usize),
}

/// Splits `data` into `m` shards; shard `j` draws from its own random stream.
pub fn split_into_units(
    data: &SampleMatrix,
    m: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<Vec<SampleMatrix>> {
    let n = data.n_rows();
    if m == 0 {
        return Err(Error::InvalidConfig(
            "number of units must be at least 1".into(),
        ));
    }
    match mode {
        SplitMode::Partition => {
            if m > n {
                return Err(Error::InvalidConfig(format!(
                    "cannot partition {n} rows into {m} units"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (base, extra) = (n / m, n % m);
            let mut start = 0;
            Ok((0..m)
                .map(|j| {
                    let len = base + usize::from(j < extra);
                    let shard = data.select(&order[start..start + len]);
                    start += len;
                    shard
                })
                .collect())
        }
        SplitMode::Subsample(size) | SplitMode::Bootstrap(size) => {
            if size == 0 {
                return Err(Error::InvalidConfig("shard size must be at least 1".into()));
            }
            let replace = matches!(mode, SplitMode::Bootstrap(_));
            if !replace && size > n {
                return Err(Error::InvalidConfig(format!(
                    "subsample of {size} rows from {n}"
                )));
            }
            Ok((0..m)
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(j as u64);
                    let idx: Vec<usize> = if replace {
                        (0..size).map(|_| rng.random_range(0..n)).collect()
                    } else {
                        index::sample(&mut rng, n, size).into_vec()
                    };
                    data.select(&idx)
                })
                .collect())
        }
    }
}

/// Settings of the per-unit engine.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    /// Fraction of points trimmed by k-means and EM.
    pub gamma: f64,
    pub n_starts: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(k: usize, gamma: f64) -> Self {
        FitConfig {
            k,
            gamma,
            n_starts: DEFAULT_FIT_STARTS,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_starts(mut self, n_starts: usize) -> Self {
        self.n_starts = n_starts;
        self
    }
}

/// Fits `k` Gaussian clusters to `data` with trimming level `gamma`.
pub fn fit_gaussian_clusters(
    data: &SampleMatrix,
    k: usize,
    gamma: f64,
    seed: u64,
) -> Result<UnitReport> {
    fit_with_config(data, &FitConfig::new(k, gamma).with_seed(seed), "unit")
}

pub fn fit_with_config(
    data: &SampleMatrix,
    config: &FitConfig,
    unit_id: &str,
) -> Result<UnitReport> {
    let (n, d, k) = (data.n_rows(), data.dim(), config.k);
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&config.gamma) {
        return Err(Error::InvalidConfig(format!(
            "trimming level {} outside [0, 1)",
            config.gamma
        )));
    }
    if config.n_starts == 0 {
        return Err(Error::InvalidConfig(
            "at least one start is required".into(),
        ));
    }
    if n < k * (d + 1) {
        return Err(Error::InvalidSample(format!(
            "{n} rows cannot support {k} clusters in dimension {d}"
        )));
    }
    let trimmed = (config.gamma * n as f64).ceil() as usize;
    if n - trimmed < k * (d + 1) {
        return Err(Error::InvalidConfig(format!(
            "trimming {trimmed} of {n} rows leaves too few points"
        )));
    }

    let mut starts: Vec<KMeansFit> = (0..config.n_starts)
        .filter_map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(s as u64);
            trimmed_kmeans(data, k, trimmed, &mut rng)
        })
        .collect();
    starts.sort_by(|a, b| a.objective.total_cmp(&b.objective));

    // EM refines the best k-means partition; later ones only serve as fallbacks.
    let mut mixture = starts
        .iter()
        .find_map(|start| trimmed_em(data, start.to_mixture(data)?, trimmed))
        .map(|(m, _)| m)
        .ok_or_else(|| Error::FitFailed(format!("all {} starts degenerated", config.n_starts)))?;
    if trimmed > 0 {
        mixture = reweight(data, mixture)
            .ok_or_else(|| Error::FitFailed("reweighting degenerated".into()))?;
    }

    let features = mixture
        .components
        .iter()
        .map(|c| GaussianDistribution::new(c.mean.clone(), SpdMatrix::new(c.cov.clone())?))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = mixture.components.iter().map(|c| c.weight).sum();
    let weights = mixture
        .components
        .iter()
        .map(|c| c.weight / total)
        .collect();
    UnitReport::new(unit_id, features, weights, n as u64)
}

/// Fits every shard in parallel; shard `j` uses seed `seed + j` and id `unit-j`.
pub fn fit_units(shards: &[SampleMatrix], config: &FitConfig) -> Result<Vec<UnitReport>> {
    shards
        .par_iter()
        .enumerate()
        .map(|(j, shard)| {
            let cfg = config.clone().with_seed(config.seed.wrapping_add(j as u64));
            fit_with_config(shard, &cfg, &format!("unit-{j}"))
        })
        .collect()
}

/// Maximum a posteriori cluster of every row under a fitted report.
pub fn classify(report: &UnitReport, data: &SampleMatrix) -> Result<Vec<usize>> {
    if report.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: report.dim(),
            found: data.dim(),
        });
    }
    let components = report
        .features
        .iter()
        .zip(&report.weights)
        .map(|(f, &w)| Component::new(w, f.mean().to_vec(), f.cov().matrix().clone()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidReport("feature covariance is singular".into()))?;
    let mut scores = vec![0.0; components.len()];
    Ok(data
        .rows()
        .map(|x| {
            for (s, c) in scores.iter_mut().zip(&components) {
                *s = c.log_density(x);
            }
            argmax(&scores)
        })
        .collect())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Positions of the `keep` smallest scores, ties broken by index.
fn smallest(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if keep < scores.len() {
        order.select_nth_unstable_by(keep, |&a, &b| {
            scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
        });
        order.truncate(keep);
    }
    order.sort_unstable();
    order
}

const TRIMMED: usize = usize::MAX;

struct KMeansFit {
    objective: f64,
    /// Cluster of every row, [`TRIMMED`] for discarded rows.
    labels: Vec<usize>,
    k: usize,
}

impl KMeansFit {
    /// Sample moments of the kept clusters; `None` when a cluster is too small or flat.
    fn to_mixture(&self, data: &SampleMatrix) -> Option<Mixture> {
        let kept: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] != TRIMMED)
            .collect();
        let mut resp = vec![0.0; kept.len() * self.k];
        for (pos, &i) in kept.iter().enumerate() {
            resp[pos * self.k + self.labels[i]] = 1.0;
        }
        Mixture::m_step(data, &kept, &resp, self.k)
    }
}

/// Trimmed k-means from `k` distinct random rows; `None` if a cluster empties.
fn trimmed_kmeans(
    data: &SampleMatrix,
    k: usize,
    trimmed: usize,
    rng: &mut ChaCha8Rng,
) -> Option<KMeansFit> {
    let (n, d) = (data.n_rows(), data.dim());
    let mut centers: Vec<f64> = index::sample(rng, n, k)
        .iter()
        .flat_map(|i| data.row(i).to_vec())
        .collect();
    let mut nearest = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut labels = vec![TRIMMED; n];
    let mut previous = vec![TRIMMED; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch = vec![0.0; k];
    let mut objective = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITERATIONS {
        for (i, x) in data.rows().enumerate() {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = sq_dist(x, &centers[j * d..(j + 1) * d]);
            }
            nearest[i] = argmin(&scratch);
            dist[i] = scratch[nearest[i]];
        }
        if trimmed > 0 {
            order.select_nth_unstable_by(n - trimmed, |&a, &b| {
                dist[a].total_cmp(&dist[b]).then(a.cmp(&b))
            });
        }
        labels.fill(TRIMMED);
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        objective = 0.0;
        for &i in &order[..n - trimmed] {
            let j = nearest[i];
            labels[i] = j;
            counts[j] += 1;
            objective += dist[i];
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for j in 0..k {
            for t in 0..d {
                centers[j * d + t] = sums[j * d + t] / counts[j] as f64;
            }
        }
        if labels == previous {
            break;
        }
        std::mem::swap(&mut labels, &mut previous);
    }
    Some(KMeansFit {
        objective,
        labels: previous,
        k,
    })
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: SymMatrix,
    inv: SymMatrix,
    /// `ln w − ½ ln det Σ − (d/2) ln 2π`
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: SymMatrix) -> Option<Component> {
        if weight.is_nan() || weight <= 0.0 {
            return None;
        }
        let spd = SpdMatrix::new_strict(cov.clone()).ok()?;
        let inv = spd.inverse().ok()?;
        let d = mean.len() as f64;
        let log_norm =
            weight.ln() - 0.5 * spd.log_det().ok()? - 0.5 * d * (2.0 * std::f64::consts::PI).ln();
        Some(Component {
            weight,
            mean,
            cov,
            inv,
            log_norm,
        })
    }

    fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let inv = self.inv.as_slice();
        let mut acc = 0.0;
        for i in 0..d {
            let row = &inv[i * d..(i + 1) * d];
            let dot: f64 = row
                .iter()
                .zip(x)
                .zip(&self.mean)
                .map(|((a, xj), mj)| a * (xj - mj))
                .sum();
            acc += (x[i] - self.mean[i]) * dot;
        }
        acc
    }

    /// Log of the weighted component density at `x`.
    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }
}

#[derive(Debug, Clone)]
struct Mixture {
    components: Vec<Component>,
}

impl Mixture {
    /// Weighted moments over rows `rows` with responsibilities `resp` (row-major, `rows.len() × k`).
    fn m_step(data: &SampleMatrix, rows: &[usize], resp: &[f64], k: usize) -> Option<Mixture> {
        let d = data.dim();
        let mut mass = vec![0.0; k];
        let mut means = vec![0.0; k * d];
        for (pos, &i) in rows.iter().enumerate() {
            let x = data.row(i);
            for j in 0..k {
                let r = resp[pos * k + j];
                mass[j] += r;
                for t in 0..d {
                    means[j * d + t] += r * x[t];
                }
            }
        }
        // A component needs the effective support of a full-rank covariance.
        if mass.iter().any(|&m| m < (d + 1) as f64) {
            return None;
        }
        for j in 0..k {
            for t in 0..d {
                means[j * d + t] /= mass[j];
            }
        }
        let mut covs = vec![0.0; k * d * d];
        let mut diff = vec![0.0; d];
        for (pos, &i) in rows.iter().enumerate() {
            let x = data.row(i);
            for j in 0..k {
                let r = resp[pos * k + j];
                if r == 0.0 {
                    continue;
                }
                for t in 0..d {
                    diff[t] = x[t] - means[j * d + t];
                }
                let block = &mut covs[j * d * d..(j + 1) * d * d];
                for a in 0..d {
                    for b in a..d {
                        block[a * d + b] += r * diff[a] * diff[b];
                    }
                }
            }
        }
        let total: f64 = mass.iter().sum();
        let components = (0..k)
            .map(|j| {
                let block = &covs[j * d * d..(j + 1) * d * d];
                let mut full = vec![0.0; d * d];
                for a in 0..d {
                    for b in a..d {
                        let v = block[a * d + b] / mass[j];
                        full[a * d + b] = v;
                        full[b * d + a] = v;
                    }
                }
                let cov = SymMatrix::new(d, full).ok()?;
                Component::new(mass[j] / total, means[j * d..(j + 1) * d].to_vec(), cov)
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Mixture { components })
    }

    /// Per-row log mixture density and posterior probabilities (row-major `n × k`).
    fn e_step(&self, data: &SampleMatrix) -> (Vec<f64>, Vec<f64>) {
        let k = self.components.len();
        let n = data.n_rows();
        let mut log_lik = vec![0.0; n];
        let mut post = vec![0.0; n * k];
        for (i, x) in data.rows().enumerate() {
            let row = &mut post[i * k..(i + 1) * k];
            for (p, c) in row.iter_mut().zip(&self.components) {
                *p = c.log_density(x);
            }
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = (*p - top).exp();
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            log_lik[i] = top + sum.ln();
        }
        (log_lik, post)
    }
}

/// EM that discards the `trimmed` rows of lowest mixture likelihood at every
/// iteration. Returns the fit and its trimmed log-likelihood.
fn trimmed_em(data: &SampleMatrix, mut mixture: Mixture, trimmed: usize) -> Option<(Mixture, f64)> {
    let n = data.n_rows();
    let k = mixture.components.len();
    let mut score = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERATIONS {
        let (log_lik, post) = mixture.e_step(data);
        let neg: Vec<f64> = log_lik.iter().map(|l| -l).collect();
        let kept = smallest(&neg, n - trimmed);
        let current: f64 = kept.iter().map(|&i| log_lik[i]).sum();
        let resp: Vec<f64> = kept
            .iter()
            .flat_map(|&i| post[i * k..(i + 1) * k].iter().copied())
            .collect();
        let next = Mixture::m_step(data, &kept, &resp, k)?;
        let converged = (current - score).abs() <= EM_TOL * current.abs().max(1.0);
        score = current;
        mixture = next;
        if converged {
            break;
        }
    }
    Some((mixture, score))
}

/// Refit on every row inside the χ² acceptance region of its nearest component,
/// then undo the variance shrinkage caused by truncating each Gaussian there.
fn reweight(data: &SampleMatrix, mixture: Mixture) -> Option<Mixture> {
    let d = data.dim() as f64;
    let cutoff = ChiSquared::new(d).ok()?.inverse_cdf(REWEIGHT_COVERAGE);
    let consistency = ChiSquared::new(d + 2.0).ok()?.cdf(cutoff) / REWEIGHT_COVERAGE;
    let kept: Vec<usize> = data
        .rows()
        .enumerate()
        .filter(|(_, x)| {
            mixture
                .components
                .iter()
                .any(|c| c.mahalanobis_sq(x) <= cutoff)
        })
        .map(|(i, _)| i)
        .collect();
    let subset = data.select(&kept);
    let (mut fit, _) = trimmed_em(&subset, mixture, 0)?;
    for c in &mut fit.components {
        *c = Component::new(c.weight, c.mean.clone(), c.cov.scale(1.0 / consistency))?;
    }
    Some(fit)
}
