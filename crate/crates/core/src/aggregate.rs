//! Robust consensus of parallel clustering reports.
//!
//! Each of `m` units clusters its own share of the data and reports `k`
//! Gaussian features with weights. The `m·k` reported features form a
//! meta-sample in Wasserstein space; its α-trimmed k-barycenter is the
//! consensus, and the most discrepant reports are trimmed away instead of
//! dragging the consensus. Label correspondence between units is never
//! needed: the unit labels are only used to seed the solver with each unit's
//! own k-set.

use crate::error::{Error, Result};
use crate::kbary::{solve_detailed, SolverConfig, TrimSolution};
use crate::wasserstein::{
    w2_distance, w2_squared, Distribution, GaussianDistribution, WeightedDistributionSet,
};

/// Up to this many features, the matching distance enumerates all permutations.
pub const EXHAUSTIVE_MATCHING_MAX_K: usize = 8;

/// k-feature reported by one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitReport {
    pub unit_id: String,
    pub features: Vec<GaussianDistribution>,
    /// Cluster weights reported alongside the features.
    pub weights: Vec<f64>,
    pub sample_size: u64,
}

impl UnitReport {
    pub fn new(
        unit_id: impl Into<String>,
        features: Vec<GaussianDistribution>,
        weights: Vec<f64>,
        sample_size: u64,
    ) -> Result<Self> {
        let unit_id = unit_id.into();
        if features.is_empty() {
            return Err(Error::InvalidReport(format!(
                "unit {unit_id} reports no features"
            )));
        }
        if weights.len() != features.len() {
            return Err(Error::InvalidReport(format!(
                "unit {unit_id}: {} features but {} weights",
                features.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidReport(format!(
                "unit {unit_id}: negative or non-finite weight"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidReport(format!(
                "unit {unit_id}: weights sum to {total}"
            )));
        }
        if sample_size == 0 {
            return Err(Error::InvalidReport(format!(
                "unit {unit_id}: zero sample size"
            )));
        }
        let d = features[0].dim();
        if let Some(f) = features.iter().find(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: f.dim(),
            });
        }
        Ok(UnitReport {
            unit_id,
            features,
            weights,
            sample_size,
        })
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }
}

/// How reported features are weighted in the meta-sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `1 / (m k)` per feature.
    #[default]
    Equal,
    /// `n_j / (k Σ n)` per feature of unit `j`.
    SampleSize,
}

fn check_homogeneous(reports: &[UnitReport]) -> Result<(usize, usize)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidReport("no unit reports".into()))?;
    let (k, d) = (first.k(), first.dim());
    for r in reports {
        if r.k() != k {
            return Err(Error::InvalidReport(format!(
                "unit {} reports {} features, expected {k}",
                r.unit_id,
                r.k()
            )));
        }
        if r.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.dim(),
            });
        }
    }
    Ok((k, d))
}

/// Flattens the reports into an `m·k` meta-sample; item `j·k + i` is feature
/// `i` of unit `j`.
pub fn build_meta_sample(
    reports: &[UnitReport],
    weighting: Weighting,
) -> Result<WeightedDistributionSet> {
    let (k, _) = check_homogeneous(reports)?;
    let m = reports.len();
    let total_n: f64 = reports.iter().map(|r| r.sample_size as f64).sum();
    let mut items = Vec::with_capacity(m * k);
    let mut weights = Vec::with_capacity(m * k);
    for r in reports {
        let w = match weighting {
            Weighting::Equal => 1.0 / (m * k) as f64,
            Weighting::SampleSize => r.sample_size as f64 / (k as f64 * total_n),
        };
        for f in &r.features {
            items.push(Distribution::Gaussian(f.clone()));
            weights.push(w);
        }
    }
    WeightedDistributionSet::new(items, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateConfig {
    pub alpha: f64,
    pub weighting: Weighting,
    /// Random starts in addition to the unit-provided ones.
    pub random_starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl AggregateConfig {
    pub fn new(alpha: f64) -> Self {
        AggregateConfig {
            alpha,
            weighting: Weighting::Equal,
            random_starts: 0,
            seed: 0,
            max_iterations: crate::kbary::DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn with_random_starts(mut self, n: usize, seed: u64) -> Self {
        self.random_starts = n;
        self.seed = seed;
        self
    }
}

/// Fate of one reported feature in the consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStatus {
    pub unit: usize,
    pub feature: usize,
    pub weight: f64,
    pub kept_mass: f64,
    pub cluster: Option<usize>,
}

impl FeatureStatus {
    /// A partially trimmed feature counts as kept when it retains more than half its weight.
    pub fn is_untrimmed(&self) -> bool {
        self.kept_mass > 0.5 * self.weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub consensus: Vec<GaussianDistribution>,
    pub weights: Vec<f64>,
    pub features: Vec<FeatureStatus>,
    pub objective: f64,
    pub solution: TrimSolution,
}

impl AggregationResult {
    pub fn trimmed(&self) -> impl Iterator<Item = &FeatureStatus> {
        self.features.iter().filter(|f| f.kept_mass < f.weight)
    }
}

/// α-trimmed k-barycenter of all reported features, seeded with every unit's k-set.
pub fn aggregate(reports: &[UnitReport], config: &AggregateConfig) -> Result<AggregationResult> {
    let (k, _) = check_homogeneous(reports)?;
    let set = build_meta_sample(reports, config.weighting)?;
    let starts = reports
        .iter()
        .map(|r| {
            r.features
                .iter()
                .cloned()
                .map(Distribution::Gaussian)
                .collect()
        })
        .collect();
    let solver = SolverConfig::new(k, config.alpha)
        .with_starts(config.random_starts)
        .with_seed(config.seed)
        .with_max_iterations(config.max_iterations)
        .with_explicit_starts(starts);
    let solution = solve_detailed(&set, &solver)?.best;

    let features: Vec<FeatureStatus> = (0..set.len())
        .map(|idx| FeatureStatus {
            unit: idx / k,
            feature: idx % k,
            weight: set.weight(idx),
            kept_mass: solution.kept_mass[idx],
            cluster: solution.assignment[idx],
        })
        .collect();
    let consensus: Vec<GaussianDistribution> = solution
        .centers
        .iter()
        .map(|c| c.as_gaussian().cloned().ok_or(Error::MixedSpaces))
        .collect::<Result<_>>()?;
    let weights = aggregate_weights(reports, &consensus, &features)?;
    Ok(AggregationResult {
        consensus,
        weights,
        objective: solution.objective,
        features,
        solution,
    })
}

/// Aggregated cluster weights.
///
/// Every untrimmed feature is matched to its W2-nearest consensus center;
/// `π*_i` is the mean reported weight over the features matched to center `i`
/// and the result is `π*` renormalized to sum to one.
pub fn aggregate_weights(
    reports: &[UnitReport],
    consensus: &[GaussianDistribution],
    features: &[FeatureStatus],
) -> Result<Vec<f64>> {
    let k = consensus.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for f in features.iter().filter(|f| f.is_untrimmed()) {
        let report = reports.get(f.unit).ok_or_else(|| {
            Error::InvalidReport(format!("feature refers to unknown unit {}", f.unit))
        })?;
        let feature = report.features.get(f.feature).ok_or_else(|| {
            Error::InvalidReport(format!("unit {} has no feature {}", f.unit, f.feature))
        })?;
        let mut best = (f64::INFINITY, 0);
        for (s, c) in consensus.iter().enumerate() {
            let d = crate::wasserstein::w2_sq_gaussian(c, feature)?;
            if d < best.0 {
                best = (d, s);
            }
        }
        sums[best.1] += report.weights[f.feature];
        counts[best.1] += 1;
    }
    if let Some(center) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UndefinedWeight { center });
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let total: f64 = means.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidReport(
            "all matched features report zero weight".into(),
        ));
    }
    Ok(means.iter().map(|m| m / total).collect())
}

/// `min_σ (1/k) Σ_j W2²(A_j, B_σ(j))` over relabelings σ.
pub fn matching_distance_sq(a: &[Distribution], b: &[Distribution]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot match {} against {} distributions",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let k = a.len();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| w2_squared(p, q))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let perm = if k <= EXHAUSTIVE_MATCHING_MAX_K {
        best_permutation(&cost)
    } else {
        min_cost_assignment(&cost)
    };
    Ok(perm
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum::<f64>()
        / k as f64)
}

/// Optimal permutation by enumeration (Heap's algorithm); ties go to the first found.
pub fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best_cost {
                best_cost = t;
                best.clone_from(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(k³)). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    next = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = next;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}

/// Hausdorff distance between finite sets under W2.
pub fn hausdorff_distance(a: &[Distribution], b: &[Distribution]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let directed = |from: &[Distribution], to: &[Distribution]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in from {
            let mut nearest = f64::INFINITY;
            for q in to {
                nearest = nearest.min(w2_distance(p, q)?);
            }
            worst = worst.max(nearest);
        }
        Ok(worst)
    };
    Ok(directed(a, b)?.max(directed(b, a)?))
}

/// Inputs of the aggregation error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub k: usize,
    pub alpha: f64,
    /// Number of units.
    pub m: usize,
    pub eta: f64,
    /// Modulus of continuity of the unit engine at `eta`.
    pub r_eta: f64,
    /// `min_{i≠i'} W2(N_i, N_i')` over the true k-feature.
    pub min_separation: f64,
}

impl BoundParams {
    /// `H = 2 (1 + k √((1 − α) / (1 − (k + 1) α)))`
    pub fn h(&self) -> f64 {
        let k = self.k as f64;
        2.0 * (1.0 + k * ((1.0 - self.alpha) / (1.0 - (k + 1.0) * self.alpha)).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Upper bound on the probability that the consensus misses the truth by more than `radius`.
    pub probability: f64,
    /// `r(η) · H / 2`
    pub radius: f64,
    pub h: f64,
    /// Whether `r(η) < min_separation / H`.
    pub separated: bool,
}

/// `min(1, k · exp(−α² m / 2))`, without the range check on α.
pub fn failure_probability(k: usize, alpha: f64, m: usize) -> f64 {
    (k as f64 * (-alpha * alpha * m as f64 / 2.0).exp()).clamp(0.0, 1.0)
}

/// [`failure_probability`] with the matching deviation radius, for α in `(0, 1/(2k))`.
pub fn failure_bound(params: &BoundParams) -> Result<BoundReport> {
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidBound("k must be at least 1".into()));
    }
    let upper = 1.0 / (2.0 * k as f64);
    if !(params.alpha > 0.0 && params.alpha < upper) {
        return Err(Error::InvalidBound(format!(
            "alpha {} outside (0, {upper})",
            params.alpha
        )));
    }
    let h = params.h();
    let probability = failure_probability(k, params.alpha, params.m);
    Ok(BoundReport {
        probability,
        radius: params.r_eta * h / 2.0,
        h,
        separated: params.r_eta < params.min_separation / h,
    })
}
