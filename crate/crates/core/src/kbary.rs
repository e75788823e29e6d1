//! Weighted trimmed k-barycenters by concentration steps.
//!
//! One run alternates two moves until the trimmed partition is stationary:
//!
//! 1. *Concentration*: every item is assigned to its nearest center (squared
//!    W2), items are ranked by that distance and the nearest mass `1 − α` is
//!    kept. At most one item, the one straddling the `1 − α` boundary, keeps
//!    part of its weight.
//! 2. *Update*: each center becomes the barycenter of its cluster under the
//!    kept masses.
//!
//! Both moves can only lower the trimmed objective
//! `V = (1 / (1 − α)) Σ δ_i min_j W2²(P_i, c_j)`, so a run never revisits a
//! partition. Several starts are run independently and the lowest objective
//! wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::wasserstein::{barycenter, w2_squared, Distribution, WeightedDistributionSet};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_STARTS: usize = 10;

/// Kept masses that differ by less than this are the same trimming.
const KEPT_MASS_TOL: f64 = 1e-14;

const TRIM_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub k: usize,
    pub alpha: f64,
    /// Random starts, run after any explicit ones.
    pub n_starts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub explicit_starts: Vec<Vec<Distribution>>,
}

impl SolverConfig {
    pub fn new(k: usize, alpha: f64) -> Self {
        SolverConfig {
            k,
            alpha,
            n_starts: DEFAULT_STARTS,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
            explicit_starts: Vec::new(),
        }
    }

    pub fn with_starts(mut self, n: usize) -> Self {
        self.n_starts = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_explicit_starts(mut self, starts: Vec<Vec<Distribution>>) -> Self {
        self.explicit_starts = starts;
        self
    }

    fn validate(&self, set: &WeightedDistributionSet) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1)",
                self.alpha
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        if self.n_starts == 0 && self.explicit_starts.is_empty() {
            return Err(Error::InvalidConfig("no starts requested".into()));
        }
        let support = set.support_size();
        if self.k > support {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds the {support} items with positive weight",
                self.k
            )));
        }
        for (s, start) in self.explicit_starts.iter().enumerate() {
            if start.len() != self.k {
                return Err(Error::InvalidConfig(format!(
                    "explicit start {s} has {} centers, expected {}",
                    start.len(),
                    self.k
                )));
            }
            for c in start {
                set.check_member(c)?;
            }
        }
        Ok(())
    }
}

/// All k-subsets of the positively weighted items, in lexicographic order.
pub fn exhaustive_starts(set: &WeightedDistributionSet, k: usize) -> Vec<Vec<Distribution>> {
    let live: Vec<usize> = (0..set.len()).filter(|&i| set.weight(i) > 0.0).collect();
    let mut out = Vec::new();
    if k == 0 || k > live.len() {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| set.item(live[i]).clone()).collect());
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == live.len() - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Kept masses `δ` and the renormalized weights `δ / (1 − α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trimming {
    pub kept: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Keeps the nearest mass `1 − α`.
///
/// Items are ranked by `(distance, index)`. Full weight is kept while the
/// cumulative kept weight stays below `1 − α`; the item that reaches it keeps
/// only `1 − α − Σ_{earlier} w`; everything after it is trimmed.
pub fn trimming_weights(distances: &[f64], weights: &[f64], alpha: f64) -> Result<Trimming> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha {alpha} outside [0, 1)"
        )));
    }
    if distances.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} distances but {} weights",
            distances.len(),
            weights.len()
        )));
    }
    let keep_total = 1.0 - alpha;
    let mut kept = vec![0.0; weights.len()];
    if alpha == 0.0 {
        kept.copy_from_slice(weights);
    } else {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let mut cumulative = 0.0;
        for &i in &order {
            let w = weights[i];
            // Gaps below TRIM_SLACK on either side of the boundary item are rounding.
            if cumulative + w >= keep_total - TRIM_SLACK {
                let rest = keep_total - cumulative;
                kept[i] = if rest >= w - TRIM_SLACK {
                    w
                } else {
                    rest.max(0.0)
                };
                break;
            }
            kept[i] = w;
            cumulative += w;
        }
    }
    let normalized = kept.iter().map(|d| d / keep_total).collect();
    Ok(Trimming { kept, normalized })
}

/// Outcome of one concentration step against fixed centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationStep {
    /// `min_j W2²(P_i, c_j)`
    pub distances: Vec<f64>,
    /// Nearest center for every item, trimmed or not (lowest index on ties).
    pub nearest: Vec<usize>,
    pub kept: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `(1 / (1 − α)) Σ δ_i d_i`
    pub objective: f64,
}

impl ConcentrationStep {
    /// Same kept masses and, for kept items, same cluster.
    fn same_partition(&self, other: &ConcentrationStep) -> bool {
        self.kept
            .iter()
            .zip(&other.kept)
            .enumerate()
            .all(|(i, (a, b))| {
                (a - b).abs() <= KEPT_MASS_TOL && (*a <= 0.0 || self.nearest[i] == other.nearest[i])
            })
    }
}

pub fn concentration_step(
    set: &WeightedDistributionSet,
    centers: &[Distribution],
    alpha: f64,
) -> Result<ConcentrationStep> {
    if centers.is_empty() {
        return Err(Error::InvalidConfig("no centers".into()));
    }
    let mut distances = Vec::with_capacity(set.len());
    let mut nearest = Vec::with_capacity(set.len());
    for p in set.items() {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centers.iter().enumerate() {
            let d = w2_squared(c, p)?;
            if d < best.0 {
                best = (d, j);
            }
        }
        distances.push(best.0);
        nearest.push(best.1);
    }
    let Trimming { kept, normalized } = trimming_weights(&distances, set.weights(), alpha)?;
    let objective = normalized.iter().zip(&distances).map(|(w, d)| w * d).sum();
    Ok(ConcentrationStep {
        distances,
        nearest,
        kept,
        normalized,
        objective,
    })
}

/// Recomputes each center as the barycenter of its kept cluster members.
///
/// A cluster whose kept mass is zero is reseeded at the untrimmed item with
/// the largest distance to its current center (next largest for further
/// empty clusters).
pub fn update_centers(
    set: &WeightedDistributionSet,
    step: &ConcentrationStep,
    k: usize,
) -> Result<Vec<Distribution>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &g) in step.nearest.iter().enumerate() {
        if step.kept[i] > 0.0 {
            members[g].push(i);
        }
    }

    let mut reseeds = {
        let mut candidates: Vec<usize> = (0..set.len()).filter(|&i| step.kept[i] > 0.0).collect();
        candidates.sort_by(|&a, &b| {
            step.distances[b]
                .total_cmp(&step.distances[a])
                .then(a.cmp(&b))
        });
        let mut rest: Vec<usize> = (0..set.len()).filter(|&i| step.kept[i] <= 0.0).collect();
        rest.sort_by(|&a, &b| {
            step.distances[b]
                .total_cmp(&step.distances[a])
                .then(a.cmp(&b))
        });
        candidates.extend(rest);
        candidates.into_iter()
    };

    members
        .iter()
        .map(|cluster| {
            if cluster.is_empty() {
                let i = reseeds.next().ok_or(Error::EmptySet)?;
                return Ok(set.item(i).clone());
            }
            let items: Vec<&Distribution> = cluster.iter().map(|&i| set.item(i)).collect();
            let weights: Vec<f64> = cluster.iter().map(|&i| step.normalized[i]).collect();
            barycenter(&items, &weights)
        })
        .collect()
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The trimmed partition repeated.
    Stationary,
    /// The partition changed without lowering the objective; the earlier state is kept.
    Stalled,
    IterationCap,
}

/// Trajectory of one start.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub start_index: usize,
    pub iterations: usize,
    pub objective: f64,
    pub termination: Termination,
    /// Objective after every concentration step, starting with the initial centers.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimSolution {
    pub k: usize,
    pub alpha: f64,
    pub centers: Vec<Distribution>,
    /// `δ_i ∈ [0, w_i]`, summing to `1 − α`.
    pub kept_mass: Vec<f64>,
    /// Cluster of every item with positive kept mass.
    pub assignment: Vec<Option<usize>>,
    /// `min_j W2²(P_i, c_j)` for every item.
    pub distances: Vec<f64>,
    /// Trimmed k-variation.
    pub objective: f64,
    /// Largest W2 distance to the nearest center among items with kept mass.
    pub trim_radius: f64,
    pub iterations: usize,
    pub start_index: usize,
}

impl TrimSolution {
    fn from_state(
        k: usize,
        alpha: f64,
        centers: Vec<Distribution>,
        step: ConcentrationStep,
        iterations: usize,
        start_index: usize,
    ) -> Self {
        let assignment = step
            .nearest
            .iter()
            .zip(&step.kept)
            .map(|(&g, &d)| (d > 0.0).then_some(g))
            .collect();
        let trim_radius = step
            .distances
            .iter()
            .zip(&step.kept)
            .filter(|(_, &d)| d > 0.0)
            .map(|(x, _)| x.sqrt())
            .fold(0.0, f64::max);
        TrimSolution {
            k,
            alpha,
            centers,
            kept_mass: step.kept,
            assignment,
            distances: step.distances,
            objective: step.objective,
            trim_radius,
            iterations,
            start_index,
        }
    }

    /// Items whose kept mass is below their weight.
    pub fn trimmed_items(&self, set: &WeightedDistributionSet) -> Vec<usize> {
        (0..self.kept_mass.len())
            .filter(|&i| self.kept_mass[i] < set.weight(i))
            .collect()
    }

    /// Items with zero kept mass.
    pub fn fully_trimmed_items(&self) -> Vec<usize> {
        (0..self.kept_mass.len())
            .filter(|&i| self.kept_mass[i] <= 0.0)
            .collect()
    }

    pub fn cluster_members(&self, j: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == Some(j))
            .collect()
    }
}

/// Best solution plus the summary of every start.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub best: TrimSolution,
    pub runs: Vec<RunSummary>,
}

pub fn solve_trimmed_kbarycenter(
    set: &WeightedDistributionSet,
    config: &SolverConfig,
) -> Result<TrimSolution> {
    solve_detailed(set, config).map(|o| o.best)
}

/// Runs every start (explicit ones first, then random ones) in parallel and
/// keeps the lowest objective, ties going to the lower start index. The result
/// does not depend on the thread count.
pub fn solve_detailed(
    set: &WeightedDistributionSet,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    config.validate(set)?;
    let explicit = config.explicit_starts.len();
    let total = explicit + config.n_starts;
    let results: Vec<Result<(TrimSolution, RunSummary)>> = (0..total)
        .into_par_iter()
        .map(|s| {
            let init = if s < explicit {
                config.explicit_starts[s].clone()
            } else {
                random_start(set, config.k, config.seed, (s - explicit) as u64)
            };
            run_from(set, config, init, s)
        })
        .collect();

    let mut best: Option<TrimSolution> = None;
    let mut runs = Vec::with_capacity(total);
    for r in results {
        let (sol, summary) = r?;
        runs.push(summary);
        if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
            best = Some(sol);
        }
    }
    Ok(SolveOutcome {
        best: best.expect("at least one start"),
        runs,
    })
}

/// `k` distinct items drawn with probability proportional to weight, without replacement.
fn random_start(
    set: &WeightedDistributionSet,
    k: usize,
    seed: u64,
    stream: u64,
) -> Vec<Distribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut pool: Vec<(usize, f64)> = set
        .weights()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (pos, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                pick = pos;
                break;
            }
            u -= w;
        }
        chosen.push(pool.remove(pick).0);
    }
    chosen.into_iter().map(|i| set.item(i).clone()).collect()
}

fn run_from(
    set: &WeightedDistributionSet,
    config: &SolverConfig,
    init: Vec<Distribution>,
    start_index: usize,
) -> Result<(TrimSolution, RunSummary)> {
    let k = config.k;
    let mut centers = init;
    let mut step = concentration_step(set, &centers, config.alpha)?;
    let mut history = vec![step.objective];
    let mut termination = Termination::IterationCap;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let next_centers = update_centers(set, &step, k)?;
        let next = concentration_step(set, &next_centers, config.alpha)?;
        history.push(next.objective);
        if next.same_partition(&step) {
            centers = next_centers;
            step = next;
            termination = Termination::Stationary;
            break;
        }
        if next.objective >= step.objective {
            termination = Termination::Stalled;
            break;
        }
        centers = next_centers;
        step = next;
    }

    let solution =
        TrimSolution::from_state(k, config.alpha, centers, step, iterations, start_index);
    let summary = RunSummary {
        start_index,
        iterations,
        objective: solution.objective,
        termination,
        history,
    };
    Ok((solution, summary))
}

/// Trimmed k-variation recomputed from a solution, with its per-cluster split.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationBreakdown {
    pub total: f64,
    pub per_cluster: Vec<f64>,
}

pub fn trimmed_variation(
    set: &WeightedDistributionSet,
    solution: &TrimSolution,
) -> Result<VariationBreakdown> {
    let n = set.len();
    if solution.kept_mass.len() != n || solution.assignment.len() != n {
        return Err(Error::InconsistentSolution(format!(
            "solution describes {} items, set has {n}",
            solution.kept_mass.len()
        )));
    }
    if solution.centers.len() != solution.k {
        return Err(Error::InconsistentSolution(format!(
            "{} centers for k = {}",
            solution.centers.len(),
            solution.k
        )));
    }
    let scale = 1.0 / (1.0 - solution.alpha);
    let mut per_cluster = vec![0.0; solution.k];
    for i in 0..n {
        let kept = solution.kept_mass[i];
        if kept < 0.0 || kept > set.weight(i) * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InconsistentSolution(format!(
                "item {i} keeps {kept} of weight {}",
                set.weight(i)
            )));
        }
        match solution.assignment[i] {
            Some(j) if j < solution.k => {
                per_cluster[j] += scale * kept * w2_squared(set.item(i), &solution.centers[j])?;
            }
            Some(j) => {
                return Err(Error::InconsistentSolution(format!(
                    "item {i} assigned to cluster {j}"
                )));
            }
            None if kept > 0.0 => {
                return Err(Error::InconsistentSolution(format!(
                    "item {i} keeps mass but has no cluster"
                )));
            }
            None => {}
        }
    }
    Ok(VariationBreakdown {
        total: per_cluster.iter().sum(),
        per_cluster,
    })
}
