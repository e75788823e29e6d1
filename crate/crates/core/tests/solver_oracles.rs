mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use trimbary::kbary::{exhaustive_starts, solve_detailed, trimmed_variation, Termination};
use trimbary::linalg::{SpdMatrix, SymMatrix};
use trimbary::wasserstein::{
    barycenter_gaussian, barycenter_quantile, Distribution, GaussianDistribution, QuantileFunction,
    WeightedDistributionSet,
};
use trimbary::SolverConfig;

/// `Σ w_i W2²(P_i, q)` with the set's normalized weights.
fn cost(set: &WeightedDistributionSet, q: &Distribution) -> f64 {
    set.weighted_cost(q).unwrap()
}

#[test]
fn gaussian_barycenter_beats_perturbations() {
    let mut r = rng(21);
    for trial in 0..40 {
        let d = 1 + trial % 4;
        let n = 2 + trial % 4;
        let items: Vec<GaussianDistribution> = (0..n).map(|_| random_gaussian(&mut r, d)).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let refs: Vec<&GaussianDistribution> = items.iter().collect();
        let bary = barycenter_gaussian(&refs, &weights).unwrap();
        let set = WeightedDistributionSet::new(
            items.iter().cloned().map(Into::into).collect(),
            weights.clone(),
        )
        .unwrap();
        let best = cost(&set, &bary.clone().into());
        for _ in 0..25 {
            let eps = 0.05;
            let mean: Vec<f64> = bary
                .mean()
                .iter()
                .map(|m| m + r.random_range(-eps..eps))
                .collect();
            let mut cov = bary.cov().matrix().as_slice().to_vec();
            for i in 0..d {
                for j in i..d {
                    let delta = r.random_range(-eps..eps);
                    cov[i * d + j] += delta;
                    if i != j {
                        cov[j * d + i] += delta;
                    }
                }
            }
            let Ok(spd) = SpdMatrix::new_strict(SymMatrix::new(d, cov).unwrap()) else {
                continue;
            };
            let candidate = GaussianDistribution::new(mean, spd).unwrap();
            assert!(
                best <= cost(&set, &candidate.into()) + 1e-9,
                "trial {trial}"
            );
        }
    }
}

#[test]
fn quantile_barycenter_beats_random_candidates() {
    let mut r = rng(22);
    for _ in 0..20 {
        let g = 50;
        let items: Vec<QuantileFunction> = (0..5).map(|_| random_quantile(&mut r, g)).collect();
        let weights: Vec<f64> = (0..5).map(|_| r.random_range(0.1..1.0)).collect();
        let refs: Vec<&QuantileFunction> = items.iter().collect();
        let bary = barycenter_quantile(&refs, &weights).unwrap();
        let set = WeightedDistributionSet::new(
            items.iter().cloned().map(Into::into).collect(),
            weights.clone(),
        )
        .unwrap();
        let best = cost(&set, &bary.clone().into());
        for _ in 0..100 {
            let candidate = random_quantile(&mut r, g);
            assert!(best <= cost(&set, &candidate.into()));
            let mut jitter = bary.values().to_vec();
            let bump = r.random_range(-0.1..0.1);
            jitter.iter_mut().for_each(|v| *v += bump);
            assert!(best <= cost(&set, &QuantileFunction::new(jitter).unwrap().into()) + 1e-12);
        }
    }
}

/// Minimum over all ways to drop `drop` items and split the rest into at
/// most `k` groups of `(1/(1−α)) Σ w (x − group mean)²`, for equal weights.
fn brute_force(points: &[f64], k: usize, drop: usize) -> f64 {
    let r = points.len();
    let w = 1.0 / r as f64;
    let alpha = drop as f64 / r as f64;
    let mut best = f64::INFINITY;
    for trim_mask in 0u32..(1 << r) {
        if trim_mask.count_ones() as usize != drop {
            continue;
        }
        let kept: Vec<f64> = (0..r)
            .filter(|i| trim_mask & (1 << i) == 0)
            .map(|i| points[i])
            .collect();
        let mut labels = vec![0usize; kept.len()];
        loop {
            let mut total = 0.0;
            for g in 0..k {
                let members: Vec<f64> = kept
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| **l == g)
                    .map(|(x, _)| *x)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                total += members.iter().map(|x| w * (x - mean).powi(2)).sum::<f64>();
            }
            best = best.min(total / (1.0 - alpha));
            let mut pos = 0;
            while pos < labels.len() && labels[pos] == k - 1 {
                labels[pos] = 0;
                pos += 1;
            }
            if pos == labels.len() {
                break;
            }
            labels[pos] += 1;
        }
    }
    best
}

fn solve_exhaustive(set: &WeightedDistributionSet, k: usize, alpha: f64) -> f64 {
    let config = SolverConfig::new(k, alpha)
        .with_starts(0)
        .with_explicit_starts(exhaustive_starts(set, k));
    solve_detailed(set, &config).unwrap().best.objective
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 120, ..ProptestConfig::default() })]

    #[test]
    fn exhaustive_starts_find_the_global_optimum(seed in any::<u64>(), r in 2usize..=6, k in 1usize..=2, trim in any::<bool>()) {
        let mut g = rng(seed);
        let points: Vec<f64> = (0..r).map(|_| g.random_range(-10.0..10.0)).collect();
        let set = WeightedDistributionSet::uniform(points.iter().map(|&x| point(x)).collect()).unwrap();
        let drop = usize::from(trim);
        let alpha = drop as f64 / r as f64;
        let k = k.min(r - drop);
        let got = solve_exhaustive(&set, k, alpha);
        let want = brute_force(&points, k, drop);
        prop_assert!((got - want).abs() <= 1e-8, "solver {got} brute force {want} on {points:?}");
    }

    #[test]
    fn variation_is_monotone(seed in any::<u64>(), r in 4usize..=6) {
        let mut g = rng(seed);
        let points: Vec<f64> = (0..r).map(|_| g.random_range(-10.0..10.0)).collect();
        let set = WeightedDistributionSet::uniform(points.iter().map(|&x| point(x)).collect()).unwrap();
        for k in 1..=2 {
            let mut previous = f64::INFINITY;
            for drop in 0..=2 {
                let v = solve_exhaustive(&set, k, drop as f64 / r as f64);
                prop_assert!(v <= previous + 1e-9);
                previous = v;
            }
        }
        for drop in 0..=1 {
            let alpha = drop as f64 / r as f64;
            let v1 = solve_exhaustive(&set, 1, alpha);
            let v2 = solve_exhaustive(&set, 2, alpha);
            let v3 = solve_exhaustive(&set, 3, alpha);
            prop_assert!(v2 <= v1 + 1e-9 && v3 <= v2 + 1e-9);
        }
    }
}

#[test]
fn runs_descend_and_stop_before_the_cap() {
    let mut r = rng(23);
    for trial in 0..60u64 {
        let n = 8 + (trial as usize % 8);
        let items: Vec<Distribution> = if trial % 2 == 0 {
            (0..n).map(|_| random_gaussian(&mut r, 2).into()).collect()
        } else {
            (0..n).map(|_| random_quantile(&mut r, 20).into()).collect()
        };
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0)).collect();
        let set = WeightedDistributionSet::new(items, weights).unwrap();
        let config =
            SolverConfig::new(1 + trial as usize % 3, [0.0, 0.1, 0.25][trial as usize % 3])
                .with_starts(4)
                .with_seed(trial);
        let outcome = solve_detailed(&set, &config).unwrap();
        for run in &outcome.runs {
            assert_ne!(run.termination, Termination::IterationCap);
            for pair in run.history.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12 * (1.0 + pair[0]),
                    "history {:?}",
                    run.history
                );
            }
        }
        let breakdown = trimmed_variation(&set, &outcome.best).unwrap();
        assert!((breakdown.total - outcome.best.objective).abs() <= 1e-9 * (1.0 + breakdown.total));
        assert!(
            (breakdown.per_cluster.iter().sum::<f64>() - breakdown.total).abs()
                <= 1e-9 * (1.0 + breakdown.total)
        );
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let mut r = rng(24);
    let items: Vec<Distribution> = (0..12).map(|_| random_gaussian(&mut r, 2).into()).collect();
    let set = WeightedDistributionSet::uniform(items).unwrap();
    let config = SolverConfig::new(3, 0.1).with_starts(6).with_seed(7);
    let a = solve_detailed(&set, &config).unwrap();
    let b = solve_detailed(&set, &config).unwrap();
    assert_eq!(a, b);
}
