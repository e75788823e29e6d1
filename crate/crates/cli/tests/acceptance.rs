//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Criteria run one after another so that their wall-clock budgets are
//! measured without competition from each other.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trimbary::aggregate::{
    aggregate, aggregate_weights, build_meta_sample, failure_bound, hausdorff_distance,
    matching_distance_sq, min_cost_assignment, AggregateConfig, BoundParams, FeatureStatus,
    UnitReport, Weighting,
};
use trimbary::datagen::{
    fit_units, simulate_mixture, split_into_units, FitConfig, MixtureSpec, SplitMode,
};
use trimbary::kbary::{exhaustive_starts, solve_detailed, trimmed_variation, Termination};
use trimbary::linalg::{SpdMatrix, SymMatrix};
use trimbary::wasserstein::{
    barycenter_gaussian, barycenter_gaussian_with_report, barycenter_residual,
    generalized_variance, w2_distance, w2_gaussian, w2_quantile, w2_sq_gaussian, Distribution,
    GaussianDistribution, QuantileFunction, WeightedDistributionSet,
};
use trimbary::SolverConfig;
use trimbary_cli::formats::{ProblemFile, ReportFile, SolutionFile};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(started: Instant, budget: Duration) -> Result<(), String> {
    let t = started.elapsed();
    check(t < budget, || {
        format!(
            "took {:.1}s, budget {:.0}s",
            t.as_secs_f64(),
            budget.as_secs_f64()
        )
    })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(mean: Vec<f64>, d: usize, cov: Vec<f64>) -> GaussianDistribution {
    GaussianDistribution::new(
        mean,
        SpdMatrix::new(SymMatrix::new(d, cov).unwrap()).unwrap(),
    )
    .unwrap()
}

fn g1(mean: f64, var: f64) -> GaussianDistribution {
    GaussianDistribution::univariate(mean, var).unwrap()
}

fn point(x: f64) -> Distribution {
    QuantileFunction::point_mass(x, 1).unwrap().into()
}

/// `B Bᵀ + floor · I`
fn random_spd(r: &mut ChaCha8Rng, d: usize, floor: f64) -> Vec<f64> {
    let b: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.5..1.5)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|t| b[i * d + t] * b[j * d + t]).sum::<f64>();
        }
        a[i * d + i] += floor;
    }
    a
}

fn random_gaussian(r: &mut ChaCha8Rng, d: usize) -> GaussianDistribution {
    let mean = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
    gaussian(mean, d, random_spd(r, d, 0.1))
}

fn random_quantile(r: &mut ChaCha8Rng, g: usize) -> QuantileFunction {
    let mut v = r.random_range(-5.0..5.0);
    QuantileFunction::new(
        (0..g)
            .map(|_| {
                v += r.random_range(0.0..0.5);
                v
            })
            .collect(),
    )
    .unwrap()
}

/// Orthogonal matrix (row-major) from Gram-Schmidt on random columns.
fn random_orthogonal(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[i * d + j] = c[i];
        }
    }
    q
}

/// `Q diag(λ) Qᵀ`, symmetrized entrywise.
fn conjugate_diagonal(q: &[f64], lambda: &[f64]) -> Vec<f64> {
    let d = lambda.len();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v: f64 = (0..d)
                .map(|t| q[i * d + t] * lambda[t] * q[j * d + t])
                .sum();
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    a
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m1, s1) = (r.random_range(-5.0..5.0), r.random_range(0.2..3.0));
        let (m2, s2) = (r.random_range(-5.0..5.0), r.random_range(0.2..3.0));
        let closed = w2_gaussian(&g1(m1, s1 * s1), &g1(m2, s2 * s2)).map_err(|e| e.to_string())?;
        let direct = ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt();
        check((closed - direct).abs() < 1e-9, || {
            format!("closed form {closed} vs {direct}")
        })?;
        let qa = QuantileFunction::normal(m1, s1, 10_000).unwrap();
        let qb = QuantileFunction::normal(m2, s2, 10_000).unwrap();
        let grid = w2_quantile(&qa, &qb).map_err(|e| e.to_string())?;
        worst = worst.max((grid - closed).abs());
    }
    check(worst <= 2e-3, || {
        format!("max |gaussian - quantile| = {worst:.3e} > 2e-3")
    })?;
    within_budget(started, Duration::from_secs(10))?;
    Ok(format!(
        "200 pairs, max |gaussian - quantile| = {worst:.2e}"
    ))
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut r = rng(102);

    let bary = barycenter_gaussian(&[&g1(0.0, 1.0), &g1(0.0, 9.0)], &[0.5, 0.5]).unwrap();
    check((bary.cov().matrix().get(0, 0) - 4.0).abs() < 1e-12, || {
        "variances {1, 9} should average to 4".into()
    })?;

    let mut worst_commuting: f64 = 0.0;
    for trial in 0..200 {
        let d = 1 + trial % 6;
        let n = 2 + trial % 4;
        let q = random_orthogonal(&mut r, d);
        let spectra: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(0.1..5.0)).collect())
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let items: Vec<GaussianDistribution> = spectra
            .iter()
            .map(|l| gaussian(vec![0.0; d], d, conjugate_diagonal(&q, l)))
            .collect();
        let refs: Vec<&GaussianDistribution> = items.iter().collect();
        let got =
            barycenter_gaussian(&refs, &weights).map_err(|e| format!("trial {trial}: {e}"))?;
        let root: Vec<f64> = (0..d)
            .map(|t| {
                spectra
                    .iter()
                    .zip(&weights)
                    .map(|(l, w)| w / total * l[t].sqrt())
                    .sum::<f64>()
            })
            .collect();
        let want = conjugate_diagonal(&q, &root.iter().map(|x| x * x).collect::<Vec<_>>());
        worst_commuting = worst_commuting.max(frobenius(got.cov().matrix().as_slice(), &want));
    }
    check(worst_commuting <= 1e-7, || {
        format!("commuting case off by {worst_commuting:.3e}")
    })?;

    let mut worst_residual: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for trial in 0..200 {
        let d = 2 + trial % 5;
        let n = 2 + trial % 5;
        let items: Vec<GaussianDistribution> = (0..n).map(|_| random_gaussian(&mut r, d)).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let refs: Vec<&GaussianDistribution> = items.iter().collect();
        let (bary, report) = barycenter_gaussian_with_report(&refs, &weights)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let scale = 1.0 + bary.cov().matrix().frobenius_norm();
        let residual = barycenter_residual(&refs, &weights, bary.cov()).unwrap();
        check((residual - report.residual).abs() <= 1e-12 * scale, || {
            "reported residual disagrees".into()
        })?;
        worst_residual = worst_residual.max(residual / scale);

        let gv = generalized_variance(&refs, &weights, &bary).unwrap();
        let direct: f64 = items
            .iter()
            .zip(&weights)
            .map(|(g, w)| w / total * w2_sq_gaussian(g, &bary).unwrap())
            .sum();
        worst_identity = worst_identity.max((gv - direct).abs() / direct.abs().max(1e-300));
    }
    check(worst_residual <= 1e-7, || {
        format!("relative residual {worst_residual:.3e} > 1e-7")
    })?;
    check(worst_identity <= 1e-6, || {
        format!("variance identity off by {worst_identity:.3e} relative")
    })?;
    within_budget(started, Duration::from_secs(30))?;
    Ok(format!(
        "commuting error {worst_commuting:.2e}, residual/(1+|S|) {worst_residual:.2e}, variance identity {worst_identity:.2e}"
    ))
}

fn criterion_3() -> Outcome {
    let mut r = rng(103);
    let mut stalled = 0;
    let mut steps = 0;
    for trial in 0..500u64 {
        let n = 8 + r.random_range(0..13);
        let items: Vec<Distribution> = if trial % 2 == 0 {
            let d = 1 + (trial as usize / 2) % 3;
            (0..n).map(|_| random_gaussian(&mut r, d).into()).collect()
        } else {
            (0..n).map(|_| random_quantile(&mut r, 20).into()).collect()
        };
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0)).collect();
        let set = WeightedDistributionSet::new(items, weights).unwrap();
        let k = r.random_range(1..=4);
        let alpha = [0.0, 0.05, 0.1, 0.2, 0.3][r.random_range(0..5)];
        let config = SolverConfig::new(k, alpha).with_starts(1).with_seed(trial);
        let outcome = solve_detailed(&set, &config).map_err(|e| format!("run {trial}: {e}"))?;
        let run = &outcome.runs[0];
        check(run.termination != Termination::IterationCap, || {
            format!("run {trial} hit the iteration cap")
        })?;
        // A stalled run records the rejected step last; the accepted trajectory ends before it.
        let accepted = match run.termination {
            Termination::Stalled => {
                stalled += 1;
                &run.history[..run.history.len() - 1]
            }
            _ => &run.history[..],
        };
        for (i, pair) in accepted.windows(2).enumerate() {
            steps += 1;
            let last = i + 2 == accepted.len();
            let slack = 1e-12 * (1.0 + pair[0].abs());
            check(pair[1] <= pair[0] + slack, || {
                format!("run {trial}: objective rose at step {i}: {:?}", run.history)
            })?;
            let before_stationarity = !(last && run.termination == Termination::Stationary);
            check(!before_stationarity || pair[1] < pair[0], || {
                format!(
                    "run {trial}: no strict decrease at step {i}: {:?}",
                    run.history
                )
            })?;
        }
        let recomputed = trimmed_variation(&set, &outcome.best).unwrap().total;
        check(
            (recomputed - run.objective).abs() <= 1e-9 * (1.0 + recomputed),
            || {
                format!(
                    "run {trial}: objective {} recomputes to {recomputed}",
                    run.objective
                )
            },
        )?;
    }
    Ok(format!(
        "500 runs, {steps} accepted steps, {stalled} stalled, none capped"
    ))
}

/// Minimum over every choice of `drop` trimmed points and every labeling of
/// the rest into at most `k` groups, for equal weights.
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
                if !members.is_empty() {
                    let mean = members.iter().sum::<f64>() / members.len() as f64;
                    total += members.iter().map(|x| w * (x - mean).powi(2)).sum::<f64>();
                }
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

fn exhaustive_objective(
    set: &WeightedDistributionSet,
    k: usize,
    alpha: f64,
) -> Result<f64, String> {
    let config = SolverConfig::new(k, alpha)
        .with_starts(0)
        .with_explicit_starts(exhaustive_starts(set, k));
    solve_detailed(set, &config)
        .map(|o| o.best.objective)
        .map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let mut r = rng(104);
    let mut instances = vec![vec![0.0, 1.0, 10.0]];
    for size in 1..=7 {
        for _ in 0..20 {
            instances.push((0..size).map(|_| r.random_range(-10.0..10.0)).collect());
            // Lattice points produce ties in distances and partitions.
            instances.push(
                (0..size)
                    .map(|_| f64::from(r.random_range(-3..=3)))
                    .collect(),
            );
        }
    }
    let mut solved = 0;
    let mut worst: f64 = 0.0;
    for points in &instances {
        let size = points.len();
        let set =
            WeightedDistributionSet::uniform(points.iter().map(|&x| point(x)).collect()).unwrap();
        for drop in [0, 1] {
            if drop >= size {
                continue;
            }
            for k in 1..=2.min(size - drop) {
                let alpha = drop as f64 / size as f64;
                let got = exhaustive_objective(&set, k, alpha)?;
                let want = brute_force(points, k, drop);
                worst = worst.max((got - want).abs());
                check((got - want).abs() <= 1e-8, || {
                    format!("{points:?} k={k} alpha={alpha}: solver {got}, enumeration {want}")
                })?;
                solved += 1;
            }
        }
    }
    let example = exhaustive_objective(
        &WeightedDistributionSet::uniform(vec![point(0.0), point(1.0), point(10.0)]).unwrap(),
        1,
        1.0 / 3.0,
    )?;
    check((example - 0.25).abs() < 1e-12, || {
        format!("{{0, 1, 10}}, k=1, alpha=1/3 gave {example}")
    })?;
    within_budget(started, Duration::from_secs(60))?;
    Ok(format!(
        "{solved} (instance, k, alpha) cases, max deviation {worst:.1e}"
    ))
}

fn criterion_5() -> Outcome {
    let mut r = rng(105);
    let mut comparisons = 0;
    for instance in 0..100 {
        let set = if instance % 2 == 0 {
            let size = 5 + instance % 3;
            WeightedDistributionSet::uniform(
                (0..size)
                    .map(|_| point(r.random_range(-10.0..10.0)))
                    .collect(),
            )
        } else {
            WeightedDistributionSet::uniform(
                (0..6).map(|_| random_gaussian(&mut r, 2).into()).collect(),
            )
        }
        .unwrap();
        let size = set.len();
        let alphas: Vec<f64> = (0..=2).map(|t| t as f64 / size as f64).collect();
        let mut table = vec![vec![0.0; alphas.len()]; 3];
        for k in 1..=3 {
            for (a, &alpha) in alphas.iter().enumerate() {
                table[k - 1][a] = exhaustive_objective(&set, k, alpha)?;
            }
        }
        for k in 0..3 {
            for a in 0..alphas.len() {
                if a > 0 {
                    comparisons += 1;
                    check(table[k][a] <= table[k][a - 1] + 1e-9, || {
                        format!(
                            "instance {instance}: V rises in alpha at k={}: {:?}",
                            k + 1,
                            table[k]
                        )
                    })?;
                }
                if k > 0 {
                    comparisons += 1;
                    check(table[k][a] <= table[k - 1][a] + 1e-9, || {
                        format!(
                            "instance {instance}: V rises in k at alpha={}: {table:?}",
                            alphas[a]
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!("100 instances, {comparisons} comparisons"))
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let spec = MixtureSpec::reference_five(0);
    let truth: Vec<Distribution> = spec.truth().into_iter().map(Into::into).collect();
    let mut passed = 0;
    let mut lines = Vec::new();
    for replica in 0..10u64 {
        let data = simulate_mixture(&spec, 200_000, 6000 + replica).map_err(|e| e.to_string())?;
        let shards = split_into_units(&data, 20, SplitMode::Partition, replica)
            .map_err(|e| e.to_string())?;
        let reports = fit_units(&shards, &FitConfig::new(5, 0.05).with_seed(100 * replica))
            .map_err(|e| e.to_string())?;
        let result = aggregate(&reports, &AggregateConfig::new(0.1)).map_err(|e| e.to_string())?;
        let consensus: Vec<Distribution> =
            result.consensus.iter().cloned().map(Into::into).collect();
        let d2 = matching_distance_sq(&consensus, &truth).unwrap();
        let cost: Vec<Vec<f64>> = truth
            .iter()
            .map(|t| {
                consensus
                    .iter()
                    .map(|c| w2_distance(t, c).unwrap())
                    .collect()
            })
            .collect();
        let perm = min_cost_assignment(
            &cost
                .iter()
                .map(|row| row.iter().map(|x| x * x).collect())
                .collect::<Vec<_>>(),
        );
        let worst = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| cost[i][j])
            .fold(0.0, f64::max);
        let ok = d2 <= 0.5 && worst <= 0.5;
        passed += usize::from(ok);
        lines.push(format!(
            "D2={d2:.4}/W2max={worst:.3}{}",
            if ok { "" } else { "(x)" }
        ));
    }
    let summary = format!(
        "{passed}/10 replicas within tolerance [{}]",
        lines.join(", ")
    );
    check(passed >= 9, || summary.clone())?;
    within_budget(started, Duration::from_secs(300))?;
    Ok(summary)
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let (k, alpha, m, replicas) = (3usize, 0.1, 200usize, 500usize);
    let truth = [g1(0.0, 1.0), g1(10.0, 1.0), g1(20.0, 1.0)];
    let truth_d: Vec<Distribution> = truth.iter().cloned().map(Into::into).collect();
    // Clean features move by at most 0.3 in mean and 0.3 in standard deviation,
    // so their W2 displacement stays below r = 0.5; a unit is corrupted with
    // probability 0.04 < alpha / 2.
    let (r_eta, corrupt_p, jitter) = (0.5, 0.04, 0.3);
    let bound = failure_bound(&BoundParams {
        k,
        alpha,
        m,
        eta: corrupt_p,
        r_eta,
        min_separation: 10.0,
    })
    .map_err(|e| e.to_string())?;
    check(bound.separated, || {
        format!("r = {r_eta} not below separation / H = {}", 10.0 / bound.h)
    })?;

    let mut r = rng(107);
    let mut failures = 0usize;
    let mut worst: f64 = 0.0;
    for replica in 0..replicas {
        let reports: Vec<UnitReport> = (0..m)
            .map(|j| {
                let features: Vec<GaussianDistribution> = if r.random_bool(corrupt_p) {
                    (0..k)
                        .map(|_| g1(r.random_range(-50.0..70.0), r.random_range(0.5..20.0)))
                        .collect()
                } else {
                    truth
                        .iter()
                        .map(|t| {
                            let sd = 1.0 + r.random_range(-jitter..jitter);
                            g1(t.mean()[0] + r.random_range(-jitter..jitter), sd * sd)
                        })
                        .collect()
                };
                UnitReport::new(format!("u{j}"), features, vec![1.0 / 3.0; 3], 100).unwrap()
            })
            .collect();
        let result = aggregate(&reports, &AggregateConfig::new(alpha))
            .map_err(|e| format!("replica {replica}: {e}"))?;
        let consensus: Vec<Distribution> =
            result.consensus.iter().cloned().map(Into::into).collect();
        let dh = hausdorff_distance(&consensus, &truth_d).unwrap();
        worst = worst.max(dh);
        failures += usize::from(dh > bound.radius);
    }
    let freq = failures as f64 / replicas as f64;
    let se = (freq * (1.0 - freq) / replicas as f64).sqrt();
    check(freq <= bound.probability + 3.0 * se, || {
        format!(
            "failure frequency {freq} exceeds bound {} + 3 SE",
            bound.probability
        )
    })?;
    within_budget(started, Duration::from_secs(120))?;
    Ok(format!(
        "{failures}/{replicas} replicas beyond r H/2 = {:.3} (max d_H {worst:.3}); bound k e^(-a^2 m/2) = {:.3}",
        bound.radius, bound.probability
    ))
}

fn criterion_8() -> Outcome {
    let features = vec![g1(0.0, 1.0), g1(10.0, 1.0)];
    let reports = vec![
        UnitReport::new("a", features.clone(), vec![0.3, 0.7], 100).unwrap(),
        UnitReport::new("b", features.clone(), vec![0.5, 0.5], 300).unwrap(),
    ];
    let status = |unit: usize, feature: usize, kept: bool| FeatureStatus {
        unit,
        feature,
        weight: reports[unit].weights[feature] / 2.0,
        kept_mass: if kept {
            reports[unit].weights[feature] / 2.0
        } else {
            0.0
        },
        cluster: kept.then_some(feature),
    };
    let all_kept = vec![
        status(0, 0, true),
        status(0, 1, true),
        status(1, 0, true),
        status(1, 1, true),
    ];
    let w = aggregate_weights(&reports, &features, &all_kept).map_err(|e| e.to_string())?;
    check(
        (w[0] - 0.4).abs() < 1e-15 && (w[1] - 0.6).abs() < 1e-15,
        || format!("no trimming: {w:?}"),
    )?;

    let one_trimmed = vec![
        status(0, 0, true),
        status(0, 1, true),
        status(1, 0, false),
        status(1, 1, true),
    ];
    let w = aggregate_weights(&reports, &features, &one_trimmed).map_err(|e| e.to_string())?;
    check(
        (w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15,
        || format!("one trimmed: {w:?}"),
    )?;

    // Same fixtures with the units listed in the opposite order.
    let swapped: Vec<UnitReport> = reports.iter().rev().cloned().collect();
    let relabel = |s: &FeatureStatus| FeatureStatus {
        unit: 1 - s.unit,
        ..s.clone()
    };
    for (statuses, want) in [
        (&all_kept, [0.4, 0.6]),
        (&one_trimmed, [1.0 / 3.0, 2.0 / 3.0]),
    ] {
        let moved: Vec<FeatureStatus> = statuses.iter().rev().map(relabel).collect();
        let w = aggregate_weights(&swapped, &features, &moved).map_err(|e| e.to_string())?;
        check(
            (w[0] - want[0]).abs() < 1e-15 && (w[1] - want[1]).abs() < 1e-15,
            || format!("swapped units: {w:?}"),
        )?;
    }

    let sized = vec![
        UnitReport::new("a", vec![g1(0.0, 1.0)], vec![1.0], 100).unwrap(),
        UnitReport::new("b", vec![g1(1.0, 1.0)], vec![1.0], 300).unwrap(),
    ];
    let meta = build_meta_sample(&sized, Weighting::SampleSize).unwrap();
    check(meta.weights() == [0.25, 0.75], || {
        format!("sample-size weights {:?}", meta.weights())
    })?;

    // End to end: shuffling units leaves the aggregated weights unchanged.
    let mut r = rng(108);
    let centers = [0.0, 8.0, 16.0];
    let units: Vec<UnitReport> = (0..12)
        .map(|j| {
            let f: Vec<GaussianDistribution> = centers
                .iter()
                .map(|c| g1(c + r.random_range(-0.5..0.5), r.random_range(0.5..2.0)))
                .collect();
            let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            UnitReport::new(
                format!("u{j}"),
                f,
                raw.iter().map(|x| x / total).collect(),
                50,
            )
            .unwrap()
        })
        .collect();
    let base = aggregate(&units, &AggregateConfig::new(1.0 / 12.0)).map_err(|e| e.to_string())?;
    let mut shuffled = units.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let other =
        aggregate(&shuffled, &AggregateConfig::new(1.0 / 12.0)).map_err(|e| e.to_string())?;
    for (i, c) in base.consensus.iter().enumerate() {
        let j = other
            .consensus
            .iter()
            .position(|o| w2_gaussian(o, c).unwrap() < 1e-9);
        let Some(j) = j else {
            return Err("consensus changed under unit permutation".into());
        };
        check((base.weights[i] - other.weights[j]).abs() < 1e-12, || {
            "weights changed under unit permutation".into()
        })?;
    }
    Ok("both fixtures exact, sample-size weights exact, unit order irrelevant".into())
}

fn trimbary_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trimbary"))
}

fn run_cli(args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = trimbary_bin()
        .args(args)
        .env("OT_TRIMBARY_THREADS", threads)
        .output()
        .map_err(|e| format!("cannot start trimbary: {e}"))?;
    check(out.status.success(), || {
        format!(
            "trimbary {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(out.stdout)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn criterion_9() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(109);
    let profiles = [(0.0, 1.0), (6.0, 0.5), (12.0, 1.5), (18.0, 1.0)];
    let sizes = [9, 9, 8, 8];
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (g, &size) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(Some(g), size));
    }
    labels.extend([None, None]);
    // Interleave so that item order carries no information.
    for i in (1..labels.len()).rev() {
        let j = r.random_range(0..=i);
        labels.swap(i, j);
    }
    let grid = 100;
    let items: Vec<Distribution> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let q = match label {
                Some(g) => {
                    let (mu, sd) = profiles[*g];
                    QuantileFunction::normal(
                        mu + r.random_range(-0.4..0.4),
                        sd * r.random_range(0.9..1.1),
                        grid,
                    )
                }
                // One far-off shift and one much wider spread.
                None if labels[..i].contains(&None) => QuantileFunction::normal(30.0, 1.0, grid),
                None => QuantileFunction::normal(9.0, 8.0, grid),
            };
            q.unwrap().into()
        })
        .collect();
    let outliers: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    let problem = dir.path().join("profiles.json");
    let file = ProblemFile::from_distributions(&items, None).map_err(|e| e.to_string())?;
    std::fs::write(&problem, serde_json::to_string(&file).unwrap()).map_err(|e| e.to_string())?;

    let table = dir.path().join("sweep.csv");
    let counts = dir.path().join("counts.csv");
    let p = path_str(&problem);
    run_cli(
        &[
            "sweep",
            "--input",
            p,
            "--k-range",
            "2..6",
            "--alpha-range",
            "0..6/36",
            "--starts",
            "40",
            "--seed",
            "9",
            "--out",
            path_str(&table),
            "--trim-counts",
            path_str(&counts),
        ],
        "0",
    )?;
    let mut reader = csv::Reader::from_path(&counts).map_err(|e| e.to_string())?;
    let mut tally: Vec<(usize, usize, f64)> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        tally.push((
            row[0].parse().unwrap(),
            row[1].parse().unwrap(),
            row[2].parse().unwrap(),
        ));
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)));
    let top: Vec<usize> = tally[..2].iter().map(|t| t.0).collect();
    let runner_up = tally[2].1;
    check(
        top.iter().all(|i| outliers.contains(i)) && tally[1].1 > runner_up,
        || {
            format!(
                "most trimmed items {:?}, planted outliers {outliers:?}",
                &tally[..4]
            )
        },
    )?;

    let solution_path = dir.path().join("k4.json");
    run_cli(
        &[
            "kbary",
            "--input",
            p,
            "--k",
            "4",
            "--alpha",
            "2/36",
            "--starts",
            "40",
            "--seed",
            "9",
            "--out",
            path_str(&solution_path),
        ],
        "0",
    )?;
    let solution: SolutionFile =
        serde_json::from_str(&std::fs::read_to_string(&solution_path).unwrap())
            .map_err(|e| e.to_string())?;
    let mut relabel: [Option<usize>; 4] = [None; 4];
    for (i, (item, planted)) in solution.items.iter().zip(&labels).enumerate() {
        let consistent = match (item.cluster, planted) {
            (None, None) => true,
            (Some(c), Some(g)) => *relabel[*g].get_or_insert(c) == c,
            _ => false,
        };
        check(consistent, || {
            format!(
                "item {i}: planted {planted:?}, recovered {:?}",
                item.cluster
            )
        })?;
    }
    let mut used: Vec<usize> = relabel.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    check(used.len() == 4, || {
        "two planted groups share a cluster".into()
    })?;
    within_budget(started, Duration::from_secs(30))?;
    Ok(format!(
        "outliers {outliers:?} trimmed {} and {} times of 35 (next most trimmed item: {runner_up} times); k=4, alpha=2/36 partition exact",
        tally[0].1, tally[1].1
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let at = |name: &str| -> PathBuf { dir.path().join(name) };
    let mut r = rng(110);
    let gaussians: Vec<Distribution> = (0..14).map(|_| random_gaussian(&mut r, 2).into()).collect();
    let problem = at("problem.json");
    std::fs::write(
        &problem,
        serde_json::to_string(&ProblemFile::from_distributions(&gaussians, None).unwrap()).unwrap(),
    )
    .unwrap();
    let single_a = at("a.json");
    let single_b = at("b.json");
    for (path, g) in [(&single_a, &gaussians[0]), (&single_b, &gaussians[1])] {
        let file = ProblemFile::from_distributions(std::slice::from_ref(g), None).unwrap();
        std::fs::write(path, serde_json::to_string(&file).unwrap()).unwrap();
    }
    let sample = at("sample.csv");
    std::fs::write(
        &sample,
        run_cli(
            &[
                "simulate",
                "--n",
                "3000",
                "--seed",
                "4",
                "--extra-dims",
                "1",
            ],
            "1",
        )?,
    )
    .map_err(|e| e.to_string())?;
    let reports = at("reports.json");
    std::fs::write(
        &reports,
        run_cli(
            &[
                "fit-units",
                "--data",
                path_str(&sample),
                "--units",
                "4",
                "--k",
                "3",
                "--seed",
                "2",
            ],
            "1",
        )?,
    )
    .map_err(|e| e.to_string())?;
    let parsed: ReportFile =
        serde_json::from_slice(&std::fs::read(&reports).unwrap()).map_err(|e| e.to_string())?;
    check(parsed.units.len() == 4, || {
        "fit-units wrote the wrong number of units".into()
    })?;

    let (p, s, rep) = (path_str(&problem), path_str(&sample), path_str(&reports));
    let commands: Vec<Vec<&str>> = vec![
        vec!["dist", path_str(&single_a), path_str(&single_b)],
        vec!["barycenter", "--input", p],
        vec![
            "kbary", "--input", p, "--k", "3", "--alpha", "0.1", "--starts", "12", "--seed", "5",
        ],
        vec![
            "kbary",
            "--input",
            p,
            "--k",
            "2",
            "--alpha",
            "0.15",
            "--exhaustive",
            "--starts",
            "0",
        ],
        vec![
            "aggregate",
            "--reports",
            rep,
            "--k",
            "3",
            "--alpha",
            "0.1",
            "--starts",
            "5",
            "--seed",
            "3",
        ],
        vec![
            "aggregate",
            "--reports",
            rep,
            "--k",
            "3",
            "--alpha",
            "0.25",
            "--weighting",
            "sample-size",
        ],
        vec!["simulate", "--n", "500", "--seed", "8"],
        vec![
            "fit-units",
            "--data",
            s,
            "--units",
            "3",
            "--k",
            "3",
            "--seed",
            "1",
        ],
        vec![
            "fit-units",
            "--data",
            s,
            "--units",
            "3",
            "--mode",
            "bootstrap",
            "--shard-size",
            "700",
            "--k",
            "2",
        ],
        vec![
            "fit-units",
            "--data",
            s,
            "--units",
            "2",
            "--mode",
            "subsample",
            "--shard-size",
            "900",
            "--k",
            "3",
        ],
        vec![
            "sweep",
            "--input",
            p,
            "--k-range",
            "1..3",
            "--alpha-range",
            "0,1/14,0.2",
            "--starts",
            "6",
        ],
    ];
    for args in &commands {
        let reference = run_cli(args, "1")?;
        check(!reference.is_empty(), || {
            format!("{} printed nothing", args[0])
        })?;
        for threads in ["1", "4", "0"] {
            let again = run_cli(args, threads)?;
            check(again == reference, || {
                format!("trimbary {} differs with {threads} threads", args.join(" "))
            })?;
        }
    }
    // Outputs written to files match the stdout bytes.
    let out = at("sweep.csv");
    let mut args = commands[10].clone();
    args.extend(["--out", path_str(&out)]);
    run_cli(&args, "4")?;
    check(
        std::fs::read(&out).unwrap() == run_cli(&commands[10], "2")?,
        || "--out bytes differ from stdout".into(),
    )?;
    Ok(format!(
        "{} commands byte-identical under 1, 4 and automatic thread counts",
        commands.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Gaussian vs quantile W2", criterion_1),
        ("barycenter fixed point", criterion_2),
        ("descent and termination", criterion_3),
        ("brute-force global optimum", criterion_4),
        ("monotonicity in alpha and k", criterion_5),
        ("aggregation robustness", criterion_6),
        ("deviation bound Monte Carlo", criterion_7),
        ("weight aggregation", criterion_8),
        ("profile sweep with outliers", criterion_9),
        ("CLI determinism", criterion_10),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
