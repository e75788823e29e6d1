//! Subcommand implementations.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use trimbary::aggregate::{aggregate, matching_distance_sq, AggregateConfig};
use trimbary::datagen::{
    fit_units, simulate_mixture, split_into_units, FitConfig, MixtureSpec, SplitMode,
    DEFAULT_FIT_STARTS,
};
use trimbary::kbary::{
    exhaustive_starts, solve_detailed, trimmed_variation, DEFAULT_MAX_ITERATIONS, DEFAULT_STARTS,
};
use trimbary::wasserstein::{barycenter, w2_distance, Distribution};
use trimbary::SolverConfig;

use crate::formats::*;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the W2 distance between the single distributions of two problem files.
    Dist(DistArgs),
    /// Write the weighted barycenter of a problem file as a one-item problem file.
    Barycenter(BarycenterArgs),
    /// Solve the trimmed k-barycenter problem.
    Kbary(KbaryArgs),
    /// Robust consensus of unit reports.
    Aggregate(AggregateArgs),
    /// Simulate a Gaussian mixture sample as CSV.
    Simulate(SimulateArgs),
    /// Split a CSV sample into units and fit k Gaussian clusters on each.
    FitUnits(FitUnitsArgs),
    /// Trimmed k-barycenters over a grid of k and alpha values, as CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DistArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct BarycenterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Random starts (in addition to exhaustive ones).
    #[arg(long, default_value_t = DEFAULT_STARTS)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    /// Also start from every k-subset of the items.
    #[arg(long)]
    pub exhaustive: bool,
}

#[derive(Debug, Args)]
pub struct KbaryArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Trimming level in [0, 1), as a decimal or a fraction such as `2/36`.
    #[arg(long, value_parser = parse_fraction)]
    pub alpha: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Trimming level in [0, 1), as a decimal or a fraction such as `2/36`.
    #[arg(long, value_parser = parse_fraction)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = WeightingTag::Equal)]
    pub weighting: WeightingTag,
    /// Random starts in addition to the units' own k-sets.
    #[arg(long, default_value_t = 0)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Five bivariate components with 2% background noise.
    Reference,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Model::Reference)]
    pub model: Model,
    #[arg(long)]
    pub n: usize,
    /// Independent standard normal coordinates appended to every row.
    #[arg(long, default_value_t = 0)]
    pub extra_dims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitTag {
    Partition,
    Subsample,
    Bootstrap,
}

#[derive(Debug, Args)]
pub struct FitUnitsArgs {
    /// Sample CSV; a `source` column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub units: usize,
    #[arg(long, value_enum, default_value_t = SplitTag::Partition)]
    pub mode: SplitTag,
    /// Rows per unit for subsample and bootstrap.
    #[arg(long)]
    pub shard_size: Option<usize>,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_FIT_STARTS)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Inclusive range such as `2..6`, or a comma list.
    #[arg(long)]
    pub k_range: String,
    /// `a..b/d` for a/d, (a+1)/d, ..., b/d, or a comma list of fractions or decimals.
    #[arg(long)]
    pub alpha_range: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-item trim counts over the whole grid.
    #[arg(long)]
    pub trim_counts: Option<PathBuf>,
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Dist(a) => cmd_dist(a),
        Command::Barycenter(a) => cmd_barycenter(a),
        Command::Kbary(a) => cmd_kbary(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::FitUnits(a) => cmd_fit_units(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// `%g`-style rendering with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!(
            "{mantissa}e{}{:02}",
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        );
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn cmd_dist(args: &DistArgs) -> Result<()> {
    let a = read_json::<ProblemFile>(&args.a)?
        .single()
        .with_context(|| args.a.display().to_string())?;
    let b = read_json::<ProblemFile>(&args.b)?
        .single()
        .with_context(|| args.b.display().to_string())?;
    let d = w2_distance(&a, &b)?;
    emit(None, &format!("{}\n", format_significant(d, 12)))
}

fn cmd_barycenter(args: &BarycenterArgs) -> Result<()> {
    let set = read_json::<ProblemFile>(&args.input)?.to_set()?;
    let refs: Vec<&Distribution> = set.items().iter().collect();
    let bary = barycenter(&refs, set.weights())?;
    emit(
        args.out.as_deref(),
        &to_json(&ProblemFile::from_distributions(&[bary], None)?)?,
    )
}

fn solver_config(
    set: &trimbary::WeightedDistributionSet,
    k: usize,
    alpha: f64,
    s: &SolverArgs,
) -> SolverConfig {
    let mut config = SolverConfig::new(k, alpha)
        .with_starts(s.starts)
        .with_seed(s.seed)
        .with_max_iterations(s.max_iterations);
    if s.exhaustive {
        config = config.with_explicit_starts(exhaustive_starts(set, k));
    }
    config
}

fn cmd_kbary(args: &KbaryArgs) -> Result<()> {
    let set = read_json::<ProblemFile>(&args.input)?.to_set()?;
    let outcome = solve_detailed(&set, &solver_config(&set, args.k, args.alpha, &args.solver))?;
    let breakdown = trimmed_variation(&set, &outcome.best)?;
    let file = SolutionFile::new(&set, &outcome.best, &breakdown, &outcome.runs);
    emit(args.out.as_deref(), &to_json(&file)?)
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<()> {
    let reports = read_json::<ReportFile>(&args.reports)?.to_reports()?;
    if let Some(r) = reports.iter().find(|r| r.k() != args.k) {
        bail!(
            "unit {} reports {} features but --k is {}",
            r.unit_id,
            r.k(),
            args.k
        );
    }
    let mut config = AggregateConfig::new(args.alpha).with_weighting(args.weighting.into());
    config = config.with_random_starts(args.starts, args.seed);
    let result = aggregate(&reports, &config)?;
    emit(
        args.out.as_deref(),
        &to_json(&AggregationFile::new(
            &reports,
            &result,
            args.alpha,
            args.weighting,
        ))?,
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = match args.model {
        Model::Reference => MixtureSpec::reference_five(args.extra_dims),
    };
    let sample = simulate_mixture(&spec, args.n, args.seed)?;
    emit(args.out.as_deref(), &sample_to_csv(&sample)?)
}

fn cmd_fit_units(args: &FitUnitsArgs) -> Result<()> {
    let data = read_sample_csv(&args.data)?;
    let mode = match (args.mode, args.shard_size) {
        (SplitTag::Partition, None) => SplitMode::Partition,
        (SplitTag::Partition, Some(_)) => bail!("--shard-size does not apply to partition mode"),
        (SplitTag::Subsample, Some(s)) => SplitMode::Subsample(s),
        (SplitTag::Bootstrap, Some(s)) => SplitMode::Bootstrap(s),
        (_, None) => bail!("--shard-size is required for subsample and bootstrap modes"),
    };
    let shards = split_into_units(&data, args.units, mode, args.seed)?;
    let config = FitConfig::new(args.k, args.gamma)
        .with_starts(args.starts)
        .with_seed(args.seed);
    let reports = fit_units(&shards, &config)?;
    emit(
        args.out.as_deref(),
        &to_json(&ReportFile::from_reports(&reports))?,
    )
}

/// `2..6` (inclusive) or `2,3,5`.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(Into::into))
            .collect::<Result<_>>()?
    };
    ensure!(!values.is_empty(), "empty k range {s:?}");
    ensure!(values.iter().all(|&k| k > 0), "k must be positive in {s:?}");
    Ok(values)
}

/// A decimal or a `p/q` fraction.
pub fn parse_fraction(v: &str) -> Result<f64> {
    match v.split_once('/') {
        Some((p, q)) => {
            let q: f64 = q.trim().parse()?;
            ensure!(q > 0.0, "zero denominator in {v:?}");
            Ok(p.trim().parse::<f64>()? / q)
        }
        None => Ok(v.trim().parse()?),
    }
}

/// `a..b/d` (inclusive numerators) or a comma list of `p/q` fractions and decimals.
pub fn parse_alpha_range(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = if let Some((a, rest)) = s.split_once("..") {
        let (b, d) = rest
            .split_once('/')
            .context("alpha range needs a denominator, as in 0..6/36")?;
        let (a, b, d): (u32, u32, u32) = (a.trim().parse()?, b.trim().parse()?, d.trim().parse()?);
        ensure!(d > 0, "zero denominator in {s:?}");
        (a..=b).map(|i| f64::from(i) / f64::from(d)).collect()
    } else {
        s.split(',').map(parse_fraction).collect::<Result<_>>()?
    };
    ensure!(!values.is_empty(), "empty alpha range {s:?}");
    ensure!(
        values.iter().all(|a| (0.0..1.0).contains(a)),
        "alpha values must lie in [0, 1): {s:?}"
    );
    Ok(values)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let ks = parse_k_range(&args.k_range)?;
    let alphas = parse_alpha_range(&args.alpha_range)?;
    let set = read_json::<ProblemFile>(&args.input)?.to_set()?;
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record([
        "k",
        "alpha",
        "objective",
        "trim_radius",
        "n_trimmed",
        "trimmed_items",
        "center_displacement",
    ])?;
    let mut trim_count = vec![0usize; set.len()];
    let mut trimmed_mass = vec![0.0; set.len()];
    for &k in &ks {
        let mut reference: Option<Vec<Distribution>> = None;
        for &alpha in &alphas {
            let outcome = solve_detailed(&set, &solver_config(&set, k, alpha, &args.solver))
                .with_context(|| format!("k = {k}, alpha = {alpha}"))?;
            let sol = outcome.best;
            let trimmed = sol.trimmed_items(&set);
            for &i in &trimmed {
                trim_count[i] += 1;
                trimmed_mass[i] += set.weight(i) - sol.kept_mass[i];
            }
            let reference = reference.get_or_insert_with(|| sol.centers.clone());
            let displacement = matching_distance_sq(reference, &sol.centers)?.sqrt();
            let list: Vec<String> = trimmed.iter().map(usize::to_string).collect();
            table.write_record([
                k.to_string(),
                alpha.to_string(),
                sol.objective.to_string(),
                sol.trim_radius.to_string(),
                trimmed.len().to_string(),
                list.join(";"),
                displacement.to_string(),
            ])?;
        }
    }
    emit(
        args.out.as_deref(),
        &String::from_utf8(table.into_inner()?)?,
    )?;
    if let Some(path) = &args.trim_counts {
        let mut counts = csv::Writer::from_writer(Vec::new());
        counts.write_record(["item", "trim_count", "trimmed_mass"])?;
        for i in 0..set.len() {
            counts.write_record([
                i.to_string(),
                trim_count[i].to_string(),
                trimmed_mass[i].to_string(),
            ])?;
        }
        emit(Some(path), &String::from_utf8(counts.into_inner()?)?)?;
    }
    Ok(())
}
