//! JSON and CSV file formats.
//!
//! Every JSON document carries `"format_version": 1`. Floats are written in
//! the shortest form that parses back to the same `f64`, so every writer's
//! output re-reads to an identical value.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trimbary::aggregate::{AggregationResult, UnitReport, Weighting};
use trimbary::datagen::{SampleLabel, SampleMatrix};
use trimbary::kbary::{RunSummary, Termination, TrimSolution, VariationBreakdown};
use trimbary::wasserstein::{
    Distribution, GaussianDistribution, QuantileFunction, Space, WeightedDistributionSet,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Gaussian,
    Quantile1d,
}

impl From<Space> for SpaceTag {
    fn from(s: Space) -> Self {
        match s {
            Space::Gaussian => SpaceTag::Gaussian,
            Space::Quantile1d => SpaceTag::Quantile1d,
        }
    }
}

/// One distribution: `{mean, cov}` for Gaussians, `{values}` for quantile functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl ItemRecord {
    pub fn from_distribution(d: &Distribution, weight: Option<f64>) -> Self {
        match d {
            Distribution::Gaussian(g) => ItemRecord {
                mean: Some(g.mean().to_vec()),
                cov: Some(g.cov().matrix().to_rows()),
                values: None,
                weight,
            },
            Distribution::Quantile1d(q) => ItemRecord {
                mean: None,
                cov: None,
                values: Some(q.values().to_vec()),
                weight,
            },
        }
    }

    pub fn from_gaussian(g: &GaussianDistribution, weight: Option<f64>) -> Self {
        Self::from_distribution(&Distribution::Gaussian(g.clone()), weight)
    }

    pub fn to_gaussian(&self) -> Result<GaussianDistribution> {
        ensure!(
            self.values.is_none(),
            "gaussian item must not carry \"values\""
        );
        let mean = self
            .mean
            .clone()
            .context("gaussian item is missing \"mean\"")?;
        let cov = self
            .cov
            .as_ref()
            .context("gaussian item is missing \"cov\"")?;
        Ok(GaussianDistribution::from_parts(mean, cov)?)
    }

    pub fn to_quantile(&self) -> Result<QuantileFunction> {
        ensure!(
            self.mean.is_none() && self.cov.is_none(),
            "quantile item must not carry \"mean\" or \"cov\""
        );
        let values = self
            .values
            .clone()
            .context("quantile item is missing \"values\"")?;
        Ok(QuantileFunction::new(values)?)
    }

    pub fn to_distribution(&self, space: SpaceTag) -> Result<Distribution> {
        Ok(match space {
            SpaceTag::Gaussian => self.to_gaussian()?.into(),
            SpaceTag::Quantile1d => self.to_quantile()?.into(),
        })
    }
}

/// A weighted set of distributions in one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: u32,
    pub space: SpaceTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    pub items: Vec<ItemRecord>,
}

impl ProblemFile {
    /// Items without a weight count as weight 1; weights are then normalized.
    pub fn to_set(&self) -> Result<WeightedDistributionSet> {
        check_version(self.format_version)?;
        ensure!(!self.items.is_empty(), "problem has no items");
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.to_distribution(self.space)
                    .with_context(|| format!("item {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        match self.space {
            SpaceTag::Gaussian => {
                ensure!(
                    self.grid_size.is_none(),
                    "gaussian problem must not set \"grid_size\""
                );
                let dim = self.dim.context("gaussian problem is missing \"dim\"")?;
                if let Some((i, d)) = items.iter().enumerate().find(|(_, d)| d.shape() != dim) {
                    bail!("item {i} has dimension {}, expected {dim}", d.shape());
                }
            }
            SpaceTag::Quantile1d => {
                ensure!(
                    self.dim.is_none(),
                    "quantile1d problem must not set \"dim\""
                );
                let g = self
                    .grid_size
                    .context("quantile1d problem is missing \"grid_size\"")?;
                if let Some((i, d)) = items.iter().enumerate().find(|(_, d)| d.shape() != g) {
                    bail!("item {i} has grid size {}, expected {g}", d.shape());
                }
            }
        }
        let weights = self.items.iter().map(|r| r.weight.unwrap_or(1.0)).collect();
        Ok(WeightedDistributionSet::new(items, weights)?)
    }

    pub fn from_distributions(items: &[Distribution], weights: Option<&[f64]>) -> Result<Self> {
        let first = items.first().context("no distributions")?;
        let space: SpaceTag = first.space().into();
        let (dim, grid_size) = match space {
            SpaceTag::Gaussian => (Some(first.shape()), None),
            SpaceTag::Quantile1d => (None, Some(first.shape())),
        };
        let items = items
            .iter()
            .enumerate()
            .map(|(i, d)| ItemRecord::from_distribution(d, weights.map(|w| w[i])))
            .collect();
        Ok(ProblemFile {
            format_version: FORMAT_VERSION,
            space,
            dim,
            grid_size,
            items,
        })
    }

    pub fn from_set(set: &WeightedDistributionSet) -> Result<Self> {
        Self::from_distributions(set.items(), Some(set.weights()))
    }

    /// The single distribution of a one-item file.
    pub fn single(&self) -> Result<Distribution> {
        let set = self.to_set()?;
        ensure!(
            set.len() == 1,
            "expected exactly one item, found {}",
            set.len()
        );
        Ok(set.item(0).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitRecord {
    pub id: String,
    pub n: u64,
    pub weights: Vec<f64>,
    pub features: Vec<ItemRecord>,
}

/// k-feature reports of several units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format_version: u32,
    pub units: Vec<UnitRecord>,
}

impl ReportFile {
    pub fn to_reports(&self) -> Result<Vec<UnitReport>> {
        check_version(self.format_version)?;
        ensure!(!self.units.is_empty(), "report file has no units");
        self.units
            .iter()
            .map(|u| {
                let features = u
                    .features
                    .iter()
                    .map(ItemRecord::to_gaussian)
                    .collect::<Result<Vec<_>>>()
                    .with_context(|| format!("unit {}", u.id))?;
                Ok(UnitReport::new(
                    u.id.clone(),
                    features,
                    u.weights.clone(),
                    u.n,
                )?)
            })
            .collect()
    }

    pub fn from_reports(reports: &[UnitReport]) -> Self {
        let units = reports
            .iter()
            .map(|r| UnitRecord {
                id: r.unit_id.clone(),
                n: r.sample_size,
                weights: r.weights.clone(),
                features: r
                    .features
                    .iter()
                    .map(|f| ItemRecord::from_gaussian(f, None))
                    .collect(),
            })
            .collect();
        ReportFile {
            format_version: FORMAT_VERSION,
            units,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationTag {
    Stationary,
    Stalled,
    IterationCap,
}

impl From<Termination> for TerminationTag {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Stationary => TerminationTag::Stationary,
            Termination::Stalled => TerminationTag::Stalled,
            Termination::IterationCap => TerminationTag::IterationCap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemStatus {
    pub weight: f64,
    pub kept_mass: f64,
    /// 0-based cluster index; `null` when the item is fully trimmed.
    pub cluster: Option<usize>,
    /// Squared W2 distance to the nearest center.
    pub distance_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub start: usize,
    pub iterations: usize,
    pub objective: f64,
    pub termination: TerminationTag,
}

impl From<&RunSummary> for RunRecord {
    fn from(r: &RunSummary) -> Self {
        RunRecord {
            start: r.start_index,
            iterations: r.iterations,
            objective: r.objective,
            termination: r.termination.into(),
        }
    }
}

/// Output of `kbary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub format_version: u32,
    pub space: SpaceTag,
    pub k: usize,
    pub alpha: f64,
    pub objective: f64,
    pub trim_radius: f64,
    pub centers: Vec<ItemRecord>,
    /// Objective contribution of every cluster; sums to `objective`.
    pub cluster_variation: Vec<f64>,
    pub items: Vec<ItemStatus>,
    pub best_start: usize,
    pub runs: Vec<RunRecord>,
}

impl SolutionFile {
    pub fn new(
        set: &WeightedDistributionSet,
        solution: &TrimSolution,
        breakdown: &VariationBreakdown,
        runs: &[RunSummary],
    ) -> Self {
        SolutionFile {
            format_version: FORMAT_VERSION,
            space: set.space().into(),
            k: solution.k,
            alpha: solution.alpha,
            objective: solution.objective,
            trim_radius: solution.trim_radius,
            centers: solution
                .centers
                .iter()
                .map(|c| ItemRecord::from_distribution(c, None))
                .collect(),
            cluster_variation: breakdown.per_cluster.clone(),
            items: (0..set.len())
                .map(|i| ItemStatus {
                    weight: set.weight(i),
                    kept_mass: solution.kept_mass[i],
                    cluster: solution.assignment[i],
                    distance_sq: solution.distances[i],
                })
                .collect(),
            best_start: solution.start_index,
            runs: runs.iter().map(RunRecord::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingTag {
    Equal,
    SampleSize,
}

impl From<WeightingTag> for Weighting {
    fn from(w: WeightingTag) -> Self {
        match w {
            WeightingTag::Equal => Weighting::Equal,
            WeightingTag::SampleSize => Weighting::SampleSize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub unit_id: String,
    /// 0-based position of the unit in the report file.
    pub unit: usize,
    /// 0-based position of the feature within its unit.
    pub feature: usize,
    pub weight: f64,
    pub kept_mass: f64,
    pub cluster: Option<usize>,
}

/// Output of `aggregate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationFile {
    pub format_version: u32,
    pub k: usize,
    pub alpha: f64,
    pub weighting: WeightingTag,
    pub objective: f64,
    /// Consensus features, each with its aggregated weight.
    pub consensus: Vec<ItemRecord>,
    pub features: Vec<FeatureRecord>,
}

impl AggregationFile {
    pub fn new(
        reports: &[UnitReport],
        result: &AggregationResult,
        alpha: f64,
        weighting: WeightingTag,
    ) -> Self {
        AggregationFile {
            format_version: FORMAT_VERSION,
            k: result.consensus.len(),
            alpha,
            weighting,
            objective: result.objective,
            consensus: result
                .consensus
                .iter()
                .zip(&result.weights)
                .map(|(g, w)| ItemRecord::from_gaussian(g, Some(*w)))
                .collect(),
            features: result
                .features
                .iter()
                .map(|f| FeatureRecord {
                    unit_id: reports[f.unit].unit_id.clone(),
                    unit: f.unit,
                    feature: f.feature,
                    weight: f.weight,
                    kept_mass: f.kept_mass,
                    cluster: f.cluster,
                })
                .collect(),
        }
    }
}

fn check_version(v: u32) -> Result<()> {
    ensure!(
        v == FORMAT_VERSION,
        "unsupported format_version {v}, expected {FORMAT_VERSION}"
    );
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Sample CSV: columns `x1..xd`, plus `source` (component index or `noise`) when labels exist.
pub fn sample_to_csv(sample: &SampleMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=sample.dim()).map(|i| format!("x{i}")).collect();
    let labels = sample.provenance();
    if labels.is_some() {
        header.push("source".into());
    }
    w.write_record(&header)?;
    for (i, row) in sample.rows().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            record.push(match l[i] {
                SampleLabel::Component(c) => c.to_string(),
                SampleLabel::Noise => "noise".into(),
            });
        }
        w.write_record(&record)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Reads every column except `source` as a coordinate.
pub fn read_sample_csv(path: &Path) -> Result<SampleMatrix> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let columns: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != "source")
        .map(|(i, _)| i)
        .collect();
    ensure!(
        !columns.is_empty(),
        "{} has no coordinate columns",
        path.display()
    );
    let mut data = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        for &c in &columns {
            let field = record.get(c).context("short row")?;
            let v: f64 = field.trim().parse().with_context(|| {
                format!(
                    "{}: row {} column {}",
                    path.display(),
                    line + 1,
                    header[c].to_owned()
                )
            })?;
            data.push(v);
        }
    }
    ensure!(!data.is_empty(), "{} has no rows", path.display());
    Ok(SampleMatrix::new(columns.len(), data)?)
}
