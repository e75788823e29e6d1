//! W2 distances, barycenters and variances for the two supported geometries.

mod gaussian;
mod quantile;

pub use gaussian::{
    barycenter_gaussian, barycenter_gaussian_with_report, barycenter_residual,
    generalized_variance, w2_gaussian, w2_sq_gaussian, FixedPointReport, GaussianDistribution,
    BARYCENTER_MAX_ITERATIONS, BARYCENTER_RESIDUAL_TOL, BARYCENTER_START_RIDGE,
    BARYCENTER_STEP_TOL,
};
pub use quantile::{
    barycenter_quantile, grid_level, w2_quantile, w2_sq_quantile, QuantileFunction,
    DEFAULT_GRID_SIZE,
};

use crate::error::{Error, Result};

/// Which W2 geometry a distribution lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Gaussian,
    Quantile1d,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian(GaussianDistribution),
    Quantile1d(QuantileFunction),
}

impl Distribution {
    pub fn space(&self) -> Space {
        match self {
            Distribution::Gaussian(_) => Space::Gaussian,
            Distribution::Quantile1d(_) => Space::Quantile1d,
        }
    }

    /// Dimension for Gaussians, grid size for quantile functions.
    pub fn shape(&self) -> usize {
        match self {
            Distribution::Gaussian(g) => g.dim(),
            Distribution::Quantile1d(q) => q.grid_size(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianDistribution> {
        match self {
            Distribution::Gaussian(g) => Some(g),
            Distribution::Quantile1d(_) => None,
        }
    }

    pub fn as_quantile(&self) -> Option<&QuantileFunction> {
        match self {
            Distribution::Quantile1d(q) => Some(q),
            Distribution::Gaussian(_) => None,
        }
    }

    fn check_compatible(&self, other: &Distribution) -> Result<()> {
        match (self, other) {
            (Distribution::Gaussian(a), Distribution::Gaussian(b)) if a.dim() != b.dim() => {
                Err(Error::DimensionMismatch {
                    expected: a.dim(),
                    found: b.dim(),
                })
            }
            (Distribution::Quantile1d(a), Distribution::Quantile1d(b))
                if a.grid_size() != b.grid_size() =>
            {
                Err(Error::GridMismatch {
                    expected: a.grid_size(),
                    found: b.grid_size(),
                })
            }
            (a, b) if a.space() != b.space() => Err(Error::MixedSpaces),
            _ => Ok(()),
        }
    }
}

impl From<GaussianDistribution> for Distribution {
    fn from(g: GaussianDistribution) -> Self {
        Distribution::Gaussian(g)
    }
}

impl From<QuantileFunction> for Distribution {
    fn from(q: QuantileFunction) -> Self {
        Distribution::Quantile1d(q)
    }
}

/// Squared W2 distance, dispatched on the geometry.
pub fn w2_squared(p: &Distribution, q: &Distribution) -> Result<f64> {
    match (p, q) {
        (Distribution::Gaussian(a), Distribution::Gaussian(b)) => w2_sq_gaussian(a, b),
        (Distribution::Quantile1d(a), Distribution::Quantile1d(b)) => w2_sq_quantile(a, b),
        _ => Err(Error::MixedSpaces),
    }
}

pub fn w2_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    w2_squared(p, q).map(f64::sqrt)
}

/// Weighted barycenter of distributions sharing one geometry.
pub fn barycenter(items: &[&Distribution], weights: &[f64]) -> Result<Distribution> {
    let first = items.first().ok_or(Error::EmptySet)?;
    for d in items {
        first.check_compatible(d)?;
    }
    match first.space() {
        Space::Gaussian => {
            let gs: Vec<&GaussianDistribution> =
                items.iter().filter_map(|d| d.as_gaussian()).collect();
            barycenter_gaussian(&gs, weights).map(Distribution::Gaussian)
        }
        Space::Quantile1d => {
            let qs: Vec<&QuantileFunction> = items.iter().filter_map(|d| d.as_quantile()).collect();
            barycenter_quantile(&qs, weights).map(Distribution::Quantile1d)
        }
    }
}

/// The finitely supported meta-measure: distributions with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDistributionSet {
    items: Vec<Distribution>,
    weights: Vec<f64>,
}

impl WeightedDistributionSet {
    /// Validates homogeneity and normalizes the weights to sum to one.
    pub fn new(items: Vec<Distribution>, weights: Vec<f64>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptySet);
        }
        if items.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} items but {} weights",
                items.len(),
                weights.len()
            )));
        }
        for d in &items[1..] {
            items[0].check_compatible(d)?;
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weight {w} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(WeightedDistributionSet { items, weights })
    }

    pub fn uniform(items: Vec<Distribution>) -> Result<Self> {
        let n = items.len();
        Self::new(items, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn space(&self) -> Space {
        self.items[0].space()
    }

    /// Dimension (Gaussian) or grid size (quantile) shared by all items.
    pub fn shape(&self) -> usize {
        self.items[0].shape()
    }

    pub fn items(&self) -> &[Distribution] {
        &self.items
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn item(&self, i: usize) -> &Distribution {
        &self.items[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Distribution, f64)> {
        self.items.iter().zip(self.weights.iter().copied())
    }

    /// Number of items carrying positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// Checks that `d` can be compared with the items of this set.
    pub fn check_member(&self, d: &Distribution) -> Result<()> {
        self.items[0].check_compatible(d)
    }

    pub fn barycenter(&self) -> Result<Distribution> {
        let refs: Vec<&Distribution> = self.items.iter().collect();
        barycenter(&refs, &self.weights)
    }

    /// `Σ w_i W2²(P_i, q)`
    pub fn weighted_cost(&self, q: &Distribution) -> Result<f64> {
        self.iter().map(|(p, w)| Ok(w * w2_squared(p, q)?)).sum()
    }

    /// Generalized variance about a Gaussian barycenter; see [`generalized_variance`].
    pub fn generalized_variance(&self, bary: &GaussianDistribution) -> Result<f64> {
        let gs: Vec<&GaussianDistribution> = self
            .items
            .iter()
            .map(|d| d.as_gaussian().ok_or(Error::MixedSpaces))
            .collect::<Result<_>>()?;
        generalized_variance(&gs, &self.weights, bary)
    }
}
