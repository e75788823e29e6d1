//! Univariate distributions represented by their quantile function on the
//! midpoint grid `t_j = (j + 0.5) / G`.
//!
//! On the real line W2 is the L2 distance between quantile functions and the
//! barycenter's quantile function is the weighted mean of the inputs', so the
//! representation is closed under every operation the solver needs.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidQuantile(
                "grid size must be at least 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQuantile("non-finite quantile value".into()));
        }
        if let Some(j) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidQuantile(format!(
                "values decrease between grid points {j} and {}",
                j + 1
            )));
        }
        Ok(QuantileFunction { values })
    }

    /// Tabulates `f` on the midpoint grid.
    pub fn from_fn(grid_size: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            (0..grid_size)
                .map(|j| f(grid_level(j, grid_size)))
                .collect(),
        )
    }

    /// Dirac mass at `at`.
    pub fn point_mass(at: f64, grid_size: usize) -> Result<Self> {
        Self::new(vec![at; grid_size])
    }

    pub fn uniform(lo: f64, hi: f64, grid_size: usize) -> Result<Self> {
        Self::from_fn(grid_size, |t| lo + (hi - lo) * t)
    }

    /// Discretized `N(mean, sd²)`.
    pub fn normal(mean: f64, sd: f64, grid_size: usize) -> Result<Self> {
        if sd.is_nan() || sd < 0.0 {
            return Err(Error::InvalidQuantile(format!(
                "negative standard deviation {sd}"
            )));
        }
        if sd == 0.0 {
            return Self::point_mass(mean, grid_size);
        }
        let std = Normal::standard();
        Self::from_fn(grid_size, |t| mean + sd * std.inverse_cdf(t))
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self, j: usize) -> f64 {
        grid_level(j, self.grid_size())
    }

    /// Mean of the discretized distribution.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.grid_size() as f64
    }
}

pub fn grid_level(j: usize, grid_size: usize) -> f64 {
    (j as f64 + 0.5) / grid_size as f64
}

fn check_grid(p: &QuantileFunction, q: &QuantileFunction) -> Result<()> {
    if p.grid_size() != q.grid_size() {
        return Err(Error::GridMismatch {
            expected: p.grid_size(),
            found: q.grid_size(),
        });
    }
    Ok(())
}

/// Midpoint-rule `∫₀¹ (F_P^{-1}(t) − F_Q^{-1}(t))² dt`.
pub fn w2_sq_quantile(p: &QuantileFunction, q: &QuantileFunction) -> Result<f64> {
    check_grid(p, q)?;
    let sum: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / p.grid_size() as f64)
}

pub fn w2_quantile(p: &QuantileFunction, q: &QuantileFunction) -> Result<f64> {
    w2_sq_quantile(p, q).map(f64::sqrt)
}

/// Pointwise weighted mean of quantile functions. Weights are renormalized.
pub fn barycenter_quantile(
    items: &[&QuantileFunction],
    weights: &[f64],
) -> Result<QuantileFunction> {
    if items.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} items but {} weights",
            items.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights(
            "weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if items.is_empty() || total <= 0.0 {
        return Err(Error::EmptySet);
    }
    let g = items[0].grid_size();
    for q in items {
        check_grid(items[0], q)?;
    }
    let live: Vec<(&QuantileFunction, f64)> = items
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(q, &w)| (*q, w / total))
        .collect();
    if live.len() == 1 {
        return Ok(live[0].0.clone());
    }
    let mut values = vec![0.0; g];
    for (q, w) in live {
        for (acc, v) in values.iter_mut().zip(&q.values) {
            *acc += w * v;
        }
    }
    // Rounding is monotone, so the weighted mean of non-decreasing inputs stays non-decreasing.
    QuantileFunction::new(values)
}
