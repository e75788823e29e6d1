//! Closed-form W2 geometry of location-scatter families.
//!
//! Distances and barycenters between members of one location-scatter family
//! depend only on means and covariances, so a Gaussian is the canonical
//! representative: every formula here applies verbatim to any other family
//! member with the same first two moments.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_distance, SpdMatrix, SymMatrix};

/// Iteration cap for the covariance fixed point.
pub const BARYCENTER_MAX_ITERATIONS: usize = 500;
/// Relative Frobenius step size at which the fixed-point iteration stops.
pub const BARYCENTER_STEP_TOL: f64 = 1e-10;
/// Accepted relative residual of the fixed-point equation on return.
pub const BARYCENTER_RESIDUAL_TOL: f64 = 1e-7;
/// Ridge added to the starting covariance so that it is strictly positive definite.
pub const BARYCENTER_START_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDistribution {
    mean: Vec<f64>,
    cov: SpdMatrix,
    /// Names the generating family; metadata only.
    pub family_tag: Option<String>,
}

impl GaussianDistribution {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite mean".into()));
        }
        Ok(GaussianDistribution {
            mean,
            cov,
            family_tag: None,
        })
    }

    pub fn from_parts(mean: Vec<f64>, cov_rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(mean, SpdMatrix::from_rows(cov_rows)?)
    }

    /// Univariate `N(mean, variance)`.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], SpdMatrix::diagonal(&[variance])?)
    }

    /// `N(mean, I)`.
    pub fn standard(mean: Vec<f64>) -> Self {
        let d = mean.len();
        Self::new(mean, SpdMatrix::identity(d)).expect("identity covariance")
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.family_tag = Some(tag.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// `‖m‖² + tr Σ`, the second moment about the origin.
    pub fn second_moment(&self) -> f64 {
        norm_sq(&self.mean) + self.cov.trace()
    }

    /// Translate by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mean = self.mean.iter().zip(shift).map(|(m, s)| m + s).collect();
        GaussianDistribution {
            mean,
            cov: self.cov.clone(),
            family_tag: self.family_tag.clone(),
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.mean
            .iter()
            .zip(&other.mean)
            .map(|(a, b)| a.total_cmp(b))
            .chain(
                self.cov
                    .matrix()
                    .as_slice()
                    .iter()
                    .zip(other.cov.matrix().as_slice())
                    .map(|(a, b)| a.total_cmp(b)),
            )
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared W2 distance:
/// `‖m_P − m_Q‖² + tr(Σ_P + Σ_Q − 2 (Σ_P^{1/2} Σ_Q Σ_P^{1/2})^{1/2})`.
///
/// Arguments are put in a canonical order first, so the result is bitwise
/// symmetric. The covariance term is clamped at zero.
pub fn w2_sq_gaussian(p: &GaussianDistribution, q: &GaussianDistribution) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let (p, q) = if p.canonical_cmp(q) == Ordering::Greater {
        (q, p)
    } else {
        (p, q)
    };
    let location = dist_sq(&p.mean, &q.mean);
    let cross = if p.dim() == 1 {
        (p.cov.matrix().get(0, 0).max(0.0) * q.cov.matrix().get(0, 0).max(0.0)).sqrt()
    } else {
        let root_p = p.cov.sqrt();
        let inner = SpdMatrix::new(root_p.matrix().sandwich(q.cov.matrix())?)?;
        inner.trace_sqrt()
    };
    let scatter = (p.cov.trace() + q.cov.trace() - 2.0 * cross).max(0.0);
    Ok(location + scatter)
}

pub fn w2_gaussian(p: &GaussianDistribution, q: &GaussianDistribution) -> Result<f64> {
    w2_sq_gaussian(p, q).map(f64::sqrt)
}

/// Diagnostics of the covariance fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// `‖Σ w_i (Σ̄^{1/2} Σ_i Σ̄^{1/2})^{1/2} − Σ̄‖_F`
    pub residual: f64,
}

/// Weighted W2 barycenter of Gaussians.
///
/// Weights are renormalized over the positive ones. A single positively
/// weighted item is returned as is.
pub fn barycenter_gaussian(
    items: &[&GaussianDistribution],
    weights: &[f64],
) -> Result<GaussianDistribution> {
    barycenter_gaussian_with_report(items, weights).map(|(g, _)| g)
}

pub fn barycenter_gaussian_with_report(
    items: &[&GaussianDistribution],
    weights: &[f64],
) -> Result<(GaussianDistribution, FixedPointReport)> {
    let (items, weights) = positive_part(items, weights)?;
    let d = items[0].dim();
    if let Some(bad) = items.iter().find(|g| g.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.dim(),
        });
    }
    if items.len() == 1 {
        let report = FixedPointReport {
            iterations: 0,
            residual: 0.0,
        };
        return Ok((items[0].clone(), report));
    }
    if !items.iter().any(|g| g.cov.is_strictly_pd()) {
        return Err(Error::DegenerateBarycenter);
    }

    let mut mean = vec![0.0; d];
    for (g, &w) in items.iter().zip(&weights) {
        for (acc, m) in mean.iter_mut().zip(&g.mean) {
            *acc += w * m;
        }
    }

    let (cov, report) = if d == 1 {
        // Commuting case: Σ̄ = (Σ w_i σ_i)².
        let root: f64 = items
            .iter()
            .zip(&weights)
            .map(|(g, w)| w * g.cov.matrix().get(0, 0).max(0.0).sqrt())
            .sum();
        let cov = SpdMatrix::diagonal(&[root * root])?;
        (
            cov,
            FixedPointReport {
                iterations: 1,
                residual: 0.0,
            },
        )
    } else {
        covariance_fixed_point(&items, &weights)?
    };
    Ok((
        GaussianDistribution {
            mean,
            cov,
            family_tag: items[0].family_tag.clone(),
        },
        report,
    ))
}

fn positive_part<'a>(
    items: &[&'a GaussianDistribution],
    weights: &[f64],
) -> Result<(Vec<&'a GaussianDistribution>, Vec<f64>)> {
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
    let (kept, w): (Vec<_>, Vec<_>) = items
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(g, &w)| (*g, w / total))
        .unzip();
    Ok((kept, w))
}

/// Σ w_i (S^{1/2} Σ_i S^{1/2})^{1/2}
fn weighted_root_sum(
    root: &SymMatrix,
    items: &[&GaussianDistribution],
    weights: &[f64],
) -> Result<SymMatrix> {
    let mut acc = SymMatrix::zeros(root.dim());
    for (g, &w) in items.iter().zip(weights) {
        let inner = SpdMatrix::new(root.sandwich(g.cov.matrix())?)?;
        acc.add_scaled(w, inner.sqrt().matrix())?;
    }
    Ok(acc)
}

fn covariance_fixed_point(
    items: &[&GaussianDistribution],
    weights: &[f64],
) -> Result<(SpdMatrix, FixedPointReport)> {
    let d = items[0].dim();
    let mut start = SymMatrix::scaled_identity(d, BARYCENTER_START_RIDGE);
    for (g, &w) in items.iter().zip(weights) {
        start.add_scaled(w, g.cov.matrix())?;
    }
    let mut current = SpdMatrix::new(start)?;
    let mut iterations = 0;
    while iterations < BARYCENTER_MAX_ITERATIONS {
        iterations += 1;
        let inv_root = current
            .inv_sqrt()
            .map_err(|_| Error::DegenerateBarycenter)?;
        let root = current.sqrt();
        let sum = weighted_root_sum(root.matrix(), items, weights)?;
        let next = SpdMatrix::new(inv_root.sandwich(&sum.square())?)?;
        let step = frobenius_distance(next.matrix(), current.matrix())?;
        let tol = BARYCENTER_STEP_TOL * (1.0 + current.matrix().frobenius_norm());
        current = next;
        if step <= tol {
            break;
        }
    }
    let residual = fixed_point_residual(&current, items, weights)?;
    if residual > BARYCENTER_RESIDUAL_TOL * (1.0 + current.matrix().frobenius_norm()) {
        return Err(Error::BarycenterNoConvergence {
            iterations,
            residual,
        });
    }
    Ok((
        current,
        FixedPointReport {
            iterations,
            residual,
        },
    ))
}

fn fixed_point_residual(
    cov: &SpdMatrix,
    items: &[&GaussianDistribution],
    weights: &[f64],
) -> Result<f64> {
    let sum = weighted_root_sum(cov.sqrt().matrix(), items, weights)?;
    frobenius_distance(&sum, cov.matrix())
}

/// Residual of the barycenter fixed-point equation
/// `Σ w_i (Σ̄^{1/2} Σ_i Σ̄^{1/2})^{1/2} = Σ̄` for a candidate covariance.
pub fn barycenter_residual(
    items: &[&GaussianDistribution],
    weights: &[f64],
    cov: &SpdMatrix,
) -> Result<f64> {
    let (items, weights) = positive_part(items, weights)?;
    fixed_point_residual(cov, &items, &weights)
}

/// `Σ w_i (‖m_i‖² + tr Σ_i) − (‖m̄‖² + tr Σ̄)`, clamped at zero.
///
/// Evaluated in the centred form
/// `Σ w_i ‖m_i − m_w‖² + (‖m_w‖² − ‖m̄‖²) + Σ w_i tr Σ_i − tr Σ̄`
/// with `m_w = Σ w_i m_i`, which is algebraically identical and does not lose
/// digits when all means are far from the origin.
pub fn generalized_variance(
    items: &[&GaussianDistribution],
    weights: &[f64],
    bary: &GaussianDistribution,
) -> Result<f64> {
    let (items, weights) = positive_part(items, weights)?;
    let d = bary.dim();
    if let Some(bad) = items.iter().find(|g| g.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.dim(),
        });
    }
    let mut mw = vec![0.0; d];
    for (g, &w) in items.iter().zip(&weights) {
        for (acc, m) in mw.iter_mut().zip(&g.mean) {
            *acc += w * m;
        }
    }
    let spread: f64 = items
        .iter()
        .zip(&weights)
        .map(|(g, w)| w * dist_sq(&g.mean, &mw))
        .sum();
    let offset: f64 = mw
        .iter()
        .zip(&bary.mean)
        .map(|(a, b)| (a - b) * (a + b))
        .sum();
    let traces: f64 = items
        .iter()
        .zip(&weights)
        .map(|(g, w)| w * g.cov.trace())
        .sum();
    Ok((spread + offset + traces - bary.cov.trace()).max(0.0))
}
