#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trimbary::linalg::{SpdMatrix, SymMatrix};
use trimbary::wasserstein::{Distribution, GaussianDistribution, QuantileFunction};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `B Bᵀ + floor · I` with standard normal-ish entries in `B`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> SpdMatrix {
    let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|t| b[i * d + t] * b[j * d + t]).sum::<f64>();
        }
        a[i * d + i] += floor;
    }
    SpdMatrix::new(SymMatrix::new(d, a).unwrap()).unwrap()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = rng.random_range(-5.0..5.0);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    SymMatrix::new(d, a).unwrap()
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> GaussianDistribution {
    let mean = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    GaussianDistribution::new(mean, random_spd(rng, d, 0.1)).unwrap()
}

/// Random non-decreasing quantile function on `g` grid points.
pub fn random_quantile(rng: &mut ChaCha8Rng, g: usize) -> QuantileFunction {
    let mut v = rng.random_range(-5.0..5.0);
    let values = (0..g)
        .map(|_| {
            v += rng.random_range(0.0..0.5);
            v
        })
        .collect();
    QuantileFunction::new(values).unwrap()
}

pub fn point(x: f64) -> Distribution {
    QuantileFunction::point_mass(x, 1).unwrap().into()
}

pub fn g1(mean: f64, var: f64) -> GaussianDistribution {
    GaussianDistribution::univariate(mean, var).unwrap()
}
