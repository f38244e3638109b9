//! Random sampling, small dense-vector helpers and the central-difference
//! gradient oracle.
//!
//! The generator is ChaCha8 (counter-based, platform independent) seeded from a
//! single `u64`. Standard normals come from the ziggurat sampler in
//! `rand_distr`, so a seed pins the full sample stream on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Seeded, single-owner random stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from `seed`, selected by ChaCha's stream
    /// id. Streams with different ids never overlap.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, written out so the permutation depends only on the
        // stream and not on a library's shuffle strategy.
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `dim` i.i.d. standard normal draws.
pub fn sample_standard_gaussian(rng: &mut Rng, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidDimension(
            "gaussian sample needs dim >= 1".into(),
        ));
    }
    Ok((0..dim).map(|_| rng.gaussian()).collect())
}

/// Central differences `(f(p + eps e_k) - f(p - eps e_k)) / (2 eps)` for
/// every coordinate `k`.
pub fn finite_diff_gradient<F>(mut f: F, p: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let mut probe = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let orig = probe[k];
        probe[k] = orig + eps;
        let plus = f(&probe);
        probe[k] = orig - eps;
        let minus = f(&probe);
        probe[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric("non-finite function value in finite difference", k));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

pub fn narrow(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

pub(crate) fn check_dim(what: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::shape(what, expected, v.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = sample_standard_gaussian(&mut Rng::new(7), 4).unwrap();
        let b = sample_standard_gaussian(&mut Rng::new(7), 4).unwrap();
        assert_eq!(a, b);
        let c = sample_standard_gaussian(&mut Rng::new(8), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert!(matches!(
            sample_standard_gaussian(&mut Rng::new(1), 0),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn gaussian_moments() {
        let dim = 8;
        let n = 100_000;
        let mut rng = Rng::new(2024);
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for _ in 0..n {
            let x = sample_standard_gaussian(&mut rng, dim).unwrap();
            for k in 0..dim {
                sum[k] += x[k];
                sum_sq[k] += x[k] * x[k];
            }
        }
        for k in 0..dim {
            let mean = sum[k] / n as f64;
            let var = sum_sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "coord {k} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "coord {k} var {var}");
        }
    }

    #[test]
    fn substreams_are_distinct_and_reproducible() {
        let mut a = Rng::substream(5, 0);
        let mut b = Rng::substream(5, 1);
        let mut a2 = Rng::substream(5, 0);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        let xa2: Vec<f64> = (0..8).map(|_| a2.uniform()).collect();
        assert_ne!(xa, xb);
        assert_eq!(xa, xa2);
    }

    #[test]
    fn fd_quadratic() {
        let g = finite_diff_gradient(|p| p.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6, "{g:?}");
    }

    #[test]
    fn fd_constant_and_bilinear() {
        let g = finite_diff_gradient(|_| 3.5, &[0.3, -1.0, 9.0], 1e-4).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let g = finite_diff_gradient(|p| p[0] * p[1], &[3.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn fd_reports_non_finite_coordinate() {
        let err = finite_diff_gradient(
            |p| if p[1] > 1.0 { f64::NAN } else { p[0] },
            &[0.0, 1.0],
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { index: 1, .. }));
    }

    #[test]
    fn fd_exact_on_quadratics() {
        // Central differences have zero truncation error on degree <= 2.
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let n = 4;
            let q: Vec<f64> = (0..n * n).map(|_| rng.gaussian()).collect();
            let l: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
            let f = |x: &[f64]| {
                let mut s = dot(&l, x);
                for i in 0..n {
                    for j in 0..n {
                        s += q[i * n + j] * x[i] * x[j];
                    }
                }
                s
            };
            let eps = 1e-3;
            let g = finite_diff_gradient(f, &p, eps).unwrap();
            for i in 0..n {
                let mut exact = l[i];
                for j in 0..n {
                    exact += (q[i * n + j] + q[j * n + i]) * p[j];
                }
                assert!((g[i] - exact).abs() < 1e-8, "{} vs {}", g[i], exact);
            }
        }
    }
}
