//! Augmentation noise: Gaussian, generalized Laplace and its tensor version.
//!
//! The generalized Laplace law with shape `m_eps` and scale `sigma_n` is the
//! Gaussian variance mixture `sigma_n * sqrt(G) * Z`, `G ~ Gamma(m_eps, 1)`,
//! with characteristic function `(1 + sigma_n^2 |omega|^2 / 2)^(-m_eps)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::points::PointSet;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid noise: {0}")]
pub struct NoiseError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    None,
    Gaussian,
    GeneralizedLaplace,
    TensorGeneralizedLaplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub law: NoiseLaw,
    pub sigma_n: f64,
    /// Shape; ignored by the Gaussian law.
    #[serde(default = "one")]
    pub m_eps: f64,
    pub dim: usize,
}

fn one() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn none(dim: usize) -> Self {
        Self { law: NoiseLaw::None, sigma_n: 0.0, m_eps: 1.0, dim }
    }

    pub fn gaussian(dim: usize, sigma_n: f64) -> Result<Self, NoiseError> {
        Self { law: NoiseLaw::Gaussian, sigma_n, m_eps: 1.0, dim }.validated()
    }

    pub fn generalized_laplace(dim: usize, sigma_n: f64, m_eps: f64) -> Result<Self, NoiseError> {
        Self { law: NoiseLaw::GeneralizedLaplace, sigma_n, m_eps, dim }.validated()
    }

    pub fn tensor_laplace(dim: usize, sigma_n: f64, m_eps: f64) -> Result<Self, NoiseError> {
        Self { law: NoiseLaw::TensorGeneralizedLaplace, sigma_n, m_eps, dim }.validated()
    }

    /// Independent classical Laplace(0, b) coordinates: the tensor law with
    /// `m_eps = 1` and `sigma_n = sqrt(2) b`.
    pub fn laplace(dim: usize, b: f64) -> Result<Self, NoiseError> {
        Self::tensor_laplace(dim, std::f64::consts::SQRT_2 * b, 1.0)
    }

    pub fn validated(self) -> Result<Self, NoiseError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.dim == 0 {
            return Err(NoiseError("dimension must be positive".into()));
        }
        if !(self.sigma_n >= 0.0) || !self.sigma_n.is_finite() {
            return Err(NoiseError(format!("sigma_n must be nonnegative, got {}", self.sigma_n)));
        }
        let d = self.dim as f64;
        match self.law {
            NoiseLaw::GeneralizedLaplace if !(self.m_eps > d / 2.0) => {
                Err(NoiseError(format!("generalized Laplace needs m_eps > D/2 = {}, got {}", d / 2.0, self.m_eps)))
            }
            NoiseLaw::TensorGeneralizedLaplace if !(self.m_eps > 0.5) => {
                Err(NoiseError(format!("tensor generalized Laplace needs m_eps > 1/2, got {}", self.m_eps)))
            }
            _ => Ok(()),
        }
    }

    /// True when every draw is the zero vector.
    pub fn is_trivial(&self) -> bool {
        self.law == NoiseLaw::None || self.sigma_n == 0.0
    }

    /// Per-coordinate variance of a draw.
    pub fn coordinate_variance(&self) -> f64 {
        match self.law {
            NoiseLaw::None => 0.0,
            NoiseLaw::Gaussian => self.sigma_n * self.sigma_n,
            _ => self.sigma_n * self.sigma_n * self.m_eps,
        }
    }
}

/// Draw `count` i.i.d. noise vectors.
pub fn sample<R: Rng + ?Sized>(spec: &NoiseSpec, count: usize, rng: &mut R) -> PointSet {
    let d = spec.dim;
    let mut out = PointSet::zeros(d, count);
    if spec.is_trivial() {
        return out;
    }
    let s = spec.sigma_n;
    match spec.law {
        NoiseLaw::None => {}
        NoiseLaw::Gaussian => {
            for i in 0..count {
                for x in out.row_mut(i) {
                    let z: f64 = StandardNormal.sample(rng);
                    *x = s * z;
                }
            }
        }
        NoiseLaw::GeneralizedLaplace => {
            let gamma = Gamma::new(spec.m_eps, 1.0).expect("validated shape");
            for i in 0..count {
                let scale = s * gamma.sample(rng).sqrt();
                for x in out.row_mut(i) {
                    let z: f64 = StandardNormal.sample(rng);
                    *x = scale * z;
                }
            }
        }
        NoiseLaw::TensorGeneralizedLaplace => {
            let gamma = Gamma::new(spec.m_eps, 1.0).expect("validated shape");
            for i in 0..count {
                for x in out.row_mut(i) {
                    let g: f64 = gamma.sample(rng);
                    let z: f64 = StandardNormal.sample(rng);
                    *x = s * g.sqrt() * z;
                }
            }
        }
    }
    out
}

/// `E exp(i omega . eps)`; real because every law is symmetric.
pub fn characteristic_fn(spec: &NoiseSpec, omega: &[f64]) -> f64 {
    let s2 = spec.sigma_n * spec.sigma_n;
    let w2: f64 = omega.iter().map(|w| w * w).sum();
    match spec.law {
        NoiseLaw::None => 1.0,
        NoiseLaw::Gaussian => (-s2 * w2 / 2.0).exp(),
        NoiseLaw::GeneralizedLaplace => (1.0 + s2 * w2 / 2.0).powf(-spec.m_eps),
        NoiseLaw::TensorGeneralizedLaplace => {
            omega.iter().map(|w| (1.0 + s2 * w * w / 2.0).powf(-spec.m_eps)).product()
        }
    }
}

/// Empirical characteristic function `(1/N) sum cos(omega . eps_k)`.
pub fn empirical_cf(samples: &PointSet, omega: &[f64]) -> f64 {
    let n = samples.len() as f64;
    samples.rows().map(|e| e.iter().zip(omega).map(|(a, b)| a * b).sum::<f64>().cos()).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn none_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample(&NoiseSpec::none(3), 5, &mut rng);
        assert_eq!(s.len(), 5);
        assert!(s.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gaussian_variance_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample(&NoiseSpec::gaussian(1, 0.2).unwrap(), 100_000, &mut rng);
        let v = s.as_slice().iter().map(|x| x * x).sum::<f64>() / 1e5;
        assert!((0.0384..=0.0416).contains(&v), "{v}");
    }

    #[test]
    fn generalized_laplace_cf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = NoiseSpec::generalized_laplace(2, 1.0, 2.0).unwrap();
        let s = sample(&spec, 100_000, &mut rng);
        let e = empirical_cf(&s, &[1.0, 0.0]);
        assert!((e - 1.0 / 1.5f64.powi(2)).abs() < 0.01, "{e}");
    }

    #[test]
    fn cf_values() {
        let g = NoiseSpec::gaussian(2, 1.0).unwrap();
        assert_eq!(characteristic_fn(&g, &[0.0, 0.0]), 1.0);
        assert!((characteristic_fn(&g, &[1.0, 1.0]) - (-1f64).exp()).abs() < 1e-15);
        let l = NoiseSpec::generalized_laplace(2, 1.0, 3.0).unwrap();
        assert!((characteristic_fn(&l, &[1.0, 1.0]) - 0.125).abs() < 1e-15);
        let b = 0.3;
        let lap = NoiseSpec::laplace(1, b).unwrap();
        assert!((characteristic_fn(&lap, &[2.0]) - 1.0 / (1.0 + b * b * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_constraints() {
        assert!(NoiseSpec::generalized_laplace(3, 1.0, 1.5).is_err());
        assert!(NoiseSpec::generalized_laplace(3, 1.0, 1.6).is_ok());
        assert!(NoiseSpec::tensor_laplace(3, 1.0, 0.5).is_err());
        assert!(NoiseSpec::gaussian(1, -0.1).is_err());
    }
}
