//! Stationary positive-definite kernels with known spectral densities.
//!
//! Conventions. A Matérn kernel with smoothness `m0` and lengthscale `phi`
//! in `D` dimensions has Bessel order `nu = m0 - D/2` and
//!
//! ```text
//! K(x) = variance * z^nu K_nu(z) / (Gamma(nu) 2^(nu - 1)),  z = 2 phi sqrt(nu) |x|.
//! ```
//!
//! The Gaussian kernel with scale `sigma` is `exp(-|x|^2 / (4 sigma^2))`.
//! `spectral_density` returns `S(omega)` such that
//! `K(x) = inversion_constant * int exp(i omega.x) S(omega) d omega`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{beta_fn, ln_bessel_k, ln_gamma};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel: {0}")]
    Invalid(String),
    #[error("{0} has no closed-form spectral density")]
    NoSpectrum(&'static str),
    #[error("dimension mismatch: kernel is {expected}-dimensional, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Matern { m0: f64, phi: f64 },
    GeneralizedWendland { kappa: f64, mu: f64, phi: f64 },
    Gaussian { sigma: f64 },
    /// Product of one univariate factor per coordinate.
    TensorProduct { factors: Vec<KernelSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "one")]
    pub variance: f64,
    pub dim: usize,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn matern(dim: usize, m0: f64, phi: f64) -> Result<Self, KernelError> {
        Self { family: Family::Matern { m0, phi }, variance: 1.0, dim }.validated()
    }

    /// Matérn in the classical `(nu, rho, variance)` form,
    /// `variance * 2^(1-nu)/Gamma(nu) (sqrt(2 nu) r / rho)^nu K_nu(sqrt(2 nu) r / rho)`.
    pub fn matern_classical(dim: usize, nu: f64, rho: f64, variance: f64) -> Result<Self, KernelError> {
        if !(rho > 0.0) {
            return Err(KernelError::Invalid(format!("rho must be positive, got {rho}")));
        }
        let phi = 1.0 / (std::f64::consts::SQRT_2 * rho);
        Self { family: Family::Matern { m0: nu + dim as f64 / 2.0, phi }, variance, dim }.validated()
    }

    pub fn wendland(dim: usize, kappa: f64, mu: f64, phi: f64) -> Result<Self, KernelError> {
        Self { family: Family::GeneralizedWendland { kappa, mu, phi }, variance: 1.0, dim }.validated()
    }

    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self, KernelError> {
        Self { family: Family::Gaussian { sigma }, variance: 1.0, dim }.validated()
    }

    pub fn tensor(factors: Vec<KernelSpec>) -> Result<Self, KernelError> {
        let dim = factors.len();
        Self { family: Family::TensorProduct { factors }, variance: 1.0, dim }.validated()
    }

    pub fn with_variance(mut self, variance: f64) -> Result<Self, KernelError> {
        self.variance = variance;
        self.validated()
    }

    pub fn validated(self) -> Result<Self, KernelError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: String| Err(KernelError::Invalid(m));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return bad(format!("variance must be positive, got {}", self.variance));
        }
        let d = self.dim as f64;
        match &self.family {
            Family::Matern { m0, phi } => {
                if !(*m0 > d / 2.0) || !m0.is_finite() {
                    return bad(format!("Matérn needs m0 > D/2 = {}, got {m0}", d / 2.0));
                }
                if !(*phi > 0.0) || !phi.is_finite() {
                    return bad(format!("phi must be positive, got {phi}"));
                }
                if *m0 - d / 2.0 > 60.0 {
                    return bad(format!("Bessel order m0 - D/2 = {} exceeds 60", m0 - d / 2.0));
                }
            }
            Family::GeneralizedWendland { kappa, mu, phi } => {
                if !(*kappa > 0.0) {
                    return bad(format!("kappa must be positive, got {kappa}"));
                }
                if !(*mu >= (d + 1.0) / 2.0 + kappa) {
                    return bad(format!("Wendland needs mu >= (D+1)/2 + kappa = {}, got {mu}", (d + 1.0) / 2.0 + kappa));
                }
                if !(*phi > 0.0) {
                    return bad(format!("phi must be positive, got {phi}"));
                }
            }
            Family::Gaussian { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return bad(format!("sigma must be positive, got {sigma}"));
                }
            }
            Family::TensorProduct { factors } => {
                if factors.len() != self.dim {
                    return bad(format!("tensor product needs {} factors, got {}", self.dim, factors.len()));
                }
                for f in factors {
                    if f.dim != 1 {
                        return bad("tensor factors must be one-dimensional".into());
                    }
                    if matches!(f.family, Family::TensorProduct { .. }) {
                        return bad("nested tensor products are not supported".into());
                    }
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Smoothness `m0`; infinite for the Gaussian. For tensor products the
    /// smallest factor smoothness.
    pub fn m0(&self) -> f64 {
        match &self.family {
            Family::Matern { m0, .. } => *m0,
            Family::GeneralizedWendland { kappa, .. } => (self.dim as f64 + 1.0) / 2.0 + kappa,
            Family::Gaussian { .. } => f64::INFINITY,
            Family::TensorProduct { factors } => factors.iter().map(|f| f.m0()).fold(f64::INFINITY, f64::min),
        }
    }

    /// `K(0)`.
    pub fn value_at_zero(&self) -> f64 {
        match &self.family {
            Family::TensorProduct { factors } => self.variance * factors.iter().map(|f| f.variance).product::<f64>(),
            _ => self.variance,
        }
    }

    pub fn has_spectrum(&self) -> bool {
        match &self.family {
            Family::Matern { .. } | Family::Gaussian { .. } => true,
            Family::GeneralizedWendland { .. } => false,
            Family::TensorProduct { factors } => factors.iter().all(|f| f.has_spectrum()),
        }
    }

    /// Constant `c` with `K(x) = c * int exp(i omega.x) S(omega) d omega`.
    /// The Matérn density integrates to one; the Gaussian one to `(2 sqrt(pi))^D`.
    pub fn inversion_constant(&self) -> Result<f64, KernelError> {
        match &self.family {
            Family::Matern { .. } => Ok(1.0),
            Family::Gaussian { .. } => Ok((2.0 * PI.sqrt()).powi(-(self.dim as i32))),
            Family::GeneralizedWendland { .. } => Err(KernelError::NoSpectrum("generalized Wendland")),
            Family::TensorProduct { factors } => {
                factors.iter().map(|f| f.inversion_constant()).product()
            }
        }
    }

    pub fn compile(&self) -> Result<Kernel, KernelError> {
        self.validate()?;
        Ok(Kernel::new(self))
    }
}

/// Evaluate `K(diff)`. Convenience wrapper; compile once with
/// [`KernelSpec::compile`] for repeated evaluation.
pub fn kernel_eval(spec: &KernelSpec, diff: &[f64]) -> Result<f64, KernelError> {
    if diff.len() != spec.dim {
        return Err(KernelError::Dimension { expected: spec.dim, got: diff.len() });
    }
    Ok(spec.compile()?.eval(diff))
}

/// Spectral density `S(omega)`; see the module docs for the normalization.
pub fn spectral_density(spec: &KernelSpec, omega: &[f64]) -> Result<f64, KernelError> {
    spec.validate()?;
    if omega.len() != spec.dim {
        return Err(KernelError::Dimension { expected: spec.dim, got: omega.len() });
    }
    let w2: f64 = omega.iter().map(|w| w * w).sum();
    let d = spec.dim as f64;
    match &spec.family {
        Family::Matern { m0, phi } => {
            let nu = m0 - d / 2.0;
            let a = 4.0 * phi * phi * nu;
            let ln = -d / 2.0 * PI.ln() + lg(*m0) - lg(nu) + nu * a.ln() - m0 * (a + w2).ln();
            Ok(spec.variance * ln.exp())
        }
        Family::Gaussian { sigma } => Ok(spec.variance * (2.0 * sigma).powi(spec.dim as i32) * (-sigma * sigma * w2).exp()),
        Family::GeneralizedWendland { .. } => Err(KernelError::NoSpectrum("generalized Wendland")),
        Family::TensorProduct { factors } => {
            let mut s = spec.variance;
            for (f, w) in factors.iter().zip(omega) {
                s *= spectral_density(f, std::slice::from_ref(w))?;
            }
            Ok(s)
        }
    }
}

fn lg(x: f64) -> f64 {
    ln_gamma(x).expect("validated argument")
}

/// Radial profile `K(r)` of a one-component kernel.
#[derive(Debug, Clone)]
pub enum Radial {
    /// Half-integer Matérn: `variance * exp(-rate r) * sum_k coef[k] r^k`.
    ExpPoly { rate: f64, coef: Vec<f64> },
    /// General-order Matérn.
    Matern { nu: f64, rate: f64, ln_norm: f64 },
    Wendland { kappa: f64, mu: f64, phi: f64, inv_beta: f64 },
    /// `exp(-r^2 / (4 sigma^2))`.
    Gaussian { inv4s2: f64 },
}

impl Radial {
    fn from_spec(spec: &KernelSpec) -> Self {
        let d = spec.dim as f64;
        match &spec.family {
            Family::Matern { m0, phi } => {
                let nu = m0 - d / 2.0;
                let rate = 2.0 * phi * nu.sqrt();
                let p = nu - 0.5;
                if p >= 0.0 && p.fract() == 0.0 && p <= 30.0 {
                    let p = p as usize;
                    let lf = |k: usize| lg(k as f64 + 1.0);
                    let coef = (0..=p)
                        .map(|k| {
                            // term i = p - k of the finite Bessel sum
                            let i = p - k;
                            let ln = lf(p) - lf(2 * p) + lf(p + i) - lf(i) - lf(p - i)
                                + k as f64 * (2.0 * rate).ln();
                            ln.exp()
                        })
                        .collect();
                    Radial::ExpPoly { rate, coef }
                } else {
                    let ln_norm = -lg(nu) - (nu - 1.0) * std::f64::consts::LN_2;
                    Radial::Matern { nu, rate, ln_norm }
                }
            }
            Family::GeneralizedWendland { kappa, mu, phi } => Radial::Wendland {
                kappa: *kappa,
                mu: *mu,
                phi: *phi,
                inv_beta: 1.0 / beta_fn(2.0 * kappa, mu + 1.0).expect("validated"),
            },
            Family::Gaussian { sigma } => Radial::Gaussian { inv4s2: 1.0 / (4.0 * sigma * sigma) },
            Family::TensorProduct { .. } => unreachable!("tensor factors are compiled separately"),
        }
    }

    /// Profile at radius `r >= 0`, unit variance.
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Radial::ExpPoly { rate, coef } => {
                let mut p = 0.0;
                for c in coef.iter().rev() {
                    p = p * r + c;
                }
                (-rate * r).exp() * p
            }
            Radial::Matern { nu, rate, ln_norm } => {
                if r < 1e-12 {
                    return 1.0;
                }
                let z = rate * r;
                match ln_bessel_k(*nu, z) {
                    Ok(lk) => (ln_norm + nu * z.ln() + lk).exp().min(1.0),
                    // Only reachable for z so small the value is 1 to double precision.
                    Err(_) => 1.0,
                }
            }
            Radial::Wendland { kappa, mu, phi, inv_beta } => wendland_profile(*kappa, *mu, phi * r, *inv_beta),
            Radial::Gaussian { inv4s2 } => (-r * r * inv4s2).exp(),
        }
    }
}

/// Tanh-sinh nodes and weights on `[0, 1]`.
fn tanh_sinh() -> &'static Vec<(f64, f64, f64)> {
    static RULE: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let h = 1.0 / 32.0;
        let mut out = Vec::new();
        let kmax = (3.3 / h) as i64;
        for k in -kmax..=kmax {
            let t = k as f64 * h;
            let u = 0.5 * PI * t.sinh();
            let c = u.cosh();
            // x in (-1, 1); store distances to both endpoints to avoid cancellation.
            let e = (-2.0 * u.abs()).exp();
            let near = e / (1.0 + e); // (1 - |x|) / 2
            let (lo, hi) = if u < 0.0 { (near, 1.0 - near) } else { (1.0 - near, near) };
            let w = h * 0.5 * PI * t.cosh() / (c * c) * 0.5;
            out.push((lo, hi, w));
        }
        out
    })
}

/// Generalized Wendland profile at scaled radius `s = phi |x|`:
/// `(1/B(2k, mu+1)) int_s^1 u (u^2 - s^2)^(k-1) (1-u)^mu du`.
/// After `u = s + (1 - s) v` both endpoint singularities are algebraic, which
/// the tanh-sinh rule integrates to near machine precision.
fn wendland_profile(kappa: f64, mu: f64, s: f64, inv_beta: f64) -> f64 {
    if s >= 1.0 {
        return 0.0;
    }
    if s <= 0.0 {
        return 1.0;
    }
    let len = 1.0 - s;
    let mut acc = 0.0;
    for &(v, one_minus_v, w) in tanh_sinh() {
        if v <= 0.0 || one_minus_v <= 0.0 {
            continue;
        }
        let u = s + len * v;
        let a = len * v; // u - s
        let f = u * (a * (u + s)).powf(kappa - 1.0) * (len * one_minus_v).powf(mu);
        acc += w * f;
    }
    (inv_beta * acc * len).clamp(0.0, 1.0)
}

/// A validated kernel ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    variance: f64,
    /// One radial profile for isotropic kernels, one per coordinate for tensors.
    parts: Vec<Radial>,
    tensor: bool,
}

impl Kernel {
    fn new(spec: &KernelSpec) -> Self {
        match &spec.family {
            Family::TensorProduct { factors } => Kernel {
                spec: spec.clone(),
                variance: spec.value_at_zero(),
                parts: factors.iter().map(Radial::from_spec).collect(),
                tensor: true,
            },
            _ => Kernel { spec: spec.clone(), variance: spec.variance, parts: vec![Radial::from_spec(spec)], tensor: false },
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn eval(&self, diff: &[f64]) -> f64 {
        if self.tensor {
            let mut v = self.variance;
            for (p, x) in self.parts.iter().zip(diff) {
                v *= p.eval(x.abs());
            }
            v
        } else {
            let r = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            self.variance * self.parts[0].eval(r)
        }
    }

    /// Radial profile of an isotropic kernel (`None` for tensor products).
    pub fn radial(&self) -> Option<&Radial> {
        (!self.tensor).then(|| &self.parts[0])
    }

    /// Per-coordinate profiles of a tensor kernel.
    pub fn factors(&self) -> Option<&[Radial]> {
        self.tensor.then_some(&self.parts[..])
    }

    /// Support radius if compactly supported.
    pub fn support_radius(&self) -> Option<f64> {
        match self.radial()? {
            Radial::Wendland { phi, .. } => Some(1.0 / phi),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_at_zero_is_variance() {
        for d in 1..=3 {
            let k = KernelSpec::matern(d, 5.0 + d as f64 / 2.0, 0.7).unwrap();
            assert_eq!(kernel_eval(&k, &vec![0.0; d]).unwrap(), 1.0);
        }
        let k = KernelSpec::matern(1, 1.3, 1.0).unwrap().with_variance(2.5).unwrap();
        assert_eq!(kernel_eval(&k, &[0.0]).unwrap(), 2.5);
    }

    #[test]
    fn matern_order_half_is_exponential() {
        // m0 = 1, D = 1: nu = 1/2, z = 2 * 1 * sqrt(1/2) * r = sqrt(2) r, K = exp(-z).
        let k = KernelSpec::matern(1, 1.0, 1.0).unwrap();
        let v = kernel_eval(&k, &[0.7]).unwrap();
        assert!((v - (-std::f64::consts::SQRT_2 * 0.7).exp()).abs() < 1e-15);
    }

    #[test]
    fn half_integer_path_matches_bessel_path() {
        // nu = 5/2 goes through the polynomial form; nu = 5/2 + 1e-9 through Bessel.
        let a = KernelSpec::matern(1, 3.0, 0.8).unwrap().compile().unwrap();
        let b = KernelSpec::matern(1, 3.0 + 1e-9, 0.8).unwrap().compile().unwrap();
        assert!(matches!(a.radial(), Some(Radial::ExpPoly { .. })));
        assert!(matches!(b.radial(), Some(Radial::Matern { .. })));
        for &r in &[1e-6, 0.01, 0.3, 1.0, 4.0, 20.0] {
            let (x, y) = (a.eval(&[r]), b.eval(&[r]));
            assert!((x - y).abs() <= 1e-7 * x.max(1e-300), "r = {r}: {x} vs {y}");
        }
    }

    #[test]
    fn classical_parameterization() {
        // nu = 3/2: sigma^2 (1 + sqrt(3) r / rho) exp(-sqrt(3) r / rho)
        let k = KernelSpec::matern_classical(2, 1.5, 0.6, 1.7).unwrap();
        let r: f64 = 0.45;
        let t = 3f64.sqrt() * r / 0.6;
        let v = kernel_eval(&k, &[r * 0.6, r * 0.8]).unwrap();
        assert!((v - 1.7 * (1.0 + t) * (-t).exp()).abs() < 1e-14);
    }

    #[test]
    fn wendland_matches_closed_forms() {
        for &mu in &[2.0, 2.5, 3.7] {
            let k1 = KernelSpec::wendland(1, 1.0, mu, 1.0).unwrap();
            let k2 = KernelSpec::wendland(1, 2.0, mu + 1.0, 1.0).unwrap();
            for i in 0..=20 {
                let r = i as f64 / 20.0;
                let exact1 = (1.0 - r).powf(mu + 1.0) * (1.0 + (mu + 1.0) * r);
                let m = mu + 1.0;
                let exact2 = (1.0 - r).powf(m + 2.0) * (1.0 + (m + 2.0) * r + ((m + 2.0).powi(2) - 1.0) / 3.0 * r * r);
                assert!((kernel_eval(&k1, &[r]).unwrap() - exact1).abs() < 1e-12, "kappa 1, mu {mu}, r {r}");
                assert!((kernel_eval(&k2, &[r]).unwrap() - exact2).abs() < 1e-12, "kappa 2, mu {m}, r {r}");
            }
        }
    }

    #[test]
    fn wendland_compact_support() {
        let k = KernelSpec::wendland(2, 0.5, 3.0, 2.0).unwrap();
        assert_eq!(kernel_eval(&k, &[0.75, 0.0]).unwrap(), 0.0);
        assert_eq!(kernel_eval(&k, &[0.0, 0.5]).unwrap(), 0.0);
        assert!(kernel_eval(&k, &[0.0, 0.49]).unwrap() > 0.0);
    }

    #[test]
    fn spectral_density_at_origin() {
        let (d, m0, phi) = (2usize, 2.3, 0.9);
        let k = KernelSpec::matern(d, m0, phi).unwrap();
        let nu = m0 - 1.0;
        let expect = PI.powf(-1.0) * crate::special::gamma_fn(m0).unwrap() / crate::special::gamma_fn(nu).unwrap()
            * (4.0 * phi * phi * nu).powf(-1.0);
        let got = spectral_density(&k, &[0.0, 0.0]).unwrap();
        assert!((got - expect).abs() < 1e-13 * expect);
        let g = KernelSpec::gaussian(3, 0.4).unwrap();
        assert!((spectral_density(&g, &[0.0; 3]).unwrap() - 0.8f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn wendland_has_no_spectrum() {
        let k = KernelSpec::wendland(1, 1.0, 3.0, 1.0).unwrap();
        assert!(matches!(spectral_density(&k, &[1.0]), Err(KernelError::NoSpectrum(_))));
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::matern(2, 1.0, 1.0).is_err());
        assert!(KernelSpec::matern(1, 1.0, 0.0).is_err());
        assert!(KernelSpec::wendland(1, 1.0, 1.5, 1.0).is_err());
        let f = KernelSpec::matern(1, 1.5, 1.0).unwrap();
        assert!(KernelSpec::tensor(vec![f.clone(), f.clone()]).is_ok());
        let bad = KernelSpec { family: Family::TensorProduct { factors: vec![f] }, variance: 1.0, dim: 2 };
        assert!(bad.validate().is_err());
    }
}
