//! Jointly Gaussian instrument and regressor, squashed into `(−1, 1)`.
//!
//! For standard bivariate normal `(S_X, S_Z)` with correlation `ρ`, the
//! conditional expectation operator is diagonal in the normalized Hermite
//! functions `φ_i = He_i/√i!` with singular values `ρ^i`. The observed
//! variables are `tanh(S/2)`, and the basis is composed with the inverse map so
//! the spectrum is unchanged.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{beta_report, GroundTruth, SampledColumns, TruthModel};
use crate::error::{Error, Result};
use crate::random::Rng;

/// Quadrature nodes used by the metric evaluators.
pub const QUADRATURE_NODES: usize = 96;
/// Upper limit on the number of Hermite terms kept in `q0`.
pub const MAX_DUAL_TERMS: usize = 400;

fn default_w() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GaussianFunctional {
    /// `E[h(X)]`
    #[default]
    Mean,
    /// `E[∂h(X)/∂X]`
    PriceDerivative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairConfig {
    pub rho: f64,
    pub beta: f64,
    /// Source element `w0` in the Hermite basis, starting at the constant.
    #[serde(default = "default_w")]
    pub w: Vec<f64>,
    #[serde(default = "default_noise")]
    pub noise_half_width: f64,
    #[serde(default)]
    pub functional: GaussianFunctional,
}

impl GaussianPairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.1 && self.rho < 0.95) {
            return Err(Error::InvalidParameter(format!("ρ = {} outside (0.1, 0.95)", self.rho)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!("β = {} must be nonnegative", self.beta)));
        }
        if self.w.is_empty() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("w must be a nonempty finite vector".into()));
        }
        if !(self.noise_half_width >= 0.0) {
            return Err(Error::InvalidParameter("noise_half_width must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn squash(s: f64) -> f64 {
    (0.5 * s).tanh()
}

pub fn unsquash(x: f64) -> f64 {
    2.0 * x.atanh()
}

/// `φ_0(s), …, φ_{k−1}(s)` with `φ_i = He_i/√i!`.
pub fn hermite_functions(s: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return out;
    }
    out.push(1.0);
    if k > 1 {
        out.push(s);
    }
    for i in 1..k.saturating_sub(1) {
        let next = (s * out[i] - (i as f64).sqrt() * out[i - 1]) / ((i + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Gauss–Hermite rule for the standard normal law (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |a, b| if a + 1 == b || b + 1 == a { (a.max(b) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)] * eig.eigenvectors[(0, i)])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[∂φ_i(X)/∂X]` in observed coordinates.
pub fn derivative_moment(i: usize) -> f64 {
    if i.is_multiple_of(2) {
        return 0.0;
    }
    let ln_fact: f64 = (1..=i).map(|k| (k as f64).ln()).sum();
    let tail = ((i as f64).ln() + 0.5 - 0.5 * ln_fact).exp();
    if i == 1 {
        1.0 + tail
    } else {
        tail
    }
}

/// Exact quantities of the Gaussian pair model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTruth {
    pub rho: f64,
    pub functional: GaussianFunctional,
    /// Hermite coefficients of `h0`.
    pub h_coeffs: Vec<f64>,
    /// Hermite coefficients of `q0`.
    pub q_coeffs: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn series(coeffs: &[f64], x: f64) -> f64 {
    let phi = hermite_functions(unsquash(x), coeffs.len());
    phi.iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

impl GaussianTruth {
    pub fn h0(&self, x: f64) -> f64 {
        series(&self.h_coeffs, x)
    }

    pub fn q0(&self, z: f64) -> f64 {
        series(&self.q_coeffs, z)
    }

    pub fn r0(&self, z: f64) -> f64 {
        let c: Vec<f64> = self.h_coeffs.iter().enumerate().map(|(i, a)| self.rho.powi(i as i32) * a).collect();
        series(&c, z)
    }

    pub fn a0(&self, x: f64) -> f64 {
        match self.functional {
            GaussianFunctional::Mean => 1.0,
            GaussianFunctional::PriceDerivative => 2.0 * (unsquash(x) - x) / (1.0 - x * x),
        }
    }

    /// `E[f(V)²]`; both margins are the same squashed normal law.
    pub fn norm_sq(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(s, w)| w * f(squash(*s)).powi(2)).sum()
    }

    /// `E[(E[f(V) | U])²]` for the other variable `U`; symmetric in X and Z.
    pub fn weak_norm_sq(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        let c = (1.0 - self.rho * self.rho).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| {
                let inner: f64 =
                    self.nodes.iter().zip(&self.weights).map(|(e, v)| v * f(squash(self.rho * s + c * e))).sum();
                w * inner * inner
            })
            .sum()
    }

    /// `E[g(V)]` under the squashed normal law.
    pub fn expect(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(s, w)| w * f(squash(*s))).sum()
    }

    /// `E[g(X) f(Z)]` under the joint law.
    pub fn expect_joint(&self, g: &dyn Fn(f64) -> f64, f: &dyn Fn(f64) -> f64) -> f64 {
        let c = (1.0 - self.rho * self.rho).sqrt();
        let mut acc = 0.0;
        for (s, w) in self.nodes.iter().zip(&self.weights) {
            let fz = f(squash(*s));
            for (e, v) in self.nodes.iter().zip(&self.weights) {
                acc += w * v * fz * g(squash(self.rho * s + c * e));
            }
        }
        acc
    }
}

/// Ground truth of the Gaussian pair model.
pub fn gaussian_ground_truth(cfg: &GaussianPairConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let sigma: Vec<f64> = (0..cfg.w.len()).map(|i| cfg.rho.powi(i as i32)).collect();
    let h_coeffs: Vec<f64> = cfg.w.iter().zip(&sigma).map(|(w, s)| s.powf(cfg.beta) * w).collect();
    let (q_coeffs, theta0) = match cfg.functional {
        GaussianFunctional::Mean => (vec![1.0], h_coeffs[0]),
        GaussianFunctional::PriceDerivative => {
            let mut q = Vec::new();
            let mut peak: f64 = 0.0;
            for i in 0..MAX_DUAL_TERMS {
                let b = derivative_moment(i) / cfg.rho.powi(i as i32);
                if !b.is_finite() {
                    return Err(Error::InvalidParameter("dual series overflows; increase ρ".into()));
                }
                peak = peak.max(b.abs());
                q.push(b);
                if i > 2 && i % 2 == 1 && b.abs() < 1e-14 * peak {
                    break;
                }
            }
            let theta0 = h_coeffs.iter().enumerate().map(|(i, a)| a * derivative_moment(i)).sum();
            (q, theta0)
        }
    };
    let (nodes, weights) = gauss_hermite(QUADRATURE_NODES);
    let q_sigma: Vec<f64> = (0..q_coeffs.len()).map(|i| cfg.rho.powi(i as i32)).collect();
    let beta_h = beta_report(&sigma, &h_coeffs);
    let beta_q = beta_report(&q_sigma, &q_coeffs);
    let truth = GaussianTruth { rho: cfg.rho, functional: cfg.functional, h_coeffs, q_coeffs, nodes, weights };
    Ok(GroundTruth { theta0, beta_h, beta_q, model: TruthModel::GaussianPair(truth) })
}

#[derive(Clone, Debug)]
pub struct GaussianSampler {
    rho: f64,
    h_coeffs: Vec<f64>,
    eta: f64,
}

impl GaussianSampler {
    pub fn new(cfg: &GaussianPairConfig, truth: &GaussianTruth) -> Self {
        Self { rho: cfg.rho, h_coeffs: truth.h_coeffs.clone(), eta: cfg.noise_half_width }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> SampledColumns {
        let mut out = SampledColumns::new(1, 1);
        let mut y = Vec::with_capacity(n);
        let c = (1.0 - self.rho * self.rho).sqrt();
        for _ in 0..n {
            let sz: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let x = squash(self.rho * sz + c * e);
            let noise = self.eta * (2.0 * rng.random::<f64>() - 1.0);
            out.x.push(x);
            out.z.push(squash(sz));
            y.push(series(&self.h_coeffs, x) + noise);
        }
        out.columns.insert("y".into(), y);
        out
    }
}
