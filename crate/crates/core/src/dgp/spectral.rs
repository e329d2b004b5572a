//! Symmetric finite operators with a prescribed spectrum.
//!
//! With uniform margins, `P = Σ_k (λ_k − λ_{k+1}) P_k` over the nested
//! partitions `{0..K−k−1}, {K−k}, …, {K−1}` is a symmetric doubly stochastic
//! matrix whose eigenvalues are exactly `λ_0 = 1 ≥ λ_1 ≥ … ≥ λ_{K−1} ≥ 0`, with
//! Helmert-type eigenvectors. This gives conditional-expectation operators
//! whose singular system is known in closed form.

use serde::{Deserialize, Serialize};

use super::discrete::{DiscreteDgp, DiscreteFunctional};
use crate::error::{Error, Result};

fn default_noise() -> f64 {
    0.2
}

/// Validates a spectrum usable by [`nested_operator`].
pub fn check_spectrum(sigma: &[f64]) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    if sigma[0] != 1.0 {
        return Err(Error::InvalidParameter("a stochastic operator has leading singular value 1".into()));
    }
    if sigma.iter().any(|s| !(0.0..=1.0).contains(s)) || sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("singular values must be non-increasing in [0, 1]".into()));
    }
    Ok(())
}

/// `P[x][z] = P(X = x | Z = z)` with the given spectrum.
pub fn nested_operator(sigma: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_spectrum(sigma)?;
    let k = sigma.len();
    let mut p = vec![vec![0.0; k]; k];
    for level in 0..k {
        let next = if level + 1 < k { sigma[level + 1] } else { 0.0 };
        let c = sigma[level] - next;
        if c == 0.0 {
            continue;
        }
        let m = k - level;
        for (x, row) in p.iter_mut().enumerate() {
            for (z, v) in row.iter_mut().enumerate() {
                if x < m && z < m {
                    *v += c / m as f64;
                } else if x == z {
                    *v += c;
                }
            }
        }
    }
    Ok(p)
}

/// Orthonormal eigenfunctions under the uniform law; `basis[i]` belongs to `σ_i`.
pub fn nested_basis(k: usize) -> Vec<Vec<f64>> {
    let mut basis = vec![vec![1.0; k]];
    for i in 1..k {
        let j = k - i;
        let norm = ((j + j * j) as f64 / k as f64).sqrt();
        let mut v = vec![0.0; k];
        for item in v.iter_mut().take(j) {
            *item = 1.0 / norm;
        }
        v[j] = -(j as f64) / norm;
        basis.push(v);
    }
    basis
}

/// Symmetric design: primal and dual solutions given by spectral coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDesign {
    pub singular_values: Vec<f64>,
    /// Coefficients of `h0`, or of `w` when `h_beta` is set.
    pub h_coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_beta: Option<f64>,
    /// Coefficients of `q0`, or of its `w` when `q_beta` is set.
    pub q_coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_beta: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise_half_width: f64,
}

fn powered(sigma: &[f64], coeffs: &[f64], beta: Option<f64>, what: &str) -> Result<Vec<f64>> {
    if coeffs.len() != sigma.len() {
        return Err(Error::Dimension(format!("{what} has {} coefficients for {} states", coeffs.len(), sigma.len())));
    }
    let mut out = Vec::with_capacity(coeffs.len());
    for (i, (&s, &c)) in sigma.iter().zip(coeffs).enumerate() {
        if s == 0.0 && c != 0.0 {
            return Err(Error::InvalidParameter(format!("{what}[{i}] loads on a zero singular value")));
        }
        out.push(match beta {
            Some(b) => s.powf(b) * c,
            None => c,
        });
    }
    Ok(out)
}

impl SpectralDesign {
    /// Spectral coefficients of `h0`.
    pub fn h_spectral(&self) -> Result<Vec<f64>> {
        powered(&self.singular_values, &self.h_coeffs, self.h_beta, "h_coeffs")
    }

    /// Spectral coefficients of `q0`.
    pub fn q_spectral(&self) -> Result<Vec<f64>> {
        powered(&self.singular_values, &self.q_coeffs, self.q_beta, "q_coeffs")
    }

    pub fn to_dgp(&self) -> Result<DiscreteDgp> {
        let k = self.singular_values.len();
        let cond_xz = nested_operator(&self.singular_values)?;
        let basis = nested_basis(k);
        let a = self.h_spectral()?;
        let b = self.q_spectral()?;
        let combine = |c: &[f64]| -> Vec<f64> {
            (0..k).map(|x| basis.iter().zip(c).map(|(v, ci)| v[x] * ci).sum()).collect()
        };
        let outcome_mean = combine(&a);
        let sb: Vec<f64> = b.iter().zip(&self.singular_values).map(|(bi, s)| bi * s).collect();
        let omega = combine(&sb);
        Ok(DiscreteDgp {
            pz: vec![1.0 / k as f64; k],
            cond_xz,
            outcome_mean,
            reduced_form: None,
            noise_half_width: self.noise_half_width,
            x_codes: None,
            z_codes: None,
            functional: DiscreteFunctional::WeightedAverage { omega },
        })
    }
}

/// Which side of the problem carries the well-posed solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PrimalWellPosed,
    DualWellPosed,
}

impl Scenario {
    pub const BOTH: [Scenario; 2] = [Scenario::PrimalWellPosed, Scenario::DualWellPosed];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::PrimalWellPosed => "primal_well_posed",
            Scenario::DualWellPosed => "dual_well_posed",
        }
    }
}

/// One well-posed and one severely ill-posed solution on a shared operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceDrDesign {
    pub singular_values: Vec<f64>,
    pub well_w: Vec<f64>,
    pub ill_w: Vec<f64>,
    pub beta_well: f64,
    pub beta_ill: f64,
    #[serde(default = "default_noise")]
    pub noise_half_width: f64,
}

impl SourceDrDesign {
    pub fn scenario(&self, s: Scenario) -> SpectralDesign {
        let (hw, hb, qw, qb) = match s {
            Scenario::PrimalWellPosed => (&self.well_w, self.beta_well, &self.ill_w, self.beta_ill),
            Scenario::DualWellPosed => (&self.ill_w, self.beta_ill, &self.well_w, self.beta_well),
        };
        SpectralDesign {
            singular_values: self.singular_values.clone(),
            h_coeffs: hw.clone(),
            h_beta: Some(hb),
            q_coeffs: qw.clone(),
            q_beta: Some(qb),
            noise_half_width: self.noise_half_width,
        }
    }
}
