//! Finite-support models: exact minimum-norm solutions by weighted pseudo-inverse.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{beta_report, GroundTruth, TruthModel};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::random::Rng;

/// Tolerance for the range conditions `r0 ∈ R(T)` and `a0 ∈ R(T*)`.
pub const RANGE_TOL: f64 = 1e-8;
/// Singular values below this are treated as exact zeros.
pub const RANK_TOL: f64 = 1e-10;

fn default_noise() -> f64 {
    0.2
}

/// Functional of `h` whose representer `a0` the model computes exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscreteFunctional {
    /// `E[ω(X) h(X)]` with `ω` given per X state.
    WeightedAverage { omega: Vec<f64> },
    /// `E[h(t1(X)) − h(t0(X))]` where `t_k` sets `coordinate` of the X code.
    EvalDifference { coordinate: usize, treated: f64, control: f64 },
}

/// A joint law of `(X, Z)` on finite supports with outcome `Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    /// Marginal of Z.
    pub pz: Vec<f64>,
    /// `cond_xz[x][z] = P(X = x | Z = z)`.
    pub cond_xz: Vec<Vec<f64>>,
    /// Structural function `g` over X states; `E[Y | Z] = (T g)(Z)` unless
    /// `reduced_form` overrides it.
    pub outcome_mean: Vec<f64>,
    /// `E[Y | Z = z]` when it differs from `T g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_form: Option<Vec<f64>>,
    /// Outcome noise is uniform on `[−η, η]`.
    #[serde(default = "default_noise")]
    pub noise_half_width: f64,
    /// Coordinates written to the data for each X state (default: the index).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_codes: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_codes: Option<Vec<Vec<f64>>>,
    pub functional: DiscreteFunctional,
}

impl DiscreteDgp {
    pub fn kx(&self) -> usize {
        self.cond_xz.len()
    }

    pub fn kz(&self) -> usize {
        self.pz.len()
    }

    fn codes(codes: &Option<Vec<Vec<f64>>>, k: usize, what: &str) -> Result<Vec<Vec<f64>>> {
        match codes {
            None => Ok((0..k).map(|i| vec![i as f64]).collect()),
            Some(c) => {
                if c.len() != k {
                    return Err(Error::Dimension(format!("{what} has {} codes for {k} states", c.len())));
                }
                let w = c.first().map(Vec::len).unwrap_or(0);
                if w == 0 || c.iter().any(|r| r.len() != w) {
                    return Err(Error::Dimension(format!("{what} codes must share a positive width")));
                }
                for i in 0..k {
                    for j in 0..i {
                        if c[i] == c[j] {
                            return Err(Error::InvalidParameter(format!("{what} states {j} and {i} share a code")));
                        }
                    }
                }
                Ok(c.clone())
            }
        }
    }

    pub fn x_codes(&self) -> Result<Vec<Vec<f64>>> {
        Self::codes(&self.x_codes, self.kx(), "x")
    }

    pub fn z_codes(&self) -> Result<Vec<Vec<f64>>> {
        Self::codes(&self.z_codes, self.kz(), "z")
    }

    pub fn validate(&self) -> Result<()> {
        let (kx, kz) = (self.kx(), self.kz());
        if kx == 0 || kz == 0 {
            return Err(Error::Dimension("empty support".into()));
        }
        if self.pz.iter().any(|&p| !(p >= 0.0)) || (self.pz.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("pz must be a probability vector".into()));
        }
        for (x, row) in self.cond_xz.iter().enumerate() {
            if row.len() != kz {
                return Err(Error::Dimension(format!("cond_xz row {x} has {} entries, expected {kz}", row.len())));
            }
        }
        for z in 0..kz {
            let col: f64 = self.cond_xz.iter().map(|r| r[z]).sum();
            if self.cond_xz.iter().any(|r| !(r[z] >= 0.0)) || (col - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("cond_xz column {z} is not a distribution")));
            }
        }
        if self.outcome_mean.len() != kx {
            return Err(Error::Dimension("outcome_mean must have one entry per X state".into()));
        }
        if let Some(r) = &self.reduced_form {
            if r.len() != kz {
                return Err(Error::Dimension("reduced_form must have one entry per Z state".into()));
            }
        }
        if !(self.noise_half_width >= 0.0) {
            return Err(Error::InvalidParameter("noise_half_width must be nonnegative".into()));
        }
        if let DiscreteFunctional::WeightedAverage { omega } = &self.functional {
            if omega.len() != kx {
                return Err(Error::Dimension("omega must have one entry per X state".into()));
            }
        }
        self.x_codes()?;
        self.z_codes()?;
        Ok(())
    }

    pub fn px(&self) -> Vec<f64> {
        self.cond_xz.iter().map(|row| row.iter().zip(&self.pz).map(|(c, p)| c * p).sum()).collect()
    }
}

/// Exact quantities of a finite model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTruth {
    pub px: Vec<f64>,
    pub pz: Vec<f64>,
    pub cond_xz: Vec<Vec<f64>>,
    pub x_codes: Vec<Vec<f64>>,
    pub z_codes: Vec<Vec<f64>>,
    pub h0: Vec<f64>,
    pub q0: Vec<f64>,
    pub a0: Vec<f64>,
    pub r0: Vec<f64>,
    /// Singular values of `T` as a map `L2(P_X) → L2(P_Z)`, descending.
    pub singular_values: Vec<f64>,
    /// `right_vectors[i]` is `v_i` tabulated over X states.
    pub right_vectors: Vec<Vec<f64>>,
    /// `left_vectors[i]` is `u_i` tabulated over Z states.
    pub left_vectors: Vec<Vec<f64>>,
}

impl DiscreteTruth {
    pub fn x_state(&self, p: &[f64]) -> Option<usize> {
        self.x_codes.iter().position(|c| c.as_slice() == p)
    }

    pub fn z_state(&self, p: &[f64]) -> Option<usize> {
        self.z_codes.iter().position(|c| c.as_slice() == p)
    }

    pub fn tabulate_x(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        self.x_codes.iter().map(|c| f(c)).collect()
    }

    pub fn tabulate_z(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        self.z_codes.iter().map(|c| f(c)).collect()
    }

    pub fn joint(&self, x: usize, z: usize) -> f64 {
        self.cond_xz[x][z] * self.pz[z]
    }

    /// `(T g)(z) = Σ_x P(x | z) g(x)`.
    pub fn apply_t(&self, g: &[f64]) -> Vec<f64> {
        (0..self.pz.len()).map(|z| self.cond_xz.iter().zip(g).map(|(row, gx)| row[z] * gx).sum()).collect()
    }

    /// `(T* f)(x) = Σ_z P(z | x) f(z)`.
    pub fn apply_t_adjoint(&self, f: &[f64]) -> Vec<f64> {
        self.cond_xz
            .iter()
            .zip(&self.px)
            .map(|(row, &px)| row.iter().zip(&self.pz).zip(f).map(|((c, pz), fz)| c * pz * fz).sum::<f64>() / px)
            .collect()
    }

    pub fn norm_sq_x(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.px).map(|(v, p)| p * v * v).sum()
    }

    pub fn norm_sq_z(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.pz).map(|(v, p)| p * v * v).sum()
    }

    /// `⟨g, v_i⟩` in `L2(P_X)` for every right singular vector.
    pub fn spectral_coefficients_x(&self, g: &[f64]) -> Vec<f64> {
        self.right_vectors.iter().map(|v| v.iter().zip(g).zip(&self.px).map(|((a, b), p)| p * a * b).sum()).collect()
    }

    /// `⟨f, u_i⟩` in `L2(P_Z)` for every left singular vector.
    pub fn spectral_coefficients_z(&self, f: &[f64]) -> Vec<f64> {
        self.left_vectors.iter().map(|u| u.iter().zip(f).zip(&self.pz).map(|((a, b), p)| p * a * b).sum()).collect()
    }
}

fn x_index_after_shift(codes: &[Vec<f64>], x: usize, coordinate: usize, value: f64) -> Result<usize> {
    if coordinate >= codes[x].len() {
        return Err(Error::Dimension(format!("shift coordinate {coordinate} out of range")));
    }
    let mut c = codes[x].clone();
    c[coordinate] = value;
    codes
        .iter()
        .position(|k| *k == c)
        .ok_or_else(|| Error::InvalidParameter(format!("shifted code {c:?} of X state {x} is not in the support")))
}

/// Representer `a0` of the functional over X states.
pub fn representer(dgp: &DiscreteDgp, px: &[f64], codes: &[Vec<f64>]) -> Result<Vec<f64>> {
    match &dgp.functional {
        DiscreteFunctional::WeightedAverage { omega } => Ok(omega.clone()),
        DiscreteFunctional::EvalDifference { coordinate, treated, control } => {
            let mut mass = vec![0.0; px.len()];
            for x in 0..px.len() {
                mass[x_index_after_shift(codes, x, *coordinate, *treated)?] += px[x];
                mass[x_index_after_shift(codes, x, *coordinate, *control)?] -= px[x];
            }
            Ok(mass.iter().zip(px).map(|(m, p)| m / p).collect())
        }
    }
}

fn scale(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0)
}

/// Ground truth of a finite model.
pub fn discrete_ground_truth(dgp: &DiscreteDgp) -> Result<GroundTruth> {
    dgp.validate()?;
    let (kx, kz) = (dgp.kx(), dgp.kz());
    let px = dgp.px();
    if let Some(x) = px.iter().position(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter(format!("X state {x} has zero probability")));
    }
    if let Some(z) = dgp.pz.iter().position(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter(format!("Z state {z} has zero probability")));
    }
    let x_codes = dgp.x_codes()?;
    let z_codes = dgp.z_codes()?;
    let sx: Vec<f64> = px.iter().map(|p| p.sqrt()).collect();
    let sz: Vec<f64> = dgp.pz.iter().map(|p| p.sqrt()).collect();

    // A = D_z^{1/2} T D_x^{-1/2} is T written in orthonormal coordinates.
    let a = DMatrix::from_fn(kz, kx, |z, x| sz[z] * dgp.cond_xz[x][z] / sx[x]);
    let (svals, u, v) = thin_svd(&a, 0.0);

    let tg: Vec<f64> =
        (0..kz).map(|z| (0..kx).map(|x| dgp.cond_xz[x][z] * dgp.outcome_mean[x]).sum()).collect();
    let r0 = dgp.reduced_form.clone().unwrap_or(tg);
    let b: Vec<f64> = r0.iter().zip(&sz).map(|(r, s)| r * s).collect();

    let x_codes_ref = &x_codes;
    let a0 = representer(dgp, &px, x_codes_ref)?;
    let c: Vec<f64> = a0.iter().zip(&sx).map(|(v, s)| v * s).collect();

    let mut h_tilde = vec![0.0; kx];
    let mut q_tilde = vec![0.0; kz];
    let mut singular_values = Vec::with_capacity(svals.len());
    let mut right_vectors = Vec::with_capacity(svals.len());
    let mut left_vectors = Vec::with_capacity(svals.len());
    for (i, &s) in svals.iter().enumerate() {
        let ui: Vec<f64> = u.column(i).iter().copied().collect();
        let vi: Vec<f64> = v.column(i).iter().copied().collect();
        if s > RANK_TOL {
            let ub: f64 = ui.iter().zip(&b).map(|(p, q)| p * q).sum();
            let vc: f64 = vi.iter().zip(&c).map(|(p, q)| p * q).sum();
            for x in 0..kx {
                h_tilde[x] += vi[x] * ub / s;
            }
            for z in 0..kz {
                q_tilde[z] += ui[z] * vc / s;
            }
        }
        singular_values.push(if s > RANK_TOL { s } else { 0.0 });
        right_vectors.push(vi.iter().zip(&sx).map(|(v, s)| v / s).collect::<Vec<f64>>());
        left_vectors.push(ui.iter().zip(&sz).map(|(v, s)| v / s).collect::<Vec<f64>>());
    }

    let ah = &a * nalgebra::DVector::from_column_slice(&h_tilde);
    let residual = ah.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    if residual > RANGE_TOL * scale(&b) {
        return Err(Error::PrimalInfeasible { residual });
    }
    let aq = a.tr_mul(&nalgebra::DVector::from_column_slice(&q_tilde));
    let residual = aq.iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    if residual > RANGE_TOL * scale(&c) {
        return Err(Error::DualInfeasible { residual });
    }

    let h0: Vec<f64> = h_tilde.iter().zip(&sx).map(|(v, s)| v / s).collect();
    let q0: Vec<f64> = q_tilde.iter().zip(&sz).map(|(v, s)| v / s).collect();
    let theta0 = px.iter().zip(&a0).zip(&h0).map(|((p, a), h)| p * a * h).sum();

    let truth = DiscreteTruth {
        px,
        pz: dgp.pz.clone(),
        cond_xz: dgp.cond_xz.clone(),
        x_codes,
        z_codes,
        h0,
        q0,
        a0,
        r0,
        singular_values,
        right_vectors,
        left_vectors,
    };
    let beta_h = beta_report(&truth.singular_values, &truth.spectral_coefficients_x(&truth.h0));
    let beta_q = beta_report(&truth.singular_values, &truth.spectral_coefficients_z(&truth.q0));
    Ok(GroundTruth { theta0, beta_h, beta_q, model: TruthModel::Discrete(truth) })
}

/// Draws samples from a finite model.
#[derive(Clone, Debug)]
pub struct DiscreteSampler {
    cum_z: Vec<f64>,
    cum_x_given_z: Vec<Vec<f64>>,
    x_codes: Vec<Vec<f64>>,
    z_codes: Vec<Vec<f64>>,
    y_x: Vec<f64>,
    y_z: Vec<f64>,
    omega: Option<Vec<f64>>,
    eta: f64,
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

impl DiscreteSampler {
    pub fn new(dgp: &DiscreteDgp, truth: &DiscreteTruth) -> Self {
        let kz = dgp.kz();
        let tg = truth.apply_t(&dgp.outcome_mean);
        let y_z = (0..kz).map(|z| truth.r0[z] - tg[z]).collect();
        let omega = match &dgp.functional {
            DiscreteFunctional::WeightedAverage { omega } => Some(omega.clone()),
            DiscreteFunctional::EvalDifference { .. } => None,
        };
        Self {
            cum_z: cumulative(dgp.pz.iter().copied()),
            cum_x_given_z: (0..kz).map(|z| cumulative(dgp.cond_xz.iter().map(|r| r[z]))).collect(),
            x_codes: truth.x_codes.clone(),
            z_codes: truth.z_codes.clone(),
            y_x: dgp.outcome_mean.clone(),
            y_z,
            omega,
            eta: dgp.noise_half_width,
        }
    }

    /// State indices and outcome for one draw.
    pub fn draw_one(&self, rng: &mut Rng) -> (usize, usize, f64) {
        let z = draw(&self.cum_z, rng.random::<f64>());
        let x = draw(&self.cum_x_given_z[z], rng.random::<f64>());
        let noise = self.eta * (2.0 * rng.random::<f64>() - 1.0);
        (x, z, self.y_x[x] + self.y_z[z] + noise)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> super::SampledColumns {
        let mut out = super::SampledColumns::new(self.x_codes[0].len(), self.z_codes[0].len());
        let mut omega = Vec::with_capacity(if self.omega.is_some() { n } else { 0 });
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, z, yi) = self.draw_one(rng);
            out.x.extend_from_slice(&self.x_codes[x]);
            out.z.extend_from_slice(&self.z_codes[z]);
            y.push(yi);
            if let Some(w) = &self.omega {
                omega.push(w[x]);
            }
        }
        out.columns.insert("y".into(), y);
        if self.omega.is_some() {
            out.columns.insert("omega".into(), omega);
        }
        out
    }
}
