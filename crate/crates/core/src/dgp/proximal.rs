//! Finite proximal causal model with an outcome bridge function.
//!
//! Latent `U`, covariate `X`, treatment proxy `Z`, outcome proxy `Q`, binary
//! treatment `D` and outcome `Y`, generated as `U → X`, `(U,X) → Z`,
//! `(U,X,Z) → D`, `(U,X) → Q` and `E[Y | U,X,D] = Σ_q P(q | U,X) b(X,q,D)`.
//! Then `E[Y − b(X,Q,D) | X,Z,D] = 0`, so `b` solves the inverse problem with
//! hypothesis states `(x,q,d)` and instrument states `(x,z,d)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::discrete::{discrete_ground_truth, DiscreteDgp, DiscreteFunctional};
use super::{GroundTruth, SampledColumns};
use crate::error::{Error, Result};
use crate::random::{seeded, Rng};

/// Overlap bounds on `P(D = 1 | X, Q)`.
pub const OVERLAP: (f64, f64) = (0.1, 0.9);

fn two() -> usize {
    2
}

fn default_range() -> (f64, f64) {
    (0.2, 0.8)
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximalConfig {
    /// Seed for the random conditional tables.
    pub seed: u64,
    #[serde(default = "two")]
    pub n_u: usize,
    #[serde(default = "two")]
    pub n_x: usize,
    #[serde(default = "two")]
    pub n_z: usize,
    #[serde(default = "two")]
    pub n_q: usize,
    /// Range of the random propensities `P(D = 1 | u, x, z)`.
    #[serde(default = "default_range")]
    pub propensity_range: (f64, f64),
    /// Explicit propensity table indexed `[(u·n_x + x)·n_z + z]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<Vec<f64>>,
    /// Explicit bridge `b(x,q,d)` indexed `[(x·n_q + q)·2 + d]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<Vec<f64>>,
    /// Force `b(x,q,1) = b(x,q,0)`.
    #[serde(default)]
    pub null_effect: bool,
    #[serde(default = "default_noise")]
    pub noise_half_width: f64,
}

impl ProximalConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            n_u: 2,
            n_x: 2,
            n_z: 2,
            n_q: 2,
            propensity_range: default_range(),
            propensity: None,
            bridge: None,
            null_effect: false,
            noise_half_width: default_noise(),
        }
    }
}

/// The drawn conditional tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximalModel {
    pub cfg: ProximalConfig,
    pub pu: Vec<f64>,
    /// `[u][x]`
    pub px_u: Vec<Vec<f64>>,
    /// `[u·n_x + x][z]`
    pub pz_ux: Vec<Vec<f64>>,
    /// `[(u·n_x + x)·n_z + z]`
    pub prop: Vec<f64>,
    /// `[u·n_x + x][q]`
    pub pq_ux: Vec<Vec<f64>>,
    /// `[(x·n_q + q)·2 + d]`
    pub bridge: Vec<f64>,
}

fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|p| p / s).collect()
}

impl ProximalModel {
    pub fn new(cfg: &ProximalConfig) -> Result<Self> {
        let c = cfg;
        if [c.n_u, c.n_x, c.n_z, c.n_q].contains(&0) {
            return Err(Error::InvalidParameter("proximal supports must be nonempty".into()));
        }
        let (lo, hi) = c.propensity_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidParameter("propensity_range must lie in (0, 1)".into()));
        }
        let mut rng = seeded(c.seed);
        let pu = random_simplex(&mut rng, c.n_u);
        let px_u: Vec<Vec<f64>> = (0..c.n_u).map(|_| random_simplex(&mut rng, c.n_x)).collect();
        let pz_ux: Vec<Vec<f64>> = (0..c.n_u * c.n_x).map(|_| random_simplex(&mut rng, c.n_z)).collect();
        let pq_ux: Vec<Vec<f64>> = (0..c.n_u * c.n_x).map(|_| random_simplex(&mut rng, c.n_q)).collect();
        let random_prop: Vec<f64> = (0..c.n_u * c.n_x * c.n_z).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        let prop = match &c.propensity {
            Some(p) if p.len() != random_prop.len() => {
                return Err(Error::Dimension(format!("propensity needs {} entries", random_prop.len())))
            }
            Some(p) => p.clone(),
            None => random_prop,
        };
        if prop.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("propensities must lie in [0, 1]".into()));
        }
        let random_bridge: Vec<f64> = (0..c.n_x * c.n_q * 2).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut bridge = match &c.bridge {
            Some(b) if b.len() != random_bridge.len() => {
                return Err(Error::Dimension(format!("bridge needs {} entries", random_bridge.len())))
            }
            Some(b) => b.clone(),
            None => random_bridge,
        };
        if c.null_effect {
            for pair in bridge.chunks_exact_mut(2) {
                pair[1] = pair[0];
            }
        }
        Ok(Self { cfg: c.clone(), pu, px_u, pz_ux, prop, pq_ux, bridge })
    }

    pub fn hyp_index(&self, x: usize, q: usize, d: usize) -> usize {
        (x * self.cfg.n_q + q) * 2 + d
    }

    pub fn inst_index(&self, x: usize, z: usize, d: usize) -> usize {
        (x * self.cfg.n_z + z) * 2 + d
    }

    /// `E[Y | U = u, X = x, D = d]`.
    pub fn outcome_mean(&self, u: usize, x: usize, d: usize) -> f64 {
        let ux = u * self.cfg.n_x + x;
        (0..self.cfg.n_q).map(|q| self.pq_ux[ux][q] * self.bridge[self.hyp_index(x, q, d)]).sum()
    }

    /// `P(U=u, X=x, Z=z, D=d, Q=q)`.
    pub fn joint(&self, u: usize, x: usize, z: usize, d: usize, q: usize) -> f64 {
        let ux = u * self.cfg.n_x + x;
        let pi = self.prop[ux * self.cfg.n_z + z];
        let pd = if d == 1 { pi } else { 1.0 - pi };
        self.pu[u] * self.px_u[u][x] * self.pz_ux[ux][z] * pd * self.pq_ux[ux][q]
    }

    /// `P(D = 1 | X = x, Q = q)` for every `(x, q)`.
    pub fn treatment_given_xq(&self) -> Vec<f64> {
        let c = &self.cfg;
        let mut out = Vec::with_capacity(c.n_x * c.n_q);
        for x in 0..c.n_x {
            for q in 0..c.n_q {
                let (mut num, mut den) = (0.0, 0.0);
                for u in 0..c.n_u {
                    for z in 0..c.n_z {
                        let p1 = self.joint(u, x, z, 1, q);
                        num += p1;
                        den += p1 + self.joint(u, x, z, 0, q);
                    }
                }
                out.push(num / den);
            }
        }
        out
    }

    /// The induced finite inverse problem.
    pub fn to_dgp(&self) -> Result<DiscreteDgp> {
        let c = &self.cfg;
        for (state, &p) in self.treatment_given_xq().iter().enumerate() {
            if !(OVERLAP.0..=OVERLAP.1).contains(&p) {
                return Err(Error::Overlap { state, prob: p });
            }
        }
        let kh = c.n_x * c.n_q * 2;
        let ki = c.n_x * c.n_z * 2;
        let mut joint = vec![vec![0.0; ki]; kh];
        let mut y_mass = vec![0.0; ki];
        for u in 0..c.n_u {
            for x in 0..c.n_x {
                for z in 0..c.n_z {
                    for d in 0..2 {
                        let mu = self.outcome_mean(u, x, d);
                        for q in 0..c.n_q {
                            let p = self.joint(u, x, z, d, q);
                            joint[self.hyp_index(x, q, d)][self.inst_index(x, z, d)] += p;
                            y_mass[self.inst_index(x, z, d)] += p * mu;
                        }
                    }
                }
            }
        }
        let pz: Vec<f64> = (0..ki).map(|r| joint.iter().map(|row| row[r]).sum()).collect();
        let cond_xz = joint.iter().map(|row| row.iter().zip(&pz).map(|(p, m)| p / m).collect()).collect();
        let reduced_form = y_mass.iter().zip(&pz).map(|(m, p)| m / p).collect();
        let mut x_codes = vec![Vec::new(); kh];
        let mut z_codes = vec![Vec::new(); ki];
        for x in 0..c.n_x {
            for d in 0..2 {
                for q in 0..c.n_q {
                    x_codes[self.hyp_index(x, q, d)] = vec![x as f64, q as f64, d as f64];
                }
                for z in 0..c.n_z {
                    z_codes[self.inst_index(x, z, d)] = vec![x as f64, z as f64, d as f64];
                }
            }
        }
        Ok(DiscreteDgp {
            pz,
            cond_xz,
            outcome_mean: self.bridge.clone(),
            reduced_form: Some(reduced_form),
            noise_half_width: c.noise_half_width,
            x_codes: Some(x_codes),
            z_codes: Some(z_codes),
            functional: DiscreteFunctional::EvalDifference { coordinate: 2, treated: 1.0, control: 0.0 },
        })
    }

    /// Inverse-propensity representer `D/P(D=1|X,Q) − (1−D)/P(D=0|X,Q)` over hypothesis states.
    pub fn ipw_representer(&self) -> Vec<f64> {
        let c = &self.cfg;
        let e = self.treatment_given_xq();
        let mut a0 = vec![0.0; c.n_x * c.n_q * 2];
        for x in 0..c.n_x {
            for q in 0..c.n_q {
                let p = e[x * c.n_q + q];
                a0[self.hyp_index(x, q, 1)] = 1.0 / p;
                a0[self.hyp_index(x, q, 0)] = -1.0 / (1.0 - p);
            }
        }
        a0
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> SampledColumns {
        let c = &self.cfg;
        let mut out = SampledColumns::new(3, 3);
        let mut y = Vec::with_capacity(n);
        let pick = |rng: &mut Rng, p: &[f64]| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        for _ in 0..n {
            let u = pick(rng, &self.pu);
            let x = pick(rng, &self.px_u[u]);
            let ux = u * c.n_x + x;
            let z = pick(rng, &self.pz_ux[ux]);
            let d = usize::from(rng.random::<f64>() < self.prop[ux * c.n_z + z]);
            let q = pick(rng, &self.pq_ux[ux]);
            let noise = c.noise_half_width * (2.0 * rng.random::<f64>() - 1.0);
            out.x.extend_from_slice(&[x as f64, q as f64, d as f64]);
            out.z.extend_from_slice(&[x as f64, z as f64, d as f64]);
            y.push(self.outcome_mean(u, x, d) + noise);
        }
        out.columns.insert("y".into(), y);
        out
    }
}

/// Ground truth of the proximal model, via the induced finite problem.
pub fn proximal_ground_truth(cfg: &ProximalConfig) -> Result<(ProximalModel, GroundTruth)> {
    let model = ProximalModel::new(cfg)?;
    let truth = discrete_ground_truth(&model.to_dgp()?)?;
    Ok((model, truth))
}
