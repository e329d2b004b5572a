//! Synthetic data-generating processes with exact ground truth.
//!
//! Every model exposes the minimum-norm primal solution `h0`, the dual
//! solution `q0`, both Riesz representers, `θ0`, reported source degrees and
//! evaluators of the strong and weak metrics for arbitrary functions.

pub mod discrete;
pub mod gaussian;
pub mod proximal;
pub mod spectral;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::random::seeded;
use crate::rkhs::{Dataset, MomentFunctional, Points, Weight};

pub use discrete::{discrete_ground_truth, DiscreteDgp, DiscreteFunctional, DiscreteTruth};
pub use gaussian::{gaussian_ground_truth, GaussianFunctional, GaussianPairConfig, GaussianTruth};
pub use proximal::{proximal_ground_truth, ProximalConfig, ProximalModel};
pub use spectral::{nested_basis, nested_operator, Scenario, SourceDrDesign, SpectralDesign};

/// Grid of source degrees `0, 0.05, …, 8` used for reporting.
pub const BETA_GRID_STEP: f64 = 0.05;
pub const BETA_GRID_MAX: f64 = 8.0;
/// A degree is reported when `Σ c_i²/σ_i^{2β}` stays below this.
pub const BETA_THRESHOLD: f64 = 1e6;

/// Largest grid `β` whose source constant stays below [`BETA_THRESHOLD`].
pub fn beta_report(sigma: &[f64], coeffs: &[f64]) -> f64 {
    let steps = (BETA_GRID_MAX / BETA_GRID_STEP).round() as usize;
    let mut best = 0.0;
    for k in 0..=steps {
        let beta = k as f64 * BETA_GRID_STEP;
        let c: f64 = sigma
            .iter()
            .zip(coeffs)
            .filter(|(s, _)| **s > 0.0)
            .map(|(s, a)| a * a / s.powf(2.0 * beta))
            .sum();
        if c <= BETA_THRESHOLD {
            best = beta;
        } else {
            break;
        }
    }
    best
}

/// Exact ground truth of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta0: f64,
    pub beta_h: f64,
    pub beta_q: f64,
    pub model: TruthModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthModel {
    Discrete(DiscreteTruth),
    GaussianPair(GaussianTruth),
}

/// Strong and weak squared errors of a nuisance estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub strong_sq: f64,
    pub weak_sq: f64,
}

impl GroundTruth {
    pub fn h0_eval(&self, p: &[f64]) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.x_state(p).map_or(f64::NAN, |i| t.h0[i]),
            TruthModel::GaussianPair(t) => t.h0(p[0]),
        }
    }

    pub fn q0_eval(&self, p: &[f64]) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.z_state(p).map_or(f64::NAN, |i| t.q0[i]),
            TruthModel::GaussianPair(t) => t.q0(p[0]),
        }
    }

    pub fn a0_eval(&self, p: &[f64]) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.x_state(p).map_or(f64::NAN, |i| t.a0[i]),
            TruthModel::GaussianPair(t) => t.a0(p[0]),
        }
    }

    pub fn r0_eval(&self, p: &[f64]) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.z_state(p).map_or(f64::NAN, |i| t.r0[i]),
            TruthModel::GaussianPair(t) => t.r0(p[0]),
        }
    }

    /// `‖g‖²` in `L2(P_X)`.
    pub fn norm_sq_x(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.norm_sq_x(&t.tabulate_x(g)),
            TruthModel::GaussianPair(t) => t.norm_sq(&|x| g(&[x])),
        }
    }

    /// `‖T g‖²` in `L2(P_Z)`.
    pub fn weak_norm_sq_x(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.norm_sq_z(&t.apply_t(&t.tabulate_x(g))),
            TruthModel::GaussianPair(t) => t.weak_norm_sq(&|x| g(&[x])),
        }
    }

    /// `‖f‖²` in `L2(P_Z)`.
    pub fn norm_sq_z(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.norm_sq_z(&t.tabulate_z(f)),
            TruthModel::GaussianPair(t) => t.norm_sq(&|z| f(&[z])),
        }
    }

    /// `‖T* f‖²` in `L2(P_X)`.
    pub fn weak_norm_sq_z(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        match &self.model {
            TruthModel::Discrete(t) => t.norm_sq_x(&t.apply_t_adjoint(&t.tabulate_z(f))),
            TruthModel::GaussianPair(t) => t.weak_norm_sq(&|z| f(&[z])),
        }
    }

    /// `(‖h − h0‖², ‖T(h − h0)‖²)`.
    pub fn primal_errors(&self, h: &dyn Fn(&[f64]) -> f64) -> Metrics {
        let d = |p: &[f64]| h(p) - self.h0_eval(p);
        Metrics { strong_sq: self.norm_sq_x(&d), weak_sq: self.weak_norm_sq_x(&d) }
    }

    /// `(‖q − q0‖², ‖T*(q − q0)‖²)`.
    pub fn dual_errors(&self, q: &dyn Fn(&[f64]) -> f64) -> Metrics {
        let d = |p: &[f64]| q(p) - self.q0_eval(p);
        Metrics { strong_sq: self.norm_sq_z(&d), weak_sq: self.weak_norm_sq_z(&d) }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteTruth> {
        match &self.model {
            TruthModel::Discrete(t) => Some(t),
            TruthModel::GaussianPair(_) => None,
        }
    }
}

/// Flat sample buffers produced by the samplers.
#[derive(Clone, Debug, Default)]
pub struct SampledColumns {
    pub dx: usize,
    pub dz: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl SampledColumns {
    pub fn new(dx: usize, dz: usize) -> Self {
        Self { dx, dz, ..Self::default() }
    }

    fn into_dataset(self, seed: u64) -> Result<Dataset> {
        Dataset::new(Points::new(self.dx, self.x)?, Points::new(self.dz, self.z)?, self.columns, seed)
    }
}

/// Any supported model, as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    Discrete(DiscreteDgp),
    Spectral(SpectralDesign),
    GaussianPair(GaussianPairConfig),
    Proximal(ProximalConfig),
}

impl DgpSpec {
    pub fn build(&self) -> Result<Simulator> {
        let outcome = MomentFunctional::outcome();
        let discrete = |dgp: &DiscreteDgp| -> Result<Simulator> {
            let truth = discrete_ground_truth(dgp)?;
            let t = truth.as_discrete().expect("discrete truth");
            let sampler = Sampler::Discrete(discrete::DiscreteSampler::new(dgp, t));
            let m_tilde = match &dgp.functional {
                DiscreteFunctional::WeightedAverage { .. } => {
                    MomentFunctional::WeightedAverage { weight: Weight::Column("omega".into()) }
                }
                DiscreteFunctional::EvalDifference { coordinate, treated, control } => {
                    MomentFunctional::EvalDifference { coordinate: *coordinate, treated: *treated, control: *control }
                }
            };
            Ok(Simulator { truth, m: MomentFunctional::outcome(), m_tilde, sampler })
        };
        match self {
            DgpSpec::Discrete(d) => discrete(d),
            DgpSpec::Spectral(s) => discrete(&s.to_dgp()?),
            DgpSpec::GaussianPair(cfg) => {
                let truth = gaussian_ground_truth(cfg)?;
                let TruthModel::GaussianPair(t) = &truth.model else { unreachable!() };
                let sampler = Sampler::Gaussian(gaussian::GaussianSampler::new(cfg, t));
                let m_tilde = match cfg.functional {
                    GaussianFunctional::Mean => MomentFunctional::WeightedAverage { weight: Weight::Constant(1.0) },
                    GaussianFunctional::PriceDerivative => MomentFunctional::AvgDerivative { coordinate: 0 },
                };
                Ok(Simulator { truth, m: outcome, m_tilde, sampler })
            }
            DgpSpec::Proximal(cfg) => {
                let (model, truth) = proximal_ground_truth(cfg)?;
                let m_tilde = MomentFunctional::EvalDifference { coordinate: 2, treated: 1.0, control: 0.0 };
                Ok(Simulator { truth, m: outcome, m_tilde, sampler: Sampler::Proximal(Box::new(model)) })
            }
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

#[derive(Clone, Debug)]
enum Sampler {
    Discrete(discrete::DiscreteSampler),
    Gaussian(gaussian::GaussianSampler),
    Proximal(Box<ProximalModel>),
}

/// A built model: ground truth, moment functionals and a sampler.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub truth: GroundTruth,
    /// Functional of `q` (acts on Z).
    pub m: MomentFunctional,
    /// Functional of `h` (acts on X).
    pub m_tilde: MomentFunctional,
    sampler: Sampler,
}

impl Simulator {
    /// Draws `n` i.i.d. observations; deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        let mut rng = seeded(seed);
        let cols = match &self.sampler {
            Sampler::Discrete(s) => s.sample(n, &mut rng),
            Sampler::Gaussian(s) => s.sample(n, &mut rng),
            Sampler::Proximal(s) => s.sample(n, &mut rng),
        };
        cols.into_dataset(seed)
    }
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n: usize,
    pub config_hash: String,
    pub theta0: f64,
    pub beta_h: f64,
    pub beta_q: f64,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `x_*`, `z_*` and the named columns, one row per observation.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.x.dim()).map(|j| format!("x_{j}")).collect();
    header.extend((0..data.z.dim()).map(|j| format!("z_{j}")));
    header.extend(data.columns.keys().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        rec.extend(data.z.row(i).iter().map(|v| fmt_f64(*v)));
        rec.extend(data.columns.values().map(|c| fmt_f64(c[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path, seed: u64) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let xs: Vec<usize> = (0..header.len()).filter(|&j| header[j].starts_with("x_")).collect();
    let zs: Vec<usize> = (0..header.len()).filter(|&j| header[j].starts_with("z_")).collect();
    if xs.is_empty() || zs.is_empty() {
        return Err(Error::MissingColumn("x_0/z_0".into()));
    }
    let others: Vec<usize> = (0..header.len()).filter(|j| !xs.contains(j) && !zs.contains(j)).collect();
    let (mut x, mut z) = (Vec::new(), Vec::new());
    let mut cols: BTreeMap<String, Vec<f64>> = others.iter().map(|&j| (header[j].clone(), Vec::new())).collect();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("row {line}, column `{}` is not a number", header[j])))
        };
        for &j in &xs {
            x.push(parse(j)?);
        }
        for &j in &zs {
            z.push(parse(j)?);
        }
        for &j in &others {
            let v = parse(j)?;
            cols.get_mut(&header[j]).expect("column registered").push(v);
        }
    }
    Dataset::new(Points::new(xs.len(), x)?, Points::new(zs.len(), z)?, cols, seed)
}
