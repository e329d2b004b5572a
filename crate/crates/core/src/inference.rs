//! Cross-fit doubly robust inference on `θ0 = E[m̃(W;h0)] = E[m(W;q0)]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{DiscreteTruth, GroundTruth, Metrics};
use crate::error::{Error, Result};
use crate::estimator::{fit, EstimatorConfig, FitResult, Side};
use crate::random::seeded;
use crate::rkhs::{Block, Dataset, MomentFunctional, RepresentedFunction};

pub const SCHEMA_VERSION: &str = "1";
/// Normal quantile of the two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Per-sample doubly robust score `m̃(W;h) + m(W;q) − q(Z)h(X)`.
pub fn score_samples(
    h: &RepresentedFunction,
    q: &RepresentedFunction,
    data: &Dataset,
    m: &MomentFunctional,
    m_tilde: &MomentFunctional,
) -> Result<Vec<f64>> {
    let mh = m_tilde.eval_samples(data, Block::X, h)?;
    let mq = m.eval_samples(data, Block::Z, q)?;
    let hx = h.eval_points(&data.x)?;
    let qz = q.eval_points(&data.z)?;
    let out: Vec<f64> = (0..data.n()).map(|i| mh[i] + mq[i] - qz[i] * hx[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("doubly robust score".into()));
    }
    Ok(out)
}

/// Empirical mean of the doubly robust score.
pub fn theta_plugin(
    h: &RepresentedFunction,
    q: &RepresentedFunction,
    data: &Dataset,
    m: &MomentFunctional,
    m_tilde: &MomentFunctional,
) -> Result<f64> {
    let s = score_samples(h, q, data, m, m_tilde)?;
    Ok(s.iter().sum::<f64>() / data.n() as f64)
}

/// `θ(h,q) = E[a0(X)h(X)] + E[r0(Z)q(Z)] − E[q(Z)h(X)]` on a finite model,
/// for `h`, `q` tabulated on the states.
pub fn population_theta(truth: &DiscreteTruth, h: &[f64], q: &[f64]) -> f64 {
    let a: f64 = truth.px.iter().zip(&truth.a0).zip(h).map(|((p, a), v)| p * a * v).sum();
    let r: f64 = truth.pz.iter().zip(&truth.r0).zip(q).map(|((p, r), v)| p * r * v).sum();
    let mut cross = 0.0;
    for (x, hx) in h.iter().enumerate() {
        for (z, qz) in q.iter().enumerate() {
            cross += truth.joint(x, z) * hx * qz;
        }
    }
    a + r - cross
}

/// `E[(q0 − q)(Z)(h − h0)(X)]` on a finite model.
pub fn mixed_bias(truth: &DiscreteTruth, h: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in 0..h.len() {
        for z in 0..q.len() {
            s += truth.joint(x, z) * (truth.q0[z] - q[z]) * (h[x] - truth.h0[x]);
        }
    }
    s
}

/// Exact strong and weak errors of a fitted nuisance.
pub fn nuisance_error_report(fit: &FitResult, truth: &GroundTruth, side: Side) -> Metrics {
    let f = |p: &[f64]| fit.h_hat.eval(p);
    match side {
        Side::Primal => truth.primal_errors(&f),
        Side::Dual => truth.dual_errors(&f),
    }
}

fn default_folds() -> usize {
    2
}

fn default_ci_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Estimator for `h`.
    pub primal: EstimatorConfig,
    /// Estimator for `q`; the primal settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<EstimatorConfig>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Seed of the fold permutation; the dataset seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_seed: Option<u64>,
    /// Diagnostic multiplier on the interval half-width.
    #[serde(default = "default_ci_scale")]
    pub ci_scale: f64,
}

impl InferenceConfig {
    pub fn symmetric(cfg: EstimatorConfig) -> Self {
        Self { primal: cfg, dual: None, folds: 2, fold_seed: None, ci_scale: 1.0 }
    }

    pub fn dual_config(&self) -> &EstimatorConfig {
        self.dual.as_ref().unwrap_or(&self.primal)
    }
}

/// Fit summary kept per fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub lambda: f64,
    pub t_iters: u32,
    pub loss_empirical: f64,
    pub loss_min: f64,
    pub iterations: usize,
    pub ball_active: bool,
    pub version_space_active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<Metrics>,
}

impl NuisanceFit {
    fn new(fit: &FitResult, errors: Option<Metrics>) -> Self {
        Self {
            lambda: fit.hyperparams.lambda,
            t_iters: fit.hyperparams.t_iters,
            loss_empirical: fit.loss_empirical,
            loss_min: fit.loss_min,
            iterations: fit.diagnostics.iterations,
            ball_active: fit.diagnostics.hyp_ball_active,
            version_space_active: fit.diagnostics.version_space_active,
            errors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub theta_fold: f64,
    pub primal: NuisanceFit,
    pub dual: NuisanceFit,
}

/// Fold-averaged exact nuisance errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceErrors {
    pub h: Metrics,
    pub q: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub schema_version: String,
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub folds: usize,
    pub per_fold: Vec<FoldReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covered: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance_errors: Option<NuisanceErrors>,
}

impl InferenceReport {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Fold label of every sample: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded(seed));
    let mut out = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        out[i] = k % folds;
    }
    out
}

struct FoldOutcome {
    test_idx: Vec<usize>,
    scores: Vec<f64>,
    report: FoldReport,
}

/// Cross-fit estimate, standard error and 95% interval for `θ0`.
pub fn cross_fit_infer(
    data: &Dataset,
    m: &MomentFunctional,
    m_tilde: &MomentFunctional,
    cfg: &InferenceConfig,
    truth: Option<&GroundTruth>,
) -> Result<InferenceReport> {
    let n = data.n();
    let k = cfg.folds;
    if k < 2 {
        return Err(Error::InvalidParameter("cross-fitting needs at least 2 folds".into()));
    }
    if n < 10 * k {
        return Err(Error::InvalidParameter(format!("n = {n} is below 10 × folds = {}", 10 * k)));
    }
    if !(cfg.ci_scale > 0.0) {
        return Err(Error::InvalidParameter("ci_scale must be positive".into()));
    }
    let labels = fold_assignment(n, k, cfg.fold_seed.unwrap_or(data.seed));
    let outcomes: Vec<Result<FoldOutcome>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == fold).collect();
            let run = || -> Result<FoldOutcome> {
                let tr = data.subset(&train);
                let te = data.subset(&test);
                let hf = fit(&tr, Side::Primal, m, &cfg.primal)?;
                let qf = fit(&tr, Side::Dual, m_tilde, cfg.dual_config())?;
                let scores = score_samples(&hf.h_hat, &qf.h_hat, &te, m, m_tilde)?;
                let theta_fold = scores.iter().sum::<f64>() / scores.len() as f64;
                let (he, qe) = match truth {
                    Some(t) => (
                        Some(nuisance_error_report(&hf, t, Side::Primal)),
                        Some(nuisance_error_report(&qf, t, Side::Dual)),
                    ),
                    None => (None, None),
                };
                Ok(FoldOutcome {
                    report: FoldReport {
                        fold,
                        n_train: train.len(),
                        n_test: test.len(),
                        theta_fold,
                        primal: NuisanceFit::new(&hf, he),
                        dual: NuisanceFit::new(&qf, qe),
                    },
                    test_idx: test.clone(),
                    scores,
                })
            };
            run().map_err(|e| Error::Fold { fold, source: Box::new(e) })
        })
        .collect();
    let outcomes: Vec<FoldOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let mut psi = vec![0.0; n];
    for o in &outcomes {
        for (&i, &s) in o.test_idx.iter().zip(&o.scores) {
            psi[i] = s;
        }
    }
    let nf = n as f64;
    let theta_hat = psi.iter().sum::<f64>() / nf;
    let sigma_hat = (psi.iter().map(|s| (s - theta_hat).powi(2)).sum::<f64>() / nf).sqrt();
    let half = cfg.ci_scale * Z_95 * sigma_hat / nf.sqrt();
    let (ci_low, ci_high) = (theta_hat - half, theta_hat + half);
    let per_fold: Vec<FoldReport> = outcomes.into_iter().map(|o| o.report).collect();
    let theta0 = truth.map(|t| t.theta0);
    let nuisance_errors = truth.map(|_| {
        let avg = |f: &dyn Fn(&FoldReport) -> Metrics| {
            let (s, w) = per_fold.iter().map(f).fold((0.0, 0.0), |(s, w), m| (s + m.strong_sq, w + m.weak_sq));
            Metrics { strong_sq: s / k as f64, weak_sq: w / k as f64 }
        };
        NuisanceErrors {
            h: avg(&|r| r.primal.errors.expect("truth given")),
            q: avg(&|r| r.dual.errors.expect("truth given")),
        }
    });
    Ok(InferenceReport {
        schema_version: SCHEMA_VERSION.into(),
        theta_hat,
        sigma_hat,
        ci_low,
        ci_high,
        n,
        folds: k,
        per_fold,
        theta0,
        covered: theta0.map(|t| ci_low <= t && t <= ci_high),
        nuisance_errors,
    })
}
