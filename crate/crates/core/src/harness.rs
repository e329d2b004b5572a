//! Monte Carlo experiments: coverage, rate and source-condition studies,
//! rate curves and oracle self-checks, with deterministic file outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{
    discrete_ground_truth, DgpSpec, DiscreteDgp, DiscreteFunctional, Scenario, Simulator, SourceDrDesign,
};
use crate::error::{Error, Result};
use crate::estimator::{fit, EstimatorConfig, Mode, Side};
use crate::inference::{cross_fit_infer, mixed_bias, nuisance_error_report, population_theta, InferenceConfig};
use crate::random::{derive_seed, seeded};
use crate::rkhs::MomentFunctional;
use crate::spectral_oracle::{
    bias_bounds, bias_norms, iterated_tikhonov_coefficients, kappa_constrained_baseline, kappa_plain_tikhonov,
    kappa_smooth, make_source_solution, rate_exponents, tikhonov_step, SpectralOperator,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Coverage,
    RateStrong,
    RateWeak,
    Curves,
    OracleCheck,
    SourceDr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Strong,
    Weak,
}

fn default_replications() -> usize {
    1
}

fn default_folds() -> usize {
    2
}

fn default_one() -> f64 {
    1.0
}

fn default_side() -> Side {
    Side::Primal
}

/// One experiment, as read from TOML or JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dr: Option<SourceDrDesign>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    /// Estimator for the dual side; the primal one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_estimator: Option<EstimatorConfig>,
    /// Unconstrained comparison estimator of the source-condition study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_control: Option<EstimatorConfig>,
    /// Moment of the primal problem; taken from the DGP when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<MomentFunctional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_tilde: Option<MomentFunctional>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Interval half-width multiplier (diagnostic).
    #[serde(default = "default_one")]
    pub ci_scale: f64,
    /// Nuisance studied by rate experiments.
    #[serde(default = "default_side")]
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            dgp: None,
            source_dr: None,
            estimator: EstimatorConfig::default(),
            dual_estimator: None,
            negative_control: None,
            m: None,
            m_tilde: None,
            n_grid: Vec::new(),
            replications: 1,
            base_seed: 0,
            folds: 2,
            ci_scale: 1.0,
            side: Side::Primal,
            beta_grid: None,
            gamma: 0.0,
            output: None,
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("n_grid must be strictly increasing".into()));
        }
        let needs_n = !matches!(self.kind, ExperimentKind::Curves | ExperimentKind::OracleCheck);
        if needs_n && self.n_grid.is_empty() {
            return Err(Error::InvalidParameter("n_grid is empty".into()));
        }
        self.estimator.validate()?;
        Ok(())
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            primal: self.estimator.clone(),
            dual: self.dual_estimator.clone(),
            folds: self.folds,
            fold_seed: None,
            ci_scale: self.ci_scale,
        }
    }

    pub fn simulator(&self) -> Result<Simulator> {
        let spec = self.dgp.as_ref().ok_or_else(|| Error::InvalidParameter("experiment needs a [dgp]".into()))?;
        let mut sim = spec.build()?;
        if let Some(m) = &self.m {
            sim.m = m.clone();
        }
        if let Some(m) = &self.m_tilde {
            sim.m_tilde = m.clone();
        }
        Ok(sim)
    }

    /// Default unconstrained comparison: plain Tikhonov with λ from the
    /// constrained schedule.
    pub fn control_config(&self) -> EstimatorConfig {
        self.negative_control.clone().unwrap_or_else(|| EstimatorConfig {
            mode: Mode::Plain,
            schedule_mode: Some(self.estimator.mode),
            t_iters: None,
            ..self.estimator.clone()
        })
    }
}

/// Seed of replication `r`.
pub fn replication_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add(r as u64)
}

/// Runs `f(0..count)` on a pool of `jobs` workers, keeping index order.
pub fn run_indexed<T: Send>(jobs: Option<usize>, count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// One line of `replications.csv`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub label: String,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub theta_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covered: Option<bool>,
    pub abs_error: Option<f64>,
    pub h_strong_sq: Option<f64>,
    pub h_weak_sq: Option<f64>,
    pub q_strong_sq: Option<f64>,
    pub q_weak_sq: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn width(&self) -> Option<f64> {
        Some(self.ci_high? - self.ci_low?)
    }
}

fn inference_record(
    sim: &Simulator,
    cfg: &InferenceConfig,
    n: usize,
    r: usize,
    seed: u64,
    scenario: &str,
    label: &str,
) -> ReplicationRecord {
    let mut rec = ReplicationRecord {
        scenario: scenario.into(),
        label: label.into(),
        n,
        replication: r,
        seed,
        ..ReplicationRecord::default()
    };
    let outcome = sim
        .sample(n, seed)
        .and_then(|data| cross_fit_infer(&data, &sim.m, &sim.m_tilde, cfg, Some(&sim.truth)));
    match outcome {
        Ok(rep) => {
            rec.theta_hat = Some(rep.theta_hat);
            rec.sigma_hat = Some(rep.sigma_hat);
            rec.ci_low = Some(rep.ci_low);
            rec.ci_high = Some(rep.ci_high);
            rec.covered = rep.covered;
            rec.abs_error = Some((rep.theta_hat - sim.truth.theta0).abs());
            if let Some(e) = rep.nuisance_errors {
                rec.h_strong_sq = Some(e.h.strong_sq);
                rec.h_weak_sq = Some(e.h.weak_sq);
                rec.q_strong_sq = Some(e.q.strong_sq);
                rec.q_weak_sq = Some(e.q.weak_sq);
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Coverage statistics of one (scenario, label, n) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub scenario: String,
    pub label: String,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_abs_error: f64,
    pub mean_theta_hat: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Aggregates the records of one cell; every statistic comes from the records.
pub fn coverage_cell(records: &[&ReplicationRecord]) -> CoverageCell {
    let ok: Vec<&&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let first = records.first().copied().cloned().unwrap_or_default();
    CoverageCell {
        scenario: first.scenario,
        label: first.label,
        n: first.n,
        replications: records.len(),
        failures: records.len() - ok.len(),
        coverage: mean(ok.iter().filter_map(|r| r.covered).map(|c| if c { 1.0 } else { 0.0 })),
        mean_width: mean(ok.iter().filter_map(|r| r.width())),
        mean_abs_error: mean(ok.iter().filter_map(|r| r.abs_error)),
        mean_theta_hat: mean(ok.iter().filter_map(|r| r.theta_hat)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRatio {
    pub n_from: usize,
    pub n_to: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub theta0: f64,
    pub ci_scale: f64,
    pub cells: Vec<CoverageCell>,
    /// Mean width at one grid size over the next.
    pub width_ratios: Vec<WidthRatio>,
}

/// Replications and summary of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome<S> {
    pub records: Vec<ReplicationRecord>,
    pub summary: S,
}

/// Full cross-fit pipeline per replication and grid size.
pub fn run_coverage(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Outcome<CoverageSummary>> {
    cfg.validate()?;
    let sim = cfg.simulator()?;
    let icfg = cfg.inference_config();
    let reps = cfg.replications;
    let tasks: Vec<(usize, usize)> = cfg.n_grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let records = run_indexed(jobs, tasks.len(), |k| {
        let (n, r) = tasks[k];
        inference_record(&sim, &icfg, n, r, replication_seed(cfg.base_seed, r), "", "estimator")
    })?;
    let cells: Vec<CoverageCell> = cfg
        .n_grid
        .iter()
        .map(|&n| coverage_cell(&records.iter().filter(|r| r.n == n).collect::<Vec<_>>()))
        .collect();
    let width_ratios = cells
        .windows(2)
        .map(|w| WidthRatio { n_from: w[0].n, n_to: w[1].n, ratio: w[0].mean_width / w[1].mean_width })
        .collect();
    Ok(Outcome { records, summary: CoverageSummary { theta0: sim.truth.theta0, ci_scale: cfg.ci_scale, cells, width_ratios } })
}

/// Least-squares fit of `log(mean error)` on `log(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(usize, f64)>,
    /// All mean errors equal, so the slope carries no information.
    pub degenerate: bool,
}

impl RateFit {
    pub fn from_points(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidParameter("a rate fit needs at least 3 grid sizes".into()));
        }
        if points.iter().any(|&(_, e)| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::NonFinite("mean errors must be positive and finite".into()));
        }
        let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let degenerate = syy <= 1e-300;
        let r_squared = if degenerate { 0.0 } else { ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0) };
        Ok(Self { slope, intercept, r_squared, points, degenerate })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub side: Side,
    pub metric: Metric,
    pub mode: Mode,
    pub fit: RateFit,
    pub predicted_slope: f64,
    pub failures: usize,
}

/// Slope of the squared error against `n` implied by the theory.
pub fn predicted_slope(metric: Metric, mode: Mode, beta: f64, t: u32) -> f64 {
    match metric {
        Metric::Weak => -1.0,
        Metric::Strong if mode.is_iterated() => {
            let bt = beta.min(2.0 * t as f64);
            -bt / (bt + 2.0)
        }
        Metric::Strong => {
            let m = beta.min(1.0);
            -m / (1.0 + m)
        }
    }
}

/// Exact nuisance error of one fit per replication and grid size.
pub fn run_rate_study(cfg: &ExperimentConfig, metric: Metric, jobs: Option<usize>) -> Result<Outcome<RateSummary>> {
    cfg.validate()?;
    let sim = cfg.simulator()?;
    let side = cfg.side;
    let est = match side {
        Side::Primal => cfg.estimator.clone(),
        Side::Dual => cfg.dual_estimator.clone().unwrap_or_else(|| cfg.estimator.clone()),
    };
    let moment = match side {
        Side::Primal => &sim.m,
        Side::Dual => &sim.m_tilde,
    };
    let reps = cfg.replications;
    let tasks: Vec<(usize, usize)> = cfg.n_grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let records = run_indexed(jobs, tasks.len(), |k| {
        let (n, r) = tasks[k];
        let seed = replication_seed(cfg.base_seed, r);
        let mut rec = ReplicationRecord {
            label: format!("{side:?}").to_lowercase(),
            n,
            replication: r,
            seed,
            ..ReplicationRecord::default()
        };
        match sim.sample(n, seed).and_then(|d| fit(&d, side, moment, &est)) {
            Ok(f) => {
                let e = nuisance_error_report(&f, &sim.truth, side);
                match side {
                    Side::Primal => {
                        rec.h_strong_sq = Some(e.strong_sq);
                        rec.h_weak_sq = Some(e.weak_sq);
                    }
                    Side::Dual => {
                        rec.q_strong_sq = Some(e.strong_sq);
                        rec.q_weak_sq = Some(e.weak_sq);
                    }
                }
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    })?;
    let pick = |r: &ReplicationRecord| match (side, metric) {
        (Side::Primal, Metric::Strong) => r.h_strong_sq,
        (Side::Primal, Metric::Weak) => r.h_weak_sq,
        (Side::Dual, Metric::Strong) => r.q_strong_sq,
        (Side::Dual, Metric::Weak) => r.q_weak_sq,
    };
    let points = cfg
        .n_grid
        .iter()
        .map(|&n| (n, mean(records.iter().filter(|r| r.n == n).filter_map(pick))))
        .collect();
    let fit = RateFit::from_points(points)?;
    let t = est.hyperparams(cfg.n_grid[0])?.t_iters;
    let summary = RateSummary {
        side,
        metric,
        mode: est.mode,
        predicted_slope: predicted_slope(metric, est.mode, est.beta_assumed, t),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        fit,
    };
    Ok(Outcome { records, summary })
}

/// Paired coverage of the constrained estimator and its control on one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedCoverage {
    pub scenario: String,
    pub both: usize,
    pub constrained_only: usize,
    pub control_only: usize,
    pub neither: usize,
    pub control_strictly_worse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceDrSummary {
    pub n: usize,
    pub beta_h: Vec<f64>,
    pub beta_q: Vec<f64>,
    pub cells: Vec<CoverageCell>,
    pub paired: Vec<PairedCoverage>,
}

pub const CONSTRAINED: &str = "constrained";
pub const CONTROL: &str = "control";

/// Coverage of one constrained configuration in both well-posedness
/// scenarios, next to an unconstrained control on the same seeds.
pub fn run_source_dr_study(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Outcome<SourceDrSummary>> {
    cfg.validate()?;
    let design = cfg
        .source_dr
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("source_dr experiment needs a [source_dr] design".into()))?;
    let n = *cfg.n_grid.last().expect("validated");
    let constrained = cfg.inference_config();
    let control = InferenceConfig { primal: cfg.control_config(), dual: None, ..constrained.clone() };
    let sims: Vec<Simulator> =
        Scenario::BOTH.iter().map(|&s| DgpSpec::Spectral(design.scenario(s)).build()).collect::<Result<_>>()?;
    let reps = cfg.replications;
    let tasks: Vec<(usize, usize, usize)> =
        (0..2).flat_map(|s| (0..2).flat_map(move |c| (0..reps).map(move |r| (s, c, r)))).collect();
    let records = run_indexed(jobs, tasks.len(), |k| {
        let (s, c, r) = tasks[k];
        let (icfg, label) = if c == 0 { (&constrained, CONSTRAINED) } else { (&control, CONTROL) };
        let seed = replication_seed(cfg.base_seed, r);
        inference_record(&sims[s], icfg, n, r, seed, Scenario::BOTH[s].label(), label)
    })?;
    let mut cells = Vec::new();
    let mut paired = Vec::new();
    for s in Scenario::BOTH {
        let of = |label: &str| -> Vec<&ReplicationRecord> {
            records.iter().filter(|r| r.scenario == s.label() && r.label == label).collect()
        };
        let (a, b) = (of(CONSTRAINED), of(CONTROL));
        let (ca, cb) = (coverage_cell(&a), coverage_cell(&b));
        let mut p = PairedCoverage {
            scenario: s.label().into(),
            both: 0,
            constrained_only: 0,
            control_only: 0,
            neither: 0,
            control_strictly_worse: cb.coverage < ca.coverage,
        };
        for (x, y) in a.iter().zip(&b) {
            match (x.covered.unwrap_or(false), y.covered.unwrap_or(false)) {
                (true, true) => p.both += 1,
                (true, false) => p.constrained_only += 1,
                (false, true) => p.control_only += 1,
                (false, false) => p.neither += 1,
            }
        }
        cells.push(ca);
        cells.push(cb);
        paired.push(p);
    }
    let summary = SourceDrSummary {
        n,
        beta_h: sims.iter().map(|s| s.truth.beta_h).collect(),
        beta_q: sims.iter().map(|s| s.truth.beta_q).collect(),
        cells,
        paired,
    };
    Ok(Outcome { records, summary })
}

/// One row of the rate-curve table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub beta: f64,
    pub alpha_unknown: f64,
    pub alpha_known: f64,
    pub alpha_smooth: f64,
    pub kappa: f64,
    pub kappa_smooth: f64,
    pub kappa_constrained_baseline: f64,
    pub kappa_plain_tikhonov: f64,
}

/// `0, 0.05, …, 8`.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=160).map(|k| k as f64 * 0.05).collect()
}

pub fn emit_curves(beta_grid: &[f64], gamma: f64) -> Result<Vec<CurveRow>> {
    beta_grid
        .iter()
        .map(|&beta| {
            let r = rate_exponents(beta, gamma)?;
            Ok(CurveRow {
                beta,
                alpha_unknown: r.alpha_unknown_side,
                alpha_known: r.alpha_known_side,
                alpha_smooth: r.alpha_smooth,
                kappa: r.kappa_strong,
                kappa_smooth: kappa_smooth(beta),
                kappa_constrained_baseline: kappa_constrained_baseline(beta),
                kappa_plain_tikhonov: kappa_plain_tikhonov(beta),
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Self-check of the exact oracles on random instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckSummary {
    pub filter_instances: usize,
    /// Largest gap between the closed-form filters and the step recursion.
    pub filter_max_error: f64,
    pub bias_cases: usize,
    pub bias_violations: usize,
    pub mixed_bias_models: usize,
    pub mixed_bias_pairs: usize,
    pub mixed_bias_max_error: f64,
}

/// Random discrete model with a strictly positive, full-rank operator.
pub fn random_discrete_dgp(seed: u64, kx: usize, kz: usize) -> DiscreteDgp {
    let mut rng = seeded(seed);
    let simplex = |rng: &mut crate::random::Rng, k: usize| {
        let v: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let pz = simplex(&mut rng, kz);
    let cols: Vec<Vec<f64>> = (0..kz).map(|_| simplex(&mut rng, kx)).collect();
    let cond_xz = (0..kx).map(|x| (0..kz).map(|z| cols[z][x]).collect()).collect();
    let outcome_mean = (0..kx).map(|_| rng.random::<f64>() - 0.5).collect();
    let omega = (0..kx).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
    DiscreteDgp {
        pz,
        cond_xz,
        outcome_mean,
        reduced_form: None,
        noise_half_width: 0.2,
        x_codes: None,
        z_codes: None,
        functional: DiscreteFunctional::WeightedAverage { omega },
    }
}

pub fn run_oracle_check(seed: u64) -> Result<OracleCheckSummary> {
    let mut rng = seeded(seed);
    let mut filter_max_error: f64 = 0.0;
    let filter_instances = 100;
    for _ in 0..filter_instances {
        let k = rng.random_range(1..=200);
        let mut sigma: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        sigma[0] = 1.0;
        let a: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let lambda = rng.random::<f64>().max(1e-3);
        let t = rng.random_range(1..=8);
        let op = SpectralOperator::coordinate(sigma)?;
        let src = make_source_solution(&op, 0.0, &a)?;
        let closed = iterated_tikhonov_coefficients(&op, &src, lambda, t)?;
        let mut h = vec![0.0; k];
        for _ in 0..t {
            h = tikhonov_step(&op, &a, &h, lambda)?;
        }
        for (x, y) in closed.iter().zip(&h) {
            filter_max_error = filter_max_error.max((x - y).abs());
        }
    }
    let sigma: Vec<f64> = (1..=200).map(|i| (i as f64).powf(-0.5)).collect();
    let op = SpectralOperator::coordinate(sigma)?;
    let mut bias_cases = 0;
    let mut bias_violations = 0;
    for beta in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for draw in 0..5 {
            let mut w: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            if draw == 0 {
                w = (0..200).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.iter_mut().for_each(|v| *v /= norm);
            let src = make_source_solution(&op, beta, &w)?;
            for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
                for t in [1, 2, 4, 8] {
                    let reg = iterated_tikhonov_coefficients(&op, &src, lambda, t)?;
                    let got = bias_norms(&op, &src, &reg)?;
                    let bound = bias_bounds(&src, lambda, t);
                    bias_cases += 1;
                    let slack = 1.0 + 1e-12;
                    if got.strong_sq > bound.strong_sq * slack || got.weak_sq > bound.weak_sq * slack {
                        bias_violations += 1;
                    }
                }
            }
        }
    }
    let mixed_bias_models = 5;
    let mixed_bias_pairs = 100;
    let mut mixed_bias_max_error: f64 = 0.0;
    for m in 0..mixed_bias_models {
        let dgp = random_discrete_dgp(derive_seed(seed, m as u64), 3 + m, 3 + m);
        let g = discrete_ground_truth(&dgp)?;
        let t = g.as_discrete().expect("discrete model");
        for _ in 0..mixed_bias_pairs {
            let h: Vec<f64> = (0..dgp.kx()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let q: Vec<f64> = (0..dgp.kz()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let err = population_theta(t, &h, &q) - g.theta0 - mixed_bias(t, &h, &q);
            mixed_bias_max_error = mixed_bias_max_error.max(err.abs());
        }
    }
    Ok(OracleCheckSummary {
        filter_instances,
        filter_max_error,
        bias_cases,
        bias_violations,
        mixed_bias_models,
        mixed_bias_pairs,
        mixed_bias_max_error,
    })
}

/// Writes `config.resolved.json`, `replications.csv` and `summary.json`.
pub fn write_experiment<S: Serialize>(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome<S>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    write_csv(&outcome.records, &dir.join("replications.csv"))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    Ok(())
}

/// Runs the configured experiment and writes its outputs to `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, jobs: Option<usize>) -> Result<serde_json::Value> {
    let summary = match cfg.kind {
        ExperimentKind::Coverage => {
            let o = run_coverage(cfg, jobs)?;
            write_experiment(dir, cfg, &o)?;
            serde_json::to_value(&o.summary)?
        }
        ExperimentKind::RateStrong | ExperimentKind::RateWeak => {
            let metric = if cfg.kind == ExperimentKind::RateStrong { Metric::Strong } else { Metric::Weak };
            let o = run_rate_study(cfg, metric, jobs)?;
            write_experiment(dir, cfg, &o)?;
            serde_json::to_value(&o.summary)?
        }
        ExperimentKind::SourceDr => {
            let o = run_source_dr_study(cfg, jobs)?;
            write_experiment(dir, cfg, &o)?;
            serde_json::to_value(&o.summary)?
        }
        ExperimentKind::Curves => {
            let grid = cfg.beta_grid.clone().unwrap_or_else(default_beta_grid);
            let rows = emit_curves(&grid, cfg.gamma)?;
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
            write_csv(&rows, &dir.join("curves.csv"))?;
            serde_json::json!({ "rows": rows.len() })
        }
        ExperimentKind::OracleCheck => {
            let s = run_oracle_check(cfg.base_seed)?;
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
            fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&s)? + "\n")?;
            serde_json::to_value(&s)?
        }
    };
    Ok(summary)
}
