//! Adversarial Tikhonov estimation over RKHS balls.
//!
//! For hypothesis coefficients `β` on anchors of the hypothesis block and
//! adversary coefficients `γ` on anchors of the other block, the empirical
//! criterion is
//!
//! ```text
//! L_n(β) = max_{γᵀK_Fγ ≤ B} 2γᵀ(v − Cβ) − γᵀMγ
//! ```
//!
//! with `C = Φ_Fᵀ Φ_H / n`, `M = Φ_Fᵀ Φ_F / n` and `v` the adversary moment
//! vector. Regularized fits minimize `L_n(β) + λ (β − β̄)ᵀQ(β − β̄)` over
//! `βᵀK_Hβ ≤ B`, `Q = Φ_Hᵀ Φ_H / n`. The dual problem swaps the blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{smallest_feasible_multiplier, whitening_basis, SimDiag};
use crate::random::seeded;
use crate::rkhs::{gram, moment_vector, Block, Dataset, KernelConfig, KernelSpec, MomentFunctional, Points, RepresentedFunction};

/// Alternations allowed in one saddle solve.
pub const MAX_ALTERNATIONS: usize = 200;
/// Stopping threshold on the change of the saddle value.
pub const SADDLE_TOL: f64 = 1e-8;

/// Regularization scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Plain,
    Iterated,
    Constrained,
    ConstrainedIterated,
}

impl Mode {
    pub fn is_constrained(self) -> bool {
        matches!(self, Mode::Constrained | Mode::ConstrainedIterated)
    }

    pub fn is_iterated(self) -> bool {
        matches!(self, Mode::Iterated | Mode::ConstrainedIterated)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Auto,
    Manual,
}

/// Which nuisance a problem estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `h` on X, adversary on Z.
    Primal,
    /// `q` on Z, adversary on X.
    Dual,
}

impl Side {
    pub fn hyp_block(self) -> Block {
        match self {
            Side::Primal => Block::X,
            Side::Dual => Block::Z,
        }
    }

    pub fn adv_block(self) -> Block {
        match self {
            Side::Primal => Block::Z,
            Side::Dual => Block::X,
        }
    }
}

fn default_mu_mult() -> f64 {
    2.0
}

fn default_norm_bound() -> f64 {
    100.0
}

fn default_beta() -> f64 {
    1.0
}

fn default_kernel() -> KernelConfig {
    KernelConfig::gaussian(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub schedule: ScheduleKind,
    /// Required for a manual schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_iters: Option<u32>,
    #[serde(default = "default_mu_mult")]
    pub mu_mult: f64,
    /// Bound on the squared RKHS norm of both hypothesis and adversary.
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
    /// Critical-radius proxy; `n^{-1/2}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_proxy: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta_assumed: f64,
    #[serde(default)]
    pub gamma_smooth: f64,
    /// Use the `1/(β_t+2)` exponent in the iterated λ schedule.
    #[serde(default)]
    pub half_exponent_schedule: bool,
    /// Take λ from another mode's automatic schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_mode: Option<Mode>,
    #[serde(default = "default_kernel")]
    pub hyp_kernel: KernelConfig,
    #[serde(default = "default_kernel")]
    pub adv_kernel: KernelConfig,
    /// Keep at most this many anchors per block (an approximation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_limit: Option<usize>,
    /// Fixed version-space slack for every iterate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_override: Option<f64>,
    /// Starting function `ĥ_0`; the zero function when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<RepresentedFunction>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Plain,
            schedule: ScheduleKind::Auto,
            lambda: None,
            t_iters: None,
            mu_mult: default_mu_mult(),
            norm_bound: default_norm_bound(),
            delta_proxy: None,
            beta_assumed: default_beta(),
            gamma_smooth: 0.0,
            half_exponent_schedule: false,
            schedule_mode: None,
            hyp_kernel: default_kernel(),
            adv_kernel: default_kernel(),
            anchor_limit: None,
            mu_override: None,
            initial: None,
        }
    }
}

/// Resolved regularization parameters of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub t_iters: u32,
    pub delta: f64,
    /// Version-space slack per iterate (constrained modes only).
    pub mu_n: Vec<f64>,
}

/// `(λ, t)` from the theory-driven schedules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lambda: f64,
    pub t_iters: u32,
}

fn loglog_inv(delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    if l > 1.0 {
        l.ln()
    } else {
        0.0
    }
}

/// Automatic `(λ, t)` for a critical-radius proxy `delta`.
pub fn schedule(delta: f64, beta: f64, gamma: f64, mode: Mode, half_exponent: bool) -> Schedule {
    let bound = loglog_inv(delta).max(1.0);
    match mode {
        Mode::Plain | Mode::Constrained => {
            Schedule { lambda: delta.powf(2.0 / (1.0 + beta.min(1.0))), t_iters: 1 }
        }
        Mode::Iterated => {
            let t = ((beta / 2.0).min(bound).ceil() as u32).max(1);
            let bt = beta.min(2.0 * t as f64);
            let num = if half_exponent { 1.0 } else { 2.0 };
            Schedule { lambda: delta.powf(num / (bt + 2.0 - gamma)).min(1.0), t_iters: t }
        }
        Mode::ConstrainedIterated => {
            let t = (((beta + 1.0) / 2.0).ceil() as u32).min(bound.ceil() as u32).max(1);
            Schedule { lambda: delta.powf(2.0 / (beta + 1.0)).min(1.0), t_iters: t }
        }
    }
}

/// `(λ, t, μ_n)` for sample size `n` with the default proxy `δ_n = n^{-1/2}`.
pub fn schedule_hyperparams(n: usize, beta_assumed: f64, gamma_smooth: f64, mode: Mode) -> Hyperparams {
    let cfg = EstimatorConfig { mode, beta_assumed, gamma_smooth, ..EstimatorConfig::default() };
    cfg.hyperparams(n).expect("automatic schedule with default settings")
}

/// `μ_{n,t} = mu_mult · max(δ², λ^{min(β+1, 2t)})`.
pub fn version_space_slack(mu_mult: f64, delta: f64, lambda: f64, beta: f64, t: u32) -> f64 {
    mu_mult * (delta * delta).max(lambda.powf((beta + 1.0).min(2.0 * t as f64)))
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.mu_mult, "mu_mult")?;
        positive(self.norm_bound, "norm_bound")?;
        if let Some(d) = self.delta_proxy {
            positive(d, "delta_proxy")?;
        }
        if !(self.beta_assumed >= 0.0) {
            return Err(Error::InvalidParameter("beta_assumed must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_smooth) {
            return Err(Error::InvalidParameter("gamma_smooth must lie in [0, 1]".into()));
        }
        if let Some(mu) = self.mu_override {
            if !(mu >= 0.0) {
                return Err(Error::InvalidParameter("mu_override must be nonnegative".into()));
            }
        }
        if self.anchor_limit == Some(0) {
            return Err(Error::InvalidParameter("anchor_limit must be positive".into()));
        }
        if self.schedule == ScheduleKind::Manual && self.lambda.is_none() {
            return Err(Error::InvalidParameter("manual schedule needs lambda".into()));
        }
        Ok(())
    }

    /// Resolves `(λ, t, μ_n)` for a training sample of size `n`.
    pub fn hyperparams(&self, n: usize) -> Result<Hyperparams> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter("empty training sample".into()));
        }
        let delta = self.delta_proxy.unwrap_or((n as f64).powf(-0.5));
        let own = schedule(delta, self.beta_assumed, self.gamma_smooth, self.mode, self.half_exponent_schedule);
        let borrowed = self
            .schedule_mode
            .map(|m| schedule(delta, self.beta_assumed, self.gamma_smooth, m, self.half_exponent_schedule));
        let (lambda, t) = match self.schedule {
            ScheduleKind::Auto => {
                let lambda = borrowed.map_or(own.lambda, |s| s.lambda);
                let t = if self.mode.is_iterated() { borrowed.unwrap_or(own).t_iters } else { 1 };
                (self.lambda.unwrap_or(lambda), self.t_iters.unwrap_or(t))
            }
            ScheduleKind::Manual => (self.lambda.expect("validated"), self.t_iters.unwrap_or(1)),
        };
        positive(lambda, "lambda")?;
        if t == 0 {
            return Err(Error::InvalidParameter("t_iters must be at least 1".into()));
        }
        match self.mode {
            Mode::Plain | Mode::Constrained if lambda >= 2.0 => {
                return Err(Error::InvalidParameter(format!("lambda must be below 2 in {:?} mode", self.mode)));
            }
            Mode::Iterated | Mode::ConstrainedIterated if lambda > 1.0 => {
                return Err(Error::InvalidParameter("lambda must be at most 1 in iterated modes".into()));
            }
            _ => {}
        }
        if !self.mode.is_iterated() && t != 1 {
            return Err(Error::InvalidParameter("t_iters > 1 requires an iterated mode".into()));
        }
        let mu_n = if self.mode.is_constrained() {
            (1..=t)
                .map(|k| {
                    self.mu_override
                        .unwrap_or_else(|| version_space_slack(self.mu_mult, delta, lambda, self.beta_assumed, k))
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Hyperparams { lambda, t_iters: t, delta, mu_n })
    }
}

/// Deduplicated anchors, optionally thinned to `limit` evenly spaced rows.
pub fn select_anchors(points: &Points, limit: Option<usize>) -> Points {
    let unique = points.unique_rows();
    match limit {
        Some(l) if l < unique.len() => {
            let idx: Vec<usize> = (0..l).map(|k| k * unique.len() / l).collect();
            unique.select(&idx)
        }
        _ => unique,
    }
}

/// All fixed quantities of one empirical saddle problem.
#[derive(Clone, Debug)]
pub struct SaddleProblem {
    pub side: Side,
    pub hyp_kernel: KernelSpec,
    pub adv_kernel: KernelSpec,
    pub hyp_anchors: Points,
    pub adv_anchors: Points,
    pub hyp_gram: DMatrix<f64>,
    pub adv_gram: DMatrix<f64>,
    pub moment_vec: DVector<f64>,
    /// `C = Φ_Fᵀ Φ_H / n`
    pub cross_eval: DMatrix<f64>,
    /// `M = Φ_Fᵀ Φ_F / n`
    pub adv_second: DMatrix<f64>,
    /// `Q = Φ_Hᵀ Φ_H / n`
    pub hyp_second: DMatrix<f64>,
    pub center_coeffs: DVector<f64>,
    pub n: usize,
    pub norm_bound: f64,
    adv: SimDiag,
    /// Whitening bases, `TᵀKT = I`, in which the subproblems are solved.
    hyp_basis: DMatrix<f64>,
    adv_basis: DMatrix<f64>,
    proj_cross: DMatrix<f64>,
    proj_moment: DVector<f64>,
}

/// Builds the primal problem: `h` on X, moment `m` acting on Z.
pub fn primal(data: &Dataset, m: &MomentFunctional, cfg: &EstimatorConfig) -> Result<SaddleProblem> {
    SaddleProblem::build(data, Side::Primal, m, cfg)
}

/// Builds the dual problem: `q` on Z, moment `m̃` acting on X.
pub fn dualize(data: &Dataset, m_tilde: &MomentFunctional, cfg: &EstimatorConfig) -> Result<SaddleProblem> {
    SaddleProblem::build(data, Side::Dual, m_tilde, cfg)
}

impl SaddleProblem {
    pub fn build(data: &Dataset, side: Side, moment: &MomentFunctional, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let n = data.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty dataset".into()));
        }
        let hyp_pts = data.block(side.hyp_block());
        let adv_pts = data.block(side.adv_block());
        hyp_pts.check_finite("hypothesis block")?;
        adv_pts.check_finite("adversary block")?;
        let hyp_kernel = cfg.hyp_kernel.resolve(hyp_pts)?;
        let adv_kernel = cfg.adv_kernel.resolve(adv_pts)?;
        let hyp_anchors = select_anchors(hyp_pts, cfg.anchor_limit);
        let adv_anchors = select_anchors(adv_pts, cfg.anchor_limit);
        let phi_h = gram(&hyp_kernel, hyp_pts, &hyp_anchors)?;
        let phi_f = gram(&adv_kernel, adv_pts, &adv_anchors)?;
        let nf = n as f64;
        let cross_eval = phi_f.tr_mul(&phi_h) / nf;
        let adv_second = phi_f.tr_mul(&phi_f) / nf;
        let hyp_second = phi_h.tr_mul(&phi_h) / nf;
        let moment_vec = moment_vector(moment, data, side.adv_block(), &adv_kernel, &adv_anchors)?;
        if moment_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("moment vector".into()));
        }
        let hyp_gram = gram(&hyp_kernel, &hyp_anchors, &hyp_anchors)?;
        let adv_gram = gram(&adv_kernel, &adv_anchors, &adv_anchors)?;
        let center = match &cfg.initial {
            Some(f) => project_onto_anchors(f, hyp_pts, &phi_h, &hyp_second)?,
            None => DVector::zeros(hyp_anchors.len()),
        };
        Self::from_parts(
            side,
            (hyp_kernel, hyp_anchors, hyp_gram),
            (adv_kernel, adv_anchors, adv_gram),
            moment_vec,
            cross_eval,
            adv_second,
            hyp_second,
            center,
            n,
            cfg.norm_bound,
        )
    }

    /// Assembles a problem from precomputed matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        side: Side,
        hyp: (KernelSpec, Points, DMatrix<f64>),
        adv: (KernelSpec, Points, DMatrix<f64>),
        moment_vec: DVector<f64>,
        cross_eval: DMatrix<f64>,
        adv_second: DMatrix<f64>,
        hyp_second: DMatrix<f64>,
        center_coeffs: DVector<f64>,
        n: usize,
        norm_bound: f64,
    ) -> Result<Self> {
        let (p, r) = (hyp.1.len(), adv.1.len());
        let shapes = [
            (hyp.2.shape(), (p, p), "hyp_gram"),
            (adv.2.shape(), (r, r), "adv_gram"),
            (cross_eval.shape(), (r, p), "cross_eval"),
            (adv_second.shape(), (r, r), "adv_second"),
            (hyp_second.shape(), (p, p), "hyp_second"),
            ((moment_vec.len(), 1), (r, 1), "moment_vec"),
            ((center_coeffs.len(), 1), (p, 1), "center_coeffs"),
        ];
        for (got, want, what) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{what} is {got:?}, expected {want:?}")));
            }
        }
        positive(norm_bound, "norm_bound")?;
        let hyp_basis = whitening_basis(&hyp.2)?;
        let adv_basis = whitening_basis(&adv.2)?;
        let adv_sd = SimDiag::orthonormal(&adv_basis.tr_mul(&(&adv_second * &adv_basis)));
        let proj_cross = adv_sd.project_matrix(&adv_basis.tr_mul(&cross_eval));
        let proj_moment = adv_sd.project(&adv_basis.tr_mul(&moment_vec));
        Ok(Self {
            side,
            hyp_kernel: hyp.0,
            hyp_anchors: hyp.1,
            hyp_gram: hyp.2,
            adv_kernel: adv.0,
            adv_anchors: adv.1,
            adv_gram: adv.2,
            moment_vec,
            cross_eval,
            adv_second,
            hyp_second,
            center_coeffs,
            n,
            norm_bound,
            adv: adv_sd,
            hyp_basis,
            adv_basis,
            proj_cross,
            proj_moment,
        })
    }

    pub fn hyp_dim(&self) -> usize {
        self.hyp_anchors.len()
    }

    pub fn adv_dim(&self) -> usize {
        self.adv_anchors.len()
    }

    /// Ridge added to the adversary metric; zero in the whitened basis.
    pub fn adv_jitter(&self) -> f64 {
        self.adv.jitter
    }

    /// Wraps coefficients as a function of the hypothesis block.
    pub fn hypothesis(&self, coeffs: &DVector<f64>) -> Result<RepresentedFunction> {
        RepresentedFunction::new(self.hyp_kernel.clone(), self.hyp_anchors.clone(), coeffs.iter().copied().collect())
    }

    pub fn adversary(&self, coeffs: &DVector<f64>) -> Result<RepresentedFunction> {
        RepresentedFunction::new(self.adv_kernel.clone(), self.adv_anchors.clone(), coeffs.iter().copied().collect())
    }

    /// `E_n[(h − h̄)²]` for coefficient vectors.
    pub fn penalty(&self, beta: &DVector<f64>, center: &DVector<f64>) -> f64 {
        let d = beta - center;
        d.dot(&(&self.hyp_second * &d))
    }

    /// `2γᵀ(v − Cβ) − γᵀMγ`.
    pub fn inner_objective(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
        let c = &self.moment_vec - &self.cross_eval * beta;
        2.0 * gamma.dot(&c) - gamma.dot(&(&self.adv_second * gamma))
    }

    /// Squared norm of hypothesis coefficients under the jittered Gram matrix.
    pub fn hyp_norm_sq(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(&self.hyp_gram * beta))
    }

    pub fn adv_norm_sq(&self, gamma: &DVector<f64>) -> f64 {
        gamma.dot(&(&self.adv_gram * gamma)) + self.adv.jitter * gamma.norm_squared()
    }
}

/// Least-squares projection of `f` onto the span of the anchor sections.
fn project_onto_anchors(
    f: &RepresentedFunction,
    pts: &Points,
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let vals = DVector::from_vec(f.eval_points(pts)?);
    let rhs = phi.tr_mul(&vals) / pts.len() as f64;
    let svd = q.clone().svd(true, true);
    svd.solve(&rhs, 1e-12 * svd.singular_values.max()).map_err(|e| Error::Unsupported(e.to_string()))
}

/// Maximizer of the inner problem at fixed `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    pub adv_coeffs: DVector<f64>,
    pub value: f64,
    pub multiplier: f64,
    pub boundary_hit: bool,
}

/// Closed-form adversary for hypothesis coefficients `h_coeffs`.
pub fn inner_max(problem: &SaddleProblem, h_coeffs: &DVector<f64>) -> Result<InnerSolution> {
    let e = &problem.proj_moment - &problem.proj_cross * h_coeffs;
    inner_from_projected(problem, &e)
}

fn inner_from_projected(problem: &SaddleProblem, e: &DVector<f64>) -> Result<InnerSolution> {
    let sd = &problem.adv;
    let b = problem.norm_bound;
    let feasible = |mu: f64| {
        if mu == 0.0 && sd.loads_on_null(e) {
            return false;
        }
        sd.norm_sq(e, mu) <= b
    };
    let search = smallest_feasible_multiplier(feasible);
    let (mu, boundary_hit) = match search {
        Some(s) => (s.multiplier, s.boundary_hit),
        None => (1e30, true),
    };
    let d = sd.inverse_diagonal(mu);
    let s = sd.eigenvalues();
    let g = e.component_mul(&d);
    let value = (0..g.len()).map(|i| 2.0 * g[i] * e[i] - s[i] * g[i] * g[i]).sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite("adversary value".into()));
    }
    let adv_coeffs = &problem.adv_basis * sd.lift(e, &d);
    Ok(InnerSolution { adv_coeffs, value: value.max(0.0), multiplier: mu, boundary_hit })
}

/// `L_n(β)`, the maximal inner value.
pub fn empirical_loss(problem: &SaddleProblem, h_coeffs: &DVector<f64>) -> Result<f64> {
    Ok(inner_max(problem, h_coeffs)?.value)
}

/// One alternation of the saddle solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerStep {
    pub value: f64,
    pub adv_multiplier: f64,
    pub hyp_multiplier: f64,
}

/// Result of one regularized saddle solve.
#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub coeffs: DVector<f64>,
    pub inner: InnerSolution,
    /// `L_n(β) + λ·penalty`.
    pub objective: f64,
    pub history: Vec<InnerStep>,
    pub hyp_multiplier: f64,
    pub hyp_boundary_hit: bool,
}

/// Minimizes `L_n(β) + λ(β − β̄)ᵀQ(β − β̄)` over `βᵀK_Hβ ≤ B`.
pub fn solve_saddle(problem: &SaddleProblem, lambda: f64, center: &DVector<f64>) -> Result<SaddleSolution> {
    let p = problem.hyp_dim();
    let b = problem.norm_bound;
    let mut beta = center.clone();
    if problem.hyp_norm_sq(&beta) > b {
        beta = DVector::zeros(p);
    }
    let mut inner = inner_max(problem, &beta)?;
    let mut objective = inner.value + lambda * problem.penalty(&beta, center);
    let mut history = Vec::new();
    let mut cached: Option<(f64, HypStep)> = None;
    let mut last_change = f64::INFINITY;
    for _ in 0..MAX_ALTERNATIONS {
        let mu = inner.multiplier;
        if !matches!(&cached, Some((m, _)) if *m == mu) {
            cached = Some((mu, hyp_step(problem, lambda, center, mu)?));
        }
        let (_, step) = cached.as_ref().expect("filled above");
        let (nu, hyp_boundary_hit) = (step.multiplier, step.boundary_hit);
        beta = step.coeffs.clone();
        inner = inner_max(problem, &beta)?;
        let next = inner.value + lambda * problem.penalty(&beta, center);
        history.push(InnerStep { value: inner.value, adv_multiplier: inner.multiplier, hyp_multiplier: nu });
        last_change = (next - objective).abs();
        objective = next;
        if last_change < SADDLE_TOL * objective.abs().max(1.0) {
            return Ok(SaddleSolution {
                coeffs: beta,
                inner,
                objective,
                history,
                hyp_multiplier: nu,
                hyp_boundary_hit,
            });
        }
    }
    if let Some(sol) = profile_search(problem, lambda, center, inner.multiplier, &mut history)? {
        return Ok(sol);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ALTERNATIONS,
        last_change,
        last_coeffs: beta.iter().copied().collect(),
    })
}

/// Hypothesis update at a fixed adversary multiplier.
#[derive(Clone, Debug)]
struct HypStep {
    coeffs: DVector<f64>,
    multiplier: f64,
    boundary_hit: bool,
}

fn hyp_step(problem: &SaddleProblem, lambda: f64, center: &DVector<f64>, mu: f64) -> Result<HypStep> {
    let d = problem.adv.inverse_diagonal(mu);
    let g = &problem.proj_cross;
    let dg = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)]);
    let mut a = g.tr_mul(&dg) + &problem.hyp_second * lambda;
    a = (&a + a.transpose()) * 0.5;
    let rhs = dg.tr_mul(&problem.proj_moment) + &problem.hyp_second * center * lambda;
    let t = &problem.hyp_basis;
    let sd = SimDiag::orthonormal(&t.tr_mul(&(a * t)));
    let e2 = sd.project(&t.tr_mul(&rhs));
    let b = problem.norm_bound;
    let search = smallest_feasible_multiplier(|nu| sd.norm_sq(&e2, nu) <= b);
    let (multiplier, boundary_hit) = search.map_or((1e30, true), |s| (s.multiplier, s.boundary_hit));
    let coeffs = t * sd.lift(&e2, &sd.inverse_diagonal(multiplier));
    Ok(HypStep { coeffs, multiplier, boundary_hit })
}

/// `min_β eᵀ(M + μK)⁻¹e + μB + λ·penalty`, an upper bound on the saddle value
/// that is convex in `μ` and tight at the optimal adversary multiplier.
fn profile(problem: &SaddleProblem, lambda: f64, center: &DVector<f64>, mu: f64) -> Result<(f64, HypStep)> {
    let step = hyp_step(problem, lambda, center, mu)?;
    let e = &problem.proj_moment - &problem.proj_cross * &step.coeffs;
    let d = problem.adv.inverse_diagonal(mu);
    let quad = e.iter().zip(d.iter()).map(|(ei, di)| ei * ei * di).sum::<f64>();
    let value = quad + mu * problem.norm_bound + lambda * problem.penalty(&step.coeffs, center);
    Ok((if value.is_finite() { value } else { f64::INFINITY }, step))
}

/// Golden-section search of the profile over `ln μ`, used when the
/// alternation stalls on an active adversary ball.
fn profile_search(
    problem: &SaddleProblem,
    lambda: f64,
    center: &DVector<f64>,
    start: f64,
    history: &mut Vec<InnerStep>,
) -> Result<Option<SaddleSolution>> {
    if !(start > 0.0) || !start.is_finite() {
        return Ok(None);
    }
    let f = |t: f64| profile(problem, lambda, center, t.exp()).map(|(v, _)| v);
    let (mut lo, mut hi) = (start.ln() - 1.0, start.ln() + 1.0);
    let (lo_limit, hi_limit) = (start.ln() - 60.0, start.ln() + 60.0);
    let mid = f(start.ln())?;
    while lo > lo_limit && f(lo)? < mid {
        lo -= 2.0;
    }
    while hi < hi_limit && f(hi)? < mid {
        hi += 2.0;
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let (upper, step) = profile(problem, lambda, center, (0.5 * (lo + hi)).exp())?;
    let inner = inner_max(problem, &step.coeffs)?;
    let objective = inner.value + lambda * problem.penalty(&step.coeffs, center);
    history.push(InnerStep { value: inner.value, adv_multiplier: inner.multiplier, hyp_multiplier: step.multiplier });
    if !(upper - objective <= 1e-6 * objective.abs().max(1.0)) {
        return Ok(None);
    }
    Ok(Some(SaddleSolution {
        coeffs: step.coeffs,
        inner,
        objective,
        history: std::mem::take(history),
        hyp_multiplier: step.multiplier,
        hyp_boundary_hit: step.boundary_hit,
    }))
}

/// Solver diagnostics of a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Hypothesis ball constraint active at the solution.
    pub hyp_ball_active: bool,
    pub adv_ball_active: bool,
    pub version_space_active: bool,
    pub multiplier_boundary_hit: bool,
    /// Largest over smallest positive eigenvalue of `M` relative to `K_F`.
    pub adv_condition: f64,
    pub adv_jitter: f64,
    pub n_hyp_anchors: usize,
    pub n_adv_anchors: usize,
    /// Effective λ and version-space multiplier of the last iterate.
    pub lambda_effective: f64,
    pub version_space_multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub side: Side,
    pub mode: Mode,
    pub hyperparams: Hyperparams,
    pub h_hat: RepresentedFunction,
    pub adv_hat: RepresentedFunction,
    pub inner_history: Vec<InnerStep>,
    pub loss_empirical: f64,
    pub loss_min: f64,
    pub diagnostics: Diagnostics,
    /// Coefficients of `ĥ_1, …, ĥ_t`.
    pub iterates: Vec<Vec<f64>>,
    /// Center of the last Tikhonov step.
    pub last_center: Vec<f64>,
}

impl FitResult {
    pub fn coeffs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.h_hat.coeffs)
    }
}

struct Iterate {
    sol: SaddleSolution,
    lambda_eff: f64,
    kappa: f64,
    active: bool,
    center: DVector<f64>,
}

fn assemble(
    problem: &SaddleProblem,
    mode: Mode,
    hyper: &Hyperparams,
    iterates: Vec<Iterate>,
    loss_min: f64,
) -> Result<FitResult> {
    let mut history = Vec::new();
    let mut boundary = false;
    let mut vs_active = false;
    for it in &iterates {
        history.extend_from_slice(&it.sol.history);
        boundary |= it.sol.hyp_boundary_hit || it.sol.inner.boundary_hit;
        vs_active |= it.active;
    }
    let last = iterates.last().expect("at least one iterate");
    let coeffs = &last.sol.coeffs;
    let s = problem.adv.eigenvalues();
    let smax = s.max();
    let smin = s.iter().copied().filter(|&v| v > 1e-11 * smax).fold(f64::INFINITY, f64::min);
    let diagnostics = Diagnostics {
        iterations: history.len(),
        hyp_ball_active: last.sol.hyp_multiplier > 0.0,
        adv_ball_active: last.sol.inner.multiplier > 0.0,
        version_space_active: vs_active,
        multiplier_boundary_hit: boundary,
        adv_condition: if smin.is_finite() { smax / smin } else { f64::INFINITY },
        adv_jitter: problem.adv.jitter,
        n_hyp_anchors: problem.hyp_dim(),
        n_adv_anchors: problem.adv_dim(),
        lambda_effective: last.lambda_eff,
        version_space_multiplier: last.kappa,
    };
    Ok(FitResult {
        side: problem.side,
        mode,
        hyperparams: hyper.clone(),
        h_hat: problem.hypothesis(coeffs)?,
        adv_hat: problem.adversary(&last.sol.inner.adv_coeffs)?,
        inner_history: history,
        loss_empirical: last.sol.inner.value,
        loss_min,
        diagnostics,
        iterates: iterates.iter().map(|it| it.sol.coeffs.iter().copied().collect()).collect(),
        last_center: last.center.iter().copied().collect(),
    })
}

fn unconstrained_iterates(problem: &SaddleProblem, lambda: f64, t: u32) -> Result<Vec<Iterate>> {
    let mut center = problem.center_coeffs.clone();
    let mut out = Vec::with_capacity(t as usize);
    for k in 0..t as usize {
        let sol = solve_saddle(problem, lambda, &center)
            .map_err(|e| if t > 1 { Error::Iterate { index: k + 1, source: Box::new(e) } } else { e })?;
        let next = sol.coeffs.clone();
        out.push(Iterate { sol, lambda_eff: lambda, kappa: 0.0, active: false, center });
        center = next;
    }
    Ok(out)
}

/// `min_β L_n(β)` over the norm ball.
pub fn minimal_loss(problem: &SaddleProblem) -> Result<SaddleSolution> {
    solve_saddle(problem, 0.0, &DVector::zeros(problem.hyp_dim()))
}

/// Plain Tikhonov fit centered at the problem's center.
pub fn fit_tikhonov(problem: &SaddleProblem, hyper: &Hyperparams) -> Result<FitResult> {
    let its = unconstrained_iterates(problem, hyper.lambda, 1)?;
    let loss_min = minimal_loss(problem)?.inner.value;
    assemble(problem, Mode::Plain, hyper, its, loss_min)
}

/// Iterated Tikhonov: `t` fits, each centered at the previous one.
pub fn fit_iterated(problem: &SaddleProblem, hyper: &Hyperparams) -> Result<FitResult> {
    let its = unconstrained_iterates(problem, hyper.lambda, hyper.t_iters)?;
    let loss_min = minimal_loss(problem)?.inner.value;
    assemble(problem, Mode::Iterated, hyper, its, loss_min)
}

/// Tikhonov within the version space `L_n(h) ≤ min L_n + μ_n`, once per
/// entry of `hyper.mu_n`.
pub fn fit_constrained(problem: &SaddleProblem, hyper: &Hyperparams) -> Result<FitResult> {
    if hyper.mu_n.is_empty() {
        return Err(Error::InvalidParameter("constrained fit needs a version-space slack".into()));
    }
    let min_sol = minimal_loss(problem)?;
    let loss_min = min_sol.inner.value;
    let slack = 1e-12 * loss_min.max(1.0);
    let mut center = problem.center_coeffs.clone();
    let mut out = Vec::with_capacity(hyper.mu_n.len());
    let wrap = |k: usize, e: Error| {
        if hyper.mu_n.len() > 1 {
            Error::Iterate { index: k + 1, source: Box::new(e) }
        } else {
            e
        }
    };
    for (k, &mu) in hyper.mu_n.iter().enumerate() {
        let it = if mu == 0.0 {
            Iterate {
                sol: min_sol.clone(),
                lambda_eff: 0.0,
                kappa: f64::INFINITY,
                active: true,
                center: center.clone(),
            }
        } else {
            constrained_step(problem, hyper.lambda, &center, loss_min + mu + slack).map_err(|e| wrap(k, e))?
        };
        let next = it.sol.coeffs.clone();
        out.push(it);
        center = next;
    }
    let mode = if hyper.mu_n.len() > 1 { Mode::ConstrainedIterated } else { Mode::Constrained };
    assemble(problem, mode, hyper, out, loss_min)
}

fn constrained_step(problem: &SaddleProblem, lambda: f64, center: &DVector<f64>, level: f64) -> Result<Iterate> {
    let free = solve_saddle(problem, lambda, center)?;
    if free.inner.value <= level {
        return Ok(Iterate { sol: free, lambda_eff: lambda, kappa: 0.0, active: false, center: center.clone() });
    }
    let mut failure = None;
    let search = smallest_feasible_multiplier(|kappa| {
        if kappa == 0.0 {
            return false;
        }
        match solve_saddle(problem, lambda / (1.0 + kappa), center) {
            Ok(s) => s.inner.value <= level,
            Err(e) => {
                failure.get_or_insert(e);
                false
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let search = search.ok_or(Error::EmptyVersionSpace)?;
    let lambda_eff = lambda / (1.0 + search.multiplier);
    let mut sol = solve_saddle(problem, lambda_eff, center)?;
    sol.hyp_boundary_hit |= search.boundary_hit;
    Ok(Iterate { sol, lambda_eff, kappa: search.multiplier, active: true, center: center.clone() })
}

/// Dispatches on the mode.
pub fn fit_problem(problem: &SaddleProblem, mode: Mode, hyper: &Hyperparams) -> Result<FitResult> {
    match mode {
        Mode::Plain => fit_tikhonov(problem, hyper),
        Mode::Iterated => fit_iterated(problem, hyper),
        Mode::Constrained | Mode::ConstrainedIterated => fit_constrained(problem, hyper),
    }
}

/// Builds the problem for `side`, resolves the schedule for `data.n()` and fits.
pub fn fit(data: &Dataset, side: Side, moment: &MomentFunctional, cfg: &EstimatorConfig) -> Result<FitResult> {
    let problem = SaddleProblem::build(data, side, moment, cfg)?;
    let hyper = cfg.hyperparams(data.n())?;
    fit_problem(&problem, cfg.mode, &hyper)
}

/// First-order saddle check at a fitted point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Largest decrease of the regularized objective under perturbation of `ĥ`.
    pub outer_decrease: f64,
    /// Largest increase of the inner objective under perturbation of `f̂`.
    pub inner_increase: f64,
    pub passed: bool,
}

fn into_ball(v: DVector<f64>, norm_sq: f64, bound: f64) -> DVector<f64> {
    if norm_sq > bound {
        v * (bound / norm_sq).sqrt()
    } else {
        v
    }
}

/// Perturbs `ĥ` and `f̂` by `±step` along `directions` random unit directions.
pub fn saddle_certificate(
    problem: &SaddleProblem,
    fit: &FitResult,
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<Certificate> {
    let beta = fit.coeffs();
    let gamma = DVector::from_column_slice(&fit.adv_hat.coeffs);
    let center = DVector::from_column_slice(&fit.last_center);
    let lambda = fit.diagnostics.lambda_effective;
    let b = problem.norm_bound;
    let objective = |x: &DVector<f64>| -> Result<f64> {
        Ok(empirical_loss(problem, x)? + lambda * problem.penalty(x, &center))
    };
    let base = objective(&beta)?;
    let inner_base = problem.inner_objective(&beta, &gamma);
    let mut rng = seeded(seed);
    let mut unit = |dim: usize| {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            v / norm
        } else {
            v
        }
    };
    let mut outer_decrease: f64 = 0.0;
    let mut inner_increase: f64 = 0.0;
    for _ in 0..directions {
        let d = unit(problem.hyp_dim());
        let e = unit(problem.adv_dim());
        for sign in [1.0, -1.0] {
            let x = &beta + &d * (sign * step);
            let x = into_ball(x.clone(), problem.hyp_norm_sq(&x), b);
            outer_decrease = outer_decrease.max(base - objective(&x)?);
            let g = &gamma + &e * (sign * step);
            let g = into_ball(g.clone(), problem.adv_norm_sq(&g), b);
            inner_increase = inner_increase.max(problem.inner_objective(&beta, &g) - inner_base);
        }
    }
    Ok(Certificate { outer_decrease, inner_increase, passed: outer_decrease <= 1e-6 && inner_increase <= 1e-6 })
}
