//! Exact spectral model of a truncated inverse problem.
//!
//! In the singular basis of a compact operator `T` every Tikhonov-type
//! estimator acts coordinatewise, so regularized solutions, their biases and
//! the theoretical rate exponents can be evaluated in closed form. The
//! estimator tests use this module as their reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormal bases the singular functions are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BasisId {
    #[default]
    Coordinate,
    Cosine,
    Hermite,
}

/// Truncated singular system `{σ_i}` of a conditional expectation operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    singular_values: Vec<f64>,
    basis: BasisId,
}

impl SpectralOperator {
    /// Validates `1 ≥ σ_1 ≥ … ≥ σ_K ≥ 0`.
    pub fn new(singular_values: Vec<f64>, basis: BasisId) -> Result<Self> {
        if singular_values.is_empty() {
            return Err(Error::InvalidParameter("operator needs at least one singular value".into()));
        }
        for (i, &s) in singular_values.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("singular value {i}")));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidParameter(format!("singular value {i} = {s} outside [0, 1]")));
            }
        }
        if singular_values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("singular values must be non-increasing".into()));
        }
        Ok(Self { singular_values, basis })
    }

    pub fn coordinate(singular_values: Vec<f64>) -> Result<Self> {
        Self::new(singular_values, BasisId::Coordinate)
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn basis(&self) -> BasisId {
        self.basis
    }

    /// Truncation dimension.
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    /// Coefficients of `T h` given the coefficients of `h`.
    pub fn apply(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_len(coeffs.len(), "coefficient vector")?;
        Ok(self.singular_values.iter().zip(coeffs).map(|(s, a)| s * a).collect())
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.k() {
            return Err(Error::Dimension(format!("{what} has length {len}, operator has K = {}", self.k())));
        }
        Ok(())
    }
}

/// A solution `h0 = (T*T)^{β/2} w0` written in the right singular basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub coefficients: Vec<f64>,
    pub beta: f64,
    /// `‖w0‖²`, summed over the non-null spectrum.
    pub w_norm_sq: f64,
}

impl SourceFunction {
    /// Reads off the source representation of arbitrary coefficients `a`.
    ///
    /// Fails when `a` loads on a null direction; `w_norm_sq` may be infinite
    /// only through floating point overflow.
    pub fn from_coefficients(op: &SpectralOperator, coefficients: Vec<f64>, beta: f64) -> Result<Self> {
        op.check_len(coefficients.len(), "coefficient vector")?;
        check_beta(beta)?;
        let mut w_norm_sq = 0.0;
        for (i, (&s, &a)) in op.singular_values().iter().zip(&coefficients).enumerate() {
            if s == 0.0 {
                if a != 0.0 {
                    return Err(Error::InvalidParameter(format!("coefficient {i} loads on a zero singular value")));
                }
            } else {
                w_norm_sq += a * a / s.powf(2.0 * beta);
            }
        }
        Ok(Self { coefficients, beta, w_norm_sq })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("source degree β = {beta} must be finite and nonnegative")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must be positive")));
    }
    Ok(())
}

/// Builds `a_i = σ_i^β w_i`.
pub fn make_source_solution(op: &SpectralOperator, beta: f64, w: &[f64]) -> Result<SourceFunction> {
    op.check_len(w.len(), "w")?;
    check_beta(beta)?;
    let mut coefficients = Vec::with_capacity(w.len());
    for (i, (&s, &wi)) in op.singular_values().iter().zip(w).enumerate() {
        if !wi.is_finite() {
            return Err(Error::NonFinite(format!("w[{i}]")));
        }
        if s == 0.0 && wi != 0.0 {
            return Err(Error::InvalidParameter(format!("w[{i}] = {wi} is nonzero at a zero singular value")));
        }
        // powf(0.0) is 1 even for σ = 0, which keeps β = 0 an exact identity.
        coefficients.push(s.powf(beta) * wi);
    }
    let w_norm_sq = w.iter().map(|v| v * v).sum();
    Ok(SourceFunction { coefficients, beta, w_norm_sq })
}

/// Coordinates of `argmin ‖T(h0 − h)‖² + λ‖h‖²`.
pub fn tikhonov_coefficients(op: &SpectralOperator, source: &SourceFunction, lambda: f64) -> Result<Vec<f64>> {
    iterated_tikhonov_coefficients(op, source, lambda, 1)
}

/// Coordinates of the `t`-th iterated Tikhonov solution started at zero.
///
/// The filter is evaluated as `1 − (λ/(σ²+λ))^t`, which is the closed form
/// `((σ²+λ)^t − λ^t)/(σ²+λ)^t` without the cancellation for large `t`.
pub fn iterated_tikhonov_coefficients(
    op: &SpectralOperator,
    source: &SourceFunction,
    lambda: f64,
    t: u32,
) -> Result<Vec<f64>> {
    op.check_len(source.coefficients.len(), "source coefficients")?;
    check_lambda(lambda)?;
    if t < 1 {
        return Err(Error::InvalidParameter("t must be at least 1".into()));
    }
    Ok(op
        .singular_values()
        .iter()
        .zip(&source.coefficients)
        .map(|(&s, &a)| filter(s, lambda, t) * a)
        .collect())
}

/// Iterated Tikhonov filter factor for one singular value.
pub fn filter(sigma: f64, lambda: f64, t: u32) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    let ratio = lambda / (s2 + lambda);
    if t == 1 {
        s2 / (s2 + lambda)
    } else {
        1.0 - ratio.powi(t as i32)
    }
}

/// One recentred step `argmin ‖T(h0 − h)‖² + λ‖h − center‖²`, solved per coordinate.
pub fn tikhonov_step(op: &SpectralOperator, target: &[f64], center: &[f64], lambda: f64) -> Result<Vec<f64>> {
    op.check_len(target.len(), "target")?;
    op.check_len(center.len(), "center")?;
    check_lambda(lambda)?;
    Ok(op
        .singular_values()
        .iter()
        .zip(target.iter().zip(center))
        .map(|(&s, (&a, &c))| {
            let s2 = s * s;
            (s2 * a + lambda * c) / (s2 + lambda)
        })
        .collect())
}

/// Squared strong and weak distances of a regularized solution from `h0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasNorms {
    /// `‖h_* − h0‖²`
    pub strong_sq: f64,
    /// `‖T(h_* − h0)‖²`
    pub weak_sq: f64,
}

pub fn bias_norms(op: &SpectralOperator, source: &SourceFunction, reg_coeffs: &[f64]) -> Result<BiasNorms> {
    op.check_len(reg_coeffs.len(), "regularized coefficients")?;
    op.check_len(source.coefficients.len(), "source coefficients")?;
    let mut strong_sq = 0.0;
    let mut weak_sq = 0.0;
    for ((&s, &a0), &a) in op.singular_values().iter().zip(&source.coefficients).zip(reg_coeffs) {
        let d = a - a0;
        strong_sq += d * d;
        weak_sq += s * s * d * d;
    }
    Ok(BiasNorms { strong_sq, weak_sq })
}

/// Upper bounds `‖w0‖²λ^{min(β,2t)}` and `‖w0‖²λ^{min(β+1,2t)}` on the biases.
pub fn bias_bounds(source: &SourceFunction, lambda: f64, t: u32) -> BiasNorms {
    let cap = 2.0 * f64::from(t);
    BiasNorms {
        strong_sq: source.w_norm_sq * lambda.powf(source.beta.min(cap)),
        weak_sq: source.w_norm_sq * lambda.powf((source.beta + 1.0).min(cap)),
    }
}

/// Rate exponents as functions of the source degree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateExponents {
    pub beta: f64,
    pub gamma: f64,
    /// Required `α` in `δ_n = o(n^{-α})` when the well-posed side is unknown.
    pub alpha_unknown_side: f64,
    /// Required `α` when the well-posed side is known.
    pub alpha_known_side: f64,
    /// Required `α` when the hypothesis spaces have smoothness exponent `γ`.
    pub alpha_smooth: f64,
    /// Exponent `κ` in `‖ĥ − h0‖² ∼ δ_n^κ` for the iterated estimator.
    pub kappa_strong: f64,
}

/// Evaluates the rate formulas at `β`.
///
/// `β = 0` is the exact limit: the branch `(1+β)/(4β)` becomes `+∞` and drops
/// out of the minimum.
pub fn rate_exponents(beta: f64, gamma: f64) -> Result<RateExponents> {
    check_beta(beta)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("γ = {gamma} outside [0, 1]")));
    }
    let m = beta.min(1.0);
    let base = (1.0 + m) / (2.0 + 4.0 * m);
    let alpha_unknown_side = base.min((1.0 + beta) / (4.0 * beta));
    let alpha_known_side = base.min((2.0 + beta) / (4.0 + 4.0 * beta));
    let alpha_smooth = base.min((1.0 + beta) / (2.0 * gamma + 4.0 * beta));
    let kappa_strong = 2.0 * (m / (1.0 + m)).max(beta / (2.0 + beta));
    Ok(RateExponents { beta, gamma, alpha_unknown_side, alpha_known_side, alpha_smooth, kappa_strong })
}

/// `κ` for the iterated estimator over smooth hypothesis spaces.
pub fn kappa_smooth(beta: f64) -> f64 {
    let m = beta.min(1.0);
    2.0 * (m / (1.0 + m)).max(beta / (1.0 + beta))
}

/// `κ` of the constrained-optimization baseline: `0` below `β = 1`, `1` above.
pub fn kappa_constrained_baseline(beta: f64) -> f64 {
    if beta < 1.0 {
        0.0
    } else {
        1.0
    }
}

/// `κ` of plain Tikhonov with a saturating source degree, `min(β,2)/(2+min(β,2))`.
pub fn kappa_plain_tikhonov(beta: f64) -> f64 {
    let b = beta.min(2.0);
    b / (2.0 + b)
}

/// Serializable operator plus source description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub singular_values: Vec<f64>,
    #[serde(default)]
    pub basis: BasisId,
    pub beta: f64,
    pub w: Vec<f64>,
}

impl OperatorSpec {
    pub fn build(&self) -> Result<(SpectralOperator, SourceFunction)> {
        let op = SpectralOperator::new(self.singular_values.clone(), self.basis)?;
        let src = make_source_solution(&op, self.beta, &self.w)?;
        Ok((op, src))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(s: &[f64]) -> SpectralOperator {
        SpectralOperator::coordinate(s.to_vec()).unwrap()
    }

    #[test]
    fn source_solution_examples() {
        let s = make_source_solution(&op(&[0.5]), 2.0, &[1.0]).unwrap();
        assert_eq!(s.coefficients, vec![0.25]);
        let s = make_source_solution(&op(&[1.0, 0.25, 0.0]), 1.0, &[1.0, 2.0, 0.0]).unwrap();
        assert_eq!(s.coefficients, vec![1.0, 0.5, 0.0]);
        assert_eq!(s.w_norm_sq, 5.0);
        let w = [0.3, -1.2, 0.0];
        let s = make_source_solution(&op(&[0.9, 0.4, 0.0]), 0.0, &w).unwrap();
        assert_eq!(s.coefficients, w.to_vec());
    }

    #[test]
    fn source_solution_errors() {
        assert!(matches!(make_source_solution(&op(&[1.0, 0.0]), 1.0, &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(
            make_source_solution(&op(&[1.0, 0.0]), 1.0, &[1.0, 1.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn operator_validation() {
        assert!(SpectralOperator::coordinate(vec![1.2]).is_err());
        assert!(SpectralOperator::coordinate(vec![0.5, 0.6]).is_err());
        assert!(SpectralOperator::coordinate(vec![]).is_err());
        assert_eq!(op(&[1.0, 0.5]).apply(&[2.0, 2.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn tikhonov_examples() {
        let o = op(&[1.0]);
        let s = SourceFunction::from_coefficients(&o, vec![1.0], 0.0).unwrap();
        assert_eq!(tikhonov_coefficients(&o, &s, 1.0).unwrap(), vec![0.5]);

        let o = op(&[1.0, 0.5]);
        let s = SourceFunction::from_coefficients(&o, vec![1.0, 0.25], 0.0).unwrap();
        let c = tikhonov_coefficients(&o, &s, 0.25).unwrap();
        assert!((c[0] - 0.8).abs() < 1e-15 && (c[1] - 0.125).abs() < 1e-15);

        let o = op(&[1.0, 0.5, 0.1]);
        let s = SourceFunction::from_coefficients(&o, vec![0.3, -2.0, 1.5], 0.0).unwrap();
        let c = tikhonov_coefficients(&o, &s, 1e-12).unwrap();
        for (a, b) in c.iter().zip(&s.coefficients) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(tikhonov_coefficients(&o, &s, 0.0).is_err());
    }

    #[test]
    fn iterated_examples() {
        let o = op(&[1.0]);
        let s = SourceFunction::from_coefficients(&o, vec![1.0], 0.0).unwrap();
        assert_eq!(iterated_tikhonov_coefficients(&o, &s, 1.0, 2).unwrap(), vec![0.75]);
        let c = iterated_tikhonov_coefficients(&o, &s, 0.5, 50).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!(iterated_tikhonov_coefficients(&o, &s, 0.5, 0).is_err());

        let o = op(&[0.9, 0.3, 0.05, 0.0]);
        let s = SourceFunction::from_coefficients(&o, vec![0.1, 0.7, -0.4, 0.0], 0.5).unwrap();
        assert_eq!(
            iterated_tikhonov_coefficients(&o, &s, 0.07, 1).unwrap(),
            tikhonov_coefficients(&o, &s, 0.07).unwrap()
        );
    }

    #[test]
    fn bias_examples() {
        let o = op(&[1.0]);
        let s = SourceFunction::from_coefficients(&o, vec![1.0], 0.0).unwrap();
        let b = bias_norms(&o, &s, &s.coefficients).unwrap();
        assert_eq!((b.strong_sq, b.weak_sq), (0.0, 0.0));
        let c = tikhonov_coefficients(&o, &s, 1.0).unwrap();
        let b = bias_norms(&o, &s, &c).unwrap();
        assert_eq!((b.strong_sq, b.weak_sq), (0.25, 0.25));
        assert!(bias_norms(&o, &s, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bias_bounds_harmonic_spectrum() {
        let sig: Vec<f64> = (1..=200).map(|i| (i as f64).powf(-0.5)).collect();
        let o = op(&sig);
        let mut w = vec![0.0; 200];
        w[0] = 1.0;
        let s = make_source_solution(&o, 1.0, &w).unwrap();
        assert!((s.w_norm_sq - 1.0).abs() < 1e-15);
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1] {
            for t in [1, 2, 4] {
                let c = iterated_tikhonov_coefficients(&o, &s, lambda, t).unwrap();
                let b = bias_norms(&o, &s, &c).unwrap();
                let bound = bias_bounds(&s, lambda, t);
                assert!(b.strong_sq <= bound.strong_sq && b.weak_sq <= bound.weak_sq);
            }
        }
    }

    #[test]
    fn rate_examples() {
        let r = rate_exponents(1.0, 0.0).unwrap();
        assert!((r.alpha_unknown_side - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.kappa_strong - 1.0).abs() < 1e-15);
        let r = rate_exponents(1e6, 0.0).unwrap();
        assert!((r.alpha_unknown_side - 0.25).abs() < 1e-4);
        let r = rate_exponents(0.0, 0.0).unwrap();
        assert_eq!(r.alpha_unknown_side, 0.5);
        assert_eq!(r.kappa_strong, 0.0);
        let r = rate_exponents(2.5, 1.0).unwrap();
        assert!((r.alpha_smooth - 3.5 / 12.0).abs() < 1e-15);
        assert!(rate_exponents(1.0, 1.5).is_err());
        assert!(rate_exponents(-1.0, 0.0).is_err());
    }

    #[test]
    fn smooth_alpha_at_zero_gamma_is_unknown_side() {
        for i in 1..200 {
            let b = i as f64 * 0.05;
            let r = rate_exponents(b, 0.0).unwrap();
            assert_eq!(r.alpha_smooth, r.alpha_unknown_side);
        }
    }

    #[test]
    fn comparison_curves() {
        assert_eq!(kappa_constrained_baseline(0.99), 0.0);
        assert_eq!(kappa_constrained_baseline(1.0), 1.0);
        assert!((kappa_plain_tikhonov(4.0) - 0.5).abs() < 1e-15);
        assert!((kappa_smooth(3.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn operator_spec_json_roundtrip() {
        let json = r#"{"singular_values":[1.0,0.5],"basis":"coordinate","beta":2.0,"w":[1.0,1.0]}"#;
        let spec: OperatorSpec = serde_json::from_str(json).unwrap();
        let (o, s) = spec.build().unwrap();
        assert_eq!(o.k(), 2);
        assert_eq!(s.coefficients, vec![1.0, 0.25]);
        let back = serde_json::to_string(&spec).unwrap();
        assert_eq!(back, json);
    }
}
