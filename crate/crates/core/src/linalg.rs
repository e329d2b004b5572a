//! Dense helpers for the quadratic subproblems of the saddle solver.
//!
//! Both the adversary step and the hypothesis step solve systems of the form
//! `(A + μK)x = c` for many multipliers `μ`, with `A` positive semidefinite and
//! `K` a jittered Gram matrix. A single generalized eigendecomposition turns
//! every such solve into a diagonal rescaling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative diagonal jitter applied before factorizing a Gram matrix.
pub const JITTER_REL: f64 = 1e-10;
/// Number of tenfold jitter escalations before giving up.
pub const JITTER_RETRIES: usize = 2;

/// Multiplier grid: 25 geometric points on `[1e-8, 1e4]`.
pub const GRID_LO: f64 = 1e-8;
pub const GRID_HI: f64 = 1e4;
pub const GRID_POINTS: usize = 25;
pub const BISECTION_STEPS: usize = 40;

/// Cholesky factor of `K + εI` with the smallest escalated jitter that works.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let trace = k.trace();
    let base = if trace > 0.0 { JITTER_REL * trace / n as f64 } else { JITTER_REL };
    let mut eps = base;
    for _ in 0..=JITTER_RETRIES {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, eps));
        }
        eps *= 10.0;
    }
    Err(Error::IllConditioned)
}

/// Eigenvalues of a Gram matrix below this fraction of the largest are dropped
/// by [`whitening_basis`].
pub const WHITENING_CUTOFF: f64 = 1e-10;

/// `T` with `TᵀKT = I` spanning the eigendirections of `K` above the cutoff.
pub fn whitening_basis(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gram matrix".into()));
    }
    let eig = SymmetricEigen::new((k + k.transpose()) * 0.5);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lmax > 0.0) {
        return Err(Error::IllConditioned);
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&j| eig.eigenvalues[j] > WHITENING_CUTOFF * lmax).collect();
    Ok(DMatrix::from_fn(k.nrows(), keep.len(), |i, c| {
        let j = keep[c];
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt()
    }))
}

/// Simultaneous diagonalization `PᵀKP = I`, `PᵀAP = diag(s)`.
#[derive(Clone, Debug)]
pub struct SimDiag {
    p: DMatrix<f64>,
    s: DVector<f64>,
    tol: f64,
    pub jitter: f64,
}

impl SimDiag {
    pub fn new(a: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Self> {
        let (ch, jitter) = jittered_cholesky(k)?;
        let l = ch.l();
        // S = L⁻¹ A L⁻ᵀ
        let linv_a = l.solve_lower_triangular(a).ok_or(Error::IllConditioned)?;
        let s_mat = l.solve_lower_triangular(&linv_a.transpose()).ok_or(Error::IllConditioned)?;
        let s_sym = (&s_mat + s_mat.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s_sym);
        let lt = l.transpose();
        let p = lt.solve_upper_triangular(&eig.eigenvectors).ok_or(Error::IllConditioned)?;
        let s = eig.eigenvalues.map(|v| v.max(0.0));
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-11 * smax.max(f64::MIN_POSITIVE);
        Ok(Self { p, s, tol, jitter })
    }

    /// Diagonalization of `A` when `K` is the identity; no jitter is needed.
    pub fn orthonormal(a: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new((a + a.transpose()) * 0.5);
        let s = eig.eigenvalues.map(|v| v.max(0.0));
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-11 * smax.max(f64::MIN_POSITIVE);
        Self { p: eig.eigenvectors, s, tol, jitter: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// Coordinates `g = Pᵀc`.
    pub fn project(&self, c: &DVector<f64>) -> DVector<f64> {
        self.p.tr_mul(c)
    }

    /// `PᵀB` for a matrix right-hand side.
    pub fn project_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.p.tr_mul(b)
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.s
    }

    /// Diagonal of `(diag(s) + μ)⁺`, with null directions dropped at `μ = 0`.
    pub fn inverse_diagonal(&self, mu: f64) -> DVector<f64> {
        self.s.map(|s| {
            let d = s + mu;
            if mu == 0.0 && s <= self.tol {
                0.0
            } else {
                1.0 / d
            }
        })
    }

    /// Whether `g` has mass on directions that are null at `μ = 0`.
    pub fn loads_on_null(&self, g: &DVector<f64>) -> bool {
        let scale = g.norm().max(f64::MIN_POSITIVE);
        self.s.iter().zip(g.iter()).any(|(&s, &gi)| s <= self.tol && gi.abs() > 1e-9 * scale)
    }

    /// `x = P diag(d) g`.
    pub fn lift(&self, g: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.p * g.component_mul(d)
    }

    /// `K`-norm² of the solution at multiplier `μ`.
    pub fn norm_sq(&self, g: &DVector<f64>, mu: f64) -> f64 {
        let d = self.inverse_diagonal(mu);
        g.iter().zip(d.iter()).map(|(gi, di)| gi * gi * di * di).sum()
    }
}

/// Outcome of a multiplier line search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiplierSearch {
    pub multiplier: f64,
    /// The grid's upper end was not feasible and the search had to extend it.
    pub boundary_hit: bool,
}

/// Smallest `μ ≥ 0` with `feasible(μ)`, for a predicate monotone in `μ`.
///
/// Checks `μ = 0`, then the geometric grid, then bisects the bracketing cell.
/// When the whole grid fails the bracket is extended by decades up to `1e30`.
pub fn smallest_feasible_multiplier(mut feasible: impl FnMut(f64) -> bool) -> Option<MultiplierSearch> {
    if feasible(0.0) {
        return Some(MultiplierSearch { multiplier: 0.0, boundary_hit: false });
    }
    let ratio = (GRID_HI / GRID_LO).powf(1.0 / (GRID_POINTS - 1) as f64);
    let mut lo = 0.0;
    let mut hi = None;
    let mut boundary_hit = false;
    for k in 0..GRID_POINTS {
        let mu = GRID_LO * ratio.powi(k as i32);
        if feasible(mu) {
            hi = Some(mu);
            break;
        }
        lo = mu;
    }
    if hi.is_none() {
        boundary_hit = true;
        let mut mu = GRID_HI;
        while mu < 1e30 {
            mu *= 10.0;
            if feasible(mu) {
                hi = Some(mu);
                break;
            }
            lo = mu;
        }
    }
    let mut hi = hi?;
    for _ in 0..BISECTION_STEPS {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(MultiplierSearch { multiplier: hi, boundary_hit })
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` with `σ` sorted in
/// decreasing order, computed from the symmetric eigenproblem of
/// `[[0, A], [Aᵀ, 0]]`. Singular values at or below `tol` are returned as
/// zero and their vectors complete the orthonormal bases.
pub fn thin_svd(a: &DMatrix<f64>, tol: f64) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let k = m.min(n);
    let mut aug = DMatrix::zeros(m + n, m + n);
    aug.view_mut((0, m), (m, n)).copy_from(a);
    aug.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let eig = SymmetricEigen::new(aug);
    let mut order: Vec<usize> = (0..m + n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut sigma = Vec::with_capacity(k);
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let s = eig.eigenvalues[i];
        if s <= tol {
            break;
        }
        let col = eig.eigenvectors.column(i);
        sigma.push(s);
        us.push(col.rows(0, m).normalize());
        vs.push(col.rows(m, n).normalize());
    }
    complete_basis(&mut us, m, k);
    complete_basis(&mut vs, n, k);
    sigma.resize(k, 0.0);
    (sigma, DMatrix::from_columns(&us), DMatrix::from_columns(&vs))
}

/// Extends orthonormal `basis` to `target` vectors by Gram-Schmidt over the
/// standard basis of `R^dim`.
fn complete_basis(basis: &mut Vec<DVector<f64>>, dim: usize, target: usize) {
    for e in 0..dim {
        if basis.len() >= target {
            return;
        }
        let mut v = DVector::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
}
