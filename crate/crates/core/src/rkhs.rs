//! Kernels, Gram matrices, represented functions and moment functionals.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major point cloud; serialized as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("points need at least one coordinate".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} values do not fill rows of width {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Dimension(format!("row {i} has width {}, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    /// Single-column points.
    pub fn from_column(values: Vec<f64>) -> Self {
        Self { dim: 1, data: values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }

    /// Distinct rows in lexicographic order.
    pub fn unique_rows(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| cmp_rows(self.row(a), self.row(b)));
        idx.dedup_by(|a, b| cmp_rows(self.row(*a), self.row(*b)) == Ordering::Equal);
        self.select(&idx)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} row {}", pos / self.dim)));
        }
        Ok(())
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl TryFrom<Vec<Vec<f64>>> for Points {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Points> for Vec<Vec<f64>> {
    fn from(p: Points) -> Self {
        p.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Kernel families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Polynomial,
    DiscreteDelta,
}

/// A fully specified positive semidefinite kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−‖a−b‖² / (2·bandwidth²))`
    Gaussian { bandwidth: f64, input_dim: usize },
    /// `(1 + a·b)^degree`
    Polynomial { degree: u32, input_dim: usize },
    /// `1{a = b}`
    DiscreteDelta { input_dim: usize },
}

impl KernelSpec {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Gaussian { .. } => KernelFamily::Gaussian,
            KernelSpec::Polynomial { .. } => KernelFamily::Polynomial,
            KernelSpec::DiscreteDelta { .. } => KernelFamily::DiscreteDelta,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            KernelSpec::Gaussian { input_dim, .. }
            | KernelSpec::Polynomial { input_dim, .. }
            | KernelSpec::DiscreteDelta { input_dim } => input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth, .. } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::InvalidParameter(format!("gaussian bandwidth {bandwidth} must be positive")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => Err(Error::InvalidParameter("polynomial degree must be ≥ 1".into())),
            _ if self.input_dim() == 0 => Err(Error::InvalidParameter("kernel input_dim must be ≥ 1".into())),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth, .. } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, .. } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 + dot).powi(degree as i32)
            }
            KernelSpec::DiscreteDelta { .. } => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∂k(a, p)/∂p_c`; only the gaussian kernel has one.
    pub fn grad(&self, a: &[f64], p: &[f64], coordinate: usize) -> Result<f64> {
        match *self {
            KernelSpec::Gaussian { bandwidth, .. } => {
                Ok(-(p[coordinate] - a[coordinate]) / (bandwidth * bandwidth) * self.eval(a, p))
            }
            _ => Err(Error::Unsupported(format!("{:?} kernel has no analytic gradient", self.family()))),
        }
    }
}

/// Kernel choice before it is resolved against data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Gaussian bandwidth; `None` selects the median heuristic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
}

impl KernelConfig {
    pub fn delta() -> Self {
        Self { family: KernelFamily::DiscreteDelta, bandwidth: None, degree: None }
    }

    pub fn gaussian(bandwidth: Option<f64>) -> Self {
        Self { family: KernelFamily::Gaussian, bandwidth, degree: None }
    }

    pub fn resolve(&self, points: &Points) -> Result<KernelSpec> {
        let input_dim = points.dim();
        let spec = match self.family {
            KernelFamily::Gaussian => {
                let bandwidth = match self.bandwidth {
                    Some(b) => b,
                    None => median_heuristic(points),
                };
                KernelSpec::Gaussian { bandwidth, input_dim }
            }
            KernelFamily::Polynomial => KernelSpec::Polynomial { degree: self.degree.unwrap_or(2), input_dim },
            KernelFamily::DiscreteDelta => KernelSpec::DiscreteDelta { input_dim },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Points used by the median heuristic.
pub const MEDIAN_HEURISTIC_POINTS: usize = 1000;

/// Median pairwise Euclidean distance over the first
/// [`MEDIAN_HEURISTIC_POINTS`] rows; falls back to 1 when it is zero.
pub fn median_heuristic(points: &Points) -> f64 {
    let m = points.len().min(MEDIAN_HEURISTIC_POINTS);
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let s: f64 = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn check_dims(kernel: &KernelSpec, pts: &Points, what: &str) -> Result<()> {
    if pts.dim() != kernel.input_dim() {
        return Err(Error::Dimension(format!(
            "{what} has dimension {}, kernel expects {}",
            pts.dim(),
            kernel.input_dim()
        )));
    }
    pts.check_finite(what)
}

/// `M_ij = k(a_i, b_j)`, assembled row-parallel with a fixed order inside rows.
pub fn gram(kernel: &KernelSpec, pts_a: &Points, pts_b: &Points) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    check_dims(kernel, pts_a, "pts_a")?;
    check_dims(kernel, pts_b, "pts_b")?;
    let nb = pts_b.len();
    let mut rows = vec![0.0; pts_a.len() * nb];
    rows.par_chunks_mut(nb.max(1)).enumerate().for_each(|(i, out)| {
        let a = pts_a.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = kernel.eval(a, pts_b.row(j));
        }
    });
    Ok(DMatrix::from_row_slice(pts_a.len(), nb, &rows))
}

/// `M_ij = ∂k(a_j, p_i)/∂p_c`.
pub fn gradient_matrix(kernel: &KernelSpec, points: &Points, anchors: &Points, coordinate: usize) -> Result<DMatrix<f64>> {
    check_dims(kernel, points, "points")?;
    check_dims(kernel, anchors, "anchors")?;
    if coordinate >= points.dim() {
        return Err(Error::Dimension(format!("derivative coordinate {coordinate} out of range")));
    }
    let bandwidth = match *kernel {
        KernelSpec::Gaussian { bandwidth, .. } => bandwidth,
        _ => return Err(Error::Unsupported(format!("{:?} kernel has no analytic gradient", kernel.family()))),
    };
    let h2 = bandwidth * bandwidth;
    let na = anchors.len();
    let mut rows = vec![0.0; points.len() * na];
    rows.par_chunks_mut(na.max(1)).enumerate().for_each(|(i, out)| {
        let p = points.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            let a = anchors.row(j);
            *o = -(p[coordinate] - a[coordinate]) / h2 * kernel.eval(a, p);
        }
    });
    Ok(DMatrix::from_row_slice(points.len(), na, &rows))
}

/// An RKHS element `Σ_j coeffs_j k(anchors_j, ·) + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentedFunction {
    pub kernel: KernelSpec,
    pub anchors: Points,
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

impl RepresentedFunction {
    pub fn new(kernel: KernelSpec, anchors: Points, coeffs: Vec<f64>) -> Result<Self> {
        if anchors.len() != coeffs.len() {
            return Err(Error::Dimension(format!("{} anchors but {} coefficients", anchors.len(), coeffs.len())));
        }
        check_dims(&kernel, &anchors, "anchors")?;
        Ok(Self { kernel, anchors, coeffs, offset: 0.0 })
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.anchors.rows().zip(&self.coeffs).map(|(a, c)| c * self.kernel.eval(a, p)).sum::<f64>() + self.offset
    }

    pub fn eval_points(&self, pts: &Points) -> Result<Vec<f64>> {
        check_dims(&self.kernel, pts, "evaluation points")?;
        let mut out = vec![0.0; pts.len()];
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = self.eval(pts.row(i)));
        Ok(out)
    }

    pub fn grad(&self, p: &[f64], coordinate: usize) -> Result<f64> {
        let mut s = 0.0;
        for (a, c) in self.anchors.rows().zip(&self.coeffs) {
            s += c * self.kernel.grad(a, p, coordinate)?;
        }
        Ok(s)
    }

    /// `coeffsᵀ K coeffs` with `K` the anchor Gram matrix.
    pub fn rkhs_norm_sq(&self) -> Result<f64> {
        let k = gram(&self.kernel, &self.anchors, &self.anchors)?;
        let c = DVector::from_column_slice(&self.coeffs);
        Ok(c.dot(&(&k * &c)))
    }
}

/// Which observed block a function acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    X,
    Z,
}

/// Observed data: the two blocks plus named scalar columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Points,
    pub z: Points,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: Points, z: Points, columns: BTreeMap<String, Vec<f64>>, seed: u64) -> Result<Self> {
        let n = x.len();
        if z.len() != n {
            return Err(Error::Dimension(format!("x has {n} rows but z has {}", z.len())));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", col.len())));
            }
        }
        Ok(Self { x, z, columns, seed })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn block(&self, b: Block) -> &Points {
        match b {
            Block::X => &self.x,
            Block::Z => &self.z,
        }
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| Error::MissingColumn(name.into()))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let columns = self.columns.iter().map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect())).collect();
        Self { x: self.x.select(idx), z: self.z.select(idx), columns, seed: self.seed }
    }
}

/// Per-sample weight for a weighted-average functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Constant(f64),
    Column(String),
}

/// Linear functionals `f ↦ m(W; f)` of a function of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentFunctional {
    /// `Y · f(V)` for the named outcome column.
    OutcomeProduct { column: String },
    /// `ω · f(V)`
    WeightedAverage { weight: Weight },
    /// `f(t1(V)) − f(t0(V))`, where `t_k` sets one coordinate to a fixed value.
    EvalDifference { coordinate: usize, treated: f64, control: f64 },
    /// `∂f(V)/∂V_c`
    AvgDerivative { coordinate: usize },
}

impl MomentFunctional {
    /// The outcome functional `Y·f(Z)` on column `y`.
    pub fn outcome() -> Self {
        MomentFunctional::OutcomeProduct { column: "y".into() }
    }

    fn weights<'a>(&self, data: &'a Dataset) -> Result<Option<std::borrow::Cow<'a, [f64]>>> {
        use std::borrow::Cow;
        Ok(match self {
            MomentFunctional::OutcomeProduct { column } => Some(Cow::Borrowed(data.column(column)?)),
            MomentFunctional::WeightedAverage { weight: Weight::Column(c) } => Some(Cow::Borrowed(data.column(c)?)),
            MomentFunctional::WeightedAverage { weight: Weight::Constant(w) } => Some(Cow::Owned(vec![*w; data.n()])),
            _ => None,
        })
    }

    fn shifted(points: &Points, coordinate: usize, value: f64) -> Result<Points> {
        if coordinate >= points.dim() {
            return Err(Error::Dimension(format!("shift coordinate {coordinate} out of range")));
        }
        let mut data = points.data.clone();
        for r in data.chunks_exact_mut(points.dim) {
            r[coordinate] = value;
        }
        Ok(Points { dim: points.dim, data })
    }

    /// `m(W_i; f)` for every sample, with `f` acting on `block`.
    pub fn eval_samples(&self, data: &Dataset, block: Block, f: &RepresentedFunction) -> Result<Vec<f64>> {
        let pts = data.block(block);
        if let Some(w) = self.weights(data)? {
            let fv = f.eval_points(pts)?;
            return Ok(fv.iter().zip(w.iter()).map(|(a, b)| a * b).collect());
        }
        match *self {
            MomentFunctional::EvalDifference { coordinate, treated, control } => {
                let a = f.eval_points(&Self::shifted(pts, coordinate, treated)?)?;
                let b = f.eval_points(&Self::shifted(pts, coordinate, control)?)?;
                Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
            }
            MomentFunctional::AvgDerivative { coordinate } => {
                if coordinate >= pts.dim() {
                    return Err(Error::Dimension(format!("derivative coordinate {coordinate} out of range")));
                }
                pts.rows().map(|p| f.grad(p, coordinate)).collect()
            }
            _ => unreachable!("weighted functionals handled above"),
        }
    }

    /// `(1/n) Σ_i m(W_i; f)`.
    pub fn mean(&self, data: &Dataset, block: Block, f: &RepresentedFunction) -> Result<f64> {
        let v = self.eval_samples(data, block, f)?;
        Ok(v.iter().sum::<f64>() / data.n() as f64)
    }
}

/// `v_j = E_n[m(W; k(anchors_j, ·))]`, so that `E_n[m(W; f)] = vᵀcoeffs`.
pub fn moment_vector(
    mf: &MomentFunctional,
    data: &Dataset,
    block: Block,
    kernel: &KernelSpec,
    anchors: &Points,
) -> Result<DVector<f64>> {
    let pts = data.block(block);
    let n = data.n() as f64;
    let mat = match mf {
        MomentFunctional::OutcomeProduct { .. } | MomentFunctional::WeightedAverage { .. } => {
            let w = mf.weights(data)?.expect("weighted functional");
            let phi = gram(kernel, pts, anchors)?;
            return Ok(phi.tr_mul(&DVector::from_column_slice(&w)) / n);
        }
        MomentFunctional::EvalDifference { coordinate, treated, control } => {
            let a = gram(kernel, &MomentFunctional::shifted(pts, *coordinate, *treated)?, anchors)?;
            let b = gram(kernel, &MomentFunctional::shifted(pts, *coordinate, *control)?, anchors)?;
            a - b
        }
        MomentFunctional::AvgDerivative { coordinate } => gradient_matrix(kernel, pts, anchors, *coordinate)?,
    };
    let ones = DVector::from_element(mat.nrows(), 1.0);
    Ok(mat.tr_mul(&ones) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Points {
        Points::from_column(v.to_vec())
    }

    #[test]
    fn gram_examples() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0, input_dim: 1 };
        assert_eq!(gram(&k, &pts(&[0.0]), &pts(&[0.0])).unwrap()[(0, 0)], 1.0);
        let p = pts(&[0.0, (2.0 * 2f64.ln()).sqrt()]);
        let g = gram(&k, &p, &p).unwrap();
        assert!((g[(0, 1)] - 0.5).abs() < 1e-15);
        let d = KernelSpec::DiscreteDelta { input_dim: 1 };
        let p = pts(&[2.0, 0.0, 1.0]);
        let q = pts(&[0.0, 1.0, 2.0]);
        let g = gram(&d, &p, &q).unwrap();
        for i in 0..3 {
            assert_eq!(g.row(i).sum(), 1.0);
            assert_eq!(g.column(i).sum(), 1.0);
        }
    }

    #[test]
    fn gram_errors() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0, input_dim: 2 };
        assert!(matches!(gram(&k, &pts(&[0.0]), &pts(&[0.0])), Err(Error::Dimension(_))));
        let k = KernelSpec::Gaussian { bandwidth: 1.0, input_dim: 1 };
        assert!(matches!(gram(&k, &pts(&[f64::NAN]), &pts(&[0.0])), Err(Error::NonFinite(_))));
    }

    #[test]
    fn polynomial_kernel_value() {
        let k = KernelSpec::Polynomial { degree: 3, input_dim: 2 };
        assert_eq!(k.eval(&[1.0, 2.0], &[0.5, -1.0]), (1.0f64 - 1.5).powi(3));
    }

    #[test]
    fn unique_rows_sorted() {
        let p = Points::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let u = p.unique_rows();
        assert_eq!(u.len(), 2);
        assert_eq!(u.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn points_json_is_rows() {
        let p = Points::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[1.0,2.0],[3.0,4.0]]");
        assert!(serde_json::from_str::<Points>("[[1.0],[2.0,3.0]]").is_err());
    }

    #[test]
    fn median_heuristic_simple() {
        assert_eq!(median_heuristic(&pts(&[0.0, 1.0, 3.0])), 2.0);
        assert_eq!(median_heuristic(&pts(&[0.5, 0.5])), 1.0);
    }

    fn three_sample() -> Dataset {
        let mut cols = BTreeMap::new();
        cols.insert("y".to_string(), vec![0.5, -1.0, 2.0]);
        Dataset::new(pts(&[0.0, 1.0, 0.0]), pts(&[1.0, 0.0, 1.0]), cols, 0).unwrap()
    }

    #[test]
    fn moment_vector_brute_force() {
        let data = three_sample();
        let k = KernelSpec::DiscreteDelta { input_dim: 1 };
        let anchors = pts(&[0.0, 1.0]);
        let v = moment_vector(&MomentFunctional::outcome(), &data, Block::Z, &k, &anchors).unwrap();
        let y = data.column("y").unwrap();
        for (j, a) in [0.0, 1.0].iter().enumerate() {
            let brute: f64 = (0..3).map(|i| if data.z.row(i)[0] == *a { y[i] } else { 0.0 }).sum::<f64>() / 3.0;
            assert!((v[j] - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn moment_vector_zero_cases() {
        let mut data = three_sample();
        data.columns.insert("y".into(), vec![0.0; 3]);
        let k = KernelSpec::Gaussian { bandwidth: 0.7, input_dim: 1 };
        let anchors = pts(&[0.0, 0.3, 1.0]);
        let v = moment_vector(&MomentFunctional::outcome(), &data, Block::Z, &k, &anchors).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        let same = MomentFunctional::EvalDifference { coordinate: 0, treated: 0.4, control: 0.4 };
        let v = moment_vector(&same, &data, Block::X, &k, &anchors).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_column_and_gradient_support() {
        let data = three_sample();
        let k = KernelSpec::DiscreteDelta { input_dim: 1 };
        let m = MomentFunctional::OutcomeProduct { column: "nope".into() };
        assert!(matches!(moment_vector(&m, &data, Block::Z, &k, &pts(&[0.0])), Err(Error::MissingColumn(_))));
        let d = MomentFunctional::AvgDerivative { coordinate: 0 };
        assert!(matches!(moment_vector(&d, &data, Block::X, &k, &pts(&[0.0])), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gaussian_gradient_matches_finite_difference() {
        let k = KernelSpec::Gaussian { bandwidth: 0.8, input_dim: 2 };
        let a = [0.3, -0.2];
        for p in [[0.0, 0.0], [0.5, 0.1], [-0.4, 0.9]] {
            for c in 0..2 {
                let h = 1e-4;
                let mut pp = p;
                let mut pm = p;
                pp[c] += h;
                pm[c] -= h;
                let fd = (k.eval(&a, &pp) - k.eval(&a, &pm)) / (2.0 * h);
                assert!((fd - k.grad(&a, &p, c).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn represented_function_json_layout() {
        let f = RepresentedFunction::new(KernelSpec::DiscreteDelta { input_dim: 1 }, pts(&[0.0, 1.0]), vec![0.5, -0.5])
            .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(
            s,
            r#"{"kernel":{"family":"discrete_delta","input_dim":1},"anchors":[[0.0],[1.0]],"coeffs":[0.5,-0.5],"offset":0.0}"#
        );
        let back: RepresentedFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert_eq!(f.eval(&[1.0]), -0.5);
        assert_eq!(f.rkhs_norm_sq().unwrap(), 0.5);
    }
}
