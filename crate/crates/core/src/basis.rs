//! Noise basis sets and the covariance operator `Σ = H Hᵀ`.
//!
//! A [`Basis`] is a concrete ordered list `H = [h_1, …, h_M]` of fields with the
//! data shape. A [`BasisSet`] is what a diffusion process holds: either one fixed
//! `Basis` shared by every sample, or a rule that builds the basis from a
//! `(clean, degraded)` pair. Nothing here assumes the `h_m` are orthogonal.

use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;

/// Largest data dimension for which a dense `d × d` covariance is built.
pub const DENSE_CAP: usize = 4096;

/// Dense inversion refuses covariances with a larger condition estimate.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    Fixed,
    SampleDependent,
}

/// The pair a sample-dependent basis is built from.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub clean: &'a Field,
    pub degraded: &'a Field,
}

impl<'a> Conditioning<'a> {
    pub fn new(clean: &'a Field, degraded: &'a Field) -> Self {
        Self { clean, degraded }
    }
}

#[derive(Debug, Clone)]
enum Elements {
    Listed(Arc<Vec<Field>>),
    /// Indicator fields `E_k`, one per entry; never materialized.
    Pixel,
}

/// A concrete basis `H`.
#[derive(Debug, Clone)]
pub struct Basis {
    mode: BasisMode,
    shape: Vec<usize>,
    elements: Elements,
    sum: Arc<Field>,
}

impl Basis {
    /// Basis from an explicit element list. Elements must share one shape and
    /// the list must be nonempty.
    pub fn from_elements(elements: Vec<Field>, mode: BasisMode) -> Result<Basis> {
        let first = elements
            .first()
            .ok_or_else(|| Error::InvalidArgument("basis needs at least one element".into()))?;
        let shape = first.shape().to_vec();
        let mut sum = Field::zeros(&shape);
        for h in &elements {
            h.ensure_shape(&shape)?;
            sum += h;
        }
        Ok(Basis {
            mode,
            shape,
            elements: Elements::Listed(Arc::new(elements)),
            sum: Arc::new(sum),
        })
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    /// Number of elements `M`.
    pub fn len(&self) -> usize {
        match &self.elements {
            Elements::Listed(v) => v.len(),
            Elements::Pixel => self.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element(&self, m: usize) -> Cow<'_, Field> {
        match &self.elements {
            Elements::Listed(v) => Cow::Borrowed(&v[m]),
            Elements::Pixel => {
                let mut e = Field::zeros(&self.shape);
                e.data_mut()[m] = 1.0;
                Cow::Owned(e)
            }
        }
    }

    /// `Σ_m h_m`
    pub fn sum(&self) -> &Field {
        &self.sum
    }

    /// `Hᵀ v`: the inner products `⟨h_m, v⟩`.
    pub fn project(&self, v: &Field) -> Vec<f64> {
        match &self.elements {
            Elements::Listed(hs) => hs.iter().map(|h| h.dot(v)).collect(),
            Elements::Pixel => v.data().to_vec(),
        }
    }

    /// `H c = Σ_m c_m h_m`
    pub fn combine(&self, coeffs: &[f64]) -> Field {
        assert_eq!(
            coeffs.len(),
            self.len(),
            "one coefficient per basis element"
        );
        match &self.elements {
            Elements::Listed(hs) => {
                let mut out = Field::zeros(&self.shape);
                for (h, &c) in hs.iter().zip(coeffs) {
                    if c != 0.0 {
                        out.axpy(c, h);
                    }
                }
                out
            }
            Elements::Pixel => Field::new(self.shape.clone(), coeffs.to_vec()).expect("M = d"),
        }
    }

    /// `Σ v = H (Hᵀ v)` in `O(M d)`.
    pub fn apply_covariance(&self, v: &Field) -> Result<Field> {
        v.ensure_shape(&self.shape)?;
        Ok(self.combine(&self.project(v)))
    }

    /// `Σ = H Hᵀ` as a dense matrix. Only for `d ≤ DENSE_CAP`.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > DENSE_CAP {
            return Err(Error::DenseTooLarge {
                dim: d,
                cap: DENSE_CAP,
            });
        }
        match &self.elements {
            Elements::Pixel => Ok(DMatrix::identity(d, d)),
            Elements::Listed(hs) => {
                let h = DMatrix::from_fn(d, hs.len(), |i, m| hs[m].data()[i]);
                Ok(&h * h.transpose())
            }
        }
    }
}

/// The basis a diffusion process is configured with.
#[derive(Debug, Clone)]
pub enum BasisSet {
    /// One basis for every sample.
    Fixed(Basis),
    /// `H = [degraded − clean]`, rebuilt for each conditioning pair.
    Residual { shape: Vec<usize> },
}

impl BasisSet {
    pub fn fixed(elements: Vec<Field>) -> Result<BasisSet> {
        Ok(BasisSet::Fixed(Basis::from_elements(
            elements,
            BasisMode::Fixed,
        )?))
    }

    pub fn residual(shape: &[usize]) -> BasisSet {
        BasisSet::Residual {
            shape: shape.to_vec(),
        }
    }

    pub fn mode(&self) -> BasisMode {
        match self {
            BasisSet::Fixed(_) => BasisMode::Fixed,
            BasisSet::Residual { .. } => BasisMode::SampleDependent,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            BasisSet::Fixed(b) => b.shape(),
            BasisSet::Residual { shape } => shape,
        }
    }

    /// Concrete basis for one sample. Fixed sets ignore `cond`; sample-dependent
    /// sets require it.
    pub fn resolve(&self, cond: Option<Conditioning<'_>>) -> Result<Cow<'_, Basis>> {
        match self {
            BasisSet::Fixed(b) => Ok(Cow::Borrowed(b)),
            BasisSet::Residual { shape } => {
                let c = cond.ok_or(Error::MissingConditioning)?;
                c.clean.ensure_shape(shape)?;
                Ok(Cow::Owned(residual_basis(c.clean, c.degraded)?))
            }
        }
    }
}

/// The indicator basis `E_k`: `Σ = I`.
pub fn pixel_basis(shape: &[usize]) -> BasisSet {
    BasisSet::Fixed(Basis {
        mode: BasisMode::Fixed,
        shape: shape.to_vec(),
        elements: Elements::Pixel,
        sum: Arc::new(Field::filled(shape, 1.0)),
    })
}

/// Single-element sample-dependent basis `[degraded − clean]`.
pub fn residual_basis(clean: &Field, degraded: &Field) -> Result<Basis> {
    clean.ensure_same_shape(degraded)?;
    Basis::from_elements(vec![degraded - clean], BasisMode::SampleDependent)
}

/// `Σ_m h_m` for the basis selected by `cond`.
pub fn basis_sum(set: &BasisSet, cond: Option<Conditioning<'_>>) -> Result<Field> {
    Ok(set.resolve(cond)?.sum().clone())
}

/// `P_0..=P_n` at `x` by the three-term recurrence.
pub fn legendre_values(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p
}

/// Grid coordinate in `[-1, 1]` for index `i` of `n` samples.
pub fn grid_coordinate(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Maps a field linearly so its minimum lands on 0.9 and its maximum on 1.1.
/// Constant fields map to 1.0.
pub fn rescale_to_band(f: &Field) -> Field {
    let lo = f.min();
    let hi = f.max();
    let range = hi - lo;
    if range <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
        return Field::filled(f.shape(), 1.0);
    }
    f.map(|v| 0.9 + 0.2 * (v - lo) / range)
}

/// Smooth basis for multiplicative bias fields: 2-D Legendre products of total
/// degree `≤ n1` followed by rotated cosines/sines of frequencies `2..=n2` at
/// angles 0°, 10°, …, 180°. Each function is rescaled to `[0.9, 1.1]`.
///
/// Element order: Legendre `(m, n)` lexicographic, then for each frequency and
/// angle a cosine followed by a sine. `grid` is `[rows, cols]`; columns span
/// `x ∈ [-1, 1]`, rows span `y ∈ [-1, 1]`.
pub fn legendre_trig_basis(n1: usize, n2: usize, grid: [usize; 2]) -> Result<BasisSet> {
    if n2 < 2 {
        return Err(Error::InvalidArgument(format!(
            "trigonometric order must be >= 2, got {n2}"
        )));
    }
    let [rows, cols] = grid;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!("empty grid {grid:?}")));
    }
    let px: Vec<Vec<f64>> = (0..cols)
        .map(|j| legendre_values(n1, grid_coordinate(j, cols)))
        .collect();
    let py: Vec<Vec<f64>> = (0..rows)
        .map(|i| legendre_values(n1, grid_coordinate(i, rows)))
        .collect();

    let mut elements = Vec::new();
    for m in 0..=n1 {
        for n in 0..=(n1 - m) {
            let raw = Field::from_fn_2d(rows, cols, |i, j| px[j][m] * py[i][n]);
            elements.push(rescale_to_band(&raw));
        }
    }
    for freq in 2..=n2 {
        let k = freq as f64;
        for step in 0..=18 {
            let theta = (10.0 * step as f64).to_radians();
            let (st, ct) = theta.sin_cos();
            let arg = |i: usize, j: usize| {
                k * (grid_coordinate(j, cols) * ct + grid_coordinate(i, rows) * st)
            };
            elements.push(rescale_to_band(&Field::from_fn_2d(rows, cols, |i, j| {
                arg(i, j).cos()
            })));
            elements.push(rescale_to_band(&Field::from_fn_2d(rows, cols, |i, j| {
                arg(i, j).sin()
            })));
        }
    }
    BasisSet::fixed(elements)
}

/// Dense inverse of a scaled covariance, with the condition check applied.
#[derive(Debug, Clone)]
pub struct CovarianceInverse {
    inverse: DMatrix<f64>,
    condition: f64,
    log_det: f64,
}

impl CovarianceInverse {
    /// Factorizes `sigma`, refusing rank-deficient or ill-conditioned input.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(sigma.clone());
        let max = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::SingularCovariance { condition });
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or(Error::SingularCovariance { condition })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            inverse: chol.inverse(),
            condition,
            log_det,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `Σ⁻¹ v`
    pub fn solve(&self, v: &Field) -> Field {
        let x = &self.inverse * DVector::from_column_slice(v.data());
        Field::new(v.shape().to_vec(), x.as_slice().to_vec()).expect("same length")
    }

    /// `vᵀ Σ⁻¹ v`
    pub fn quadratic(&self, v: &Field) -> f64 {
        v.dot(&self.solve(v))
    }
}

/// Covariance operator bound to a concrete basis.
#[derive(Debug, Clone)]
pub struct CovarianceOp {
    basis: Basis,
}

impl CovarianceOp {
    pub fn new(basis: Basis) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn apply(&self, v: &Field) -> Result<Field> {
        self.basis.apply_covariance(v)
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        self.basis.dense_covariance()
    }

    pub fn inverse(&self) -> Result<CovarianceInverse> {
        CovarianceInverse::new(&self.dense()?)
    }
}

/// `Σ v` through the operator form.
pub fn apply_covariance(op: &CovarianceOp, v: &Field) -> Result<Field> {
    op.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn, Rng};

    fn dense_of(b: &Basis) -> DMatrix<f64> {
        b.dense_covariance().unwrap()
    }

    fn fixed_basis(set: &BasisSet) -> &Basis {
        match set {
            BasisSet::Fixed(b) => b,
            _ => panic!("expected fixed basis"),
        }
    }

    #[test]
    fn legendre_counts() {
        let set = legendre_trig_basis(3, 5, [8, 8]).unwrap();
        assert_eq!(fixed_basis(&set).len(), 162);
        let only_legendre_and_n2 = legendre_trig_basis(3, 2, [8, 8]).unwrap();
        assert_eq!(fixed_basis(&only_legendre_and_n2).len(), 10 + 38);
        assert!(legendre_trig_basis(3, 1, [8, 8]).is_err());
    }

    #[test]
    fn constant_legendre_maps_to_one() {
        let set = legendre_trig_basis(3, 5, [7, 9]).unwrap();
        let b = fixed_basis(&set);
        assert!(b.element(0).data().iter().all(|&v| v == 1.0));
        for m in 1..b.len() {
            let e = b.element(m);
            assert!((e.min() - 0.9).abs() < 1e-12, "element {m}");
            assert!((e.max() - 1.1).abs() < 1e-12, "element {m}");
        }
    }

    #[test]
    fn legendre_recurrence_matches_closed_forms() {
        for &x in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            let p = legendre_values(3, x);
            assert!((p[2] - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
            assert!((p[3] - 0.5 * (5.0 * x * x * x - 3.0 * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn pixel_basis_is_identity() {
        let set = pixel_basis(&[2, 2]);
        let b = fixed_basis(&set);
        assert_eq!(b.len(), 4);
        assert_eq!(dense_of(b), DMatrix::identity(4, 4));
        let v = randn(&[2, 2], &mut Rng::new(4, 0));
        assert_eq!(b.apply_covariance(&v).unwrap(), v);
        assert_eq!(b.sum(), &Field::filled(&[2, 2], 1.0));
        let one = pixel_basis(&[1, 1]);
        assert_eq!(dense_of(fixed_basis(&one)), DMatrix::identity(1, 1));
    }

    #[test]
    fn residual_basis_examples() {
        let clean = Field::from_vec(vec![0.0, 0.0]);
        let degraded = Field::from_vec(vec![1.0, 2.0]);
        let b = residual_basis(&clean, &degraded).unwrap();
        assert_eq!(b.mode(), BasisMode::SampleDependent);
        assert_eq!(b.len(), 1);
        assert_eq!(b.element(0).data(), &[1.0, 2.0]);
        let sigma = dense_of(&b);
        assert_eq!(sigma, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert_eq!(sigma.rank(1e-12), 1);
        let applied = b
            .apply_covariance(&Field::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(applied.data(), &[1.0, 2.0]);
        assert_eq!(b.sum(), &(&degraded - &clean));

        let same = residual_basis(&degraded, &degraded).unwrap();
        assert!(same.element(0).data().iter().all(|&v| v == 0.0));
        assert!(dense_of(&same).iter().all(|&v| v == 0.0));
        assert!(residual_basis(&clean, &Field::zeros(&[3])).is_err());
    }

    #[test]
    fn operator_matches_dense_for_random_basis() {
        let mut rng = Rng::new(17, 0);
        let hs: Vec<Field> = (0..3).map(|_| randn(&[3], &mut rng)).collect();
        let b = Basis::from_elements(hs, BasisMode::Fixed).unwrap();
        let sigma = dense_of(&b);
        for _ in 0..10 {
            let v = randn(&[3], &mut rng);
            let fast = b.apply_covariance(&v).unwrap();
            let slow = &sigma * DVector::from_column_slice(v.data());
            for i in 0..3 {
                assert!((fast.data()[i] - slow[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn covariance_is_psd_for_non_orthogonal_basis() {
        // Deliberately correlated elements: h_2 = h_1 + small perturbation.
        let mut rng = Rng::new(23, 0);
        let h1 = randn(&[5], &mut rng);
        let mut h2 = h1.clone();
        h2.axpy(0.01, &randn(&[5], &mut rng));
        let h3 = randn(&[5], &mut rng);
        let b = Basis::from_elements(vec![h1.clone(), h2.clone(), h3], BasisMode::Fixed).unwrap();
        assert!(h1.dot(&h2).abs() > 0.1);
        let sigma = dense_of(&b);
        assert!((&sigma - sigma.transpose()).amax() == 0.0);
        for _ in 0..1000 {
            let v = randn(&[5], &mut rng);
            let q = v.dot(&b.apply_covariance(&v).unwrap());
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn fixed_basis_ignores_conditioning() {
        let set = legendre_trig_basis(2, 3, [6, 6]).unwrap();
        let a = Field::zeros(&[6, 6]);
        let b = Field::filled(&[6, 6], 3.0);
        let with = set.resolve(Some(Conditioning::new(&a, &b))).unwrap();
        let without = set.resolve(None).unwrap();
        for m in 0..with.len() {
            let x: Vec<u64> = with.element(m).data().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u64> = without
                .element(m)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn residual_set_needs_conditioning() {
        let set = BasisSet::residual(&[2]);
        assert!(matches!(set.resolve(None), Err(Error::MissingConditioning)));
        assert!(matches!(
            basis_sum(&set, None),
            Err(Error::MissingConditioning)
        ));
        let clean = Field::from_vec(vec![1.0, 1.0]);
        let degraded = Field::from_vec(vec![0.5, 3.0]);
        let s = basis_sum(&set, Some(Conditioning::new(&clean, &degraded))).unwrap();
        assert_eq!(s.data(), &[-0.5, 2.0]);
    }

    #[test]
    fn inverse_rejects_rank_deficiency() {
        let b = residual_basis(
            &Field::from_vec(vec![0.0, 0.0]),
            &Field::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let op = CovarianceOp::new(b);
        assert!(matches!(
            op.inverse(),
            Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn inverse_solves() {
        let mut rng = Rng::new(31, 0);
        let hs: Vec<Field> = (0..3).map(|_| randn(&[3], &mut rng)).collect();
        let op = CovarianceOp::new(Basis::from_elements(hs, BasisMode::Fixed).unwrap());
        let inv = op.inverse().unwrap();
        let v = randn(&[3], &mut rng);
        let back = op.apply(&inv.solve(&v)).unwrap();
        assert!(back.max_abs_diff(&v) < 1e-9);
        assert!(inv.condition() >= 1.0);
    }

    #[test]
    fn dense_cap_enforced() {
        let set = pixel_basis(&[65, 64]);
        assert!(matches!(
            fixed_basis(&set).dense_covariance(),
            Err(Error::DenseTooLarge { .. })
        ));
    }
}
