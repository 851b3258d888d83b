//! The diffusion process with basis-structured noise.
//!
//! Noise is `N = Σ_m (η + ε_m)/(η + 1) · h_m` with independent `ε_m ~ N(0, 1)`,
//! and the forward kernel is
//!
//! ```text
//! x_t = s(t) x_0 + s(t) σ(t) N
//!     ~ N( s x_0 + η s σ/(η+1) Σ_m h_m ,  s² σ²/(η+1)² · H Hᵀ )
//! ```
//!
//! `η = 0` gives fully stochastic noise, `η → ∞` a deterministic shift along
//! `Σ_m h_m`. With `η = 0` and the pixel basis the kernel is the isotropic
//! Gaussian one.
//!
//! Sampling never factorizes the covariance, so rank-deficient bases sample
//! fine. Score-type quantities need `Σ⁻¹` and fail with
//! [`Error::SingularCovariance`] when it does not exist.

use std::borrow::Cow;
use std::sync::OnceLock;

use crate::basis::{Basis, BasisMode, BasisSet, Conditioning, CovarianceInverse, CovarianceOp};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::rng::Rng;
use crate::schedule::{sde_coefficients, Schedule, ScheduleValues};

/// One configured process: schedule, basis and mediator `η`.
#[derive(Debug, Clone)]
pub struct DiffusionProcess {
    schedule: Schedule,
    basis: BasisSet,
    eta: f64,
    fixed_inverse: OnceLock<Option<CovarianceInverse>>,
    noise_power: OnceLock<f64>,
}

/// Mean and covariance of `x_t | x_0`.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub mean: Field,
    /// `s² σ² / (η+1)²`; the covariance is `cov_scale · Σ`.
    pub cov_scale: f64,
    pub cov_op: CovarianceOp,
}

/// Finite training set treated as a sum of point masses.
#[derive(Debug, Clone)]
pub struct DiracDataset {
    points: Vec<Field>,
    degraded: Option<Vec<Field>>,
    masks: Option<Vec<Field>>,
}

impl DiracDataset {
    pub fn new(points: Vec<Field>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyDataset)?;
        for p in &points {
            p.ensure_same_shape(first)?;
        }
        Ok(Self {
            points,
            degraded: None,
            masks: None,
        })
    }

    /// Points paired with degraded observations, for sample-dependent bases.
    pub fn with_degraded(points: Vec<Field>, degraded: Vec<Field>) -> Result<Self> {
        let mut ds = Self::new(points)?;
        if degraded.len() != ds.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} degraded fields",
                ds.points.len(),
                degraded.len()
            )));
        }
        for d in &degraded {
            d.ensure_same_shape(&ds.points[0])?;
        }
        ds.degraded = Some(degraded);
        Ok(ds)
    }

    /// Attaches one binary mask per point, for the mask-weighted loss.
    pub fn with_masks(mut self, masks: Vec<Field>) -> Result<Self> {
        if masks.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} masks",
                self.points.len(),
                masks.len()
            )));
        }
        for m in &masks {
            m.ensure_same_shape(&self.points[0])?;
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
            }
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn mask(&self, i: usize) -> Option<&Field> {
        self.masks.as_ref().map(|m| &m[i])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Field] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Field {
        &self.points[i]
    }

    pub fn shape(&self) -> &[usize] {
        self.points[0].shape()
    }

    pub fn conditioning(&self, i: usize) -> Option<Conditioning<'_>> {
        self.degraded
            .as_ref()
            .map(|d| Conditioning::new(&self.points[i], &d[i]))
    }
}

impl DiffusionProcess {
    pub fn new(schedule: Schedule, basis: BasisSet, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be finite and >= 0, got {eta}"
            )));
        }
        Ok(Self {
            schedule,
            basis,
            eta,
            fixed_inverse: OnceLock::new(),
            noise_power: OnceLock::new(),
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn shape(&self) -> &[usize] {
        self.basis.shape()
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon()
    }

    /// Mean over entries of `E[N_i²]` for a fixed basis; 1 for sample-dependent
    /// bases, whose noise is unknown without conditioning. Equals 1 for the
    /// pixel basis with `η = 0`.
    pub fn noise_power(&self) -> f64 {
        match &self.basis {
            BasisSet::Fixed(b) => *self.noise_power.get_or_init(|| {
                let k = 1.0 / (self.eta + 1.0);
                let mut second = vec![0.0; b.dim()];
                for m in 0..b.len() {
                    for (acc, h) in second.iter_mut().zip(b.element(m).data()) {
                        *acc += h * h;
                    }
                }
                let mean_sq: f64 = b
                    .sum()
                    .data()
                    .iter()
                    .zip(&second)
                    .map(|(h, v)| k * k * v + (self.eta * k * h).powi(2))
                    .sum();
                mean_sq / b.dim() as f64
            }),
            BasisSet::Residual { .. } => 1.0,
        }
    }

    /// First knot of SDE and sampler grids, `T / 1000`.
    pub fn start_time(&self) -> f64 {
        self.horizon() / 1000.0
    }

    fn resolve(&self, cond: Option<Conditioning<'_>>) -> Result<Cow<'_, Basis>> {
        self.basis.resolve(cond)
    }

    fn values(&self, t: f64) -> Result<ScheduleValues> {
        self.schedule.evaluate(t)
    }

    /// Per-element weights `(η + ε_m)/(η + 1)` of one noise draw.
    fn noise_coefficients(&self, m: usize, rng: &mut Rng) -> Vec<f64> {
        let k = 1.0 / (self.eta + 1.0);
        (0..m).map(|_| (self.eta + rng.normal()) * k).collect()
    }

    /// One draw of the diffused noise `N`.
    pub fn sample_noise(&self, cond: Option<Conditioning<'_>>, rng: &mut Rng) -> Result<Field> {
        let basis = self.resolve(cond)?;
        let coeffs = self.noise_coefficients(basis.len(), rng);
        Ok(basis.combine(&coeffs))
    }

    /// `x_t = s x_0 + s σ N` for a given noise realization.
    pub fn perturb(&self, x0: &Field, t: f64, noise: &Field) -> Result<Field> {
        x0.ensure_shape(self.shape())?;
        noise.ensure_shape(self.shape())?;
        let v = self.values(t)?;
        let mut x = x0.scale(v.s);
        x.axpy(v.s * v.sigma, noise);
        Ok(x)
    }

    /// A draw from the forward kernel at `t`. Returns `x_0` bit-for-bit at `t = 0`.
    pub fn forward_sample(
        &self,
        x0: &Field,
        t: f64,
        cond: Option<Conditioning<'_>>,
        rng: &mut Rng,
    ) -> Result<Field> {
        let noise = self.sample_noise(cond, rng)?;
        if t == 0.0 {
            x0.ensure_shape(self.shape())?;
            return Ok(x0.clone());
        }
        self.perturb(x0, t, &noise)
    }

    /// Like [`forward_sample`](Self::forward_sample) but also returns `N`.
    pub fn forward_sample_with_noise(
        &self,
        x0: &Field,
        t: f64,
        cond: Option<Conditioning<'_>>,
        rng: &mut Rng,
    ) -> Result<(Field, Field)> {
        let noise = self.sample_noise(cond, rng)?;
        let x = self.perturb(x0, t, &noise)?;
        Ok((x, noise))
    }

    fn shift_coefficient(&self, v: &ScheduleValues) -> f64 {
        self.eta * v.s * v.sigma / (self.eta + 1.0)
    }

    fn cov_scale(&self, v: &ScheduleValues) -> f64 {
        let r = v.s * v.sigma / (self.eta + 1.0);
        r * r
    }

    pub fn conditional_moments(
        &self,
        x0: &Field,
        t: f64,
        cond: Option<Conditioning<'_>>,
    ) -> Result<ConditionalMoments> {
        x0.ensure_shape(self.shape())?;
        let basis = self.resolve(cond)?.into_owned();
        let v = self.values(t)?;
        let mut mean = x0.scale(v.s);
        mean.axpy(self.shift_coefficient(&v), basis.sum());
        Ok(ConditionalMoments {
            mean,
            cov_scale: self.cov_scale(&v),
            cov_op: CovarianceOp::new(basis),
        })
    }

    /// Euler–Maruyama integration of the forward SDE
    ///
    /// `dx = [f x + φ] dt + g Σ_m h_m dω⁽ᵐ⁾`
    ///
    /// over a uniform grid on `[T/1000, T]`. The state at the first knot is drawn
    /// exactly from the forward kernel, because `φ` involves `σ'` which blows up
    /// at `t = 0`. Coefficients are evaluated at the middle of each step.
    pub fn simulate_sde(
        &self,
        x0: &Field,
        n_steps: usize,
        cond: Option<Conditioning<'_>>,
        rng: &mut Rng,
    ) -> Result<Field> {
        self.simulate_sde_to(x0, self.horizon(), n_steps, cond, rng)
    }

    /// Same as [`simulate_sde`](Self::simulate_sde) but stopping at `t_end`.
    pub fn simulate_sde_to(
        &self,
        x0: &Field,
        t_end: f64,
        n_steps: usize,
        cond: Option<Conditioning<'_>>,
        rng: &mut Rng,
    ) -> Result<Field> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        let start = self.start_time();
        if !(t_end > start && t_end <= self.horizon()) {
            return Err(Error::TimeOutOfRange {
                t: t_end,
                horizon: self.horizon(),
            });
        }
        let basis = self.resolve(cond)?;
        let m = basis.len();
        let mut x = self.forward_sample(x0, start, cond, rng)?;
        let dt = (t_end - start) / n_steps as f64;
        let sqrt_dt = dt.sqrt();
        for k in 0..n_steps {
            let t = start + (k as f64 + 0.5) * dt;
            let c = sde_coefficients(&self.schedule, self.eta, basis.sum(), t)?;
            let xi: Vec<f64> = (0..m).map(|_| rng.normal() * c.g * sqrt_dt).collect();
            let kick = basis.combine(&xi);
            let mut next = x.scale(1.0 + c.f * dt);
            next.axpy(dt, &c.phi);
            next += &kick;
            x = next;
        }
        Ok(x)
    }

    fn inverse_for(&self, basis: &Basis) -> Result<Cow<'_, CovarianceInverse>> {
        if basis.mode() == BasisMode::Fixed {
            if let BasisSet::Fixed(_) = &self.basis {
                let cached = self
                    .fixed_inverse
                    .get_or_init(|| CovarianceInverse::new(&basis.dense_covariance().ok()?).ok());
                return match cached {
                    Some(inv) => Ok(Cow::Borrowed(inv)),
                    None => Err(CovarianceInverse::new(&basis.dense_covariance()?)
                        .err()
                        .unwrap_or(Error::SingularCovariance {
                            condition: f64::INFINITY,
                        })),
                };
            }
        }
        Ok(Cow::Owned(CovarianceInverse::new(
            &basis.dense_covariance()?,
        )?))
    }

    /// `∇ₓ log p(x | x_0) = (η+1)²/(s²σ²) · Σ⁻¹ (mean − x)`.
    pub fn conditional_score(
        &self,
        x0: &Field,
        t: f64,
        x: &Field,
        cond: Option<Conditioning<'_>>,
    ) -> Result<Field> {
        x.ensure_shape(self.shape())?;
        let mom = self.conditional_moments(x0, t, cond)?;
        if mom.cov_scale == 0.0 {
            return Err(Error::Endpoint { t });
        }
        let inv = self.inverse_for(mom.cov_op.basis())?;
        Ok(inv.solve(&(&mom.mean - x)).scale(1.0 / mom.cov_scale))
    }

    fn require_fixed(&self) -> Result<&Basis> {
        match &self.basis {
            BasisSet::Fixed(b) => Ok(b),
            BasisSet::Residual { .. } => Err(Error::InvalidArgument(
                "marginal quantities need a sample-independent basis".into(),
            )),
        }
    }

    /// Posterior weights `w_i ∝ N(x; mean_i(t), cov(t))` over a Dirac dataset,
    /// normalized in log space.
    pub fn mixture_weights(&self, ds: &DiracDataset, t: f64, x: &Field) -> Result<Vec<f64>> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let basis = self.require_fixed()?;
        x.ensure_shape(self.shape())?;
        let v = self.values(t)?;
        let cov_scale = self.cov_scale(&v);
        if cov_scale == 0.0 {
            return Err(Error::Endpoint { t });
        }
        let inv = self.inverse_for(basis)?;
        let shift = basis.sum().scale(self.shift_coefficient(&v));
        let log_w: Vec<f64> = ds
            .points()
            .iter()
            .map(|y| {
                let mut r = x - &y.scale(v.s);
                r -= &shift;
                -0.5 * inv.quadratic(&r) / cov_scale
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= z;
        }
        Ok(w)
    }

    /// Marginal score of the Dirac mixture:
    /// `(η+1)²/(s²σ²) Σ⁻¹ ( s Σ_i w_i y_i + η s σ/(η+1) Σ_m h_m − x )`.
    pub fn marginal_score_dirac(&self, ds: &DiracDataset, t: f64, x: &Field) -> Result<Field> {
        let w = self.mixture_weights(ds, t, x)?;
        let basis = self.require_fixed()?;
        let v = self.values(t)?;
        let mut target = Field::zeros(self.shape());
        for (wi, y) in w.iter().zip(ds.points()) {
            target.axpy(wi * v.s, y);
        }
        target.axpy(self.shift_coefficient(&v), basis.sum());
        target -= x;
        let inv = self.inverse_for(basis)?;
        Ok(inv.solve(&target).scale(1.0 / self.cov_scale(&v)))
    }

    fn flow_from_score(&self, basis: &Basis, t: f64, x: &Field, score: &Field) -> Result<Field> {
        let c = sde_coefficients(&self.schedule, self.eta, basis.sum(), t)?;
        let sigma_score = basis.apply_covariance(score)?;
        let mut rhs = x.scale(c.f);
        rhs += &c.phi;
        rhs.axpy(-0.5 * c.g * c.g, &sigma_score);
        Ok(rhs)
    }

    /// Conditional probability-flow field `f x + φ − ½ g² Σ ∇ log p(x | x_0)`,
    /// assembled term by term.
    pub fn pfode_rhs_conditional(
        &self,
        x0: &Field,
        t: f64,
        x: &Field,
        cond: Option<Conditioning<'_>>,
    ) -> Result<Field> {
        let score = self.conditional_score(x0, t, x, cond)?;
        let basis = self.resolve(cond)?;
        self.flow_from_score(&basis, t, x, &score)
    }

    /// Marginal probability-flow field `f x + φ − ½ g² Σ ∇ log p(x)` for a Dirac
    /// dataset and a fixed basis.
    pub fn pfode_rhs_marginal(&self, ds: &DiracDataset, t: f64, x: &Field) -> Result<Field> {
        let score = self.marginal_score_dirac(ds, t, x)?;
        let basis = self.require_fixed()?;
        self.flow_from_score(basis, t, x, &score)
    }

    /// Deterministic update field
    /// `(s'/s + σ'/σ) x − (σ' s / σ) D(x; t)`.
    ///
    /// The basis does not appear: every basis-dependent term cancels.
    pub fn pfode_rhs(&self, den: &dyn Denoiser, t: f64, x: &Field) -> Result<Field> {
        let v = self.values(t)?;
        if v.sigma == 0.0 {
            return Err(Error::Endpoint { t });
        }
        let d = den.denoise(x, t)?;
        d.ensure_same_shape(x)?;
        let a = v.s_prime / v.s + v.sigma_prime / v.sigma;
        let b = v.sigma_prime * v.s / v.sigma;
        let mut rhs = x.scale(a);
        rhs.axpy(-b, &d);
        Ok(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{pixel_basis, residual_basis};
    use crate::denoiser::ConstantOracle;
    use crate::rng::randn;
    use crate::schedule::make_vp_schedule;

    fn vp() -> Schedule {
        make_vp_schedule(0.0001, 0.02, 100.0).unwrap()
    }

    fn random_full_rank(d: usize, seed: u64) -> BasisSet {
        let mut rng = Rng::new(seed, 99);
        BasisSet::fixed((0..d).map(|_| randn(&[d], &mut rng)).collect()).unwrap()
    }

    #[test]
    fn rejects_negative_eta() {
        assert!(DiffusionProcess::new(vp(), pixel_basis(&[2]), -0.5).is_err());
    }

    #[test]
    fn forward_sample_at_zero_is_identity() {
        let p = DiffusionProcess::new(vp(), random_full_rank(3, 1), 2.0).unwrap();
        let x0 = randn(&[3], &mut Rng::new(1, 1));
        let x = p
            .forward_sample(&x0, 0.0, None, &mut Rng::new(1, 2))
            .unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn edm_form_with_pixel_basis() {
        // η = 0, pixel basis, s = 1: x_t = x_0 + σ ε with the same ε stream.
        let p = DiffusionProcess::new(vp(), pixel_basis(&[5]), 0.0).unwrap();
        let x0 = randn(&[5], &mut Rng::new(2, 0));
        let t = 40.0;
        let x = p.forward_sample(&x0, t, None, &mut Rng::new(3, 0)).unwrap();
        let eps = randn(&[5], &mut Rng::new(3, 0));
        let sigma = vp().evaluate(t).unwrap().sigma;
        let mut expected = x0.clone();
        expected.axpy(sigma, &eps);
        assert!(x.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn deterministic_limit_of_noise() {
        let p = DiffusionProcess::new(vp(), random_full_rank(3, 4), 1e9).unwrap();
        let n = p.sample_noise(None, &mut Rng::new(5, 0)).unwrap();
        let BasisSet::Fixed(b) = p.basis() else {
            unreachable!()
        };
        let sum = b.sum();
        assert!(n.max_abs_diff(sum) <= 1e-4 * sum.max_abs());
    }

    #[test]
    fn moments_special_cases() {
        let x0 = Field::from_vec(vec![0.3, -1.0, 2.0]);
        let p0 = DiffusionProcess::new(vp(), random_full_rank(3, 6), 0.0).unwrap();
        let m = p0.conditional_moments(&x0, 50.0, None).unwrap();
        assert_eq!(m.mean, x0);
        let p = DiffusionProcess::new(vp(), random_full_rank(3, 6), 3.0).unwrap();
        let m0 = p.conditional_moments(&x0, 0.0, None).unwrap();
        assert_eq!(m0.mean, x0);
        assert_eq!(m0.cov_scale, 0.0);
        assert!(p.conditional_moments(&x0, 1.0, None).unwrap().cov_scale > 0.0);
    }

    #[test]
    fn residual_moments_closed_form() {
        let a = Field::from_vec(vec![0.0, 1.0]);
        let b = Field::from_vec(vec![0.5, -1.0]);
        let p = DiffusionProcess::new(vp(), BasisSet::residual(&[2]), 10.0).unwrap();
        let t = 50.0;
        let m = p
            .conditional_moments(&a, t, Some(Conditioning::new(&a, &b)))
            .unwrap();
        let sigma = vp().evaluate(t).unwrap().sigma;
        let mut expected = a.clone();
        expected.axpy(10.0 / 11.0 * sigma, &(&b - &a));
        assert!(m.mean.max_abs_diff(&expected) < 1e-15);
        assert!(matches!(
            p.conditional_moments(&a, t, None),
            Err(Error::MissingConditioning)
        ));
    }

    #[test]
    fn score_vanishes_at_mean() {
        let p = DiffusionProcess::new(vp(), random_full_rank(3, 7), 1.5).unwrap();
        let x0 = randn(&[3], &mut Rng::new(8, 0));
        let m = p.conditional_moments(&x0, 30.0, None).unwrap();
        let s = p.conditional_score(&x0, 30.0, &m.mean, None).unwrap();
        assert!(s.max_abs() == 0.0);
        let rhs = p.pfode_rhs_conditional(&x0, 30.0, &m.mean, None).unwrap();
        let c = sde_coefficients(p.schedule(), 1.5, p.resolve(None).unwrap().sum(), 30.0).unwrap();
        let mut expected = m.mean.scale(c.f);
        expected += &c.phi;
        assert!(rhs.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn rank_deficient_score_fails() {
        let a = Field::from_vec(vec![0.0, 0.0]);
        let b = Field::from_vec(vec![1.0, 2.0]);
        let p = DiffusionProcess::new(vp(), BasisSet::residual(&[2]), 0.0).unwrap();
        let r = p.conditional_score(&a, 10.0, &b, Some(Conditioning::new(&a, &b)));
        assert!(matches!(r, Err(Error::SingularCovariance { .. })));
        // Sampling still works.
        let draw = p.forward_sample(
            &a,
            10.0,
            Some(Conditioning::new(&a, &b)),
            &mut Rng::new(1, 0),
        );
        assert!(draw.is_ok());
        let _ = residual_basis(&a, &b).unwrap();
    }

    #[test]
    fn single_point_marginal_equals_conditional() {
        let p = DiffusionProcess::new(vp(), random_full_rank(2, 9), 0.7).unwrap();
        let y = Field::from_vec(vec![0.4, -0.2]);
        let ds = DiracDataset::new(vec![y.clone()]).unwrap();
        let x = Field::from_vec(vec![1.0, 0.3]);
        let a = p.marginal_score_dirac(&ds, 20.0, &x).unwrap();
        let b = p.conditional_score(&y, 20.0, &x, None).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12 * (1.0 + b.max_abs()));
    }

    #[test]
    fn symmetric_pair_has_no_data_attraction() {
        let p = DiffusionProcess::new(vp(), pixel_basis(&[2]), 0.0).unwrap();
        let y = Field::from_vec(vec![0.8, -0.3]);
        let ds = DiracDataset::new(vec![y.clone(), y.scale(-1.0)]).unwrap();
        let x = Field::zeros(&[2]);
        let w = p.mixture_weights(&ds, 25.0, &x).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        // Score reduces to −x/(σ²) = 0 at the origin.
        let s = p.marginal_score_dirac(&ds, 25.0, &x).unwrap();
        assert!(s.max_abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            DiracDataset::new(vec![]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn pfode_rhs_with_constant_denoiser() {
        let p = DiffusionProcess::new(vp(), pixel_basis(&[3]), 0.0).unwrap();
        let c = Field::from_vec(vec![1.0, 2.0, 3.0]);
        let oracle = ConstantOracle::new(c.clone());
        let x = Field::from_vec(vec![0.0, -1.0, 4.0]);
        let t = 60.0;
        let v = vp().evaluate(t).unwrap();
        let rhs = p.pfode_rhs(&oracle, t, &x).unwrap();
        let expected = (&x - &c).scale(v.sigma_prime / v.sigma);
        assert!(rhs.max_abs_diff(&expected) < 1e-15);
        assert!(matches!(
            p.pfode_rhs(&oracle, 0.0, &x),
            Err(Error::Endpoint { .. })
        ));
    }

    #[test]
    fn sde_rejects_zero_steps() {
        let p = DiffusionProcess::new(vp(), pixel_basis(&[2]), 0.0).unwrap();
        let x0 = Field::zeros(&[2]);
        assert!(p.simulate_sde(&x0, 0, None, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn sde_deterministic_limit_tracks_mean() {
        let p = DiffusionProcess::new(vp(), random_full_rank(3, 10), 1e9).unwrap();
        let x0 = Field::from_vec(vec![0.2, 0.1, -0.4]);
        let end = p
            .simulate_sde(&x0, 2000, None, &mut Rng::new(11, 0))
            .unwrap();
        let m = p.conditional_moments(&x0, 100.0, None).unwrap();
        assert!(
            end.max_abs_diff(&m.mean) <= 1e-3 * m.mean.max_abs(),
            "{:?} vs {:?}",
            end,
            m.mean
        );
    }
}
