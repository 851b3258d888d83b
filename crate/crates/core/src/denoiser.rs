//! Denoisers `D(x; t) ≈ x_0`.
//!
//! Three variants: a constant oracle, the closed-form optimum for a Dirac
//! dataset, and a [`TinyNetwork`] behind the usual preconditioning
//!
//! ```text
//! D(x; t) = c_skip(t) x + c_out(t) F(c_in(t) x, c_noise(t))
//! ```
//!
//! with `c_in = 1/sqrt(1 + σ²)` and `c_noise = t/T`.

use serde::{Deserialize, Serialize};

use crate::basis::BasisMode;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::network::TinyNetwork;
use crate::process::{DiffusionProcess, DiracDataset};

pub trait Denoiser: Sync {
    fn denoise(&self, x: &Field, t: f64) -> Result<Field>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x: &Field, t: f64) -> Result<Field> {
        (**self).denoise(x, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, x: &Field, t: f64) -> Result<Field> {
        (**self).denoise(x, t)
    }
}

/// Always returns the same field. With the true `x_0` this is the
/// per-sample optimum of the denoising loss.
#[derive(Debug, Clone)]
pub struct ConstantOracle {
    value: Field,
}

impl ConstantOracle {
    pub fn new(value: Field) -> Self {
        Self { value }
    }

    pub fn value(&self) -> &Field {
        &self.value
    }
}

impl Denoiser for ConstantOracle {
    fn denoise(&self, x: &Field, _t: f64) -> Result<Field> {
        x.ensure_same_shape(&self.value)?;
        Ok(self.value.clone())
    }
}

/// Posterior mean `Σ_i w_i y_i` of a Dirac dataset under the forward kernel.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticDirac<'a> {
    ds: &'a DiracDataset,
    process: &'a DiffusionProcess,
}

pub fn analytic_dirac_denoiser<'a>(
    ds: &'a DiracDataset,
    process: &'a DiffusionProcess,
) -> Result<AnalyticDirac<'a>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if process.basis().mode() != BasisMode::Fixed {
        return Err(Error::InvalidArgument(
            "the analytic denoiser needs a sample-independent basis".into(),
        ));
    }
    if ds.shape() != process.shape() {
        return Err(Error::ShapeMismatch {
            expected: process.shape().to_vec(),
            actual: ds.shape().to_vec(),
        });
    }
    // Fails early on a singular covariance.
    process.mixture_weights(ds, process.horizon(), &Field::zeros(process.shape()))?;
    Ok(AnalyticDirac { ds, process })
}

impl AnalyticDirac<'_> {
    pub fn weights(&self, x: &Field, t: f64) -> Result<Vec<f64>> {
        self.process.mixture_weights(self.ds, t, x)
    }
}

impl Denoiser for AnalyticDirac<'_> {
    fn denoise(&self, x: &Field, t: f64) -> Result<Field> {
        let w = self.weights(x, t)?;
        let mut out = Field::zeros(self.process.shape());
        for (wi, y) in w.iter().zip(self.ds.points()) {
            out.axpy(*wi, y);
        }
        Ok(out)
    }
}

/// What the network output `F` estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `F ≈ N`; `c_skip = 1/s`, `c_out = −σ`.
    PredictNoise,
    /// `F ≈ x_0`; `c_skip = 0`, `c_out = 1`.
    PredictX0,
}

/// Input scale `1/sqrt(1 + σ² ν)` with `ν` the mean noise power per entry
/// (`ν = 1` for white noise).
pub fn c_in(sigma: f64, noise_power: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma * noise_power).sqrt()
}

pub fn c_noise(t: f64, horizon: f64) -> f64 {
    t / horizon
}

#[derive(Debug, Clone, Copy)]
pub struct Preconditioned<'a> {
    net: &'a TinyNetwork,
    process: &'a DiffusionProcess,
    param: Parameterization,
}

pub fn precondition_wrap<'a>(
    net: &'a TinyNetwork,
    process: &'a DiffusionProcess,
    param: Parameterization,
) -> Result<Preconditioned<'a>> {
    let d: usize = process.shape().iter().product();
    if net.input_dim() != d + 1 || net.output_dim() != d {
        return Err(Error::ShapeMismatch {
            expected: vec![d + 1, d],
            actual: vec![net.input_dim(), net.output_dim()],
        });
    }
    Ok(Preconditioned {
        net,
        process,
        param,
    })
}

/// `(c_skip, c_out)` for a parameterization at the given schedule values.
pub fn skip_and_out(param: Parameterization, s: f64, sigma: f64) -> (f64, f64) {
    match param {
        Parameterization::PredictNoise => (1.0 / s, -sigma),
        Parameterization::PredictX0 => (0.0, 1.0),
    }
}

impl<'a> Preconditioned<'a> {
    pub fn network(&self) -> &'a TinyNetwork {
        self.net
    }

    pub fn parameterization(&self) -> Parameterization {
        self.param
    }

    /// Network input `[c_in x, c_noise]`.
    pub fn network_input(&self, x: &Field, t: f64) -> Result<Vec<f64>> {
        x.ensure_shape(self.process.shape())?;
        let v = self.process.schedule().evaluate(t)?;
        let k = c_in(v.sigma, self.process.noise_power()) / v.s;
        let mut input: Vec<f64> = x.data().iter().map(|xi| k * xi).collect();
        input.push(c_noise(t, self.process.horizon()));
        Ok(input)
    }

    /// Raw network output `F`, shaped like `x`.
    pub fn raw(&self, x: &Field, t: f64) -> Result<Field> {
        let out = self.net.forward(&self.network_input(x, t)?)?;
        Field::new(x.shape().to_vec(), out)
    }
}

impl Denoiser for Preconditioned<'_> {
    fn denoise(&self, x: &Field, t: f64) -> Result<Field> {
        let f = self.raw(x, t)?;
        let v = self.process.schedule().evaluate(t)?;
        let (skip, out) = skip_and_out(self.param, v.s, v.sigma);
        let mut d = f.scale(out);
        if skip != 0.0 {
            d.axpy(skip, x);
        }
        Ok(d)
    }
}
