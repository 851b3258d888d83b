//! Synthetic restoration tasks on procedurally generated phantoms.
//!
//! * smooth-field: multiplicative smooth bias, restored in the log domain;
//! * streaks: a bright disk with oriented line artefacts through it;
//! * shadow-box: intensity scaled down inside a rectangle.
//!
//! Also the discrete-noise demonstration comparing draws of `h` with
//! `(ε + η)/(η + 1) · h`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSet};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::metrics::{masked_mse, mse, psnr, psnr_from_mse};
use crate::process::{DiffusionProcess, DiracDataset};
use crate::rng::Rng;
use crate::sampler::{make_time_grid, sample_euler_with, EulerOptions, GridScheme};

/// Bias fields are clamped to this range.
pub const BIAS_RANGE: (f64, f64) = (0.8, 1.25);
pub const DEFAULT_BIAS_AMPLITUDE: f64 = 0.2;
/// Intensity peak used for PSNR.
pub const PEAK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainTransform {
    Identity,
    Log,
}

impl DomainTransform {
    pub fn forward(self, f: &Field) -> Result<Field> {
        match self {
            DomainTransform::Identity => Ok(f.clone()),
            DomainTransform::Log => {
                if f.data().iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::NonPositive { min: f.min() });
                }
                Ok(f.map(f64::ln))
            }
        }
    }

    pub fn inverse(self, f: &Field) -> Field {
        match self {
            DomainTransform::Identity => f.clone(),
            DomainTransform::Log => f.map(f64::exp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualPattern {
    Streaks,
    ShadowBox,
}

#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub name: String,
    pub clean: Field,
    pub degraded: Field,
    pub mask: Option<Field>,
    pub transform: DomainTransform,
    /// The multiplicative field, for smooth-field tasks.
    pub bias: Option<Field>,
}

impl TaskInstance {
    pub fn transformed_clean(&self) -> Result<Field> {
        self.transform.forward(&self.clean)
    }

    pub fn transformed_degraded(&self) -> Result<Field> {
        self.transform.forward(&self.degraded)
    }
}

fn require_2d(size: &[usize]) -> Result<(usize, usize)> {
    match size {
        [r, c] if *r > 0 && *c > 0 => Ok((*r, *c)),
        _ => Err(Error::InvalidArgument(format!(
            "tasks need a nonempty 2-D size, got {size:?}"
        ))),
    }
}

/// Piecewise-constant image: a background and one to four disks or rectangles,
/// using two to four gray levels in `[0.2, 1]`.
pub fn phantom(rows: usize, cols: usize, rng: &mut Rng) -> Field {
    let n_levels = 2 + rng.index(3);
    let levels: Vec<f64> = (0..n_levels).map(|_| rng.uniform_in(0.2, 1.0)).collect();
    let mut img = Field::filled(&[rows, cols], levels[0]);
    let n_shapes = 1 + rng.index(4);
    let (h, w) = (rows as f64, cols as f64);
    for _ in 0..n_shapes {
        let level = levels[1 + rng.index(n_levels - 1)];
        let cy = rng.uniform_in(0.2, 0.8) * h;
        let cx = rng.uniform_in(0.2, 0.8) * w;
        let disk = rng.uniform() < 0.5;
        let ry = rng.uniform_in(0.1, 0.3) * h;
        let rx = if disk {
            ry
        } else {
            rng.uniform_in(0.1, 0.3) * w
        };
        let data = img.data_mut();
        for i in 0..rows {
            for j in 0..cols {
                let dy = i as f64 + 0.5 - cy;
                let dx = j as f64 + 0.5 - cx;
                let inside = if disk {
                    dx * dx + dy * dy <= rx * rx
                } else {
                    dx.abs() <= rx && dy.abs() <= ry
                };
                if inside {
                    data[i * cols + j] = level;
                }
            }
        }
    }
    img
}

/// Mean log-intensity of smooth-field phantoms.
pub const LOG_MEAN_LEVEL: f64 = -0.7;

/// [`phantom`] mapped through `v ↦ v^(c/m)`, where `m` is its mean
/// log-intensity and `c` = [`LOG_MEAN_LEVEL`]. Values stay in `(0, 1]` and the
/// mean log-intensity becomes `c`, which pins the component along the
/// near-constant direction that dominates the smooth-field noise.
pub fn normalized_phantom(rows: usize, cols: usize, rng: &mut Rng) -> Field {
    let img = phantom(rows, cols, rng);
    let m = img.data().iter().map(|v| v.ln()).sum::<f64>() / img.len() as f64;
    let gamma = LOG_MEAN_LEVEL / m;
    img.map(|v| v.powf(gamma))
}

fn fixed_basis<'a>(basis: &'a BasisSet, size: &[usize]) -> Result<&'a Basis> {
    match basis {
        BasisSet::Fixed(b) => {
            if b.shape() != size {
                return Err(Error::ShapeMismatch {
                    expected: size.to_vec(),
                    actual: b.shape().to_vec(),
                });
            }
            Ok(b)
        }
        BasisSet::Residual { .. } => Err(Error::InvalidArgument(
            "smooth-field tasks need a fixed basis".into(),
        )),
    }
}

/// Bias `1 + amp (b − mean b)/max|b − mean b|` from a random positive
/// combination `b` of four basis elements, clamped to [`BIAS_RANGE`].
pub fn random_bias(basis: &Basis, amplitude: f64, rng: &mut Rng) -> Field {
    let mut b = Field::zeros(basis.shape());
    for _ in 0..4 {
        let m = rng.index(basis.len());
        b.axpy(rng.uniform_in(0.1, 1.0), &basis.element(m));
    }
    let mean = b.mean();
    let centered = b.map(|v| v - mean);
    let peak = centered.max_abs();
    let k = if peak > 0.0 { amplitude / peak } else { 0.0 };
    centered.map(|v| (1.0 + k * v).clamp(BIAS_RANGE.0, BIAS_RANGE.1))
}

pub fn gen_smooth_field_task(
    size: &[usize],
    basis: &BasisSet,
    rng: &mut Rng,
) -> Result<TaskInstance> {
    gen_smooth_field_task_with(size, basis, DEFAULT_BIAS_AMPLITUDE, rng)
}

pub fn gen_smooth_field_task_with(
    size: &[usize],
    basis: &BasisSet,
    amplitude: f64,
    rng: &mut Rng,
) -> Result<TaskInstance> {
    let (rows, cols) = require_2d(size)?;
    let b = fixed_basis(basis, size)?;
    let clean = normalized_phantom(rows, cols, rng);
    let bias = random_bias(b, amplitude, rng);
    let degraded = clean.hadamard(&bias);
    Ok(TaskInstance {
        name: "smooth-field".into(),
        clean,
        degraded,
        mask: None,
        transform: DomainTransform::Log,
        bias: Some(bias),
    })
}

fn disk_mask(rows: usize, cols: usize, cy: f64, cx: f64, r: f64) -> Field {
    Field::from_fn_2d(rows, cols, |i, j| {
        let dy = i as f64 + 0.5 - cy;
        let dx = j as f64 + 0.5 - cx;
        if dx * dx + dy * dy <= r * r {
            1.0
        } else {
            0.0
        }
    })
}

pub fn gen_residual_task(
    size: &[usize],
    pattern: ResidualPattern,
    rng: &mut Rng,
) -> Result<TaskInstance> {
    let (rows, cols) = require_2d(size)?;
    let clean = phantom(rows, cols, rng);
    let (h, w) = (rows as f64, cols as f64);
    let (degraded, mask, name) = match pattern {
        ResidualPattern::Streaks => {
            let cy = rng.uniform_in(0.3, 0.7) * h;
            let cx = rng.uniform_in(0.3, 0.7) * w;
            let r = (0.08 * h.min(w)).max(1.0);
            let mask = disk_mask(rows, cols, cy, cx, r);
            let mut artefact = mask.scale(rng.uniform_in(1.5, 2.5));
            let n_lines = 3 + rng.index(3);
            for _ in 0..n_lines {
                let theta = rng.uniform_in(0.0, PI);
                let amp = rng.uniform_in(0.2, 0.5) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let (sn, cs) = theta.sin_cos();
                let line = Field::from_fn_2d(rows, cols, |i, j| {
                    let dy = i as f64 + 0.5 - cy;
                    let dx = j as f64 + 0.5 - cx;
                    if (dx * sn - dy * cs).abs() < 0.5 {
                        amp
                    } else {
                        0.0
                    }
                });
                artefact += &line.hadamard(&mask.map(|m| 1.0 - m));
            }
            (&clean + &artefact, mask, "streaks")
        }
        ResidualPattern::ShadowBox => {
            let r0 = rng.index(rows / 2 + 1);
            let c0 = rng.index(cols / 2 + 1);
            let r1 = (r0 + 2 + rng.index(rows / 2)).min(rows);
            let c1 = (c0 + 2 + rng.index(cols / 2)).min(cols);
            let mask = Field::from_fn_2d(rows, cols, |i, j| {
                if (r0..r1).contains(&i) && (c0..c1).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            });
            let factor = rng.uniform_in(0.4, 0.7);
            let scale = mask.map(|m| if m != 0.0 { factor } else { 1.0 });
            (clean.hadamard(&scale), mask, "shadow-box")
        }
    };
    Ok(TaskInstance {
        name: name.into(),
        clean,
        degraded,
        mask: Some(mask),
        transform: DomainTransform::Identity,
        bias: None,
    })
}

/// Transformed clean phantoms for training smooth-field denoisers.
pub fn smooth_field_training_set(size: &[usize], n: usize, rng: &mut Rng) -> Result<DiracDataset> {
    let (rows, cols) = require_2d(size)?;
    let points = (0..n)
        .map(|_| DomainTransform::Log.forward(&normalized_phantom(rows, cols, rng)))
        .collect::<Result<Vec<_>>>()?;
    DiracDataset::new(points)
}

/// Clean/degraded pairs with masks for training residual-task denoisers.
pub fn residual_training_set(
    size: &[usize],
    pattern: ResidualPattern,
    n: usize,
    rng: &mut Rng,
) -> Result<DiracDataset> {
    let mut clean = Vec::with_capacity(n);
    let mut degraded = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let task = gen_residual_task(size, pattern, rng)?;
        clean.push(task.clean);
        degraded.push(task.degraded);
        masks.push(task.mask.expect("residual tasks carry a mask"));
    }
    DiracDataset::with_degraded(clean, degraded)?.with_masks(masks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub rmse_in: f64,
    pub rmse_out: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestorationMetrics {
    pub task: String,
    pub steps: usize,
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub rmse_in: f64,
    pub rmse_out: f64,
    /// Metrics restricted to the mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inside_mask: Option<RegionMetrics>,
    /// Metrics on the complement of the mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outside_mask: Option<RegionMetrics>,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub metrics: RestorationMetrics,
    pub restored: Field,
    /// The exact state handed to the sampler.
    pub initial_state: Field,
}

#[derive(Debug, Clone, Copy)]
pub struct RestoreOptions {
    pub steps: usize,
    pub scheme: GridScheme,
    pub final_denoise: bool,
}

impl RestoreOptions {
    pub fn steps(steps: usize) -> Self {
        Self {
            steps,
            scheme: GridScheme::Uniform,
            final_denoise: false,
        }
    }
}

fn region(
    task: &TaskInstance,
    restored: &Field,
    mask: &Field,
    inside: bool,
) -> Result<Option<RegionMetrics>> {
    let before = masked_mse(&task.degraded, &task.clean, mask, inside)?;
    let after = masked_mse(restored, &task.clean, mask, inside)?;
    Ok(before.zip(after).map(|(b, a)| RegionMetrics {
        psnr_in: psnr_from_mse(b, PEAK),
        psnr_out: psnr_from_mse(a, PEAK),
        rmse_in: b.sqrt(),
        rmse_out: a.sqrt(),
    }))
}

/// Restores with a uniform grid of `steps` Euler steps, starting from the
/// transformed degraded image as is. `steps = 0` returns the degraded image.
pub fn run_restoration(
    task: &TaskInstance,
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    steps: usize,
) -> Result<Restoration> {
    run_restoration_with(task, p, den, RestoreOptions::steps(steps))
}

pub fn run_restoration_with(
    task: &TaskInstance,
    p: &DiffusionProcess,
    den: &dyn Denoiser,
    opts: RestoreOptions,
) -> Result<Restoration> {
    task.clean.ensure_same_shape(&task.degraded)?;
    let x_init = task.transformed_degraded()?;
    let restored_t = if opts.steps == 0 {
        x_init.clone()
    } else {
        let grid = make_time_grid(p.horizon(), opts.steps, opts.scheme)?;
        let run = sample_euler_with(
            p,
            den,
            &x_init,
            &grid,
            EulerOptions {
                final_denoise: opts.final_denoise,
                record: false,
            },
        )?;
        run.output
    };
    let restored = if opts.steps == 0 {
        task.degraded.clone()
    } else {
        task.transform.inverse(&restored_t)
    };
    let mse_in = mse(&task.degraded, &task.clean)?;
    let mse_out = mse(&restored, &task.clean)?;
    let (inside_mask, outside_mask) = match &task.mask {
        Some(m) => (
            region(task, &restored, m, true)?,
            region(task, &restored, m, false)?,
        ),
        None => (None, None),
    };
    let metrics = RestorationMetrics {
        task: task.name.clone(),
        steps: opts.steps,
        psnr_in: psnr(&task.degraded, &task.clean, PEAK)?,
        psnr_out: psnr(&restored, &task.clean, PEAK)?,
        rmse_in: mse_in.sqrt(),
        rmse_out: mse_out.sqrt(),
        inside_mask,
        outside_mask,
    };
    Ok(Restoration {
        metrics,
        restored,
        initial_state: x_init,
    })
}

/// Centered Poisson variate `k − λ`.
pub fn centered_poisson(lambda: f64) -> impl Fn(&mut Rng) -> f64 + Sync {
    move |rng: &mut Rng| rng.poisson(lambda) - lambda
}

/// Total variation distance between the histograms of two samples over
/// `bins` equal bins spanning their pooled range.
pub fn histogram_tv(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let min = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let max = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    // Unequal, incommensurate pads keep lattice-valued samples off every bin
    // edge; equal pads would put the midpoint of the range on one.
    let unit = (max - min) / bins as f64;
    let (below, above) = (unit * (SQRT_2 - 1.0), unit * (3f64.sqrt() - 1.0));
    let (lo, span) = (min - below, max - min + below + above);
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let k = if span > 0.0 {
                (((x - lo) / span) * bins as f64).floor() as usize
            } else {
                0
            };
            h[k.min(bins - 1)] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub const CASE3_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case3Row {
    pub eta: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case3Report {
    pub n: usize,
    pub rows: Vec<Case3Row>,
    /// Distance between two independent samples of `h`.
    pub noise_floor: f64,
}

/// For each `η`, compares `n` draws of `h` with `n` draws of
/// `(ε + η)/(η + 1) · h'` where `h'` is an independent draw.
pub fn case3_discrete_demo(
    noise_sampler: &dyn Fn(&mut Rng) -> f64,
    eta_grid: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<Case3Report> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!(
            "n must be >= 1000, got {n}"
        )));
    }
    if eta_grid.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::InvalidArgument("eta values must be >= 0".into()));
    }
    let reference: Vec<f64> = (0..n).map(|_| noise_sampler(rng)).collect();
    let second: Vec<f64> = (0..n).map(|_| noise_sampler(rng)).collect();
    let noise_floor = histogram_tv(&reference, &second, CASE3_BINS);
    let rows = eta_grid
        .iter()
        .map(|&eta| {
            let draws: Vec<f64> = second
                .iter()
                .map(|h| (rng.normal() + eta) / (eta + 1.0) * h)
                .collect();
            Case3Row {
                eta,
                distance: histogram_tv(&reference, &draws, CASE3_BINS),
            }
        })
        .collect();
    Ok(Case3Report {
        n,
        rows,
        noise_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{legendre_trig_basis, pixel_basis, residual_basis};
    use crate::denoiser::ConstantOracle;
    use crate::schedule::make_vp_schedule;

    fn vp_process(basis: BasisSet, eta: f64) -> DiffusionProcess {
        DiffusionProcess::new(make_vp_schedule(0.0001, 0.02, 100.0).unwrap(), basis, eta).unwrap()
    }

    #[test]
    fn phantom_levels_in_range() {
        let mut rng = Rng::new(1, 0);
        for _ in 0..20 {
            let p = phantom(16, 16, &mut rng);
            assert!(p.min() >= 0.2 && p.max() <= 1.0);
        }
    }

    #[test]
    fn bias_is_clamped_and_log_is_additive() {
        let basis = legendre_trig_basis(3, 5, [16, 16]).unwrap();
        let mut rng = Rng::new(2, 0);
        for amp in [0.2, 0.5] {
            let task = gen_smooth_field_task_with(&[16, 16], &basis, amp, &mut rng).unwrap();
            let bias = task.bias.as_ref().unwrap();
            assert!(bias.min() >= 0.8 && bias.max() <= 1.25);
            let diff = &task.transformed_degraded().unwrap() - &task.transformed_clean().unwrap();
            assert!(diff.max_abs_diff(&bias.map(f64::ln)) <= 1e-12);
        }
    }

    #[test]
    fn dividing_out_the_bias_helps() {
        let basis = legendre_trig_basis(3, 5, [16, 16]).unwrap();
        let task = gen_smooth_field_task(&[16, 16], &basis, &mut Rng::new(3, 0)).unwrap();
        let corrected = task
            .degraded
            .zip_map(task.bias.as_ref().unwrap(), |d, b| d / b);
        let before = psnr(&task.degraded, &task.clean, PEAK).unwrap();
        let after = psnr(&corrected, &task.clean, PEAK).unwrap();
        assert!(after > before);
    }

    #[test]
    fn smooth_field_rejects_bad_inputs() {
        let basis = legendre_trig_basis(3, 5, [16, 16]).unwrap();
        let mut rng = Rng::new(0, 0);
        assert!(gen_smooth_field_task(&[16], &basis, &mut rng).is_err());
        assert!(gen_smooth_field_task(&[8, 8], &basis, &mut rng).is_err());
        assert!(gen_smooth_field_task(&[2, 2], &BasisSet::residual(&[2, 2]), &mut rng).is_err());
    }

    #[test]
    fn residual_basis_is_the_difference() {
        let mut rng = Rng::new(4, 0);
        for pattern in [ResidualPattern::Streaks, ResidualPattern::ShadowBox] {
            let t = gen_residual_task(&[16, 16], pattern, &mut rng).unwrap();
            let b = residual_basis(&t.clean, &t.degraded).unwrap();
            assert_eq!(*b.element(0), &t.degraded - &t.clean);
        }
    }

    #[test]
    fn shadow_residual_vanishes_outside_mask() {
        let mut rng = Rng::new(5, 0);
        for _ in 0..10 {
            let t = gen_residual_task(&[16, 16], ResidualPattern::ShadowBox, &mut rng).unwrap();
            let mask = t.mask.as_ref().unwrap();
            let r = &t.degraded - &t.clean;
            for (v, m) in r.data().iter().zip(mask.data()) {
                if *m == 0.0 {
                    assert_eq!(*v, 0.0);
                }
            }
            assert!(mask.sum() > 0.0);
        }
    }

    #[test]
    fn streak_weights_exceed_one_off_mask() {
        let t =
            gen_residual_task(&[16, 16], ResidualPattern::Streaks, &mut Rng::new(6, 0)).unwrap();
        let mask = t.mask.as_ref().unwrap();
        let residual = &t.degraded - &t.clean;
        let w = crate::training::loss_weight(mask, &residual).unwrap();
        for (wi, m) in w.data().iter().zip(mask.data()) {
            if *m == 0.0 {
                assert!(*wi > 1.0);
            } else {
                assert_eq!(*wi, 1.0);
            }
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let t =
            gen_residual_task(&[8, 8], ResidualPattern::ShadowBox, &mut Rng::new(7, 0)).unwrap();
        let p = vp_process(pixel_basis(&[8, 8]), 0.0);
        let den = ConstantOracle::new(t.clean.clone());
        let r = run_restoration(&t, &p, &den, 0).unwrap();
        assert_eq!(r.restored, t.degraded);
        assert_eq!(r.metrics.psnr_in, r.metrics.psnr_out);
        assert_eq!(r.metrics.rmse_in, r.metrics.rmse_out);
    }

    #[test]
    fn oracle_restoration_is_nearly_perfect() {
        let basis = legendre_trig_basis(3, 5, [16, 16]).unwrap();
        let task = gen_smooth_field_task(&[16, 16], &basis, &mut Rng::new(8, 0)).unwrap();
        let p = vp_process(basis, 0.0);
        let den = ConstantOracle::new(task.transformed_clean().unwrap());
        let r = run_restoration(&task, &p, &den, 100).unwrap();
        assert!(r.metrics.psnr_out >= 60.0, "{}", r.metrics.psnr_out);
        assert_eq!(r.initial_state, task.transformed_degraded().unwrap());
    }

    #[test]
    fn region_metrics_present_with_mask() {
        let t =
            gen_residual_task(&[16, 16], ResidualPattern::ShadowBox, &mut Rng::new(9, 0)).unwrap();
        let p = vp_process(BasisSet::residual(&[16, 16]), 10.0);
        let den = ConstantOracle::new(t.clean.clone());
        let r = run_restoration(&t, &p, &den, 5).unwrap();
        assert!(r.metrics.inside_mask.is_some() && r.metrics.outside_mask.is_some());
    }

    #[test]
    fn log_transform_needs_positive_input() {
        let f = Field::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            DomainTransform::Log.forward(&f),
            Err(Error::NonPositive { .. })
        ));
    }

    #[test]
    fn case3_limits() {
        let sampler = centered_poisson(4.0);
        let report =
            case3_discrete_demo(&sampler, &[0.0, 1e9], 20_000, &mut Rng::new(10, 0)).unwrap();
        let (zero, big) = (report.rows[0].distance, report.rows[1].distance);
        assert!(zero > big, "{zero} vs {big}");
        assert!(
            big <= 3.0 * report.noise_floor + 0.01,
            "{big} vs floor {}",
            report.noise_floor
        );
        assert!(case3_discrete_demo(&sampler, &[0.0], 10, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn tv_of_identical_samples_is_zero() {
        let a = [1.0, 2.0, 3.0, 3.0];
        assert_eq!(histogram_tv(&a, &a, 64), 0.0);
        assert!((histogram_tv(&[0.0, 0.0], &[1.0, 1.0], 64) - 1.0).abs() < 1e-15);
    }
}
