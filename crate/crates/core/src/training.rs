//! Denoiser training.
//!
//! Each step draws a batch of `(x_0, t, N)`, forms `x_t = s x_0 + s σ N`, and
//! takes one optimizer step on the mean per-sample loss. Per-sample losses are
//! means over entries:
//!
//! | objective             | residual                      | network target |
//! |-----------------------|-------------------------------|----------------|
//! | `mse-x0`              | `D(x_t; t) − x_0`             | `N` (via `D`)  |
//! | `noise-pred`          | `F − N`                       | `N`            |
//! | `weighted-noise-pred` | `w ⊙ (F − N)`                 | `N`            |
//! | `x0-pred`             | `F − x_0`                     | `x_0`          |
//!
//! with the mask weight `w = 1 + (1 − m) · max|m ⊙ N| / max|(1 − m) ⊙ N|`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Conditioning;
use crate::denoiser::{precondition_wrap, skip_and_out, Denoiser, Parameterization};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::network::TinyNetwork;
use crate::process::{DiffusionProcess, DiracDataset};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MseX0,
    NoisePred,
    WeightedNoisePred,
    X0Pred,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::MseX0,
        Objective::NoisePred,
        Objective::WeightedNoisePred,
        Objective::X0Pred,
    ];

    /// How the trained network is wrapped into a denoiser.
    pub fn parameterization(self) -> Parameterization {
        match self {
            Objective::X0Pred => Parameterization::PredictX0,
            _ => Parameterization::PredictNoise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeDistribution {
    /// `t ~ U(0, T]`.
    #[default]
    Continuous,
    /// `t` uniform over the integers `1..=T`.
    Discrete,
}

/// Multiply the learning rate by `factor` every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub objective: Objective,
    pub time_distribution: TimeDistribution,
    pub seed: u64,
    pub lr_decay: Option<StepDecay>,
    /// Decay of an exponential moving average of the parameters. When set, the
    /// averaged parameters are returned.
    pub ema: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 16,
            lr: 1e-3,
            optimizer: OptimizerKind::default(),
            objective: Objective::NoisePred,
            time_distribution: TimeDistribution::Continuous,
            seed: 0,
            lr_decay: None,
            ema: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            ));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return bad("lr_decay needs every >= 1 and factor > 0".into());
            }
        }
        if let Some(e) = self.ema {
            if !(0.0..1.0).contains(&e) {
                return bad(format!("ema decay must be in [0, 1), got {e}"));
            }
        }
        Ok(())
    }
}

/// Mask weight `1 + (1 − m) · max|m ⊙ N| / max|(1 − m) ⊙ N|`. The second term is
/// dropped when the denominator vanishes.
pub fn loss_weight(mask: &Field, noise: &Field) -> Result<Field> {
    mask.ensure_same_shape(noise)?;
    let mut inside = 0.0f64;
    let mut outside = 0.0f64;
    for (m, n) in mask.data().iter().zip(noise.data()) {
        inside = inside.max((m * n).abs());
        outside = outside.max(((1.0 - m) * n).abs());
    }
    let ratio = if outside > 0.0 { inside / outside } else { 0.0 };
    Ok(mask.map(|m| 1.0 + (1.0 - m) * ratio))
}

/// One training example after the forward draw.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub x_t: &'a Field,
    pub x0: &'a Field,
    pub noise: &'a Field,
    pub t: f64,
    pub mask: Option<&'a Field>,
}

/// Per-sample loss and `∂loss/∂F` given the network output `f`.
fn output_gradient(
    objective: Objective,
    p: &DiffusionProcess,
    ex: &Example<'_>,
    f: &[f64],
) -> Result<(f64, Vec<f64>)> {
    ex.x0.ensure_same_shape(ex.x_t)?;
    ex.noise.ensure_same_shape(ex.x_t)?;
    let d = ex.x_t.len() as f64;
    let x = ex.x_t.data();
    let x0 = ex.x0.data();
    let n = ex.noise.data();
    // residual[i] and ∂residual[i]/∂F[i]
    let (residual, slope): (Vec<f64>, Vec<f64>) = match objective {
        Objective::NoisePred => (
            f.iter().zip(n).map(|(f, n)| f - n).collect(),
            vec![1.0; f.len()],
        ),
        Objective::X0Pred => (
            f.iter().zip(x0).map(|(f, y)| f - y).collect(),
            vec![1.0; f.len()],
        ),
        Objective::WeightedNoisePred => {
            let mask = ex.mask.ok_or(Error::MissingMask)?;
            let w = loss_weight(mask, ex.noise)?;
            let r = f
                .iter()
                .zip(n)
                .zip(w.data())
                .map(|((f, n), w)| w * (f - n))
                .collect();
            (r, w.into_data())
        }
        Objective::MseX0 => {
            let v = p.schedule().evaluate(ex.t)?;
            let (skip, out) = skip_and_out(objective.parameterization(), v.s, v.sigma);
            let r = f
                .iter()
                .zip(x)
                .zip(x0)
                .map(|((f, x), y)| skip * x + out * f - y)
                .collect();
            (r, vec![out; f.len()])
        }
    };
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / d;
    let grad_out = residual
        .iter()
        .zip(&slope)
        .map(|(r, k)| 2.0 * r * k / d)
        .collect();
    Ok((loss, grad_out))
}

fn evaluate(
    objective: Objective,
    net: &TinyNetwork,
    p: &DiffusionProcess,
    ex: &Example<'_>,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let den = precondition_wrap(net, p, objective.parameterization())?;
    let cache = net.forward_cached(&den.network_input(ex.x_t, ex.t)?)?;
    let (loss, grad_out) = output_gradient(objective, p, ex, cache.output())?;
    if let Some(grad) = grad {
        net.backward(&cache, &grad_out, grad);
    }
    Ok(loss)
}

pub fn example_loss(
    objective: Objective,
    net: &TinyNetwork,
    p: &DiffusionProcess,
    ex: &Example<'_>,
) -> Result<f64> {
    evaluate(objective, net, p, ex, None)
}

/// Loss and its gradient with respect to the network parameters.
pub fn loss_and_grad(
    objective: Objective,
    net: &TinyNetwork,
    p: &DiffusionProcess,
    ex: &Example<'_>,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    let loss = evaluate(objective, net, p, ex, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Draws `x_t` for the given `x_0` and `t`, then evaluates [`loss_and_grad`].
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    objective: Objective,
    net: &TinyNetwork,
    p: &DiffusionProcess,
    x0: &Field,
    t: f64,
    cond: Option<Conditioning<'_>>,
    rng: &mut Rng,
    mask: Option<&Field>,
) -> Result<(f64, Vec<f64>)> {
    if objective == Objective::WeightedNoisePred && mask.is_none() {
        return Err(Error::MissingMask);
    }
    let (x_t, noise) = p.forward_sample_with_noise(x0, t, cond, rng)?;
    let ex = Example {
        x_t: &x_t,
        x0,
        noise: &noise,
        t,
        mask,
    };
    loss_and_grad(objective, net, p, &ex)
}

/// Single-draw denoising loss `mean((D(x_t; t) − x_0)²)` of any denoiser.
pub fn denoiser_loss(
    den: &dyn Denoiser,
    p: &DiffusionProcess,
    x0: &Field,
    t: f64,
    cond: Option<Conditioning<'_>>,
    rng: &mut Rng,
) -> Result<f64> {
    let x_t = p.forward_sample(x0, t, cond, rng)?;
    let d = den.denoise(&x_t, t)?;
    crate::metrics::mse(&d, x0)
}

/// Explicit-update optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            m,
            v,
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TinyNetwork,
    /// Mean batch loss per step.
    pub trace: Vec<f64>,
}

fn draw_time(p: &DiffusionProcess, dist: TimeDistribution, rng: &mut Rng) -> f64 {
    let horizon = p.horizon();
    match dist {
        TimeDistribution::Continuous => horizon * (1.0 - rng.uniform()),
        TimeDistribution::Discrete => {
            let n = (horizon.round() as usize).max(1);
            ((rng.index(n) + 1) as f64).min(horizon)
        }
    }
}

struct Draw {
    i: usize,
    t: f64,
    x_t: Field,
    noise: Field,
}

/// Runs the training loop. Each batch element draws on its own stream; the
/// network pass is batched.
pub fn train(
    mut net: TinyNetwork,
    p: &DiffusionProcess,
    ds: &DiracDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.objective == Objective::WeightedNoisePred && ds.mask(0).is_none() {
        return Err(Error::MissingMask);
    }
    precondition_wrap(&net, p, cfg.objective.parameterization())?;
    let n_params = net.param_count();
    let mut opt = Optimizer::new(cfg.optimizer, n_params);
    let mut ema = cfg.ema.map(|_| net.params().to_vec());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut lr = cfg.lr;
    let root = Rng::new(cfg.seed, 0);
    for step in 0..cfg.steps {
        if let Some(d) = cfg.lr_decay {
            if step > 0 && step % d.every == 0 {
                lr *= d.factor;
            }
        }
        let draws: Vec<Draw> = (0..cfg.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = root.fork((step * cfg.batch + b) as u64 + 1);
                let i = rng.index(ds.len());
                let t = draw_time(p, cfg.time_distribution, &mut rng);
                let (x_t, noise) =
                    p.forward_sample_with_noise(ds.point(i), t, ds.conditioning(i), &mut rng)?;
                Ok(Draw { i, t, x_t, noise })
            })
            .collect::<Result<_>>()?;
        let den = precondition_wrap(&net, p, cfg.objective.parameterization())?;
        let mut inputs = Vec::with_capacity(cfg.batch * net.input_dim());
        for dr in &draws {
            inputs.extend(den.network_input(&dr.x_t, dr.t)?);
        }
        let cache = net.forward_batch(&inputs, cfg.batch)?;
        let d_out = net.output_dim();
        let per_sample: Vec<(f64, Vec<f64>)> = draws
            .par_iter()
            .enumerate()
            .map(|(b, dr)| {
                let ex = Example {
                    x_t: &dr.x_t,
                    x0: ds.point(dr.i),
                    noise: &dr.noise,
                    t: dr.t,
                    mask: ds.mask(dr.i),
                };
                output_gradient(
                    cfg.objective,
                    p,
                    &ex,
                    &cache.output()[b * d_out..(b + 1) * d_out],
                )
            })
            .collect::<Result<_>>()?;
        let k = 1.0 / cfg.batch as f64;
        let mut loss = 0.0;
        let mut grad_out = Vec::with_capacity(cfg.batch * d_out);
        for (l, g) in per_sample {
            loss += l;
            grad_out.extend(g.iter().map(|v| v * k));
        }
        loss *= k;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        let mut grad = vec![0.0; n_params];
        net.backward_batch(&cache, &grad_out, &mut grad);
        opt.update(net.params_mut(), &grad, lr);
        if let (Some(avg), Some(decay)) = (ema.as_mut(), cfg.ema) {
            for (a, p) in avg.iter_mut().zip(net.params()) {
                *a = decay * *a + (1.0 - decay) * p;
            }
        }
        trace.push(loss);
    }
    if let Some(avg) = ema {
        net.params_mut().copy_from_slice(&avg);
    }
    Ok(TrainOutcome { net, trace })
}

/// `step,loss` CSV.
pub fn write_trace_csv<W: Write>(w: &mut W, trace: &[f64]) -> Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{i},{l:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::pixel_basis;
    use crate::denoiser::ConstantOracle;
    use crate::rng::randn;
    use crate::schedule::make_vp_schedule;

    fn process(d: usize) -> DiffusionProcess {
        DiffusionProcess::new(
            make_vp_schedule(0.0001, 0.02, 100.0).unwrap(),
            pixel_basis(&[d]),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn oracle_has_zero_loss() {
        let p = process(3);
        let x0 = Field::from_vec(vec![0.2, -0.1, 0.5]);
        let o = ConstantOracle::new(x0.clone());
        let l = denoiser_loss(&o, &p, &x0, 42.0, None, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_mask_gives_unit_weight() {
        let n = randn(&[6], &mut Rng::new(1, 0));
        let w = loss_weight(&Field::zeros(&[6]), &n).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_guard_for_all_mask() {
        let n = randn(&[4], &mut Rng::new(1, 0));
        let w = loss_weight(&Field::filled(&[4], 1.0), &n).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_hand_value() {
        let mask = Field::from_vec(vec![1.0, 0.0, 0.0]);
        let n = Field::from_vec(vec![-4.0, 1.0, -2.0]);
        let w = loss_weight(&mask, &n).unwrap();
        assert_eq!(w.data(), &[1.0, 3.0, 3.0]);
    }

    #[test]
    fn weighted_equals_plain_without_mask_region() {
        let p = process(3);
        let net = TinyNetwork::new(TinyNetwork::default_widths(3), &mut Rng::new(2, 0)).unwrap();
        let x0 = Field::from_vec(vec![0.1, 0.2, 0.3]);
        let zero = Field::zeros(&[3]);
        let (a, ga) = compute_loss(
            Objective::WeightedNoisePred,
            &net,
            &p,
            &x0,
            30.0,
            None,
            &mut Rng::new(3, 0),
            Some(&zero),
        )
        .unwrap();
        let (b, gb) = compute_loss(
            Objective::NoisePred,
            &net,
            &p,
            &x0,
            30.0,
            None,
            &mut Rng::new(3, 0),
            None,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn missing_mask_is_an_error() {
        let p = process(2);
        let net = TinyNetwork::new(TinyNetwork::default_widths(2), &mut Rng::new(2, 0)).unwrap();
        let x0 = Field::zeros(&[2]);
        let r = compute_loss(
            Objective::WeightedNoisePred,
            &net,
            &p,
            &x0,
            1.0,
            None,
            &mut Rng::new(0, 0),
            None,
        );
        assert!(matches!(r, Err(Error::MissingMask)));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // Bias correction makes the first Adam step ±lr (up to eps).
        let mut opt = Optimizer::new(OptimizerKind::default(), 2);
        let mut p = [1.0, 1.0];
        opt.update(&mut p, &[0.5, -3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn discrete_times_are_integers() {
        let p = process(1);
        let mut rng = Rng::new(0, 0);
        for _ in 0..200 {
            let t = draw_time(&p, TimeDistribution::Discrete, &mut rng);
            assert!(t.fract() == 0.0 && (1.0..=100.0).contains(&t));
            let t = draw_time(&p, TimeDistribution::Continuous, &mut rng);
            assert!(t > 0.0 && t <= 100.0);
        }
    }
}
