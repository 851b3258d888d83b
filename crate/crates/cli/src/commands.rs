//! The work behind each subcommand. Every random draw comes from a stream of
//! the experiment seed, so a config and seed fix every output byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use anynoise_core::basis::Conditioning;
use anynoise_core::io::write_pgm;
use anynoise_core::process::DiracDataset;
use anynoise_core::sampler::{sample_euler_with, write_trajectory_csv, EulerOptions};
use anynoise_core::tasks::{
    case3_discrete_demo, centered_poisson, gen_residual_task, gen_smooth_field_task_with,
    residual_training_set, smooth_field_training_set, Case3Report, Restoration, RestoreOptions,
    TaskInstance,
};
use anynoise_core::training::{write_trace_csv, TrainOutcome};
use anynoise_core::{
    analytic_dirac_denoiser, make_time_grid, precondition_wrap, run_suite, Denoiser,
    DiffusionProcess, Field, Rng, SuiteReport, TinyNetwork,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Case3Spec, ExperimentConfig, UsageError};

/// Stream groups of the experiment seed. Training draws use streams below
/// `1 << 40` of the training seed.
pub mod streams {
    pub const DATASET: u64 = 1 << 40;
    pub const NETWORK: u64 = 2 << 40;
    pub const TASK: u64 = 3 << 40;
    pub const FORWARD: u64 = 4 << 40;
    pub const SIMULATE: u64 = 5 << 40;
    pub const CASE3: u64 = 6 << 40;
}

pub fn training_set(cfg: &ExperimentConfig) -> anyhow::Result<DiracDataset> {
    let mut rng = Rng::new(cfg.seed, streams::DATASET);
    let size = &cfg.task.size;
    let n = cfg.task.train_images;
    Ok(match cfg.task.kind.residual_pattern() {
        None => smooth_field_training_set(size, n, &mut rng)?,
        Some(pattern) => residual_training_set(size, pattern, n, &mut rng)?,
    })
}

/// Builds the training set, initializes the network and trains it.
pub fn train_network(cfg: &ExperimentConfig, p: &DiffusionProcess) -> anyhow::Result<TrainOutcome> {
    let ds = training_set(cfg)?;
    let net = TinyNetwork::new(
        cfg.network_widths(),
        &mut Rng::new(cfg.seed, streams::NETWORK),
    )?;
    Ok(anynoise_core::train(net, p, &ds, &cfg.train)?)
}

/// Evaluation instance `index`, drawn independently of the training set.
pub fn task_instance(cfg: &ExperimentConfig, index: u64) -> anyhow::Result<TaskInstance> {
    let mut rng = Rng::new(cfg.seed, streams::TASK + index);
    let size = &cfg.task.size;
    Ok(match cfg.task.kind.residual_pattern() {
        None => gen_smooth_field_task_with(size, &cfg.basis()?, cfg.task.bias_amplitude, &mut rng)?,
        Some(pattern) => gen_residual_task(size, pattern, &mut rng)?,
    })
}

pub fn restore_options(cfg: &ExperimentConfig) -> RestoreOptions {
    RestoreOptions {
        steps: cfg.sampler.steps,
        scheme: cfg.sampler.scheme,
        final_denoise: cfg.sampler.final_denoise,
    }
}

pub fn restore(
    cfg: &ExperimentConfig,
    p: &DiffusionProcess,
    net: &TinyNetwork,
    task: &TaskInstance,
) -> anyhow::Result<Restoration> {
    let den = precondition_wrap(net, p, cfg.train.objective.parameterization())?;
    Ok(anynoise_core::tasks::run_restoration_with(
        task,
        p,
        &den,
        restore_options(cfg),
    )?)
}

pub fn load_network(path: &Path, cfg: &ExperimentConfig) -> anyhow::Result<TinyNetwork> {
    let file = File::open(path)
        .map_err(|e| UsageError(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let net = TinyNetwork::read_from(&mut std::io::BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let d = cfg.task.size[0] * cfg.task.size[1];
    if net.input_dim() != d + 1 || net.output_dim() != d {
        return Err(UsageError(format!(
            "checkpoint {} has widths {:?}, the config needs input {} and output {d}",
            path.display(),
            net.widths(),
            d + 1
        ))
        .into());
    }
    Ok(net)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn save_pgm(
    dir: &Path,
    name: &str,
    field: &Field,
    window: Option<(f64, f64)>,
) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    write_pgm(&mut w, field, window)?;
    w.flush()?;
    Ok(())
}

fn save_training(dir: &Path, outcome: &TrainOutcome) -> anyhow::Result<()> {
    let mut w = create(dir, "model.bin")?;
    outcome.net.write_to(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "loss.csv")?;
    write_trace_csv(&mut w, &outcome.trace)?;
    w.flush()?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Trains and writes `model.bin` and `loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<TrainOutcome> {
    ensure_dir(out)?;
    let p = cfg.process()?;
    let outcome = train_network(cfg, &p)?;
    save_training(out, &outcome)?;
    Ok(outcome)
}

/// Loads the checkpoint, or trains one into `out` when none is given.
fn network_for(
    cfg: &ExperimentConfig,
    p: &DiffusionProcess,
    checkpoint: Option<&Path>,
    out: &Path,
) -> anyhow::Result<TinyNetwork> {
    match checkpoint {
        Some(path) => load_network(path, cfg),
        None => {
            let outcome = train_network(cfg, p)?;
            save_training(out, &outcome)?;
            Ok(outcome.net)
        }
    }
}

/// Restores one evaluation instance and writes `metrics.json`, `metrics.csv`
/// and `clean.pgm`/`degraded.pgm`/`restored.pgm` on a shared gray window.
pub fn cmd_restore(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    instance: u64,
) -> anyhow::Result<Restoration> {
    ensure_dir(out)?;
    let p = cfg.process()?;
    let net = network_for(cfg, &p, checkpoint, out)?;
    let task = task_instance(cfg, instance)?;
    let r = restore(cfg, &p, &net, &task)?;
    write_json(out, "metrics.json", &r.metrics)?;
    let m = &r.metrics;
    let mut w = create(out, "metrics.csv")?;
    writeln!(w, "task,steps,psnr_in,psnr_out,rmse_in,rmse_out")?;
    writeln!(
        w,
        "{},{},{:e},{:e},{:e},{:e}",
        m.task, m.steps, m.psnr_in, m.psnr_out, m.rmse_in, m.rmse_out
    )?;
    w.flush()?;
    let lo = task.clean.min().min(task.degraded.min());
    let hi = task.clean.max().max(task.degraded.max());
    save_pgm(out, "clean.pgm", &task.clean, Some((lo, hi)))?;
    save_pgm(out, "degraded.pgm", &task.degraded, Some((lo, hi)))?;
    save_pgm(out, "restored.pgm", &r.restored, Some((lo, hi)))?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DenoiserChoice {
    /// The trained network.
    Network,
    /// Posterior mean over the training set; fixed bases only.
    Analytic,
}

/// Noises a clean evaluation image to `T` and integrates back, writing
/// `trajectory.csv`, `start.pgm` and `end.pgm`.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    denoiser: DenoiserChoice,
    instance: u64,
) -> anyhow::Result<Field> {
    ensure_dir(out)?;
    let p = cfg.process()?;
    let task = task_instance(cfg, instance)?;
    let clean = task.transformed_clean()?;
    let degraded = task.transformed_degraded()?;
    let cond = p
        .basis()
        .mode()
        .eq(&anynoise_core::BasisMode::SampleDependent)
        .then(|| Conditioning::new(&clean, &degraded));
    let mut rng = Rng::new(cfg.seed, streams::FORWARD + instance);
    let x_init = p.forward_sample(&clean, p.horizon(), cond, &mut rng)?;
    let grid = make_time_grid(p.horizon(), cfg.sampler.steps, cfg.sampler.scheme)?;
    let opts = EulerOptions {
        final_denoise: cfg.sampler.final_denoise,
        record: true,
    };
    let run = match denoiser {
        DenoiserChoice::Network => {
            let net = network_for(cfg, &p, checkpoint, out)?;
            let den = precondition_wrap(&net, &p, cfg.train.objective.parameterization())?;
            sample_euler_with(&p, &den, &x_init, &grid, opts)?
        }
        DenoiserChoice::Analytic => {
            let ds = training_set(cfg)?;
            let den = analytic_dirac_denoiser(&ds, &p).map_err(|e| UsageError(e.to_string()))?;
            sample_euler_with(&p, &den as &dyn Denoiser, &x_init, &grid, opts)?
        }
    };
    let mut w = create(out, "trajectory.csv")?;
    write_trajectory_csv(&mut w, &run.trajectory)?;
    w.flush()?;
    save_pgm(out, "start.pgm", &x_init, None)?;
    save_pgm(out, "end.pgm", &run.output, None)?;
    Ok(run.output)
}

/// Per-entry statistics of simulated SDE endpoints against the exact kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryStats {
    pub mean: f64,
    pub exact_mean: f64,
    pub var: f64,
    pub exact_var: f64,
}

impl EntryStats {
    /// z-score of the empirical mean; `None` for entries the noise never reaches.
    pub fn z_mean(&self, paths: usize) -> Option<f64> {
        (self.exact_var > 0.0)
            .then(|| (self.mean - self.exact_mean) / (self.exact_var / paths as f64).sqrt())
    }
}

/// Simulates `simulate.paths` forward SDE paths from the clean evaluation image
/// and writes `sde_stats.csv`.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out: &Path,
    instance: u64,
) -> anyhow::Result<Vec<EntryStats>> {
    ensure_dir(out)?;
    let p = cfg.process()?;
    let task = task_instance(cfg, instance)?;
    let clean = task.transformed_clean()?;
    let degraded = task.transformed_degraded()?;
    let residual = p.basis().mode() == anynoise_core::BasisMode::SampleDependent;
    let cond = || residual.then(|| Conditioning::new(&clean, &degraded));
    let spec = &cfg.simulate;
    let root = Rng::new(cfg.seed, streams::SIMULATE);
    let ends: Vec<Field> = (0..spec.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = root.fork(streams::SIMULATE + k as u64);
            p.simulate_sde(&clean, spec.steps, cond(), &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let moments = p.conditional_moments(&clean, p.horizon(), cond())?;
    let basis = moments.cov_op.basis();
    let mut diag = vec![0.0; clean.len()];
    for m in 0..basis.len() {
        for (acc, h) in diag.iter_mut().zip(basis.element(m).data()) {
            *acc += h * h;
        }
    }
    let n = spec.paths as f64;
    let stats: Vec<EntryStats> = (0..clean.len())
        .map(|i| {
            let mean = ends.iter().map(|x| x.data()[i]).sum::<f64>() / n;
            let var = ends
                .iter()
                .map(|x| (x.data()[i] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            EntryStats {
                mean,
                exact_mean: moments.mean.data()[i],
                var,
                exact_var: moments.cov_scale * diag[i],
            }
        })
        .collect();
    let mut w = create(out, "sde_stats.csv")?;
    writeln!(w, "index,mean,exact_mean,var,exact_var,z_mean")?;
    for (i, s) in stats.iter().enumerate() {
        let z = s
            .z_mean(spec.paths)
            .map(|z| format!("{z:e}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{i},{:e},{:e},{:e},{:e},{z}",
            s.mean, s.exact_mean, s.var, s.exact_var
        )?;
    }
    w.flush()?;
    Ok(stats)
}

/// Writes `case3.csv` with one `eta,distance,noise_floor` row per mediator value.
pub fn cmd_case3(spec: &Case3Spec, seed: u64, out: &Path) -> anyhow::Result<Case3Report> {
    ensure_dir(out)?;
    if !(spec.lambda > 0.0 && spec.lambda.is_finite()) {
        return Err(UsageError(format!(
            "case3.lambda must be positive, got {}",
            spec.lambda
        ))
        .into());
    }
    let mut rng = Rng::new(seed, streams::CASE3);
    let report = case3_discrete_demo(&centered_poisson(spec.lambda), &spec.etas, spec.n, &mut rng)
        .map_err(|e| UsageError(e.to_string()))?;
    let mut w = create(out, "case3.csv")?;
    writeln!(w, "eta,distance,noise_floor")?;
    for row in &report.rows {
        writeln!(
            w,
            "{:e},{:e},{:e}",
            row.eta, row.distance, report.noise_floor
        )?;
    }
    w.flush()?;
    Ok(report)
}

/// Runs a suite and writes its JSON report to `out`, or stdout.
pub fn cmd_verify(suite: &str, seed: u64, out: Option<&Path>) -> anyhow::Result<SuiteReport> {
    let report = run_suite(suite, seed).map_err(|e| match e {
        anynoise_core::Error::UnknownSuite(_) => anyhow::Error::new(UsageError(e.to_string())),
        e => e.into(),
    })?;
    let json = report.to_json();
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(dir)?;
            }
            fs::write(path, format!("{json}\n"))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{json}"),
    }
    Ok(report)
}
