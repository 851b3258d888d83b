use std::path::PathBuf;
use std::process::ExitCode;

use anynoise_cli::commands::{self, DenoiserChoice};
use anynoise_cli::config::{Case3Spec, ExperimentConfig, UsageError};
use clap::{Args, Parser, Subcommand};

/// Diffusion with structured noise: training, sampling, restoration and checks.
#[derive(Parser)]
#[command(name = "anynoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Dotted override, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the config's `output`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        overrides.extend(extra);
        let cfg = ExperimentConfig::load(&self.config, &overrides)?;
        let out = self.out.clone().unwrap_or_else(|| cfg.output.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the denoiser network; writes model.bin and loss.csv.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Noise an evaluation image to T and integrate back; writes trajectory.csv and PGMs.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sampler steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Trained network; one is trained first when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "network")]
        denoiser: DenoiserChoice,
        /// Evaluation instance index.
        #[arg(long, default_value_t = 0)]
        instance: u64,
    },
    /// Restore a degraded evaluation image; writes metrics.json and a PGM triplet.
    Restore {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sampler steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Trained network; one is trained first when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluation instance index.
        #[arg(long, default_value_t = 0)]
        instance: u64,
    },
    /// Simulate the forward SDE and compare endpoint statistics with the kernel.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Euler–Maruyama steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        instance: u64,
    },
    /// Run a verification suite and emit its JSON report.
    Verify {
        /// Suite name, or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance between discrete noise and its mediated mixture across η; writes case3.csv.
    DemoCase3 {
        /// Optional config; only its `seed` and `[case3]` table are used.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
}

fn steps_override(key: &str, steps: Option<usize>) -> Vec<String> {
    steps.map(|n| format!("{key}={n}")).into_iter().collect()
}

fn case3_spec(
    config: Option<&PathBuf>,
    overrides: &[String],
    seed: u64,
) -> anyhow::Result<(Case3Spec, u64)> {
    #[derive(serde::Deserialize)]
    struct Partial {
        seed: Option<u64>,
        #[serde(default)]
        case3: Case3Spec,
    }
    let text = match config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| UsageError(e.to_string()))?;
    for raw in overrides {
        let (path, value) = anynoise_cli::config::parse_override(raw)?;
        match path.as_slice() {
            [a, b] if a == "case3" => {
                let t = table
                    .entry("case3")
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                if let toml::Value::Table(t) = t {
                    t.insert(b.clone(), value);
                }
            }
            _ => {
                return Err(UsageError(format!(
                    "demo-case3 only accepts case3.* overrides, got `{raw}`"
                ))
                .into())
            }
        }
    }
    let partial: Partial = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(e.to_string()))?;
    Ok((partial.case3, partial.seed.unwrap_or(seed)))
}

/// `Ok(false)` signals a failed check.
fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { cfg, steps } => {
            let (cfg, out) = cfg.load(steps_override("train.steps", steps))?;
            let outcome = commands::cmd_train(&cfg, &out)?;
            let last = outcome.trace.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final loss {last:.6e}; wrote {}",
                outcome.trace.len(),
                out.display()
            );
        }
        Command::Sample {
            cfg,
            steps,
            checkpoint,
            denoiser,
            instance,
        } => {
            let (cfg, out) = cfg.load(steps_override("sampler.steps", steps))?;
            commands::cmd_sample(&cfg, &out, checkpoint.as_deref(), denoiser, instance)?;
            println!("wrote {}", out.join("trajectory.csv").display());
        }
        Command::Restore {
            cfg,
            steps,
            checkpoint,
            instance,
        } => {
            let (cfg, out) = cfg.load(steps_override("sampler.steps", steps))?;
            let r = commands::cmd_restore(&cfg, &out, checkpoint.as_deref(), instance)?;
            let m = &r.metrics;
            println!(
                "{} ({} steps): psnr {:.3} -> {:.3} dB, rmse {:.5} -> {:.5}",
                m.task, m.steps, m.psnr_in, m.psnr_out, m.rmse_in, m.rmse_out
            );
        }
        Command::Simulate {
            cfg,
            steps,
            instance,
        } => {
            let (cfg, out) = cfg.load(steps_override("simulate.steps", steps))?;
            let stats = commands::cmd_simulate(&cfg, &out, instance)?;
            let worst = stats
                .iter()
                .filter_map(|s| s.z_mean(cfg.simulate.paths))
                .map(f64::abs)
                .fold(0.0, f64::max);
            println!("{} entries, max |z| of the mean {worst:.3}", stats.len());
        }
        Command::Verify { suite, seed, out } => {
            let report = commands::cmd_verify(&suite, seed, out.as_deref())?;
            for c in report.failures() {
                eprintln!(
                    "FAILED {}: measured {:?}, threshold {}",
                    c.name, c.measured, c.threshold
                );
            }
            return Ok(report.passed);
        }
        Command::DemoCase3 {
            config,
            overrides,
            seed,
            out,
        } => {
            let (spec, seed) = case3_spec(config.as_ref(), &overrides, seed)?;
            let report = commands::cmd_case3(&spec, seed, &out)?;
            for row in &report.rows {
                println!("eta {:>10.3e}  distance {:.4}", row.eta, row.distance);
            }
            println!("noise floor {:.4}", report.noise_floor);
        }
    }
    Ok(true)
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("ANYNOISE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        UsageError(format!(
            "ANYNOISE_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
