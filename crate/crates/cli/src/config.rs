//! Experiment configuration: a TOML file plus dotted `--set` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anynoise_core::basis::{legendre_trig_basis, pixel_basis, BasisSet};
use anynoise_core::sampler::GridScheme;
use anynoise_core::schedule::{Schedule, ScheduleKind};
use anynoise_core::tasks::{ResidualPattern, DEFAULT_BIAS_AMPLITUDE};
use anynoise_core::{DiffusionProcess, TrainConfig};
use serde::{Deserialize, Serialize};

/// A problem with the command line or the config file. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleChoice {
    Vp,
    DdpmScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleChoice,
    pub beta_min: f64,
    pub beta_max: f64,
    pub horizon: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleChoice::Vp,
            beta_min: 1e-4,
            beta_max: 0.02,
            horizon: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    Pixel,
    LegendreTrig { n1: usize, n2: usize },
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    SmoothField,
    Streaks,
    ShadowBox,
}

impl TaskKind {
    pub fn residual_pattern(self) -> Option<ResidualPattern> {
        match self {
            TaskKind::SmoothField => None,
            TaskKind::Streaks => Some(ResidualPattern::Streaks),
            TaskKind::ShadowBox => Some(ResidualPattern::ShadowBox),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default = "default_size")]
    pub size: [usize; 2],
    #[serde(default = "default_train_images")]
    pub train_images: usize,
    #[serde(default = "default_bias_amplitude")]
    pub bias_amplitude: f64,
}

fn default_size() -> [usize; 2] {
    [16, 16]
}

fn default_train_images() -> usize {
    256
}

fn default_bias_amplitude() -> f64 {
    DEFAULT_BIAS_AMPLITUDE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub steps: usize,
    pub scheme: GridScheme,
    pub final_denoise: bool,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            steps: 5,
            scheme: GridScheme::Uniform,
            final_denoise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub paths: usize,
    pub steps: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            paths: 200,
            steps: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case3Spec {
    /// Mean of the Poisson noise `h`.
    pub lambda: f64,
    pub n: usize,
    pub etas: Vec<f64>,
}

impl Default for Case3Spec {
    fn default() -> Self {
        Self {
            lambda: 4.0,
            n: 20_000,
            etas: vec![0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub basis: BasisSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub case3: Case3Spec,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Parses a `key.path=value` override. The value is read as a TOML value, and
/// falls back to a bare string.
pub fn parse_override(raw: &str) -> anyhow::Result<(Vec<String>, toml::Value)> {
    let Some((key, value)) = raw.split_once('=') else {
        return usage(format!("override `{raw}` is not of the form key=value"));
    };
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return usage(format!("bad override key `{key}`"));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(
    root: &mut toml::Table,
    path: &[String],
    value: toml::Value,
) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("override paths are nonempty");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return usage(format!("`{}` is not a table", path.join("."))),
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path`, applies overrides and validates.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return usage(format!("cannot read config {}: {e}", path.display())),
        };
        Self::from_toml_str(&text, overrides).map_err(|e| match e.downcast::<UsageError>() {
            Ok(u) => UsageError(format!("{}: {}", path.display(), u.0)).into(),
            Err(e) => e,
        })
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = match toml::from_str(text) {
            Ok(t) => t,
            Err(e) => return usage(e.to_string()),
        };
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            apply_override(&mut table, &path, value)?;
        }
        // The training stream follows the experiment seed unless pinned.
        if let Some(seed) = table.get("seed").cloned() {
            let train = table
                .entry("train")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = train {
                t.entry("seed").or_insert(seed);
            }
        }
        let cfg: ExperimentConfig = match toml::Value::Table(table).try_into() {
            Ok(c) => c,
            Err(e) => return usage(e.to_string()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return usage(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        let residual_task = self.task.kind.residual_pattern().is_some();
        let residual_basis = self.basis == BasisSpec::Residual;
        if residual_task != residual_basis {
            return usage("residual tasks need `basis.kind = \"residual\"` and vice versa");
        }
        if self.task.size.contains(&0) {
            return usage("task.size entries must be positive");
        }
        if self.task.train_images == 0 {
            return usage("task.train_images must be >= 1");
        }
        if self.sampler.steps == 0 {
            return usage("sampler.steps must be >= 1");
        }
        if self.simulate.paths < 2 || self.simulate.steps == 0 {
            return usage("simulate needs paths >= 2 and steps >= 1");
        }
        if self.network.hidden.contains(&0) {
            return usage("network.hidden widths must be positive");
        }
        if let Err(e) = self.train.validate() {
            return usage(e.to_string());
        }
        Ok(())
    }

    pub fn schedule(&self) -> anyhow::Result<Schedule> {
        let s = &self.schedule;
        let kind = match s.kind {
            ScheduleChoice::Vp => ScheduleKind::VpContinuous,
            ScheduleChoice::DdpmScaled => ScheduleKind::DdpmScaled,
        };
        Schedule::linear_beta(kind, s.beta_min, s.beta_max, s.horizon)
            .map_err(|e| UsageError(format!("schedule: {e}")).into())
    }

    pub fn basis(&self) -> anyhow::Result<BasisSet> {
        let size = self.task.size;
        Ok(match self.basis {
            BasisSpec::Pixel => pixel_basis(&size),
            BasisSpec::LegendreTrig { n1, n2 } => {
                legendre_trig_basis(n1, n2, size).map_err(|e| UsageError(format!("basis: {e}")))?
            }
            BasisSpec::Residual => BasisSet::residual(&size),
        })
    }

    pub fn process(&self) -> anyhow::Result<DiffusionProcess> {
        DiffusionProcess::new(self.schedule()?, self.basis()?, self.eta)
            .map_err(|e| UsageError(e.to_string()).into())
    }

    /// `[d + 1, hidden…, d]`.
    pub fn network_widths(&self) -> Vec<usize> {
        let d = self.task.size[0] * self.task.size[1];
        std::iter::once(d + 1)
            .chain(self.network.hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[basis]
kind = "pixel"
[task]
kind = "smooth-field"
size = [4, 4]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.schedule, ScheduleSpec::default());
        assert_eq!(cfg.sampler.steps, 5);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.network_widths(), vec![17, 64, 64, 16]);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let sets = [
            "train.steps=7".to_string(),
            "schedule.kind=ddpm-scaled".to_string(),
            "network.hidden=[8]".to_string(),
            "train.seed=11".to_string(),
        ];
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &sets).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.schedule.kind, ScheduleChoice::DdpmScaled);
        assert_eq!(cfg.network.hidden, vec![8]);
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        for (text, sets) in [
            ("seed = 1", vec![]),
            (MINIMAL, vec!["nonsense".to_string()]),
            (MINIMAL, vec!["task.kind=streaks".to_string()]),
            (MINIMAL, vec!["sampler.steps=0".to_string()]),
            (MINIMAL, vec!["seed.x=1".to_string()]),
        ] {
            let err = ExperimentConfig::from_toml_str(text, &sets).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{err}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ExperimentConfig::load(Path::new("/no/such/config.toml"), &[]).unwrap_err();
        assert!(err.to_string().contains("/no/such/config.toml"));
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
