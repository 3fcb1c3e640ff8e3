use std::path::{Path, PathBuf};

use cugro::continual::{ReplayVariant, SequenceConfig};
use cugro::envs::{validate_sequence, Quality, TaskKind, TaskSpec, DEFAULT_HORIZON};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One task of the sequence. DirReward tasks may give `degrees` instead of
/// a direction vector in `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub family: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees: Option<f64>,
}

impl TaskEntry {
    pub fn direction(degrees: f64) -> Self {
        Self {
            family: "DirReward".into(),
            params: Vec::new(),
            degrees: Some(degrees),
        }
    }

    pub fn kind(&self) -> cugro::Result<TaskKind> {
        match self.degrees {
            Some(deg) if self.family == "DirReward" && self.params.is_empty() => {
                let kind = TaskKind::direction_from_degrees(deg);
                kind.validate()?;
                Ok(kind)
            }
            Some(_) => Err(cugro::Error::Config(
                "'degrees' only applies to DirReward tasks without 'params'".into(),
            )),
            None => TaskKind::from_parts(&self.family, &self.params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seed of the scripted collection policies.
    pub seed: u64,
    /// Transitions per task and quality tier, rounded up to whole episodes.
    pub transitions: usize,
    pub horizon: usize,
    /// Tiers written by `collect`.
    pub qualities: Vec<Quality>,
    /// Tier read by `train` and `sweep`.
    pub train_quality: Quality,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            transitions: 5000,
            horizon: DEFAULT_HORIZON,
            qualities: vec![Quality::Medium],
            train_quality: Quality::Medium,
        }
    }
}

/// Directories relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            runs_dir: "runs".into(),
        }
    }
}

/// Grid expanded by `sweep`; every combination gets its own run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub variants: Vec<ReplayVariant>,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variants: vec![ReplayVariant::Diffusion],
            lambdas: vec![0.1, 1.0, 10.0, 100.0],
            betas: vec![1.0],
            seeds: vec![0],
        }
    }
}

/// The full experiment description read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub tasks: Vec<TaskEntry>,
    pub sequence: SequenceConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            tasks: vec![
                TaskEntry::direction(0.0),
                TaskEntry::direction(120.0),
                TaskEntry::direction(240.0),
            ],
            sequence: SequenceConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text, p)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> cugro::Result<()> {
        self.task_specs()?;
        if self.data.transitions < self.data.horizon {
            return Err(cugro::Error::Config(format!(
                "data.transitions ({}) must cover at least one episode of {} steps",
                self.data.transitions, self.data.horizon
            )));
        }
        if self.data.qualities.is_empty() {
            return Err(cugro::Error::Config(
                "data.qualities must name at least one tier".into(),
            ));
        }
        self.sequence.validate()?;
        let s = &self.sweep;
        if s.variants.is_empty() || s.lambdas.is_empty() || s.betas.is_empty() || s.seeds.is_empty() {
            return Err(cugro::Error::Config("every sweep axis needs at least one value".into()));
        }
        Ok(())
    }

    pub fn task_specs(&self) -> cugro::Result<Vec<TaskSpec>> {
        if self.tasks.is_empty() {
            return Err(cugro::Error::Config("tasks: at least one task is required".into()));
        }
        let specs = self
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let kind = t
                    .kind()
                    .map_err(|e| cugro::Error::Config(format!("tasks[{i}].family: {e}")))?;
                TaskSpec::new(i as u32 + 1, kind, self.data.horizon)
            })
            .collect::<cugro::Result<Vec<_>>>()?;
        validate_sequence(&specs)?;
        Ok(specs)
    }

    pub fn dataset_path(&self, root: &Path, task: u32, quality: Quality) -> PathBuf {
        root.join(&self.paths.data_dir)
            .join(format!("task{task}_{quality}.cgd"))
    }

    /// `variant-l<lambda>-b<beta>-s<seed>` under the runs directory.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        let s = &self.sequence;
        root.join(&self.paths.runs_dir)
            .join(format!("{}-l{}-b{}-s{}", s.variant, s.lambda, s.beta, s.seed))
    }
}
