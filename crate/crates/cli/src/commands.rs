use std::io::Write;
use std::path::{Path, PathBuf};

use cugro::continual::{
    evaluate, render_csv, restore, resume_sequence, run_sequence_with, ContinualState, Metrics, MetricsRow,
    PhaseReport, ReplayVariant, RunTag,
};
use cugro::dataset::{self, OfflineDataset};
use cugro::envs::collect_dataset;
use cugro::numerics::checkpoint::{write_atomic, Manifest};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Command-line settings that take precedence over the configuration file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<ReplayVariant>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
}

impl Overrides {
    /// Applies to the training settings; `collect` uses the seed for `data.seed` instead.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        let s = &mut cfg.sequence;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(v) = self.variant {
            s.variant = v;
        }
        if let Some(l) = self.lambda {
            s.lambda = l;
        }
        if let Some(b) = self.beta {
            s.beta = b;
        }
        s.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Collects one dataset file per task and quality tier and writes a
/// `collection.manifest` listing them.
pub fn collect(cfg: &ExperimentConfig, root: &Path, log: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let specs = cfg.task_specs()?;
    let data_dir = root.join(&cfg.paths.data_dir);
    ensure_dir(&data_dir)?;
    let mut manifest = Manifest::new();
    manifest
        .push("seed", cfg.data.seed)
        .push_f64("gamma", cfg.sequence.gamma)
        .push("files", specs.len() * cfg.data.qualities.len());
    let mut written = Vec::new();
    for spec in &specs {
        for &quality in &cfg.data.qualities {
            let d = collect_dataset(spec, quality, cfg.data.transitions, cfg.data.seed, cfg.sequence.gamma)?;
            let path = cfg.dataset_path(root, spec.task_id, quality);
            dataset::save(&d, &path)?;
            let i = written.len();
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            manifest
                .push(format!("file.{i}"), &name)
                .push(format!("file.{i}.transitions"), d.num_transitions())
                .push(format!("file.{i}.trajectories"), d.trajectories().len());
            let _ = writeln!(
                log,
                "task {} {quality}: {} transitions, mean return {:.3} -> {}",
                spec.task_id,
                d.num_transitions(),
                d.mean_return(),
                path.display()
            );
            written.push(path);
        }
    }
    manifest.write(&data_dir.join("collection.manifest"))?;
    Ok(written)
}

/// Loads the training-tier dataset of every configured task.
pub fn load_datasets(cfg: &ExperimentConfig, root: &Path) -> CliResult<Vec<OfflineDataset>> {
    let specs = cfg.task_specs()?;
    let paths: Vec<PathBuf> = specs
        .iter()
        .map(|s| cfg.dataset_path(root, s.task_id, cfg.data.train_quality))
        .collect();
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(CliError::MissingData(missing));
    }
    let mut out = Vec::with_capacity(paths.len());
    for (spec, path) in specs.iter().zip(&paths) {
        let d = dataset::load(path)?;
        if d.task() != spec {
            return Err(CliError::Core(cugro::Error::Consistency(format!(
                "{} holds a different task than tasks[{}] of the configuration",
                path.display(),
                spec.task_id - 1
            ))));
        }
        out.push(d);
    }
    Ok(out)
}

fn report_line(report: &PhaseReport, state: &ContinualState) -> String {
    let returns: Vec<String> = report.evaluation.iter().map(|r| format!("{:.3}", r.mean())).collect();
    format!(
        "phase {}: returns [{}], cumulative average {:.3}, losses state {:.4} behavior {:.4} critic {:.4}",
        report.task,
        returns.join(", "),
        state.metrics.cumulative_average(report.task).unwrap_or(f64::NAN),
        report.state_gen_loss,
        report.behavior_loss,
        report.critic_loss
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub metrics: Metrics,
}

/// Runs the task sequence into its run directory, echoing the effective
/// configuration as `config.toml`. With `resume`, continues from the
/// checkpoint already in that directory.
pub fn train(cfg: &ExperimentConfig, root: &Path, resume: bool, log: &mut dyn Write) -> CliResult<TrainSummary> {
    let datasets = load_datasets(cfg, root)?;
    let run_dir = cfg.run_dir(root);
    ensure_dir(&run_dir)?;
    let _ = writeln!(log, "run directory {}", run_dir.display());
    let config_path = run_dir.join("config.toml");
    let mut observer = |report: &PhaseReport, state: &ContinualState| {
        let _ = writeln!(log, "{}", report_line(report, state));
    };
    let outcome = if resume && run_dir.join("manifest").exists() {
        let stored = ExperimentConfig::load(Some(&config_path))?;
        if stored.sequence != cfg.sequence {
            return Err(CliError::Usage(format!(
                "{} was trained with different sequence settings; rerun without --resume",
                run_dir.display()
            )));
        }
        resume_sequence(&cfg.sequence, &datasets, &run_dir, &mut observer)?
    } else {
        write_atomic(&config_path, cfg.to_toml().as_bytes())?;
        run_sequence_with(&cfg.sequence, &datasets, Some(&run_dir), &mut observer)?
    };
    Ok(TrainSummary {
        run_dir,
        metrics: outcome.state.metrics,
    })
}

/// Re-evaluates a checkpoint, writes `eval.csv` next to it and returns the rows.
pub fn eval(run_dir: &Path, episodes: Option<usize>, log: &mut dyn Write) -> CliResult<Vec<MetricsRow>> {
    if !run_dir.join("manifest").exists() {
        return Err(CliError::MissingCheckpoint(run_dir.to_path_buf()));
    }
    let cfg = ExperimentConfig::load(Some(&run_dir.join("config.toml")))?;
    let seq = &cfg.sequence;
    let state = restore(run_dir, seq)?;
    let mut eval_cfg = seq.eval.clone();
    if let Some(n) = episodes {
        if n == 0 {
            return Err(CliError::Usage("--episodes must be positive".into()));
        }
        eval_cfg.episodes = n;
    }
    let sched = seq.schedule.build()?;
    let results = evaluate(
        &state.models,
        &state.stats,
        &state.tasks,
        &sched,
        &eval_cfg,
        seq.seed,
        state.completed,
    )?;
    let tag = RunTag {
        variant: seq.variant,
        seed: seq.seed,
        lambda: seq.lambda,
        beta: seq.beta,
    };
    let rows: Vec<MetricsRow> = results
        .iter()
        .map(|r| {
            let mean = r.mean();
            let best = state
                .metrics
                .task_curve(r.task)
                .into_iter()
                .map(|(_, v)| v)
                .fold(mean, f64::max);
            MetricsRow {
                phase: state.completed,
                task: r.task,
                mean_return: mean,
                std_return: r.std(),
                forgetting: best - mean,
                variant: tag.variant,
                seed: tag.seed,
                lambda: tag.lambda,
                beta: tag.beta,
            }
        })
        .collect();
    for r in &rows {
        let _ = writeln!(
            log,
            "task {}: mean return {:.3} (std {:.3}), forgetting {:.3}",
            r.task, r.mean_return, r.std_return, r.forgetting
        );
    }
    let avg = rows.iter().map(|r| r.mean_return).sum::<f64>() / rows.len().max(1) as f64;
    let _ = writeln!(log, "cumulative average over {} tasks: {avg:.3}", rows.len());
    write_atomic(&run_dir.join("eval.csv"), render_csv(&rows)?.as_bytes())?;
    Ok(rows)
}

/// Trains every combination of the sweep grid, each axis narrowed to a
/// single value when the matching override is set.
pub fn sweep(
    cfg: &ExperimentConfig,
    root: &Path,
    overrides: &Overrides,
    log: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    let s = &cfg.sweep;
    let variants = overrides.variant.map(|v| vec![v]).unwrap_or_else(|| s.variants.clone());
    let lambdas = overrides.lambda.map(|v| vec![v]).unwrap_or_else(|| s.lambdas.clone());
    let betas = overrides.beta.map(|v| vec![v]).unwrap_or_else(|| s.betas.clone());
    let seeds = overrides.seed.map(|v| vec![v]).unwrap_or_else(|| s.seeds.clone());
    let mut dirs = Vec::new();
    for &seed in &seeds {
        for &variant in &variants {
            for &beta in &betas {
                for &lambda in &lambdas {
                    let mut run = cfg.clone();
                    Overrides {
                        seed: Some(seed),
                        variant: Some(variant),
                        lambda: Some(lambda),
                        beta: Some(beta),
                    }
                    .apply(&mut run)?;
                    dirs.push(train(&run, root, false, log)?.run_dir);
                }
            }
        }
    }
    Ok(dirs)
}
