//! Trains one replay variant over three direction tasks and prints the
//! per-phase returns.
//!
//! ```text
//! cargo run --release --example sequence -- diffusion 1.0
//! ```

use std::time::Instant;

use cugro::continual::{run_sequence_with, ReplayVariant, SequenceConfig};
use cugro::envs::{collect_dataset, Quality, TaskKind, TaskSpec, DEFAULT_HORIZON};

fn main() -> cugro::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let variant: ReplayVariant = args.get(1).map(String::as_str).unwrap_or("diffusion").parse()?;
    let lambda: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let cfg = SequenceConfig {
        variant,
        lambda,
        ..SequenceConfig::desk()
    };
    let datasets = [0.0, 120.0, 240.0]
        .iter()
        .enumerate()
        .map(|(i, deg)| {
            let task = TaskSpec::new(i as u32 + 1, TaskKind::direction_from_degrees(*deg), DEFAULT_HORIZON)?;
            collect_dataset(&task, Quality::Medium, 5000, 7, cfg.gamma)
        })
        .collect::<cugro::Result<Vec<_>>>()?;
    for d in &datasets {
        println!("task {} dataset return {:.2}", d.task_id(), d.mean_return());
    }
    let start = Instant::now();
    let out = run_sequence_with(&cfg, &datasets, None, &mut |report, _| {
        let returns: Vec<String> = report.evaluation.iter().map(|r| format!("{:.2}", r.mean())).collect();
        println!(
            "[{:>6.1}s] phase {}: losses state {:.3} behavior {:.3} critic {:.3}; returns [{}]",
            start.elapsed().as_secs_f64(),
            report.task,
            report.state_gen_loss,
            report.behavior_loss,
            report.critic_loss,
            returns.join(", ")
        );
    })?;
    println!(
        "{variant} lambda {lambda}: final cumulative average {:.3}",
        out.state.metrics.final_cumulative_average().unwrap_or(f64::NAN)
    );
    Ok(())
}
