use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use deflicker::trainer::{fit, FitOptions, TrainConfig, TrainState, LATEST_CHECKPOINT};
use serde::Serialize;

use super::read_json;
use crate::header::RunHeader;
use crate::tree::{training_video, video_roots, DEFAULT_PATTERN};
use crate::usage;

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_LOG: &str = "metrics.jsonl";

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Training configuration (JSON). Required unless resuming.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Video trees, or directories of video trees.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Frame file pattern inside raw/ and processed/.
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pub pattern: String,
    /// Print a progress line every N steps (0 disables).
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
}

pub fn run(args: Args) -> Result<()> {
    let (config, state) = match (&args.config, &args.resume) {
        (None, None) => return Err(usage("either --config or --resume is required")),
        (cfg, Some(ckpt)) => {
            let (state, stored) =
                TrainState::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let config: TrainConfig = match cfg {
                Some(p) => read_json(p, "training config")?,
                None => stored,
            };
            if config.net != *state.net.config() {
                return Err(usage(
                    "network settings in --config differ from the checkpoint",
                ));
            }
            (config, state)
        }
        (Some(p), None) => {
            let config: TrainConfig = read_json(p, "training config")?;
            config.validate()?;
            let state = TrainState::new(&config)?;
            (config, state)
        }
    };
    config.validate()?;

    let mut dataset = Vec::new();
    for dir in &args.data {
        for root in video_roots(dir)? {
            dataset.push(training_video(&root, &args.pattern)?);
        }
    }
    let header = RunHeader::new("train", &(&args, &config), Some(config.seed))?;
    header.write(&args.out)?;

    let total = config.total_steps();
    eprintln!(
        "training on {} videos, steps {} → {}",
        dataset.len(),
        state.step,
        total
    );
    let options = FitOptions {
        checkpoint_dir: Some(args.out.join(CHECKPOINT_DIR)),
        metrics_log: Some(args.out.join(METRICS_LOG)),
    };
    let started = Instant::now();
    let first_step = state.step;
    let outcome = fit(&dataset, &config, state, &options, |r| {
        let step = r.step.unwrap_or(0);
        if args.log_every > 0 && (step % args.log_every == 0 || step == total) {
            let rate = started.elapsed().as_secs_f64() / (step - first_step).max(1) as f64;
            eprintln!("step {step}/{total} loss {:.6} ({rate:.3} s/step)", r.total);
        }
    })?;
    eprintln!(
        "finished at step {}; latest checkpoint {}",
        outcome.state.step,
        args.out
            .join(CHECKPOINT_DIR)
            .join(LATEST_CHECKPOINT)
            .display()
    );
    Ok(())
}
