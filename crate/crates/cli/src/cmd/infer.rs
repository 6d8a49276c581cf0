use std::path::PathBuf;

use anyhow::{Context, Result};
use deflicker::net::ConsistencyNet;
use deflicker::video::{save_frame_folder, VideoTriplet};
use serde::Serialize;

use crate::header::RunHeader;
use crate::tree::{load_frames, DEFAULT_PATTERN};

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Network weights or a training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw input frames.
    #[arg(long)]
    pub raw: PathBuf,
    /// Per-frame processed frames.
    #[arg(long)]
    pub processed: PathBuf,
    /// Where output frames are written.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pub pattern: String,
    /// Resize inputs to this many rows, keeping the aspect ratio.
    #[arg(long)]
    pub height: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let net = ConsistencyNet::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let raw = load_frames(&args.raw, &args.pattern, args.height, "raw")?;
    let processed = load_frames(&args.processed, &args.pattern, args.height, "processed")?;
    let triplet = VideoTriplet::new(raw, processed)?;
    let output = net.rollout(&triplet)?;
    save_frame_folder(&output, &args.out, None)?;
    RunHeader::new("infer", &(&args, net.config()), None)?
        .with_flow_reads()
        .write(&args.out)?;
    eprintln!("wrote {} frames to {}", output.len(), args.out.display());
    Ok(())
}
