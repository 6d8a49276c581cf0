use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use deflicker::synth::{export, generate, FlickerKind, SynthSpec};
use serde::Serialize;

use super::read_json;
use crate::header::RunHeader;
use crate::usage;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 32×32 checker, reversal at frame 10, 20 frames, brightness flicker 0.15.
    B1,
    /// B1 geometry with hue-shift flicker.
    B1Hue,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON scene and flicker description.
    #[arg(long, conflicts_with_all = ["preset", "seed", "count"])]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Texture and flicker seed of the preset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of preset videos, seeded `seed, seed + 1, …`, one subdirectory each.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
}

fn preset_spec(preset: Preset, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::b1_variant(seed);
    if let Preset::B1Hue = preset {
        spec.flicker.kind = FlickerKind::HueShift;
    }
    spec
}

pub fn run(args: Args) -> Result<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let jobs: Vec<(PathBuf, SynthSpec)> = match &args.spec {
        Some(path) => vec![(args.out.clone(), read_json(path, "synth spec")?)],
        None => {
            let preset = args.preset.unwrap_or(Preset::B1);
            let first = args.seed.unwrap_or(SynthSpec::b1().scene.seed);
            if args.count == 1 {
                vec![(args.out.clone(), preset_spec(preset, first))]
            } else {
                (first..first + args.count)
                    .map(|s| (args.out.join(format!("video-{s}")), preset_spec(preset, s)))
                    .collect()
            }
        }
    };
    for (_, spec) in &jobs {
        spec.validate()?;
    }
    let specs: Vec<&SynthSpec> = jobs.iter().map(|(_, s)| s).collect();
    let header = RunHeader::new(
        "synth",
        &(&args, &specs),
        args.seed.or(Some(jobs[0].1.scene.seed)),
    )?;
    for (dir, spec) in &jobs {
        let video = generate(spec)?;
        export(&video, dir).with_context(|| format!("exporting to {}", dir.display()))?;
        eprintln!("wrote {} frames to {}", video.triplet.len(), dir.display());
    }
    header.write(&args.out)
}
