use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use deflicker::features::FeatureExtractor;
use deflicker::metrics::{
    score_sequences, FeatureDistance, FlowSource, PerceptualEmbedder, PixelL1,
};
use deflicker::synth::{FLOW_DIR, PROCESSED_DIR, RAW_DIR};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::header::RunHeader;
use crate::tree::{
    flow_directory, leaf_name, load_frames, require_dir, DEFAULT_PATTERN, OUTPUT_DIR,
};
use crate::usage;

pub const CSV_NAME: &str = "metrics.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const DEFAULT_TASK: &str = "default";

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSourceArg {
    /// Flows estimated on the raw frames.
    Raw,
    /// Flows estimated on the frames being scored.
    #[value(name = "self")]
    #[serde(rename = "self")]
    SelfFrames,
}

impl From<FlowSourceArg> for FlowSource {
    fn from(a: FlowSourceArg) -> Self {
        match a {
            FlowSourceArg::Raw => FlowSource::Raw,
            FlowSourceArg::SelfFrames => FlowSource::SelfFrames,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderArg {
    /// Unit-normalised feature distance with fixed random weights.
    FixedRandom,
    /// Mean absolute pixel difference.
    PixelL1,
    /// Feature distance with converted VGG19 weights (`--embedder-weights`).
    Pretrained,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Raw frames of a single video.
    #[arg(long, requires_all = ["processed", "output"], conflicts_with = "tree")]
    pub raw: Option<PathBuf>,
    #[arg(long)]
    pub processed: Option<PathBuf>,
    /// Frames to score.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Flow files for the single video (default: `flows/` next to `--raw`).
    #[arg(long)]
    pub flows: Option<PathBuf>,
    #[arg(long)]
    pub video_id: Option<String>,
    #[arg(long, default_value = DEFAULT_TASK)]
    pub task: String,
    /// Directory of video trees, either `<video>/` or `<task>/<video>/`, each
    /// with raw/, processed/, output/ and flows/.
    #[arg(long, required_unless_present = "raw")]
    pub tree: Option<PathBuf>,
    /// Where the CSV and JSON summary are written.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    pub flow_source: FlowSourceArg,
    #[arg(long, value_enum, default_value = "fixed-random")]
    pub embedder: EmbedderArg,
    #[arg(long, default_value_t = 7)]
    pub embedder_seed: u64,
    /// Weight file for `--embedder pretrained`.
    #[arg(long)]
    pub embedder_weights: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pub pattern: String,
    /// Resize every sequence to this many rows before scoring.
    #[arg(long)]
    pub height: Option<usize>,
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub video_id: String,
    pub task: String,
    pub warping_error: f64,
    pub perceptual_distance: f64,
    pub frames_counted: usize,
    pub skipped_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSummary {
    pub task: String,
    pub videos: usize,
    pub warping_error: f64,
    pub perceptual_distance: f64,
}

/// Per-task means in first-seen order, then the mean over tasks.
pub fn summarise(rows: &[Row]) -> (Vec<TaskSummary>, TaskSummary) {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.task.as_str()) {
            order.push(&r.task);
        }
        groups.entry(&r.task).or_default().push(r);
    }
    let tasks: Vec<TaskSummary> = order
        .iter()
        .map(|t| {
            let g = &groups[t];
            let n = g.len() as f64;
            TaskSummary {
                task: t.to_string(),
                videos: g.len(),
                warping_error: g.iter().map(|r| r.warping_error).sum::<f64>() / n,
                perceptual_distance: g.iter().map(|r| r.perceptual_distance).sum::<f64>() / n,
            }
        })
        .collect();
    let n = tasks.len().max(1) as f64;
    let average = TaskSummary {
        task: "Average".into(),
        videos: rows.len(),
        warping_error: tasks.iter().map(|t| t.warping_error).sum::<f64>() / n,
        perceptual_distance: tasks.iter().map(|t| t.perceptual_distance).sum::<f64>() / n,
    };
    (tasks, average)
}

struct Job {
    video_id: String,
    task: String,
    raw: PathBuf,
    processed: PathBuf,
    output: PathBuf,
    flows: PathBuf,
}

impl Job {
    fn from_root(root: &Path, task: &str) -> Self {
        Self {
            video_id: leaf_name(root),
            task: task.to_string(),
            raw: root.join(RAW_DIR),
            processed: root.join(PROCESSED_DIR),
            output: root.join(OUTPUT_DIR),
            flows: root.join(FLOW_DIR),
        }
    }
}

fn is_scored_root(dir: &Path) -> bool {
    [RAW_DIR, PROCESSED_DIR, OUTPUT_DIR]
        .iter()
        .all(|d| dir.join(d).is_dir())
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort_by(|a, b| deflicker::video::natural_cmp(&a.to_string_lossy(), &b.to_string_lossy()));
    Ok(out)
}

fn tree_jobs(root: &Path, default_task: &str) -> Result<Vec<Job>> {
    require_dir(root, "tree")?;
    if is_scored_root(root) {
        return Ok(vec![Job::from_root(root, default_task)]);
    }
    let mut jobs = Vec::new();
    for child in sorted_children(root)? {
        if is_scored_root(&child) {
            jobs.push(Job::from_root(&child, default_task));
            continue;
        }
        let task = leaf_name(&child);
        for video in sorted_children(&child)? {
            if is_scored_root(&video) {
                jobs.push(Job::from_root(&video, &task));
            }
        }
    }
    if jobs.is_empty() {
        return Err(usage(format!(
            "no video trees with raw/, processed/ and output/ under {}",
            root.display()
        )));
    }
    Ok(jobs)
}

fn single_job(args: &Args) -> Result<Job> {
    let raw = args.raw.clone().expect("clap enforces --raw");
    let flows = match &args.flows {
        Some(f) => f.clone(),
        None => raw
            .parent()
            .map(|p| p.join(FLOW_DIR))
            .ok_or_else(|| usage("cannot locate flows; pass --flows"))?,
    };
    Ok(Job {
        video_id: args.video_id.clone().unwrap_or_else(|| {
            raw.parent()
                .map(leaf_name)
                .unwrap_or_else(|| leaf_name(&raw))
        }),
        task: args.task.clone(),
        processed: args.processed.clone().expect("clap enforces --processed"),
        output: args.output.clone().expect("clap enforces --output"),
        raw,
        flows,
    })
}

fn score(
    job: &Job,
    args: &Args,
    embedder: &dyn PerceptualEmbedder,
) -> Result<(Row, (usize, usize))> {
    let raw = load_frames(&job.raw, &args.pattern, args.height, "raw")?;
    let processed = load_frames(&job.processed, &args.pattern, args.height, "processed")?;
    let output = load_frames(&job.output, &args.pattern, args.height, "output")?;
    let flows = flow_directory(&job.flows)?;
    let s = score_sequences(
        &raw,
        &processed,
        &output,
        &flows,
        args.flow_source.into(),
        embedder,
    )
    .with_context(|| format!("scoring {}", job.video_id))?;
    Ok((
        Row {
            video_id: job.video_id.clone(),
            task: job.task.clone(),
            warping_error: s.warping_error,
            perceptual_distance: s.perceptual_distance,
            frames_counted: s.frames_counted,
            skipped_pairs: s.skipped_pairs,
        },
        output.dims(),
    ))
}

#[derive(Serialize)]
struct Summary<'a> {
    header: RunHeader,
    flow_source: FlowSourceArg,
    embedder: EmbedderArg,
    /// Height and width each video was scored at.
    resolution: BTreeMap<String, (usize, usize)>,
    tasks: Vec<TaskSummary>,
    average: TaskSummary,
    videos: &'a [Row],
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: Args) -> Result<()> {
    let jobs = match &args.tree {
        Some(root) => tree_jobs(root, &args.task)?,
        None => vec![single_job(&args)?],
    };
    let embedder: Box<dyn PerceptualEmbedder> = match args.embedder {
        EmbedderArg::FixedRandom => Box::new(FeatureDistance::fixed_random(args.embedder_seed)),
        EmbedderArg::PixelL1 => Box::new(PixelL1),
        EmbedderArg::Pretrained => {
            let path = args
                .embedder_weights
                .as_ref()
                .ok_or_else(|| usage("--embedder pretrained needs --embedder-weights"))?;
            Box::new(FeatureDistance::new(FeatureExtractor::from_weight_file(
                path,
            )?))
        }
    };
    let scored: Vec<(Row, (usize, usize))> = jobs
        .par_iter()
        .map(|job| score(job, &args, embedder.as_ref()))
        .collect::<Result<_>>()?;
    let (rows, dims): (Vec<Row>, Vec<(usize, usize)>) = scored.into_iter().unzip();

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(&args.out.join(CSV_NAME), &rows)?;
    let (tasks, average) = summarise(&rows);
    let summary = Summary {
        header: RunHeader::new("eval", &args, None)?.with_flow_reads(),
        flow_source: args.flow_source,
        embedder: args.embedder,
        resolution: rows
            .iter()
            .zip(&dims)
            .map(|(r, d)| (format!("{}/{}", r.task, r.video_id), *d))
            .collect(),
        tasks,
        average,
        videos: &rows,
    };
    let path = args.out.join(SUMMARY_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    for r in &rows {
        eprintln!(
            "{}/{}: warping error {:.6e}, perceptual distance {:.6e}",
            r.task, r.video_id, r.warping_error, r.perceptual_distance
        );
    }
    Ok(())
}
