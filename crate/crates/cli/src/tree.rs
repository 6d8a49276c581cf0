//! On-disk video trees: `raw/`, `processed/`, optional `output/` and `flows/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use deflicker::flow::{FlowDirectory, FlowProvenance};
use deflicker::synth::{FLOW_DIR, MANIFEST_NAME, PROCESSED_DIR, RAW_DIR};
use deflicker::trainer::TrainingVideo;
use deflicker::video::{
    load_frame_folder, natural_cmp, resize_keep_aspect, FrameSequence, VideoTriplet,
};

use crate::usage;

pub const OUTPUT_DIR: &str = "output";
pub const DEFAULT_PATTERN: &str = "*.png";

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!(
            "{what} directory {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

/// Loads a frame folder, optionally resized to `height` rows.
pub fn load_frames(
    dir: &Path,
    pattern: &str,
    height: Option<usize>,
    what: &str,
) -> Result<FrameSequence> {
    require_dir(dir, what)?;
    let seq = load_frame_folder(dir, pattern).with_context(|| format!("loading {what} frames"))?;
    match height {
        Some(h) if h != seq.dims().0 => Ok(resize_keep_aspect(&seq, h)?),
        _ => Ok(seq),
    }
}

/// Flow files of a video tree. Trees exported by `synth` carry ground truth.
pub fn flow_directory(dir: &Path) -> Result<FlowDirectory> {
    require_dir(dir, "flow")?;
    let synthetic = dir
        .parent()
        .is_some_and(|p| p.join(MANIFEST_NAME).is_file());
    let provenance = if synthetic {
        FlowProvenance::GroundTruth
    } else {
        FlowProvenance::Estimated
    };
    Ok(FlowDirectory::new(dir, provenance))
}

fn is_video_root(dir: &Path) -> bool {
    dir.join(RAW_DIR).is_dir() && dir.join(PROCESSED_DIR).is_dir()
}

/// `dir` itself when it is a video tree, otherwise its video-tree children
/// in natural order.
pub fn video_roots(dir: &Path) -> Result<Vec<PathBuf>> {
    require_dir(dir, "data")?;
    if is_video_root(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut roots = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if is_video_root(&path) {
            roots.push(path);
        }
    }
    roots.sort_by(|a, b| natural_cmp(&a.to_string_lossy(), &b.to_string_lossy()));
    if roots.is_empty() {
        return Err(usage(format!(
            "no video trees (raw/ and processed/) under {}",
            dir.display()
        )));
    }
    Ok(roots)
}

pub fn training_video(root: &Path, pattern: &str) -> Result<TrainingVideo> {
    let raw = load_frames(&root.join(RAW_DIR), pattern, None, "raw")?;
    let processed = load_frames(&root.join(PROCESSED_DIR), pattern, None, "processed")?;
    let triplet = VideoTriplet::new(raw, processed)
        .with_context(|| format!("video tree {}", root.display()))?;
    Ok(TrainingVideo {
        triplet,
        flows: Arc::new(flow_directory(&root.join(FLOW_DIR))?),
    })
}

/// Last path component, used as a video id.
pub fn leaf_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
