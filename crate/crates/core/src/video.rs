//! Frames, frame sequences and the aligned raw / processed / output triplet.
//!
//! Pixel values are `f64` intensities, nominally in `[0, 1]`, stored
//! channel-major (`[3, height, width]`). Time indices are 0-based in code;
//! everything user-facing (file names, CLI output) counts frames from 1.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{SamplingPlan, Tensor};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// One RGB frame.
#[derive(Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Builds a frame from channel-major data. Values must be finite.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty frame {height}×{width}")));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "frame {height}×{width} needs {} values, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("frame contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; CHANNELS * height * width],
        }
    }

    /// Frame whose value at `(channel, y, x)` is `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f64) {
        self.data[(channel * self.height + y) * self.width + x] = value;
    }

    /// Channel plane `c` as a row-major slice.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, CHANNELS, self.height, self.width], self.data.clone())
    }

    /// Inverse of [`Frame::to_tensor`]; expects shape `[1, 3, h, w]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.ndim() != 4 || t.shape()[0] != 1 || t.shape()[1] != CHANNELS {
            return Err(Error::Shape(format!(
                "expected [1, 3, h, w], got {:?}",
                t.shape()
            )));
        }
        Frame::new(t.shape()[2], t.shape()[3], t.data().to_vec())
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Applies a resampling plan to every channel.
    pub fn resampled(&self, plan: &SamplingPlan) -> Frame {
        assert_eq!(
            (plan.in_height, plan.in_width),
            self.dims(),
            "plan/frame size mismatch"
        );
        let out_n = plan.out_height * plan.out_width;
        let mut data = vec![0.0; CHANNELS * out_n];
        for c in 0..CHANNELS {
            plan.apply_plane(self.plane(c), &mut data[c * out_n..(c + 1) * out_n]);
        }
        Frame {
            height: plan.out_height,
            width: plan.out_width,
            data,
        }
    }

    /// ITU-R BT.601 luma, one value per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..self.pixels())
            .map(|i| LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
            .collect()
    }
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Frame({}×{}, mean {:.4})",
            self.height,
            self.width,
            self.mean()
        )
    }
}

/// Ordered frames of identical size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Invalid(
                "frame sequence must hold at least one frame".into(),
            ));
        };
        let dims = first.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::DimensionMismatch(format!(
                "frame {} is {}×{}, frame 1 is {}×{}",
                i + 1,
                f.height(),
                f.width(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            frames,
            frame_rate: None,
        })
    }

    pub fn with_frame_rate(mut self, fps: Option<f64>) -> Self {
        self.frame_rate = fps;
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn get(&self, t: usize) -> Option<&Frame> {
        self.frames.get(t)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<FrameSequence> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Index(format!(
                "window {}..{} (1-based) outside a {}-frame sequence",
                start + 1,
                start + len,
                self.len()
            )));
        }
        Ok(FrameSequence {
            frames: self.frames[start..start + len].to_vec(),
            frame_rate: self.frame_rate,
        })
    }

    pub fn same_shape(&self, other: &FrameSequence) -> bool {
        self.len() == other.len() && self.dims() == other.dims()
    }
}

impl std::ops::Index<usize> for FrameSequence {
    type Output = Frame;
    fn index(&self, t: usize) -> &Frame {
        &self.frames[t]
    }
}

impl<'a> IntoIterator for &'a FrameSequence {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;
    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

/// Raw frames `I`, per-frame processed frames `P` and, once computed, the
/// network outputs `O` (and Ping Pong backward outputs `O'`).
#[derive(Clone, Debug)]
pub struct VideoTriplet {
    pub raw: FrameSequence,
    pub processed: FrameSequence,
    output: Option<FrameSequence>,
    output_backward: Option<FrameSequence>,
}

impl VideoTriplet {
    pub fn new(raw: FrameSequence, processed: FrameSequence) -> Result<Self> {
        if !raw.same_shape(&processed) {
            return Err(Error::DimensionMismatch(format!(
                "raw is {} frames of {:?}, processed is {} frames of {:?}",
                raw.len(),
                raw.dims(),
                processed.len(),
                processed.dims()
            )));
        }
        Ok(Self {
            raw,
            processed,
            output: None,
            output_backward: None,
        })
    }

    /// Attaches outputs; they must match the processed frames in shape and
    /// start with an exact copy of the first processed frame.
    pub fn with_output(mut self, output: FrameSequence) -> Result<Self> {
        if !output.same_shape(&self.processed) {
            return Err(Error::DimensionMismatch(format!(
                "output is {} frames of {:?}, processed is {} frames of {:?}",
                output.len(),
                output.dims(),
                self.processed.len(),
                self.processed.dims()
            )));
        }
        if output[0] != self.processed[0] {
            return Err(Error::Invalid(
                "first output frame must equal the first processed frame".into(),
            ));
        }
        self.output = Some(output);
        Ok(self)
    }

    pub fn with_output_backward(mut self, backward: FrameSequence) -> Result<Self> {
        if backward.len() >= self.processed.len() || backward.dims() != self.processed.dims() {
            return Err(Error::DimensionMismatch(
                "backward outputs must be shorter than the window and share its frame size".into(),
            ));
        }
        self.output_backward = Some(backward);
        Ok(self)
    }

    pub fn output(&self) -> Option<&FrameSequence> {
        self.output.as_ref()
    }

    pub fn output_backward(&self) -> Option<&FrameSequence> {
        self.output_backward.as_ref()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raw.dims()
    }

    /// Frames `[start, start + len)` of raw and processed.
    pub fn window(&self, start: usize, len: usize) -> Result<VideoTriplet> {
        VideoTriplet::new(
            self.raw.window(start, len)?,
            self.processed.window(start, len)?,
        )
    }
}

/// Compares file names treating digit runs as numbers, so `frame-10`
/// sorts after `frame-9`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ai = a.chars().peekable();
    let mut bi = b.chars().peekable();
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(ca), Some(cb)) if ca.is_ascii_digit() && cb.is_ascii_digit() => {
                let na: String =
                    std::iter::from_fn(|| ai.next_if(|c| c.is_ascii_digit())).collect();
                let nb: String =
                    std::iter::from_fn(|| bi.next_if(|c| c.is_ascii_digit())).collect();
                let ta = na.trim_start_matches('0');
                let tb = nb.trim_start_matches('0');
                let ord = ta
                    .len()
                    .cmp(&tb.len())
                    .then_with(|| ta.cmp(tb))
                    .then_with(|| na.len().cmp(&nb.len()));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            (Some(ca), Some(cb)) => {
                if ca != cb {
                    return ca.cmp(&cb);
                }
                ai.next();
                bi.next();
            }
        }
    }
}

/// Optional `sequence.json` sidecar stored next to frame images.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SequenceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

pub const SIDECAR_NAME: &str = "sequence.json";
pub const DEFAULT_FRAME_PATTERN: &str = "*.png";

/// Frame files in `dir` matching `pattern`, in natural order.
pub fn list_frame_files(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let matcher = glob::Pattern::new(pattern)
        .map_err(|e| Error::Invalid(format!("bad pattern {pattern:?}: {e}")))?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if !entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if matcher.matches(&name) {
            names.push(name);
        }
    }
    names.sort_by(|a, b| natural_cmp(a, b));
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.into_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; CHANNELS * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..CHANNELS {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px.0[c]).clamp(0.0, 1.0);
        }
    }
    Frame::new(h, w, data)
}

/// Loads every frame of `dir` matching `pattern` (natural filename order).
pub fn load_frame_folder(dir: &Path, pattern: &str) -> Result<FrameSequence> {
    let files = list_frame_files(dir, pattern)?;
    if files.is_empty() {
        return Err(Error::NoFrames {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let frame = load_frame(path)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.dims() != frame.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}×{}, {} is {}×{}",
                    path.display(),
                    frame.height(),
                    frame.width(),
                    files[0].display(),
                    first.height(),
                    first.width()
                )));
            }
        }
        frames.push(frame);
    }
    let meta = read_sidecar(dir)?;
    Ok(FrameSequence::new(frames)?.with_frame_rate(meta.and_then(|m| m.frame_rate)))
}

pub fn read_sidecar(dir: &Path) -> Result<Option<SequenceMeta>> {
    let path = dir.join(SIDECAR_NAME);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::format(&path, e.to_string()))
}

/// Writes a frame as 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = frame.dims();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..CHANNELS {
            let v = frame.get(c, y as usize, x as usize).clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// File name of frame `t` (0-based) as written by [`save_frame_folder`].
pub fn frame_file_name(t: usize) -> String {
    format!("frame-{:04}.png", t + 1)
}

/// Writes `frame-0001.png, frame-0002.png, …` into `dir` (created if needed).
pub fn save_frame_folder(
    seq: &FrameSequence,
    dir: &Path,
    meta: Option<&SequenceMeta>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in seq.iter().enumerate() {
        save_frame(frame, &dir.join(frame_file_name(t)))?;
    }
    let meta = match meta {
        Some(m) => Some(m.clone()),
        None => seq.frame_rate.map(|fps| SequenceMeta {
            frame_rate: Some(fps),
            provenance: None,
        }),
    };
    if let Some(meta) = meta {
        let path = dir.join(SIDECAR_NAME);
        let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Bilinear plan mapping an `in_h×in_w` plane to `out_h×out_w` with
/// half-pixel-centred sample positions.
pub fn resize_plan(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SamplingPlan {
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    let mut taps = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..out_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            taps.push(SamplingPlan::bilinear_taps(src_x, src_y, in_w, in_h));
        }
    }
    SamplingPlan::new(in_h, in_w, out_h, out_w, taps)
}

/// Rescales every frame to `target_height` rows, keeping the aspect ratio
/// (`width = round(width · target / height)`), with bilinear resampling.
pub fn resize_keep_aspect(seq: &FrameSequence, target_height: usize) -> Result<FrameSequence> {
    if target_height == 0 {
        return Err(Error::Invalid("target height must be at least 1".into()));
    }
    let (h, w) = seq.dims();
    let out_w = ((w as f64 * target_height as f64 / h as f64).round() as usize).max(1);
    if (target_height, out_w) == (h, w) {
        return Ok(seq.clone());
    }
    let plan = Arc::new(resize_plan(h, w, target_height, out_w));
    let frames = seq.iter().map(|f| f.resampled(&plan)).collect();
    Ok(FrameSequence::new(frames)?.with_frame_rate(seq.frame_rate))
}
