//! Evaluation metrics: mean warping error and perceptual distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBlock, FeatureExtractor};
use crate::flow::{mean_nonoccluded_error, occlusion_mask, warp, FlowProvider};
use crate::video::{Frame, FrameSequence, VideoTriplet};

/// Guards the per-pixel feature normalisation against zero vectors.
const UNIT_NORM_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub warping_error: f64,
    pub perceptual_distance: f64,
    pub frames_counted: usize,
    pub skipped_pairs: usize,
}

/// Mean warping error with its bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpingError {
    pub value: f64,
    pub counted: usize,
    pub skipped: usize,
}

/// Which sequence optical flow is looked up on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    #[default]
    Raw,
    #[serde(rename = "self")]
    SelfFrames,
}

/// Mean over adjacent pairs of the masked squared error between `V_t` and
/// `warp(V_{t+1}, F_{t,t+1})`. Flows come from `reference`; pairs whose
/// non-occlusion mask is empty are skipped.
pub fn warping_error(
    video: &FrameSequence,
    flows: &dyn FlowProvider,
    reference: &FrameSequence,
) -> Result<WarpingError> {
    if video.len() < 2 {
        return Err(Error::WindowTooShort(format!(
            "warping error needs at least 2 frames, got {}",
            video.len()
        )));
    }
    if !video.same_shape(reference) {
        return Err(Error::DimensionMismatch(
            "video and flow reference differ in shape".into(),
        ));
    }
    let mut sum = 0.0;
    let mut counted = 0;
    let mut skipped = 0;
    for t in 0..video.len() - 1 {
        let fwd = flows.flow(reference, t, t + 1)?;
        let bwd = flows.flow(reference, t + 1, t)?;
        let mask = occlusion_mask(&fwd, &bwd)?;
        let warped = warp(&video[t + 1], &fwd)?;
        match mean_nonoccluded_error(&video[t], &warped, &mask) {
            Ok(e) => {
                sum += e;
                counted += 1;
            }
            Err(Error::EmptyMask) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(WarpingError {
        value: sum / counted as f64,
        counted,
        skipped,
    })
}

/// Distance between two frames, symmetric and zero on equal inputs.
pub trait PerceptualEmbedder: Send + Sync {
    fn distance(&self, a: &Frame, b: &Frame) -> Result<f64>;
}

/// Mean absolute pixel difference.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelL1;

impl PerceptualEmbedder for PixelL1 {
    fn distance(&self, a: &Frame, b: &Frame) -> Result<f64> {
        if a.dims() != b.dims() {
            return Err(Error::DimensionMismatch(
                "embedder inputs differ in size".into(),
            ));
        }
        let n = a.data().len() as f64;
        Ok(a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n)
    }
}

/// Feature-space distance: activations are normalised to unit length along
/// channels at each position, then squared differences are summed over
/// channels, averaged over positions and summed over blocks.
pub struct FeatureDistance {
    extractor: FeatureExtractor,
    blocks: Vec<FeatureBlock>,
}

impl FeatureDistance {
    pub fn new(extractor: FeatureExtractor) -> Self {
        Self::with_blocks(extractor, FeatureBlock::ALL.to_vec())
    }

    pub fn with_blocks(extractor: FeatureExtractor, blocks: Vec<FeatureBlock>) -> Self {
        Self { extractor, blocks }
    }

    /// Fixed random weights, the deterministic default.
    pub fn fixed_random(seed: u64) -> Self {
        Self::new(FeatureExtractor::fixed_random(seed))
    }
}

fn unit_normalised(data: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    for i in 0..plane {
        let norm = (0..c)
            .map(|ch| data[ch * plane + i].powi(2))
            .sum::<f64>()
            .sqrt()
            + UNIT_NORM_EPS;
        for ch in 0..c {
            out[ch * plane + i] /= norm;
        }
    }
    out
}

impl PerceptualEmbedder for FeatureDistance {
    fn distance(&self, a: &Frame, b: &Frame) -> Result<f64> {
        if a.dims() != b.dims() {
            return Err(Error::DimensionMismatch(
                "embedder inputs differ in size".into(),
            ));
        }
        let fa = self.extractor.extract(a, &self.blocks)?;
        let fb = self.extractor.extract(b, &self.blocks)?;
        let mut total = 0.0;
        for ((_, x), (_, y)) in fa.iter().zip(fb.iter()) {
            let (_, c, h, w) = x.dims4();
            let plane = h * w;
            let nx = unit_normalised(x.data(), c, plane);
            let ny = unit_normalised(y.data(), c, plane);
            let sq: f64 = nx.iter().zip(&ny).map(|(p, q)| (p - q).powi(2)).sum();
            total += sq / plane as f64;
        }
        Ok(total)
    }
}

/// `(1/(T−1)) Σ_{t=2..T} S(O_t, P_t)`.
pub fn perceptual_distance(
    p: &FrameSequence,
    o: &FrameSequence,
    embedder: &dyn PerceptualEmbedder,
) -> Result<f64> {
    if p.len() != o.len() || p.dims() != o.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{} processed frames of {:?} vs {} output frames of {:?}",
            p.len(),
            p.dims(),
            o.len(),
            o.dims()
        )));
    }
    if p.len() < 2 {
        return Err(Error::WindowTooShort(
            "perceptual distance needs at least 2 frames".into(),
        ));
    }
    let mut sum = 0.0;
    for t in 1..p.len() {
        sum += embedder.distance(&o[t], &p[t])?;
    }
    Ok(sum / (p.len() - 1) as f64)
}

/// Scores `output` against `raw`/`processed` without the first-frame
/// constraint of [`VideoTriplet`].
pub fn score_sequences(
    raw: &FrameSequence,
    processed: &FrameSequence,
    output: &FrameSequence,
    flows: &dyn FlowProvider,
    flow_source: FlowSource,
    embedder: &dyn PerceptualEmbedder,
) -> Result<VideoScore> {
    if !raw.same_shape(output) || !processed.same_shape(output) {
        return Err(Error::DimensionMismatch(
            "raw, processed and output must align".into(),
        ));
    }
    let reference = match flow_source {
        FlowSource::Raw => raw,
        FlowSource::SelfFrames => output,
    };
    let we = warping_error(output, flows, reference)?;
    Ok(VideoScore {
        warping_error: we.value,
        perceptual_distance: perceptual_distance(processed, output, embedder)?,
        frames_counted: we.counted,
        skipped_pairs: we.skipped,
    })
}

pub fn score_video(
    triplet: &VideoTriplet,
    flows: &dyn FlowProvider,
    embedder: &dyn PerceptualEmbedder,
) -> Result<VideoScore> {
    let output = triplet.output().ok_or(Error::MissingOutput)?;
    score_sequences(
        &triplet.raw,
        &triplet.processed,
        output,
        flows,
        FlowSource::Raw,
        embedder,
    )
}

/// Plain moving average of `processed` over `t − radius ..= t + radius`
/// (truncated at the ends), without motion compensation. The first frame
/// is kept unchanged.
pub fn temporal_average_baseline(
    processed: &FrameSequence,
    radius: usize,
) -> Result<FrameSequence> {
    let n = processed.len();
    let (h, w) = processed.dims();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t == 0 {
            out.push(processed[0].clone());
            continue;
        }
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(n - 1);
        let count = (hi - lo + 1) as f64;
        let mut data = vec![0.0; processed[t].data().len()];
        for f in &processed.frames()[lo..=hi] {
            for (d, v) in data.iter_mut().zip(f.data()) {
                *d += v / count;
            }
        }
        out.push(Frame::new(h, w, data)?);
    }
    FrameSequence::new(out)
}
