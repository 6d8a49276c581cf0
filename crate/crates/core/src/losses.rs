//! Training losses: perceptual content, style statistics, short- and
//! long-term warping, Ping Pong and low rank, plus their weighted total.
//!
//! Every loss has a graph-level form used by the trainer and a frame-level
//! form returning plain numbers. Windows hold `k + 1` frames indexed
//! `0..=k` relative to their start.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureBlock, FeatureExtractor, STATS_EPS};
use crate::flow::{
    occlusion_mask, visibility_mask, warp, warp_var, FlowField, FlowProvider, PixelMask,
};
use crate::net::{GraphRollout, RolloutResult};
use crate::video::{Frame, FrameSequence, LUMA_WEIGHTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_p: f64,
    #[serde(rename = "lambda_SP", alias = "lambda_sp")]
    pub lambda_sp: f64,
    pub lambda_st: f64,
    pub lambda_lt: f64,
    pub lambda_rank: f64,
    #[serde(rename = "lambda_PP", alias = "lambda_pp")]
    pub lambda_pp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 10.0,
            lambda_sp: 10.0,
            lambda_st: 100.0,
            lambda_lt: 100.0,
            lambda_rank: 1e-5,
            lambda_pp: 100.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_p: 0.0,
            lambda_sp: 0.0,
            lambda_st: 0.0,
            lambda_lt: 0.0,
            lambda_rank: 0.0,
            lambda_pp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_p,
            self.lambda_sp,
            self.lambda_st,
            self.lambda_lt,
            self.lambda_rank,
            self.lambda_pp,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Spec(format!(
                "loss weights must be finite and nonnegative: {all:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted value of every term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub content: f64,
    pub style_preserving: f64,
    pub style_temporal: f64,
    pub short_term: f64,
    pub long_term: f64,
    pub rank: f64,
    pub pingpong: f64,
}

impl TermValues {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("content", self.content),
            ("style_preserving", self.style_preserving),
            ("style_temporal", self.style_temporal),
            ("short_term", self.short_term),
            ("long_term", self.long_term),
            ("rank", self.rank),
            ("pingpong", self.pingpong),
        ]
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            content: f(self.content, other.content),
            style_preserving: f(self.style_preserving, other.style_preserving),
            style_temporal: f(self.style_temporal, other.style_temporal),
            short_term: f(self.short_term, other.short_term),
            long_term: f(self.long_term, other.long_term),
            rank: f(self.rank, other.rank),
            pingpong: f(self.pingpong, other.pingpong),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip(self, |a, _| a * s)
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub terms: TermValues,
    pub total: f64,
}

impl LossReport {
    pub fn new(terms: TermValues, weights: &LossWeights) -> Self {
        Self {
            step: None,
            total: total(&terms, weights),
            terms,
        }
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// `λ_p·L_p + λ_SP·(L_sp + L_sp_temp) + λ_st·L_st + λ_lt·L_lt + λ_rank·L_rank + λ_PP·L_PP`.
pub fn total(t: &TermValues, w: &LossWeights) -> f64 {
    w.lambda_p * t.content
        + w.lambda_sp * (t.style_preserving + t.style_temporal)
        + w.lambda_st * t.short_term
        + w.lambda_lt * t.long_term
        + w.lambda_rank * t.rank
        + w.lambda_pp * t.pingpong
}

fn require_pair(len: usize, what: &str) -> Result<()> {
    if len < 2 {
        return Err(Error::WindowTooShort(format!(
            "{what} needs at least 2 frames, got {len}"
        )));
    }
    Ok(())
}

fn extract_all<'g>(
    frames: &[Var<'g>],
    fx: &FeatureExtractor,
    blocks: &[FeatureBlock],
) -> Result<Vec<Vec<(FeatureBlock, Var<'g>)>>> {
    frames.iter().map(|f| fx.extract_var(*f, blocks)).collect()
}

fn feature_l1<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
    let n = a.value().len() as f64;
    a.sub(b).sum_abs().scale(1.0 / n)
}

fn stats_distance<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
    let dm = a.channel_mean().sub(b.channel_mean()).sqr().sum();
    let ds = a
        .channel_std(STATS_EPS)
        .sub(b.channel_std(STATS_EPS))
        .sqr()
        .sum();
    dm.add(ds)
}

fn sum_vars<'g>(g: &'g Graph, terms: Vec<Var<'g>>) -> Var<'g> {
    terms
        .into_iter()
        .reduce(|a, b| a.add(b))
        .unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

/// Perceptual terms sharing one feature pass: `(L_p, L_sp, L_sp_temp)`.
pub fn perceptual_terms_var<'g>(
    o: &[Var<'g>],
    p: &[Var<'g>],
    fx: &FeatureExtractor,
) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
    if o.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs vs {} processed frames",
            o.len(),
            p.len()
        )));
    }
    require_pair(o.len(), "perceptual losses")?;
    let g = o[0].graph();
    let fo = extract_all(o, fx, &FeatureBlock::ALL)?;
    let fp = extract_all(p, fx, &FeatureBlock::ALL)?;
    let mut content = Vec::new();
    let mut style = Vec::new();
    let mut temporal = Vec::new();
    for t in 1..o.len() {
        for (l, ((block, a), (_, b))) in fo[t].iter().zip(&fp[t]).enumerate() {
            content.push(feature_l1(*a, *b));
            if FeatureBlock::STYLE.contains(block) {
                style.push(stats_distance(*a, *b));
                temporal.push(stats_distance(*a, fo[t - 1][l].1));
            }
        }
    }
    Ok((
        sum_vars(g, content),
        sum_vars(g, style),
        sum_vars(g, temporal),
    ))
}

/// `Σ_{t≥1} Σ_l mean |φ_l(O_t) − φ_l(P_t)|` over the four blocks.
pub fn content_perceptual_var<'g>(
    o: &[Var<'g>],
    p: &[Var<'g>],
    fx: &FeatureExtractor,
) -> Result<Var<'g>> {
    if o.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs vs {} processed frames",
            o.len(),
            p.len()
        )));
    }
    require_pair(o.len(), "content loss")?;
    let g = o[0].graph();
    let mut terms = Vec::new();
    for t in 1..o.len() {
        let a = fx.extract_var(o[t], &FeatureBlock::ALL)?;
        let b = fx.extract_var(p[t], &FeatureBlock::ALL)?;
        for ((_, x), (_, y)) in a.into_iter().zip(b) {
            terms.push(feature_l1(x, y));
        }
    }
    Ok(sum_vars(g, terms))
}

/// Squared distances between channel means and stds of `relu1_2`, `relu2_2`.
pub fn style_preserving_var<'g>(
    o: &[Var<'g>],
    p: &[Var<'g>],
    fx: &FeatureExtractor,
) -> Result<Var<'g>> {
    if o.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs vs {} processed frames",
            o.len(),
            p.len()
        )));
    }
    require_pair(o.len(), "style-preserving loss")?;
    let g = o[0].graph();
    let mut terms = Vec::new();
    for t in 1..o.len() {
        let a = fx.extract_var(o[t], &FeatureBlock::STYLE)?;
        let b = fx.extract_var(p[t], &FeatureBlock::STYLE)?;
        for ((_, x), (_, y)) in a.into_iter().zip(b) {
            terms.push(stats_distance(x, y));
        }
    }
    Ok(sum_vars(g, terms))
}

/// Statistics distance between consecutive outputs.
pub fn style_temporal_var<'g>(o: &[Var<'g>], fx: &FeatureExtractor) -> Result<Var<'g>> {
    require_pair(o.len(), "temporal style loss")?;
    let g = o[0].graph();
    let feats = extract_all(o, fx, &FeatureBlock::STYLE)?;
    let mut terms = Vec::new();
    for t in 1..o.len() {
        for ((_, x), (_, y)) in feats[t].iter().zip(&feats[t - 1]) {
            terms.push(stats_distance(*x, *y));
        }
    }
    Ok(sum_vars(g, terms))
}

/// A flow with the training visibility mask derived from the raw frames.
#[derive(Clone, Debug)]
pub struct MaskedFlow {
    pub flow: FlowField,
    pub mask: PixelMask,
}

impl MaskedFlow {
    fn mask_tensor(&self) -> Arc<Tensor> {
        Arc::new(self.mask.to_frame_tensor())
    }
}

/// Rows of `χ`: each frame's luminance warped to the reference time and
/// masked by the binary non-occlusion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RankMatrix {
    pub chi: Tensor,
    pub reference_time: usize,
}

/// Flows to the reference time with their non-occlusion masks.
#[derive(Clone, Debug)]
pub struct RankSupport {
    pub reference_time: usize,
    /// `F_{ref, j}`, on the reference grid pointing into frame `j`.
    pub flows_to_ref: Vec<FlowField>,
    pub masks: Vec<PixelMask>,
}

/// Flows and masks needed by the temporal losses on one window.
#[derive(Clone, Debug)]
pub struct WindowSupervision {
    /// `(F_{j,j−1}, M_{j,j−1})` at index `j − 1`, for `j = 1..=k`.
    pub prev: Vec<MaskedFlow>,
    /// `(F_{j,j+1}, M_{j,j+1})` at index `j`, for `j = 0..k`.
    pub next: Vec<MaskedFlow>,
    /// `(F_{j,0}, M_{j,0})` at index `j − 1`, for `j = 1..=k`.
    pub to_first: Vec<MaskedFlow>,
    pub rank: RankSupport,
    /// `χ_I` built from the raw frames.
    pub chi_raw: RankMatrix,
}

impl WindowSupervision {
    /// Looks up every flow of the window `start..start + len` of `raw`.
    pub fn build(
        raw: &FrameSequence,
        start: usize,
        len: usize,
        flows: &dyn FlowProvider,
        alpha: f64,
    ) -> Result<Self> {
        require_pair(len, "window")?;
        if start + len > raw.len() {
            return Err(Error::Index(format!(
                "window {}..{} exceeds {} frames",
                start + 1,
                start + len,
                raw.len()
            )));
        }
        let k = len - 1;
        let masked = |t: usize, s: usize| -> Result<MaskedFlow> {
            let flow = flows.flow(raw, start + t, start + s)?;
            let mask = visibility_mask(&raw[start + t], &raw[start + s], &flow, alpha)?;
            Ok(MaskedFlow { flow, mask })
        };
        let prev = (1..=k)
            .map(|j| masked(j, j - 1))
            .collect::<Result<Vec<_>>>()?;
        let next = (0..k)
            .map(|j| masked(j, j + 1))
            .collect::<Result<Vec<_>>>()?;
        let to_first = (1..=k).map(|j| masked(j, 0)).collect::<Result<Vec<_>>>()?;
        let reference = k / 2;
        let (h, w) = raw.dims();
        let mut flows_to_ref = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for j in 0..len {
            if j == reference {
                flows_to_ref.push(FlowField::zeros(h, w, start + j, start + j));
                masks.push(PixelMask::filled(h, w, 1.0));
            } else {
                let fwd = flows.flow(raw, start + reference, start + j)?;
                let bwd = flows.flow(raw, start + j, start + reference)?;
                masks.push(occlusion_mask(&fwd, &bwd)?);
                flows_to_ref.push(fwd);
            }
        }
        let rank = RankSupport {
            reference_time: reference,
            flows_to_ref,
            masks,
        };
        let window = raw.window(start, len)?;
        let chi_raw = build_rank_matrix(&window, &rank)?;
        Ok(Self {
            prev,
            next,
            to_first,
            rank,
            chi_raw,
        })
    }

    /// `k` of the window this supervision was built for.
    pub fn k(&self) -> usize {
        self.prev.len()
    }
}

fn masked_l1<'g>(a: Var<'g>, b: Var<'g>, mask: Arc<Tensor>) -> Var<'g> {
    a.sub(b).abs().mul_const(mask).sum()
}

/// Forward and backward masked warping errors between successive outputs.
pub fn short_term_var<'g>(
    forward: &[Var<'g>],
    backward: &[Var<'g>],
    sup: &WindowSupervision,
) -> Result<Var<'g>> {
    let k = sup.k();
    if forward.len() != k + 1 || backward.len() != k {
        return Err(Error::Shape(format!(
            "short-term loss expects {} forward and {k} backward outputs, got {} and {}",
            k + 1,
            forward.len(),
            backward.len()
        )));
    }
    let g = forward[0].graph();
    let mut terms = Vec::new();
    for j in 1..=k {
        let m = &sup.prev[j - 1];
        terms.push(masked_l1(
            forward[j],
            warp_var(forward[j - 1], &m.flow)?,
            m.mask_tensor(),
        ));
    }
    for j in 0..k {
        let m = &sup.next[j];
        let neighbour = if j + 1 == k {
            forward[k]
        } else {
            backward[j + 1]
        };
        terms.push(masked_l1(
            backward[j],
            warp_var(neighbour, &m.flow)?,
            m.mask_tensor(),
        ));
    }
    Ok(sum_vars(g, terms))
}

/// Masked warping error between every forward output and the first one.
pub fn long_term_var<'g>(forward: &[Var<'g>], sup: &WindowSupervision) -> Result<Var<'g>> {
    let k = sup.k();
    if forward.len() != k + 1 {
        return Err(Error::Shape(format!(
            "long-term loss expects {} outputs, got {}",
            k + 1,
            forward.len()
        )));
    }
    let g = forward[0].graph();
    let mut terms = Vec::new();
    for j in 1..=k {
        let m = &sup.to_first[j - 1];
        terms.push(masked_l1(
            forward[j],
            warp_var(forward[0], &m.flow)?,
            m.mask_tensor(),
        ));
    }
    Ok(sum_vars(g, terms))
}

/// `Σ_{j=1}^{k−1} ‖O_j − O'_j‖₂`; `backward[j] = O'_j`.
pub fn pingpong_var<'g>(forward: &[Var<'g>], backward: &[Var<'g>]) -> Result<Var<'g>> {
    let k = backward.len();
    if forward.len() != k + 1 {
        return Err(Error::Shape(format!(
            "ping pong loss expects {} forward outputs, got {}",
            k + 1,
            forward.len()
        )));
    }
    let g = forward[0].graph();
    let terms = (1..k.max(1))
        .map(|j| forward[j].sub(backward[j]).norm_l2())
        .collect();
    Ok(sum_vars(g, terms))
}

/// `χ` rows for graph values.
pub fn rank_matrix_var<'g>(frames: &[Var<'g>], support: &RankSupport) -> Result<Var<'g>> {
    if frames.len() != support.flows_to_ref.len() || frames.len() != support.masks.len() {
        return Err(Error::Shape(format!(
            "{} frames for {} rank flows",
            frames.len(),
            support.flows_to_ref.len()
        )));
    }
    let mut rows = Vec::with_capacity(frames.len());
    for ((f, flow), mask) in frames.iter().zip(&support.flows_to_ref).zip(&support.masks) {
        let shape = f.shape();
        let (h, w) = (shape[2], shape[3]);
        if mask.dims() != (h, w) {
            return Err(Error::DimensionMismatch(
                "rank mask differs from frame size".into(),
            ));
        }
        let luma = f.channel_weighted_sum(&LUMA_WEIGHTS);
        let warped = warp_var(luma, flow)?;
        let m = Arc::new(Tensor::new(&[1, 1, h, w], mask.values().to_vec()));
        rows.push(warped.mul_const(m).reshape(&[1, h * w]));
    }
    Ok(Var::concat(&rows, 0))
}

pub fn build_rank_matrix(frames: &FrameSequence, support: &RankSupport) -> Result<RankMatrix> {
    if frames.len() != support.flows_to_ref.len() || frames.len() != support.masks.len() {
        return Err(Error::Shape(format!(
            "{} frames for {} rank flows",
            frames.len(),
            support.flows_to_ref.len()
        )));
    }
    let (h, w) = frames.dims();
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for ((f, flow), mask) in frames.iter().zip(&support.flows_to_ref).zip(&support.masks) {
        if mask.dims() != (h, w) {
            return Err(Error::DimensionMismatch(
                "rank mask differs from frame size".into(),
            ));
        }
        let warped = warp(f, flow)?.luminance();
        data.extend(warped.iter().zip(mask.values()).map(|(v, m)| v * m));
    }
    Ok(RankMatrix {
        chi: Tensor::new(&[frames.len(), h * w], data),
        reference_time: support.reference_time,
    })
}

/// `(‖χ_I‖_* − ‖χ_O‖_*)²`, differentiable in `χ_O`.
pub fn low_rank_var<'g>(chi_i: &RankMatrix, chi_o: Var<'g>) -> Result<Var<'g>> {
    if chi_i.chi.shape() != chi_o.shape().as_slice() {
        return Err(Error::Shape(format!(
            "rank matrices differ: {:?} vs {:?}",
            chi_i.chi.shape(),
            chi_o.shape()
        )));
    }
    let g = chi_o.graph();
    let target = g.constant(chi_i.chi.clone()).nuclear_norm();
    Ok(target.sub(chi_o.nuclear_norm()).sqr())
}

/// Graph values of all terms and the weighted total for one window.
pub struct LossVars<'g> {
    pub content: Var<'g>,
    pub style_preserving: Var<'g>,
    pub style_temporal: Var<'g>,
    pub short_term: Var<'g>,
    pub long_term: Var<'g>,
    pub rank: Var<'g>,
    pub pingpong: Var<'g>,
    pub total: Var<'g>,
}

impl LossVars<'_> {
    pub fn values(&self) -> TermValues {
        TermValues {
            content: self.content.item(),
            style_preserving: self.style_preserving.item(),
            style_temporal: self.style_temporal.item(),
            short_term: self.short_term.item(),
            long_term: self.long_term.item(),
            rank: self.rank.item(),
            pingpong: self.pingpong.item(),
        }
    }
}

/// All losses on a Ping Pong rollout. Perceptual terms use the forward
/// outputs.
pub fn window_loss_var<'g>(
    rollout: &GraphRollout<'g>,
    processed: &[Var<'g>],
    sup: &WindowSupervision,
    fx: &FeatureExtractor,
    weights: &LossWeights,
) -> Result<LossVars<'g>> {
    let (content, style_preserving, style_temporal) =
        perceptual_terms_var(&rollout.forward, processed, fx)?;
    let short_term = short_term_var(&rollout.forward, &rollout.backward, sup)?;
    let long_term = long_term_var(&rollout.forward, sup)?;
    let pingpong = pingpong_var(&rollout.forward, &rollout.backward)?;
    let chi_o = rank_matrix_var(&rollout.forward, &sup.rank)?;
    let rank = low_rank_var(&sup.chi_raw, chi_o)?;
    let total = content
        .scale(weights.lambda_p)
        .add(
            style_preserving
                .add(style_temporal)
                .scale(weights.lambda_sp),
        )
        .add(short_term.scale(weights.lambda_st))
        .add(long_term.scale(weights.lambda_lt))
        .add(rank.scale(weights.lambda_rank))
        .add(pingpong.scale(weights.lambda_pp));
    Ok(LossVars {
        content,
        style_preserving,
        style_temporal,
        short_term,
        long_term,
        rank,
        pingpong,
        total,
    })
}

fn constants<'g>(g: &'g Graph, frames: impl IntoIterator<Item = &'g Frame>) -> Vec<Var<'g>> {
    frames
        .into_iter()
        .map(|f| g.constant(f.to_tensor()))
        .collect()
}

fn check_equal_len(o: &FrameSequence, p: &FrameSequence) -> Result<()> {
    if o.len() != p.len() || o.dims() != p.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{} output frames of {:?} vs {} processed frames of {:?}",
            o.len(),
            o.dims(),
            p.len(),
            p.dims()
        )));
    }
    Ok(())
}

pub fn content_perceptual(
    o: &FrameSequence,
    p: &FrameSequence,
    fx: &FeatureExtractor,
) -> Result<f64> {
    check_equal_len(o, p)?;
    let g = Graph::new();
    Ok(content_perceptual_var(&constants(&g, o), &constants(&g, p), fx)?.item())
}

pub fn style_preserving(
    o: &FrameSequence,
    p: &FrameSequence,
    fx: &FeatureExtractor,
) -> Result<f64> {
    check_equal_len(o, p)?;
    let g = Graph::new();
    Ok(style_preserving_var(&constants(&g, o), &constants(&g, p), fx)?.item())
}

pub fn style_temporal(o: &FrameSequence, fx: &FeatureExtractor) -> Result<f64> {
    let g = Graph::new();
    Ok(style_temporal_var(&constants(&g, o), fx)?.item())
}

fn backward_by_time(result: &RolloutResult) -> Vec<&Frame> {
    (0..result.k()).map(|t| result.backward_at(t)).collect()
}

pub fn short_term(result: &RolloutResult, sup: &WindowSupervision) -> Result<f64> {
    let g = Graph::new();
    let fwd = constants(&g, &result.forward_outputs);
    let bwd = constants(&g, backward_by_time(result));
    Ok(short_term_var(&fwd, &bwd, sup)?.item())
}

pub fn long_term(o: &FrameSequence, sup: &WindowSupervision) -> Result<f64> {
    let g = Graph::new();
    Ok(long_term_var(&constants(&g, o), sup)?.item())
}

pub fn pingpong(result: &RolloutResult) -> Result<f64> {
    let g = Graph::new();
    let fwd = constants(&g, &result.forward_outputs);
    let bwd = constants(&g, backward_by_time(result));
    Ok(pingpong_var(&fwd, &bwd)?.item())
}

pub fn low_rank(chi_i: &RankMatrix, chi_o: &RankMatrix) -> Result<f64> {
    let g = Graph::new();
    Ok(low_rank_var(chi_i, g.constant(chi_o.chi.clone()))?.item())
}

/// Every term and the weighted total for a finished Ping Pong rollout.
pub fn evaluate_window(
    result: &RolloutResult,
    processed: &FrameSequence,
    sup: &WindowSupervision,
    fx: &FeatureExtractor,
    weights: &LossWeights,
) -> Result<LossReport> {
    check_equal_len(&result.forward_outputs, processed)?;
    let g = Graph::new();
    let rollout = GraphRollout {
        forward: constants(&g, &result.forward_outputs),
        backward: constants(&g, backward_by_time(result)),
    };
    let vars = window_loss_var(&rollout, &constants(&g, processed), sup, fx, weights)?;
    Ok(LossReport::new(vars.values(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ZeroFlow;

    fn seq(frames: Vec<Frame>) -> FrameSequence {
        FrameSequence::new(frames).unwrap()
    }

    #[test]
    fn default_weights_on_unit_terms() {
        // six weighted groups at 1: the style group is L_sp + L_sp_temp
        let ones = TermValues {
            content: 1.0,
            style_preserving: 0.5,
            style_temporal: 0.5,
            short_term: 1.0,
            long_term: 1.0,
            rank: 1.0,
            pingpong: 1.0,
        };
        let r = LossReport::new(ones, &LossWeights::default());
        assert!((r.total - 320.00001).abs() < 1e-9, "{}", r.total);
        assert_eq!(total(&ones, &LossWeights::zero()), 0.0);
    }

    #[test]
    fn weights_json_uses_symbol_names() {
        let json = serde_json::to_value(LossWeights::default()).unwrap();
        assert_eq!(json["lambda_SP"], 10.0);
        assert_eq!(json["lambda_PP"], 100.0);
        let back: LossWeights = serde_json::from_value(json).unwrap();
        assert_eq!(back, LossWeights::default());
        assert!(LossWeights {
            lambda_st: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn long_term_by_hand() {
        let frames = seq(vec![
            Frame::filled(2, 2, 0.5),
            Frame::filled(2, 2, 0.6),
            Frame::filled(2, 2, 0.7),
        ]);
        let raw = seq(vec![Frame::filled(2, 2, 0.3); 3]);
        let sup = WindowSupervision::build(&raw, 0, 3, &ZeroFlow, 50.0).unwrap();
        let v = long_term(&frames, &sup).unwrap();
        assert!((v - (0.1 + 0.2) * 12.0).abs() < 1e-12);
    }

    #[test]
    fn rank_of_diagonal() {
        let chi_i = RankMatrix {
            chi: Tensor::new(&[2, 4], vec![3.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0]),
            reference_time: 0,
        };
        let chi_o = RankMatrix {
            chi: Tensor::zeros(&[2, 4]),
            reference_time: 0,
        };
        assert!((low_rank(&chi_i, &chi_o).unwrap() - 49.0).abs() < 1e-10);
        assert_eq!(low_rank(&chi_i, &chi_i).unwrap(), 0.0);
        let bad = RankMatrix {
            chi: Tensor::zeros(&[3, 4]),
            reference_time: 0,
        };
        assert!(matches!(low_rank(&chi_i, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn short_windows_are_rejected() {
        let fx = FeatureExtractor::fixed_random(7);
        let one = seq(vec![Frame::filled(4, 4, 0.2)]);
        assert!(matches!(
            style_temporal(&one, &fx),
            Err(Error::WindowTooShort(_))
        ));
        assert!(matches!(
            content_perceptual(&one, &one, &fx),
            Err(Error::WindowTooShort(_))
        ));
    }
}
