//! Ping Pong training: window sampling, loss evaluation, Adam updates,
//! checkpoints and the JSON-lines metrics log.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, WeightSource};
use crate::flow::{FlowProvider, DEFAULT_ALPHA};
use crate::losses::{window_loss_var, LossReport, LossWeights, TermValues, WindowSupervision};
use crate::net::{ConsistencyNet, GraphWindow, NetConfig, ParamSet, CONFIG_KEY};
use crate::tensor_file;
use crate::video::VideoTriplet;

fn default_feature_source() -> WeightSource {
    WeightSource::FixedRandom { seed: 7 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// `k + 1`, frames per sampled window before the Ping Pong turn.
    pub window_frames: usize,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub net: NetConfig,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
    /// Visibility mask sharpness.
    pub alpha: f64,
    #[serde(default = "default_feature_source")]
    pub features: WeightSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batches_per_epoch: 1000,
            batch_size: 4,
            window_frames: 5,
            learning_rate: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            net: NetConfig::default(),
            checkpoint_every: 1000,
            clip_grad_norm: Some(10.0),
            alpha: DEFAULT_ALPHA,
            features: default_feature_source(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_frames < 2 {
            return Err(Error::Spec(format!(
                "window_frames must be at least 2, got {}",
                self.window_frames
            )));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Spec(
                "batch_size and batches_per_epoch must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.betas.0)
            || !(0.0..1.0).contains(&self.betas.1)
        {
            return Err(Error::Spec("invalid optimizer settings".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Spec(format!(
                    "clip_grad_norm must be positive, got {c}"
                )));
            }
        }
        self.weights.validate()?;
        self.net.validate()
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.batches_per_epoch) as u64
    }
}

/// Indices of the palindromic window `start, …, start + k, …, start`.
pub fn build_pingpong_window(len: usize, start: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::WindowTooShort(
            "ping pong window needs k >= 1".into(),
        ));
    }
    if start + k >= len {
        return Err(Error::Index(format!(
            "window starting at frame {} with k = {k} exceeds {len} frames",
            start + 1
        )));
    }
    Ok((start..=start + k)
        .chain((start..start + k).rev())
        .collect())
}

/// A training video with the flows its windows need.
#[derive(Clone)]
pub struct TrainingVideo {
    pub triplet: VideoTriplet,
    pub flows: Arc<dyn FlowProvider>,
}

/// One sampled window with its supervision.
#[derive(Clone, Debug)]
pub struct WindowItem {
    pub video: usize,
    pub start: usize,
    pub triplet: VideoTriplet,
    pub supervision: WindowSupervision,
}

impl WindowItem {
    pub fn new(
        dataset: &[TrainingVideo],
        video: usize,
        start: usize,
        frames: usize,
        alpha: f64,
    ) -> Result<Self> {
        let v = dataset
            .get(video)
            .ok_or_else(|| Error::Index(format!("video {video} of {}", dataset.len())))?;
        let triplet = v.triplet.window(start, frames)?;
        let supervision =
            WindowSupervision::build(&v.triplet.raw, start, frames, v.flows.as_ref(), alpha)?;
        Ok(Self {
            video,
            start,
            triplet,
            supervision,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Everything needed to continue training bit-exactly.
pub struct TrainState {
    pub step: u64,
    pub net: ConsistencyNet,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = ConsistencyNet::new(config.net, config.seed)?;
        let optimizer = Adam::new(
            net.params(),
            config.learning_rate,
            config.betas,
            config.adam_eps,
        );
        Ok(Self {
            step: 0,
            net,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        })
    }

    /// Writes parameters, optimizer moments, step and RNG position. The file
    /// is written next to `path` first and renamed into place.
    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<()> {
        let mut map: BTreeMap<String, Tensor> = self.net.params().to_map();
        for (i, name) in self.net.params().names().iter().enumerate() {
            map.insert(format!("adam.m.{name}"), self.optimizer.m[i].clone());
            map.insert(format!("adam.v.{name}"), self.optimizer.v[i].clone());
        }
        let mut meta = self.net.metadata();
        meta.insert("step".into(), self.step.to_string());
        meta.insert("adam_t".into(), self.optimizer.t.to_string());
        meta.insert("rng_seed".into(), hex(&self.rng.get_seed()));
        meta.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        meta.insert(
            "train_config".into(),
            serde_json::to_string(config).expect("config serialises"),
        );
        let tmp = path.with_extension("partial");
        tensor_file::save(&tmp, &map, meta)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Restores a checkpoint written by [`Self::save`], returning the stored
    /// training configuration alongside.
    pub fn load(path: &Path) -> Result<(Self, TrainConfig)> {
        let archive = tensor_file::load(path)?;
        let bad = |m: String| Error::format(path, m);
        let config: TrainConfig = serde_json::from_str(archive.meta(path, "train_config")?)
            .map_err(|e| bad(format!("train config: {e}")))?;
        let net_config: NetConfig = serde_json::from_str(archive.meta(path, CONFIG_KEY)?)
            .map_err(|e| bad(format!("net config: {e}")))?;
        let layout = ConsistencyNet::new(net_config, 0)?;
        let mut params = ParamSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for name in layout.params().names() {
            params.insert(name.clone(), archive.get(path, name)?.clone());
            m.push(archive.get(path, &format!("adam.m.{name}"))?.clone());
            v.push(archive.get(path, &format!("adam.v.{name}"))?.clone());
        }
        let net = ConsistencyNet::from_params(net_config, params)?;
        let parse = |key: &str| -> Result<u128> {
            archive
                .meta(path, key)?
                .parse()
                .map_err(|_| bad(format!("bad {key}")))
        };
        let seed =
            unhex(archive.meta(path, "rng_seed")?).ok_or_else(|| bad("bad rng_seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(parse("rng_word_pos")?);
        let optimizer = Adam {
            lr: config.learning_rate,
            beta1: config.betas.0,
            beta2: config.betas.1,
            eps: config.adam_eps,
            t: parse("adam_t")? as u64,
            m,
            v,
        };
        Ok((
            Self {
                step: parse("step")? as u64,
                net,
                optimizer,
                rng,
            },
            config,
        ))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn describe(terms: &TermValues, total: f64) -> String {
    let mut s: Vec<String> = terms
        .named()
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    s.push(format!("total={total}"));
    s.join(", ")
}

/// Loss report and parameter gradients of one window.
pub fn window_gradients(
    net: &ConsistencyNet,
    item: &WindowItem,
    fx: &FeatureExtractor,
    weights: &LossWeights,
) -> Result<(TermValues, f64, Vec<Tensor>)> {
    let g = Graph::new();
    let params = net.params().bind(&g, true);
    let window = GraphWindow::constants(&g, &item.triplet);
    let rollout = net.pingpong_var(&params, &window)?;
    let loss = window_loss_var(&rollout, &window.processed, &item.supervision, fx, weights)?;
    let terms = loss.values();
    let total = loss.total.item();
    if !terms.all_finite() || !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            terms: describe(&terms, total),
        });
    }
    let grads = g.backward(loss.total);
    Ok((terms, total, params.gradients(&grads)))
}

/// One optimizer update on the mean loss of `batch`.
pub fn train_step(
    batch: &[WindowItem],
    state: &mut TrainState,
    config: &TrainConfig,
    fx: &FeatureExtractor,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    for item in batch {
        if item.triplet.len() != config.window_frames {
            return Err(Error::Shape(format!(
                "window has {} frames, configured {}",
                item.triplet.len(),
                config.window_frames
            )));
        }
    }
    let net = &state.net;
    let results: Vec<Result<(TermValues, f64, Vec<Tensor>)>> = batch
        .par_iter()
        .map(|item| window_gradients(net, item, fx, &config.weights))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut terms = TermValues::default();
    let mut grads: Option<Vec<Tensor>> = None;
    for r in results {
        let (t, _, g) = r?;
        terms = terms.add(&t);
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let mut grads: Vec<Tensor> = grads
        .expect("nonempty batch")
        .iter()
        .map(|g| g.scale(scale))
        .collect();
    if let Some(max) = config.clip_grad_norm {
        let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grads = grads.iter().map(|g| g.scale(s)).collect();
        }
    }
    state.optimizer.update(state.net.params_mut(), &grads);
    state.step += 1;
    Ok(LossReport::new(terms.scale(scale), &config.weights).with_step(state.step))
}

/// Draws `batch_size` windows: a video uniformly, then a start uniformly.
pub fn sample_batch(
    dataset: &[TrainingVideo],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WindowItem>> {
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].triplet.len() >= config.window_frames)
        .collect();
    if eligible.is_empty() {
        return Err(Error::WindowTooShort(format!(
            "no training video has {} frames",
            config.window_frames
        )));
    }
    let mut picks = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let video = eligible[rng.random_range(0..eligible.len())];
        let last = dataset[video].triplet.len() - config.window_frames;
        let start = rng.random_range(0..=last);
        picks.push((video, start));
    }
    picks
        .into_par_iter()
        .map(|(video, start)| {
            WindowItem::new(dataset, video, start, config.window_frames, config.alpha)
        })
        .collect()
}

/// Where [`fit`] writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
}

pub const LATEST_CHECKPOINT: &str = "latest.safetensors";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:07}.safetensors")
}

pub struct FitOutcome {
    pub state: TrainState,
    pub log: Vec<LossReport>,
}

/// Trains from `state` until `config.total_steps()`, calling `on_step`
/// after every update.
pub fn fit(
    dataset: &[TrainingVideo],
    config: &TrainConfig,
    mut state: TrainState,
    options: &FitOptions,
    mut on_step: impl FnMut(&LossReport),
) -> Result<FitOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    let fx = FeatureExtractor::from_source(&config.features)?;
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log_file = match &options.metrics_log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let write_checkpoint = |state: &TrainState| -> Result<()> {
        if let Some(dir) = &options.checkpoint_dir {
            state.save(&dir.join(checkpoint_name(state.step)), config)?;
            state.save(&dir.join(LATEST_CHECKPOINT), config)?;
        }
        Ok(())
    };
    let mut log = Vec::new();
    let total = config.total_steps();
    while state.step < total {
        let batch = sample_batch(dataset, config, &mut state.rng)?;
        let report = train_step(&batch, &mut state, config, &fx)?;
        if let (Some(f), Some(p)) = (log_file.as_mut(), options.metrics_log.as_ref()) {
            writeln!(f, "{}", report.to_json_line()).map_err(|e| Error::io(p, e))?;
        }
        on_step(&report);
        log.push(report);
        if config.checkpoint_every > 0 && state.step.is_multiple_of(config.checkpoint_every as u64)
        {
            write_checkpoint(&state)?;
        }
    }
    if options.checkpoint_dir.is_some()
        && (config.checkpoint_every == 0
            || !state.step.is_multiple_of(config.checkpoint_every as u64)
            || total == 0)
    {
        write_checkpoint(&state)?;
    }
    Ok(FitOutcome { state, log })
}

/// Parses a JSON-lines metrics log.
pub fn read_metrics_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Metadata stored alongside a checkpoint, for display.
pub fn checkpoint_metadata(path: &Path) -> Result<HashMap<String, String>> {
    Ok(tensor_file::load(path)?.metadata)
}
