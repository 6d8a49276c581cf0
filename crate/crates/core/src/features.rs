//! VGG19-topology feature extraction up to `relu4_3`, and per-channel
//! feature statistics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeometry, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::tensor_file;
use crate::video::{Frame, CHANNELS};

/// Added to the variance before the square root in [`channel_stats`].
pub const STATS_EPS: f64 = 1e-8;

/// ImageNet channel means and standard deviations.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Widths used by the fixed random extractor (one per block).
pub const FIXED_RANDOM_WIDTHS: [usize; 4] = [8, 16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    Relu1_2,
    Relu2_2,
    Relu3_3,
    Relu4_3,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 4] = [Self::Relu1_2, Self::Relu2_2, Self::Relu3_3, Self::Relu4_3];
    /// Blocks used by the statistics losses.
    pub const STYLE: [FeatureBlock; 2] = [Self::Relu1_2, Self::Relu2_2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu1_2 => "relu1_2",
            Self::Relu2_2 => "relu2_2",
            Self::Relu3_3 => "relu3_3",
            Self::Relu4_3 => "relu4_3",
        }
    }

    fn stage(self) -> usize {
        self as usize
    }

    /// Smallest frame side that still leaves a 2×2 map at this block.
    pub fn min_side(self) -> usize {
        2 << self.stage()
    }
}

impl std::fmt::Display for FeatureBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Convolution names per stage; the block output is the ReLU after the
/// layer listed in [`BLOCK_LAYER`].
const STAGES: [&[&str]; 4] = [
    &["conv1_1", "conv1_2"],
    &["conv2_1", "conv2_2"],
    &["conv3_1", "conv3_2", "conv3_3", "conv3_4"],
    &["conv4_1", "conv4_2", "conv4_3"],
];
const BLOCK_LAYER: [&str; 4] = ["conv1_2", "conv2_2", "conv3_3", "conv4_3"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    Pretrained { path: PathBuf },
    FixedRandom { seed: u64 },
}

struct ConvLayer {
    name: &'static str,
    weight: Arc<Tensor>,
    bias: Arc<Tensor>,
}

/// Activations of the requested blocks, each shaped `[1, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlocks {
    blocks: BTreeMap<FeatureBlock, Tensor>,
}

impl FeatureBlocks {
    pub fn get(&self, block: FeatureBlock) -> Option<&Tensor> {
        self.blocks.get(&block)
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureBlock, &Tensor)> {
        self.blocks.iter().map(|(b, t)| (*b, t))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Immutable VGG19-style feature network.
pub struct FeatureExtractor {
    source: WeightSource,
    widths: [usize; 4],
    layers: Vec<ConvLayer>,
    normalize: bool,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("source", &self.source)
            .field("widths", &self.widths)
            .finish()
    }
}

impl FeatureExtractor {
    /// Seeded He-initialised weights with small nonzero biases.
    pub fn fixed_random(seed: u64) -> Self {
        Self::fixed_random_with_widths(seed, FIXED_RANDOM_WIDTHS)
    }

    pub fn fixed_random_with_widths(seed: u64, widths: [usize; 4]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias_dist = Uniform::new(-0.1, 0.1).expect("valid range");
        let mut layers = Vec::new();
        let mut cin = CHANNELS;
        for (stage, names) in STAGES.iter().enumerate() {
            let cout = widths[stage];
            for &name in names.iter() {
                let fan_in = (cin * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let weight = Tensor::from_fn(&[cout, cin, 3, 3], |_| normal.sample(&mut rng));
                let bias = Tensor::from_fn(&[cout], |_| bias_dist.sample(&mut rng));
                layers.push(ConvLayer {
                    name,
                    weight: Arc::new(weight),
                    bias: Arc::new(bias),
                });
                cin = cout;
            }
        }
        Self {
            source: WeightSource::FixedRandom { seed },
            widths,
            layers,
            normalize: false,
        }
    }

    /// Loads `convX_Y.weight` `[cout, cin, 3, 3]` and `convX_Y.bias` `[cout]`
    /// for every layer up to `conv4_3`. Inputs are normalised with the
    /// ImageNet statistics before the first layer.
    pub fn from_weight_file(path: &Path) -> Result<Self> {
        let archive = tensor_file::load(path)?;
        let mut layers = Vec::new();
        let mut widths = [0; 4];
        let mut cin = CHANNELS;
        for (stage, names) in STAGES.iter().enumerate() {
            for &name in names.iter() {
                let weight = archive.get(path, &format!("{name}.weight"))?;
                let bias = archive.get(path, &format!("{name}.bias"))?;
                let s = weight.shape();
                if s.len() != 4 || s[1] != cin || s[2] != 3 || s[3] != 3 || bias.shape() != [s[0]] {
                    return Err(Error::format(
                        path,
                        format!(
                            "layer {name}: weight {:?}, bias {:?}, expected {cin} input channels",
                            s,
                            bias.shape()
                        ),
                    ));
                }
                cin = s[0];
                widths[stage] = cin;
                layers.push(ConvLayer {
                    name,
                    weight: Arc::new(weight.clone()),
                    bias: Arc::new(bias.clone()),
                });
            }
        }
        Ok(Self {
            source: WeightSource::Pretrained {
                path: path.to_path_buf(),
            },
            widths,
            layers,
            normalize: true,
        })
    }

    pub fn from_source(source: &WeightSource) -> Result<Self> {
        match source {
            WeightSource::Pretrained { path } => Self::from_weight_file(path),
            WeightSource::FixedRandom { seed } => Ok(Self::fixed_random(*seed)),
        }
    }

    pub fn source(&self) -> &WeightSource {
        &self.source
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Writes the layer weights in the format read by [`Self::from_weight_file`].
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut map = BTreeMap::new();
        for layer in &self.layers {
            map.insert(format!("{}.weight", layer.name), (*layer.weight).clone());
            map.insert(format!("{}.bias", layer.name), (*layer.bias).clone());
        }
        tensor_file::save(path, &map, Default::default())
    }

    fn check_size(&self, height: usize, width: usize, blocks: &[FeatureBlock]) -> Result<()> {
        if let Some(deepest) = blocks.iter().max() {
            let min = deepest.min_side();
            if height < min || width < min {
                return Err(Error::FrameTooSmall {
                    height,
                    width,
                    block: deepest.name().to_string(),
                    min,
                });
            }
        }
        Ok(())
    }

    /// Feature maps of `frame` for the requested blocks.
    pub fn extract(&self, frame: &Frame, blocks: &[FeatureBlock]) -> Result<FeatureBlocks> {
        let g = Graph::new();
        let x = g.constant(frame.to_tensor());
        let out = self.extract_var(x, blocks)?;
        Ok(FeatureBlocks {
            blocks: out
                .into_iter()
                .map(|(b, v)| (b, (*v.value()).clone()))
                .collect(),
        })
    }

    /// Differentiable extraction on an NCHW graph value. Weights enter the
    /// graph as constants.
    pub fn extract_var<'g>(
        &self,
        x: Var<'g>,
        blocks: &[FeatureBlock],
    ) -> Result<Vec<(FeatureBlock, Var<'g>)>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != CHANNELS {
            return Err(Error::Shape(format!(
                "feature input must be [n, 3, h, w], got {shape:?}"
            )));
        }
        self.check_size(shape[2], shape[3], blocks)?;
        let Some(deepest) = blocks.iter().max().copied() else {
            return Ok(Vec::new());
        };
        let g = x.graph();
        let mut h = if self.normalize {
            normalize_input(x)
        } else {
            x
        };
        let geo = ConvGeometry::new(3, 1, 1);
        let mut out = Vec::new();
        let mut layer_iter = self.layers.iter();
        for (stage, names) in STAGES.iter().enumerate().take(deepest.stage() + 1) {
            if stage > 0 {
                h = h.max_pool2();
            }
            for _ in names.iter() {
                let layer = layer_iter.next().expect("layer table matches stages");
                h = h
                    .conv2d(
                        g.constant(Arc::clone(&layer.weight)),
                        Some(g.constant(Arc::clone(&layer.bias))),
                        geo,
                    )
                    .relu();
                if layer.name == BLOCK_LAYER[stage] {
                    let block = FeatureBlock::ALL[stage];
                    if blocks.contains(&block) {
                        out.push((block, h));
                    }
                    if block == deepest {
                        return Ok(out);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn normalize_input(x: Var<'_>) -> Var<'_> {
    let (n, c, h, w) = x.value().dims4();
    let plane = h * w;
    let scale = Tensor::from_fn(&[n, c, h, w], |i| 1.0 / IMAGENET_STD[(i / plane) % c]);
    let shift = Tensor::from_fn(&[n, c, h, w], |i| {
        let ch = (i / plane) % c;
        -IMAGENET_MEAN[ch] / IMAGENET_STD[ch]
    });
    x.mul_const(Arc::new(scale)).add_const(&shift)
}

/// Per-channel spatial mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Moments over the spatial positions of each channel of a `[c, h, w]` or
/// `[1, c, h, w]` map; `std = sqrt(var + 1e-8)`.
pub fn channel_stats(block: &Tensor) -> Result<ChannelStats> {
    let (c, plane) = match block.shape() {
        [c, h, w] | [1, c, h, w] => (*c, h * w),
        other => {
            return Err(Error::Shape(format!(
                "expected a single feature map, got {other:?}"
            )))
        }
    };
    if c == 0 || plane == 0 {
        return Err(Error::Shape("empty feature map".into()));
    }
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for values in block.data().chunks_exact(plane) {
        let m = values.iter().sum::<f64>() / plane as f64;
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / plane as f64;
        mean.push(m);
        std.push((var + STATS_EPS).sqrt());
    }
    Ok(ChannelStats { mean, std })
}
