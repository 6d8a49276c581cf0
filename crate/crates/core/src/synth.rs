//! Synthetic videos with analytic optical flow, occlusion and flicker.
//!
//! A procedural texture translates across the canvas. Frame `t` shows the
//! texture shifted by the offset `o_t`, so the flow on frame `a` pointing
//! into frame `b` is the constant `o_b − o_a`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_file_name, write_flo, FlowField, FlowProvenance, FlowProvider, PixelMask};
use crate::video::{
    save_frame, save_frame_folder, Frame, FrameSequence, SequenceMeta, VideoTriplet,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    /// Square tiles of side `cell` with seeded colours.
    Checker { cell: usize },
    /// Smooth periodic colour ramps.
    Gradient { period: f64 },
    /// Bilinearly interpolated seeded lattice noise.
    Noise { cell: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// Constant displacement `velocity` (dx, dy) per frame.
    Uniform { velocity: (f64, f64) },
    /// Moves by `velocity` up to frame `at − 1` (0-based); the step from
    /// frame `at − 1` to `at` and all later ones use `−velocity`.
    Reversal { velocity: (f64, f64), at: usize },
}

impl Motion {
    /// Displacement between frame `t` and `t + 1`.
    pub fn step(&self, t: usize) -> (f64, f64) {
        match *self {
            Motion::Uniform { velocity } => velocity,
            Motion::Reversal { velocity, at } => {
                if t + 1 < at {
                    velocity
                } else {
                    (-velocity.0, -velocity.1)
                }
            }
        }
    }

    fn velocity(&self) -> (f64, f64) {
        match *self {
            Motion::Uniform { velocity } | Motion::Reversal { velocity, .. } => velocity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub texture: Texture,
    pub motion: Motion,
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlickerKind {
    GlobalBrightness,
    LocalPatch,
    HueShift,
}

/// Axis-aligned box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlickerSpec {
    pub kind: FlickerKind,
    pub amplitude: f64,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub seed: u64,
}

/// Scene plus flicker, the unit read by `synth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub flicker: FlickerSpec,
}

impl SynthSpec {
    /// The canonical benchmark case: 32×32 checker moving one pixel right
    /// per frame, reversing at mid-sequence, 20 frames, brightness flicker
    /// of amplitude 0.15, seed 1234.
    pub fn b1() -> Self {
        Self::b1_variant(1234)
    }

    /// B1 geometry and flicker with a different seed for texture and
    /// flicker draws.
    pub fn b1_variant(seed: u64) -> Self {
        SynthSpec {
            scene: SceneSpec {
                height: 32,
                width: 32,
                texture: Texture::Checker { cell: 4 },
                motion: Motion::Reversal {
                    velocity: (1.0, 0.0),
                    at: 10,
                },
                length: 20,
                seed,
            },
            flicker: FlickerSpec {
                kind: FlickerKind::GlobalBrightness,
                amplitude: 0.15,
                region: None,
                seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        if s.height == 0 || s.width == 0 {
            return Err(Error::Spec("canvas must be nonempty".into()));
        }
        if s.length < 2 {
            return Err(Error::Spec(format!(
                "length must be at least 2, got {}",
                s.length
            )));
        }
        let (vx, vy) = s.motion.velocity();
        for v in [vx, vy] {
            if !v.is_finite() || (2.0 * v).fract() != 0.0 {
                return Err(Error::Spec(format!(
                    "displacements must be integer or half-integer, got {v}"
                )));
            }
        }
        match s.texture {
            Texture::Checker { cell } | Texture::Noise { cell } if cell == 0 => {
                return Err(Error::Spec("texture cell must be positive".into()))
            }
            Texture::Gradient { period } if !(period > 0.0) => {
                return Err(Error::Spec("gradient period must be positive".into()))
            }
            _ => {}
        }
        let f = &self.flicker;
        if !(f.amplitude >= 0.0 && f.amplitude.is_finite()) {
            return Err(Error::Spec(format!(
                "flicker amplitude must be >= 0, got {}",
                f.amplitude
            )));
        }
        if let Some(r) = f.region {
            if r.height == 0 || r.width == 0 || r.y + r.height > s.height || r.x + r.width > s.width
            {
                return Err(Error::Spec(format!(
                    "flicker region {r:?} lies outside the {}×{} canvas",
                    s.height, s.width
                )));
            }
        }
        Ok(())
    }
}

fn hash(seed: u64, a: i64, b: i64, c: u64) -> u64 {
    let mut z = seed
        .wrapping_add((a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(c.wrapping_mul(0x1656_67B1_9E37_79F9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in `[0.2, 0.8]` keyed by lattice position and channel.
fn lattice(seed: u64, i: i64, j: i64, c: usize) -> f64 {
    0.2 + 0.6 * (hash(seed, i, j, c as u64) >> 11) as f64 / (1u64 << 53) as f64
}

impl Texture {
    /// Colour of channel `c` at texture coordinates `(x, y)`.
    pub fn sample(&self, seed: u64, c: usize, y: f64, x: f64) -> f64 {
        match *self {
            Texture::Checker { cell } => {
                let i = (x / cell as f64).floor() as i64;
                let j = (y / cell as f64).floor() as i64;
                lattice(seed, i, j, c)
            }
            Texture::Gradient { period } => {
                let w = std::f64::consts::TAU / period;
                let phase = [0.0, 2.1, 4.2][c];
                0.5 + 0.15 * (w * x + phase).sin() + 0.15 * (w * y * 0.7 + phase * 0.5).cos()
            }
            Texture::Noise { cell } => {
                let fx = x / cell as f64;
                let fy = y / cell as f64;
                let (i, j) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - i, fy - j);
                let (i, j) = (i as i64, j as i64);
                let v00 = lattice(seed, i, j, c);
                let v10 = lattice(seed, i + 1, j, c);
                let v01 = lattice(seed, i, j + 1, c);
                let v11 = lattice(seed, i + 1, j + 1, c);
                (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
            }
        }
    }
}

/// Constant flows between any two frames of a translating scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFlow {
    height: usize,
    width: usize,
    offsets: Vec<(f64, f64)>,
}

impl SyntheticFlow {
    pub fn new(scene: &SceneSpec) -> Self {
        let mut offsets = vec![(0.0, 0.0)];
        for t in 0..scene.length.saturating_sub(1) {
            let (ox, oy) = offsets[t];
            let (dx, dy) = scene.motion.step(t);
            offsets.push((ox + dx, oy + dy));
        }
        Self {
            height: scene.height,
            width: scene.width,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Texture offset of frame `t`.
    pub fn offset(&self, t: usize) -> (f64, f64) {
        self.offsets[t]
    }

    /// Displacement field on frame `target` pointing into frame `source`.
    pub fn field(&self, target: usize, source: usize) -> Result<FlowField> {
        if target >= self.len() || source >= self.len() {
            return Err(Error::Index(format!(
                "flow {}→{} outside a {}-frame video",
                target + 1,
                source + 1,
                self.len()
            )));
        }
        let (ax, ay) = self.offsets[target];
        let (bx, by) = self.offsets[source];
        Ok(FlowField::uniform(
            self.height,
            self.width,
            (bx - ax) as f32,
            (by - ay) as f32,
            target,
            source,
            FlowProvenance::GroundTruth,
        ))
    }

    /// 1 where the content at a pixel of `target` is still inside the frame
    /// at `source`, 0 on the band that leaves the canvas.
    pub fn occlusion_truth(&self, target: usize, source: usize) -> Result<PixelMask> {
        let f = self.field(target, source)?;
        let (u, v) = f.at(0, 0);
        let (h, w) = (self.height, self.width);
        let inside = |p: f64, n: usize| p >= 0.0 && p <= (n - 1) as f64;
        let mut values = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let ok = inside(x as f64 + u, w) && inside(y as f64 + v, h);
                values.push(if ok { 1.0 } else { 0.0 });
            }
        }
        PixelMask::new(h, w, values)
    }
}

impl FlowProvider for SyntheticFlow {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField> {
        if frames.dims() != (self.height, self.width) {
            return Err(Error::DimensionMismatch(format!(
                "synthetic flows are {}×{}, frames are {:?}",
                self.height,
                self.width,
                frames.dims()
            )));
        }
        self.field(target, source)
    }
}

/// Generated triplet with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub spec: SynthSpec,
    pub triplet: VideoTriplet,
    pub flows: SyntheticFlow,
    /// Per-frame flicker draws (brightness offset or hue angle in radians).
    pub flicker_draws: Vec<f64>,
}

fn rotate_about_gray(rgb: [f64; 3], theta: f64) -> [f64; 3] {
    let k = 1.0 / 3f64.sqrt();
    let (s, c) = theta.sin_cos();
    let dot = k * (rgb[0] + rgb[1] + rgb[2]);
    let cross = [
        k * (rgb[2] - rgb[1]),
        k * (rgb[0] - rgb[2]),
        k * (rgb[1] - rgb[0]),
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = rgb[i] * c + cross[i] * s + k * dot * (1.0 - c);
    }
    out
}

fn apply_flicker(frame: &Frame, spec: &FlickerSpec, draw: f64) -> Result<Frame> {
    let (h, w) = frame.dims();
    let mut out = frame.clone();
    match spec.kind {
        FlickerKind::GlobalBrightness | FlickerKind::LocalPatch => {
            let region = match (spec.kind, spec.region) {
                (FlickerKind::GlobalBrightness, _) => Region {
                    y: 0,
                    x: 0,
                    height: h,
                    width: w,
                },
                (_, Some(r)) => r,
                (_, None) => Region {
                    y: h / 4,
                    x: w / 4,
                    height: (h / 2).max(1),
                    width: (w / 2).max(1),
                },
            };
            for c in 0..3 {
                for y in region.y..region.y + region.height {
                    for x in region.x..region.x + region.width {
                        out.set(c, y, x, (frame.get(c, y, x) + draw).clamp(0.0, 1.0));
                    }
                }
            }
        }
        FlickerKind::HueShift => {
            for y in 0..h {
                for x in 0..w {
                    let rgb = [frame.get(0, y, x), frame.get(1, y, x), frame.get(2, y, x)];
                    let r = rotate_about_gray(rgb, draw);
                    for (c, v) in r.iter().enumerate() {
                        out.set(c, y, x, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic generation from a `SynthSpec` and its seeds.
pub fn generate(spec: &SynthSpec) -> Result<SynthVideo> {
    spec.validate()?;
    let scene = &spec.scene;
    let flows = SyntheticFlow::new(scene);
    let raw: Vec<Frame> = (0..scene.length)
        .map(|t| {
            let (ox, oy) = flows.offset(t);
            Frame::from_fn(scene.height, scene.width, |c, y, x| {
                scene
                    .texture
                    .sample(scene.seed, c, y as f64 - oy, x as f64 - ox)
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.flicker.seed);
    let a = spec.flicker.amplitude;
    let bound = match spec.flicker.kind {
        FlickerKind::HueShift => a * std::f64::consts::PI,
        _ => a,
    };
    let mut draws = Vec::with_capacity(scene.length);
    let mut processed = Vec::with_capacity(scene.length);
    for frame in &raw {
        let d = if bound > 0.0 {
            rng.random_range(-bound..bound)
        } else {
            0.0
        };
        draws.push(d);
        processed.push(if a == 0.0 {
            frame.clone()
        } else {
            apply_flicker(frame, &spec.flicker, d)?
        });
    }
    let triplet = VideoTriplet::new(FrameSequence::new(raw)?, FrameSequence::new(processed)?)?;
    Ok(SynthVideo {
        spec: *spec,
        triplet,
        flows,
        flicker_draws: draws,
    })
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const RAW_DIR: &str = "raw";
pub const PROCESSED_DIR: &str = "processed";
pub const FLOW_DIR: &str = "flows";
pub const OCCLUSION_DIR: &str = "occlusion";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    /// 1-based frame indices.
    pub target: usize,
    pub source: usize,
    pub file: String,
    pub occlusion: String,
}

/// Index of an exported synthetic video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: SynthSpec,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub raw_dir: String,
    pub processed_dir: String,
    pub flow_dir: String,
    pub occlusion_dir: String,
    pub flows: Vec<FlowEntry>,
    pub flicker_draws: Vec<f64>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }
}

fn mask_frame(mask: &PixelMask) -> Result<Frame> {
    let (h, w) = mask.dims();
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(mask.values());
    }
    Frame::new(h, w, data)
}

fn create_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes frame folders, adjacent-pair flows in both directions, occlusion
/// truth masks and `manifest.json` under `root`.
pub fn export(video: &SynthVideo, root: &Path) -> Result<Manifest> {
    create_dir(root)?;
    let meta = SequenceMeta {
        frame_rate: None,
        provenance: Some("synthetic".into()),
    };
    save_frame_folder(&video.triplet.raw, &root.join(RAW_DIR), Some(&meta))?;
    save_frame_folder(
        &video.triplet.processed,
        &root.join(PROCESSED_DIR),
        Some(&meta),
    )?;
    let flow_dir = create_dir(&root.join(FLOW_DIR))?;
    let occ_dir = create_dir(&root.join(OCCLUSION_DIR))?;
    let n = video.triplet.len();
    let mut entries = Vec::new();
    let pairs = (0..n - 1).flat_map(|t| [(t, t + 1), (t + 1, t)]);
    for (target, source) in pairs {
        let file = flow_file_name(target, source);
        write_flo(&flow_dir.join(&file), &video.flows.field(target, source)?)?;
        let occlusion = format!("occ_{:04}_{:04}.png", target + 1, source + 1);
        save_frame(
            &mask_frame(&video.flows.occlusion_truth(target, source)?)?,
            &occ_dir.join(&occlusion),
        )?;
        entries.push(FlowEntry {
            target: target + 1,
            source: source + 1,
            file,
            occlusion,
        });
    }
    let (height, width) = video.triplet.dims();
    let manifest = Manifest {
        format_version: 1,
        spec: video.spec,
        frames: n,
        height,
        width,
        raw_dir: RAW_DIR.into(),
        processed_dir: PROCESSED_DIR.into(),
        flow_dir: FLOW_DIR.into(),
        occlusion_dir: OCCLUSION_DIR.into(),
        flows: entries,
        flicker_draws: video.flicker_draws.clone(),
    };
    let path = root.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
