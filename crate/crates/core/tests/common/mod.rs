//! Loop-based reference implementations and random instance builders shared
//! by the integration tests. Nothing here calls into the library's math.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use deflicker::autograd::Tensor;
use deflicker::features::FeatureExtractor;
use deflicker::flow::{FlowField, FlowProvenance, FlowProvider, PixelMask};
use deflicker::video::{Frame, FrameSequence};
use deflicker::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod suites;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    let data = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Frame::new(h, w, data).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize, h: usize, w: usize) -> FrameSequence {
    FrameSequence::new((0..len).map(|_| random_frame(rng, h, w)).collect()).unwrap()
}

pub fn random_flow(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    target: usize,
    source: usize,
    max: f32,
) -> FlowField {
    let mut comp = || {
        (0..h * w)
            .map(|_| rng.random_range(-max..max))
            .collect::<Vec<f32>>()
    };
    let dx = comp();
    let dy = comp();
    FlowField::new(h, w, dx, dy, target, source, FlowProvenance::GroundTruth).unwrap()
}

pub fn random_binary_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PixelMask {
    let v = (0..h * w)
        .map(|_| if rng.random_bool(0.75) { 1.0 } else { 0.0 })
        .collect();
    PixelMask::new(h, w, v).unwrap()
}

/// Independent random flow for every ordered frame pair.
pub struct TableFlows {
    pub table: HashMap<(usize, usize), FlowField>,
}

impl TableFlows {
    pub fn random(rng: &mut ChaCha8Rng, len: usize, h: usize, w: usize, max: f32) -> Self {
        let mut table = HashMap::new();
        for t in 0..len {
            for s in 0..len {
                if t != s {
                    table.insert((t, s), random_flow(rng, h, w, t, s, max));
                }
            }
        }
        Self { table }
    }
}

impl FlowProvider for TableFlows {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField> {
        if target == source {
            let (h, w) = frames.dims();
            return Ok(FlowField::zeros(h, w, target, source));
        }
        self.table
            .get(&(target, source))
            .cloned()
            .ok_or(Error::MissingFlow {
                target: target + 1,
                source_frame: source + 1,
            })
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

// ---- images -------------------------------------------------------------

/// Channel-major image, `c` planes of `h × w`.
#[derive(Clone, Debug)]
pub struct Img {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Img {
    pub fn of(f: &Frame) -> Self {
        Img {
            c: 3,
            h: f.height(),
            w: f.width(),
            v: f.data().to_vec(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

/// Bilinear lookup at `(x + dx, y + dy)` with coordinates clamped to the
/// image, one plane at a time.
pub fn naive_warp(img: &Img, flow: &FlowField) -> Img {
    let (h, w) = (img.h, img.w);
    let mut out = vec![0.0; img.v.len()];
    for c in 0..img.c {
        for y in 0..h {
            for x in 0..w {
                let dx = flow.dx()[y * w + x] as f64;
                let dy = flow.dy()[y * w + x] as f64;
                let sx = (x as f64 + dx).max(0.0).min((w - 1) as f64);
                let sy = (y as f64 + dy).max(0.0).min((h - 1) as f64);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = if x0 + 1 < w { x0 + 1 } else { w - 1 };
                let y1 = if y0 + 1 < h { y0 + 1 } else { h - 1 };
                let ax = sx - x0 as f64;
                let ay = sy - y0 as f64;
                let top = img.at(c, y0, x0) * (1.0 - ax) + img.at(c, y0, x1) * ax;
                let bottom = img.at(c, y1, x0) * (1.0 - ax) + img.at(c, y1, x1) * ax;
                out[(c * h + y) * w + x] = top * (1.0 - ay) + bottom * ay;
            }
        }
    }
    Img { v: out, ..*img }
}

pub fn naive_visibility(a: &Frame, b: &Frame, flow: &FlowField, alpha: f64) -> Vec<f64> {
    let ia = Img::of(a);
    let wb = naive_warp(&Img::of(b), flow);
    let mut out = Vec::new();
    for y in 0..ia.h {
        for x in 0..ia.w {
            let mut e = 0.0;
            for c in 0..3 {
                let d = ia.at(c, y, x) - wb.at(c, y, x);
                e += d * d;
            }
            out.push((-alpha * e).exp());
        }
    }
    out
}

/// `Σ_pixels Σ_c mask · |a − b|`.
pub fn naive_masked_l1(a: &Img, b: &Img, mask: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..a.c {
        for y in 0..a.h {
            for x in 0..a.w {
                s += mask[y * a.w + x] * (a.at(c, y, x) - b.at(c, y, x)).abs();
            }
        }
    }
    s
}

// ---- feature network ----------------------------------------------------

pub struct NaiveConv {
    pub cout: usize,
    pub cin: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Conv weights per stage, read back from the extractor's weight file.
pub struct NaiveVgg {
    pub stages: Vec<Vec<NaiveConv>>,
}

const LAYERS_PER_STAGE: [usize; 4] = [2, 2, 4, 3];
const TAPPED_LAYER: [usize; 4] = [2, 2, 3, 3];

impl NaiveVgg {
    pub fn from_extractor(fx: &FeatureExtractor) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.safetensors");
        fx.save_weights(&path).unwrap();
        let archive = deflicker::tensor_file::load(&path).unwrap();
        let mut stages = Vec::new();
        for (s, &n) in LAYERS_PER_STAGE.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 1..=n {
                let wt = &archive.tensors[&format!("conv{}_{l}.weight", s + 1)];
                let bs = &archive.tensors[&format!("conv{}_{l}.bias", s + 1)];
                layers.push(NaiveConv {
                    cout: wt.shape()[0],
                    cin: wt.shape()[1],
                    weight: wt.data().to_vec(),
                    bias: bs.data().to_vec(),
                });
            }
            stages.push(layers);
        }
        Self { stages }
    }

    /// ReLU outputs at relu1_2, relu2_2, relu3_3 and relu4_3, up to `depth` blocks.
    pub fn blocks(&self, frame: &Frame, depth: usize) -> Vec<Img> {
        let mut x = Img::of(frame);
        let mut taps = Vec::new();
        for s in 0..depth {
            if s > 0 {
                x = max_pool(&x);
            }
            for (l, conv) in self.stages[s].iter().enumerate() {
                x = conv_relu(&x, conv);
                if l + 1 == TAPPED_LAYER[s] {
                    taps.push(x.clone());
                }
            }
        }
        taps
    }
}

fn conv_relu(x: &Img, k: &NaiveConv) -> Img {
    assert_eq!(x.c, k.cin);
    let (h, w) = (x.h, x.w);
    let mut out = vec![0.0; k.cout * h * w];
    for o in 0..k.cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = k.bias[o];
                for i in 0..k.cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let wv = k.weight[((o * k.cin + i) * 3 + ky) * 3 + kx];
                            acc += wv * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc.max(0.0);
            }
        }
    }
    Img {
        c: k.cout,
        h,
        w,
        v: out,
    }
}

fn max_pool(x: &Img) -> Img {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(c, 2 * y + dy, 2 * xx + dx));
                    }
                }
                out.push(m);
            }
        }
    }
    Img {
        c: x.c,
        h,
        w,
        v: out,
    }
}

/// Per-channel population mean and `sqrt(var + 1e-8)`.
pub fn naive_moments(x: &Img) -> Vec<(f64, f64)> {
    let n = (x.h * x.w) as f64;
    (0..x.c)
        .map(|c| {
            let mut mean = 0.0;
            for y in 0..x.h {
                for xx in 0..x.w {
                    mean += x.at(c, y, xx);
                }
            }
            mean /= n;
            let mut var = 0.0;
            for y in 0..x.h {
                for xx in 0..x.w {
                    var += (x.at(c, y, xx) - mean).powi(2);
                }
            }
            (mean, (var / n + 1e-8).sqrt())
        })
        .collect()
}

fn moment_distance(a: &Img, b: &Img) -> f64 {
    naive_moments(a)
        .iter()
        .zip(naive_moments(b))
        .map(|(p, q)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
        .sum()
}

// ---- loss oracles -------------------------------------------------------

pub fn oracle_content(vgg: &NaiveVgg, o: &FrameSequence, p: &FrameSequence) -> f64 {
    let mut total = 0.0;
    for t in 1..o.len() {
        let fo = vgg.blocks(&o[t], 4);
        let fp = vgg.blocks(&p[t], 4);
        for (a, b) in fo.iter().zip(&fp) {
            let mut s = 0.0;
            for i in 0..a.v.len() {
                s += (a.v[i] - b.v[i]).abs();
            }
            total += s / a.v.len() as f64;
        }
    }
    total
}

pub fn oracle_style_preserving(vgg: &NaiveVgg, o: &FrameSequence, p: &FrameSequence) -> f64 {
    let mut total = 0.0;
    for t in 1..o.len() {
        let fo = vgg.blocks(&o[t], 2);
        let fp = vgg.blocks(&p[t], 2);
        for (a, b) in fo.iter().zip(&fp) {
            total += moment_distance(a, b);
        }
    }
    total
}

pub fn oracle_style_temporal(vgg: &NaiveVgg, o: &FrameSequence) -> f64 {
    let mut total = 0.0;
    for t in 1..o.len() {
        let cur = vgg.blocks(&o[t], 2);
        let prev = vgg.blocks(&o[t - 1], 2);
        for (a, b) in cur.iter().zip(&prev) {
            total += moment_distance(a, b);
        }
    }
    total
}

/// Window-relative flow and mask lookups for the temporal oracles.
pub struct OracleWindow<'a> {
    pub raw: &'a FrameSequence,
    pub flows: &'a TableFlows,
    pub alpha: f64,
}

impl OracleWindow<'_> {
    fn flow(&self, t: usize, s: usize) -> &FlowField {
        &self.flows.table[&(t, s)]
    }

    fn mask(&self, t: usize, s: usize) -> Vec<f64> {
        naive_visibility(&self.raw[t], &self.raw[s], self.flow(t, s), self.alpha)
    }

    /// `backward[t] = O'_t`, `t < k`.
    pub fn short_term(&self, forward: &[Frame], backward: &[Frame]) -> f64 {
        let k = forward.len() - 1;
        let mut total = 0.0;
        for t in 1..=k {
            let warped = naive_warp(&Img::of(&forward[t - 1]), self.flow(t, t - 1));
            total += naive_masked_l1(&Img::of(&forward[t]), &warped, &self.mask(t, t - 1));
        }
        for t in 0..k {
            let neighbour = if t + 1 < k {
                &backward[t + 1]
            } else {
                &forward[k]
            };
            let warped = naive_warp(&Img::of(neighbour), self.flow(t, t + 1));
            total += naive_masked_l1(&Img::of(&backward[t]), &warped, &self.mask(t, t + 1));
        }
        total
    }

    pub fn long_term(&self, forward: &[Frame]) -> f64 {
        let mut total = 0.0;
        for t in 1..forward.len() {
            let warped = naive_warp(&Img::of(&forward[0]), self.flow(t, 0));
            total += naive_masked_l1(&Img::of(&forward[t]), &warped, &self.mask(t, 0));
        }
        total
    }
}

pub fn oracle_pingpong(forward: &[Frame], backward: &[Frame]) -> f64 {
    let k = backward.len();
    let mut total = 0.0;
    for t in 1..k {
        let mut s = 0.0;
        for (a, b) in forward[t].data().iter().zip(backward[t].data()) {
            s += (a - b).powi(2);
        }
        total += s.sqrt();
    }
    total
}

/// Rows `mask_t ⊙ luma(warp(frame_t, flow_t))` as a dense row-major matrix.
pub fn oracle_rank_matrix(
    frames: &FrameSequence,
    flows: &[FlowField],
    masks: &[PixelMask],
) -> (usize, usize, Vec<f64>) {
    let (h, w) = frames.dims();
    let mut m = Vec::new();
    for t in 0..frames.len() {
        let warped = naive_warp(&Img::of(&frames[t]), &flows[t]);
        for y in 0..h {
            for x in 0..w {
                let luma = 0.299 * warped.at(0, y, x)
                    + 0.587 * warped.at(1, y, x)
                    + 0.114 * warped.at(2, y, x);
                m.push(masks[t].values()[y * w + x] * luma);
            }
        }
    }
    (frames.len(), h * w, m)
}

/// Sum of singular values from the eigenvalues of `A Aᵀ` (cyclic Jacobi).
pub fn oracle_nuclear_norm(rows: usize, cols: usize, a: &[f64]) -> f64 {
    let mut s = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            for k in 0..cols {
                s[i * rows + j] += a[i * cols + k] * a[j * cols + k];
            }
        }
    }
    let n = rows;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += s[i * n + j].powi(2);
                }
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[k * n + p];
                    let skq = s[k * n + q];
                    s[k * n + p] = c * skp - sn * skq;
                    s[k * n + q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[p * n + k];
                    let sqk = s[q * n + k];
                    s[p * n + k] = c * spk - sn * sqk;
                    s[q * n + k] = sn * spk + c * sqk;
                }
            }
        }
    }
    (0..n).map(|i| s[i * n + i].max(0.0).sqrt()).sum()
}

pub fn oracle_low_rank(chi_i: &(usize, usize, Vec<f64>), chi_o: &(usize, usize, Vec<f64>)) -> f64 {
    (oracle_nuclear_norm(chi_i.0, chi_i.1, &chi_i.2)
        - oracle_nuclear_norm(chi_o.0, chi_o.1, &chi_o.2))
    .powi(2)
}

pub fn tensor_of(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(&[rows, cols], data)
}
