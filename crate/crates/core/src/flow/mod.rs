//! Dense optical flow, backward warping and the two mask kinds built on it.
//!
//! Convention: a [`FlowField`] with `target = t` and `source = s` is stored on
//! the pixel grid of frame `t`; the displacement at `(x, y)` points to the
//! position `(x + dx, y + dy)` in frame `s`. Warping frame `s` with it
//! aligns that frame to time `t` (backward warping).

mod flo;
mod store;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{SamplingPlan, Var};
use crate::error::{Error, Result};
use crate::video::{Frame, CHANNELS};

pub use flo::{flo_files_read, read_flo, write_flo, FLO_MAGIC};
pub use store::{compose, flow_file_name, FlowDirectory, FlowProvider, ZeroFlow};

/// Weight of the warping error inside the visibility mask exponent.
pub const DEFAULT_ALPHA: f64 = 50.0;

/// Constants of the forward-backward consistency check.
pub const CONSISTENCY_C1: f64 = 0.01;
pub const CONSISTENCY_C2: f64 = 0.5;
pub const MOTION_BOUNDARY_C1: f64 = 0.01;
pub const MOTION_BOUNDARY_C2: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowProvenance {
    GroundTruth,
    Estimated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
    /// Frame whose pixel grid the field lives on (0-based).
    pub target: usize,
    /// Frame the displacements point into (0-based).
    pub source: usize,
    pub provenance: FlowProvenance,
}

impl FlowField {
    pub fn new(
        height: usize,
        width: usize,
        dx: Vec<f32>,
        dy: Vec<f32>,
        target: usize,
        source: usize,
        provenance: FlowProvenance,
    ) -> Result<Self> {
        if height == 0 || width == 0 || dx.len() != height * width || dy.len() != height * width {
            return Err(Error::Shape(format!(
                "flow {height}×{width} with {} / {} components",
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "flow contains non-finite displacements".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
            target,
            source,
            provenance,
        })
    }

    /// The same displacement at every pixel.
    pub fn uniform(
        height: usize,
        width: usize,
        dx: f32,
        dy: f32,
        target: usize,
        source: usize,
        provenance: FlowProvenance,
    ) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
            target,
            source,
            provenance,
        }
    }

    pub fn zeros(height: usize, width: usize, target: usize, source: usize) -> Self {
        Self::uniform(
            height,
            width,
            0.0,
            0.0,
            target,
            source,
            FlowProvenance::GroundTruth,
        )
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

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    /// `(dx, dy)` at pixel `(x, y)`.
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (f64::from(self.dx[i]), f64::from(self.dy[i]))
    }

    /// Bilinear sampling plan of this backward warp (border clamping).
    pub fn sampling_plan(&self) -> SamplingPlan {
        let mut taps = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = self.at(y, x);
                taps.push(SamplingPlan::bilinear_taps(
                    x as f64 + dx,
                    y as f64 + dy,
                    self.width,
                    self.height,
                ));
            }
        }
        SamplingPlan::new(self.height, self.width, self.height, self.width, taps)
    }

    fn check_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "flow is {}×{}, {what} is {}×{}",
                self.height, self.width, dims.0, dims.1
            )));
        }
        Ok(())
    }
}

/// Per-pixel real mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}×{width} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Mask repeated over the three colour channels as an NCHW tensor, ready
    /// to multiply a frame tensor.
    pub fn to_frame_tensor(&self) -> crate::autograd::Tensor {
        let mut data = Vec::with_capacity(CHANNELS * self.values.len());
        for _ in 0..CHANNELS {
            data.extend_from_slice(&self.values);
        }
        crate::autograd::Tensor::new(&[1, CHANNELS, self.height, self.width], data)
    }
}

/// Continuous visibility mask for training together with the binary
/// non-occlusion mask for evaluation, for one frame pair.
#[derive(Clone, Debug)]
pub struct MaskPair {
    pub visibility: PixelMask,
    pub non_occlusion: PixelMask,
    pub alpha: f64,
}

/// Backward-warps `frame` with `flow`: output `(x, y)` is the bilinear sample
/// of `frame` at `(x + dx, y + dy)`, clamped to the border.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    flow.check_dims(frame.dims(), "frame")?;
    Ok(frame.resampled(&flow.sampling_plan()))
}

/// Differentiable [`warp`] of an NCHW graph value.
pub fn warp_var<'g>(x: Var<'g>, flow: &FlowField) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("warp expects NCHW, got {shape:?}")));
    }
    flow.check_dims((shape[2], shape[3]), "tensor")?;
    Ok(x.resample(Arc::new(flow.sampling_plan())))
}

/// Squared RGB distance per pixel.
fn per_pixel_sq_error(a: &Frame, b: &Frame) -> Vec<f64> {
    let n = a.pixels();
    (0..n)
        .map(|i| {
            (0..CHANNELS)
                .map(|c| {
                    let d = a.data()[c * n + i] - b.data()[c * n + i];
                    d * d
                })
                .sum()
        })
        .collect()
}

/// `exp(−alpha · ‖frame_t − warp(frame_prev, flow)‖²)` per pixel, the norm
/// taken over RGB.
pub fn visibility_mask(
    frame_t: &Frame,
    frame_prev: &Frame,
    flow: &FlowField,
    alpha: f64,
) -> Result<PixelMask> {
    if frame_t.dims() != frame_prev.dims() {
        return Err(Error::DimensionMismatch(
            "visibility mask frames differ in size".into(),
        ));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Invalid(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    let warped = warp(frame_prev, flow)?;
    let values = per_pixel_sq_error(frame_t, &warped)
        .into_iter()
        .map(|e| (-alpha * e).exp())
        .collect();
    PixelMask::new(frame_t.height(), frame_t.width(), values)
}

/// Binary non-occlusion mask from a forward-backward consistency check.
///
/// `forward` lives on frame `t` and points into `t'`; `backward` lives on
/// `t'` and points back into `t`. A pixel is marked occluded (0) when its
/// forward target leaves the frame, when the round trip does not return
/// (`‖f + b̃‖² > c1·(‖f‖² + ‖b̃‖²) + c2`, `b̃` the backward flow sampled at
/// the forward target), or when it lies on a motion boundary
/// (`‖∇u‖² + ‖∇v‖² > 0.01·‖f‖² + 0.002`).
pub fn occlusion_mask(forward: &FlowField, backward: &FlowField) -> Result<PixelMask> {
    backward.check_dims(forward.dims(), "forward flow")?;
    let (h, w) = forward.dims();
    let mut values = vec![1.0; h * w];
    let grad_sq = flow_gradient_sq(forward);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (fu, fv) = forward.at(y, x);
            let px = x as f64 + fu;
            let py = y as f64 + fv;
            let slack = 1e-3;
            if px < -slack
                || py < -slack
                || px > (w - 1) as f64 + slack
                || py > (h - 1) as f64 + slack
            {
                values[i] = 0.0;
                continue;
            }
            let taps = SamplingPlan::bilinear_taps(px, py, w, h);
            let mut bu = 0.0;
            let mut bv = 0.0;
            for (idx, wt) in taps {
                bu += wt * f64::from(backward.dx()[idx as usize]);
                bv += wt * f64::from(backward.dy()[idx as usize]);
            }
            let residual = (fu + bu).powi(2) + (fv + bv).powi(2);
            let magnitude = fu * fu + fv * fv + bu * bu + bv * bv;
            if residual > CONSISTENCY_C1 * magnitude + CONSISTENCY_C2 {
                values[i] = 0.0;
                continue;
            }
            if grad_sq[i] > MOTION_BOUNDARY_C1 * (fu * fu + fv * fv) + MOTION_BOUNDARY_C2 {
                values[i] = 0.0;
            }
        }
    }
    PixelMask::new(h, w, values)
}

/// `‖∇u‖² + ‖∇v‖²` per pixel with central differences (one-sided at borders).
fn flow_gradient_sq(flow: &FlowField) -> Vec<f64> {
    let (h, w) = flow.dims();
    let diff = |comp: &[f32], y: usize, x: usize| -> (f64, f64) {
        let get = |yy: usize, xx: usize| f64::from(comp[yy * w + xx]);
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let gx = if xr > xl {
            (get(y, xr) - get(y, xl)) / (xr - xl) as f64
        } else {
            0.0
        };
        let gy = if yd > yu {
            (get(yd, x) - get(yu, x)) / (yd - yu) as f64
        } else {
            0.0
        };
        (gx, gy)
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (ux, uy) = diff(flow.dx(), y, x);
            let (vx, vy) = diff(flow.dy(), y, x);
            out.push(ux * ux + uy * uy + vx * vx + vy * vy);
        }
    }
    out
}

/// `(1/M) Σᵢ maskᵢ · ‖aᵢ − bᵢ‖²` with `M = Σᵢ maskᵢ`, the norm over RGB.
pub fn mean_nonoccluded_error(a: &Frame, b_warped: &Frame, mask: &PixelMask) -> Result<f64> {
    if a.dims() != b_warped.dims() || a.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(
            "warping error operands differ in size".into(),
        ));
    }
    let total = mask.sum();
    if total <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let weighted: f64 = per_pixel_sq_error(a, b_warped)
        .iter()
        .zip(mask.values())
        .map(|(e, m)| e * m)
        .sum();
    Ok(weighted / total)
}
