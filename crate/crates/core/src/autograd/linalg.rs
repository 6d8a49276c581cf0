//! Sampling (gather) and spectral operations.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Tensor, Var};

/// Fixed linear resampling of image planes: every output pixel is a weighted
/// sum of up to four input pixels of the same plane.
///
/// Bilinear warps and resizes both compile to one of these; since the plan is
/// constant, the resulting operation is linear in the image values.
#[derive(Clone, Debug)]
pub struct SamplingPlan {
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    taps: Vec<[(u32, f64); 4]>,
}

impl SamplingPlan {
    pub fn new(
        in_height: usize,
        in_width: usize,
        out_height: usize,
        out_width: usize,
        taps: Vec<[(u32, f64); 4]>,
    ) -> Self {
        assert_eq!(
            taps.len(),
            out_height * out_width,
            "one tap set per output pixel"
        );
        let in_len = in_height * in_width;
        assert!(
            taps.iter().flatten().all(|&(i, _)| (i as usize) < in_len),
            "tap index outside the input plane"
        );
        Self {
            in_height,
            in_width,
            out_height,
            out_width,
            taps,
        }
    }

    /// Bilinear taps for sampling at continuous position `(x, y)` with the
    /// position clamped to the plane (border replication).
    pub fn bilinear_taps(x: f64, y: f64, width: usize, height: usize) -> [(u32, f64); 4] {
        let xc = x.clamp(0.0, (width - 1) as f64);
        let yc = y.clamp(0.0, (height - 1) as f64);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let idx = |yy: usize, xx: usize| (yy * width + xx) as u32;
        [
            (idx(y0, x0), (1.0 - fx) * (1.0 - fy)),
            (idx(y0, x1), fx * (1.0 - fy)),
            (idx(y1, x0), (1.0 - fx) * fy),
            (idx(y1, x1), fx * fy),
        ]
    }

    /// Applies the plan to one plane.
    pub fn apply_plane(&self, src: &[f64], dst: &mut [f64]) {
        debug_assert_eq!(src.len(), self.in_height * self.in_width);
        for (d, taps) in dst.iter_mut().zip(&self.taps) {
            *d = taps.iter().map(|&(i, w)| w * src[i as usize]).sum();
        }
    }

    /// Adjoint of [`SamplingPlan::apply_plane`], accumulating into `dst`.
    pub fn scatter_plane(&self, grad: &[f64], dst: &mut [f64]) {
        for (&g, taps) in grad.iter().zip(&self.taps) {
            for &(i, w) in taps {
                dst[i as usize] += w * g;
            }
        }
    }

    /// Applies the plan to every plane of an NCHW tensor.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert!(
            h == self.in_height && w == self.in_width,
            "sampling plan expects {}×{} input, got {h}×{w}",
            self.in_height,
            self.in_width
        );
        let in_plane = h * w;
        let out_plane = self.out_height * self.out_width;
        let mut out = Tensor::zeros(&[n, c, self.out_height, self.out_width]);
        for p in 0..n * c {
            self.apply_plane(
                &x.data()[p * in_plane..(p + 1) * in_plane],
                &mut out.data_mut()[p * out_plane..(p + 1) * out_plane],
            );
        }
        out
    }
}

impl<'g> Var<'g> {
    /// Resamples every plane through a constant [`SamplingPlan`].
    pub fn resample(self, plan: Arc<SamplingPlan>) -> Var<'g> {
        let x = self.value();
        let out = plan.apply(&x);
        let (n, c, h, w) = x.dims4();
        self.graph.push(out, &[self], move |g| {
            let in_plane = h * w;
            let out_plane = plan.out_height * plan.out_width;
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for p in 0..n * c {
                plan.scatter_plane(
                    &g.data()[p * out_plane..(p + 1) * out_plane],
                    &mut gx.data_mut()[p * in_plane..(p + 1) * in_plane],
                );
            }
            vec![Some(gx)]
        })
    }

    /// Nuclear norm (sum of singular values) of a 2-D tensor.
    ///
    /// The backward pass uses the subgradient `U·Vᵀ` built from singular
    /// pairs whose value exceeds `1e-8`.
    pub fn nuclear_norm(self) -> Var<'g> {
        let x = self.value();
        assert_eq!(
            x.ndim(),
            2,
            "nuclear_norm expects a matrix, got {:?}",
            x.shape()
        );
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let (value, subgrad) = nuclear_norm_with_subgradient(x.data(), rows, cols);
        self.graph.push(Tensor::scalar(value), &[self], move |g| {
            vec![Some(subgrad.scale(g.item()))]
        })
    }
}

/// Singular values below this are treated as zero in the subgradient.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-8;

/// Returns `‖X‖_*` and `U_r V_rᵀ` for the row-major `rows×cols` matrix `X`.
pub fn nuclear_norm_with_subgradient(data: &[f64], rows: usize, cols: usize) -> (f64, Tensor) {
    if rows == 0 || cols == 0 {
        return (0.0, Tensor::zeros(&[rows, cols]));
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let value = svd.singular_values.iter().sum();
    let mut sub = DMatrix::<f64>::zeros(rows, cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > SINGULAR_VALUE_FLOOR {
            sub += u.column(i) * v_t.row(i);
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(sub[(r, c)]);
        }
    }
    (value, Tensor::new(&[rows, cols], out))
}
