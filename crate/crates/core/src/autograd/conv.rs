//! Convolution, transposed convolution and pooling on NCHW tensors.
//!
//! Both convolutions lower to `im2col` + GEMM; the transposed convolution is
//! the adjoint of the direct one, so the same column buffers serve all four
//! passes.

use std::sync::Arc;

use super::tensor::gemm;
use super::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(
            kernel >= 1 && stride >= 1,
            "kernel and stride must be positive"
        );
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output side length of a direct convolution over `size` input pixels.
    pub fn conv_out(&self, size: usize) -> usize {
        let padded = size + 2 * self.padding;
        assert!(
            padded >= self.kernel,
            "input side {size} too small for kernel {} with padding {}",
            self.kernel,
            self.padding
        );
        (padded - self.kernel) / self.stride + 1
    }

    /// Output side length of a transposed convolution.
    pub fn conv_transpose_out(&self, size: usize, output_padding: usize) -> usize {
        (size - 1) * self.stride + self.kernel + output_padding - 2 * self.padding
    }
}

/// Unfolds one `[c, h, w]` image into `[c·k·k, oh·ow]` columns.
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    geo: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let k = geo.kernel;
    let p = geo.padding as isize;
    let s = geo.stride as isize;
    let cols_n = oh * ow;
    let mut cols = vec![0.0; c * k * k * cols_n];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `out`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    geo: ConvGeometry,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let k = geo.kernel;
    let p = geo.padding as isize;
    let s = geo.stride as isize;
    let cols_n = oh * ow;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (ch, &b) in bias.iter().enumerate() {
        for v in &mut out[ch * plane..(ch + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let (n, c, h, w) = g.dims4();
    let plane = h * w;
    let mut gb = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc += g.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                .iter()
                .sum::<f64>();
        }
    }
    Tensor::new(&[c], gb)
}

impl<'g> Var<'g> {
    /// Zero-padded 2-D convolution. `weight` is `[c_out, c_in, k, k]`, `bias` is `[c_out]`.
    pub fn conv2d(self, weight: Var<'g>, bias: Option<Var<'g>>, geo: ConvGeometry) -> Var<'g> {
        let x = self.value();
        let wt = weight.value();
        let (n, cin, h, w) = x.dims4();
        let (cout, wcin, kh, kw) = wt.dims4();
        assert_eq!(
            wcin, cin,
            "conv2d: input has {cin} channels, weight expects {wcin}"
        );
        assert!(
            kh == geo.kernel && kw == geo.kernel,
            "conv2d: kernel size mismatch"
        );
        let oh = geo.conv_out(h);
        let ow = geo.conv_out(w);
        let kdim = cin * kh * kw;
        let out_plane = oh * ow;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            let xs = &x.data()[b * cin * h * w..(b + 1) * cin * h * w];
            let dst = &mut out.data_mut()[b * cout * out_plane..(b + 1) * cout * out_plane];
            if geo.kernel == 1 && geo.stride == 1 && geo.padding == 0 {
                gemm(
                    cout,
                    kdim,
                    out_plane,
                    wt.data(),
                    false,
                    xs,
                    false,
                    dst,
                    false,
                );
            } else {
                let cols = im2col(xs, cin, h, w, geo, oh, ow);
                gemm(
                    cout,
                    kdim,
                    out_plane,
                    wt.data(),
                    false,
                    &cols,
                    false,
                    dst,
                    false,
                );
            }
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.len(), cout, "conv2d: bias length");
            for b in 0..n {
                add_bias(
                    &mut out.data_mut()[b * cout * out_plane..(b + 1) * cout * out_plane],
                    bv.data(),
                    out_plane,
                );
            }
        }
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let graph = self.graph;
        let need_x = self.requires_grad();
        graph.push(out, &parents, move |g| {
            let mut gx = need_x.then(|| Tensor::zeros(&[n, cin, h, w]));
            let mut gw = Tensor::zeros(wt.shape());
            for b in 0..n {
                let xs = &x.data()[b * cin * h * w..(b + 1) * cin * h * w];
                let gs = &g.data()[b * cout * out_plane..(b + 1) * cout * out_plane];
                let direct = geo.kernel == 1 && geo.stride == 1 && geo.padding == 0;
                let cols_owned;
                let cols: &[f64] = if direct {
                    xs
                } else {
                    cols_owned = im2col(xs, cin, h, w, geo, oh, ow);
                    &cols_owned
                };
                gemm(
                    cout,
                    out_plane,
                    kdim,
                    gs,
                    false,
                    cols,
                    true,
                    gw.data_mut(),
                    true,
                );
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.data_mut()[b * cin * h * w..(b + 1) * cin * h * w];
                    if direct {
                        gemm(kdim, cout, out_plane, wt.data(), true, gs, false, dst, true);
                    } else {
                        let mut gcols = vec![0.0; kdim * out_plane];
                        gemm(
                            kdim,
                            cout,
                            out_plane,
                            wt.data(),
                            true,
                            gs,
                            false,
                            &mut gcols,
                            false,
                        );
                        col2im(&gcols, cin, h, w, geo, oh, ow, dst);
                    }
                }
            }
            let mut grads = vec![gx, Some(gw)];
            if has_bias {
                grads.push(Some(bias_grad(g)));
            }
            grads
        })
    }

    /// Transposed convolution (the adjoint of [`Var::conv2d`] with the same
    /// geometry). `weight` is `[c_in, c_out, k, k]`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        geo: ConvGeometry,
        output_padding: usize,
    ) -> Var<'g> {
        let x = self.value();
        let wt = weight.value();
        let (n, cin, h, w) = x.dims4();
        let (wcin, cout, kh, kw) = wt.dims4();
        assert_eq!(
            wcin, cin,
            "conv_transpose2d: input has {cin} channels, weight expects {wcin}"
        );
        assert!(
            kh == geo.kernel && kw == geo.kernel,
            "conv_transpose2d: kernel size mismatch"
        );
        assert!(
            output_padding < geo.stride,
            "output padding must be below stride"
        );
        let oh = geo.conv_transpose_out(h, output_padding);
        let ow = geo.conv_transpose_out(w, output_padding);
        assert_eq!(geo.conv_out(oh), h, "inconsistent transposed geometry");
        let kdim = cout * kh * kw;
        let in_plane = h * w;
        let out_plane = oh * ow;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            let xs = &x.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
            let mut cols = vec![0.0; kdim * in_plane];
            gemm(
                kdim,
                cin,
                in_plane,
                wt.data(),
                true,
                xs,
                false,
                &mut cols,
                false,
            );
            let dst = &mut out.data_mut()[b * cout * out_plane..(b + 1) * cout * out_plane];
            col2im(&cols, cout, oh, ow, geo, h, w, dst);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.len(), cout, "conv_transpose2d: bias length");
            for b in 0..n {
                add_bias(
                    &mut out.data_mut()[b * cout * out_plane..(b + 1) * cout * out_plane],
                    bv.data(),
                    out_plane,
                );
            }
        }
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let graph = self.graph;
        let need_x = self.requires_grad();
        graph.push(out, &parents, move |g| {
            let mut gx = need_x.then(|| Tensor::zeros(&[n, cin, h, w]));
            let mut gw = Tensor::zeros(wt.shape());
            for b in 0..n {
                let xs = &x.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
                let gs = &g.data()[b * cout * out_plane..(b + 1) * cout * out_plane];
                let gcols = im2col(gs, cout, oh, ow, geo, h, w);
                gemm(
                    cin,
                    in_plane,
                    kdim,
                    xs,
                    false,
                    &gcols,
                    true,
                    gw.data_mut(),
                    true,
                );
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.data_mut()[b * cin * in_plane..(b + 1) * cin * in_plane];
                    gemm(
                        cin,
                        kdim,
                        in_plane,
                        wt.data(),
                        false,
                        &gcols,
                        false,
                        dst,
                        false,
                    );
                }
            }
            let mut grads = vec![gx, Some(gw)];
            if has_bias {
                grads.push(Some(bias_grad(g)));
            }
            grads
        })
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        assert!(oh > 0 && ow > 0, "max_pool2 on {h}×{w} input");
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = src[best];
                    argmax[o] = plane * h * w + best;
                }
            }
        }
        let argmax = Arc::new(argmax);
        self.graph.push(out, &[self], move |g| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for (o, &src) in argmax.iter().enumerate() {
                gx.data_mut()[src] += g.data()[o];
            }
            vec![Some(gx)]
        })
    }
}
