//! Per-channel spatial statistics: instance normalization and moments.

use super::{Tensor, Var};

impl<'g> Var<'g> {
    /// Instance normalization with affine parameters `gamma`, `beta` of shape `[c]`.
    ///
    /// Each `(sample, channel)` plane is normalized by its own biased variance.
    pub fn instance_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Var<'g> {
        let x = self.value();
        let gv = gamma.value();
        let bv = beta.value();
        let (n, c, h, w) = x.dims4();
        assert!(
            gv.len() == c && bv.len() == c,
            "instance_norm: affine params must have {c} entries"
        );
        let plane = h * w;
        let mut xhat = Tensor::zeros(&[n, c, h, w]);
        let mut inv_std = vec![0.0; n * c];
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for p in 0..n * c {
            let ch = p % c;
            let src = &x.data()[p * plane..(p + 1) * plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[p] = istd;
            let xh = &mut xhat.data_mut()[p * plane..(p + 1) * plane];
            for (d, &s) in xh.iter_mut().zip(src) {
                *d = (s - mean) * istd;
            }
            let o = &mut out.data_mut()[p * plane..(p + 1) * plane];
            for (d, &s) in o.iter_mut().zip(xh.iter()) {
                *d = gv.data()[ch] * s + bv.data()[ch];
            }
        }
        self.graph.push(out, &[self, gamma, beta], move |g| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let m = plane as f64;
            for p in 0..n * c {
                let ch = p % c;
                let gs = &g.data()[p * plane..(p + 1) * plane];
                let xh = &xhat.data()[p * plane..(p + 1) * plane];
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for (&gi, &xi) in gs.iter().zip(xh) {
                    sum_g += gi;
                    sum_gx += gi * xi;
                }
                ggamma[ch] += sum_gx;
                gbeta[ch] += sum_g;
                let scale = gv.data()[ch] * inv_std[p] / m;
                let dst = &mut gx.data_mut()[p * plane..(p + 1) * plane];
                for ((d, &gi), &xi) in dst.iter_mut().zip(gs).zip(xh) {
                    *d = scale * (m * gi - sum_g - xi * sum_gx);
                }
            }
            vec![
                Some(gx),
                Some(Tensor::new(&[c], ggamma)),
                Some(Tensor::new(&[c], gbeta)),
            ]
        })
    }

    /// Spatial mean of every channel: `[n, c, h, w] -> [n, c]`.
    pub fn channel_mean(self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let means: Vec<f64> = (0..n * c)
            .map(|p| x.data()[p * plane..(p + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        self.graph
            .push(Tensor::new(&[n, c], means), &[self], move |g| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for p in 0..n * c {
                    let v = g.data()[p] / plane as f64;
                    gx.data_mut()[p * plane..(p + 1) * plane].fill(v);
                }
                vec![Some(gx)]
            })
    }

    /// Spatial population standard deviation of every channel,
    /// `sqrt(var + eps)`: `[n, c, h, w] -> [n, c]`.
    pub fn channel_std(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut means = vec![0.0; n * c];
        let mut stds = vec![0.0; n * c];
        for p in 0..n * c {
            let src = &x.data()[p * plane..(p + 1) * plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            means[p] = mean;
            stds[p] = (var + eps).sqrt();
        }
        let out = Tensor::new(&[n, c], stds.clone());
        self.graph.push(out, &[self], move |g| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for p in 0..n * c {
                let k = g.data()[p] / (plane as f64 * stds[p]);
                let src = &x.data()[p * plane..(p + 1) * plane];
                let dst = &mut gx.data_mut()[p * plane..(p + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = k * (s - means[p]);
                }
            }
            vec![Some(gx)]
        })
    }
}
