//! Elementwise, reduction and shape operations on [`Var`].

use std::sync::Arc;

use super::{Tensor, Var};

impl<'g> Var<'g> {
    fn unary(self, value: Tensor, local_grad: impl Fn(&Tensor) -> Tensor + 'static) -> Var<'g> {
        self.graph
            .push(value, &[self], move |g| vec![Some(local_grad(g))])
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let value = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.push(value, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let value = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.push(value, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.scale(-1.0))]
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = other.value();
        let value = a.zip_map(&b, |x, y| x * y);
        self.graph.push(value, &[self, other], move |g| {
            vec![
                Some(g.zip_map(&b, |gv, bv| gv * bv)),
                Some(g.zip_map(&a, |gv, av| gv * av)),
            ]
        })
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(self, c: Arc<Tensor>) -> Var<'g> {
        let value = self.value().zip_map(&c, |x, y| x * y);
        self.unary(value, move |g| g.zip_map(&c, |gv, cv| gv * cv))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(self, c: &Tensor) -> Var<'g> {
        let value = self.value().zip_map(c, |x, y| x + y);
        self.unary(value, |g| g.clone())
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let value = self.value().scale(s);
        self.unary(value, move |g| g.scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        let value = self.value().map(|v| v + s);
        self.unary(value, |g| g.clone())
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'g> {
        let x = self.value();
        let value = x.map(|v| v.max(0.0));
        self.unary(value, move |g| {
            g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
        })
    }

    pub fn sigmoid(self) -> Var<'g> {
        let y = Arc::new(self.value().map(|v| 1.0 / (1.0 + (-v).exp())));
        let out = Arc::clone(&y);
        self.unary((*y).clone(), move |g| {
            g.zip_map(&out, |gv, yv| gv * yv * (1.0 - yv))
        })
    }

    pub fn tanh(self) -> Var<'g> {
        let y = Arc::new(self.value().map(f64::tanh));
        let out = Arc::clone(&y);
        self.unary((*y).clone(), move |g| {
            g.zip_map(&out, |gv, yv| gv * (1.0 - yv * yv))
        })
    }

    pub fn exp(self) -> Var<'g> {
        let y = Arc::new(self.value().map(f64::exp));
        let out = Arc::clone(&y);
        self.unary((*y).clone(), move |g| g.zip_map(&out, |gv, yv| gv * yv))
    }

    /// `|x|`, with zero subgradient at the kink.
    pub fn abs(self) -> Var<'g> {
        let x = self.value();
        let value = x.map(f64::abs);
        self.unary(value, move |g| g.zip_map(&x, |gv, xv| gv * sign(xv)))
    }

    pub fn sqr(self) -> Var<'g> {
        let x = self.value();
        let value = x.map(|v| v * v);
        self.unary(value, move |g| g.zip_map(&x, |gv, xv| 2.0 * gv * xv))
    }

    pub fn sqrt(self) -> Var<'g> {
        let y = Arc::new(self.value().map(f64::sqrt));
        let out = Arc::clone(&y);
        self.unary((*y).clone(), move |g| {
            g.zip_map(&out, |gv, yv| if yv > 0.0 { gv * 0.5 / yv } else { 0.0 })
        })
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| {
            Tensor::full(&shape, g.item())
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// `Σ|x|` in one node.
    pub fn sum_abs(self) -> Var<'g> {
        let x = self.value();
        let total = x.data().iter().map(|v| v.abs()).sum();
        self.unary(Tensor::scalar(total), move |g| {
            let gv = g.item();
            x.map(|xv| gv * sign(xv))
        })
    }

    /// Euclidean norm of all elements, with zero subgradient at the origin.
    pub fn norm_l2(self) -> Var<'g> {
        let x = self.value();
        let norm = x.sq_norm().sqrt();
        self.unary(Tensor::scalar(norm), move |g| {
            if norm > 0.0 {
                x.scale(g.item() / norm)
            } else {
                Tensor::zeros(x.shape())
            }
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let value = (*x).clone().reshaped(shape);
        self.unary(value, move |g| g.clone().reshaped(&old))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = values[0].shape();
        assert!(
            axis < first.len(),
            "concat axis {axis} out of range for {first:?}"
        );
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut sizes = Vec::with_capacity(values.len());
        for v in &values {
            let s = v.shape();
            assert!(
                s.len() == first.len()
                    && s[..axis] == first[..axis]
                    && s[axis + 1..] == first[axis + 1..],
                "concat shape mismatch: {first:?} vs {s:?}"
            );
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &sz) in values.iter().zip(&sizes) {
                let chunk = sz * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, data);
        let graph = parts[0].graph;
        graph.push(value, parts, move |g| {
            let mut grads: Vec<Vec<f64>> = sizes
                .iter()
                .map(|&sz| Vec::with_capacity(outer * sz * inner))
                .collect();
            let gd = g.data();
            let mut offset = 0;
            for _ in 0..outer {
                for (gr, &sz) in grads.iter_mut().zip(&sizes) {
                    let chunk = sz * inner;
                    gr.extend_from_slice(&gd[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            grads
                .into_iter()
                .zip(&sizes)
                .map(|(gr, &sz)| {
                    let mut s = shape.clone();
                    s[axis] = sz;
                    Some(Tensor::new(&s, gr))
                })
                .collect()
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(
            axis < shape.len() && start + len <= shape[axis],
            "narrow out of range"
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.unary(Tensor::new(&out_shape, data), move |g| {
            let mut gx = Tensor::zeros(&shape);
            let gd = g.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx.data_mut()[base..base + len * inner]
                    .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            gx
        })
    }

    /// Per-pixel weighted sum over channels of an NCHW tensor, giving `[n, 1, h, w]`.
    pub fn channel_weighted_sum(self, weights: &[f64]) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        assert_eq!(weights.len(), c, "one weight per channel");
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for b in 0..n {
            let dst = &mut out.data_mut()[b * plane..(b + 1) * plane];
            for (ch, &wt) in weights.iter().enumerate() {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
        let weights = weights.to_vec();
        self.unary(out, move |g| {
            let mut gx = Tensor::zeros(&[n, c, h, w]);
            for b in 0..n {
                let src = &g.data()[b * plane..(b + 1) * plane];
                for (ch, &wt) in weights.iter().enumerate() {
                    let dst = &mut gx.data_mut()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = wt * s;
                    }
                }
            }
            gx
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'g> std::ops::Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        Var::add(self, rhs)
    }
}

impl<'g> std::ops::Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        Var::sub(self, rhs)
    }
}

impl<'g> std::ops::Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        Var::mul(self, rhs)
    }
}
