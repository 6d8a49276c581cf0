//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Leaves are
//! either tracked parameters or constants; operations whose inputs are all
//! constants keep no backward closure, so frozen feature extractors and
//! inference runs cost nothing extra.

mod conv;
mod graph;
mod linalg;
mod norm;
mod ops;
mod tensor;

pub use conv::ConvGeometry;
pub use graph::{Gradients, Graph, Var};
pub use linalg::{nuclear_norm_with_subgradient, SamplingPlan, SINGULAR_VALUE_FLOOR};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tensor::gemm;

/// Central finite-difference check of a scalar function of one tensor.
pub mod check {
    use super::{Graph, Tensor, Var};

    /// Analytic and numeric gradients of `f` at `x`.
    pub struct GradCheck {
        pub analytic: Tensor,
        pub numeric: Tensor,
    }

    impl GradCheck {
        /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, zero when both vanish.
        pub fn relative_error(&self) -> f64 {
            let diff = self
                .analytic
                .zip_map(&self.numeric, |a, b| a - b)
                .sq_norm()
                .sqrt();
            let scale = self
                .analytic
                .sq_norm()
                .sqrt()
                .max(self.numeric.sq_norm().sqrt());
            if scale == 0.0 {
                0.0
            } else {
                diff / scale
            }
        }
    }

    /// Evaluates `f` on a fresh graph at `x` (tracked) and at `x ± step·eᵢ`
    /// for every coordinate `i`.
    pub fn gradient_check<F>(x: &Tensor, step: f64, f: F) -> GradCheck
    where
        F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
    {
        let g = Graph::new();
        let input = g.param(x.clone());
        let out = f(&g, input);
        let grads = g.backward(out);
        let analytic = grads.get_or_zeros(input);

        let eval = |t: Tensor| {
            let g = Graph::new();
            let v = g.constant(t);
            f(&g, v).item()
        };
        let mut numeric = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += step;
            let mut minus = x.clone();
            minus.data_mut()[i] -= step;
            numeric.data_mut()[i] = (eval(plus) - eval(minus)) / (2.0 * step);
        }
        GradCheck { analytic, numeric }
    }
}
