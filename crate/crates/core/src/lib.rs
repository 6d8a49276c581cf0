#![allow(
    clippy::should_implement_trait,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

pub mod autograd;
pub mod error;
pub mod features;
pub mod flow;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod tensor_file;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
