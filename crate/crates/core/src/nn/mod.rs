//! Minimal deterministic layers with hand-written backward passes.
//!
//! Everything is f64, NHWC. Matrix products go through `matrixmultiply`,
//! which is single-threaded and reduces in a fixed order.

mod gemm;
mod layer;
mod optim;
mod seq;
mod tensor;

pub use gemm::{gemm, Trans};
pub use layer::{relu, relu_backward, upsample2x, upsample2x_backward, Layer, LayerGrad, LayerKind};
pub use optim::{lr_at, Adam, AdamConfig};
pub use seq::{Op, Sequential, Tape};
pub use tensor::Tensor4;

/// Rounds every value to the nearest f32, keeping the f64 storage.
pub fn round_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}
