//! Minimal CPU tensor autodiff used by the enhancer and detector networks.
//!
//! Activations are `[channel, batch, height, width]` f32 buffers; the only
//! heavy kernel is im2col convolution on top of `matrixmultiply`'s sgemm.

mod gemm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{conv_forward, Tape, Var};
pub use tensor::{Shape, Tensor};

/// A convolution layer: parameter handles plus geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let (weight, bias) = store.conv(name, in_ch, out_ch, k, gain, rng);
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}
