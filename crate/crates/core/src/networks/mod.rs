//! Generator, patch discriminators and the frozen feature extractor.
//!
//! Parameters live in plain [`Tensor`]s. A forward pass first binds them to a
//! [`Tape`] (as trainable leaves or constants) and then runs on the bound
//! copies, so the same parameter set can be used for training and inference.

mod discriminator;
mod extractor;
mod generator;
mod spectral;

pub use discriminator::{discriminator_forward, BoundDiscriminator, DiscriminatorParams};
pub use extractor::{extractor_forward, ExtractorParams, EXTRACTOR_CHANNELS, EXTRACTOR_SEED};
pub use generator::{generator_forward, GeneratorOutput, GeneratorParams};
pub use spectral::{spectral_normalize, SpectralEstimate};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Negative slope used by every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Default seed for parameter initialisation.
pub const DEFAULT_SEED: u64 = 42;

/// A square-kernel convolution with "same" padding (`k / 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// `[C_out, C_in, k, k]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv {
    /// Kaiming-normal weights for a leaky-ReLU network, zero bias.
    pub fn kaiming(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Conv {
        let fan_in = (c_in * k * k) as f64;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
        Conv {
            weight: Tensor::from_fn(&[c_out, c_in, k, k], |_| normal.sample(rng)),
            bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        Conv {
            weight: Tensor::zeros(&[c_out, c_in, k, k]),
            bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundConv<'t> {
        let (weight, bias) = if trainable {
            (tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        };
        BoundConv {
            weight,
            bias,
            effective: weight,
            stride: self.stride,
        }
    }

    fn check(&self, what: &str, c_in: usize, c_out: usize) -> Result<()> {
        let s = self.weight.shape();
        if s.len() != 4 || s[1] != c_in || s[0] != c_out || s[2] != s[3] || s[2].is_multiple_of(2) || self.bias.shape() != [c_out]
        {
            return dim_err(format!(
                "{what}: weight {s:?} / bias {:?}, expected {c_out} <- {c_in}",
                self.bias.shape()
            ));
        }
        if !(self.weight.is_finite() && self.bias.is_finite()) {
            return Err(Error::Numeric(format!("{what}: non-finite parameters")));
        }
        Ok(())
    }
}

/// A convolution whose parameters sit on a tape. `weight` and `bias` are the
/// leaves to read gradients from; `effective` is the weight actually applied
/// (it differs from `weight` under spectral normalization).
#[derive(Clone, Copy)]
pub struct BoundConv<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub effective: Var<'t>,
    pub stride: usize,
}

impl<'t> BoundConv<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let k = self.effective.shape()[2];
        x.conv2d(self.effective, self.bias, self.stride, k / 2)
    }
}

/// Gradients of a bound conv stack, in the same order as the parameters.
pub fn conv_gradients(grads: &crate::tensor::Gradients, bound: &[BoundConv<'_>]) -> Vec<(Tensor, Tensor)> {
    bound.iter().map(|b| (grads.wrt(b.weight), grads.wrt(b.bias))).collect()
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cheap order-sensitive checksum over all parameters.
pub fn checksum(convs: &[Conv]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in convs {
        for v in c.weight.data().iter().chain(c.bias.data()) {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
