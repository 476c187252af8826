use rand_distr::{Distribution, StandardNormal};

use super::{seeded, spectral_normalize, BoundConv, Conv, LEAKY_SLOPE};
use crate::error::{dim_err, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Power-iteration rounds run once at initialisation.
const WARMUP_ITERS: usize = 20;

/// Three-conv patch discriminator, total stride 4, one logit per patch.
/// Every weight is spectrally normalized with a persisted `u` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub in_channels: usize,
    pub base_channels: usize,
    pub convs: Vec<Conv>,
    /// Left singular vector estimates, one per conv.
    pub u: Vec<Vec<f64>>,
    /// Right singular vector estimates, one per conv.
    pub v: Vec<Vec<f64>>,
}

/// Discriminator parameters on a tape with normalized weights.
pub struct BoundDiscriminator<'t> {
    pub layers: Vec<BoundConv<'t>>,
}

impl DiscriminatorParams {
    pub const STRIDE: usize = 4;

    pub fn new(in_channels: usize, base_channels: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || base_channels == 0 {
            return dim_err("discriminator needs positive channel counts");
        }
        let mut rng = seeded(seed);
        let c = base_channels;
        let convs = vec![
            Conv::kaiming(in_channels, c, 3, 2, &mut rng),
            Conv::kaiming(c, 2 * c, 3, 2, &mut rng),
            Conv::kaiming(2 * c, 1, 3, 1, &mut rng),
        ];
        let u = convs
            .iter()
            .map(|cv| (0..cv.out_channels()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let v = convs.iter().map(|cv| vec![0.0; cv.weight.numel() / cv.out_channels()]).collect();
        let mut d = DiscriminatorParams {
            in_channels,
            base_channels,
            convs,
            u,
            v,
        };
        d.refresh(WARMUP_ITERS)?;
        Ok(d)
    }

    /// Runs `iters` power-iteration rounds per weight, updating `u` and `v`.
    /// Degenerate (all-zero) weights leave their vectors untouched.
    pub fn refresh(&mut self, iters: usize) -> Result<()> {
        for (i, conv) in self.convs.iter().enumerate() {
            let est = spectral_normalize(&conv.weight, &self.u[i], iters)?;
            if !est.degenerate {
                self.u[i] = est.u;
                self.v[i] = est.v;
            }
        }
        Ok(())
    }

    /// `u^T W v` with the persisted vectors: the divisor used in the forward pass.
    pub fn sigmas(&self) -> Vec<f64> {
        self.convs
            .iter()
            .zip(self.u.iter().zip(&self.v))
            .map(|(conv, (u, v))| {
                let cols = v.len();
                conv.weight
                    .data()
                    .chunks(cols)
                    .zip(u)
                    .map(|(row, ur)| ur * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    /// Power-iteration estimate of the top singular value of each normalized
    /// weight, starting from the persisted `u`. Close to 1 when the vectors
    /// track the current weights.
    pub fn normalized_sigma_estimates(&self, iters: usize) -> Result<Vec<f64>> {
        self.convs
            .iter()
            .zip(self.sigmas())
            .zip(&self.u)
            .map(|((conv, used), u)| {
                if !(used > 0.0) {
                    return Ok(0.0);
                }
                let scaled = conv.weight.map(|x| x / used);
                Ok(spectral_normalize(&scaled, u, iters)?.sigma)
            })
            .collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<BoundDiscriminator<'t>> {
        let sigmas = self.sigmas();
        let mut layers = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let mut b = conv.bind(tape, trainable);
            if sigmas[i] > 0.0 {
                b.effective = spectral_weight(b.weight, &self.u[i], &self.v[i])?;
            }
            layers.push(b);
        }
        Ok(BoundDiscriminator { layers })
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        let expect = [(self.in_channels, c), (c, 2 * c), (2 * c, 1)];
        if self.convs.len() != expect.len() || self.u.len() != 3 || self.v.len() != 3 {
            return dim_err("discriminator must have exactly 3 convs with power-iteration vectors");
        }
        for (i, (conv, (ci, co))) in self.convs.iter().zip(expect).enumerate() {
            conv.check(&format!("discriminator conv {i}"), ci, co)?;
            if self.u[i].len() != co || self.v[i].len() != conv.weight.numel() / co {
                return dim_err(format!("discriminator conv {i}: power-iteration vector sizes"));
            }
        }
        Ok(())
    }
}

/// `W / (u^T W v)` on the tape; gradients flow through both occurrences of `W`.
pub(crate) fn spectral_weight<'t>(w: Var<'t>, u: &[f64], v: &[f64]) -> Result<Var<'t>> {
    let cols = v.len();
    let outer = Tensor::from_fn(&w.shape(), |k| u[k / cols] * v[k % cols]);
    let sigma = w.mul(w.tape().constant(outer))?.sum();
    w.scale_by(sigma.powf(-1.0))
}

/// Patch logits `[H/4, W/4]` for a `[C, H, W]` image.
pub fn discriminator_forward<'t>(d: &BoundDiscriminator<'t>, image: Var<'t>) -> Result<Var<'t>> {
    let mut x = image;
    let last = d.layers.len() - 1;
    for (i, layer) in d.layers.iter().enumerate() {
        x = layer.forward(x)?;
        if i < last {
            x = x.leaky_relu(LEAKY_SLOPE);
        }
    }
    let s = x.shape();
    x.reshape(&[s[1], s[2]])
}
