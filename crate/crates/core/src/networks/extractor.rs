use std::path::Path;

use super::{seeded, Conv, LEAKY_SLOPE};
use crate::checkpoint::Checkpoint;
use crate::error::{dim_err, Result};
use crate::pmc::FeaturePyramid;
use crate::tensor::Var;

/// Seed of the built-in extractor weights.
pub const EXTRACTOR_SEED: u64 = 0x5eed_0f_ea7;

/// Output channels of the three levels (strides 2, 4, 8).
pub const EXTRACTOR_CHANNELS: [usize; 3] = [16, 32, 64];

/// Frozen multi-scale feature extractor: three stride-2 conv + leaky ReLU
/// stages. It is never trained; its weights are bound as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub convs: Vec<Conv>,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl ExtractorParams {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut c_in = 3;
        let convs = EXTRACTOR_CHANNELS
            .iter()
            .map(|&c_out| {
                let conv = Conv::kaiming(c_in, c_out, 3, 2, &mut rng);
                c_in = c_out;
                conv
            })
            .collect();
        ExtractorParams { convs }
    }

    pub fn record_names(level: usize) -> (String, String) {
        (format!("extractor.{level}.weight"), format!("extractor.{level}.bias"))
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint) {
        for (i, conv) in self.convs.iter().enumerate() {
            let (w, b) = Self::record_names(i);
            ckpt.put_tensor(&w, &conv.weight);
            ckpt.put_tensor(&b, &conv.bias);
        }
    }

    /// Reads `extractor.{0,1,2}.{weight,bias}` records (f64 or f32), e.g.
    /// weights exported from a pretrained network.
    pub fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let mut c_in = 3;
        let mut convs = Vec::new();
        for (i, &c_out) in EXTRACTOR_CHANNELS.iter().enumerate() {
            let (w, b) = Self::record_names(i);
            let weight = ckpt.tensor_shaped(&w, &[c_out, c_in, 3, 3])?;
            let bias = ckpt.tensor_shaped(&b, &[c_out])?;
            let conv = Conv {
                weight,
                bias,
                stride: 2,
            };
            conv.check(&w, c_in, c_out)?;
            convs.push(conv);
            c_in = c_out;
        }
        Ok(ExtractorParams { convs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&Checkpoint::load(path)?)
    }

    pub fn checksum(&self) -> u64 {
        super::checksum(&self.convs)
    }
}

/// Features of a `[3, H, W]` image, finest level first (strides 2, 4, 8).
pub fn extractor_forward<'t>(params: &ExtractorParams, image: Var<'t>) -> Result<FeaturePyramid<'t>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return dim_err(format!("extractor expects [3, H, W], got {s:?}"));
    }
    let tape = image.tape();
    let mut x = image;
    let mut levels = Vec::with_capacity(params.convs.len());
    for conv in &params.convs {
        x = conv.bind(tape, false).forward(x)?.leaky_relu(LEAKY_SLOPE);
        levels.push(x);
    }
    Ok(FeaturePyramid::new(levels))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{gradcheck, Tape, Tensor};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    fn levels(p: &ExtractorParams, x: &Tensor) -> Vec<Tensor> {
        let tape = Tape::new();
        let pyr = extractor_forward(p, tape.constant(x.clone())).unwrap();
        pyr.levels.iter().map(|l| (*l.value()).clone()).collect()
    }

    #[test]
    fn level_shapes() {
        let shapes: Vec<Vec<usize>> = levels(&ExtractorParams::default(), &random(&[3, 64, 64], 1))
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        assert_eq!(shapes, vec![vec![16, 32, 32], vec![32, 16, 16], vec![64, 8, 8]]);
    }

    #[test]
    fn deterministic_and_discriminative() {
        let p = ExtractorParams::default();
        assert_eq!(p, ExtractorParams::new(EXTRACTOR_SEED));
        assert_eq!(p.checksum(), ExtractorParams::default().checksum());
        let (a, b) = (random(&[3, 16, 16], 2), random(&[3, 16, 16], 3));
        let (la, lb) = (levels(&p, &a), levels(&p, &b));
        assert_eq!(la, levels(&p, &a));
        for (x, y) in la.iter().zip(&lb) {
            assert!(x.max_abs_diff(y) > 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ExtractorParams::new(9);
        let mut ck = Checkpoint::new();
        p.write_to(&mut ck);
        assert_eq!(ExtractorParams::read_from(&ck).unwrap(), p);
        ck.records.retain(|r| r.name != "extractor.2.bias");
        assert!(ExtractorParams::read_from(&ck).is_err());
    }

    #[test]
    fn gradient_reaches_the_image_only() {
        let p = ExtractorParams::default();
        let x = random(&[3, 8, 8], 4);
        let proj = random(&[64, 1, 1], 5);
        let r = gradcheck(
            |tape, v| {
                let pyr = extractor_forward(&p, v[0])?;
                Ok(pyr.levels[2].mul(tape.constant(proj.clone()))?.sum())
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
