use super::{seeded, BoundConv, Conv, LEAKY_SLOPE};
use crate::error::{dim_err, Result};
use crate::ssa::{ssa_layer, SsaConfig};
use crate::tensor::{Tape, Tensor, Var};

const STEM: usize = 0;
const DOWN: [usize; 2] = [1, 2];
const RES_FIRST: usize = 3;
const RES_BLOCKS: usize = 4;
const UP: [usize; 2] = [11, 12];
const OUT: usize = 13;
const N_CONVS: usize = 14;

/// Encoder-decoder generator: a full-resolution stem, two stride-2 convs,
/// four residual blocks, two bilinear-upsample + conv stages and a sigmoid
/// output projection.
///
/// `convs` is ordered stem, down x2, residual (two convs per block) x4,
/// up x2, output.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub base_channels: usize,
    pub convs: Vec<Conv>,
}

pub struct GeneratorOutput<'t> {
    pub output: Var<'t>,
    /// Encoder features by scale: `[C, H, W]`, `[2C, H/2, W/2]`, `[4C, H/4, W/4]`.
    pub encoder_feats: Vec<Var<'t>>,
    /// Decoder features by scale after alignment: `[C, H, W]`, `[2C, H/2, W/2]`.
    pub decoder_feats: Vec<Var<'t>>,
}

impl GeneratorParams {
    pub fn new(base_channels: usize, seed: u64) -> Result<Self> {
        if base_channels == 0 {
            return dim_err("generator base_channels must be positive");
        }
        let c = base_channels;
        let mut rng = seeded(seed);
        let mut convs = vec![
            Conv::kaiming(3, c, 3, 1, &mut rng),
            Conv::kaiming(c, 2 * c, 3, 2, &mut rng),
            Conv::kaiming(2 * c, 4 * c, 3, 2, &mut rng),
        ];
        for _ in 0..RES_BLOCKS {
            convs.push(Conv::kaiming(4 * c, 4 * c, 3, 1, &mut rng));
            let mut second = Conv::kaiming(4 * c, 4 * c, 3, 1, &mut rng);
            // Small residual branches at init keep the trunk near identity.
            second.weight = second.weight.map(|w| 0.1 * w);
            convs.push(second);
        }
        convs.push(Conv::kaiming(4 * c, 2 * c, 3, 1, &mut rng));
        convs.push(Conv::kaiming(2 * c, c, 3, 1, &mut rng));
        convs.push(Conv::kaiming(c, 3, 3, 1, &mut rng));
        Ok(GeneratorParams { base_channels, convs })
    }

    /// Zeroes both convs of every residual block so each block is the identity.
    pub fn zero_residual_blocks(&mut self) {
        for conv in &mut self.convs[RES_FIRST..RES_FIRST + 2 * RES_BLOCKS] {
            *conv = Conv::zeros(conv.in_channels(), conv.out_channels(), conv.kernel(), conv.stride);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.len() != N_CONVS {
            return dim_err(format!("generator needs {N_CONVS} convs, got {}", self.convs.len()));
        }
        let c = self.base_channels;
        let mut expect = vec![(3, c, 1), (c, 2 * c, 2), (2 * c, 4 * c, 2)];
        expect.extend(std::iter::repeat_n((4 * c, 4 * c, 1), 2 * RES_BLOCKS));
        expect.extend([(4 * c, 2 * c, 1), (2 * c, c, 1), (c, 3, 1)]);
        for (i, (conv, (ci, co, stride))) in self.convs.iter().zip(expect).enumerate() {
            conv.check(&format!("generator conv {i}"), ci, co)?;
            if conv.stride != stride {
                return dim_err(format!("generator conv {i}: stride {} (expected {stride})", conv.stride));
            }
        }
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<BoundConv<'t>> {
        self.convs.iter().map(|c| c.bind(tape, trainable)).collect()
    }

    /// Inference on a single `[3, H, W]` frame.
    pub fn stylize(&self, image: &Tensor, ssa: &SsaConfig) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = generator_forward(&bound, tape.constant(image.clone()), ssa)?;
        Ok((*out.output.value()).clone())
    }

    pub fn checksum(&self) -> u64 {
        super::checksum(&self.convs)
    }
}

/// Stylizes a `[3, H, W]` frame with `H` and `W` divisible by 4.
pub fn generator_forward<'t>(
    convs: &[BoundConv<'t>],
    image: Var<'t>,
    ssa: &SsaConfig,
) -> Result<GeneratorOutput<'t>> {
    if convs.len() != N_CONVS {
        return dim_err(format!("generator needs {N_CONVS} bound convs, got {}", convs.len()));
    }
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return dim_err(format!("generator expects [3, H, W], got {s:?}"));
    }
    let (h, w) = (s[1], s[2]);
    if h % 4 != 0 || w % 4 != 0 {
        return dim_err(format!("generator input {h}x{w} is not divisible by 4"));
    }
    ssa.validate()?;
    let act = |x: Var<'t>| x.leaky_relu(LEAKY_SLOPE);

    let f0 = act(convs[STEM].forward(image)?);
    let f1 = act(convs[DOWN[0]].forward(f0)?);
    let f2 = act(convs[DOWN[1]].forward(f1)?);

    let mut x = f2;
    for b in 0..RES_BLOCKS {
        let first = &convs[RES_FIRST + 2 * b];
        let second = &convs[RES_FIRST + 2 * b + 1];
        x = x.add(second.forward(act(first.forward(x)?))?)?;
    }

    let mut g1 = act(convs[UP[0]].forward(x.resize_to(h / 2, w / 2)?)?);
    if ssa.applies_at(1) {
        g1 = ssa_layer(f1, g1, ssa)?;
    }
    let mut g0 = act(convs[UP[1]].forward(g1.resize_to(h, w)?)?);
    if ssa.applies_at(0) {
        g0 = ssa_layer(f0, g0, ssa)?;
    }
    let output = convs[OUT].forward(g0)?.sigmoid();
    Ok(GeneratorOutput {
        output,
        encoder_feats: vec![f0, f1, f2],
        decoder_feats: vec![g0, g1],
    })
}
