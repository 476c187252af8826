//! Temporal-consistency evaluation of stylized videos.
//!
//! Frames are `[C, H, W]` tensors. Flow `k` of a sequence warps frame `k + 1`
//! back onto frame `k` (0-based): `W(t)(p) = t(p + flow(p))`.

mod flow;

pub use flow::{compose_flows, read_flo, write_flo, FlowField, FLO_MAGIC};

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::imageproc::Image;
use crate::tensor::{Tape, Tensor, Var};

/// Default forward-backward consistency tolerance.
pub const FB_TOLERANCE: f64 = 0.1;

/// Per-pixel validity, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionMask {
    pub height: usize,
    pub width: usize,
    pub valid: Vec<bool>,
}

impl OcclusionMask {
    pub fn full(height: usize, width: usize) -> Self {
        OcclusionMask {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn intersect(&self, other: &OcclusionMask) -> Result<OcclusionMask> {
        if (self.height, self.width) != (other.height, other.width) {
            return dim_err("mask sizes differ");
        }
        Ok(OcclusionMask {
            height: self.height,
            width: self.width,
            valid: self.valid.iter().zip(&other.valid).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Grayscale image with 0 for occluded and 1 for valid pixels.
    pub fn to_image(&self) -> Image {
        let data = self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Image::new(1, self.height, self.width, data).expect("mask dims are valid")
    }

    /// A pixel is valid when its value is at least one half.
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return dim_err("masks must be single-channel");
        }
        Ok(OcclusionMask {
            height: img.height(),
            width: img.width(),
            valid: img.data().iter().map(|&v| v >= 0.5).collect(),
        })
    }
}

fn check_frame(img: &[usize], flow: &FlowField) -> Result<()> {
    if img.len() != 3 || img[1] != flow.height() || img[2] != flow.width() {
        return dim_err(format!(
            "frame {img:?} does not match flow {}x{}",
            flow.height(),
            flow.width()
        ));
    }
    Ok(())
}

/// Differentiable backward warp. Samples that land outside the frame are
/// zero and marked invalid in the returned mask.
pub fn warp_var<'t>(img: Var<'t>, flow: &FlowField) -> Result<(Var<'t>, OcclusionMask)> {
    check_frame(&img.shape(), flow)?;
    let (h, w) = (flow.height(), flow.width());
    let coords = flow.targets();
    let valid = coords
        .iter()
        .map(|&(x, y)| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64)
        .collect();
    let out = img.sample_bilinear(&coords, h, w)?;
    Ok((out, OcclusionMask { height: h, width: w, valid }))
}

/// `output(p) = img(p + flow(p))`, bilinear; see [`warp_var`].
pub fn backward_warp(img: &Tensor, flow: &FlowField) -> Result<(Tensor, OcclusionMask)> {
    let tape = Tape::new();
    let (out, mask) = warp_var(tape.constant(img.clone()), flow)?;
    Ok(((*out.value()).clone(), mask))
}

/// Forward-backward consistency: `p` is valid when `p + f(p)` is inside the
/// frame and `|f(p) + b(p + f(p))| <= tol * (|f(p)| + 1)`.
pub fn fb_occlusion_mask(forward: &FlowField, backward: &FlowField, tol: f64) -> Result<OcclusionMask> {
    let (h, w) = (forward.height(), forward.width());
    if (backward.height(), backward.width()) != (h, w) {
        return dim_err("forward and backward flows differ in size");
    }
    let valid = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let (u, v) = forward.get(y, x);
            let (u, v) = (u as f64, v as f64);
            match backward.sample(x as f64 + u, y as f64 + v) {
                Some((bu, bv)) => (u + bu).hypot(v + bv) <= tol * (u.hypot(v) + 1.0),
                None => false,
            }
        })
        .collect();
    Ok(OcclusionMask { height: h, width: w, valid })
}

/// Mean of `|warped - target|` over valid pixels and all channels, or `None`
/// when no pixel is valid.
pub fn masked_mean_abs(warped: &Tensor, target: &Tensor, mask: &OcclusionMask) -> Result<Option<f64>> {
    if warped.shape() != target.shape() || warped.rank() != 3 {
        return dim_err(format!("frames {:?} and {:?} differ", warped.shape(), target.shape()));
    }
    let (c, hw) = (warped.shape()[0], warped.shape()[1] * warped.shape()[2]);
    if mask.valid.len() != hw {
        return dim_err("mask does not match frame size");
    }
    let n = mask.count();
    if n == 0 {
        return Ok(None);
    }
    let (a, b) = (warped.data(), target.data());
    let mut total = 0.0;
    for ch in 0..c {
        for (p, _) in mask.valid.iter().enumerate().filter(|(_, v)| **v) {
            total += (a[ch * hw + p] - b[ch * hw + p]).abs();
        }
    }
    Ok(Some(total / (n * c) as f64))
}

/// Warping error of each frame `k >= 1` against `reference(k)`; `flows[k-1]`
/// warps frame `k` onto the reference. Pair labels are 1-based.
fn pair_errors(
    frames: &[Tensor],
    flows: &[FlowField],
    masks: Option<&[OcclusionMask]>,
    reference: impl Fn(usize) -> usize + Sync,
) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return dim_err("temporal metrics need at least two frames");
    }
    if flows.len() != frames.len() - 1 || masks.is_some_and(|m| m.len() != flows.len()) {
        return dim_err(format!(
            "{} frames need {} flows (and masks), got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        ));
    }
    (1..frames.len())
        .into_par_iter()
        .map(|k| {
            let r = reference(k);
            let (warped, in_frame) = backward_warp(&frames[k], &flows[k - 1])?;
            let mask = match masks {
                Some(m) => in_frame.intersect(&m[k - 1])?,
                None => in_frame,
            };
            masked_mean_abs(&warped, &frames[r], &mask)?.ok_or(Error::MetricUndefined(k + 1, r + 1))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Short-term warping error: frame `i` against frame `i - 1`, averaged over pairs.
pub fn e_short(frames: &[Tensor], flows: &[FlowField], masks: Option<&[OcclusionMask]>) -> Result<f64> {
    Ok(mean(&pair_errors(frames, flows, masks, |k| k - 1)?))
}

/// Long-term warping error: every frame against the first; `flows[k-1]`
/// warps frame `k` onto frame 0.
pub fn e_long(frames: &[Tensor], flows: &[FlowField], masks: Option<&[OcclusionMask]>) -> Result<f64> {
    Ok(mean(&pair_errors(frames, flows, masks, |_| 0)?))
}

/// Per-pair errors and both aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEval {
    pub short_pairs: Vec<f64>,
    pub long_pairs: Vec<f64>,
    pub e_short: f64,
    pub e_long: f64,
}

/// Evaluates both metrics. Without explicit long flows they are composed
/// from the short ones, and positions that leave the frame along the chain
/// are masked out.
pub fn evaluate_sequence(
    frames: &[Tensor],
    short_flows: &[FlowField],
    short_masks: Option<&[OcclusionMask]>,
    long_flows: Option<&[FlowField]>,
    long_masks: Option<&[OcclusionMask]>,
) -> Result<SequenceEval> {
    let short_pairs = pair_errors(frames, short_flows, short_masks, |k| k - 1)?;
    let long_pairs = match long_flows {
        Some(flows) => pair_errors(frames, flows, long_masks, |_| 0)?,
        None => {
            let composed = compose_flows(short_flows)?;
            let mut masks = Vec::with_capacity(composed.len());
            for (flow, valid) in &composed {
                let chain = OcclusionMask {
                    height: flow.height(),
                    width: flow.width(),
                    valid: valid.clone(),
                };
                masks.push(match long_masks {
                    Some(m) => chain.intersect(&m[masks.len()])?,
                    None => chain,
                });
            }
            let flows: Vec<FlowField> = composed.into_iter().map(|(f, _)| f).collect();
            pair_errors(frames, &flows, Some(&masks), |_| 0)?
        }
    };
    Ok(SequenceEval {
        e_short: mean(&short_pairs),
        e_long: mean(&long_pairs),
        short_pairs,
        long_pairs,
    })
}
