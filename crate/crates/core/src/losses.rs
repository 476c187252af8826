//! Generator and discriminator objectives.

use crate::error::{dim_err, Error, Result};
use crate::imageproc::{
    felzenszwalb_segment, guided_filter, region_color_fill, to_grayscale, GuidedFilterParams, Image,
    SegmentParams,
};
use crate::networks::{discriminator_forward, extractor_forward, BoundDiscriminator, ExtractorParams};
use crate::tensor::{Tensor, Var};
use crate::video_eval::{warp_var, FlowField};

/// Discriminator probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`
/// before taking logs.
pub const PROB_EPS: f64 = 1e-6;

/// Weights of the six generator terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub surface: f64,
    pub texture: f64,
    pub structure: f64,
    pub content: f64,
    pub tv: f64,
    pub motion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            surface: 0.1,
            texture: 1.0,
            structure: 200.0,
            content: 200.0,
            tv: 20000.0,
            motion: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self::from_array([0.0; 6]).expect("zeros are valid")
    }

    pub fn from_array(w: [f64; 6]) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Contract(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        Ok(LossWeights {
            surface: w[0],
            texture: w[1],
            structure: w[2],
            content: w[3],
            tv: w[4],
            motion: w[5],
        })
    }

    /// Order: surface, texture, structure, content, tv, motion.
    pub fn to_array(&self) -> [f64; 6] {
        [self.surface, self.texture, self.structure, self.content, self.tv, self.motion]
    }

    /// Parses six comma-separated values.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::Contract(format!("expected 6 comma-separated weights, got '{s}'")));
        }
        let mut w = [0.0; 6];
        for (slot, p) in w.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Contract(format!("invalid weight '{p}'")))?;
        }
        Self::from_array(w)
    }
}

pub const COMPONENT_NAMES: [&str; 6] = ["surface", "texture", "structure", "content", "tv", "motion"];

/// Component values of one generator evaluation plus the discriminator
/// losses of the same step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub surface: f64,
    pub texture: f64,
    pub structure: f64,
    pub content: f64,
    pub tv: f64,
    pub motion: f64,
    pub total: f64,
    pub d_surface: f64,
    pub d_texture: f64,
}

impl LossReport {
    /// Builds a report whose total is the weighted sum of `values`
    /// (ordered as [`COMPONENT_NAMES`]).
    pub fn from_components(values: [f64; 6], w: &LossWeights) -> Result<Self> {
        for (v, name) in values.iter().zip(COMPONENT_NAMES) {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("{name} loss is not finite ({v})")));
            }
        }
        let total = weighted_sum(&values, &w.to_array());
        Ok(LossReport {
            surface: values[0],
            texture: values[1],
            structure: values[2],
            content: values[3],
            tv: values[4],
            motion: values[5],
            total,
            d_surface: 0.0,
            d_texture: 0.0,
        })
    }

    pub fn components(&self) -> [f64; 6] {
        [self.surface, self.texture, self.structure, self.content, self.tv, self.motion]
    }

    pub fn csv_header() -> &'static str {
        "step,surface,texture,structure,content,tv,motion,total,d_surface,d_texture"
    }

    /// One CSV line; values use the shortest round-trip representation.
    pub fn csv_row(&self, step: usize) -> String {
        let c = self.components();
        format!(
            "{step},{},{},{},{},{},{},{},{},{}",
            c[0], c[1], c[2], c[3], c[4], c[5], self.total, self.d_surface, self.d_texture
        )
    }
}

fn weighted_sum(values: &[f64; 6], weights: &[f64; 6]) -> f64 {
    values.iter().zip(weights).fold(0.0, |acc, (v, w)| acc + v * w)
}

/// Differentiable generator terms of one evaluation.
#[derive(Clone, Copy)]
pub struct LossComponents<'t> {
    pub surface: Var<'t>,
    pub texture: Var<'t>,
    pub structure: Var<'t>,
    pub content: Var<'t>,
    pub tv: Var<'t>,
    pub motion: Var<'t>,
}

impl<'t> LossComponents<'t> {
    pub fn as_array(&self) -> [Var<'t>; 6] {
        [self.surface, self.texture, self.structure, self.content, self.tv, self.motion]
    }
}

/// Weighted sum of the generator terms and the matching report. A
/// non-finite component is reported by name.
pub fn total_generator_loss<'t>(c: &LossComponents<'t>, w: &LossWeights) -> Result<(Var<'t>, LossReport)> {
    let vars = c.as_array();
    let values = vars.map(|v| v.item());
    let report = LossReport::from_components(values, w)?;
    let weights = w.to_array();
    let mut total = vars[0].scale(weights[0]);
    for (v, wt) in vars.iter().zip(weights).skip(1) {
        total = total.add(v.scale(wt))?;
    }
    Ok((total, report))
}

fn log_prob(logits: Var<'_>, positive: bool) -> Var<'_> {
    let p = logits.sigmoid().clamp(PROB_EPS, 1.0 - PROB_EPS);
    let p = if positive { p } else { p.neg().add_scalar(1.0) };
    p.ln()
}

/// `-[mean log D(real) + mean_k mean log(1 - D(fake_k))]`, means over patches.
pub fn d_adversarial_loss<'t>(real_logits: Var<'t>, fake_logits: &[Var<'t>]) -> Result<Var<'t>> {
    if fake_logits.is_empty() {
        return dim_err("discriminator loss needs at least one fake sample");
    }
    let mut fake = log_prob(fake_logits[0], false).mean();
    for f in &fake_logits[1..] {
        fake = fake.add(log_prob(*f, false).mean())?;
    }
    let fake = fake.scale(1.0 / fake_logits.len() as f64);
    Ok(log_prob(real_logits, true).mean().add(fake)?.neg())
}

/// Non-saturating generator term `-mean log D(fake)`.
pub fn g_adversarial_loss(fake_logits: Var<'_>) -> Var<'_> {
    log_prob(fake_logits, true).mean().neg()
}

/// Surface representation: the self-guided filter of `x`.
pub fn surface_representation<'t>(x: Var<'t>, p: &GuidedFilterParams) -> Result<Var<'t>> {
    guided_filter(x, x, p.radius, p.eps)
}

/// Texture representation: luma of `x`.
pub fn texture_representation(x: Var<'_>) -> Result<Var<'_>> {
    to_grayscale(x)
}

/// Discriminator and generator sides of an adversarial term.
#[derive(Clone, Copy)]
pub struct AdversarialLoss<'t> {
    pub d_loss: Var<'t>,
    pub g_loss: Var<'t>,
}

fn adversarial<'t>(
    fake: Var<'t>,
    real: Var<'t>,
    d: &BoundDiscriminator<'t>,
    repr: impl Fn(Var<'t>) -> Result<Var<'t>>,
) -> Result<AdversarialLoss<'t>> {
    let fake_logits = discriminator_forward(d, repr(fake)?)?;
    let real_logits = discriminator_forward(d, repr(real)?)?;
    Ok(AdversarialLoss {
        d_loss: d_adversarial_loss(real_logits, &[fake_logits])?,
        g_loss: g_adversarial_loss(fake_logits),
    })
}

/// Adversarial loss on guided-filtered images.
pub fn surface_loss<'t>(
    g_out: Var<'t>,
    cartoon: Var<'t>,
    d_s: &BoundDiscriminator<'t>,
    p: &GuidedFilterParams,
) -> Result<AdversarialLoss<'t>> {
    adversarial(g_out, cartoon, d_s, |x| surface_representation(x, p))
}

/// Adversarial loss on grayscale images.
pub fn texture_loss<'t>(g_out: Var<'t>, cartoon: Var<'t>, d_t: &BoundDiscriminator<'t>) -> Result<AdversarialLoss<'t>> {
    adversarial(g_out, cartoon, d_t, texture_representation)
}

/// Feature embedding used by the content and structure losses.
pub trait FeatureMap {
    fn features<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;
}

/// The extractor's deepest (stride 8) level.
impl FeatureMap for ExtractorParams {
    fn features<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let pyr = extractor_forward(self, x)?;
        Ok(*pyr.levels.last().expect("extractor has levels"))
    }
}

/// Pixels as features; a test hook.
pub struct IdentityFeatures;

impl FeatureMap for IdentityFeatures {
    fn features<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x)
    }
}

fn feature_l1<'t>(a: Var<'t>, b: Var<'t>, fmap: &impl FeatureMap) -> Result<Var<'t>> {
    if a.shape() != b.shape() {
        return dim_err(format!("feature loss: images {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(fmap.features(a)?.sub(fmap.features(b)?)?.l1())
}

/// Mean absolute feature difference between the output and the photo.
pub fn content_loss<'t>(g_out: Var<'t>, photo: Var<'t>, fmap: &impl FeatureMap) -> Result<Var<'t>> {
    feature_l1(g_out, photo, fmap)
}

/// The structure representation of an image: segment, then fill each
/// region with its mean colour. Not differentiable.
pub fn structure_target(g_out: &Tensor, seg: &SegmentParams) -> Result<Tensor> {
    let img = Image::from_tensor(g_out)?;
    let labels = felzenszwalb_segment(&img, seg)?;
    Ok(region_color_fill(&img, &labels)?.to_tensor())
}

/// Feature L1 between `g_out` and a fixed structure target.
pub fn structure_loss_with_target<'t>(g_out: Var<'t>, target: &Tensor, fmap: &impl FeatureMap) -> Result<Var<'t>> {
    feature_l1(g_out, g_out.tape().constant(target.clone()), fmap)
}

/// Feature L1 between `g_out` and its structure representation, the latter
/// computed on a detached copy.
pub fn structure_loss<'t>(g_out: Var<'t>, fmap: &impl FeatureMap, seg: &SegmentParams) -> Result<Var<'t>> {
    let target = structure_target(&g_out.value(), seg)?;
    structure_loss_with_target(g_out, &target, fmap)
}

/// `(|dx|^2 + |dy|^2) / (H W C)` with forward differences. An axis of
/// length 1 contributes no differences.
pub fn tv_loss(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    if s.len() != 3 || (s[1] < 2 && s[2] < 2) {
        return dim_err(format!("tv loss needs [C, H, W] with H or W >= 2, got {s:?}"));
    }
    let norm = 1.0 / (s[0] * s[1] * s[2]) as f64;
    let mut terms = Vec::new();
    for axis in [1, 2] {
        if s[axis] >= 2 {
            terms.push(x.forward_diff(axis)?.square().sum());
        }
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    Ok(total.scale(norm))
}

/// Mean `|t_i - warp(t_prev)|` over pixels whose warp lands in the frame;
/// `flow` lives on frame `i`'s grid and points into frame `i - 1`.
pub fn warp_baseline_loss<'t>(t_i: Var<'t>, t_prev: Var<'t>, flow: &FlowField) -> Result<Var<'t>> {
    if t_i.shape() != t_prev.shape() {
        return dim_err("warp loss: frames differ in shape");
    }
    let (warped, mask) = warp_var(t_prev, flow)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::Contract("warp loss: no pixel lands inside the frame".into()));
    }
    let s = t_i.shape();
    let hw = s[1] * s[2];
    let weights = Tensor::from_fn(&s, |i| if mask.valid[i % hw] { 1.0 } else { 0.0 });
    let diff = t_i.sub(warped)?.abs().mul(t_i.tape().constant(weights))?;
    Ok(diff.sum().scale(1.0 / (n * s[0]) as f64))
}
