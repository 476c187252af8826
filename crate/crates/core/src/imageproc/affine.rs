use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::bilinear_taps;

/// Sampling ranges for synthetic consecutive frames. Rotation and translation
/// are drawn from `[-max, max]`, scale from `scale_range`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinePairSpec {
    pub max_rotation_deg: f64,
    /// Fraction of the image width (x) and height (y).
    pub max_translation: f64,
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for AffinePairSpec {
    fn default() -> Self {
        AffinePairSpec {
            max_rotation_deg: 5.0,
            max_translation: 0.05,
            scale_range: (0.95, 1.05),
            seed: 0,
        }
    }
}

impl AffinePairSpec {
    pub fn identity(seed: u64) -> Self {
        AffinePairSpec {
            max_rotation_deg: 0.0,
            max_translation: 0.0,
            scale_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        AffinePairSpec { seed, ..self }
    }
}

/// Similarity transform about the image centre: a source pixel `p` lands at
/// `c + scale * R(angle) * (p - c) + (tx, ty)`. Translation is in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub angle_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            angle_deg: 0.0,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform {
            tx,
            ty,
            ..Self::identity()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 1e-6) {
            return Err(Error::Contract(format!("degenerate affine scale {}", self.scale)));
        }
        if !(self.angle_deg.is_finite() && self.tx.is_finite() && self.ty.is_finite()) {
            return Err(Error::Contract("non-finite affine parameters".into()));
        }
        Ok(())
    }

    /// Maps a destination pixel back to its source location.
    pub fn inverse_map(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (dx, dy) = (x - cx - self.tx, y - cy - self.ty);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let sx = (cos * dx + sin * dy) / self.scale;
        let sy = (-sin * dx + cos * dy) / self.scale;
        (cx + sx, cy + sy)
    }
}

/// Consecutive synthetic frames `(s0, s1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub first: Image,
    pub second: Image,
}

/// Mirror `v` into `[0, n-1]` without repeating the edge sample.
fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = v.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Warps `img` by `t` with bilinear resampling and a reflected border.
pub fn apply_affine(img: &Image, t: &AffineTransform) -> Result<Image> {
    t.validate()?;
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = t.inverse_map(x as f64, y as f64, h, w);
                let taps = bilinear_taps(reflect(sx, w), reflect(sy, h), h, w)
                    .expect("reflected coordinates are inside the frame");
                let v: f64 = taps.iter().map(|&(i, wt)| wt * plane[i]).sum();
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(img.channels(), h, w, data)
}

fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Draws a transform from `spec` and returns `(s0 = img, s1 = warped img)`
/// together with the transform used.
pub fn random_affine_pair(img: &Image, spec: &AffinePairSpec) -> Result<(FramePair, AffineTransform)> {
    let (lo, hi) = spec.scale_range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(Error::Contract(format!("degenerate scale range {:?}", spec.scale_range)));
    }
    if !(spec.max_rotation_deg >= 0.0 && spec.max_translation >= 0.0) {
        return Err(Error::Contract("affine ranges must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let angle_deg = symmetric(&mut rng, spec.max_rotation_deg);
    let tx = symmetric(&mut rng, spec.max_translation) * img.width() as f64;
    let ty = symmetric(&mut rng, spec.max_translation) * img.height() as f64;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let t = AffineTransform {
        angle_deg,
        scale,
        tx,
        ty,
    };
    let second = apply_affine(img, &t)?;
    Ok((
        FramePair {
            first: img.clone(),
            second,
        },
        t,
    ))
}
