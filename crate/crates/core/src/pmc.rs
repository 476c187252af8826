//! Spatio-temporal correlative maps and the perceptual motion consistency loss.
//!
//! A correlative map holds the similarity of every location of frame `i` with
//! every location of frame `i + 1` at one feature level. The motion loss asks
//! the maps of the stylized pair to point the same way, row by row, as the
//! maps of the source pair.

use crate::error::{dim_err, Result};
use crate::tensor::{ReduceKind, Tensor, Var};

/// Per-location normalization guard.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmcConfig {
    /// L2-normalize each location's feature vector before the dot products.
    /// Off gives raw dot products.
    pub normalize: bool,
}

impl Default for PmcConfig {
    fn default() -> Self {
        PmcConfig { normalize: true }
    }
}

/// Multi-scale features of one frame, finest level first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<'t> {
    pub levels: Vec<Var<'t>>,
}

impl<'t> FeaturePyramid<'t> {
    pub fn new(levels: Vec<Var<'t>>) -> Self {
        FeaturePyramid { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The same pyramid with every level cut from the graph.
    pub fn detach(&self) -> Self {
        FeaturePyramid {
            levels: self.levels.iter().map(|v| v.detach()).collect(),
        }
    }
}

/// `N x N` similarity matrix between two frames at one level.
#[derive(Clone, Copy, Debug)]
pub struct CorrelativeMap<'t> {
    pub values: Var<'t>,
    pub level: usize,
    /// Indices of the two frames the map relates.
    pub frame_pair: (usize, usize),
}

/// `values[j, k] = <h_a(., j), h_b(., k)>` for `[M, H, W]` features.
pub fn correlative_map<'t>(h_a: Var<'t>, h_b: Var<'t>, cfg: &PmcConfig) -> Result<Var<'t>> {
    let shape = h_a.shape();
    if shape.len() != 3 || shape != h_b.shape() {
        return dim_err(format!(
            "correlative map: features {:?} and {:?} must be matching [M, H, W]",
            shape,
            h_b.shape()
        ));
    }
    let (m, n) = (shape[0], shape[1] * shape[2]);
    let prep = |h: Var<'t>| -> Result<Var<'t>> {
        let h = if cfg.normalize {
            h.l2_normalize(0, NORM_EPS)?
        } else {
            h
        };
        h.reshape(&[m, n])
    };
    prep(h_a)?.transpose()?.matmul(prep(h_b)?)
}

/// Mean over rows of `|1 - cos(C_s[j, .], C_t[j, .])|`.
pub fn motion_loss<'t>(c_s: Var<'t>, c_t: Var<'t>) -> Result<Var<'t>> {
    let (s, t) = (c_s.shape(), c_t.shape());
    if s.len() != 2 || s != t {
        return dim_err(format!("motion loss: maps {s:?} and {t:?} differ"));
    }
    let cos = c_s
        .l2_normalize(1, NORM_EPS)?
        .mul(c_t.l2_normalize(1, NORM_EPS)?)?
        .reduce(ReduceKind::Sum, &[1])?;
    Ok(cos.neg().add_scalar(1.0).l1())
}

/// Mean over levels of the motion loss between the source pair
/// `(s_i, s_next)` and the stylized pair `(t_i, t_next)`.
pub fn multi_level_motion_loss<'t>(
    s_i: &FeaturePyramid<'t>,
    s_next: &FeaturePyramid<'t>,
    t_i: &FeaturePyramid<'t>,
    t_next: &FeaturePyramid<'t>,
    cfg: &PmcConfig,
) -> Result<Var<'t>> {
    let levels = s_i.len();
    if levels == 0 || [s_next.len(), t_i.len(), t_next.len()].iter().any(|&l| l != levels) {
        return dim_err("motion loss: pyramids have different level counts");
    }
    let mut total: Option<Var<'t>> = None;
    for l in 0..levels {
        let c_s = correlative_map(s_i.levels[l], s_next.levels[l], cfg)?;
        let c_t = correlative_map(t_i.levels[l], t_next.levels[l], cfg)?;
        if c_s.shape() != c_t.shape() {
            return dim_err(format!("motion loss: level {l} sizes differ between source and output"));
        }
        let loss = motion_loss(c_s, c_t)?;
        total = Some(match total {
            Some(acc) => acc.add(loss)?,
            None => loss,
        });
    }
    Ok(total.expect("at least one level").scale(1.0 / levels as f64))
}

/// Renders an `N x N` map of an `h x w` level as a grayscale heat map: row
/// `j` becomes an `h x w` tile placed at `j`'s own grid position, values in
/// `[-1, 1]` mapped to `[0, 1]`. Output is `[1, h*h, w*w]`.
pub fn heatmap(map: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let n = h * w;
    if map.shape() != [n, n] {
        return dim_err(format!("heatmap: map {:?} is not {n}x{n}", map.shape()));
    }
    let (oh, ow) = (h * h, w * w);
    let mut out = vec![0.0; oh * ow];
    for j in 0..n {
        let (ty, tx) = (j / w, j % w);
        for k in 0..n {
            let (ky, kx) = (k / w, k % w);
            let v = map.data()[j * n + k];
            out[(ty * h + ky) * ow + tx * w + kx] = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[1, oh, ow], out)
}
