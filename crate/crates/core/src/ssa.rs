//! Spatially-adaptive semantic alignment.
//!
//! Each decoder feature is replaced by a softmax-weighted combination of the
//! decoder features in an `R x R` window around it, weighted by their dot
//! product with the co-located encoder feature. Windows are clipped at the
//! image border and the softmax runs over the surviving candidates only, so
//! every output lies in the convex hull of real candidates.
//!
//! The layer has no parameters.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Backward, Tensor, Var};

/// Where and how wide the alignment window is.
#[derive(Clone, Debug, PartialEq)]
pub struct SsaConfig {
    /// Side `R` of the candidate window; odd. `N = R * R` candidates.
    pub patch_width: usize,
    /// Decoder scales where the layer runs: 0 is full resolution, 1 is half.
    pub levels: Vec<usize>,
    pub enabled: bool,
}

impl Default for SsaConfig {
    fn default() -> Self {
        SsaConfig {
            patch_width: 3,
            levels: vec![0, 1],
            enabled: true,
        }
    }
}

impl SsaConfig {
    pub fn with_patch_width(patch_width: usize) -> Self {
        SsaConfig {
            patch_width,
            ..Self::default()
        }
    }

    pub fn disabled() -> Self {
        SsaConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn candidates(&self) -> usize {
        self.patch_width * self.patch_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_width == 0 || self.patch_width.is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "SSA patch width must be odd and positive, got {}",
                self.patch_width
            )));
        }
        if self.enabled && self.levels.is_empty() {
            return Err(Error::Contract("SSA enabled with no levels".into()));
        }
        Ok(())
    }

    /// Whether the layer runs at decoder scale `level`.
    pub fn applies_at(&self, level: usize) -> bool {
        self.enabled && self.levels.contains(&level)
    }
}

/// Candidate window geometry for an `h x w` map.
#[derive(Clone, Copy)]
struct Window {
    r: usize,
    h: usize,
    w: usize,
}

impl Window {
    fn n(&self) -> usize {
        self.r * self.r
    }

    /// Flat spatial index of candidate `n` around `(y, x)`, if inside.
    fn candidate(&self, y: usize, x: usize, n: usize) -> Option<usize> {
        let half = (self.r / 2) as isize;
        let cy = y as isize + (n / self.r) as isize - half;
        let cx = x as isize + (n % self.r) as isize - half;
        if cy < 0 || cx < 0 || cy >= self.h as isize || cx >= self.w as isize {
            None
        } else {
            Some(cy as usize * self.w + cx as usize)
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                for n in 0..self.n() {
                    if let Some(j) = self.candidate(y, x, n) {
                        f(i, n, j);
                    }
                }
            }
        }
    }
}

struct KernelRule {
    win: Window,
}

impl Backward for KernelRule {
    fn name(&self) -> &'static str {
        "ssa_kernel"
    }

    fn backward(&self, inputs: &[&Tensor], alpha: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (f, g) = (inputs[0].data(), inputs[1].data());
        let hw = self.win.h * self.win.w;
        let c = inputs[0].shape()[0];
        let n = self.win.n();
        let (a, ga) = (alpha.data(), grad.data());
        // d(loss)/d(logit) through the per-row softmax; invalid slots hold zero weight.
        let mut gz = vec![0.0; a.len()];
        for i in 0..hw {
            let row = i * n..(i + 1) * n;
            let dot: f64 = row.clone().map(|k| a[k] * ga[k]).sum();
            for k in row {
                gz[k] = a[k] * (ga[k] - dot);
            }
        }
        let mut gf = vec![0.0; f.len()];
        let mut gg = vec![0.0; g.len()];
        self.win.for_each(|i, k, j| {
            let w = gz[i * n + k];
            for ch in 0..c {
                gf[ch * hw + i] += w * g[ch * hw + j];
                gg[ch * hw + j] += w * f[ch * hw + i];
            }
        });
        vec![
            needs[0].then(|| Tensor::new(inputs[0].shape(), gf).unwrap()),
            needs[1].then(|| Tensor::new(inputs[1].shape(), gg).unwrap()),
        ]
    }
}

struct AggregateRule {
    win: Window,
}

impl Backward for AggregateRule {
    fn name(&self) -> &'static str {
        "ssa_aggregate"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (g, a) = (inputs[0].data(), inputs[1].data());
        let c = inputs[0].shape()[0];
        let hw = self.win.h * self.win.w;
        let n = self.win.n();
        let gr = grad.data();
        let mut gg = vec![0.0; g.len()];
        let mut galpha = vec![0.0; a.len()];
        self.win.for_each(|i, k, j| {
            let w = a[i * n + k];
            let mut dot = 0.0;
            for ch in 0..c {
                dot += gr[ch * hw + i] * g[ch * hw + j];
                gg[ch * hw + j] += w * gr[ch * hw + i];
            }
            galpha[i * n + k] = dot;
        });
        vec![
            needs[0].then(|| Tensor::new(inputs[0].shape(), gg).unwrap()),
            needs[1].then(|| Tensor::new(inputs[1].shape(), galpha).unwrap()),
        ]
    }
}

fn window_for(f: &Tensor, g: &Tensor, cfg: &SsaConfig) -> Result<Window> {
    cfg.validate()?;
    g.expect_rank(3, "ssa decoder features")?;
    if f.shape() != g.shape() {
        return dim_err(format!(
            "ssa: encoder features {:?} and decoder features {:?} differ",
            f.shape(),
            g.shape()
        ));
    }
    Ok(Window {
        r: cfg.patch_width,
        h: g.shape()[1],
        w: g.shape()[2],
    })
}

/// Alignment kernel `alpha` of shape `[H, W, N]`: for each location the
/// softmax over `<f_i, g_j>` for candidates `j` in the window. Slots whose
/// candidate falls outside the map hold zero.
pub fn ssa_kernel<'t>(f: Var<'t>, g: Var<'t>, cfg: &SsaConfig) -> Result<Var<'t>> {
    let (fv, gv) = (f.value(), g.value());
    let win = window_for(&fv, &gv, cfg)?;
    let (fd, gd) = (fv.data(), gv.data());
    let c = fv.shape()[0];
    let hw = win.h * win.w;
    let n = win.n();

    let mut alpha = vec![0.0; hw * n];
    let mut valid = vec![false; hw * n];
    win.for_each(|i, k, j| {
        alpha[i * n + k] = (0..c).map(|ch| fd[ch * hw + i] * gd[ch * hw + j]).sum();
        valid[i * n + k] = true;
    });
    for i in 0..hw {
        let row = i * n..(i + 1) * n;
        let max = row
            .clone()
            .filter(|&k| valid[k])
            .map(|k| alpha[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in row.clone() {
            alpha[k] = if valid[k] { (alpha[k] - max).exp() } else { 0.0 };
            total += alpha[k];
        }
        for k in row {
            alpha[k] /= total;
        }
    }
    let out = Tensor::new(&[win.h, win.w, n], alpha)?;
    Ok(f.tape().apply(&[f, g], out, KernelRule { win }))
}

/// `r_i = sum_j alpha_ij g_j` over the candidate window.
pub fn ssa_aggregate<'t>(g: Var<'t>, alpha: Var<'t>, cfg: &SsaConfig) -> Result<Var<'t>> {
    let (gv, av) = (g.value(), alpha.value());
    let win = window_for(&gv, &gv, cfg)?;
    let hw = win.h * win.w;
    let n = win.n();
    if av.shape() != [win.h, win.w, n] {
        return dim_err(format!(
            "ssa_aggregate: kernel {:?} does not match features {:?} with N = {n}",
            av.shape(),
            gv.shape()
        ));
    }
    let a = av.data();
    for (i, row) in a.chunks(n).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "ssa_aggregate: kernel row {i} sums to {total}, expected 1"
            )));
        }
    }
    let c = gv.shape()[0];
    let gd = gv.data();
    let mut out = vec![0.0; gd.len()];
    win.for_each(|i, k, j| {
        let w = a[i * n + k];
        for ch in 0..c {
            out[ch * hw + i] += w * gd[ch * hw + j];
        }
    });
    let out = Tensor::new(gv.shape(), out)?;
    Ok(g.tape().apply(&[g, alpha], out, AggregateRule { win }))
}

/// Aligns decoder features `g` to the encoder features `f` of the same shape.
pub fn ssa_layer<'t>(f: Var<'t>, g: Var<'t>, cfg: &SsaConfig) -> Result<Var<'t>> {
    let alpha = ssa_kernel(f, g, cfg)?;
    ssa_aggregate(g, alpha, cfg)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{gradcheck, Tape};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Per-location brute force: gather the clipped window, softmax the dot
    /// products, blend.
    fn naive_ssa(f: &Tensor, g: &Tensor, r: usize) -> Tensor {
        let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        let half = (r / 2) as isize;
        let mut out = Tensor::zeros(f.shape());
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut cands = Vec::new();
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (cy, cx) = (y + dy, x + dx);
                        if cy >= 0 && cx >= 0 && cy < h as isize && cx < w as isize {
                            cands.push((cy as usize, cx as usize));
                        }
                    }
                }
                let logits: Vec<f64> = cands
                    .iter()
                    .map(|&(cy, cx)| {
                        (0..c)
                            .map(|ch| f.get(&[ch, y as usize, x as usize]) * g.get(&[ch, cy, cx]))
                            .sum()
                    })
                    .collect();
                let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
                let total: f64 = exps.iter().sum();
                for ch in 0..c {
                    let v: f64 = cands
                        .iter()
                        .zip(&exps)
                        .map(|(&(cy, cx), e)| e / total * g.get(&[ch, cy, cx]))
                        .sum();
                    out.set(&[ch, y as usize, x as usize], v);
                }
            }
        }
        out
    }

    fn layer(f: &Tensor, g: &Tensor, cfg: &SsaConfig) -> Tensor {
        let tape = Tape::new();
        let out = ssa_layer(tape.constant(f.clone()), tape.constant(g.clone()), cfg).unwrap();
        
        (*out.value()).clone()
    }

    #[test]
    fn uniform_candidates_give_uniform_kernel() {
        let tape = Tape::new();
        let f = tape.constant(random(&[3, 5, 5], 1));
        let g = tape.constant(Tensor::from_fn(&[3, 5, 5], |i| [0.2, -0.4, 0.9][i / 25]));
        let a = ssa_kernel(f, g, &SsaConfig::default()).unwrap().value();
        // Interior location (2, 2) sees all nine candidates.
        for k in 0..9 {
            assert!((a.get(&[2, 2, k]) - 1.0 / 9.0).abs() < 1e-15);
        }
        // Corner keeps four.
        let corner: Vec<f64> = (0..9).map(|k| a.get(&[0, 0, k])).collect();
        assert_eq!(corner.iter().filter(|&&v| v == 0.0).count(), 5);
        assert!(corner.iter().all(|&v| v == 0.0 || (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_candidate_hand_example() {
        // 1x2 map: location (0,0) sees itself and (0,1) only.
        let tape = Tape::new();
        let f = tape.constant(Tensor::new(&[2, 1, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let g = tape.constant(Tensor::new(&[2, 1, 2], vec![10.0, 0.0, 0.0, 10.0]).unwrap());
        let cfg = SsaConfig::default();
        let alpha = ssa_kernel(f, g, &cfg).unwrap();
        let a = alpha.value();
        // Window slots 4 (self) and 5 (right neighbour).
        let e = 10f64.exp();
        assert!((a.get(&[0, 0, 4]) - e / (e + 1.0)).abs() < 1e-15);
        assert!((a.get(&[0, 0, 5]) - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((a.get(&[0, 0, 4]) - 0.9999546).abs() < 1e-7);
        let r = ssa_aggregate(g, alpha, &cfg).unwrap().value();
        assert!((r.get(&[0, 0, 0]) - 10.0 * e / (e + 1.0)).abs() < 1e-13);
        assert!((r.get(&[1, 0, 0]) - 10.0 / (e + 1.0)).abs() < 1e-13);
        assert!((r.get(&[0, 0, 0]) - 9.999546).abs() < 1e-6);
        assert!((r.get(&[1, 0, 0]) - 4.54e-4).abs() < 1e-6);
    }

    #[test]
    fn one_hot_kernel_selects_candidate() {
        let tape = Tape::new();
        let gt = random(&[2, 3, 3], 4);
        let g = tape.constant(gt.clone());
        let mut a = Tensor::zeros(&[3, 3, 9]);
        for y in 0..3 {
            for x in 0..3 {
                a.set(&[y, x, 4], 1.0);
            }
        }
        // Centre location picks its upper-left neighbour.
        a.set(&[1, 1, 4], 0.0);
        a.set(&[1, 1, 0], 1.0);
        let r = ssa_aggregate(g, tape.constant(a), &SsaConfig::default()).unwrap().value();
        assert_eq!(r.get(&[0, 1, 1]), gt.get(&[0, 0, 0]));
        assert_eq!(r.get(&[1, 1, 1]), gt.get(&[1, 0, 0]));
        assert_eq!(r.get(&[1, 2, 2]), gt.get(&[1, 2, 2]));
    }

    #[test]
    fn aggregate_rejects_unnormalized_kernel() {
        let tape = Tape::new();
        let g = tape.constant(random(&[2, 3, 3], 5));
        let a = tape.constant(Tensor::full(&[3, 3, 9], 0.5));
        assert!(matches!(
            ssa_aggregate(g, a, &SsaConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mismatched_shapes_and_even_width_are_rejected() {
        let tape = Tape::new();
        let f = tape.constant(random(&[2, 3, 3], 1));
        let g = tape.constant(random(&[2, 3, 4], 2));
        assert!(matches!(ssa_layer(f, g, &SsaConfig::default()), Err(Error::Dimension(_))));
        assert!(matches!(
            ssa_layer(f, f, &SsaConfig::with_patch_width(4)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_maps_are_fixed_points() {
        let c = Tensor::full(&[3, 4, 4], 0.6);
        assert!(layer(&c, &c, &SsaConfig::default()).max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn width_one_is_identity() {
        let f = random(&[3, 5, 4], 7);
        let g = random(&[3, 5, 4], 8);
        assert_eq!(layer(&f, &g, &SsaConfig::with_patch_width(1)), g);
    }

    #[test]
    fn matches_naive_reference() {
        for (seed, r) in [(10, 3), (11, 3), (12, 5)] {
            let f = random(&[3, 4, 4], seed);
            let g = random(&[3, 4, 4], seed + 100);
            let fast = layer(&f, &g, &SsaConfig::with_patch_width(r));
            assert!(fast.max_abs_diff(&naive_ssa(&f, &g, r)) < 1e-10);
        }
    }

    #[test]
    fn gradcheck_full_layer() {
        let cfg = SsaConfig::default();
        let w = random(&[3, 4, 4], 9);
        let report = gradcheck(
            |tape, v| {
                let r = ssa_layer(v[0], v[1], &cfg)?;
                Ok(r.mul(tape.constant(w.clone()))?.sum())
            },
            &[random(&[3, 4, 4], 20), random(&[3, 4, 4], 21)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.max_rel_error);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kernel_rows_are_probability_vectors(seed in 0u64..100_000, r in prop::sample::select(vec![1usize, 3, 5, 7])) {
            let tape = Tape::new();
            let f = tape.constant(random(&[4, 5, 6], seed).map(|v| 3.0 * v));
            let g = tape.constant(random(&[4, 5, 6], seed + 1).map(|v| 3.0 * v));
            let a = ssa_kernel(f, g, &SsaConfig::with_patch_width(r)).unwrap().value();
            for row in a.data().chunks(r * r) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn output_in_candidate_hull(seed in 0u64..100_000) {
            let f = random(&[2, 4, 5], seed);
            let g = random(&[2, 4, 5], seed + 7);
            let out = layer(&f, &g, &SsaConfig::default());
            for ch in 0..2 {
                for y in 0..4usize {
                    for x in 0..5usize {
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        for cy in y.saturating_sub(1)..(y + 2).min(4) {
                            for cx in x.saturating_sub(1)..(x + 2).min(5) {
                                lo = lo.min(g.get(&[ch, cy, cx]));
                                hi = hi.max(g.get(&[ch, cy, cx]));
                            }
                        }
                        let v = out.get(&[ch, y, x]);
                        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn argmax_invariant_under_positive_scaling(seed in 0u64..100_000, scale in 0.05f64..20.0) {
            let tape = Tape::new();
            let ft = random(&[3, 4, 4], seed);
            let g = tape.constant(random(&[3, 4, 4], seed + 3));
            let cfg = SsaConfig::default();
            let a = ssa_kernel(tape.constant(ft.clone()), g, &cfg).unwrap().value();
            let b = ssa_kernel(tape.constant(ft.map(|v| v * scale)), g, &cfg).unwrap().value();
            let argmax = |row: &[f64]| row.iter().enumerate().fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m }).0;
            for (ra, rb) in a.data().chunks(9).zip(b.data().chunks(9)) {
                prop_assert_eq!(argmax(ra), argmax(rb));
            }
        }
    }
}
