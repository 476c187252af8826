//! Edge-preserving guided filter built from clipped box means.

use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub eps: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        GuidedFilterParams {
            radius: 1,
            eps: 1e-2,
        }
    }
}

/// Filters `p` with the locally linear model in `guide`, channel by channel:
///
/// ```text
/// a = cov(I, p) / (var(I) + eps)
/// b = mean(p) - a * mean(I)
/// q = mean(a) * I + mean(b)
/// ```
///
/// Differentiable in both `p` and `guide`.
pub fn guided_filter<'t>(p: Var<'t>, guide: Var<'t>, radius: usize, eps: f64) -> Result<Var<'t>> {
    if !(eps > 0.0) || radius == 0 {
        return Err(Error::Contract(format!(
            "guided filter needs radius >= 1 and eps > 0, got {radius} and {eps}"
        )));
    }
    let (ps, gs) = (p.shape(), guide.shape());
    if ps != gs || ps.len() != 3 {
        return Err(Error::Dimension(format!(
            "guided filter: input {ps:?} and guide {gs:?} must be matching [C, H, W]"
        )));
    }
    let mean_i = guide.box_filter(radius)?;
    let mean_p = p.box_filter(radius)?;
    let corr_ip = guide.mul(p)?.box_filter(radius)?;
    let corr_ii = guide.mul(guide)?.box_filter(radius)?;
    let var_i = corr_ii.sub(mean_i.mul(mean_i)?)?;
    let cov_ip = corr_ip.sub(mean_i.mul(mean_p)?)?;
    let a = cov_ip.div(var_i.add_scalar(eps))?;
    let b = mean_p.sub(a.mul(mean_i)?)?;
    a.box_filter(radius)?.mul(guide)?.add(b.box_filter(radius)?)
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

    fn filter(p: &Tensor, guide: &Tensor, r: usize, eps: f64) -> Tensor {
        let tape = Tape::new();
        let out = guided_filter(tape.constant(p.clone()), tape.constant(guide.clone()), r, eps).unwrap();
        
        (*out.value()).clone()
    }

    /// Windowed statistics computed directly per pixel.
    fn naive(p: &Tensor, guide: &Tensor, r: usize, eps: f64) -> Tensor {
        let (c, h, w) = (p.shape()[0], p.shape()[1], p.shape()[2]);
        let window = |y: usize, x: usize| {
            let mut v = Vec::new();
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    v.push((yy, xx));
                }
            }
            v
        };
        let mut out = Tensor::zeros(p.shape());
        for ch in 0..c {
            let mut a = vec![0.0; h * w];
            let mut b = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let win = window(y, x);
                    let n = win.len() as f64;
                    let mi = win.iter().map(|&(yy, xx)| guide.get(&[ch, yy, xx])).sum::<f64>() / n;
                    let mp = win.iter().map(|&(yy, xx)| p.get(&[ch, yy, xx])).sum::<f64>() / n;
                    let cov = win
                        .iter()
                        .map(|&(yy, xx)| (guide.get(&[ch, yy, xx]) - mi) * (p.get(&[ch, yy, xx]) - mp))
                        .sum::<f64>()
                        / n;
                    let var = win
                        .iter()
                        .map(|&(yy, xx)| (guide.get(&[ch, yy, xx]) - mi).powi(2))
                        .sum::<f64>()
                        / n;
                    a[y * w + x] = cov / (var + eps);
                    b[y * w + x] = mp - a[y * w + x] * mi;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let win = window(y, x);
                    let n = win.len() as f64;
                    let ma = win.iter().map(|&(yy, xx)| a[yy * w + xx]).sum::<f64>() / n;
                    let mb = win.iter().map(|&(yy, xx)| b[yy * w + xx]).sum::<f64>() / n;
                    out.set(&[ch, y, x], ma * guide.get(&[ch, y, x]) + mb);
                }
            }
        }
        out
    }

    #[test]
    fn constant_input_is_preserved() {
        for (r, eps) in [(1, 1e-2), (2, 1e-4), (4, 1.0)] {
            let p = Tensor::full(&[3, 6, 7], 0.42);
            let out = filter(&p, &random(&[3, 6, 7], 1), r, eps);
            assert!(out.max_abs_diff(&p) < 1e-12);
            let self_guided = filter(&p, &p, r, eps);
            assert!(self_guided.max_abs_diff(&p) < 1e-12);
        }
    }

    #[test]
    fn high_contrast_step_survives_self_guidance() {
        let p = Tensor::from_fn(&[1, 8, 8], |i| if i % 8 < 4 { 0.0 } else { 1.0 });
        let out = filter(&p, &p, 1, 1e-4);
        assert!(out.max_abs_diff(&p) < 0.05, "{}", out.max_abs_diff(&p));
        assert!(out.max_abs_diff(&naive(&p, &p, 1, 1e-4)) < 1e-10);
    }

    #[test]
    fn matches_naive_windowed_reference() {
        for seed in 0..4 {
            let p = random(&[1, 8, 8], seed);
            let out = filter(&p, &p, 1, 1e-2);
            assert!(out.max_abs_diff(&naive(&p, &p, 1, 1e-2)) < 1e-8);
            let g = random(&[3, 8, 8], seed + 50);
            let p3 = random(&[3, 8, 8], seed + 60);
            assert!(filter(&p3, &g, 2, 1e-2).max_abs_diff(&naive(&p3, &g, 2, 1e-2)) < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let tape = Tape::new();
        let a = tape.constant(random(&[1, 4, 4], 1));
        let b = tape.constant(random(&[1, 4, 5], 2));
        assert!(matches!(guided_filter(a, b, 1, 1e-2), Err(Error::Dimension(_))));
        assert!(matches!(guided_filter(a, a, 0, 1e-2), Err(Error::Contract(_))));
        assert!(matches!(guided_filter(a, a, 1, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn gradcheck_self_guided() {
        let w = random(&[2, 5, 5], 9);
        let r = gradcheck(
            |tape, v| Ok(guided_filter(v[0], v[0], 1, 1e-2)?.mul(tape.constant(w.clone()))?.sum()),
            &[random(&[2, 5, 5], 10)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
        let r = gradcheck(
            |tape, v| Ok(guided_filter(v[0], v[1], 2, 1e-2)?.mul(tape.constant(w.clone()))?.sum()),
            &[random(&[2, 5, 5], 11), random(&[2, 5, 5], 12)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
    }
}
