//! Named finite-difference checks over every differentiable building block,
//! shared by the `gradcheck` subcommand and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imageproc::{guided_filter, SegmentParams};
use crate::losses::{content_loss, structure_loss_with_target, structure_target, tv_loss};
use crate::networks::{generator_forward, ExtractorParams, GeneratorParams};
use crate::pmc::{multi_level_motion_loss, FeaturePyramid, PmcConfig};
use crate::ssa::{ssa_layer, SsaConfig};
use crate::tensor::{gradcheck, GradcheckReport, ReduceKind, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradcheckReport,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn uniform(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(-1.0..1.0))
    }

    /// Magnitudes in [0.1, 1] with random sign, away from kinks at 0.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let m = self.0.random_range(0.1..1.0);
            if self.0.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(0.5..1.5))
    }

    fn unit(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(0.05..0.95))
    }
}

/// Dot product with a fixed tensor: a scalar whose gradient exercises every
/// output element.
fn project<'t>(v: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(v.mul(v.tape().constant(w.clone()))?.sum())
}

fn run<F>(out: &mut Vec<SuiteEntry>, name: &'static str, f: F, inputs: &[Tensor]) -> Result<()>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let report = gradcheck(f, inputs, STEP, TOLERANCE)?;
    out.push(SuiteEntry { name, report });
    Ok(())
}

/// Runs every check on small random inputs drawn from `seed`.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    let x = g.uniform(&[2, 4, 4]);
    let y = g.uniform(&[2, 4, 4]);
    let pos = g.positive(&[2, 4, 4]);
    let kink = g.off_zero(&[2, 4, 4]);
    let w = g.uniform(&[2, 4, 4]);

    macro_rules! unary {
        ($name:expr, $input:expr, |$v:ident| $body:expr) => {{
            let w = w.clone();
            run(&mut out, $name, move |_, vs| { let $v = vs[0]; project($body, &w) }, &[$input.clone()])?;
        }};
    }
    unary!("neg/scale/add_scalar", x, |v| v.neg().scale(1.7).add_scalar(0.3));
    unary!("abs", kink, |v| v.abs());
    unary!("exp", x, |v| v.exp());
    unary!("ln", pos, |v| v.ln());
    unary!("sqrt", pos, |v| v.sqrt());
    unary!("square", x, |v| v.square());
    unary!("powf", pos, |v| v.powf(-1.5));
    unary!("sigmoid", x, |v| v.sigmoid());
    unary!("leaky_relu", kink, |v| v.leaky_relu(0.2));
    unary!("clamp", x, |v| v.scale(3.0).clamp(-1.0, 1.0));
    unary!("softmax", x, |v| v.softmax(2)?);
    unary!("l2_normalize", x, |v| v.l2_normalize(0, 1e-8)?);
    unary!("box_filter", x, |v| v.box_filter(1)?);
    unary!("transpose/reshape", x, |v| v.reshape(&[8, 4])?.transpose()?.reshape(&[2, 4, 4])?);

    let wy = w.clone();
    run(
        &mut out,
        "add/sub/mul",
        move |_, v| project(v[0].mul(v[1])?.sub(v[1])?.add(v[0])?, &wy),
        &[x.clone(), y],
    )?;
    let wy = w.clone();
    run(&mut out, "div", move |_, v| project(v[0].div(v[1])?, &wy), &[x.clone(), pos.clone()])?;
    let wy = w.clone();
    run(&mut out, "scale_by", move |_, v| project(v[0].scale_by(v[1])?, &wy), &[x.clone(), Tensor::scalar(0.7)])?;
    let wm = g.uniform(&[8, 3]);
    run(
        &mut out,
        "matmul",
        move |_, v| project(v[0].reshape(&[8, 4])?.matmul(v[1])?, &wm),
        &[x.clone(), g.uniform(&[4, 3])],
    )?;
    let (wd1, wd2) = (g.uniform(&[2, 3, 4]), g.uniform(&[2, 4, 3]));
    run(
        &mut out,
        "forward_diff",
        move |_, v| project(v[0].forward_diff(1)?, &wd1)?.add(project(v[0].forward_diff(2)?, &wd2)?),
        std::slice::from_ref(&x),
    )?;
    let wr = g.uniform(&[2, 4]);
    run(&mut out, "reduce", move |_, v| project(v[0].reduce(ReduceKind::Mean, &[1])?, &wr), std::slice::from_ref(&x))?;
    run(&mut out, "sum/mean/l1", |_, v| v[0].sum().add(v[0].mean())?.add(v[0].l1()), std::slice::from_ref(&kink))?;
    let wc = g.uniform(&[3, 2, 2]);
    run(
        &mut out,
        "conv2d",
        move |_, v| project(v[0].conv2d(v[1], v[2], 2, 1)?, &wc),
        &[x.clone(), g.uniform(&[3, 2, 3, 3]), g.uniform(&[3])],
    )?;
    let wz = g.uniform(&[2, 3, 7]);
    run(&mut out, "resize_to", move |_, v| project(v[0].resize_to(3, 7)?, &wz), std::slice::from_ref(&x))?;
    let coords: Vec<(f64, f64)> = (0..12).map(|i| (0.37 * i as f64 - 0.5, 0.21 * i as f64 + 0.13)).collect();
    let ws = g.uniform(&[2, 3, 4]);
    run(
        &mut out,
        "sample_bilinear",
        move |_, v| project(v[0].sample_bilinear(&coords, 3, 4)?, &ws),
        std::slice::from_ref(&x),
    )?;

    let wg = g.uniform(&[2, 5, 5]);
    run(
        &mut out,
        "guided_filter",
        move |_, v| project(guided_filter(v[0], v[1], 1, 1e-2)?, &wg),
        &[g.unit(&[2, 5, 5]), g.unit(&[2, 5, 5])],
    )?;

    let ssa = SsaConfig::default();
    let wa = g.uniform(&[3, 4, 4]);
    run(
        &mut out,
        "ssa_layer",
        {
            let ssa = ssa.clone();
            move |_, v| project(ssa_layer(v[0], v[1], &ssa)?, &wa)
        },
        &[g.uniform(&[3, 4, 4]), g.uniform(&[3, 4, 4])],
    )?;

    let s0 = [g.uniform(&[4, 3, 3]), g.uniform(&[6, 2, 2])];
    let s1 = [g.uniform(&[4, 3, 3]), g.uniform(&[6, 2, 2])];
    let pmc = PmcConfig::default();
    run(
        &mut out,
        "multi_level_motion_loss",
        move |tape, v| {
            let ps0 = FeaturePyramid::new(s0.iter().map(|t| tape.constant(t.clone())).collect());
            let ps1 = FeaturePyramid::new(s1.iter().map(|t| tape.constant(t.clone())).collect());
            let pt0 = FeaturePyramid::new(vec![v[0], v[1]]);
            let pt1 = FeaturePyramid::new(vec![v[2], v[3]]);
            multi_level_motion_loss(&ps0, &ps1, &pt0, &pt1, &pmc)
        },
        &[g.uniform(&[4, 3, 3]), g.uniform(&[6, 2, 2]), g.uniform(&[4, 3, 3]), g.uniform(&[6, 2, 2])],
    )?;

    let ex = ExtractorParams::default();
    let img = g.unit(&[3, 8, 8]);
    let photo = g.unit(&[3, 8, 8]);
    let target = structure_target(&img, &SegmentParams::for_size(8, 8))?;
    run(&mut out, "tv_loss", |_, v| tv_loss(v[0]), std::slice::from_ref(&img))?;
    let ex2 = ex.clone();
    run(
        &mut out,
        "content_loss",
        move |t, v| content_loss(v[0], t.constant(photo.clone()), &ex2),
        std::slice::from_ref(&img),
    )?;
    run(
        &mut out,
        "structure_loss",
        move |_, v| structure_loss_with_target(v[0], &target, &ex),
        std::slice::from_ref(&img),
    )?;

    let gen = GeneratorParams::new(4, seed)?;
    let wo = g.uniform(&[3, 8, 8]);
    let inputs = [img, gen.convs[0].weight.clone(), gen.convs[4].weight.clone(), gen.convs[13].weight.clone()];
    run(
        &mut out,
        "generator (8x8, base 4)",
        move |tape, v| {
            let mut bound = gen.bind(tape, false);
            bound[0].effective = v[1];
            bound[4].effective = v[2];
            bound[13].effective = v[3];
            project(generator_forward(&bound, v[0], &ssa)?.output, &wo)
        },
        &inputs,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_covers_every_block() {
        let entries = run_gradient_suite(11).unwrap();
        for e in &entries {
            assert!(e.report.passed, "{}: {}", e.name, e.report.max_rel_error);
        }
        assert!(entries.len() >= 30);
    }
}
