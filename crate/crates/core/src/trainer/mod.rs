//! Alternating discriminator / generator optimisation on frame pairs.

mod adam;
mod config;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::TrainConfig;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{dim_err, Error, Result};
use crate::imageproc::{random_affine_pair, save_image, AffinePairSpec, FramePair, Image};
use crate::losses::{
    content_loss, d_adversarial_loss, g_adversarial_loss, structure_loss, surface_representation,
    texture_representation, total_generator_loss, tv_loss, LossComponents, LossReport, LossWeights,
};
use crate::networks::{
    conv_gradients, discriminator_forward, extractor_forward, generator_forward, BoundDiscriminator, Conv,
    DiscriminatorParams, ExtractorParams, GeneratorParams,
};
use crate::pmc::{multi_level_motion_loss, PmcConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Every parameter set of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub generator: GeneratorParams,
    pub d_surface: DiscriminatorParams,
    pub d_texture: DiscriminatorParams,
    pub extractor: ExtractorParams,
}

impl Models {
    pub fn new(base_channels: usize, seed: u64) -> Result<Self> {
        Ok(Models {
            generator: GeneratorParams::new(base_channels, seed)?,
            d_surface: DiscriminatorParams::new(3, base_channels, seed.wrapping_add(1))?,
            d_texture: DiscriminatorParams::new(1, base_channels, seed.wrapping_add(2))?,
            extractor: ExtractorParams::default(),
        })
    }
}

fn conv_tensors(convs: &[Conv]) -> Vec<&Tensor> {
    convs.iter().flat_map(|c| [&c.weight, &c.bias]).collect()
}

fn conv_tensors_mut(convs: &mut [Conv]) -> Vec<&mut Tensor> {
    convs.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect()
}

fn flat_grads(grads: Vec<(Tensor, Tensor)>) -> Vec<Tensor> {
    grads.into_iter().flat_map(|(w, b)| [w, b]).collect()
}

fn check_finite(v: Var<'_>, name: &str) -> Result<f64> {
    let x = v.item();
    if !x.is_finite() {
        return Err(Error::Numeric(format!("{name} loss is not finite ({x})")));
    }
    Ok(x)
}

fn sum_scaled<'t>(terms: &[Var<'t>], scale: f64) -> Result<Var<'t>> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(*t)?;
    }
    Ok(acc.scale(scale))
}

/// Models, optimiser states and the step counter of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub models: Models,
    pub adam_g: AdamState,
    pub adam_ds: AdamState,
    pub adam_dt: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(cfg.base_channels, cfg.seed)?;
        Ok(Self::with_models(cfg, models))
    }

    fn with_models(cfg: TrainConfig, models: Models) -> Self {
        Trainer {
            adam_g: AdamState::new(conv_tensors(&models.generator.convs)),
            adam_ds: AdamState::new(conv_tensors(&models.d_surface.convs)),
            adam_dt: AdamState::new(conv_tensors(&models.d_texture.convs)),
            cfg,
            models,
            step: 0,
        }
    }

    fn check_batch(&self, pairs: &[FramePair], cartoons: &[Image]) -> Result<()> {
        if pairs.is_empty() || cartoons.is_empty() {
            return dim_err("a training step needs at least one pair and one cartoon");
        }
        let shape = |i: &Image| (i.channels(), i.height(), i.width());
        let s = shape(&pairs[0].first);
        if s.0 != 3 || pairs.iter().any(|p| shape(&p.first) != s || shape(&p.second) != s)
            || cartoons.iter().any(|c| shape(c) != s)
        {
            return dim_err("pairs and cartoons must all be RGB images of one size");
        }
        Ok(())
    }

    /// Discriminator objectives for the batch, averaged over pairs.
    fn discriminator_losses<'t>(
        &self,
        tape: &'t Tape,
        ds: &BoundDiscriminator<'t>,
        dt: &BoundDiscriminator<'t>,
        fakes: &[[Tensor; 2]],
        cartoons: &[Image],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (mut ls, mut lt) = (Vec::new(), Vec::new());
        for (k, pair) in fakes.iter().enumerate() {
            let real = tape.constant(cartoons[k % cartoons.len()].to_tensor());
            let fake: Vec<Var<'t>> = pair.iter().map(|f| tape.constant(f.clone())).collect();
            let real_s = discriminator_forward(ds, surface_representation(real, &self.cfg.guided)?)?;
            let real_t = discriminator_forward(dt, texture_representation(real)?)?;
            let mut fs = Vec::new();
            let mut ft = Vec::new();
            for f in &fake {
                fs.push(discriminator_forward(ds, surface_representation(*f, &self.cfg.guided)?)?);
                ft.push(discriminator_forward(dt, texture_representation(*f)?)?);
            }
            ls.push(d_adversarial_loss(real_s, &fs)?);
            lt.push(d_adversarial_loss(real_t, &ft)?);
        }
        let n = 1.0 / fakes.len() as f64;
        Ok((sum_scaled(&ls, n)?, sum_scaled(&lt, n)?))
    }

    /// Generator terms for the batch. Image-level terms are averaged over
    /// both frames of every pair, motion over pairs.
    fn generator_components<'t>(
        &self,
        tape: &'t Tape,
        g: &[crate::networks::BoundConv<'t>],
        ds: &BoundDiscriminator<'t>,
        dt: &BoundDiscriminator<'t>,
        pairs: &[FramePair],
    ) -> Result<LossComponents<'t>> {
        let ssa = self.cfg.effective_ssa();
        let seg = self.cfg.segment_params();
        let ex = &self.models.extractor;
        let mut terms: [Vec<Var<'t>>; 6] = Default::default();
        for pair in pairs {
            let s = [tape.constant(pair.first.to_tensor()), tape.constant(pair.second.to_tensor())];
            let mut outs = Vec::with_capacity(2);
            for &frame in &s {
                let out = generator_forward(g, frame, &ssa)?.output;
                terms[0].push(g_adversarial_loss(discriminator_forward(
                    ds,
                    surface_representation(out, &self.cfg.guided)?,
                )?));
                terms[1].push(g_adversarial_loss(discriminator_forward(dt, texture_representation(out)?)?));
                terms[2].push(structure_loss(out, ex, &seg)?);
                terms[3].push(content_loss(out, frame, ex)?);
                terms[4].push(tv_loss(out)?);
                outs.push(out);
            }
            let ps0 = extractor_forward(ex, s[0])?.detach();
            let ps1 = extractor_forward(ex, s[1])?.detach();
            let (mut pt0, mut pt1) = (extractor_forward(ex, outs[0])?, extractor_forward(ex, outs[1])?);
            if !self.cfg.pmc_on {
                // Reported only; the arm without motion consistency ignores it.
                pt0 = pt0.detach();
                pt1 = pt1.detach();
            }
            terms[5].push(multi_level_motion_loss(&ps0, &ps1, &pt0, &pt1, &PmcConfig::default())?);
        }
        let per_frame = 1.0 / (2 * pairs.len()) as f64;
        Ok(LossComponents {
            surface: sum_scaled(&terms[0], per_frame)?,
            texture: sum_scaled(&terms[1], per_frame)?,
            structure: sum_scaled(&terms[2], per_frame)?,
            content: sum_scaled(&terms[3], per_frame)?,
            tv: sum_scaled(&terms[4], per_frame)?,
            motion: sum_scaled(&terms[5], 1.0 / pairs.len() as f64)?,
        })
    }

    /// Loss weights actually optimised: motion is dropped when PMC is off.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            motion: if self.cfg.pmc_on { self.cfg.weights.motion } else { 0.0 },
            ..self.cfg.weights
        }
    }

    fn stylize_pairs(&self, pairs: &[FramePair]) -> Result<Vec<[Tensor; 2]>> {
        let ssa = self.cfg.effective_ssa();
        let g = &self.models.generator;
        pairs
            .iter()
            .map(|p| Ok([g.stylize(&p.first.to_tensor(), &ssa)?, g.stylize(&p.second.to_tensor(), &ssa)?]))
            .collect()
    }

    /// One discriminator update followed by one generator update. Pair `k`
    /// is matched with cartoon `k % cartoons.len()`.
    pub fn train_step(&mut self, pairs: &[FramePair], cartoons: &[Image]) -> Result<LossReport> {
        self.check_batch(pairs, cartoons)?;

        // Discriminators, generator frozen.
        self.models.d_surface.refresh(1)?;
        self.models.d_texture.refresh(1)?;
        let fakes = self.stylize_pairs(pairs)?;
        let (d_surface, d_texture, grads_s, grads_t) = {
            let tape = Tape::new();
            let ds = self.models.d_surface.bind(&tape, true)?;
            let dt = self.models.d_texture.bind(&tape, true)?;
            let (ls, lt) = self.discriminator_losses(&tape, &ds, &dt, &fakes, cartoons)?;
            let (vs, vt) = (check_finite(ls, "d_surface")?, check_finite(lt, "d_texture")?);
            let grads = tape.backward(ls.add(lt)?)?;
            (vs, vt, flat_grads(conv_gradients(&grads, &ds.layers)), flat_grads(conv_gradients(&grads, &dt.layers)))
        };
        let adam = self.cfg.adam;
        adam_step(&mut conv_tensors_mut(&mut self.models.d_surface.convs), &grads_s, &mut self.adam_ds, &adam)?;
        adam_step(&mut conv_tensors_mut(&mut self.models.d_texture.convs), &grads_t, &mut self.adam_dt, &adam)?;

        // Generator, discriminators frozen.
        let (mut report, grads_g) = {
            let tape = Tape::new();
            let g = self.models.generator.bind(&tape, true);
            let ds = self.models.d_surface.bind(&tape, false)?;
            let dt = self.models.d_texture.bind(&tape, false)?;
            let comps = self.generator_components(&tape, &g, &ds, &dt, pairs)?;
            let (total, report) = total_generator_loss(&comps, &self.effective_weights())?;
            let grads = tape.backward(total)?;
            (report, flat_grads(conv_gradients(&grads, &g)))
        };
        adam_step(&mut conv_tensors_mut(&mut self.models.generator.convs), &grads_g, &mut self.adam_g, &adam)?;

        report.d_surface = d_surface;
        report.d_texture = d_texture;
        self.step += 1;
        Ok(report)
    }

    /// All losses under the current parameters, without any update.
    pub fn evaluate(&self, pairs: &[FramePair], cartoons: &[Image]) -> Result<LossReport> {
        self.check_batch(pairs, cartoons)?;
        let fakes = self.stylize_pairs(pairs)?;
        let tape = Tape::new();
        let g = self.models.generator.bind(&tape, false);
        let ds = self.models.d_surface.bind(&tape, false)?;
        let dt = self.models.d_texture.bind(&tape, false)?;
        let (ls, lt) = self.discriminator_losses(&tape, &ds, &dt, &fakes, cartoons)?;
        let comps = self.generator_components(&tape, &g, &ds, &dt, pairs)?;
        let (_, mut report) = total_generator_loss(&comps, &self.effective_weights())?;
        report.d_surface = check_finite(ls, "d_surface")?;
        report.d_texture = check_finite(lt, "d_texture")?;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_text("config", &self.cfg.to_kv());
        ck.put_u64s("trainer.step", &[self.step]);
        let m = &self.models;
        for (i, c) in m.generator.convs.iter().enumerate() {
            ck.put_tensor(&format!("gen.{i}.weight"), &c.weight);
            ck.put_tensor(&format!("gen.{i}.bias"), &c.bias);
        }
        for (name, d) in [("d_surface", &m.d_surface), ("d_texture", &m.d_texture)] {
            for (i, c) in d.convs.iter().enumerate() {
                ck.put_tensor(&format!("{name}.{i}.weight"), &c.weight);
                ck.put_tensor(&format!("{name}.{i}.bias"), &c.bias);
                ck.put_tensor(&format!("{name}.{i}.u"), &Tensor::new(&[d.u[i].len()], d.u[i].clone()).expect("u"));
                ck.put_tensor(&format!("{name}.{i}.v"), &Tensor::new(&[d.v[i].len()], d.v[i].clone()).expect("v"));
            }
        }
        m.extractor.write_to(&mut ck);
        for (name, st) in [("gen", &self.adam_g), ("d_surface", &self.adam_ds), ("d_texture", &self.adam_dt)] {
            for (j, (mm, vv)) in st.m.iter().zip(&st.v).enumerate() {
                ck.put_tensor(&format!("adam.{name}.m.{j}"), mm);
                ck.put_tensor(&format!("adam.{name}.v.{j}"), vv);
            }
            ck.put_u64s(&format!("adam.{name}.steps"), &st.steps);
        }
        ck
    }

    /// Restores a run. Architecture sizes come from the checkpoint; the
    /// ablation flags and every other setting come from `cfg`.
    pub fn from_checkpoint(ck: &Checkpoint, mut cfg: TrainConfig) -> Result<Self> {
        let base = ck.tensor("gen.0.weight")?.shape()[0];
        let d_base = ck.tensor("d_surface.0.weight")?.shape()[0];
        if d_base != base {
            return Err(Error::Schema(format!("generator width {base} but discriminator width {d_base}")));
        }
        cfg.base_channels = base;
        cfg.validate()?;
        let mut models = Models::new(base, 0)?;
        for (i, c) in models.generator.convs.iter_mut().enumerate() {
            read_conv(ck, &format!("gen.{i}"), c)?;
        }
        for (name, d) in [("d_surface", &mut models.d_surface), ("d_texture", &mut models.d_texture)] {
            for i in 0..d.convs.len() {
                read_conv(ck, &format!("{name}.{i}"), &mut d.convs[i])?;
                d.u[i] = ck.tensor_shaped(&format!("{name}.{i}.u"), &[d.u[i].len()])?.into_data();
                d.v[i] = ck.tensor_shaped(&format!("{name}.{i}.v"), &[d.v[i].len()])?.into_data();
            }
            d.validate()?;
        }
        models.generator.validate()?;
        models.extractor = ExtractorParams::read_from(ck)?;
        let mut t = Self::with_models(cfg, models);
        for (name, st) in [("gen", &mut t.adam_g), ("d_surface", &mut t.adam_ds), ("d_texture", &mut t.adam_dt)] {
            for j in 0..st.m.len() {
                let shape = st.m[j].shape().to_vec();
                st.m[j] = ck.tensor_shaped(&format!("adam.{name}.m.{j}"), &shape)?;
                st.v[j] = ck.tensor_shaped(&format!("adam.{name}.v.{j}"), &shape)?;
            }
            st.steps = ck.u64s(&format!("adam.{name}.steps"))?;
            if st.steps.len() != st.m.len() {
                return Err(Error::Schema(format!("adam.{name}.steps has the wrong length")));
            }
        }
        t.step = *ck
            .u64s("trainer.step")?
            .first()
            .ok_or_else(|| Error::Schema("empty trainer.step".into()))?;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>, cfg: TrainConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg)
    }
}

fn read_conv(ck: &Checkpoint, prefix: &str, conv: &mut Conv) -> Result<()> {
    conv.weight = ck.tensor_shaped(&format!("{prefix}.weight"), conv.weight.shape())?;
    conv.bias = ck.tensor_shaped(&format!("{prefix}.bias"), conv.bias.shape())?;
    Ok(())
}

/// Generator and the configuration it was trained with.
pub fn load_generator(path: impl AsRef<Path>) -> Result<(GeneratorParams, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    let cfg = TrainConfig::from_kv(&ck.text("config")?)?;
    let t = Trainer::from_checkpoint(&ck, cfg)?;
    Ok((t.models.generator, t.cfg))
}

/// Resizes photos to `size` and turns each into a synthetic consecutive
/// pair; photo `i` uses affine seed `seed + i`.
pub fn prepare_pairs(photos: &[Image], size: usize, seed: u64) -> Result<Vec<FramePair>> {
    photos
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let img = p.resized(size, size)?;
            let img = if img.channels() == 3 { img } else { gray_to_rgb(&img) };
            let spec = AffinePairSpec::default().with_seed(seed.wrapping_add(i as u64));
            Ok(random_affine_pair(&img, &spec)?.0)
        })
        .collect()
}

fn gray_to_rgb(img: &Image) -> Image {
    let d = img.data();
    Image::new(3, img.height(), img.width(), [d, d, d].concat()).expect("same dims")
}

/// Resizes cartoons to `size`, expanding grayscale to RGB.
pub fn prepare_cartoons(cartoons: &[Image], size: usize) -> Result<Vec<Image>> {
    cartoons
        .par_iter()
        .map(|c| {
            let img = c.resized(size, size)?;
            Ok(if img.channels() == 3 { img } else { gray_to_rgb(&img) })
        })
        .collect()
}

/// What a finished run leaves behind.
pub struct TrainingRun {
    pub trainer: Trainer,
    pub reports: Vec<LossReport>,
    pub pairs: Vec<FramePair>,
}

/// Trains for `cfg.steps` steps. Step `k` uses pairs `k*b .. k*b + b`
/// (cyclically) and the cartoons at the same positions. With `out_dir` the
/// run writes `config.txt`, `losses.csv`, and `ckpt_<step>.bin` plus
/// `sample_<step>.ppm` at every checkpoint interval and at the end.
pub fn run_training(
    cfg: TrainConfig,
    photos: &[Image],
    cartoons: &[Image],
    out_dir: Option<&Path>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    if photos.is_empty() || cartoons.is_empty() {
        return dim_err("training needs at least one photo and one cartoon");
    }
    let pairs = prepare_pairs(photos, cfg.image_size, cfg.seed)?;
    let cartoons = prepare_cartoons(cartoons, cfg.image_size)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config.txt"), cfg.to_kv())?;
            let mut f = File::create(dir.join("losses.csv"))?;
            writeln!(f, "{}", LossReport::csv_header())?;
            Some(f)
        }
        None => None,
    };
    let b = cfg.batch_size;
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<FramePair> = (0..b).map(|j| pairs[(step * b + j) % pairs.len()].clone()).collect();
        let carts: Vec<Image> = (0..b).map(|j| cartoons[(step * b + j) % cartoons.len()].clone()).collect();
        let report = trainer.train_step(&batch, &carts)?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", report.csv_row(step))?;
        }
        reports.push(report);
        let done = step + 1;
        let due = cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0;
        if let Some(dir) = out_dir {
            if due || done == cfg.steps {
                write_artifacts(&trainer, &pairs[0], dir, done)?;
            }
        }
    }
    if let Some(f) = log.as_mut() {
        f.flush()?;
    }
    Ok(TrainingRun { trainer, reports, pairs })
}

fn write_artifacts(trainer: &Trainer, pair: &FramePair, dir: &Path, step: usize) -> Result<()> {
    trainer.save_checkpoint(checkpoint_path(dir, step))?;
    let sample = trainer
        .models
        .generator
        .stylize(&pair.first.to_tensor(), &trainer.cfg.effective_ssa())?;
    save_image(dir.join(format!("sample_{step}.ppm")), &Image::from_tensor(&sample)?)
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step}.bin"))
}
