//! Command-line front end. `dispatch` parses arguments, runs one subcommand
//! and maps the outcome to an exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::gradsuite::{run_gradient_suite, STEP, TOLERANCE};
use crate::imageproc::{felzenszwalb_segment, load_image, region_color_fill, save_image, Image, SegmentParams};
use crate::losses::LossWeights;
use crate::networks::{extractor_forward, ExtractorParams};
use crate::pmc::{correlative_map, heatmap, PmcConfig};
use crate::synthetic::synthetic_dataset;
use crate::tensor::{Tape, Tensor};
use crate::trainer::{load_generator, run_training, TrainConfig};
use crate::video_eval::{evaluate_sequence, fb_occlusion_mask, read_flo, FlowField, OcclusionMask, FB_TOLERANCE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vidtoon", version, about = "Video cartoonization: training, stylization and temporal evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on photos turned into synthetic frame pairs.
    Train(TrainArgs),
    /// Stylize one image with a checkpoint.
    Stylize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stylize every frame of a directory of PPM frames.
    StylizeVideo {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Short- and long-term warping error of a stylized sequence.
    ///
    /// Frames are the PPM files of --frames in lexicographic order, numbered
    /// from 1. --flows holds flow_%04d_to_%04d.flo with flow_<i>_to_<i-1>
    /// warping frame i onto frame i-1. If flow_<i-1>_to_<i> files are also
    /// present and no masks are given, occlusion masks come from a
    /// forward-backward check. --masks holds mask_%04d_to_%04d.pgm
    /// (0 occluded, 255 valid) with the same numbering. --long-flows holds
    /// flow_<i>_to_0001.flo; without it long flows are chained from the
    /// short ones.
    EvalTemporal {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long = "long-flows")]
        long_flows: Option<PathBuf>,
        /// Also print the error of every pair.
        #[arg(long)]
        per_pair: bool,
    },
    /// Render the correlative map between two images at one extractor level as a PGM.
    DumpCorr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Pyramid level, 0 = finest.
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
        /// Use raw dot products instead of normalized features.
        #[arg(long)]
        raw: bool,
    },
    /// Finite-difference check of every differentiable block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Graph-based segmentation; writes the region-mean image.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        k: f64,
        #[arg(long, default_value_t = 0.8)]
        sigma: f64,
        #[arg(long = "min-size", default_value_t = 50)]
        min_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of PPM/PGM photos.
    #[arg(long, required_unless_present = "synthetic")]
    photos: Option<PathBuf>,
    /// Directory of PPM/PGM cartoon images.
    #[arg(long, required_unless_present = "synthetic")]
    cartoons: Option<PathBuf>,
    /// Use this many procedural photos and cartoons instead of directories.
    #[arg(long, conflicts_with_all = ["photos", "cartoons"])]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "ssa-r", default_value_t = 3)]
    ssa_r: usize,
    #[arg(long = "no-ssa")]
    no_ssa: bool,
    #[arg(long = "no-pmc")]
    no_pmc: bool,
    /// Six comma-separated weights: surface,texture,structure,content,tv,motion.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long = "base-channels", default_value_t = 32)]
    base_channels: usize,
    #[arg(long = "batch-size", default_value_t = 1)]
    batch_size: usize,
    #[arg(long = "checkpoint-interval", default_value_t = 0)]
    checkpoint_interval: usize,
    #[arg(long = "lr", default_value_t = 2e-4)]
    learning_rate: f64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::MetricUndefined(..) => EXIT_NUMERIC,
        Error::Contract(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match run(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(a) => train(a, out, err),
        Command::Stylize { ckpt, input, out: dest } => {
            let (gen, cfg) = load_generator(&ckpt)?;
            let img = rgb(load_image(&input)?);
            let styled = gen.stylize(&img.to_tensor(), &cfg.effective_ssa())?;
            save_image(&dest, &Image::from_tensor(&styled)?)?;
            Ok(EXIT_OK)
        }
        Command::StylizeVideo { ckpt, input, out: dest } => {
            let (gen, cfg) = load_generator(&ckpt)?;
            let ssa = cfg.effective_ssa();
            let frames = list_frames(&input)?;
            std::fs::create_dir_all(&dest)?;
            frames.par_iter().try_for_each(|path| -> Result<()> {
                let img = rgb(load_image(path)?);
                let styled = gen.stylize(&img.to_tensor(), &ssa)?;
                let name = path.file_stem().expect("listed files have names");
                save_image(dest.join(name).with_extension("ppm"), &Image::from_tensor(&styled)?)
            })?;
            writeln!(out, "{} frames", frames.len())?;
            Ok(EXIT_OK)
        }
        Command::EvalTemporal { frames, flows, masks, long_flows, per_pair } => {
            eval_temporal(&frames, &flows, masks.as_deref(), long_flows.as_deref(), per_pair, out)
        }
        Command::DumpCorr { ckpt, a, b, level, out: dest, raw } => {
            let ex = ExtractorParams::read_from(&Checkpoint::load(&ckpt)?)?;
            let (ia, ib) = (rgb(load_image(&a)?), rgb(load_image(&b)?));
            let tape = Tape::new();
            let pa = extractor_forward(&ex, tape.constant(ia.to_tensor()))?;
            let pb = extractor_forward(&ex, tape.constant(ib.to_tensor()))?;
            if level >= pa.len() {
                return Err(Error::Contract(format!("level {level} out of range 0..{}", pa.len())));
            }
            let cfg = PmcConfig { normalize: !raw };
            let map = correlative_map(pa.levels[level], pb.levels[level], &cfg)?.value();
            let shape = pa.levels[level].shape();
            let hm = heatmap(&map, shape[1], shape[2])?;
            save_image(&dest, &Image::from_tensor(&hm)?)?;
            writeln!(out, "level {level}: {}x{} locations", shape[1], shape[2])?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed } => {
            let entries = run_gradient_suite(seed)?;
            writeln!(out, "step {STEP:e}, tolerance {TOLERANCE:e}")?;
            writeln!(out, "{:<28} {:>12}  result", "check", "max_rel_err")?;
            let mut failed = 0;
            for e in &entries {
                let ok = e.report.passed;
                failed += usize::from(!ok);
                writeln!(out, "{:<28} {:>12.3e}  {}", e.name, e.report.max_rel_error, if ok { "pass" } else { "FAIL" })?;
            }
            if failed > 0 {
                writeln!(err, "{failed} of {} checks failed", entries.len())?;
                return Ok(EXIT_NUMERIC);
            }
            Ok(EXIT_OK)
        }
        Command::Segment { input, k, sigma, min_size, out: dest } => {
            let img = load_image(&input)?;
            let seg = felzenszwalb_segment(&img, &SegmentParams { k, sigma, min_size })?;
            save_image(&dest, &region_color_fill(&img, &seg)?)?;
            writeln!(out, "{} regions", seg.count)?;
            Ok(EXIT_OK)
        }
    }
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        image_size: a.size,
        base_channels: a.base_channels,
        ssa_on: !a.no_ssa,
        pmc_on: !a.no_pmc,
        seed: a.seed,
        checkpoint_interval: a.checkpoint_interval,
        ..TrainConfig::default()
    };
    cfg.ssa.patch_width = a.ssa_r;
    cfg.adam.learning_rate = a.learning_rate;
    if let Some(w) = &a.weights {
        cfg.weights = LossWeights::parse(w).map_err(|e| Error::Contract(e.to_string()))?;
    }
    cfg.validate()?;
    let (photos, cartoons) = match a.synthetic {
        Some(n) => synthetic_dataset(n.max(1), n.max(1), a.size, a.seed),
        None => (
            load_dir(a.photos.as_deref().expect("required by clap"))?,
            load_dir(a.cartoons.as_deref().expect("required by clap"))?,
        ),
    };
    writeln!(err, "training on {} photos, {} cartoons", photos.len(), cartoons.len())?;
    let run = run_training(cfg, &photos, &cartoons, Some(&a.out))?;
    if let Some(last) = run.reports.last() {
        writeln!(out, "{}", crate::losses::LossReport::csv_header())?;
        writeln!(out, "{}", last.csv_row(run.reports.len() - 1))?;
    }
    Ok(EXIT_OK)
}

fn rgb(img: Image) -> Image {
    if img.channels() == 3 {
        return img;
    }
    let d = img.data();
    Image::new(3, img.height(), img.width(), [d, d, d].concat()).expect("same dims")
}

/// PPM/PGM files of `dir` in lexicographic order.
fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        p.is_file()
            && p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
    });
    files.sort();
    if files.is_empty() {
        return Err(Error::Schema(format!("no PPM/PGM files in {}", dir.display())));
    }
    Ok(files)
}

fn load_dir(dir: &Path) -> Result<Vec<Image>> {
    list_frames(dir)?.par_iter().map(load_image).collect()
}

fn pair_name(prefix: &str, from: usize, to: usize, ext: &str) -> String {
    format!("{prefix}_{from:04}_to_{to:04}.{ext}")
}

fn read_masks(dir: &Path, pairs: impl Iterator<Item = (usize, usize)>) -> Result<Vec<OcclusionMask>> {
    pairs
        .map(|(i, j)| OcclusionMask::from_image(&load_image(dir.join(pair_name("mask", i, j, "pgm")))?))
        .collect()
}

fn eval_temporal(
    frames_dir: &Path,
    flows_dir: &Path,
    masks_dir: Option<&Path>,
    long_dir: Option<&Path>,
    per_pair: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let frames: Vec<Tensor> = load_dir(frames_dir)?.iter().map(Image::to_tensor).collect();
    let n = frames.len();
    let short_ids = || (2..=n).map(|i| (i, i - 1));
    let long_ids = || (2..=n).map(|i| (i, 1));
    let flows: Vec<FlowField> = short_ids()
        .map(|(i, j)| read_flo(flows_dir.join(pair_name("flow", i, j, "flo"))))
        .collect::<Result<_>>()?;
    let short_masks = match masks_dir {
        Some(d) => Some(read_masks(d, short_ids())?),
        None => {
            let fwd: Vec<PathBuf> = short_ids().map(|(i, j)| flows_dir.join(pair_name("flow", j, i, "flo"))).collect();
            if n >= 2 && fwd.iter().all(|p| p.is_file()) {
                let mut masks = Vec::with_capacity(fwd.len());
                for (bwd, path) in flows.iter().zip(&fwd) {
                    masks.push(fb_occlusion_mask(&read_flo(path)?, bwd, FB_TOLERANCE)?);
                }
                Some(masks)
            } else {
                None
            }
        }
    };
    let long_flows = match long_dir {
        Some(d) => Some(
            long_ids()
                .map(|(i, j)| read_flo(d.join(pair_name("flow", i, j, "flo"))))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let long_masks = match masks_dir {
        Some(d) if n > 2 && long_ids().all(|(i, j)| d.join(pair_name("mask", i, j, "pgm")).is_file()) => {
            Some(read_masks(d, long_ids())?)
        }
        // With two frames the long pair is the short pair.
        Some(_) if n == 2 => short_masks.clone(),
        _ => None,
    };
    let eval = evaluate_sequence(
        &frames,
        &flows,
        short_masks.as_deref(),
        long_flows.as_deref(),
        long_masks.as_deref(),
    )?;
    writeln!(out, "E_short {:.6}", eval.e_short)?;
    writeln!(out, "E_long {:.6}", eval.e_long)?;
    if per_pair {
        for (k, (s, l)) in eval.short_pairs.iter().zip(&eval.long_pairs).enumerate() {
            writeln!(out, "pair {} short {:.6} long {:.6}", k + 2, s, l)?;
        }
    }
    Ok(EXIT_OK)
}
