//! Command-line pipeline: data generation, staged training, end-to-end
//! inference, and evaluation.
//!
//! Run directory layout: `out/{checkpoints,logs,frames,masks,pred,report}`.
//! Exit codes: 0 success, 2 usage, 3 data/format, 4 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crossview_tensor::io::Container;
use crossview_tensor::rng;

use crate::config::RunConfig;
use crate::dataset::{read_dataset, write_dataset, DatasetMeta};
use crate::diffusion::{ddim_sample, make_schedule, DiffModel};
use crate::error::{data_err, usage_err, Result};
use crate::metrics::{evaluate_masks, psnr, ssim};
use crate::report::{write_pgm, write_ppm, EvalReport, GenRow, SegRow};
use crate::segnet::SegNet;
use crate::training::{train_diffusion_phase1, train_diffusion_phase2, train_segnet};
use crate::world::{Clip, MaskClip, PairedSample};

#[derive(Parser, Debug)]
#[command(name = "crossview", version, about = "Cross-view mask prediction and video diffusion on a synthetic ego/exo world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Cross-view mask prediction network.
    Seg,
    /// Diffusion phase 1: UNet backbone + text table.
    Diff1,
    /// Diffusion phase 2: frozen backbone, mask guidance.
    Diff2,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a paired ego/exo dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage and write a checkpoint plus CSV log.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Phase-1 checkpoint (required for --stage diff2).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Predict ego masks and future ego frames for dataset samples.
    Infer {
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        diff: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample index, or "all".
        #[arg(long, default_value = "all")]
        sample: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Use ground-truth future masks instead of the rollout.
        #[arg(long)]
        oracle_masks: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score predictions against dataset ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, count, seed } => {
            cmd_gen_data(config.as_deref(), &out, count, seed)
        }
        Command::Train { stage, config, data, out, init } => {
            cmd_train(stage, config.as_deref(), &data, &out, init.as_deref())
        }
        Command::Infer { seg, diff, data, sample, steps, seed, out, oracle_masks, config } => {
            cmd_infer(&InferArgs {
                seg,
                diff,
                data,
                sample,
                steps,
                seed,
                out,
                oracle_masks,
                config,
            })
        }
        Command::Eval { pred, data, out } => cmd_eval(&pred, &data, &out),
    }
}

pub fn cmd_gen_data(
    config: Option<&Path>,
    out: &Path,
    count: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let count = count.unwrap_or(cfg.world.samples);
    if count == 0 {
        return Err(usage_err("empty dataset requested"));
    }
    let seed = seed.unwrap_or(cfg.seed);
    let actions = cfg.world.action_ids()?;
    let samples =
        crate::world::generate_dataset(seed, count, cfg.world.frames, cfg.world.res, &actions)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_dataset(&samples, out)?;

    let total_px = (count * cfg.world.frames * cfg.world.res * cfg.world.res) as f64;
    let count_class = |c: u8| {
        samples
            .iter()
            .map(|s| s.exo_masks.data.iter().filter(|&&v| v == c).count())
            .sum::<usize>() as f64
            / total_px
    };
    println!(
        "wrote {} samples ({} frames at {}x{}) to {}",
        count,
        cfg.world.frames,
        cfg.world.res,
        cfg.world.res,
        out.display()
    );
    println!(
        "exo class pixel fractions: hand {:.4}, object {:.4}",
        count_class(1),
        count_class(2)
    );
    Ok(())
}

fn check_geometry(cfg: &RunConfig, meta: &DatasetMeta) -> Result<()> {
    if meta.res != cfg.world.res || meta.frames != cfg.world.frames {
        return Err(data_err(format!(
            "dataset geometry {}x{}@{} frames does not match config {}x{}@{}",
            meta.res, meta.res, meta.frames, cfg.world.res, cfg.world.res, cfg.world.frames
        )));
    }
    Ok(())
}

pub fn cmd_train(
    stage: Stage,
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    init: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let (samples, meta) = read_dataset(data)?;
    check_geometry(&cfg, &meta)?;
    let ckpt_dir = out.join("checkpoints");
    let log_dir = out.join("logs");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::create_dir_all(&log_dir)?;

    match stage {
        Stage::Seg => {
            let ckpt = ckpt_dir.join("seg.exgn");
            let (net, log) =
                train_segnet(&samples, cfg.segnet.dims(), &cfg.train_seg, cfg.seed, Some(&ckpt))?;
            net.save(&ckpt)?;
            log.write_csv(log_dir.join("seg.csv"))?;
            println!(
                "seg: {} steps, final loss {:.4}, checkpoint {}",
                cfg.train_seg.steps,
                log.records.last().map_or(f64::NAN, |r| r.loss),
                ckpt.display()
            );
        }
        Stage::Diff1 => {
            let ckpt = ckpt_dir.join("diff1.exgn");
            let (model, log) = train_diffusion_phase1(
                &samples,
                cfg.diffusion.dims(),
                &cfg.train_diff1,
                cfg.seed,
                Some(&ckpt),
            )?;
            model.save(&ckpt)?;
            log.write_csv(log_dir.join("diff1.csv"))?;
            println!(
                "diff1: {} steps, final loss {:.4}, checkpoint {}",
                cfg.train_diff1.steps,
                log.records.last().map_or(f64::NAN, |r| r.loss),
                ckpt.display()
            );
        }
        Stage::Diff2 => {
            let init = init.ok_or_else(|| {
                usage_err("--stage diff2 requires --init pointing at a phase-1 checkpoint")
            })?;
            let phase1 = DiffModel::load(init, false)?;
            let ckpt = ckpt_dir.join("diff2.exgn");
            let (model, log) =
                train_diffusion_phase2(&samples, &phase1, &cfg.train_diff2, cfg.seed, Some(&ckpt))?;
            model.save(&ckpt)?;
            log.write_csv(log_dir.join("diff2.csv"))?;
            println!(
                "diff2: {} steps, final loss {:.4}, checkpoint {}",
                cfg.train_diff2.steps,
                log.records.last().map_or(f64::NAN, |r| r.loss),
                ckpt.display()
            );
        }
    }
    Ok(())
}

pub struct InferArgs {
    pub seg: PathBuf,
    pub diff: PathBuf,
    pub data: PathBuf,
    pub sample: String,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub oracle_masks: bool,
    pub config: Option<PathBuf>,
}

/// One end-to-end prediction: rollout (or oracle) masks, then DDIM frames.
pub fn infer_sample(
    seg: &SegNet<f32>,
    diff: &DiffModel<f32>,
    sample: &PairedSample,
    steps: usize,
    seed: u64,
    oracle_masks: bool,
) -> Result<(MaskClip, Clip)> {
    let masks = if oracle_masks {
        sample.ego_masks.clone()
    } else {
        seg.rollout(&sample.exo, &sample.exo_masks, sample.ego.frame(0))?
    };
    let dims = diff.unet.dims;
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end)?;
    let clip = ddim_sample(
        &diff.unet,
        &diff.text,
        diff.guide.as_ref().map(|g| (g, &masks)),
        sample.ego.frame(0),
        sample.ego.frames,
        sample.ego.res,
        &sample.tokens,
        &sched,
        steps,
        seed,
    )?;
    Ok((masks, clip))
}

pub fn write_prediction(dir: &Path, index: usize, masks: &MaskClip, clip: &Clip) -> Result<()> {
    std::fs::create_dir_all(dir.join("pred"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    std::fs::create_dir_all(dir.join("frames"))?;
    let mut c = Container::new();
    c.insert_f32(
        "frames",
        &[clip.frames, 3, clip.res, clip.res],
        clip.data.clone(),
    )?;
    c.insert_u8("masks", &[masks.frames, masks.res, masks.res], masks.data.clone())?;
    c.write_to(dir.join("pred").join(format!("s{index}.exgn")))?;
    for f in 0..clip.frames {
        write_pgm(
            dir.join("masks").join(format!("s{index}_f{f}.pgm")),
            masks.frame(f),
            masks.res,
        )?;
        write_ppm(
            dir.join("frames").join(format!("s{index}_f{f}.ppm")),
            clip.frame(f),
            clip.res,
        )?;
    }
    Ok(())
}

pub fn read_prediction(dir: &Path, index: usize) -> Result<(MaskClip, Clip)> {
    let path = dir.join("pred").join(format!("s{index}.exgn"));
    if !path.exists() {
        return Err(data_err(format!(
            "missing prediction for sample {index}: {} not found",
            path.display()
        )));
    }
    let c = Container::read_from(&path)?;
    let (fs, fd) = c.require_f32("frames")?;
    let (ms, md) = c.require_u8("masks")?;
    let (frames, res) = match (fs, ms) {
        ([n, 3, h, w], [n2, h2, w2]) if n == n2 && h == w && h == h2 && w == w2 => (*n, *h),
        _ => return Err(data_err(format!("prediction s{index}: malformed shapes"))),
    };
    let masks = MaskClip { frames, res, data: md.to_vec() };
    masks.validate(&format!("prediction s{index}"))?;
    Ok((masks, Clip { frames, res, data: fd.to_vec() }))
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let (samples, meta) = read_dataset(&args.data)?;
    let seg = SegNet::<f32>::load(&args.seg, false)?;
    let diff = DiffModel::load(&args.diff, false)?;

    // geometry must line up before any compute
    if meta.res % 16 != 0 {
        return Err(data_err(format!("dataset res {} not divisible by 16", meta.res)));
    }
    let dims = diff.unet.dims;
    if meta.res % (4 * dims.patch) != 0 {
        return Err(data_err(format!(
            "dataset res {} incompatible with diffusion patch {}",
            meta.res, dims.patch
        )));
    }
    if dims.vocab < meta.vocab {
        return Err(data_err(format!(
            "checkpoint vocab {} smaller than dataset vocab {}",
            dims.vocab, meta.vocab
        )));
    }

    let indices: Vec<usize> = if args.sample == "all" {
        (0..samples.len()).collect()
    } else {
        let i: usize = args
            .sample
            .parse()
            .map_err(|_| usage_err(format!("--sample must be an index or \"all\", got {:?}", args.sample)))?;
        if i >= samples.len() {
            return Err(data_err(format!("sample {i} out of range ({} samples)", samples.len())));
        }
        vec![i]
    };

    let steps = args.steps.unwrap_or(cfg.diffusion.ddim_steps);
    let seed = args.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&args.out)?;
    for &i in &indices {
        let (masks, clip) = infer_sample(
            &seg,
            &diff,
            &samples[i],
            steps,
            rng::mix_index(seed, i as u64),
            args.oracle_masks,
        )?;
        write_prediction(&args.out, i, &masks, &clip)?;
        println!(
            "sample {i}: wrote {} frames (masks {}, ddim steps {steps})",
            clip.frames,
            if args.oracle_masks { "oracle" } else { "predicted" },
        );
    }
    Ok(())
}

pub fn cmd_eval(pred: &Path, data: &Path, out: &Path) -> Result<()> {
    let (samples, _meta) = read_dataset(data)?;
    let per_sample: Vec<(usize, (MaskClip, Clip))> = samples
        .par_iter()
        .enumerate()
        .map(|(i, _)| Ok((i, read_prediction(pred, i)?)))
        .collect::<Result<_>>()?;

    let mut report = EvalReport::default();
    let rows: Vec<(Vec<SegRow>, Vec<GenRow>)> = per_sample
        .par_iter()
        .map(|(i, (masks, clip))| eval_one(*i, &samples[*i], masks, clip))
        .collect::<Result<_>>()?;
    for (seg_rows, gen_rows) in rows {
        report.seg_rows.extend(seg_rows);
        report.gen_rows.extend(gen_rows);
    }

    let report_dir = out.join("report");
    report.write(&report_dir)?;
    let fg = report.seg_means("foreground");
    let (mssim, mpsnr) = report.gen_means();
    println!(
        "segmentation (foreground): iou {:.4}, ca {:.4}, le {:.4}",
        fg.iou, fg.contour_accuracy, fg.location_error
    );
    println!("generation (frames 2..N): ssim {mssim:.4}, psnr {mpsnr:.4}");
    println!("report written to {}", report_dir.display());
    Ok(())
}

fn eval_one(
    i: usize,
    gt: &PairedSample,
    masks: &MaskClip,
    clip: &Clip,
) -> Result<(Vec<SegRow>, Vec<GenRow>)> {
    if masks.frames != gt.ego_masks.frames || masks.res != gt.ego_masks.res {
        return Err(data_err(format!("prediction s{i} does not align with the dataset sample")));
    }
    let eval = evaluate_masks(masks, &gt.ego_masks)?;
    let mut seg_rows = Vec::new();
    for (f, scores) in eval.per_frame.iter().enumerate() {
        for (class, score) in [
            ("foreground", scores.foreground),
            ("hand", scores.hand),
            ("object", scores.object),
        ] {
            seg_rows.push(SegRow { sample: i, frame: f, class, score });
        }
    }
    let mut gen_rows = Vec::new();
    for f in 1..clip.frames {
        gen_rows.push(GenRow {
            sample: i,
            frame: f,
            ssim: ssim(clip.frame(f), gt.ego.frame(f), clip.res, clip.res)?,
            psnr: psnr(clip.frame(f), gt.ego.frame(f))?,
        });
    }
    Ok((seg_rows, gen_rows))
}
