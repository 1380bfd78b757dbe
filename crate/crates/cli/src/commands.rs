//! Implementations behind each subcommand. Every function validates its
//! inputs, performs the work, prints its report to standard output, and
//! returns `Err` for anything that should produce a nonzero exit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use hdrunet_core::data::degrade::{synthesize_ldr, DegradationParams};
use hdrunet_core::data::image::{HdrImage, LdrImage};
use hdrunet_core::data::png_io::{load_rgb, save_rgb16, DecodedImage};
use hdrunet_core::data::split::{write_manifest, DatasetIndex, FrameEntry, Split};
use hdrunet_core::data::synth::generate_scenes;
use hdrunet_core::data::Dataset;
use hdrunet_core::gradcheck::{grad_check, GradCheckReport};
use hdrunet_core::metrics::{psnr_l, psnr_mu, scharr_gradient_map};
use hdrunet_core::model::HdrUNet;
use hdrunet_core::nn::ModulationStrategy;
use hdrunet_core::train::{
    format_log_line, infer_padded, load_model, Checkpoint, TrainSession,
};
use hdrunet_core::{Element, Error, Result, Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

/// Parses a `HxW` extent such as `64x64`.
pub fn parse_size(size: &str) -> Result<(usize, usize)> {
    let parse = |part: &str| -> Result<usize> {
        let v: usize = part
            .parse()
            .map_err(|_| Error::config(format!("invalid size '{size}': expected HxW")))?;
        if v == 0 {
            return Err(Error::config(format!(
                "invalid size '{size}': extents must be positive"
            )));
        }
        Ok(v)
    };
    let (h, w) = size
        .split_once('x')
        .ok_or_else(|| Error::config(format!("invalid size '{size}': expected HxW")))?;
    Ok((parse(h)?, parse(w)?))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

/// `synth-data`: writes `--scenes` procedural HDR/LDR pairs plus a
/// manifest into `--out`. The LDR of each pair is derived from the HDR
/// **as stored on disk** (16-bit lattice), so the relation
/// `ldr == synthesize_ldr(load(hdr), params)` can be re-verified from
/// the files alone. Per-pair degradation seeds are `seed + index`.
pub fn synth_data(
    out: &Path,
    scenes: usize,
    size: &str,
    seed: u64,
    params: Option<&Path>,
) -> Result<()> {
    let (h, w) = parse_size(size)?;
    if scenes == 0 {
        return Err(Error::config("--scenes must be positive"));
    }
    let cfg = load_config(params)?;
    fs::create_dir_all(out)?;

    let hdrs = generate_scenes(scenes, h, w, seed)?;
    let mut index = DatasetIndex::default();
    for (i, hdr) in hdrs.iter().enumerate() {
        let take = format!("scene{i:03}");
        let hdr_name = format!("{take}_hdr.png");
        let ldr_name = format!("{take}_ldr.png");

        let hdr_path = out.join(&hdr_name);
        hdr.save(&hdr_path)?;
        // Round-trip through the file lattice before degrading.
        let stored = HdrImage::load(&hdr_path)?;
        let params = DegradationParams {
            seed: seed.wrapping_add(i as u64),
            ..cfg.degrade.clone()
        };
        let ldr = synthesize_ldr(&stored, &params)?;
        ldr.save(&out.join(&ldr_name))?;

        index.frames.push(FrameEntry {
            take_id: take,
            ldr: PathBuf::from(ldr_name),
            hdr: PathBuf::from(hdr_name),
            split: Split::Train,
        });
    }
    write_manifest(&index, &out.join("manifest.tsv"))?;
    println!(
        "wrote {scenes} pairs ({h}x{w}) and manifest.tsv to {}",
        out.display()
    );
    Ok(())
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    }
}

/// `train`: optimizes from scratch or from `--resume`, appending one
/// log line per evaluation to `<out>/train.log` (and stdout) and
/// writing periodic plus final checkpoints into `--out`.
///
/// On resume the architecture comes from the checkpoint itself; the
/// config file's model keys are ignored in favor of the stored echo,
/// and its `seed` must match the checkpointed stream.
pub fn train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let dataset = Dataset::load(&manifest_path(data))?;
    fs::create_dir_all(out)?;

    let mut session: TrainSession<f32> = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            TrainSession::from_checkpoint(&ckpt, cfg.train.clone())?
        }
        None => TrainSession::new(&cfg.model, cfg.train.clone())?,
    };
    session.set_metric_config(cfg.metrics.clone())?;

    let log_path = out.join("train.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;

    let out_dir = out.to_path_buf();
    let records = session.run_with(
        &dataset,
        |record| {
            let line = format_log_line(record);
            println!("{line}");
            // Surfacing log-write failures would mean threading errors
            // through the observer; losing a line to a full disk is
            // preferable to aborting the run mid-iteration.
            let _ = writeln!(log, "{line}");
            let _ = log.flush();
        },
        |s| {
            let path = out_dir.join(format!("ckpt_{:06}.bin", s.iter()));
            s.checkpoint()?.save(&path)
        },
    )?;

    let final_path = out.join("ckpt_final.bin");
    session.checkpoint()?.save(&final_path)?;
    println!(
        "finished {} iterations; {} evaluations logged; final checkpoint {}",
        session.iter(),
        records.len(),
        final_path.display()
    );
    Ok(())
}

/// `infer`: reconstructs an HDR image from one 8-bit LDR input. Inputs
/// whose extent is not divisible by the model's downsampling factor are
/// reflect-padded on the bottom/right and cropped back after the pass.
pub fn infer(ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let model: HdrUNet<f32> = load_model(&checkpoint)?;
    let ldr = LdrImage::load(input)?;
    let pred = infer_padded(&model, &ldr)?;
    let hdr = HdrImage::from_tensor(&pred)?;
    hdr.save(output)?;
    println!(
        "reconstructed {}x{} -> {}",
        ldr.height(),
        ldr.width(),
        output.display()
    );
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn load_any_depth(path: &Path) -> Result<Vec<f64>> {
    Ok(match load_rgb(path)? {
        DecodedImage::Rgb8 { data, .. } => {
            data.into_iter().map(|b| b as f64 / 255.0).collect()
        }
        DecodedImage::Rgb16 { data, .. } => {
            data.into_iter().map(|v| v as f64 / 65535.0).collect()
        }
    })
}

/// `eval`: compares same-named PNG files across two directories and
/// prints one record per metric per file plus mean rows, in filename
/// order. Record shape: `name=<metric> value=<float dB> file=<path>`.
pub fn eval(pred: &Path, gt: &Path) -> Result<()> {
    let pred_names = png_names(pred)?;
    let gt_names = png_names(gt)?;
    let pred_only: Vec<&String> = pred_names.iter().filter(|n| !gt_names.contains(n)).collect();
    let gt_only: Vec<&String> = gt_names.iter().filter(|n| !pred_names.contains(n)).collect();
    if !pred_only.is_empty() || !gt_only.is_empty() {
        let mut parts = Vec::new();
        if !pred_only.is_empty() {
            parts.push(format!(
                "missing ground truth for: {}",
                pred_only
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        if !gt_only.is_empty() {
            parts.push(format!(
                "missing predictions for: {}",
                gt_only
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        return Err(Error::config(parts.join("; ")));
    }
    if pred_names.is_empty() {
        return Err(Error::degenerate("no .png files to evaluate"));
    }

    let cfg = hdrunet_core::metrics::MetricConfig::default();
    let mut sums = (0.0f64, 0.0f64);
    for name in &pred_names {
        let yhat = load_any_depth(&pred.join(name))?;
        let target = load_any_depth(&gt.join(name))?;
        if yhat.len() != target.len() {
            return Err(Error::shape(format!(
                "'{name}': prediction and ground truth differ in size"
            )));
        }
        let l = psnr_l(&yhat, &target, &cfg)?;
        let m = psnr_mu(&yhat, &target, &cfg)?;
        println!("name=psnr_l value={l} file={name}");
        println!("name=psnr_mu value={m} file={name}");
        sums.0 += l;
        sums.1 += m;
    }
    let n = pred_names.len() as f64;
    println!("name=psnr_l value={} file=mean", sums.0 / n);
    println!("name=psnr_mu value={} file=mean", sums.1 / n);
    Ok(())
}

/// Builds the gradient-check harness shared by [`gradcheck`] and the
/// test suite: a 64-bit model with every parameter nudged off its
/// initial value, a fixed input/target pair, and the tanh-bounded L1
/// loss. The modulation output heads start at zero weight and would
/// both mask their upstream layers and leave those layers' gradients
/// down at the finite-difference noise floor, so they get a stronger
/// nudge than the rest.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model: HdrUNet<f64> = HdrUNet::new(&cfg.model, &mut rng)?;
    for (name, t) in model.registry().entries() {
        let amp = if name.contains(".alpha2.") { 0.25 } else { 0.05 };
        t.map_data_mut(|d| {
            for v in d.iter_mut() {
                *v += rng.gen_range(-amp..amp);
            }
        });
    }

    let div = cfg.model.spatial_divisor();
    let side = 16usize.next_multiple_of(div);
    let shape = Shape::new(1, 3, side, side);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> {
        (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let input = Tensor::from_data(shape, draw(&mut rng, 0.0, 1.0))?;
    let target = Tensor::from_data(shape, draw(&mut rng, 0.0, 1.0))?;

    let mut inputs: Vec<(String, Tensor<f64>)> = vec![("input".to_string(), input.clone())];
    for (name, t) in model.registry().entries() {
        inputs.push((name.clone(), t.clone()));
    }
    // The objective is scaled down an order of magnitude: the
    // finite-difference noise is proportional to the objective's
    // magnitude while the relative-error floor is absolute, so a
    // smaller objective keeps tiny-gradient elements well clear of the
    // noise at the 1e-6 step. Gradients scale through the same factor,
    // leaving the analytic/numeric comparison itself untouched.
    let f = |tape: &Tape<f64>, _: &[Tensor<f64>]| {
        let pred = model.forward(tape, &input)?;
        let loss = cfg.train.loss.evaluate(tape, &pred, &target)?;
        tape.scalar_mul(&loss, 0.1)
    };
    grad_check(&f, &inputs, 1e-6, 1e-5)
}

/// `gradcheck`: prints one line per parameter group in registry order
/// and returns whether every group passed. The architecture defaults to
/// the smallest configuration when no `--config` is given.
pub fn gradcheck(config: Option<&Path>) -> Result<bool> {
    let cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig {
            model: hdrunet_core::model::ModelConfig::tiny(),
            ..RunConfig::default()
        },
    };
    let report = run_gradcheck(&cfg)?;
    for group in &report.groups {
        let status = if group.max_rel_err < report.tolerance {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "group={} rel_err={:.3e} abs_err={:.3e} elements={} status={status}",
            group.name, group.max_rel_err, group.max_abs_err, group.elements
        );
    }
    let pass = report.pass();
    println!(
        "gradcheck {}: {} groups, worst rel_err {:.3e}, tolerance {:.0e}",
        if pass { "PASSED" } else { "FAILED" },
        report.groups.len(),
        report.worst(),
        report.tolerance
    );
    Ok(pass)
}

/// `ablate-modulation`: trains one model per modulation strategy with
/// identical seeds and data, weighting disabled throughout, and prints
/// one comparison row per strategy.
pub fn ablate_modulation(config: &Path, data: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let dataset = Dataset::load(&manifest_path(data))?;

    for strategy in [
        ModulationStrategy::None,
        ModulationStrategy::GlobalChannel,
        ModulationStrategy::SpatialShared,
        ModulationStrategy::Full,
    ] {
        let model_cfg = hdrunet_core::model::ModelConfig {
            modulation: strategy,
            weighting_enabled: false,
            ..cfg.model.clone()
        };
        let mut session: TrainSession<f32> =
            TrainSession::new(&model_cfg, cfg.train.clone())?;
        session.set_metric_config(cfg.metrics.clone())?;
        let mut last_loss = f64::NAN;
        while !session.is_finished() {
            last_loss = session.step(&dataset)?;
        }
        let metrics = session.evaluate(&dataset)?;
        if !(last_loss.is_finite() && metrics.psnr_l.is_finite() && metrics.psnr_mu.is_finite()) {
            return Err(Error::degenerate(format!(
                "strategy {strategy} diverged: loss={last_loss} psnr_l={} psnr_mu={}",
                metrics.psnr_l, metrics.psnr_mu
            )));
        }
        println!(
            "strategy={strategy} params={} loss={last_loss} psnr_l={} psnr_mu={}",
            session.model().parameter_count(),
            metrics.psnr_l,
            metrics.psnr_mu
        );
    }
    Ok(())
}

/// `gradient-map`: emits the per-channel edge-magnitude map of a PNG
/// (either depth), normalized by the global maximum across channels and
/// written as 16-bit.
pub fn gradient_map(input: &Path, output: &Path) -> Result<()> {
    let (data, h, w) = match load_rgb(input)? {
        DecodedImage::Rgb8 { data, h, w } => (
            data.into_iter().map(|b| b as f64 / 255.0).collect::<Vec<_>>(),
            h,
            w,
        ),
        DecodedImage::Rgb16 { data, h, w } => (
            data.into_iter().map(|v| v as f64 / 65535.0).collect::<Vec<_>>(),
            h,
            w,
        ),
    };

    let mut maps = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        maps.extend(scharr_gradient_map(&data[c * h * w..(c + 1) * h * w], h, w)?);
    }
    let peak = maps.iter().copied().fold(0.0f64, f64::max);
    let encoded: Vec<u16> = if peak > 0.0 {
        maps.iter()
            .map(|&v| ((v / peak) * 65535.0).round() as u16)
            .collect()
    } else {
        vec![0; maps.len()]
    };
    save_rgb16(output, &encoded, h, w)?;
    println!("gradient map ({h}x{w}, peak {peak}) -> {}", output.display());
    Ok(())
}

/// Shared by tests: predicted tensor for one LDR against its HDR pair.
pub fn metrics_for_pair<E: Element>(
    model: &HdrUNet<E>,
    ldr: &LdrImage,
    hdr: &HdrImage,
    cfg: &hdrunet_core::metrics::MetricConfig,
) -> Result<(f64, f64)> {
    let pred = infer_padded(model, ldr)?;
    let yhat: Vec<f64> = pred.data().iter().map(|&v| Element::to_f64(v)).collect();
    let target = hdr.to_f64();
    Ok((
        psnr_l(&yhat, &target, cfg)?,
        psnr_mu(&yhat, &target, cfg)?,
    ))
}
