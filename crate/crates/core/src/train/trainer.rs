//! Training sessions: batching, optimization, evaluation, checkpointing.
//!
//! A session owns exactly one random stream, seeded once. Model
//! initialization consumes the head of the stream, and each training
//! iteration then draws, per batch element, an image index followed by a
//! patch position — always through the generator, even when a range has
//! a single value, so the draw count per iteration is shape-independent.
//! Evaluation consumes no randomness at all. Together with checkpointing
//! the stream position, this makes a resumed run bitwise identical to an
//! uninterrupted one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image::LdrImage;
use crate::data::patches::random_crop;
use crate::data::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::{psnr_l, psnr_mu, MetricConfig};
use crate::model::{HdrUNet, ModelConfig};
use crate::nn::ModulationStrategy;
use crate::ops::spatial::{crop_top_left, reflect_pad_bottom_right};
use crate::shape::Shape;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::adam::AdamState;
use crate::train::checkpoint::{f64_pair_to_u64, u64_to_f64_pair, Checkpoint};
use crate::train::schedule::Schedule;

/// Optimization hyperparameters and run bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub total_iters: u64,
    pub loss: LossKind,
    pub seed: u64,
    /// Evaluate every this many iterations; 0 means only at the end.
    pub eval_every: u64,
    /// Checkpoint every this many iterations; 0 means only at the end.
    pub checkpoint_every: u64,
    pub initial_lr: f64,
    pub decay_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            patch_size: 32,
            total_iters: 2000,
            loss: LossKind::TanhL1,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 500,
            initial_lr: 2e-4,
            decay_every: 800,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.patch_size == 0 {
            return Err(Error::config("patch_size must be at least 1"));
        }
        if self.total_iters == 0 {
            return Err(Error::config("total_iters must be at least 1"));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            initial_lr: self.initial_lr,
            decay_every: self.decay_every,
        }
    }
}

/// Quality metrics averaged over the evaluation pairs, in decibels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub psnr_l: f64,
    pub psnr_mu: f64,
}

/// One evaluation event during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    /// Completed iterations at the time of evaluation.
    pub iter: u64,
    /// Learning rate used by the most recent step.
    pub lr: f64,
    /// Loss of the most recent step.
    pub loss: f64,
    pub psnr_l: f64,
    pub psnr_mu: f64,
}

/// Renders an evaluation record as one training-log line.
pub fn format_log_line(r: &EvalRecord) -> String {
    format!(
        "iter={} lr={} loss={} psnr_l={} psnr_mu={}",
        r.iter, r.lr, r.loss, r.psnr_l, r.psnr_mu
    )
}

/// A model plus optimizer state, random stream, and iteration counter.
///
/// Debug output is deliberately shallow — a session owns megabytes of
/// parameters and moments.
pub struct TrainSession<E: Element> {
    model: HdrUNet<E>,
    adam: AdamState<E>,
    cfg: TrainConfig,
    metric_cfg: MetricConfig,
    rng: ChaCha8Rng,
    iter: u64,
}

impl<E: Element> std::fmt::Debug for TrainSession<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TrainSession<{}> iter={} params={}",
            E::DTYPE,
            self.iter,
            self.model.parameter_count()
        )
    }
}

impl<E: Element> TrainSession<E> {
    /// Builds a fresh session: seeds the stream, initializes the model
    /// from it, and zeroes the optimizer.
    pub fn new(model_cfg: &ModelConfig, cfg: TrainConfig) -> Result<TrainSession<E>> {
        cfg.validate()?;
        model_cfg.validate()?;
        let div = model_cfg.spatial_divisor();
        if cfg.patch_size % div != 0 {
            return Err(Error::config(format!(
                "patch_size {} must be divisible by {div} for a {}-scale model",
                cfg.patch_size, model_cfg.n_scales
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = HdrUNet::new(model_cfg, &mut rng)?;
        let adam = AdamState::new(model.registry());
        Ok(TrainSession {
            model,
            adam,
            cfg,
            metric_cfg: MetricConfig::default(),
            rng,
            iter: 0,
        })
    }

    pub fn model(&self) -> &HdrUNet<E> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn set_metric_config(&mut self, cfg: MetricConfig) -> Result<()> {
        cfg.validate()?;
        self.metric_cfg = cfg;
        Ok(())
    }

    /// Completed training iterations.
    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn is_finished(&self) -> bool {
        self.iter >= self.cfg.total_iters
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        self.cfg.schedule().lr(self.iter)
    }

    /// Position of the random stream, for diagnostics and stream-identity
    /// assertions in tests.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Runs one optimization step on a freshly sampled batch and returns
    /// the step's loss.
    pub fn step(&mut self, data: &Dataset) -> Result<f64> {
        if data.train.is_empty() {
            return Err(Error::degenerate("training split holds no pairs"));
        }
        let p = self.cfg.patch_size;
        let b = self.cfg.batch_size;
        let mut input = Vec::with_capacity(b * 3 * p * p);
        let mut target = Vec::with_capacity(b * 3 * p * p);
        for _ in 0..b {
            let idx = self.rng.gen_range(0..data.train.len());
            let pair = &data.train[idx];
            let (lc, hc) = random_crop(&pair.ldr, &pair.hdr, p, &mut self.rng)?;
            input.extend(lc.float_view().iter().map(|&v| E::from_f64(v as f64)));
            target.extend(hc.data().iter().map(|&v| E::from_f64(v as f64)));
        }
        let shape = Shape::new(b, 3, p, p);
        let input = Tensor::from_data(shape, input)?;
        let target = Tensor::from_data(shape, target)?;

        let lr = self.current_lr();
        let tape = Tape::new();
        for (_, param) in self.model.registry().entries() {
            tape.watch(param);
        }
        let pred = self.model.forward(&tape, &input)?;
        let loss = self.cfg.loss.evaluate(&tape, &pred, &target)?;
        let loss_value = loss.item()?.to_f64();
        tape.backward(&loss)?;
        self.adam.step(self.model.registry(), lr)?;
        self.iter += 1;
        Ok(loss_value)
    }

    /// Whole-image metrics over the validation split (or the training
    /// split when nothing is held out). Draws nothing from the stream.
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalMetrics> {
        let pairs = data.eval_pairs();
        if pairs.is_empty() {
            return Err(Error::degenerate("dataset holds no pairs to evaluate"));
        }
        let mut sum_l = 0.0;
        let mut sum_mu = 0.0;
        for pair in pairs {
            let pred = infer_padded(&self.model, &pair.ldr)?;
            let pred: Vec<f64> = pred.data().iter().map(|&v| Element::to_f64(v)).collect();
            let gt = pair.hdr.to_f64();
            sum_l += psnr_l(&pred, &gt, &self.metric_cfg)?;
            sum_mu += psnr_mu(&pred, &gt, &self.metric_cfg)?;
        }
        Ok(EvalMetrics {
            psnr_l: sum_l / pairs.len() as f64,
            psnr_mu: sum_mu / pairs.len() as f64,
        })
    }

    /// Steps until `total_iters`, invoking `on_eval` per evaluation
    /// cadence (and always after the final step) and `on_checkpoint` per
    /// checkpoint cadence (likewise). Returns every evaluation record.
    pub fn run_with<FE, FC>(
        &mut self,
        data: &Dataset,
        mut on_eval: FE,
        mut on_checkpoint: FC,
    ) -> Result<Vec<EvalRecord>>
    where
        FE: FnMut(&EvalRecord),
        FC: FnMut(&TrainSession<E>) -> Result<()>,
    {
        let mut records = Vec::new();
        while !self.is_finished() {
            let lr = self.current_lr();
            let loss = self.step(data)?;
            let finished = self.is_finished();
            let due = |every: u64| every != 0 && self.iter % every == 0;
            if due(self.cfg.eval_every) || finished {
                let m = self.evaluate(data)?;
                let record = EvalRecord {
                    iter: self.iter,
                    lr,
                    loss,
                    psnr_l: m.psnr_l,
                    psnr_mu: m.psnr_mu,
                };
                on_eval(&record);
                records.push(record);
            }
            if due(self.cfg.checkpoint_every) || finished {
                on_checkpoint(self)?;
            }
        }
        Ok(records)
    }

    /// Serializes everything a bitwise-identical resume needs: parameters,
    /// optimizer moments and step count, the stream seed and position, and
    /// an echo of the architecture.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::default();
        for (name, t) in self.model.registry().entries() {
            ckpt.push::<E>(name, shape_dims(t.shape()), &t.to_vec());
        }
        for (name, t) in self.model.registry().entries() {
            let (m, v) = self
                .adam
                .moments(name)
                .ok_or_else(|| Error::contract(format!("no optimizer slot for '{name}'")))?;
            ckpt.push::<E>(&format!("adam.m.{name}"), shape_dims(t.shape()), m);
            ckpt.push::<E>(&format!("adam.v.{name}"), shape_dims(t.shape()), v);
        }
        ckpt.push::<f64>("adam.t", vec![1], &[self.adam.t() as f64]);
        ckpt.push::<f64>("rng.seed", vec![2], &u64_to_f64_pair(self.cfg.seed));
        let pos = u64::try_from(self.rng.get_word_pos()).map_err(|_| {
            Error::contract("random stream advanced beyond a checkpointable position")
        })?;
        ckpt.push::<f64>("rng.word_pos", vec![2], &u64_to_f64_pair(pos));
        let mc = self.model.config();
        ckpt.push::<f64>(
            "cfg.model",
            vec![5],
            &[
                mc.base_channels as f64,
                mc.n_res_blocks as f64,
                mc.n_scales as f64,
                mc.modulation.code() as f64,
                if mc.weighting_enabled { 1.0 } else { 0.0 },
            ],
        );
        Ok(ckpt)
    }

    /// Reconstructs a session mid-run. The architecture and stream come
    /// from the checkpoint; optimization hyperparameters come from `cfg`,
    /// whose seed must agree with the checkpointed stream's seed.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<TrainSession<E>> {
        cfg.validate()?;
        let model = load_model::<E>(ckpt)?;
        let div = model.config().spatial_divisor();
        if cfg.patch_size % div != 0 {
            return Err(Error::config(format!(
                "patch_size {} must be divisible by {div} for the checkpointed model",
                cfg.patch_size
            )));
        }

        let mut adam = AdamState::new(model.registry());
        for (name, t) in model.registry().entries() {
            let m = fetch(ckpt, &format!("adam.m.{name}"), t.numel())?;
            let v = fetch(ckpt, &format!("adam.v.{name}"), t.numel())?;
            adam.restore(name, m.to_elems::<E>(), v.to_elems::<E>())?;
        }
        let t_raw = fetch(ckpt, "adam.t", 1)?.as_f64()[0];
        if !(t_raw.is_finite() && t_raw >= 0.0 && t_raw.fract() == 0.0) {
            return Err(Error::CheckpointCorrupt(format!(
                "adam.t value {t_raw} is not a step count"
            )));
        }
        adam.set_t(t_raw as u64);

        let seed_rec = fetch(ckpt, "rng.seed", 2)?.as_f64();
        let seed = f64_pair_to_u64([seed_rec[0], seed_rec[1]])?;
        if seed != cfg.seed {
            return Err(Error::config(format!(
                "config seed {} does not match checkpointed stream seed {seed}",
                cfg.seed
            )));
        }
        let pos_rec = fetch(ckpt, "rng.word_pos", 2)?.as_f64();
        let pos = f64_pair_to_u64([pos_rec[0], pos_rec[1]])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(pos as u128);

        let iter = adam.t();
        Ok(TrainSession {
            model,
            adam,
            cfg,
            metric_cfg: MetricConfig::default(),
            rng,
            iter,
        })
    }
}

fn shape_dims(s: Shape) -> Vec<u32> {
    vec![s.n as u32, s.c as u32, s.h as u32, s.w as u32]
}

fn fetch<'c>(
    ckpt: &'c Checkpoint,
    name: &str,
    expected_numel: usize,
) -> Result<&'c crate::train::checkpoint::CkptTensor> {
    let rec = ckpt
        .get(name)
        .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor '{name}'")))?;
    if rec.numel() != expected_numel || rec.payload.len() != expected_numel {
        return Err(Error::CheckpointCorrupt(format!(
            "tensor '{name}' holds {} elements, expected {expected_numel}",
            rec.payload.len()
        )));
    }
    Ok(rec)
}

/// Reads the architecture echo out of a checkpoint.
pub fn model_config_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let rec = fetch(ckpt, "cfg.model", 5)?.as_f64();
    let as_usize = |v: f64, what: &str| -> Result<usize> {
        if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::CheckpointCorrupt(format!(
                "cfg.model {what} value {v} is not a small integer"
            )))
        }
    };
    let weighting_enabled = match rec[4] {
        v if v == 0.0 => false,
        v if v == 1.0 => true,
        v => {
            return Err(Error::CheckpointCorrupt(format!(
                "cfg.model weighting flag {v} is not 0 or 1"
            )))
        }
    };
    let cfg = ModelConfig {
        base_channels: as_usize(rec[0], "base_channels")?,
        n_res_blocks: as_usize(rec[1], "n_res_blocks")?,
        n_scales: as_usize(rec[2], "n_scales")?,
        modulation: ModulationStrategy::from_code(as_usize(rec[3], "modulation")? as u32)
            .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?,
        weighting_enabled,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Rebuilds just the model from a checkpoint (for inference and
/// evaluation tools that never touch the optimizer).
pub fn load_model<E: Element>(ckpt: &Checkpoint) -> Result<HdrUNet<E>> {
    let cfg = model_config_from_checkpoint(ckpt)?;
    // Throwaway stream: every parameter is overwritten from the file.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = HdrUNet::new(&cfg, &mut rng)?;
    for (name, t) in model.registry().entries() {
        let rec = fetch(ckpt, name, t.numel())?;
        let dims = shape_dims(t.shape());
        if rec.dims != dims {
            return Err(Error::CheckpointCorrupt(format!(
                "tensor '{name}' has dims {:?}, expected {:?}",
                rec.dims, dims
            )));
        }
        t.set_data(&rec.to_elems::<E>())?;
    }
    Ok(model)
}

/// Runs the model on one LDR image of arbitrary extent: mirror-pads the
/// bottom/right edges up to the model's spatial divisor, then crops the
/// prediction back. Returns the `(1, 3, H, W)` prediction.
///
/// Gradient tracking is switched off for the pass and restored, so this
/// never grows a tape.
pub fn infer_padded<E: Element>(model: &HdrUNet<E>, ldr: &LdrImage) -> Result<Tensor<E>> {
    let (h, w) = (ldr.height(), ldr.width());
    let div = model.config().spatial_divisor();
    let pad_h = (div - h % div) % div;
    let pad_w = (div - w % div) % div;

    let registry = model.registry();
    registry.set_all_requires_grad(false);
    let result = (|| {
        let tape = Tape::new();
        let input = ldr.to_tensor::<E>();
        let padded = if pad_h == 0 && pad_w == 0 {
            input
        } else {
            let data = reflect_pad_bottom_right(&input.data(), 3, h, w, pad_h, pad_w)?;
            Tensor::from_data(Shape::new(1, 3, h + pad_h, w + pad_w), data)?
        };
        let out = model.forward(&tape, &padded)?;
        if pad_h == 0 && pad_w == 0 {
            Ok(out)
        } else {
            let cropped = crop_top_left(&out.data(), 3, h + pad_h, w + pad_w, h, w);
            Tensor::from_data(Shape::new(1, 3, h, w), cropped)
        }
    })();
    registry.set_all_requires_grad(true);
    result
}
