//! The HDR reconstruction network.
//!
//! Three cooperating subnetworks turn an 8-bit-derived input `I` in
//! [0,1] into an HDR estimate:
//!
//! * **base** — a U-shaped encoder/decoder: a feature head, stride-2
//!   downsampling convolutions, modulated residual blocks at the
//!   bottleneck, pixel-shuffle upsampling with concatenated skip
//!   features, and a linear 3-channel output head producing `G(I)`.
//! * **condition** — a small stride-2 stack on the raw input whose
//!   output modulates every bottleneck block through its feature
//!   modulation layer (shared trunk, one output reused at every site).
//! * **weighting** — a shallow stack ending in a sigmoid that predicts
//!   a per-pixel soft gate `W` over the input.
//!
//! The final estimate is `Ŷ = W ⊙ I + G(I)` (or just `G(I)` when the
//! weighting stack is disabled). `W` keeps well-exposed input content;
//! `G` reconstructs what clipping, noise, and quantization destroyed.

use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::{ConvLayer, ModulationStrategy, ParamRegistry, SftLayer};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature width, constant across scales. Must be a positive
    /// multiple of 4 (pixel-shuffle upsampling consumes r² = 4 channel
    /// groups).
    pub base_channels: usize,
    /// Residual blocks at the bottleneck (the modulation sites).
    pub n_res_blocks: usize,
    /// Resolution levels including full resolution; `n_scales − 1`
    /// stride-2 downsamplings. Input dims must divide by
    /// `2^(n_scales−1)`.
    pub n_scales: usize,
    pub modulation: ModulationStrategy,
    pub weighting_enabled: bool,
}

impl Default for ModelConfig {
    /// Full-scale configuration (width 64, 8 blocks, 3 scales).
    fn default() -> ModelConfig {
        ModelConfig {
            base_channels: 64,
            n_res_blocks: 8,
            n_scales: 3,
            modulation: ModulationStrategy::Full,
            weighting_enabled: true,
        }
    }
}

impl ModelConfig {
    /// Smallest validated configuration; the gradient-check command's
    /// default (width 8, 2 blocks, 2 scales).
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            n_res_blocks: 2,
            n_scales: 2,
            modulation: ModulationStrategy::Full,
            weighting_enabled: true,
        }
    }

    /// Reduced configuration sized for CPU training runs (width 16,
    /// 4 blocks, 3 scales).
    pub fn desk() -> ModelConfig {
        ModelConfig {
            base_channels: 16,
            n_res_blocks: 4,
            n_scales: 3,
            modulation: ModulationStrategy::Full,
            weighting_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales < 2 {
            return Err(Error::config(format!(
                "n_scales must be at least 2, got {}",
                self.n_scales
            )));
        }
        if self.base_channels == 0 || self.base_channels % 4 != 0 {
            return Err(Error::config(format!(
                "base_channels must be a positive multiple of 4, got {}",
                self.base_channels
            )));
        }
        if self.n_res_blocks == 0 {
            return Err(Error::config("n_res_blocks must be positive"));
        }
        Ok(())
    }

    /// Required divisor of input height and width.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.n_scales - 1)
    }
}

struct ModulatedBlock<E: Element> {
    sft: SftLayer<E>,
    conv1: ConvLayer<E>,
    conv2: ConvLayer<E>,
}

impl<E: Element> ModulatedBlock<E> {
    fn forward(&self, tape: &Tape<E>, x: &Tensor<E>, cond: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let m = self.sft.forward(tape, x, cond)?;
        let y = self.conv1.forward(tape, &m)?;
        let y = tape.relu(&y)?;
        let y = self.conv2.forward(tape, &y)?;
        tape.add(x, &y)
    }
}

/// The assembled three-subnetwork model. Parameter enumeration order is
/// fixed by construction and shared by optimizer state and checkpoints.
pub struct HdrUNet<E: Element> {
    cfg: ModelConfig,
    head: ConvLayer<E>,
    downs: Vec<ConvLayer<E>>,
    blocks: Vec<ModulatedBlock<E>>,
    fuses: Vec<ConvLayer<E>>,
    tail: ConvLayer<E>,
    cond: Vec<ConvLayer<E>>,
    wnet: Vec<ConvLayer<E>>,
    registry: ParamRegistry<E>,
}

impl<E: Element> HdrUNet<E> {
    /// Builds and initializes the model, drawing every random weight
    /// from `rng` in registration order. Layers with fixed constant
    /// initialization draw nothing.
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<HdrUNet<E>> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let mut registry = ParamRegistry::new();

        let head = ConvLayer::new(3, c, 3, 1, 1, rng)?;
        head.register(&mut registry, "base.head")?;

        let mut downs = Vec::new();
        for i in 1..cfg.n_scales {
            let down = ConvLayer::new(c, c, 3, 2, 1, rng)?;
            down.register(&mut registry, &format!("base.down{i}"))?;
            downs.push(down);
        }

        let mut blocks = Vec::new();
        for i in 0..cfg.n_res_blocks {
            let sft = SftLayer::new(c, cfg.modulation, rng)?;
            sft.register(&mut registry, &format!("base.block{i}.sft"))?;
            let conv1 = ConvLayer::new(c, c, 3, 1, 1, rng)?;
            conv1.register(&mut registry, &format!("base.block{i}.conv1"))?;
            let conv2 = ConvLayer::new(c, c, 3, 1, 1, rng)?;
            conv2.register(&mut registry, &format!("base.block{i}.conv2"))?;
            blocks.push(ModulatedBlock { sft, conv1, conv2 });
        }

        // Decoder, deepest scale first: pixel shuffle leaves c/4
        // channels, the skip concat restores +c.
        let mut fuses = Vec::new();
        for k in (0..cfg.n_scales - 1).rev() {
            let fuse = ConvLayer::new(c / 4 + c, c, 3, 1, 1, rng)?;
            fuse.register(&mut registry, &format!("base.fuse{k}"))?;
            fuses.push(fuse);
        }

        let tail = ConvLayer::new(c, 3, 3, 1, 1, rng)?;
        tail.register(&mut registry, "base.tail")?;

        let mut cond = Vec::new();
        if cfg.modulation != ModulationStrategy::None {
            for i in 0..cfg.n_scales {
                let (cin, stride) = if i == 0 { (3, 1) } else { (c, 2) };
                let layer = ConvLayer::new(cin, c, 3, stride, 1, rng)?;
                layer.register(&mut registry, &format!("cond.conv{i}"))?;
                cond.push(layer);
            }
        }

        let mut wnet = Vec::new();
        if cfg.weighting_enabled {
            for (i, (cin, cout)) in [(3, c), (c, c), (c, 3)].into_iter().enumerate() {
                let layer = ConvLayer::new(cin, cout, 3, 1, 1, rng)?;
                layer.register(&mut registry, &format!("wnet.conv{i}"))?;
                wnet.push(layer);
            }
        }

        Ok(HdrUNet {
            cfg: cfg.clone(),
            head,
            downs,
            blocks,
            fuses,
            tail,
            cond,
            wnet,
            registry,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &ParamRegistry<E> {
        &self.registry
    }

    /// Total trainable element count.
    pub fn parameter_count(&self) -> usize {
        self.registry.total_params()
    }

    fn check_input(&self, input: &Tensor<E>) -> Result<()> {
        let s = input.shape();
        if s.c != 3 {
            return Err(Error::shape(format!(
                "input must have 3 channels, got {s}"
            )));
        }
        let div = self.cfg.spatial_divisor();
        if s.h % div != 0 || s.w % div != 0 {
            return Err(Error::shape(format!(
                "input height and width must be divisible by {div}, got {s}"
            )));
        }
        Ok(())
    }

    /// Full forward pass: `Ŷ = W ⊙ I + G(I)`, or `G(I)` with the
    /// weighting stack disabled.
    pub fn forward(&self, tape: &Tape<E>, input: &Tensor<E>) -> Result<Tensor<E>> {
        self.check_input(input)?;
        let cond_maps = self.condition_forward(tape, input)?;
        let g = self.base_forward(tape, input, &cond_maps)?;
        if self.cfg.weighting_enabled {
            let w = self.weighting_forward(tape, input)?;
            tape.add(&tape.mul(&w, input)?, &g)
        } else {
            Ok(g)
        }
    }

    /// Encoder → modulated bottleneck → decoder. `cond_maps` must hold
    /// one entry per residual block (none for modulation `None`).
    pub fn base_forward(
        &self,
        tape: &Tape<E>,
        input: &Tensor<E>,
        cond_maps: &[Tensor<E>],
    ) -> Result<Tensor<E>> {
        self.check_input(input)?;
        let expected = if self.cfg.modulation == ModulationStrategy::None {
            0
        } else {
            self.cfg.n_res_blocks
        };
        if cond_maps.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} condition maps, got {}",
                cond_maps.len()
            )));
        }

        let mut x = tape.relu(&self.head.forward(tape, input)?)?;
        let mut skips = Vec::with_capacity(self.downs.len());
        for down in &self.downs {
            skips.push(x.clone());
            x = tape.relu(&down.forward(tape, &x)?)?;
        }

        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(tape, &x, cond_maps.get(i))?;
        }

        for (fuse, skip) in self.fuses.iter().zip(skips.iter().rev()) {
            x = tape.pixel_shuffle(&x, 2)?;
            x = tape.concat_channels(&x, skip)?;
            x = tape.relu(&fuse.forward(tape, &x)?)?;
        }

        self.tail.forward(tape, &x)
    }

    /// Condition trunk output, cloned once per modulation site. The
    /// maps share the bottleneck's spatial extent. Empty for modulation
    /// `None`.
    pub fn condition_forward(&self, tape: &Tape<E>, input: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        self.check_input(input)?;
        if self.cond.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = input.clone();
        for layer in &self.cond {
            x = tape.relu(&layer.forward(tape, &x)?)?;
        }
        Ok(vec![x; self.cfg.n_res_blocks])
    }

    /// Sigmoid-bounded soft gate over the input, shaped like the input.
    pub fn weighting_forward(&self, tape: &Tape<E>, input: &Tensor<E>) -> Result<Tensor<E>> {
        self.check_input(input)?;
        if self.wnet.is_empty() {
            return Err(Error::contract(
                "weighting stack is disabled in this configuration",
            ));
        }
        let mut x = input.clone();
        for (i, layer) in self.wnet.iter().enumerate() {
            x = layer.forward(tape, &x)?;
            if i + 1 < self.wnet.len() {
                x = tape.relu(&x)?;
            }
        }
        tape.sigmoid(&x)
    }

    /// Direct access to the weighting stack's final layer, for tests
    /// and harnesses that pin the gate to a known operating point.
    pub fn weighting_output_layer(&self) -> Option<&ConvLayer<E>> {
        self.wnet.last()
    }

    /// Direct access to the base network's output head.
    pub fn tail_layer(&self) -> &ConvLayer<E> {
        &self.tail
    }

    /// Mutable-by-shared-handle access to every block's modulation
    /// layer, in block order.
    pub fn modulation_layers(&self) -> Vec<&SftLayer<E>> {
        self.blocks.iter().map(|b| &b.sft).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cfg: &ModelConfig) -> HdrUNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        HdrUNet::new(cfg, &mut rng).unwrap()
    }

    fn ramp_input(n: usize, h: usize, w: usize) -> Tensor<f64> {
        let numel = n * 3 * h * w;
        Tensor::from_data(
            Shape::new(n, 3, h, w),
            (0..numel).map(|i| (i % 97) as f64 / 97.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = ModelConfig::tiny();
        cfg.n_scales = 1;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::tiny();
        cfg.base_channels = 6;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::tiny();
        cfg.n_res_blocks = 0;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn forward_preserves_shape() {
        let model = build(&ModelConfig::tiny());
        let input = ramp_input(2, 16, 16);
        let tape = Tape::new();
        let out = model.forward(&tape, &input).unwrap();
        assert_eq!(out.shape(), input.shape());
        assert!(out.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn indivisible_input_is_rejected_with_divisor() {
        let model = build(&ModelConfig::desk());
        let input = ramp_input(1, 18, 16);
        let tape = Tape::new();
        let err = model.forward(&tape, &input).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("divisible by 4"), "{msg}");
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let model = build(&ModelConfig::tiny());
        let input = Tensor::zeros(Shape::new(1, 4, 16, 16));
        let tape = Tape::new();
        assert!(model.forward(&tape, &input).is_err());
    }

    #[test]
    fn saturated_gate_and_zero_tail_reproduce_input() {
        // Zero tail weights force G ≡ 0; +10 gate bias with zero gate
        // weights forces W = sigmoid(10) ≈ 1 − 4.54e-5. On inputs
        // bounded by 0.02 the output matches the input to 1e-6.
        let model = build(&ModelConfig::tiny());
        let tail = model.tail_layer();
        tail.weight.map_data_mut(|d| d.fill(0.0));
        tail.bias.map_data_mut(|d| d.fill(0.0));
        let gate = model.weighting_output_layer().unwrap();
        gate.weight.map_data_mut(|d| d.fill(0.0));
        gate.bias.map_data_mut(|d| d.fill(10.0));

        let input = Tensor::from_data(
            Shape::new(1, 3, 16, 16),
            (0..768).map(|i| 0.02 * ((i % 31) as f64 / 30.0)).collect(),
        )
        .unwrap();
        let tape = Tape::new();
        let out = model.forward(&tape, &input).unwrap();
        let max_err = out
            .to_vec()
            .iter()
            .zip(input.to_vec())
            .map(|(o, i)| (o - i).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "max abs err {max_err}");
    }

    #[test]
    fn condition_maps_match_sites_and_bottleneck_dims() {
        let cfg = ModelConfig::desk();
        let model = build(&cfg);
        let input = ramp_input(1, 32, 32);
        let tape = Tape::new();
        let maps = model.condition_forward(&tape, &input).unwrap();
        assert_eq!(maps.len(), cfg.n_res_blocks);
        for m in &maps {
            let s = m.shape();
            assert_eq!((s.c, s.h, s.w), (cfg.base_channels, 8, 8));
        }
    }

    #[test]
    fn strategy_none_needs_no_maps() {
        let mut cfg = ModelConfig::tiny();
        cfg.modulation = ModulationStrategy::None;
        let model = build(&cfg);
        let input = ramp_input(1, 16, 16);
        let tape = Tape::new();
        assert!(model.condition_forward(&tape, &input).unwrap().is_empty());
        let out = model.forward(&tape, &input).unwrap();
        assert_eq!(out.shape(), input.shape());
    }

    #[test]
    fn base_forward_checks_map_count() {
        let model = build(&ModelConfig::tiny());
        let input = ramp_input(1, 16, 16);
        let tape = Tape::new();
        let err = model.base_forward(&tape, &input, &[]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn weighting_is_sigmoid_bounded() {
        let model = build(&ModelConfig::tiny());
        let input = ramp_input(1, 16, 16);
        let tape = Tape::new();
        let w = model.weighting_forward(&tape, &input).unwrap();
        assert_eq!(w.shape(), input.shape());
        assert!(w.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn weighting_disabled_is_a_contract_error() {
        let mut cfg = ModelConfig::tiny();
        cfg.weighting_enabled = false;
        let model = build(&cfg);
        let input = ramp_input(1, 16, 16);
        let tape = Tape::new();
        assert!(matches!(
            model.weighting_forward(&tape, &input),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tiny_parameter_count_matches_hand_audit() {
        // width 8, 2 blocks, 2 scales, full modulation, gate on:
        //   head 3→8:            8·3·9 + 8   = 224
        //   down1 8→8:           8·8·9 + 8   = 584
        //   per block: 4 modulation head convs + 2 body convs,
        //     all 8→8 3×3:       6·584       = 3504   (×2 blocks = 7008)
        //   fuse0 (2+8)→8:       8·10·9 + 8  = 728
        //   tail 8→3:            3·8·9 + 3   = 219
        //   cond 3→8, 8→8:       224 + 584   = 808
        //   gate 3→8, 8→8, 8→3:  224+584+219 = 1027
        let model = build(&ModelConfig::tiny());
        assert_eq!(model.parameter_count(), 10_598);
    }

    #[test]
    fn subnet_count_deltas_are_additive() {
        let full = build(&ModelConfig::tiny());
        let mut cfg = ModelConfig::tiny();
        cfg.weighting_enabled = false;
        let no_gate = build(&cfg);
        let gate_params = full.registry().params_matching(&["wnet."]);
        assert_eq!(
            full.parameter_count() - no_gate.parameter_count(),
            gate_params
        );

        let mut cfg = ModelConfig::tiny();
        cfg.modulation = ModulationStrategy::None;
        let no_mod = build(&cfg);
        let mod_params = full.registry().params_matching(&["cond."])
            + full
                .registry()
                .entries()
                .iter()
                .filter(|(n, _)| n.contains(".sft."))
                .map(|(_, t)| t.numel())
                .sum::<usize>();
        assert_eq!(
            full.parameter_count() - no_mod.parameter_count(),
            mod_params
        );
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build(&ModelConfig::tiny());
        let b = build(&ModelConfig::tiny());
        for ((na, ta), (nb, tb)) in a.registry().entries().iter().zip(b.registry().entries()) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec(), "parameter {na}");
        }
    }

    #[test]
    fn doubling_input_size_doubles_output_size() {
        let model = build(&ModelConfig::tiny());
        let tape = Tape::new();
        let small = model.forward(&tape, &ramp_input(1, 16, 16)).unwrap();
        let large = model.forward(&tape, &ramp_input(1, 32, 32)).unwrap();
        assert_eq!((small.shape().h, small.shape().w), (16, 16));
        assert_eq!((large.shape().h, large.shape().w), (32, 32));
    }
}
