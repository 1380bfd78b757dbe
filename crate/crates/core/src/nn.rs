//! Trainable layers: convolutions, residual blocks, feature modulation,
//! and the parameter registry that exposes them to the optimizer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// 2-D convolution layer with an always-present per-channel bias.
pub struct ConvLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Element> ConvLayer<E> {
    /// Allocates a `cin → cout` layer with `k×k` kernels and applies
    /// [`kaiming_init`] from `rng`. `k` must be 1 or 3.
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<ConvLayer<E>> {
        let layer = Self::with_constants(cin, cout, k, stride, padding, E::zero(), E::zero())?;
        layer.init_kaiming(rng);
        Ok(layer)
    }

    /// Allocates a layer with every weight set to `weight_value` and
    /// every bias set to `bias_value` (no random draws). Used for heads
    /// that must start at an exact operating point.
    pub fn with_constants(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        weight_value: E,
        bias_value: E,
    ) -> Result<ConvLayer<E>> {
        if k != 1 && k != 3 {
            return Err(Error::config(format!(
                "conv kernels are 1x1 or 3x3, got {k}x{k}"
            )));
        }
        if cin == 0 || cout == 0 || stride == 0 {
            return Err(Error::config(
                "conv channel counts and stride must be positive",
            ));
        }
        Ok(ConvLayer {
            weight: Tensor::full(Shape::new(cout, cin, k, k), weight_value),
            bias: Tensor::full(Shape::new(1, cout, 1, 1), bias_value),
            stride,
            padding,
        })
    }

    /// Re-draws the weights as `Normal(0, sqrt(2 / (Cin·k·k)))` and
    /// zeroes the bias. Consumes exactly `weight.numel()` draws.
    pub fn init_kaiming<R: Rng>(&self, rng: &mut R) {
        let s = self.weight.shape();
        let fan_in = (s.c * s.h * s.w) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        self.weight.map_data_mut(|d| {
            for v in d.iter_mut() {
                *v = E::from_f64(normal.sample(rng));
            }
        });
        self.bias.map_data_mut(|d| d.fill(E::zero()));
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        tape.conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    /// Registers `<name>.weight` and `<name>.bias`.
    pub fn register(&self, registry: &mut ParamRegistry<E>, name: &str) -> Result<()> {
        registry.register(format!("{name}.weight"), self.weight.clone())?;
        registry.register(format!("{name}.bias"), self.bias.clone())
    }
}

/// Re-initializes a layer from a standalone seeded generator. Model
/// construction threads one shared stream instead; this entry point
/// exists for isolated layer use and tests.
pub fn kaiming_init<E: Element>(layer: &ConvLayer<E>, seed: u64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    layer.init_kaiming(&mut rng);
}

/// `x + conv2(relu(conv1(x)))` with 3×3 same-padding convolutions.
pub struct ResidualBlock<E: Element> {
    pub conv1: ConvLayer<E>,
    pub conv2: ConvLayer<E>,
}

impl<E: Element> ResidualBlock<E> {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Result<ResidualBlock<E>> {
        Ok(ResidualBlock {
            conv1: ConvLayer::new(channels, channels, 3, 1, 1, rng)?,
            conv2: ConvLayer::new(channels, channels, 3, 1, 1, rng)?,
        })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.conv1.forward(tape, x)?;
        let y = tape.relu(&y)?;
        let y = self.conv2.forward(tape, &y)?;
        tape.add(x, &y)
    }

    pub fn register(&self, registry: &mut ParamRegistry<E>, name: &str) -> Result<()> {
        self.conv1.register(registry, &format!("{name}.conv1"))?;
        self.conv2.register(registry, &format!("{name}.conv2"))
    }
}

/// How modulation coefficients are shaped relative to the features they
/// scale: per-element, shared across channels, shared across space, or
/// disabled entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulationStrategy {
    None,
    GlobalChannel,
    SpatialShared,
    Full,
}

impl ModulationStrategy {
    pub const ALL: [ModulationStrategy; 4] = [
        ModulationStrategy::None,
        ModulationStrategy::GlobalChannel,
        ModulationStrategy::SpatialShared,
        ModulationStrategy::Full,
    ];

    /// Stable numeric code used in checkpoint config echoes.
    pub fn code(self) -> u32 {
        match self {
            ModulationStrategy::None => 0,
            ModulationStrategy::GlobalChannel => 1,
            ModulationStrategy::SpatialShared => 2,
            ModulationStrategy::Full => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<ModulationStrategy> {
        Self::ALL
            .into_iter()
            .find(|s| s.code() == code)
            .ok_or_else(|| Error::config(format!("unknown modulation strategy code {code}")))
    }
}

impl fmt::Display for ModulationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModulationStrategy::None => "none",
            ModulationStrategy::GlobalChannel => "global_channel",
            ModulationStrategy::SpatialShared => "spatial_shared",
            ModulationStrategy::Full => "full",
        };
        f.write_str(s)
    }
}

impl FromStr for ModulationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModulationStrategy> {
        match s {
            "none" => Ok(ModulationStrategy::None),
            "global_channel" => Ok(ModulationStrategy::GlobalChannel),
            "spatial_shared" => Ok(ModulationStrategy::SpatialShared),
            "full" => Ok(ModulationStrategy::Full),
            other => Err(Error::config(format!(
                "unknown modulation strategy `{other}` \
                 (expected none, global_channel, spatial_shared, or full)"
            ))),
        }
    }
}

struct SftHeads<E: Element> {
    alpha1: ConvLayer<E>,
    alpha2: ConvLayer<E>,
    beta1: ConvLayer<E>,
    beta2: ConvLayer<E>,
}

/// Affine feature modulation `out = α ⊙ x + β` where α and β are
/// predicted from condition features by two stacked convolutions with a
/// ReLU between them.
///
/// Coefficient extent per strategy (condition input is `(N, C, h, w)`):
/// `Full` keeps the full extent, `SpatialShared` collapses channels to
/// one map, and `GlobalChannel` average-pools space away first and uses
/// 1×1 convolutions. The α output head starts at exactly α ≡ 1 (zero
/// weights, unit bias) so a freshly built layer is near the identity;
/// the β head is ordinarily initialized so its output is a small
/// perturbation around zero.
pub struct SftLayer<E: Element> {
    strategy: ModulationStrategy,
    heads: Option<SftHeads<E>>,
}

impl<E: Element> SftLayer<E> {
    pub fn new<R: Rng>(
        channels: usize,
        strategy: ModulationStrategy,
        rng: &mut R,
    ) -> Result<SftLayer<E>> {
        let heads = match strategy {
            ModulationStrategy::None => None,
            ModulationStrategy::Full => Some(Self::heads(channels, channels, 3, 1, rng)?),
            ModulationStrategy::SpatialShared => Some(Self::heads(channels, 1, 3, 1, rng)?),
            ModulationStrategy::GlobalChannel => Some(Self::heads(channels, channels, 1, 0, rng)?),
        };
        Ok(SftLayer { strategy, heads })
    }

    fn heads<R: Rng>(
        channels: usize,
        out_channels: usize,
        k: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<SftHeads<E>> {
        Ok(SftHeads {
            alpha1: ConvLayer::new(channels, channels, k, 1, padding, rng)?,
            alpha2: ConvLayer::with_constants(
                channels,
                out_channels,
                k,
                1,
                padding,
                E::zero(),
                E::one(),
            )?,
            beta1: ConvLayer::new(channels, channels, k, 1, padding, rng)?,
            beta2: ConvLayer::new(channels, out_channels, k, 1, padding, rng)?,
        })
    }

    pub fn strategy(&self) -> ModulationStrategy {
        self.strategy
    }

    /// Applies the modulation. `cond` must be `Some` unless the strategy
    /// is `None`; its spatial extent must match `x` for the spatial
    /// strategies.
    pub fn forward(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
        cond: Option<&Tensor<E>>,
    ) -> Result<Tensor<E>> {
        let Some(heads) = &self.heads else {
            return Ok(x.clone());
        };
        let cond = cond.ok_or_else(|| {
            Error::contract(format!(
                "modulation strategy {} needs condition features",
                self.strategy
            ))
        })?;
        let base = if self.strategy == ModulationStrategy::GlobalChannel {
            tape.global_avg_pool(cond)?
        } else {
            cond.clone()
        };
        let alpha = heads
            .alpha2
            .forward(tape, &tape.relu(&heads.alpha1.forward(tape, &base)?)?)?;
        let beta = heads
            .beta2
            .forward(tape, &tape.relu(&heads.beta1.forward(tape, &base)?)?)?;
        tape.broadcast_mul_add(x, &alpha, &beta)
    }

    /// Registers head parameters; a no-op for strategy `None`.
    pub fn register(&self, registry: &mut ParamRegistry<E>, name: &str) -> Result<()> {
        let Some(heads) = &self.heads else {
            return Ok(());
        };
        heads.alpha1.register(registry, &format!("{name}.alpha1"))?;
        heads.alpha2.register(registry, &format!("{name}.alpha2"))?;
        heads.beta1.register(registry, &format!("{name}.beta1"))?;
        heads.beta2.register(registry, &format!("{name}.beta2"))
    }
}

/// Ordered, uniquely named collection of every trainable tensor in a
/// model. Enumeration order is construction order and is the canonical
/// order for optimizer state and checkpoints.
#[derive(Default)]
pub struct ParamRegistry<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Element> ParamRegistry<E> {
    pub fn new() -> ParamRegistry<E> {
        ParamRegistry {
            entries: Vec::new(),
        }
    }

    /// Adds a named tensor and flags it trainable. Duplicate names are
    /// rejected.
    pub fn register(&mut self, name: String, tensor: Tensor<E>) -> Result<()> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::contract(format!(
                "parameter `{name}` registered twice"
            )));
        }
        tensor.set_requires_grad(true);
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, Tensor<E>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count across all parameters.
    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Total element count over parameters whose name starts with any of
    /// the given prefixes.
    pub fn params_matching(&self, prefixes: &[&str]) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn set_all_requires_grad(&self, value: bool) {
        for (_, t) in &self.entries {
            t.set_requires_grad(value);
        }
    }

    pub fn zero_all_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }
}
