//! Structural properties of the assembled network: parameter accounting
//! against hand-derived formulas, shift covariance of the convolutional
//! path, gradient reach into every parameter, and agreement between the
//! fused forward pass and its exposed sub-network composition.

use hdrunet_core::loss::LossKind;
use hdrunet_core::model::{HdrUNet, ModelConfig};
use hdrunet_core::nn::ModulationStrategy;
use hdrunet_core::train::AdamState;
use hdrunet_core::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

/// Element count derived from the layer list, written independently of
/// the registry so a double-registration or a missing layer shows up.
fn expected_params(cfg: &ModelConfig) -> usize {
    let c = cfg.base_channels;
    let mut total = conv_params(3, c, 3); // head
    total += (cfg.n_scales - 1) * conv_params(c, c, 3); // downsamplers
    let sft = match cfg.modulation {
        ModulationStrategy::None => 0,
        ModulationStrategy::Full => 4 * conv_params(c, c, 3),
        ModulationStrategy::SpatialShared => {
            2 * conv_params(c, c, 3) + 2 * conv_params(c, 1, 3)
        }
        ModulationStrategy::GlobalChannel => 4 * conv_params(c, c, 1),
    };
    total += cfg.n_res_blocks * (sft + 2 * conv_params(c, c, 3));
    total += (cfg.n_scales - 1) * conv_params(c / 4 + c, c, 3); // fuses
    total += conv_params(c, 3, 3); // tail
    if cfg.modulation != ModulationStrategy::None {
        total += conv_params(3, c, 3) + (cfg.n_scales - 1) * conv_params(c, c, 3);
    }
    if cfg.weighting_enabled {
        total += conv_params(3, c, 3) + conv_params(c, c, 3) + conv_params(c, 3, 3);
    }
    total
}

fn build(cfg: &ModelConfig, seed: u64) -> HdrUNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HdrUNet::new(cfg, &mut rng).unwrap()
}

fn random_input(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..shape.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_data(shape, data).unwrap()
}

#[test]
fn parameter_counts_match_hand_derived_formulas() {
    let tiny = ModelConfig::tiny();
    assert_eq!(expected_params(&tiny), 10_598);
    assert_eq!(build(&tiny, 0).parameter_count(), 10_598);

    let desk = ModelConfig::desk();
    assert_eq!(expected_params(&desk), 75_286);
    assert_eq!(build(&desk, 0).parameter_count(), 75_286);

    // Every strategy/weighting combination agrees with the formula.
    for strategy in [
        ModulationStrategy::None,
        ModulationStrategy::GlobalChannel,
        ModulationStrategy::SpatialShared,
        ModulationStrategy::Full,
    ] {
        for weighting in [false, true] {
            let cfg = ModelConfig {
                modulation: strategy,
                weighting_enabled: weighting,
                ..ModelConfig::tiny()
            };
            assert_eq!(
                build(&cfg, 1).parameter_count(),
                expected_params(&cfg),
                "{strategy:?} weighting={weighting}"
            );
        }
    }
}

#[test]
fn subnetwork_sizes_explain_config_deltas() {
    // Toggling one subnetwork changes the total by exactly that
    // subnetwork's size, for both toggles independently.
    let base = ModelConfig::tiny();
    let c = base.base_channels;
    let cond_size = conv_params(3, c, 3)
        + (base.n_scales - 1) * conv_params(c, c, 3)
        + base.n_res_blocks * 4 * conv_params(c, c, 3);
    let wnet_size = conv_params(3, c, 3) + conv_params(c, c, 3) + conv_params(c, 3, 3);

    let count = |strategy, weighting| {
        build(
            &ModelConfig {
                modulation: strategy,
                weighting_enabled: weighting,
                ..base.clone()
            },
            2,
        )
        .parameter_count()
    };
    let full = count(ModulationStrategy::Full, true);
    assert_eq!(full - count(ModulationStrategy::None, true), cond_size);
    assert_eq!(full - count(ModulationStrategy::Full, false), wnet_size);
    assert_eq!(
        full - count(ModulationStrategy::None, false),
        cond_size + wnet_size
    );
}

#[test]
fn registry_enumerates_parameters_in_documented_order() {
    let cfg = ModelConfig {
        base_channels: 4,
        n_res_blocks: 1,
        n_scales: 2,
        ..ModelConfig::default()
    };
    let model = build(&cfg, 3);
    let names: Vec<&str> = model
        .registry()
        .entries()
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    let want = [
        "base.head.weight",
        "base.head.bias",
        "base.down1.weight",
        "base.down1.bias",
        "base.block0.sft.alpha1.weight",
        "base.block0.sft.alpha1.bias",
        "base.block0.sft.alpha2.weight",
        "base.block0.sft.alpha2.bias",
        "base.block0.sft.beta1.weight",
        "base.block0.sft.beta1.bias",
        "base.block0.sft.beta2.weight",
        "base.block0.sft.beta2.bias",
        "base.block0.conv1.weight",
        "base.block0.conv1.bias",
        "base.block0.conv2.weight",
        "base.block0.conv2.bias",
        "base.fuse0.weight",
        "base.fuse0.bias",
        "base.tail.weight",
        "base.tail.bias",
        "cond.conv0.weight",
        "cond.conv0.bias",
        "cond.conv1.weight",
        "cond.conv1.bias",
        "wnet.conv0.weight",
        "wnet.conv0.bias",
        "wnet.conv1.weight",
        "wnet.conv1.bias",
        "wnet.conv2.weight",
        "wnet.conv2.bias",
    ];
    assert_eq!(names, want);
}

#[test]
fn shifted_crops_produce_shifted_outputs_in_the_interior() {
    // Two 64x64 crops of one 72x72 field, offset by 4 pixels on both
    // axes. Away from the borders each output pixel's dependency cone
    // sees identical values through identical arithmetic, so the
    // outputs must agree bitwise at shifted positions. Holds for the
    // purely convolutional strategies (global pooling breaks it).
    for strategy in [ModulationStrategy::Full, ModulationStrategy::SpatialShared] {
        let cfg = ModelConfig {
            base_channels: 4,
            n_res_blocks: 1,
            n_scales: 2,
            modulation: strategy,
            weighting_enabled: true,
        };
        let model = build(&cfg, 4);

        let (big_h, big_w, size, d) = (72usize, 72usize, 64usize, 4usize);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let big: Vec<f64> = (0..3 * big_h * big_w)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let crop = |top: usize, left: usize| -> Tensor<f64> {
            let mut data = Vec::with_capacity(3 * size * size);
            for ch in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        data.push(big[(ch * big_h + top + y) * big_w + left + x]);
                    }
                }
            }
            Tensor::from_data(Shape::new(1, 3, size, size), data).unwrap()
        };

        let tape = Tape::new();
        let y_a = model.forward(&tape, &crop(0, 0)).unwrap();
        let y_b = model.forward(&tape, &crop(d, d)).unwrap();
        let (a, b) = (y_a.data(), y_b.data());

        let mut compared = 0usize;
        for ch in 0..3 {
            for y in 20..40 {
                for x in 20..40 {
                    let va = a[(ch * size + y + d) * size + x + d];
                    let vb = b[(ch * size + y) * size + x];
                    assert_eq!(
                        va.to_bits(),
                        vb.to_bits(),
                        "{strategy:?} mismatch at ch {ch} ({y},{x}): {va} vs {vb}"
                    );
                    compared += 1;
                }
            }
        }
        assert_eq!(compared, 3 * 20 * 20);
    }
}

#[test]
fn every_parameter_receives_gradient_within_two_steps() {
    let cfg = ModelConfig::tiny();
    let model = build(&cfg, 6);
    let input = random_input(Shape::new(1, 3, 8, 8), 7);
    let target = random_input(Shape::new(1, 3, 8, 8), 8);

    let backward = |model: &HdrUNet<f64>| {
        model.registry().set_all_requires_grad(true);
        let tape = Tape::new();
        for (_, t) in model.registry().entries() {
            tape.watch(t);
        }
        let pred = model.forward(&tape, &input).unwrap();
        let loss = LossKind::TanhL1.evaluate(&tape, &pred, &target).unwrap();
        tape.backward(&loss).unwrap();
    };

    // Pass 1: the zero-initialized alpha output heads block gradient
    // flow into their own first stage and nothing else.
    backward(&model);
    let mut dead = Vec::new();
    for (name, t) in model.registry().entries() {
        let grad = t.grad().unwrap();
        if grad.iter().all(|g| *g == 0.0) {
            dead.push(name.clone());
        }
    }
    let mut expected_dead: Vec<String> = (0..cfg.n_res_blocks)
        .flat_map(|i| {
            [
                format!("base.block{i}.sft.alpha1.weight"),
                format!("base.block{i}.sft.alpha1.bias"),
            ]
        })
        .collect();
    expected_dead.sort();
    dead.sort();
    assert_eq!(dead, expected_dead);

    // One optimizer step moves the alpha output heads off zero …
    let mut adam = AdamState::new(model.registry());
    adam.step(model.registry(), 1e-3).unwrap();

    // … and pass 2 reaches everything.
    backward(&model);
    for (name, t) in model.registry().entries() {
        let grad = t.grad().unwrap();
        assert!(
            grad.iter().any(|g| *g != 0.0),
            "{name} still has an all-zero gradient after one step"
        );
    }
}

#[test]
fn forward_equals_gate_blend_of_exposed_subnetworks() {
    let cfg = ModelConfig::tiny();
    let model = build(&cfg, 9);
    let input = random_input(Shape::new(1, 3, 16, 16), 10);

    let tape = Tape::new();
    let fused = model.forward(&tape, &input).unwrap();

    let conds = model.condition_forward(&tape, &input).unwrap();
    assert_eq!(conds.len(), cfg.n_res_blocks);
    let g = model.base_forward(&tape, &input, &conds).unwrap();
    let w = model.weighting_forward(&tape, &input).unwrap();
    let composed = tape.add(&tape.mul(&w, &input).unwrap(), &g).unwrap();

    let (a, b) = (fused.data(), composed.data());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }

    // The gate is strictly inside (0, 1).
    for v in w.data().iter() {
        assert!(*v > 0.0 && *v < 1.0);
    }
}

#[test]
fn disabled_weighting_returns_the_base_output_directly() {
    let cfg = ModelConfig {
        weighting_enabled: false,
        ..ModelConfig::tiny()
    };
    let model = build(&cfg, 11);
    let input = random_input(Shape::new(1, 3, 8, 8), 12);

    let tape = Tape::new();
    let fused = model.forward(&tape, &input).unwrap();
    let conds = model.condition_forward(&tape, &input).unwrap();
    let g = model.base_forward(&tape, &input, &conds).unwrap();

    for (x, y) in fused.data().iter().zip(g.data().iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert!(model.weighting_forward(&tape, &input).is_err());
}
