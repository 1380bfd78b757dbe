//! Synthetic HDR scene generation.
//!
//! Training data for desk-scale experiments is manufactured rather than
//! captured: each scene is a smooth low-frequency base gradient with a
//! handful of bright Gaussian blobs on top, plus faint per-pixel texture.
//! The blobs are the point of the exercise — after exposure gain they
//! exceed the clipping range of the degradation pipeline, so the model
//! has genuinely saturated regions to reconstruct.
//!
//! All radiance values stay inside `[MIN_RADIANCE, 1.0]`. The non-zero
//! floor is deliberate: the evaluation tone curve is steepest near zero,
//! where a tiny reconstruction error costs many decibels, and scenes that
//! are nowhere *that* dark keep desk-scale targets meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image::HdrImage;
use crate::error::{Error, Result};

/// Lower clamp applied to every generated radiance value.
pub const MIN_RADIANCE: f32 = 0.05;

/// Generates one scene of extent `h` × `w`, consuming draws from `rng`.
///
/// Draw order is fixed (base parameters, tint, blob count, per-blob
/// parameters, then one texture draw per element in planar order), so a
/// given generator state always yields the same scene.
pub fn generate_scene<R: Rng>(h: usize, w: usize, rng: &mut R) -> Result<HdrImage> {
    if h == 0 || w == 0 {
        return Err(Error::degenerate(format!(
            "scene extent {h}x{w} has no pixels"
        )));
    }
    let side = h.min(w) as f64;

    // Base gradient: one low-frequency sinusoid across the frame.
    let lo = rng.gen_range(0.08..0.15);
    let hi = rng.gen_range(0.3..0.5);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let cycles = rng.gen_range(0.5..2.0);
    let (fy, fx) = (angle.sin() * cycles, angle.cos() * cycles);

    // Per-channel tint so the channels are correlated but not identical.
    let tint: [f64; 3] = [
        rng.gen_range(0.85..1.0),
        rng.gen_range(0.85..1.0),
        rng.gen_range(0.85..1.0),
    ];

    // Bright blobs. Colors are normalized so the brightest channel carries
    // the full peak value: every scene is guaranteed a true highlight.
    let n_blobs = rng.gen_range(2..=4usize);
    struct Blob {
        cy: f64,
        cx: f64,
        radius: f64,
        peak: f64,
        color: [f64; 3],
    }
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let cy = rng.gen_range(0.05..0.95) * h as f64;
        let cx = rng.gen_range(0.05..0.95) * w as f64;
        let radius = rng.gen_range(side / 8.0..side / 3.0);
        let peak = rng.gen_range(0.6..1.0);
        let mut color = [
            rng.gen_range(0.5..1.0),
            rng.gen_range(0.5..1.0),
            rng.gen_range(0.5..1.0),
        ];
        let max = color.iter().cloned().fold(f64::MIN, f64::max);
        for c in color.iter_mut() {
            *c /= max;
        }
        blobs.push(Blob {
            cy,
            cx,
            radius,
            peak,
            color,
        });
    }

    let mut data = vec![0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                let wave = 0.5 * (1.0 + (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin());
                let mut value = (lo + (hi - lo) * wave) * tint[c];
                for b in &blobs {
                    let dy = y as f64 - b.cy;
                    let dx = x as f64 - b.cx;
                    let d2 = dy * dy + dx * dx;
                    value += b.peak * b.color[c] * (-d2 / (2.0 * b.radius * b.radius)).exp();
                }
                // Faint texture keeps the scene from being piecewise-analytic.
                value += rng.gen_range(-0.01..0.01);
                data[(c * h + y) * w + x] = value.clamp(MIN_RADIANCE as f64, 1.0) as f32;
            }
        }
    }
    HdrImage::from_planar(data, h, w)
}

/// Generates `count` scenes from a single stream seeded with `seed`.
pub fn generate_scenes(count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<HdrImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_scene(h, w, &mut rng)).collect()
}
