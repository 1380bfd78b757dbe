//! Synthetic input degradation: turns an HDR target into the 8-bit
//! image a camera pipeline would have saved.
//!
//! Stage order is fixed: exposure gain → clip to the sensor range →
//! additive Gaussian noise → clip to [0, 1] → quantization to the
//! configured bit depth → 8-bit encoding. Noise is applied after the
//! first clip so it survives into the saved file the way sensor/ISP
//! noise does — the input ends up noisier than its HDR target, which is
//! exactly the asymmetry the reconstruction model must learn to undo.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image::{HdrImage, LdrImage};
use crate::error::{Error, Result};

/// Degradation pipeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    /// Exposure multiplier applied to the HDR values (> 0). Values
    /// above `clip_high / exposure_gain` saturate.
    pub exposure_gain: f64,
    /// Standard deviation of the additive Gaussian noise, in [0, 1]
    /// units. Zero disables the noise stage (and its random draws).
    pub noise_sigma: f64,
    /// Quantization depth in bits, 1..=8.
    pub quant_bits: u8,
    /// Lower clip bound applied after the gain.
    pub clip_low: f64,
    /// Upper clip bound applied after the gain.
    pub clip_high: f64,
    /// Seed for the standalone entry point ([`synthesize_ldr`]).
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> DegradationParams {
        DegradationParams {
            exposure_gain: 4.0,
            noise_sigma: 2.0 / 255.0,
            quant_bits: 8,
            clip_low: 0.0,
            clip_high: 1.0,
            seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_gain > 0.0) {
            return Err(Error::config(format!(
                "exposure_gain must be positive, got {}",
                self.exposure_gain
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.quant_bits == 0 || self.quant_bits > 8 {
            return Err(Error::config(format!(
                "quant_bits must be in 1..=8, got {}",
                self.quant_bits
            )));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(Error::config(format!(
                "clip bounds must satisfy low < high, got {} and {}",
                self.clip_low, self.clip_high
            )));
        }
        Ok(())
    }
}

/// Runs the degradation pipeline with a dedicated generator seeded from
/// `params.seed`.
pub fn synthesize_ldr(hdr: &HdrImage, params: &DegradationParams) -> Result<LdrImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    synthesize_ldr_with(hdr, params, &mut rng)
}

/// Runs the degradation pipeline drawing noise from a caller-owned
/// generator (one draw per pixel value in planar order; none when
/// `noise_sigma` is zero).
pub fn synthesize_ldr_with<R: Rng>(
    hdr: &HdrImage,
    params: &DegradationParams,
    rng: &mut R,
) -> Result<LdrImage> {
    params.validate()?;
    let levels = ((1u32 << params.quant_bits) - 1) as f64;
    let noise = if params.noise_sigma > 0.0 {
        Some(Normal::new(0.0, params.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let bytes = hdr
        .data()
        .iter()
        .map(|&v| {
            let mut x = v as f64 * params.exposure_gain;
            x = x.clamp(params.clip_low, params.clip_high);
            if let Some(n) = &noise {
                x += n.sample(rng);
            }
            x = x.clamp(0.0, 1.0);
            let q = (x * levels).round() / levels;
            (q * 255.0).round() as u8
        })
        .collect();
    LdrImage::from_planar(bytes, hdr.height(), hdr.width())
}
