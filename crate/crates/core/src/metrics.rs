//! Evaluation metrics, computed in 64-bit floats on plain slices.
//!
//! Two PSNR variants are reported:
//!
//! * **linear** ([`psnr_l`]): both arrays are normalized by the peak of
//!   the ground truth, then standard PSNR with peak 1.
//! * **tone-mapped** ([`psnr_mu`]): both arrays are normalized by a high
//!   percentile of the ground truth, bounded by tanh, log-compressed by
//!   [`mu_law`], and only then compared. This weights visible dark and
//!   mid-tone detail far more heavily than raw highlight magnitude.
//!
//! Both normalize by **ground-truth** statistics exclusively, so the
//! argument order matters whenever the two arrays have different peaks.

use crate::error::{Error, Result};

/// Parameters of the tone-mapped metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Log-compression strength of [`mu_law`].
    pub mu: f64,
    /// Ground-truth percentile used as the normalizer in [`psnr_mu`].
    pub percentile: f64,
    /// Value reported when the mean squared error is exactly zero.
    pub psnr_cap_db: f64,
}

impl Default for MetricConfig {
    fn default() -> MetricConfig {
        MetricConfig {
            mu: 5000.0,
            percentile: 99.0,
            psnr_cap_db: 100.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config(format!(
                "percentile must be in (0, 100], got {}",
                self.percentile
            )));
        }
        if !(self.psnr_cap_db > 0.0) {
            return Err(Error::config(format!(
                "psnr_cap_db must be positive, got {}",
                self.psnr_cap_db
            )));
        }
        Ok(())
    }
}

/// Logarithmic range compression `T(x) = ln(1 + μx) / ln(1 + μ)`,
/// a monotone bijection of [0,1] onto itself.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    (1.0 + mu * x).ln() / (1.0 + mu).ln()
}

/// Inverse of [`mu_law`]: `x = ((1 + μ)^y − 1) / μ`.
pub fn mu_law_inverse(y: f64, mu: f64) -> f64 {
    ((1.0 + mu).ln() * y).exp_m1() / mu
}

/// Linear-interpolation percentile of the flattened values: the value at
/// fractional rank `p/100 · (n−1)` of the sorted array.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::degenerate("percentile of an empty array"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::config(format!(
            "percentile rank must be in [0, 100], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric inputs"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}

fn check_pair(yhat: &[f64], gt: &[f64]) -> Result<()> {
    if yhat.len() != gt.len() {
        return Err(Error::shape(format!(
            "metric inputs differ in length: {} vs {}",
            yhat.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::degenerate("metric inputs are empty"));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, cap_db: f64) -> f64 {
    if mse == 0.0 {
        cap_db
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak-normalized linear PSNR in dB. Both arrays are divided by
/// `max(gt)` before comparison; identical arrays report the cap.
pub fn psnr_l(yhat: &[f64], gt: &[f64], cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(yhat, gt)?;
    let peak = gt.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !(peak > 0.0) {
        return Err(Error::degenerate(format!(
            "ground-truth peak must be positive, got {peak}"
        )));
    }
    let a: Vec<f64> = yhat.iter().map(|&v| v / peak).collect();
    let b: Vec<f64> = gt.iter().map(|&v| v / peak).collect();
    Ok(psnr_from_mse(mse(&a, &b), cfg.psnr_cap_db))
}

/// Tone-mapped PSNR in dB. Pipeline, in order: divide both arrays by
/// `percentile(gt, cfg.percentile)`, bound with tanh, clamp to [0,1]
/// (predictions may be negative), compress with [`mu_law`], then PSNR
/// with peak 1.
pub fn psnr_mu(yhat: &[f64], gt: &[f64], cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(yhat, gt)?;
    let norm = percentile(gt, cfg.percentile)?;
    if !(norm > 0.0) {
        return Err(Error::degenerate(format!(
            "ground-truth percentile normalizer must be positive, got {norm}"
        )));
    }
    let map = |v: f64| mu_law((v / norm).tanh().clamp(0.0, 1.0), cfg.mu);
    let a: Vec<f64> = yhat.iter().map(|&v| map(v)).collect();
    let b: Vec<f64> = gt.iter().map(|&v| map(v)).collect();
    Ok(psnr_from_mse(mse(&a, &b), cfg.psnr_cap_db))
}

/// Gradient-magnitude map `sqrt(Gx² + Gy²)` of one channel using the
/// 3×3 derivative stencil with ±3/±10 weights and zero-padded borders.
pub fn scharr_gradient_map(image: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    if h < 3 || w < 3 {
        return Err(Error::degenerate(format!(
            "gradient map needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    if image.len() != h * w {
        return Err(Error::shape(format!(
            "image length {} does not match {h}x{w}",
            image.len()
        )));
    }
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            image[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 3.0 * (at(y - 1, x + 1) - at(y - 1, x - 1))
                + 10.0 * (at(y, x + 1) - at(y, x - 1))
                + 3.0 * (at(y + 1, x + 1) - at(y + 1, x - 1));
            let gy = 3.0 * (at(y + 1, x - 1) - at(y - 1, x - 1))
                + 10.0 * (at(y + 1, x) - at(y - 1, x))
                + 3.0 * (at(y + 1, x + 1) - at(y - 1, x + 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_law_endpoints_and_closed_form() {
        assert_eq!(mu_law(0.0, 5000.0), 0.0);
        assert!((mu_law(1.0, 5000.0) - 1.0).abs() < 1e-15);
        // ln(51)/ln(5001), frozen from an independent evaluation
        assert!((mu_law(0.01, 5000.0) - 0.461_623_122_661_288).abs() < 1e-12);
    }

    #[test]
    fn mu_law_is_strictly_increasing_on_grid() {
        let mut prev = mu_law(0.0, 5000.0);
        for i in 1..=1000 {
            let v = mu_law(i as f64 / 1000.0, 5000.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn mu_law_inverse_round_trips() {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let y = mu_law(x, 5000.0);
            assert!((mu_law_inverse(y, 5000.0) - x).abs() < 1e-10);
        }
    }

    #[test]
    fn percentile_conventions() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 100.0).unwrap(), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        let grid: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!((percentile(&grid, 99.0).unwrap() - 989.01).abs() < 1e-9);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn psnr_l_identity_hits_cap() {
        let v = vec![0.25, 0.5, 1.0, 0.125];
        let cfg = MetricConfig::default();
        assert_eq!(psnr_l(&v, &v, &cfg).unwrap(), 100.0);
    }

    #[test]
    fn psnr_l_constant_difference_closed_form() {
        let gt = vec![1.0; 64];
        let yhat: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        let cfg = MetricConfig::default();
        let db = psnr_l(&yhat, &gt, &cfg).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "{db}");
    }

    #[test]
    fn psnr_l_is_scale_invariant() {
        let gt = vec![0.1, 0.4, 0.9, 0.2];
        let yhat = vec![0.12, 0.38, 0.91, 0.25];
        let gt2: Vec<f64> = gt.iter().map(|v| v * 2.0).collect();
        let yhat2: Vec<f64> = yhat.iter().map(|v| v * 2.0).collect();
        let cfg = MetricConfig::default();
        let a = psnr_l(&yhat, &gt, &cfg).unwrap();
        let b = psnr_l(&yhat2, &gt2, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn psnr_l_rejects_nonpositive_peak() {
        let cfg = MetricConfig::default();
        assert!(matches!(
            psnr_l(&[0.0, 0.0], &[0.0, 0.0], &cfg),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn psnr_mu_is_jointly_scale_invariant() {
        let gt = vec![0.1, 0.4, 0.9, 0.2, 0.6, 0.05];
        let yhat = vec![0.12, 0.38, 0.91, 0.25, 0.55, 0.04];
        let cfg = MetricConfig::default();
        let a = psnr_mu(&yhat, &gt, &cfg).unwrap();
        let scale = 7.3;
        let gt2: Vec<f64> = gt.iter().map(|v| v * scale).collect();
        let yhat2: Vec<f64> = yhat.iter().map(|v| v * scale).collect();
        let b = psnr_mu(&yhat2, &gt2, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn metrics_normalize_by_ground_truth_only() {
        // Different peaks: swapping arguments must change the result.
        let gt = vec![0.1, 0.5, 2.0, 0.3];
        let yhat = vec![0.2, 0.4, 1.0, 0.3];
        let cfg = MetricConfig::default();
        let fwd = psnr_l(&yhat, &gt, &cfg).unwrap();
        let rev = psnr_l(&gt, &yhat, &cfg).unwrap();
        assert!((fwd - rev).abs() > 1e-6);
        let fwd = psnr_mu(&yhat, &gt, &cfg).unwrap();
        let rev = psnr_mu(&gt, &yhat, &cfg).unwrap();
        assert!((fwd - rev).abs() > 1e-6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = MetricConfig::default();
        cfg.mu = 0.0;
        assert!(cfg.validate().is_err());
        cfg = MetricConfig::default();
        cfg.percentile = 0.0;
        assert!(cfg.validate().is_err());
        cfg = MetricConfig::default();
        cfg.percentile = 100.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scharr_constant_image_is_flat_zero() {
        let img = vec![0.7; 25];
        let map = scharr_gradient_map(&img, 5, 5).unwrap();
        // Interior rows/cols see a constant neighborhood; the zero
        // padding makes the border nonzero by construction.
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(map[y * 5 + x], 0.0);
            }
        }
    }

    #[test]
    fn scharr_step_edge_magnitude() {
        // Vertical step: columns 0..3 are 0, columns 3..6 are 1.
        let (h, w) = (6, 6);
        let mut img = vec![0.0; h * w];
        for y in 0..h {
            for x in 3..w {
                img[y * w + x] = 1.0;
            }
        }
        let map = scharr_gradient_map(&img, h, w).unwrap();
        // Interior pixels adjacent to the edge see Gx = 3+10+3 = 16.
        for y in 1..h - 1 {
            assert!((map[y * w + 2] - 16.0).abs() < 1e-12);
            assert!((map[y * w + 3] - 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scharr_magnitude_commutes_with_rotation() {
        let (h, w) = (5, 7);
        let img: Vec<f64> = (0..h * w).map(|i| ((i * 13 % 29) as f64) / 29.0).collect();
        let map = scharr_gradient_map(&img, h, w).unwrap();
        // Rotate the image 90° clockwise: (y, x) → (x, h−1−y).
        let mut rot = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                rot[x * h + (h - 1 - y)] = img[y * w + x];
            }
        }
        let rot_map = scharr_gradient_map(&rot, w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let a = map[y * w + x];
                let b = rot_map[x * h + (h - 1 - y)];
                assert!((a - b).abs() < 1e-12, "({y},{x}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn scharr_rejects_tiny_images() {
        assert!(scharr_gradient_map(&[0.0; 4], 2, 2).is_err());
    }
}
