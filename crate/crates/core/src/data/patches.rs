//! Aligned patch extraction from input/target image pairs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image::{HdrImage, LdrImage};
use crate::error::{Error, Result};

/// Sliding-window start offsets along one dimension: multiples of
/// `step` while a full window fits, plus a final window snapped to the
/// far edge when the stride pattern would leave a remainder uncovered.
pub fn window_starts(dim: usize, size: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 {
        return Err(Error::config("window step must be positive"));
    }
    if size == 0 || size > dim {
        return Err(Error::degenerate(format!(
            "window of size {size} does not fit in dimension {dim}"
        )));
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|s| s + size <= dim)
        .collect();
    let last = *starts.last().expect("start 0 always fits");
    if last + size < dim {
        starts.push(dim - size);
    }
    Ok(starts)
}

fn check_aligned(ldr: &LdrImage, hdr: &HdrImage) -> Result<()> {
    if ldr.height() != hdr.height() || ldr.width() != hdr.width() {
        return Err(Error::contract(format!(
            "pair is not co-registered: {}x{} vs {}x{}",
            ldr.height(),
            ldr.width(),
            hdr.height(),
            hdr.width()
        )));
    }
    Ok(())
}

/// Extracts the aligned `size×size` crop at (`top`, `left`) from both
/// images of a pair.
pub fn crop_at(
    ldr: &LdrImage,
    hdr: &HdrImage,
    top: usize,
    left: usize,
    size: usize,
) -> Result<(LdrImage, HdrImage)> {
    check_aligned(ldr, hdr)?;
    let (h, w) = (ldr.height(), ldr.width());
    if top + size > h || left + size > w {
        return Err(Error::degenerate(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let plane = h * w;
    let mut ldr_out = Vec::with_capacity(3 * size * size);
    let mut hdr_out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            let row = c * plane + (top + y) * w + left;
            ldr_out.extend_from_slice(&ldr.bytes()[row..row + size]);
            hdr_out.extend_from_slice(&hdr.data()[row..row + size]);
        }
    }
    Ok((
        LdrImage::from_planar(ldr_out, size, size)?,
        HdrImage::from_planar(hdr_out, size, size)?,
    ))
}

/// All aligned sliding-window crops of a pair, row-major over window
/// positions, with edge-snapped final windows in each dimension.
pub fn crop_patches(
    ldr: &LdrImage,
    hdr: &HdrImage,
    size: usize,
    step: usize,
) -> Result<Vec<(LdrImage, HdrImage)>> {
    check_aligned(ldr, hdr)?;
    let rows = window_starts(ldr.height(), size, step)?;
    let cols = window_starts(ldr.width(), size, step)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &top in &rows {
        for &left in &cols {
            out.push(crop_at(ldr, hdr, top, left, size)?);
        }
    }
    Ok(out)
}

/// Aligned random crop with offsets drawn from `rng`: row first, then
/// column, each uniform over the valid range.
pub fn random_crop<R: Rng>(
    ldr: &LdrImage,
    hdr: &HdrImage,
    patch: usize,
    rng: &mut R,
) -> Result<(LdrImage, HdrImage)> {
    check_aligned(ldr, hdr)?;
    if patch == 0 || patch > ldr.height() || patch > ldr.width() {
        return Err(Error::degenerate(format!(
            "patch {patch} does not fit in {}x{}",
            ldr.height(),
            ldr.width()
        )));
    }
    let top = rng.gen_range(0..=ldr.height() - patch);
    let left = rng.gen_range(0..=ldr.width() - patch);
    crop_at(ldr, hdr, top, left, patch)
}

/// [`random_crop`] with a dedicated generator seeded from `seed`.
pub fn random_crop_seeded(
    ldr: &LdrImage,
    hdr: &HdrImage,
    patch: usize,
    seed: u64,
) -> Result<(LdrImage, HdrImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_crop(ldr, hdr, patch, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(h: usize, w: usize) -> (LdrImage, HdrImage) {
        let ldr = LdrImage::from_planar(
            (0..3 * h * w).map(|i| (i % 251) as u8).collect(),
            h,
            w,
        )
        .unwrap();
        let hdr = HdrImage::from_planar(
            (0..3 * h * w).map(|i| (i % 997) as f32 / 997.0).collect(),
            h,
            w,
        )
        .unwrap();
        (ldr, hdr)
    }

    #[test]
    fn window_enumeration_matches_oracle() {
        assert_eq!(window_starts(480, 480, 240).unwrap(), vec![0]);
        assert_eq!(window_starts(960, 480, 240).unwrap(), vec![0, 240, 480]);
        // Remainder dimension snaps the last window to the edge.
        assert_eq!(
            window_starts(1000, 480, 240).unwrap(),
            vec![0, 240, 480, 520]
        );
        assert!(window_starts(100, 480, 240).is_err());
    }

    #[test]
    fn single_window_covers_whole_image() {
        let (ldr, hdr) = pair(16, 16);
        let patches = crop_patches(&ldr, &hdr, 16, 8).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].0, ldr);
        assert_eq!(patches[0].1, hdr);
    }

    #[test]
    fn patch_grid_counts_multiply() {
        let (ldr, hdr) = pair(32, 48);
        let patches = crop_patches(&ldr, &hdr, 16, 16).unwrap();
        assert_eq!(patches.len(), 2 * 3);
        for (l, h) in &patches {
            assert_eq!((l.height(), l.width()), (16, 16));
            assert_eq!((h.height(), h.width()), (16, 16));
        }
    }

    #[test]
    fn crops_are_coregistered_with_source() {
        let (ldr, hdr) = pair(20, 20);
        let (lc, hc) = crop_at(&ldr, &hdr, 3, 5, 7).unwrap();
        for c in 0..3 {
            for y in 0..7 {
                for x in 0..7 {
                    let src = c * 400 + (3 + y) * 20 + (5 + x);
                    let dst = c * 49 + y * 7 + x;
                    assert_eq!(lc.bytes()[dst], ldr.bytes()[src]);
                    assert_eq!(hc.data()[dst], hdr.data()[src]);
                }
            }
        }
    }

    #[test]
    fn degradation_commutes_with_cropping() {
        use crate::data::degrade::{synthesize_ldr, DegradationParams};
        let (_, hdr) = pair(24, 24);
        let params = DegradationParams {
            exposure_gain: 2.0,
            noise_sigma: 0.0,
            ..DegradationParams::default()
        };
        let ldr_full = synthesize_ldr(&hdr, &params).unwrap();
        for (top, left) in [(0, 0), (5, 9), (16, 16)] {
            let (ldr_crop, hdr_crop) = crop_at(&ldr_full, &hdr, top, left, 8).unwrap();
            let direct = synthesize_ldr(&hdr_crop, &params).unwrap();
            assert_eq!(ldr_crop, direct);
        }
    }

    #[test]
    fn random_crop_determinism_and_degenerate_case() {
        let (ldr, hdr) = pair(20, 20);
        let a = random_crop_seeded(&ldr, &hdr, 8, 77).unwrap();
        let b = random_crop_seeded(&ldr, &hdr, 8, 77).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        // Patch equal to the image returns the whole image.
        let (lw, hw) = random_crop_seeded(&ldr, &hdr, 20, 3).unwrap();
        assert_eq!(lw, ldr);
        assert_eq!(hw, hdr);
        assert!(random_crop_seeded(&ldr, &hdr, 21, 3).is_err());
    }

    #[test]
    fn random_crop_offsets_cover_range_uniformly() {
        use rand::SeedableRng;
        // Chi-square sanity over the 13 valid offsets of one axis.
        // Channel 0 encodes the row index so the drawn offset can be
        // recovered from the crop's corner pixel.
        let (h, w) = (20, 20);
        let mut data = vec![0u8; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = y as u8;
            }
        }
        let ldr = LdrImage::from_planar(data, h, w).unwrap();
        let (_, hdr) = pair(h, w);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let valid = 13usize; // 20 − 8 + 1
        let mut counts = vec![0usize; valid];
        let draws = 10_000;
        for _ in 0..draws {
            let (lc, _) = random_crop(&ldr, &hdr, 8, &mut rng).unwrap();
            let top = lc.bytes()[0] as usize;
            assert!(top < valid);
            counts[top] += 1;
        }
        let expected = draws as f64 / valid as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 12 degrees of freedom; 99.9th percentile ≈ 32.9.
        assert!(chi2 < 32.9, "chi² = {chi2}, counts {counts:?}");
    }

    #[test]
    fn misaligned_pair_is_rejected() {
        let (ldr, _) = pair(16, 16);
        let (_, hdr) = pair(16, 18);
        assert!(matches!(
            crop_at(&ldr, &hdr, 0, 0, 8),
            Err(Error::Contract(_))
        ));
    }
}
