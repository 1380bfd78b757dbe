//! Data pipeline: image containers, synthetic scenes, LDR degradation,
//! patch extraction, and dataset manifests.
//!
//! The pipeline runs entirely offline relative to training: scenes are
//! generated and degraded once, written to disk as PNG pairs plus a
//! manifest, and the trainer only ever reads co-registered pairs back.

pub mod degrade;
pub mod image;
pub mod patches;
pub mod png_io;
pub mod split;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use image::{HdrImage, LdrImage};
use split::{read_manifest, Split};

/// One co-registered LDR input / HDR target pair, fully loaded.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub ldr: LdrImage,
    pub hdr: HdrImage,
}

/// An in-memory dataset, partitioned into train and validation pairs.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
}

impl Dataset {
    /// Loads every frame referenced by the manifest at `path`.
    ///
    /// Relative image paths are resolved against the manifest's own
    /// directory, so a dataset directory can be moved wholesale. Each
    /// pair's extents must agree.
    pub fn load(path: &Path) -> Result<Dataset> {
        let index = read_manifest(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut dataset = Dataset::default();
        for frame in &index.frames {
            let ldr = LdrImage::load(&resolve(base, &frame.ldr))?;
            let hdr = HdrImage::load(&resolve(base, &frame.hdr))?;
            if ldr.height() != hdr.height() || ldr.width() != hdr.width() {
                return Err(Error::MalformedFile {
                    path: path.to_path_buf(),
                    reason: format!(
                        "frame '{}': LDR is {}x{} but HDR is {}x{}",
                        frame.take_id,
                        ldr.height(),
                        ldr.width(),
                        hdr.height(),
                        hdr.width()
                    ),
                });
            }
            let pair = SamplePair { ldr, hdr };
            match frame.split {
                Split::Train => dataset.train.push(pair),
                Split::Val => dataset.val.push(pair),
            }
        }
        Ok(dataset)
    }

    /// Pairs to evaluate on: the validation split when present, otherwise
    /// the training split (useful for overfitting experiments that hold
    /// nothing out).
    pub fn eval_pairs(&self) -> &[SamplePair] {
        if self.val.is_empty() {
            &self.train
        } else {
            &self.val
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::degrade::{synthesize_ldr, DegradationParams};
    use crate::data::split::{write_manifest, DatasetIndex, FrameEntry};
    use crate::data::synth::generate_scenes;
    use tempfile::tempdir;

    fn write_pair(dir: &Path, stem: &str, seed: u64) -> (PathBuf, PathBuf) {
        let hdr = generate_scenes(1, 16, 16, seed).unwrap().remove(0);
        let params = DegradationParams {
            seed,
            ..DegradationParams::default()
        };
        let ldr = synthesize_ldr(&hdr, &params).unwrap();
        let ldr_path = dir.join(format!("{stem}_ldr.png"));
        let hdr_path = dir.join(format!("{stem}_hdr.png"));
        ldr.save(&ldr_path).unwrap();
        hdr.save(&hdr_path).unwrap();
        (ldr_path, hdr_path)
    }

    #[test]
    fn load_resolves_paths_relative_to_manifest() {
        let dir = tempdir().unwrap();
        let img_dir = dir.path().join("imgs");
        std::fs::create_dir(&img_dir).unwrap();
        let mut frames = Vec::new();
        for (i, split) in [Split::Train, Split::Train, Split::Val].iter().enumerate() {
            let stem = format!("s{i}");
            write_pair(&img_dir, &stem, i as u64);
            frames.push(FrameEntry {
                take_id: format!("t{i}"),
                ldr: PathBuf::from(format!("imgs/{stem}_ldr.png")),
                hdr: PathBuf::from(format!("imgs/{stem}_hdr.png")),
                split: *split,
            });
        }
        let manifest = dir.path().join("index.tsv");
        write_manifest(&DatasetIndex { frames }, &manifest).unwrap();

        let ds = Dataset::load(&manifest).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.val.len(), 1);
        assert_eq!(ds.train[0].ldr.height(), 16);
        assert_eq!(ds.train[0].hdr.width(), 16);
    }

    #[test]
    fn eval_pairs_fall_back_to_train() {
        let pair = {
            let dir = tempdir().unwrap();
            let (lp, hp) = write_pair(dir.path(), "x", 0);
            SamplePair {
                ldr: LdrImage::load(&lp).unwrap(),
                hdr: HdrImage::load(&hp).unwrap(),
            }
        };
        let mut ds = Dataset {
            train: vec![pair.clone()],
            val: vec![],
        };
        assert_eq!(ds.eval_pairs().len(), 1);
        ds.val.push(pair);
        assert!(std::ptr::eq(ds.eval_pairs().as_ptr(), ds.val.as_ptr()));
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let dir = tempdir().unwrap();
        let hdr = generate_scenes(1, 16, 16, 0).unwrap().remove(0);
        let small = generate_scenes(1, 8, 8, 0).unwrap().remove(0);
        let ldr = synthesize_ldr(&small, &DegradationParams::default()).unwrap();
        let lp = dir.path().join("a_ldr.png");
        let hp = dir.path().join("a_hdr.png");
        ldr.save(&lp).unwrap();
        hdr.save(&hp).unwrap();
        let manifest = dir.path().join("index.tsv");
        write_manifest(
            &DatasetIndex {
                frames: vec![FrameEntry {
                    take_id: "a".into(),
                    ldr: lp,
                    hdr: hp,
                    split: Split::Train,
                }],
            },
            &manifest,
        )
        .unwrap();
        let err = Dataset::load(&manifest).unwrap_err();
        assert!(matches!(err, Error::MalformedFile { .. }));
    }
}
