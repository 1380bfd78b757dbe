//! Dataset manifests and deterministic train/validation splitting.
//!
//! A dataset is described by a plain-text manifest with one frame per
//! line: `take_id<TAB>ldr_path<TAB>hdr_path<TAB>split`. Frames sharing a
//! `take_id` come from the same capture sequence, and the splitter works
//! per take so that a take's frames never straddle the train/val
//! boundary within one draw.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which partition a frame belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Frames sampled during optimization.
    Train,
    /// Frames held out for evaluation.
    Val,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::config(format!(
                "unknown split '{other}' (expected 'train' or 'val')"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
        }
    }
}

/// One LDR/HDR pair in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameEntry {
    /// Capture-sequence identifier shared by related frames.
    pub take_id: String,
    /// Path of the 8-bit LDR input image.
    pub ldr: PathBuf,
    /// Path of the 16-bit HDR target image.
    pub hdr: PathBuf,
    /// Partition assignment.
    pub split: Split,
}

/// An ordered list of frames, as read from or written to a manifest.
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    /// Frames in manifest order.
    pub frames: Vec<FrameEntry>,
}

impl DatasetIndex {
    /// Groups frame indices by take, preserving first-appearance order of
    /// the takes themselves.
    pub fn takes(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, frame) in self.frames.iter().enumerate() {
            if !groups.contains_key(&frame.take_id) {
                order.push(frame.take_id.clone());
            }
            groups.entry(frame.take_id.clone()).or_default().push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let idx = groups.remove(&id).unwrap_or_default();
                (id, idx)
            })
            .collect()
    }

    /// Number of frames assigned to `split`.
    pub fn count(&self, split: Split) -> usize {
        self.frames.iter().filter(|f| f.split == split).count()
    }
}

/// Writes `index` to `path` as a tab-separated manifest.
pub fn write_manifest(index: &DatasetIndex, path: &Path) -> Result<()> {
    let mut out = String::new();
    for frame in &index.frames {
        let ldr = frame.ldr.to_string_lossy();
        let hdr = frame.hdr.to_string_lossy();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            frame.take_id, ldr, hdr, frame.split
        ));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a tab-separated manifest from `path`.
///
/// Blank lines are ignored. Any line that does not have exactly four
/// tab-separated fields, or whose split field is unrecognized, is
/// reported as a malformed-file error naming the offending line number.
pub fn read_manifest(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path)?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedFile {
                path: path.to_path_buf(),
                reason: format!(
                    "line {}: expected 4 tab-separated fields, found {}",
                    lineno + 1,
                    fields.len()
                ),
            });
        }
        let split = Split::from_str(fields[3]).map_err(|_| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!(
                "line {}: unknown split '{}' (expected 'train' or 'val')",
                lineno + 1,
                fields[3]
            ),
        })?;
        frames.push(FrameEntry {
            take_id: fields[0].to_string(),
            ldr: PathBuf::from(fields[1]),
            hdr: PathBuf::from(fields[2]),
            split,
        });
    }
    Ok(DatasetIndex { frames })
}

/// Reassigns splits by holding out `val_per_take` frames from every take,
/// sampled without replacement from a single seeded stream.
///
/// With `val_per_take == 0` every frame lands in the train split. A take
/// with fewer than `val_per_take + 1` frames is rejected: the split must
/// leave at least one training frame per take.
pub fn build_split(index: &DatasetIndex, val_per_take: usize, seed: u64) -> Result<DatasetIndex> {
    let mut frames = index.frames.clone();
    for frame in frames.iter_mut() {
        frame.split = Split::Train;
    }
    if val_per_take == 0 {
        return Ok(DatasetIndex { frames });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (take_id, members) in index.takes() {
        if members.len() <= val_per_take {
            return Err(Error::degenerate(format!(
                "take '{}' has {} frame(s); holding out {} would leave no training data",
                take_id,
                members.len(),
                val_per_take
            )));
        }
        let chosen = rand::seq::index::sample(&mut rng, members.len(), val_per_take);
        for pick in chosen.iter() {
            frames[members[pick]].split = Split::Val;
        }
    }
    Ok(DatasetIndex { frames })
}
