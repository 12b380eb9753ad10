use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split fractions, SNR ranges and the master seed for a dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub train_snr_db: [f64; 2],
    pub test_snr_db: [f64; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            val_fraction: 0.05,
            test_fraction: 0.05,
            train_snr_db: [-5.0, 20.0],
            test_snr_db: [-5.0, 5.0],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.val_fraction) || !ok(self.test_fraction) || self.val_fraction + self.test_fraction > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "split fractions val={} test={} must lie in [0, 1] and sum to at most 1",
                self.val_fraction, self.test_fraction
            )));
        }
        for (name, [lo, hi]) in [("train_snr_db", self.train_snr_db), ("test_snr_db", self.test_snr_db)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} range [{lo}, {hi}] is degenerate")));
            }
        }
        Ok(())
    }

    fn snr_range(&self, split: Split) -> [f64; 2] {
        match split {
            Split::Test => self.test_snr_db,
            _ => self.train_snr_db,
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub id: String,
    /// Utterance path relative to the corpus directory.
    pub utterance: PathBuf,
    pub seed: u64,
    pub split: Split,
    pub snr_db: f64,
}

fn is_audio(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav") || e.eq_ignore_ascii_case("flac"))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else if is_audio(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// All WAV/FLAC files below `dir`, relative to it and sorted.
pub fn collect_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        ));
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut rel: Vec<PathBuf> = files
        .into_iter()
        .map(|p| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(p))
        .collect();
    rel.sort();
    if rel.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(rel)
}

/// Shuffles the sorted utterance list with the master seed and assigns
/// `round(n * test)` test rows, `round(n * val)` validation rows and the rest
/// to training. Each row gets its own scene seed and SNR draw.
pub fn build_manifest(utterances: &[PathBuf], config: &DatasetConfig) -> Result<Vec<ManifestRow>> {
    config.validate()?;
    if utterances.is_empty() {
        return Err(Error::EmptyCorpus(PathBuf::new()));
    }
    let mut sorted = utterances.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let n_val = ((n as f64 * config.val_fraction).round() as usize).min(n - n_test);
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(i, utterance)| {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            let [lo, hi] = config.snr_range(split);
            let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            ManifestRow {
                id: format!("{:05}", i),
                utterance,
                seed: rng.gen(),
                split,
                snr_db,
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut text = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut text, row)?;
        text.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&text).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                what: "manifest row",
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
