//! Scenario directories.
//!
//! A scenario directory holds a `meta` file (TOML: format, class count,
//! dimension, seed, per-split sample counts, seen classes as comma-separated
//! indices, optional toxic:non-toxic pairs) and one data file per split.
//!
//! Synthetic scenarios use `format = "f64"`, one `<split>.bin` per split:
//!
//! ```text
//! offset 0   8 bytes   magic "HTLABF64"
//! offset 8   u64 LE    rows
//! offset 16  u64 LE    cols
//! offset 24  u64 LE    num_classes
//! offset 32  f64 LE    rows * cols features, row-major
//! ...        u64 LE    rows labels
//! ```
//!
//! Real-data scenarios use `format = "idx"` with `<split>-images.idx` and
//! `<split>-labels.idx`, pixels stored as u8 and read back scaled to
//! `[0, 1]`.

use std::fs;
use std::path::Path;

use htlab_core::data::{Dataset, HTScenario, ToxicityMap};
use htlab_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idx;

pub const F64_MAGIC: &[u8; 8] = b"HTLABF64";
pub const SPLITS: [&str; 3] = ["source_train", "target_train", "target_test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageFormat {
    F64,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub source_train: usize,
    pub target_train: usize,
    pub target_test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub format: StorageFormat,
    pub num_classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub seen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity: Option<String>,
    pub counts: SplitCounts,
}

fn join(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().collect::<Vec<_>>().join(",")
}

fn parse_index(s: &str, path: &Path) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("bad class index {s:?}")))
}

impl Meta {
    pub fn describe(scenario: &HTScenario, toxicity: Option<&ToxicityMap>, format: StorageFormat) -> Meta {
        Meta {
            format,
            num_classes: scenario.num_classes(),
            dim: scenario.dim(),
            seed: scenario.seed,
            seen: join(scenario.seen_classes().iter().map(usize::to_string)),
            toxicity: toxicity.map(|t| join(t.pairs.iter().map(|(a, b)| format!("{a}:{b}")))),
            counts: SplitCounts {
                source_train: scenario.source_train.len(),
                target_train: scenario.target_train.len(),
                target_test: scenario.target_test.len(),
            },
        }
    }

    fn seen_mask(&self, path: &Path) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.num_classes];
        for part in self.seen.split(',').filter(|s| !s.trim().is_empty()) {
            let c = parse_index(part, path)?;
            *mask
                .get_mut(c)
                .ok_or_else(|| Error::format(path, format!("seen class {c} out of range")))? = true;
        }
        Ok(mask)
    }

    fn toxicity_map(&self, path: &Path) -> Result<Option<ToxicityMap>> {
        let Some(spec) = &self.toxicity else {
            return Ok(None);
        };
        let pairs = spec
            .split(',')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::format(path, format!("bad toxicity pair {pair:?}")))?;
                Ok((parse_index(a, path)?, parse_index(b, path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(ToxicityMap { pairs }))
    }
}

pub fn encode_f64(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * data.len() * (data.dim() + 1));
    out.extend_from_slice(F64_MAGIC);
    for v in [data.len(), data.dim(), data.num_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in data.features().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in data.labels() {
        out.extend_from_slice(&(y as u64).to_le_bytes());
    }
    out
}

pub fn decode_f64(bytes: &[u8]) -> Result<Dataset, String> {
    if bytes.len() < 32 || &bytes[..8] != F64_MAGIC {
        return Err("not an HTLABF64 file".into());
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let (rows, cols, classes) = (word(1), word(2), word(3));
    let expected = rows
        .checked_mul(cols + 1)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(32))
        .ok_or("header sizes overflow")?;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let (fbytes, lbytes) = bytes[32..].split_at(8 * rows * cols);
    let word = |c: &[u8]| <[u8; 8]>::try_from(c).unwrap();
    let features = fbytes.chunks_exact(8).map(|c| f64::from_le_bytes(word(c))).collect();
    let labels = lbytes.chunks_exact(8).map(|c| u64::from_le_bytes(word(c)) as usize).collect();
    let features = Matrix::from_vec(rows, cols, features).map_err(|e| e.to_string())?;
    Dataset::new(features, labels, classes).map_err(|e| e.to_string())
}

/// Refuses to reuse a non-empty directory unless `force`; creates it
/// otherwise.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Error::Usage(format!(
                "{} exists and is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn export_scenario(
    dir: &Path,
    scenario: &HTScenario,
    toxicity: Option<&ToxicityMap>,
    format: StorageFormat,
) -> Result<()> {
    scenario.validate()?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let splits = [&scenario.source_train, &scenario.target_train, &scenario.target_test];
    for (name, data) in SPLITS.iter().zip(splits) {
        match format {
            StorageFormat::F64 => write(&dir.join(format!("{name}.bin")), &encode_f64(data))?,
            StorageFormat::Idx => {
                let (images, labels) = idx::quantize(data).map_err(|m| Error::format(dir, m))?;
                write(&dir.join(format!("{name}-images.idx")), &idx::encode_images(&images))?;
                write(&dir.join(format!("{name}-labels.idx")), &idx::encode_labels(&labels))?;
            }
        }
    }
    let meta = Meta::describe(scenario, toxicity, format);
    let text = toml::to_string(&meta).map_err(|e| Error::format(dir, e.to_string()))?;
    write(&dir.join("meta"), text.as_bytes())
}

pub fn import_scenario(dir: &Path) -> Result<(HTScenario, Option<ToxicityMap>)> {
    let meta_path = dir.join("meta");
    let text = fs::read_to_string(&meta_path).map_err(Error::io(&meta_path))?;
    let meta: Meta = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let mut data = Vec::with_capacity(3);
    for name in SPLITS {
        let ds = match meta.format {
            StorageFormat::F64 => {
                let path = dir.join(format!("{name}.bin"));
                let bytes = fs::read(&path).map_err(Error::io(&path))?;
                decode_f64(&bytes).map_err(|m| Error::format(&path, m))?
            }
            StorageFormat::Idx => idx::load_idx_with_classes(
                &dir.join(format!("{name}-images.idx")),
                &dir.join(format!("{name}-labels.idx")),
                Some(meta.num_classes),
            )?,
        };
        if ds.num_classes() != meta.num_classes || ds.dim() != meta.dim {
            return Err(Error::format(dir, format!("{name} disagrees with meta on classes or dimension")));
        }
        data.push(ds);
    }
    let target_test = data.pop().unwrap();
    let target_train = data.pop().unwrap();
    let source_train = data.pop().unwrap();
    let counts = SplitCounts {
        source_train: source_train.len(),
        target_train: target_train.len(),
        target_test: target_test.len(),
    };
    if counts != meta.counts {
        return Err(Error::format(&meta_path, "sample counts disagree with the data files"));
    }
    let scenario = HTScenario {
        source_train,
        target_train,
        target_test,
        seen_mask: meta.seen_mask(&meta_path)?,
        seed: meta.seed,
    };
    scenario.validate()?;
    let toxicity = meta.toxicity_map(&meta_path)?;
    if let Some(t) = &toxicity {
        t.validate(&scenario.seen_mask)?;
    }
    Ok((scenario, toxicity))
}
