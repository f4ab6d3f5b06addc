//! On-disk datasets: clip features, labels, vocabulary and split manifest.
//!
//! A dataset directory holds
//!
//! - `features.bin`: a fixed header followed by row-major little-endian
//!   `f32` features, one `frames × dim` block per clip;
//! - `labels.csv`: one row per clip, in feature-row order;
//! - `vocab.json`: the full label universe (base and novel classes);
//! - `manifest.json`: the base/novel split and the verb frequencies it was
//!   chosen from;
//! - optionally `encoders.json` with initial encoder parameters.
//!
//! Writing a loaded dataset reproduces every file byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{ParamStore, SyntheticDataset, ToyEncoders, VideoSample};
use crate::error::{AceError, Result};
use crate::eval::{select_base_novel_split, Rounding};
use crate::vocab::{ActionLabel, Vocabulary};

pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const VOCAB_FILE: &str = "vocab.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENCODERS_FILE: &str = "encoders.json";

pub const FEATURE_MAGIC: [u8; 8] = *b"ACEFEAT\0";
pub const FEATURE_VERSION: u32 = 1;
/// magic, version u32, rows u64, frames u32, dim u32
pub const FEATURE_HEADER_LEN: usize = 8 + 4 + 8 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One clip as described by `labels.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Index into the full vocabulary.
    pub label_index: usize,
    pub verb: String,
    pub object: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitClips {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub dataset_id: String,
    /// Vocabulary indices of the seen classes, ascending.
    pub base_classes: Vec<usize>,
    /// Vocabulary indices of the unseen classes, ascending.
    pub novel_classes: Vec<usize>,
    pub splits: SplitClips,
    /// Training-clip count per root verb the split was selected from.
    pub verb_frequencies: BTreeMap<String, usize>,
}

impl SplitManifest {
    /// Novel classes are the third with the least frequent verbs in the
    /// training records.
    pub fn from_frequencies(
        dataset_id: &str,
        vocab: &Vocabulary,
        records: &[ClipRecord],
        rounding: Rounding,
    ) -> Result<Self> {
        let verb_frequencies = compute_verb_frequencies(records);
        let split = select_base_novel_split(vocab.actions(), &verb_frequencies, rounding)?;
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            base_classes: split.base,
            novel_classes: split.novel,
            splits: split_clips(records),
            verb_frequencies,
        })
    }
}

/// Non-fatal findings of [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetWarning {
    /// The manifest's verb frequencies differ from the ones recomputed from
    /// the training records.
    StaleManifest {
        recorded: BTreeMap<String, usize>,
        recomputed: BTreeMap<String, usize>,
    },
}

impl std::fmt::Display for DatasetWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::StaleManifest { recorded, recomputed } => write!(
                f,
                "stale manifest: recorded verb frequencies {recorded:?}, training records give {recomputed:?}"
            ),
        }
    }
}

/// Training-clip count per root verb, lowercased.
pub fn compute_verb_frequencies(records: &[ClipRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::Train) {
        *out.entry(r.verb.to_lowercase()).or_insert(0) += 1;
    }
    out
}

fn split_clips(records: &[ClipRecord]) -> SplitClips {
    let ids = |s: Split| {
        records
            .iter()
            .filter(|r| r.split == s)
            .map(|r| r.clip_id.clone())
            .collect()
    };
    SplitClips {
        train: ids(Split::Train),
        test: ids(Split::Test),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ClipRecord>,
    /// `rows × frames × dim`, row `i` belonging to `records[i]`.
    pub features: Array3<f64>,
    pub vocab: Vocabulary,
    pub manifest: SplitManifest,
    pub warnings: Vec<DatasetWarning>,
}

impl Dataset {
    /// Checks every cross-file invariant and recomputes verb frequencies.
    pub fn new(
        records: Vec<ClipRecord>,
        features: Array3<f64>,
        vocab: Vocabulary,
        manifest: SplitManifest,
    ) -> Result<Self> {
        let schema = |m: String| Err(AceError::SchemaError(m));
        if features.len_of(Axis(0)) != records.len() {
            return schema(format!(
                "{} feature rows for {} label rows",
                features.len_of(Axis(0)),
                records.len()
            ));
        }
        let c = vocab.len();
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.clip_id.as_str()) {
                return schema(format!("duplicate clip id {:?}", r.clip_id));
            }
            if r.label_index >= c {
                return schema(format!(
                    "clip {:?} has label_index {} but the vocabulary has {c} actions",
                    r.clip_id, r.label_index
                ));
            }
            let a = vocab.action(r.label_index);
            let given = ActionLabel::new(&r.verb, &r.object)?;
            if &given != a {
                return schema(format!(
                    "clip {:?}: label \"{given}\" does not match action {} \"{a}\"",
                    r.clip_id, r.label_index
                ));
            }
        }
        let base: BTreeSet<usize> = manifest.base_classes.iter().copied().collect();
        let novel: BTreeSet<usize> = manifest.novel_classes.iter().copied().collect();
        if let Some(i) = base.intersection(&novel).next() {
            return schema(format!("class {i} is both base and novel"));
        }
        if let Some(i) = base.iter().chain(&novel).find(|&&i| i >= c) {
            return schema(format!("manifest class {i} outside the vocabulary"));
        }
        if base.len() != manifest.base_classes.len() || novel.len() != manifest.novel_classes.len() {
            return schema("manifest class lists contain duplicates".into());
        }
        for r in &records {
            let in_base = base.contains(&r.label_index);
            if !in_base && !novel.contains(&r.label_index) {
                return schema(format!("clip {:?} has a class in neither base nor novel", r.clip_id));
            }
            if r.split == Split::Train && !in_base {
                return schema(format!("training clip {:?} belongs to a novel class", r.clip_id));
            }
        }
        if split_clips(&records) != manifest.splits {
            return schema("manifest clip lists disagree with labels.csv".into());
        }
        let recomputed = compute_verb_frequencies(&records);
        let mut warnings = Vec::new();
        if recomputed != manifest.verb_frequencies {
            let w = DatasetWarning::StaleManifest {
                recorded: manifest.verb_frequencies.clone(),
                recomputed,
            };
            log::warn!("{w}");
            warnings.push(w);
        }
        Ok(Self {
            records,
            features,
            vocab,
            manifest,
            warnings,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.len_of(Axis(1))
    }

    pub fn feature_dim(&self) -> usize {
        self.features.len_of(Axis(2))
    }

    /// Byte offset of a clip's features in `features.bin`.
    pub fn feature_offset(&self, row: usize) -> usize {
        FEATURE_HEADER_LEN + row * self.frames() * self.feature_dim() * 4
    }

    pub fn base_vocab(&self) -> Result<Vocabulary> {
        self.vocab.subset(&self.manifest.base_classes)
    }

    pub fn novel_vocab(&self) -> Result<Vocabulary> {
        self.vocab.subset(&self.manifest.novel_classes)
    }

    /// Clips of `split` whose class is in `classes`, relabelled to their
    /// position in `classes`.
    pub fn samples(&self, split: Split, classes: &[usize]) -> Vec<VideoSample> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .filter_map(|(row, r)| {
                classes
                    .iter()
                    .position(|&c| c == r.label_index)
                    .map(|label_index| VideoSample {
                        clip_id: r.clip_id.clone(),
                        features: self.features.index_axis(Axis(0), row).to_owned(),
                        label_index,
                    })
            })
            .collect()
    }

    pub fn train_samples(&self) -> Vec<VideoSample> {
        self.samples(Split::Train, &self.manifest.base_classes)
    }

    pub fn base_test_samples(&self) -> Vec<VideoSample> {
        self.samples(Split::Test, &self.manifest.base_classes)
    }

    pub fn novel_test_samples(&self) -> Vec<VideoSample> {
        self.samples(Split::Test, &self.manifest.novel_classes)
    }

    /// SHA-256 over the four dataset files as written.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(encode_features(&self.features));
        h.update(labels_csv(&self.records)?);
        h.update(self.vocab.to_json_string());
        h.update(manifest_json(&self.manifest));
        Ok(hex::encode(h.finalize()))
    }

    /// Full-vocabulary dataset from a synthetic world: base classes first,
    /// novel classes after them.
    pub fn from_synthetic(ds: &SyntheticDataset, dataset_id: &str) -> Result<Self> {
        let c = ds.base_vocab.len();
        let mut actions = ds.base_vocab.actions().to_vec();
        actions.extend(ds.novel_vocab.actions().iter().cloned());
        let mut trees = ds.base_vocab.trees().clone();
        trees.extend(ds.novel_vocab.trees().iter().map(|(k, t)| (k.clone(), t.clone())));
        let vocab = Vocabulary::new(actions, trees)?;

        let mut records = Vec::new();
        let mut blocks = Vec::new();
        let parts = [
            (&ds.train, Split::Train, 0),
            (&ds.base_test, Split::Test, 0),
            (&ds.novel_test, Split::Test, c),
        ];
        for (samples, split, shift) in parts {
            for s in samples {
                let a = vocab.action(s.label_index + shift);
                records.push(ClipRecord {
                    clip_id: s.clip_id.clone(),
                    label_index: s.label_index + shift,
                    verb: a.verb().to_string(),
                    object: a.object().to_string(),
                    split,
                });
                blocks.push(s.features.view());
            }
        }
        let features = stack_blocks(&blocks)?;
        let manifest = SplitManifest {
            dataset_id: dataset_id.to_string(),
            base_classes: (0..c).collect(),
            novel_classes: (c..vocab.len()).collect(),
            splits: split_clips(&records),
            verb_frequencies: compute_verb_frequencies(&records),
        };
        Self::new(records, features, vocab, manifest)
    }
}

fn stack_blocks(blocks: &[ndarray::ArrayView2<f64>]) -> Result<Array3<f64>> {
    let Some(first) = blocks.first() else {
        return Err(AceError::SchemaError("dataset has no clips".into()));
    };
    let (frames, dim) = first.dim();
    let mut out = Array3::zeros((blocks.len(), frames, dim));
    for (i, b) in blocks.iter().enumerate() {
        if b.dim() != (frames, dim) {
            return Err(AceError::ShapeError {
                expected: format!("{frames} x {dim} features per clip"),
                got: format!("{:?}", b.dim()),
            });
        }
        out.index_axis_mut(Axis(0), i).assign(b);
    }
    Ok(out)
}

fn ingest(path: &Path, reason: impl std::fmt::Display) -> AceError {
    AceError::IngestError {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ingest(path, e))
}

/// Serializes features as `f32`; values are rounded to single precision.
pub fn encode_features(features: &Array3<f64>) -> Vec<u8> {
    let (rows, frames, dim) = features.dim();
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + features.len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(frames as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for x in features.iter() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<Array3<f64>> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(ingest(path, "truncated header"));
    }
    if bytes[..8] != FEATURE_MAGIC {
        return Err(ingest(path, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(ingest(path, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let frames = u32_at(20) as usize;
    let dim = u32_at(24) as usize;
    let expected = rows
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| ingest(path, "header shape overflows"))?;
    let body = &bytes[FEATURE_HEADER_LEN..];
    if body.len() != expected {
        return Err(ingest(
            path,
            format!(
                "header says {rows} x {frames} x {dim} ({expected} bytes), body has {}",
                body.len()
            ),
        ));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Array3::from_shape_vec((rows, frames, dim), data).map_err(|e| ingest(path, e))
}

fn labels_csv(records: &[ClipRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| AceError::Io(e.into_error()))
}

fn manifest_json(m: &SplitManifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

/// Reads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = |f: &str| root.join(f);
    let features_path = path(FEATURES_FILE);
    let features = decode_features(&features_path, &read(&features_path)?)?;

    let labels_path = path(LABELS_FILE);
    let labels = read(&labels_path)?;
    let mut records = Vec::new();
    for row in csv::Reader::from_reader(labels.as_slice()).deserialize() {
        let r: ClipRecord = row.map_err(|e| AceError::SchemaError(format!("{}: {e}", labels_path.display())))?;
        records.push(r);
    }

    let vocab_path = path(VOCAB_FILE);
    let vocab_text = String::from_utf8(read(&vocab_path)?).map_err(|e| ingest(&vocab_path, e))?;
    let vocab = Vocabulary::from_json_str(&vocab_text)?;

    let manifest_path = path(MANIFEST_FILE);
    let manifest: SplitManifest = serde_json::from_slice(&read(&manifest_path)?)
        .map_err(|e| AceError::SchemaError(format!("{}: {e}", manifest_path.display())))?;

    Dataset::new(records, features, vocab, manifest)
}

/// Writes the four dataset files into `root`, creating it if needed.
pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(root)?;
    let files = [
        (FEATURES_FILE, encode_features(&ds.features)),
        (LABELS_FILE, labels_csv(&ds.records)?),
        (VOCAB_FILE, ds.vocab.to_json_string().into_bytes()),
        (MANIFEST_FILE, manifest_json(&ds.manifest).into_bytes()),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let p = root.join(name);
        fs::write(&p, bytes)?;
        written.push(p);
    }
    Ok(written)
}

pub fn save_encoders(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, serde_json::to_vec(params)?)?;
    Ok(())
}

pub fn load_encoders(path: &Path) -> Result<ToyEncoders> {
    let params: ParamStore = serde_json::from_slice(&read(path)?)?;
    ToyEncoders::from_params(params)
}
