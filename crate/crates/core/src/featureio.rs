//! Feature, label and manifest files, fixed-length segmentation and batching.
//!
//! Feature file layout (little-endian):
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 4     | magic `RPCF`                  |
//! | 4     | version `u32` = 1             |
//! | 4     | dim `H` (`u32`)               |
//! | 4     | frames `T` (`u32`)            |
//! | 4·T·H | `f32` values, frame-major     |
//!
//! Label files are UTF-8 text, one utterance per line:
//! `<utterance_id> <label> <label> ...`. Manifests list one feature-file path
//! per line, optionally followed by a tab and a label-file path.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numkernel::Rng;
use crate::tensor::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"RPCF";
pub const FEATURE_VERSION: u32 = 1;
pub const DEFAULT_SEGMENT_LEN: usize = 96;

/// A `T × H` sequence of feature frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSequence {
    pub utterance_id: String,
    pub frames: Matrix<f32>,
}

impl RepresentationSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Matrix<f32>) -> Result<Self> {
        let seq = Self {
            utterance_id: utterance_id.into(),
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rows() == 0 {
            return Err(Error::Data(format!(
                "utterance {} has no frames",
                self.utterance_id
            )));
        }
        if self.frames.cols() == 0 {
            return Err(Error::Data(format!(
                "utterance {} has zero-dimensional frames",
                self.utterance_id
            )));
        }
        if let Some(t) = self
            .frames
            .iter_rows()
            .position(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data(format!(
                "utterance {}: non-finite value in frame {t}",
                self.utterance_id
            )));
        }
        Ok(())
    }
}

/// Utterance id used for a feature file: its file stem.
pub fn utterance_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn encode_feature_bytes(seq: &RepresentationSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let (t, h) = seq.frames.shape();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(16 + 4 * t * h);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(h, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(t, "frame count")?.to_le_bytes());
    for v in seq.frames.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_bytes(bytes: &[u8], utterance_id: &str) -> Result<RepresentationSequence> {
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!(
            "feature file {utterance_id}: {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "feature file {utterance_id}: bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "feature file {utterance_id}: unsupported version {version}"
        )));
    }
    let h = word(8) as usize;
    let t = word(12) as usize;
    let expected = t
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::Corrupt(format!("feature file {utterance_id}: header overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "feature file {utterance_id}: header promises {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RepresentationSequence::new(utterance_id, Matrix::from_vec(t, h, data)?)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<RepresentationSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_bytes(&bytes, &utterance_id_for(path))
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &RepresentationSequence) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_bytes(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-frame phoneme (or other class) ids for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub labels: Vec<u32>,
    pub alphabet_size: u32,
}

impl FrameLabels {
    pub fn new(labels: Vec<u32>, alphabet_size: u32) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::Config("label alphabet size must be positive".into()));
        }
        if let Some((t, l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= alphabet_size)
        {
            return Err(Error::Data(format!(
                "label {l} at frame {t} is outside alphabet of size {alphabet_size}"
            )));
        }
        Ok(Self {
            labels,
            alphabet_size,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parses every line of a label file into raw label vectors keyed by utterance id.
pub fn parse_label_text(text: &str) -> Result<BTreeMap<String, Vec<u32>>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else {
            continue;
        };
        let labels = fields
            .map(|f| {
                f.parse::<u32>().map_err(|_| {
                    Error::Data(format!("label line {}: {f:?} is not a label", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(id.to_string(), labels).is_some() {
            return Err(Error::Data(format!("utterance {id} labelled twice")));
        }
    }
    Ok(out)
}

/// Reads all utterances of a label file, validating against `alphabet_size`.
pub fn read_label_map(
    path: impl AsRef<Path>,
    alphabet_size: u32,
) -> Result<BTreeMap<String, FrameLabels>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_text(&text)?
        .into_iter()
        .map(|(id, labels)| {
            let labels = FrameLabels::new(labels, alphabet_size)
                .map_err(|e| Error::Data(format!("utterance {id}: {e}")))?;
            Ok((id, labels))
        })
        .collect()
}

pub fn read_label_file(
    path: impl AsRef<Path>,
    utterance_id: &str,
    alphabet_size: u32,
) -> Result<FrameLabels> {
    let path = path.as_ref();
    read_label_map(path, alphabet_size)?
        .remove(utterance_id)
        .ok_or_else(|| {
            Error::Data(format!(
                "no labels for utterance {utterance_id} in {}",
                path.display()
            ))
        })
}

pub fn write_label_file<'a>(
    path: impl AsRef<Path>,
    utterances: impl IntoIterator<Item = (&'a str, &'a FrameLabels)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (id, labels) in utterances {
        text.push_str(id);
        for l in &labels.labels {
            text.push(' ');
            text.push_str(&l.to_string());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Reads a manifest. Relative paths resolve against the manifest's directory;
/// blank lines and `#` comments are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p.trim());
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|line| {
            let mut parts = line.splitn(2, '\t');
            let features = resolve(parts.next().unwrap_or_default());
            let labels = parts.next().filter(|s| !s.trim().is_empty()).map(resolve);
            ManifestEntry { features, labels }
        })
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.features.to_string_lossy());
        if let Some(l) = &e.labels {
            text.push('\t');
            text.push_str(&l.to_string_lossy());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads every feature file of a manifest, requiring a single shared dimension.
pub fn load_corpus(manifest: impl AsRef<Path>) -> Result<Vec<RepresentationSequence>> {
    let entries = read_manifest(manifest.as_ref())?;
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} lists no feature files",
            manifest.as_ref().display()
        )));
    }
    let seqs = entries
        .iter()
        .map(|e| read_feature_file(&e.features))
        .collect::<Result<Vec<_>>>()?;
    corpus_dim(&seqs)?;
    Ok(seqs)
}

/// The dimension shared by every sequence.
pub fn corpus_dim(seqs: &[RepresentationSequence]) -> Result<usize> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Config("empty corpus".into()))?;
    for s in seqs {
        if s.dim() != first.dim() {
            return Err(Error::Data(format!(
                "utterance {} has dimension {}, {} has {}",
                s.utterance_id,
                s.dim(),
                first.utterance_id,
                first.dim()
            )));
        }
    }
    Ok(first.dim())
}

/// A fixed-length window of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub source_id: String,
    pub start_frame: usize,
    pub frames: Matrix<f32>,
}

/// Consecutive non-overlapping windows of `len` frames; a shorter tail is dropped.
pub fn segment_sequence(seq: &RepresentationSequence, len: usize) -> Result<Vec<Segment>> {
    if len == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    Ok((0..seq.len() / len)
        .map(|i| Segment {
            source_id: seq.utterance_id.clone(),
            start_frame: i * len,
            frames: seq.frames.slice_rows(i * len, (i + 1) * len),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub segments: Vec<Segment>,
}

impl Batch {
    pub fn dim(&self) -> Option<usize> {
        self.segments.first().map(|s| s.frames.cols())
    }

    pub fn frame_count(&self) -> usize {
        self.segments.iter().map(|s| s.frames.rows()).sum()
    }
}

/// Seeded shuffle of `0..count` cut into full groups of `batch_size`; the
/// partial tail is dropped.
pub fn shuffled_batch_indices(
    count: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if count < batch_size {
        return Err(Error::Config(format!(
            "{count} segments cannot fill a batch of {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    rng.shuffle(&mut order);
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

pub fn make_batches(segments: &[Segment], batch_size: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
    if let Some(first) = segments.first() {
        if let Some(bad) = segments.iter().find(|s| s.frames.cols() != first.frames.cols()) {
            return Err(Error::Data(format!(
                "segment of {} has dimension {}, expected {}",
                bad.source_id,
                bad.frames.cols(),
                first.frames.cols()
            )));
        }
    }
    Ok(shuffled_batch_indices(segments.len(), batch_size, rng)?
        .into_iter()
        .map(|idx| Batch {
            segments: idx.into_iter().map(|i| segments[i].clone()).collect(),
        })
        .collect())
}
