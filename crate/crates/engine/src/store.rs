//! Embeddings, identities and the online-updatable knowledge store.
//!
//! The store holds the entire "trained" state of the attention method: a
//! key matrix `K` of concatenated face/voice pair embeddings (one column
//! per enrolled shot) and, for every column, the pair of identity labels
//! that back the stacked one-hot value matrix `V`. Enrollment appends a
//! column; there is no fitting step of any kind.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// Tolerance used when deciding whether a vector is already unit-norm.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Vectors with a norm below this are rejected as degenerate.
pub const ZERO_NORM: f64 = 1e-12;

/// Which biometric channel an embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        }
    }
}

/// A unit-norm embedding for one modality.
///
/// Construction normalizes the raw vector. A vector whose norm is already
/// within [`NORM_TOLERANCE`] of 1 is kept bit-for-bit, which makes
/// normalization idempotent and lets files round-trip byte-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalEmbedding {
    values: Vec<f32>,
    modality: Modality,
}

impl ModalEmbedding {
    pub fn new(mut values: Vec<f32>, modality: Modality) -> Result<Self, EngineError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite {
                what: modality.name(),
            });
        }
        normalize_in_place(&mut values, modality.name())?;
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cosine similarity; both sides are unit vectors so this is a dot product.
    pub fn cosine(&self, other: &ModalEmbedding) -> f32 {
        dot(&self.values, &other.values) as f32
    }
}

/// L2-normalize, skipping vectors already within tolerance of unit norm.
fn normalize_in_place(values: &mut [f32], modality: &'static str) -> Result<(), EngineError> {
    let norm = l2_norm(values);
    if norm < ZERO_NORM {
        return Err(EngineError::ZeroVector { modality });
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        for v in values.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(())
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// A registered character: opaque label plus a dense index assigned at
/// registration. Indices are never reused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub label: String,
    pub index: usize,
}

/// One enrolled (or to-be-enrolled) shot, as it appears in knowledge files:
/// a face/voice embedding pair with one identity label per modality.
/// Vectors on disk may be un-normalized; they are normalized at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub face_id: String,
    pub voice_id: String,
    pub face: Vec<f32>,
    pub voice: Vec<f32>,
}

impl ShotRecord {
    /// A shot is "matched" when both modalities carry the same identity.
    pub fn matched(&self) -> bool {
        self.face_id == self.voice_id
    }
}

/// Store dimensions and enrollment policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub d_face: usize,
    pub d_voice: usize,
    /// When false, enrolling a shot for an unregistered label is an error.
    pub auto_register: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            d_face: 512,
            d_voice: 512,
            auto_register: true,
        }
    }
}

impl StoreConfig {
    pub fn with_dims(d_face: usize, d_voice: usize) -> Self {
        Self {
            d_face,
            d_voice,
            ..Self::default()
        }
    }

    /// Dimension of a concatenated pair key.
    pub fn d_key(&self) -> usize {
        self.d_face + self.d_voice
    }
}

/// The prior-knowledge matrices (K, V) plus the identity registry.
///
/// Keys are stored column-major: column `m` occupies
/// `keys[m * d_key .. (m + 1) * d_key]`, the face half first. Labels are
/// kept sparsely as one `(face index, voice index)` pair per column; the
/// dense stacked one-hot matrix is only materialized on demand.
///
/// Readers and the single writer are expected to be coordinated by the
/// caller (e.g. an `RwLock`); a prediction sees the store as of the moment
/// it acquired its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    config: StoreConfig,
    labels: Vec<String>,
    index_by_label: HashMap<String, usize>,
    keys: Vec<f32>,
    shot_labels: Vec<(u32, u32)>,
}

impl KnowledgeStore {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            config,
            labels: Vec::new(),
            index_by_label: HashMap::new(),
            keys: Vec::new(),
            shot_labels: Vec::new(),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn d_key(&self) -> usize {
        self.config.d_key()
    }

    /// Default softmax scale factor: sqrt of the configured key dimension.
    pub fn scale_factor(&self) -> f32 {
        (self.config.d_key() as f32).sqrt()
    }

    /// Number of registered identities (N).
    pub fn num_identities(&self) -> usize {
        self.labels.len()
    }

    /// Number of enrolled shots (M), i.e. columns of K.
    pub fn num_shots(&self) -> usize {
        self.shot_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shot_labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn identity(&self, label: &str) -> Option<Identity> {
        self.index_by_label.get(label).map(|&index| Identity {
            label: label.to_string(),
            index,
        })
    }

    pub fn label_of(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    /// Register a label, returning the existing identity when it is already
    /// known. Indices are dense and assigned in registration order.
    pub fn register_identity(&mut self, label: &str) -> Result<Identity, EngineError> {
        if label.is_empty() {
            return Err(EngineError::InvalidSpec {
                message: "identity label must be non-empty".into(),
            });
        }
        if let Some(id) = self.identity(label) {
            return Ok(id);
        }
        let index = self.labels.len();
        self.labels.push(label.to_string());
        self.index_by_label.insert(label.to_string(), index);
        Ok(Identity {
            label: label.to_string(),
            index,
        })
    }

    fn resolve_for_enroll(&mut self, label: &str) -> Result<usize, EngineError> {
        match self.index_by_label.get(label) {
            Some(&i) => Ok(i),
            None if self.config.auto_register => Ok(self.register_identity(label)?.index),
            None => Err(EngineError::UnknownIdentity {
                label: label.to_string(),
            }),
        }
    }

    /// Append one shot: normalize both halves, concatenate, store the label
    /// pair. Returns the new column's index. This is a constant-size copy;
    /// no iterative fitting happens here or anywhere downstream of it.
    pub fn enroll_shot(
        &mut self,
        face: &[f32],
        voice: &[f32],
        face_id: &str,
        voice_id: &str,
    ) -> Result<usize, EngineError> {
        if face.len() != self.config.d_face {
            return Err(EngineError::DimensionMismatch {
                what: "face",
                expected: self.config.d_face,
                got: face.len(),
            });
        }
        if voice.len() != self.config.d_voice {
            return Err(EngineError::DimensionMismatch {
                what: "voice",
                expected: self.config.d_voice,
                got: voice.len(),
            });
        }
        let face = ModalEmbedding::new(face.to_vec(), Modality::Face)?;
        let voice = ModalEmbedding::new(voice.to_vec(), Modality::Voice)?;

        let face_index = self.resolve_for_enroll(face_id)?;
        let voice_index = self.resolve_for_enroll(voice_id)?;

        let shot = self.shot_labels.len();
        self.keys.extend_from_slice(face.values());
        self.keys.extend_from_slice(voice.values());
        self.shot_labels.push((face_index as u32, voice_index as u32));
        Ok(shot)
    }

    pub fn enroll_record(&mut self, record: &ShotRecord) -> Result<usize, EngineError> {
        self.enroll_shot(&record.face, &record.voice, &record.face_id, &record.voice_id)
    }

    /// Key matrix as a flat column-major slice (d_key x M).
    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn key_column(&self, m: usize) -> &[f32] {
        let d = self.d_key();
        &self.keys[m * d..(m + 1) * d]
    }

    /// Sparse labels: one (face index, voice index) pair per key column.
    pub fn shot_labels(&self) -> &[(u32, u32)] {
        &self.shot_labels
    }

    /// Dense stacked one-hot value matrix, column-major 2N x M: rows 0..N
    /// carry the face identity, rows N..2N the voice identity.
    pub fn materialize_value_matrix(&self) -> Vec<f32> {
        let n = self.num_identities();
        let m = self.num_shots();
        let mut v = vec![0.0f32; 2 * n * m];
        for (col, &(fi, vi)) in self.shot_labels.iter().enumerate() {
            v[col * 2 * n + fi as usize] = 1.0;
            v[col * 2 * n + n + vi as usize] = 1.0;
        }
        v
    }

    /// Memory footprint of the prior knowledge: dense 32-bit keys plus two
    /// 32-bit label indices per shot.
    pub fn parameter_count_bytes(&self) -> u64 {
        let m = self.num_shots() as u64;
        m * self.d_key() as u64 * 4 + m * 2 * 4
    }

    pub fn parameter_count_kb(&self) -> f64 {
        self.parameter_count_bytes() as f64 / 1024.0
    }

    /// Shots per identity (an identity is counted once per shot it appears
    /// in, on either side of the pair). Sorted by identity index.
    pub fn shot_counts(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.num_identities()];
        for &(fi, vi) in &self.shot_labels {
            counts[fi as usize] += 1;
            if fi != vi {
                counts[vi as usize] += 1;
            }
        }
        self.labels
            .iter()
            .cloned()
            .zip(counts)
            .collect()
    }

    pub fn shot_record(&self, m: usize) -> ShotRecord {
        let (fi, vi) = self.shot_labels[m];
        let col = self.key_column(m);
        ShotRecord {
            face_id: self.labels[fi as usize].clone(),
            voice_id: self.labels[vi as usize].clone(),
            face: col[..self.config.d_face].to_vec(),
            voice: col[self.config.d_face..].to_vec(),
        }
    }

    /// Serialize as JSON Lines, one shot per line, LF endings.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in 0..self.num_shots() {
            // unwrap: ShotRecord contains only finite f32 and strings
            out.push_str(&serde_json::to_string(&self.shot_record(m)).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), EngineError> {
        w.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Parse a knowledge file. Identities are registered in order of first
    /// appearance (face label first, then voice label, line by line).
    /// Dimensions come from `config` when given, otherwise from the first
    /// record. An empty input yields an empty store with default dims.
    pub fn from_jsonl_reader<R: BufRead>(
        reader: R,
        config: Option<StoreConfig>,
    ) -> Result<Self, EngineError> {
        let mut store: Option<KnowledgeStore> = config.map(KnowledgeStore::new);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let record: ShotRecord =
                serde_json::from_str(&line).map_err(|e| EngineError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let store = store.get_or_insert_with(|| {
                KnowledgeStore::new(StoreConfig::with_dims(
                    record.face.len(),
                    record.voice.len(),
                ))
            });
            store.enroll_record(&record).map_err(|e| match e {
                EngineError::DimensionMismatch { what, expected, got } => EngineError::Parse {
                    line: i + 1,
                    message: format!("{what} dimension {got}, expected {expected}"),
                },
                other => other,
            })?;
        }
        Ok(store.unwrap_or_else(|| KnowledgeStore::new(StoreConfig::default())))
    }

    pub fn from_jsonl_str(text: &str, config: Option<StoreConfig>) -> Result<Self, EngineError> {
        Self::from_jsonl_reader(std::io::Cursor::new(text), config)
    }

    pub fn load(path: &Path, config: Option<StoreConfig>) -> Result<Self, EngineError> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl_reader(std::io::BufReader::new(file), config)
    }

    /// Write the knowledge file atomically: temp file in the same directory,
    /// then rename over the target.
    pub fn save_atomic(&self, path: &Path) -> Result<(), EngineError> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Atomic file write used for every knowledge/CSV artifact the engine owns.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), EngineError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp.{}",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            std::process::id()
        )),
        None => Path::new(&format!(".atomic.tmp.{}", std::process::id())).to_path_buf(),
    };
    std::fs::write(&tmp, contents)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}
