//! Scaled dot-product attention over the knowledge store and the
//! per-window speaker decision built on top of it.
//!
//! For a time window with `J` candidate faces and one voice, the query
//! matrix holds `J` concatenated face/voice columns (the voice replicated
//! across all of them). Cosine similarities against every enrolled key are
//! scaled and softmaxed row-wise into an attention map; propagating the
//! keys' identity labels through that map yields, per candidate pair,
//! one confidence distribution over identities for the face half and one
//! for the voice half. Their elementwise product is the pair's confidence
//! vector: a pair only scores high for an identity that explains both its
//! face and its voice. Everything here is a closed-form pass over the
//! store; there is no trainable state.

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::pipeline::WindowQuery;
use crate::store::{dot, Identity, KnowledgeStore};

/// Query matrix: `J` concatenated pair embeddings, column-major d_key x J.
#[derive(Debug, Clone)]
pub struct QueryMatrix {
    data: Vec<f32>,
    d_key: usize,
    pairs: usize,
}

impl QueryMatrix {
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn column(&self, p: usize) -> &[f32] {
        &self.data[p * self.d_key..(p + 1) * self.d_key]
    }
}

/// Row-stochastic attention map: one row per query pair, one column per
/// enrolled key.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    scale_factor: f32,
}

impl AttentionMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale_factor(&self) -> f32 {
        self.scale_factor
    }

    pub fn row(&self, p: usize) -> &[f32] {
        &self.values[p * self.cols..(p + 1) * self.cols]
    }
}

/// Label-mass matrix: per query pair, a face-identity distribution stacked
/// on a voice-identity distribution (2N rows, one column per pair).
#[derive(Debug, Clone)]
pub struct ContextMatrix {
    face: Vec<f32>,
    voice: Vec<f32>,
    n_ids: usize,
    pairs: usize,
}

impl ContextMatrix {
    pub fn n_ids(&self) -> usize {
        self.n_ids
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    /// Face-identity confidence distribution for pair `p` (length N).
    pub fn face_column(&self, p: usize) -> &[f32] {
        &self.face[p * self.n_ids..(p + 1) * self.n_ids]
    }

    /// Voice-identity confidence distribution for pair `p` (length N).
    pub fn voice_column(&self, p: usize) -> &[f32] {
        &self.voice[p * self.n_ids..(p + 1) * self.n_ids]
    }
}

/// Per-pair confidence vector over identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfidence {
    pub pair: usize,
    pub scores: Vec<f32>,
}

/// Outcome for one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub window_index: u64,
    /// `None` means no speaker: the window had no faces or no pair cleared
    /// the confidence threshold.
    pub speaker: Option<Identity>,
    pub confidence: f32,
    pub per_pair: Vec<PairConfidence>,
}

/// Assemble the query matrix for a window: column `j` is
/// `concat(face_j, voice)`, the single voice embedding replicated.
pub fn build_query(window: &WindowQuery, store: &KnowledgeStore) -> Result<QueryMatrix, EngineError> {
    let d_face = store.config().d_face;
    let d_voice = store.config().d_voice;
    if window.voice.len() != d_voice {
        return Err(EngineError::DimensionMismatch {
            what: "voice",
            expected: d_voice,
            got: window.voice.len(),
        });
    }
    let d_key = d_face + d_voice;
    let mut data = Vec::with_capacity(d_key * window.faces.len());
    for face in &window.faces {
        if face.len() != d_face {
            return Err(EngineError::DimensionMismatch {
                what: "face",
                expected: d_face,
                got: face.len(),
            });
        }
        data.extend_from_slice(face.values());
        data.extend_from_slice(window.voice.values());
    }
    Ok(QueryMatrix {
        data,
        d_key,
        pairs: window.faces.len(),
    })
}

/// Scaled softmax of the query/key similarity matrix.
///
/// Row `p` holds softmax(sf * q_p . k_m) over all keys `m`, computed with
/// row-max subtraction and 64-bit accumulation. Each similarity is the sum
/// of the face-half and voice-half cosines, so it lives in [-2, 2].
pub fn attention_map(
    query: &QueryMatrix,
    store: &KnowledgeStore,
    scale_factor: f32,
) -> Result<AttentionMap, EngineError> {
    let m = store.num_shots();
    if m == 0 {
        return Err(EngineError::EmptyStore);
    }
    if query.d_key != store.d_key() {
        return Err(EngineError::ShapeMismatch {
            message: format!(
                "query key dim {} vs store key dim {}",
                query.d_key,
                store.d_key()
            ),
        });
    }
    let rows = query.pairs;
    let mut values = vec![0.0f32; rows * m];
    let sf = f64::from(scale_factor);
    let mut logits = vec![0.0f64; m];
    for p in 0..rows {
        let q = query.column(p);
        let mut max_logit = f64::NEG_INFINITY;
        for (col, logit) in logits.iter_mut().enumerate() {
            *logit = sf * dot(q, store.key_column(col));
            if *logit > max_logit {
                max_logit = *logit;
            }
        }
        let mut sum = 0.0f64;
        let row = &mut values[p * m..(p + 1) * m];
        for (col, &logit) in logits.iter().enumerate() {
            let e = (logit - max_logit).exp();
            sum += e;
            row[col] = e as f32;
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / sum) as f32;
        }
    }
    Ok(AttentionMap {
        values,
        rows,
        cols: m,
        scale_factor,
    })
}

/// Propagate key labels through the attention map: the context value for
/// identity `i` and pair `p` is the total attention mass of keys labeled
/// `i`, separately for the face half and the voice half.
pub fn context(store: &KnowledgeStore, map: &AttentionMap) -> Result<ContextMatrix, EngineError> {
    if map.cols != store.num_shots() {
        return Err(EngineError::ShapeMismatch {
            message: format!(
                "attention map has {} columns, store has {} shots",
                map.cols,
                store.num_shots()
            ),
        });
    }
    let n = store.num_identities();
    let pairs = map.rows;
    let mut face = vec![0.0f64; n * pairs];
    let mut voice = vec![0.0f64; n * pairs];
    for p in 0..pairs {
        let row = map.row(p);
        let face_col = &mut face[p * n..(p + 1) * n];
        let voice_col = &mut voice[p * n..(p + 1) * n];
        for (m, &(fi, vi)) in store.shot_labels().iter().enumerate() {
            let a = f64::from(row[m]);
            face_col[fi as usize] += a;
            voice_col[vi as usize] += a;
        }
    }
    Ok(ContextMatrix {
        face: face.into_iter().map(|v| v as f32).collect(),
        voice: voice.into_iter().map(|v| v as f32).collect(),
        n_ids: n,
        pairs,
    })
}

/// Elementwise product of a pair's face and voice confidence distributions.
pub fn pair_confidence(context: &ContextMatrix, pair: usize) -> Result<Vec<f32>, EngineError> {
    if pair >= context.pairs {
        return Err(EngineError::IndexOutOfRange {
            index: pair,
            len: context.pairs,
        });
    }
    Ok(context
        .face_column(pair)
        .iter()
        .zip(context.voice_column(pair))
        .map(|(&f, &v)| f * v)
        .collect())
}

/// Index of the maximum score; exact ties go to the lowest index.
pub fn tie_break(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Decide the speaker for one window using the store's default scale factor.
pub fn predict_window(
    store: &KnowledgeStore,
    window: &WindowQuery,
    tau: f32,
) -> Result<PredictionRecord, EngineError> {
    predict_window_scaled(store, window, tau, store.scale_factor())
}

/// Decide the speaker for one window.
///
/// Computes the query, attention map, context and every pair confidence
/// vector. The window confidence is the largest entry over all pairs; the
/// speaker is that entry's identity when the confidence strictly exceeds
/// `tau`, otherwise no speaker. A window with zero faces is always no
/// speaker. When several pairs reach the same maximum the later pair wins;
/// within a pair, exact ties go to the lowest identity index.
pub fn predict_window_scaled(
    store: &KnowledgeStore,
    window: &WindowQuery,
    tau: f32,
    scale_factor: f32,
) -> Result<PredictionRecord, EngineError> {
    if store.is_empty() {
        return Err(EngineError::EmptyStore);
    }
    if window.faces.is_empty() {
        return Ok(PredictionRecord {
            window_index: window.index,
            speaker: None,
            confidence: 0.0,
            per_pair: Vec::new(),
        });
    }
    let query = build_query(window, store)?;
    let map = attention_map(&query, store, scale_factor)?;
    let ctx = context(store, &map)?;

    let mut per_pair = Vec::with_capacity(query.pairs());
    let mut max_conf = 0.0f32;
    let mut winner: Option<usize> = None;
    for p in 0..query.pairs() {
        let scores = pair_confidence(&ctx, p)?;
        let best = tie_break(&scores);
        if scores[best] >= max_conf {
            max_conf = scores[best];
            winner = Some(best);
        }
        per_pair.push(PairConfidence { pair: p, scores });
    }

    let speaker = match winner {
        Some(index) if max_conf > tau => Some(Identity {
            label: store.label_of(index).unwrap_or_default().to_string(),
            index,
        }),
        _ => None,
    };
    Ok(PredictionRecord {
        window_index: window.index,
        speaker,
        confidence: max_conf,
        per_pair,
    })
}
