//! Windowed evaluation: manifest ingestion, per-window prediction over a
//! store snapshot, and majority-vote aggregation into larger windows.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{predict_window_scaled, PredictionRecord};
use crate::error::EngineError;
use crate::store::{KnowledgeStore, ModalEmbedding, Modality};

/// Base time-window length in seconds.
pub const DEFAULT_BASE_WINDOW: f64 = 0.5;

/// One base time window: the candidate faces seen in it, the single voice
/// heard in it, and an optional ground-truth speaker label.
///
/// `ground_truth: None` marks a window with no active speaker (a
/// distractor). A label that is not registered in the store also scores as
/// a distractor: the correct answer for it is "no speaker".
#[derive(Debug, Clone)]
pub struct WindowQuery {
    pub index: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub faces: Vec<ModalEmbedding>,
    pub voice: ModalEmbedding,
    pub ground_truth: Option<String>,
}

impl WindowQuery {
    /// Ground truth resolved against a store: the registered identity index
    /// expected to be named, or `None` when the right answer is no speaker.
    pub fn expected_index(&self, store: &KnowledgeStore) -> Option<usize> {
        self.ground_truth
            .as_deref()
            .and_then(|label| store.identity(label))
            .map(|id| id.index)
    }

    /// True when the window carries a ground-truth label registered in the
    /// store, i.e. it is a matched-pair query for accuracy purposes.
    pub fn is_matched(&self, store: &KnowledgeStore) -> bool {
        self.expected_index(store).is_some()
    }
}

/// On-disk manifest line. Embeddings may be un-normalized in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub window: u64,
    pub t_start: f64,
    pub faces: Vec<Vec<f32>>,
    pub voice: Vec<f32>,
    pub gt: Option<String>,
}

/// An ordered sequence of non-overlapping base windows.
#[derive(Debug, Clone)]
pub struct WindowStream {
    pub base_window: f64,
    pub windows: Vec<WindowQuery>,
}

impl WindowStream {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Serialize as JSON Lines, one base window per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for w in &self.windows {
            let record = ManifestRecord {
                window: w.index,
                t_start: w.t_start,
                faces: w.faces.iter().map(|f| f.values().to_vec()).collect(),
                voice: w.voice.values().to_vec(),
                gt: w.ground_truth.clone(),
            };
            out.push_str(&serde_json::to_string(&record).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Parse a manifest. Embeddings are normalized per modality; window indices
/// must be strictly increasing. An empty file is an empty stream.
pub fn load_manifest_reader<R: BufRead>(reader: R) -> Result<WindowStream, EngineError> {
    let mut windows: Vec<WindowQuery> = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| EngineError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let (d_face, d_voice) = *dims.get_or_insert((
            record.faces.first().map(Vec::len).unwrap_or(0),
            record.voice.len(),
        ));
        if record.voice.len() != d_voice {
            return Err(EngineError::Parse {
                line: lineno,
                message: format!("voice dimension {}, expected {d_voice}", record.voice.len()),
            });
        }
        let mut faces = Vec::with_capacity(record.faces.len());
        for face in &record.faces {
            if d_face != 0 && face.len() != d_face {
                return Err(EngineError::Parse {
                    line: lineno,
                    message: format!("face dimension {}, expected {d_face}", face.len()),
                });
            }
            faces.push(ModalEmbedding::new(face.clone(), Modality::Face)?);
        }
        if let Some(prev) = windows.last() {
            if record.window <= prev.index {
                return Err(EngineError::Parse {
                    line: lineno,
                    message: format!(
                        "window index {} not greater than previous {}",
                        record.window, prev.index
                    ),
                });
            }
        }
        windows.push(WindowQuery {
            index: record.window,
            t_start: record.t_start,
            t_end: record.t_start + DEFAULT_BASE_WINDOW,
            faces,
            voice: ModalEmbedding::new(record.voice, Modality::Voice)?,
            ground_truth: record.gt,
        });
    }
    Ok(WindowStream {
        base_window: DEFAULT_BASE_WINDOW,
        windows,
    })
}

pub fn load_manifest_str(text: &str) -> Result<WindowStream, EngineError> {
    load_manifest_reader(std::io::Cursor::new(text))
}

pub fn load_manifest(path: &Path) -> Result<WindowStream, EngineError> {
    let file = std::fs::File::open(path)?;
    load_manifest_reader(std::io::BufReader::new(file))
}

/// Predict every window in order against one store snapshot.
pub fn run_stream(
    store: &KnowledgeStore,
    stream: &WindowStream,
    tau: f32,
) -> Result<Vec<PredictionRecord>, EngineError> {
    run_stream_scaled(store, stream, tau, store.scale_factor())
}

pub fn run_stream_scaled(
    store: &KnowledgeStore,
    stream: &WindowStream,
    tau: f32,
    scale_factor: f32,
) -> Result<Vec<PredictionRecord>, EngineError> {
    stream
        .windows
        .iter()
        .map(|w| predict_window_scaled(store, w, tau, scale_factor))
        .collect()
}

/// Majority-vote result over a group of consecutive base windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPrediction {
    pub first_window: u64,
    pub last_window: u64,
    /// Vote counts keyed by speaker label; the empty key counts
    /// no-speaker votes.
    pub votes: BTreeMap<String, usize>,
    pub winner: Option<String>,
}

/// Group consecutive records `factor` at a time and take a majority vote.
/// No-speaker is a first-class vote. Ties go to the candidate with the
/// greater summed confidence, then to the lower identity index, with
/// no-speaker ordered after every identity. A trailing partial group still
/// votes among its members.
pub fn aggregate(records: &[PredictionRecord], factor: usize) -> Vec<AggregatedPrediction> {
    let factor = factor.max(1);
    records
        .chunks(factor)
        .map(|group| {
            // candidate -> (count, summed confidence, identity index)
            let mut tally: BTreeMap<Option<String>, (usize, f64, usize)> = BTreeMap::new();
            for rec in group {
                let (key, index) = match &rec.speaker {
                    Some(id) => (Some(id.label.clone()), id.index),
                    None => (None, usize::MAX),
                };
                let entry = tally.entry(key).or_insert((0, 0.0, index));
                entry.0 += 1;
                entry.1 += f64::from(rec.confidence);
            }
            let winner = tally
                .iter()
                .max_by(|(_, a), (_, b)| {
                    (a.0, a.1, std::cmp::Reverse(a.2))
                        .partial_cmp(&(b.0, b.1, std::cmp::Reverse(b.2)))
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .and_then(|(label, _)| label.clone());
            let votes = tally
                .into_iter()
                .map(|(label, (count, _, _))| (label.unwrap_or_default(), count))
                .collect();
            AggregatedPrediction {
                first_window: group.first().map(|r| r.window_index).unwrap_or(0),
                last_window: group.last().map(|r| r.window_index).unwrap_or(0),
                votes,
                winner,
            }
        })
        .collect()
}

/// Majority vote over ground-truth labels, mirroring the prediction-side
/// rules (count, then lower index, no-speaker last) so aggregated
/// predictions can be scored against aggregated truth.
pub fn aggregate_expected(
    stream: &WindowStream,
    store: &KnowledgeStore,
    factor: usize,
) -> Vec<Option<usize>> {
    let factor = factor.max(1);
    stream
        .windows
        .chunks(factor)
        .map(|group| {
            let mut tally: BTreeMap<Option<usize>, usize> = BTreeMap::new();
            for w in group {
                *tally.entry(w.expected_index(store)).or_insert(0) += 1;
            }
            tally
                .into_iter()
                .max_by_key(|&(idx, count)| (count, std::cmp::Reverse(idx.unwrap_or(usize::MAX))))
                .and_then(|(idx, _)| idx)
        })
        .collect()
}
