//! Wire types for the HTTP API. Engine types (shot records, prediction
//! records, evaluation reports, bench rows) travel as-is; these are the
//! request/response envelopes around them.

use serde::{Deserialize, Serialize};

use attnamer_engine::bench::BenchRow;

/// Error payload carried by non-2xx responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ApiErrorBody,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateStoreRequest {
    #[serde(default)]
    pub d_face: Option<usize>,
    #[serde(default)]
    pub d_voice: Option<usize>,
    #[serde(default)]
    pub auto_register: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreSummary {
    pub store_id: String,
    pub d_face: usize,
    pub d_voice: usize,
    pub n_identities: usize,
    pub n_shots: usize,
    pub params_bytes: u64,
    pub params_kb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityShots {
    pub label: String,
    pub index: usize,
    pub shots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreDetail {
    #[serde(flatten)]
    pub summary: StoreSummary,
    pub identities: Vec<IdentityShots>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterIdentityRequest {
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollShotsResponse {
    pub enrolled: usize,
    pub n_identities: usize,
    pub n_shots: usize,
    pub params_bytes: u64,
    pub params_kb: f64,
    pub shot_counts: Vec<IdentityShots>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub faces: Vec<Vec<f32>>,
    pub voice: Vec<f32>,
    #[serde(default)]
    pub tau: Option<f32>,
    #[serde(default)]
    pub scale_factor: Option<f32>,
}

/// Evaluation of one method against a store session's knowledge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreEvalRequest {
    /// Manifest document, JSON Lines.
    pub manifest: String,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub tau: Option<f32>,
    #[serde(default)]
    pub factor: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub accounting: Option<String>,
}

/// Stateless evaluation over posted documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDocRequest {
    /// Knowledge document, JSON Lines.
    pub knowledge: String,
    pub manifest: String,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub tau: Option<f32>,
    #[serde(default)]
    pub factor: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub accounting: Option<String>,
}

/// Stateless enrollment: append additions to a knowledge document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollDocRequest {
    /// Existing knowledge document; empty string for a fresh store.
    #[serde(default)]
    pub knowledge: String,
    /// Shots to append, JSON Lines.
    pub additions: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollDocResponse {
    /// The updated knowledge document.
    pub knowledge: String,
    pub n_identities: usize,
    pub n_shots: usize,
    pub params_bytes: u64,
    pub params_kb: f64,
    pub shot_counts: Vec<IdentityShots>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchRequest {
    #[serde(default)]
    pub grid_ids: Option<Vec<usize>>,
    #[serde(default)]
    pub grid_shots: Option<Vec<usize>>,
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub d_face: Option<usize>,
    #[serde(default)]
    pub d_voice: Option<usize>,
    #[serde(default)]
    pub noise: Option<f32>,
    #[serde(default)]
    pub queries_per_id: Option<usize>,
    #[serde(default)]
    pub tau: Option<f32>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    /// Worker cap for cell evaluation. Setup timing keeps cells serial
    /// regardless, so this is accepted for interface stability.
    #[serde(default)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResponse {
    /// CSV document: header plus one row per completed cell (a failed
    /// cell's row is annotated in its error column).
    pub csv: String,
    pub rows: Vec<BenchRow>,
    /// Present when a cell failed; rows up to the failure are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiErrorBody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRequest {
    pub n_ids: usize,
    pub shots_per_id: usize,
    #[serde(default)]
    pub d_face: Option<usize>,
    #[serde(default)]
    pub d_voice: Option<usize>,
    #[serde(default)]
    pub face_noise: Option<f32>,
    #[serde(default)]
    pub voice_noise: Option<f32>,
    #[serde(default)]
    pub distractor_ratio: Option<(u32, u32)>,
    #[serde(default)]
    pub queries_per_id: Option<usize>,
    #[serde(default)]
    pub max_centroid_cos: Option<f32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthResponse {
    pub knowledge: String,
    pub manifest: String,
    pub n_identities: usize,
    pub n_shots: usize,
    pub n_windows: usize,
}
