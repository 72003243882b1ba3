//! Blocking HTTP client for the speaker-naming service.
//!
//! Every engine operation the service exposes has a typed method here; the
//! CLI is built entirely on this surface.

pub mod types;

/// Engine re-export so clients can name the wire payload types without a
/// direct dependency.
pub use attnamer_engine as engine;

use attnamer_engine::attention::PredictionRecord;
use attnamer_engine::metrics::EvalReport;
use attnamer_engine::store::{Identity, ShotRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use types::*;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error payload.
    #[error("{} (kind: {})", .body.message, .body.kind)]
    Api { status: u16, body: ApiErrorBody },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Machine-readable error tag when the service reported one.
    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.kind),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ClientError::Api { body, .. } => body.line,
            _ => None,
        }
    }
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    /// `base` like `http://127.0.0.1:8787`.
    pub fn new(base: impl Into<String>) -> Self {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        Self {
            base,
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(
        &self,
        result: Result<ureq::Response, ureq::Error>,
    ) -> Result<T, ClientError> {
        match result {
            Ok(response) => response
                .into_json::<T>()
                .map_err(|e| ClientError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, response)) => {
                let body = response
                    .into_json::<ErrorResponse>()
                    .map(|e| e.error)
                    .unwrap_or_else(|e| ApiErrorBody {
                        kind: "unknown".into(),
                        message: format!("undecodable error body: {e}"),
                        line: None,
                    });
                Err(ClientError::Api { status, body })
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.decode(self.agent.get(&self.url(path)).call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let value = serde_json::to_value(body).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.decode(self.agent.post(&self.url(path)).send_json(value))
    }

    pub fn health(&self) -> Result<(), ClientError> {
        let _: serde_json::Value = self.get("/healthz")?;
        Ok(())
    }

    pub fn create_store(&self, req: &CreateStoreRequest) -> Result<StoreSummary, ClientError> {
        self.post("/v1/stores", req)
    }

    pub fn list_stores(&self) -> Result<Vec<StoreSummary>, ClientError> {
        self.get("/v1/stores")
    }

    pub fn store_detail(&self, store_id: &str) -> Result<StoreDetail, ClientError> {
        self.get(&format!("/v1/stores/{store_id}"))
    }

    pub fn delete_store(&self, store_id: &str) -> Result<(), ClientError> {
        let _: serde_json::Value = self.decode(
            self.agent
                .delete(&self.url(&format!("/v1/stores/{store_id}")))
                .call(),
        )?;
        Ok(())
    }

    pub fn register_identity(&self, store_id: &str, label: &str) -> Result<Identity, ClientError> {
        self.post(
            &format!("/v1/stores/{store_id}/identities"),
            &RegisterIdentityRequest {
                label: label.to_string(),
            },
        )
    }

    /// Append shots to a live store; records use the knowledge-file schema.
    pub fn enroll_shots(
        &self,
        store_id: &str,
        shots: &[ShotRecord],
    ) -> Result<EnrollShotsResponse, ClientError> {
        self.post(&format!("/v1/stores/{store_id}/shots"), &shots)
    }

    /// The store's knowledge document (JSON Lines).
    pub fn export_knowledge(&self, store_id: &str) -> Result<String, ClientError> {
        match self
            .agent
            .get(&self.url(&format!("/v1/stores/{store_id}/knowledge")))
            .call()
        {
            Ok(response) => response
                .into_string()
                .map_err(|e| ClientError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, response)) => {
                let body = response
                    .into_json::<ErrorResponse>()
                    .map(|e| e.error)
                    .unwrap_or_else(|e| ApiErrorBody {
                        kind: "unknown".into(),
                        message: e.to_string(),
                        line: None,
                    });
                Err(ClientError::Api { status, body })
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    pub fn predict(
        &self,
        store_id: &str,
        req: &PredictRequest,
    ) -> Result<PredictionRecord, ClientError> {
        self.post(&format!("/v1/stores/{store_id}/predict"), req)
    }

    pub fn eval_store(
        &self,
        store_id: &str,
        req: &StoreEvalRequest,
    ) -> Result<EvalReport, ClientError> {
        self.post(&format!("/v1/stores/{store_id}/eval"), req)
    }

    pub fn eval(&self, req: &EvalDocRequest) -> Result<EvalReport, ClientError> {
        self.post("/v1/eval", req)
    }

    pub fn enroll(&self, req: &EnrollDocRequest) -> Result<EnrollDocResponse, ClientError> {
        self.post("/v1/enroll", req)
    }

    pub fn bench(&self, req: &BenchRequest) -> Result<BenchResponse, ClientError> {
        self.post("/v1/bench", req)
    }

    pub fn synth(&self, req: &SynthRequest) -> Result<SynthResponse, ClientError> {
        self.post("/v1/synth", req)
    }
}
