//! Evaluation metrics and setup-time measurement.
//!
//! `mpa` scores identification on matched-pair queries only; `sna` scores
//! every window, counting a correct no-speaker on distractors. Setup time
//! is what it costs to make a method ready after the data changes: an
//! enrollment copy for the attention method, a training run for the
//! gradient baselines. Timings use a monotone clock and report the median
//! of at least three repetitions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::PredictionRecord;
use crate::baselines::{
    predict_window_baseline, train_lwf_increment, train_tfs, BaselineModel, BranchedModel,
    LabeledDataset, TrainConfig,
};
use crate::error::EngineError;
use crate::pipeline::{aggregate, aggregate_expected, run_stream_scaled, WindowStream};
use crate::store::{KnowledgeStore, ShotRecord, StoreConfig};

/// Identification method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Att,
    Tfs,
    Lwf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Att => "att",
            Method::Tfs => "tfs",
            Method::Lwf => "lwf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "att" => Some(Method::Att),
            "tfs" => Some(Method::Tfs),
            "lwf" => Some(Method::Lwf),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Matching-pair accuracy: exact-match percentage over paired lists.
pub fn mpa<T: PartialEq>(predictions: &[T], ground_truth: &[T]) -> Result<f64, EngineError> {
    if predictions.len() != ground_truth.len() {
        return Err(EngineError::LengthMismatch {
            left: predictions.len(),
            right: ground_truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let correct = predictions
        .iter()
        .zip(ground_truth)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predictions.len() as f64 * 100.0)
}

/// Speaker-naming accuracy: like [`mpa`] but over optional labels, so a
/// correct rejection (`None` vs `None`) counts as a hit.
pub fn sna<T: PartialEq>(
    predictions: &[Option<T>],
    ground_truth: &[Option<T>],
) -> Result<f64, EngineError> {
    mpa(predictions, ground_truth)
}

/// What the setup timer covers. Inclusive counts loading the raw records
/// into memory; exclusive times only the enrollment copy / training loop
/// over pre-built inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    Inclusive,
    Exclusive,
}

/// Settings for [`measure_setup`].
#[derive(Debug, Clone)]
pub struct SetupOptions {
    pub d_face: usize,
    pub d_voice: usize,
    pub train: TrainConfig,
    /// Clamped to at least 3; the median is reported.
    pub repetitions: usize,
    pub accounting: Accounting,
}

impl SetupOptions {
    pub fn new(d_face: usize, d_voice: usize, train: TrainConfig) -> Self {
        Self {
            d_face,
            d_voice,
            train,
            repetitions: 3,
            accounting: Accounting::Inclusive,
        }
    }
}

/// Artifact produced by a setup run.
pub enum SetupArtifact {
    Att(KnowledgeStore),
    Tfs(BaselineModel),
    Lwf(BaselineModel),
}

fn median_seconds(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

fn time_repeated<T>(reps: usize, mut run: impl FnMut() -> Result<T, EngineError>) -> Result<(T, f64), EngineError> {
    let reps = reps.max(3);
    let mut samples = Vec::with_capacity(reps);
    let mut artifact = None;
    for _ in 0..reps {
        let start = Instant::now();
        let out = run()?;
        samples.push(start.elapsed().as_secs_f64());
        artifact = Some(out);
    }
    Ok((artifact.unwrap(), median_seconds(samples)))
}

/// Wall-clock cost to make `method` ready on `shots`.
///
/// For the attention method this is loading the shots into the key/value
/// store (a normalization and a copy; no data-dependent iteration). For
/// the gradient methods it is data loading plus the full training loop.
/// `lwf_base` carries the existing branched model for an increment; when
/// absent a fresh trunk is created (and not timed, matching its role as a
/// pretrained component).
pub fn measure_setup(
    method: Method,
    shots: &[ShotRecord],
    lwf_base: Option<&BranchedModel>,
    opts: &SetupOptions,
) -> Result<(SetupArtifact, f64), EngineError> {
    if shots.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let d_key = opts.d_face + opts.d_voice;
    match method {
        Method::Att => {
            let prepared: Vec<ShotRecord> = match opts.accounting {
                Accounting::Inclusive => shots.to_vec(),
                Accounting::Exclusive => {
                    // pre-normalize outside the timer
                    let mut store =
                        KnowledgeStore::new(StoreConfig::with_dims(opts.d_face, opts.d_voice));
                    for s in shots {
                        store.enroll_record(s)?;
                    }
                    (0..store.num_shots()).map(|m| store.shot_record(m)).collect()
                }
            };
            let (store, secs) = time_repeated(opts.repetitions, || {
                let mut store =
                    KnowledgeStore::new(StoreConfig::with_dims(opts.d_face, opts.d_voice));
                for s in &prepared {
                    store.enroll_record(s)?;
                }
                Ok(store)
            })?;
            Ok((SetupArtifact::Att(store), secs))
        }
        Method::Tfs => {
            let prebuilt = match opts.accounting {
                Accounting::Inclusive => None,
                Accounting::Exclusive => {
                    Some(LabeledDataset::from_shots(shots, opts.d_face, opts.d_voice)?)
                }
            };
            let (model, secs) = time_repeated(opts.repetitions, || {
                let dataset = match &prebuilt {
                    Some(d) => d.clone(),
                    None => LabeledDataset::from_shots(shots, opts.d_face, opts.d_voice)?,
                };
                train_tfs(&dataset, &opts.train)
            })?;
            Ok((SetupArtifact::Tfs(BaselineModel::Linear(model)), secs))
        }
        Method::Lwf => {
            let base = match lwf_base {
                Some(b) => b.clone(),
                None => BranchedModel::new(d_key, &opts.train),
            };
            let prebuilt = match opts.accounting {
                Accounting::Inclusive => None,
                Accounting::Exclusive => {
                    Some(LabeledDataset::from_shots(shots, opts.d_face, opts.d_voice)?)
                }
            };
            let (model, secs) = time_repeated(opts.repetitions, || {
                let dataset = match &prebuilt {
                    Some(d) => d.clone(),
                    None => LabeledDataset::from_shots(shots, opts.d_face, opts.d_voice)?,
                };
                train_lwf_increment(base.clone(), &dataset, &opts.train)
            })?;
            Ok((SetupArtifact::Lwf(BaselineModel::Branched(model)), secs))
        }
    }
}

/// One evaluation run's outcome, emitted as JSON and as a CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Matched-pair accuracy over base windows with a registered
    /// ground-truth label; absent when the stream has none.
    pub mpa: Option<f64>,
    /// Speaker-naming accuracy over all windows at the evaluation factor.
    pub sna: f64,
    pub params_kb: f64,
    pub setup_time_s: f64,
    pub n_ids: usize,
    pub n_shots: usize,
    pub d_key: usize,
    pub tau: f32,
    pub window_factor: usize,
    pub base_windows: usize,
    pub aggregated_windows: usize,
    pub trained_epochs: Option<u32>,
    pub converged: Option<bool>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,n_ids,n_shots,d_key,tau,window_factor,mpa,sna,params_kb,setup_time_s,trained_epochs,converged";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.6},{},{}",
            self.method,
            self.n_ids,
            self.n_shots,
            self.d_key,
            self.tau,
            self.window_factor,
            self.mpa.map(|v| format!("{v:.4}")).unwrap_or_default(),
            self.sna,
            self.params_kb,
            self.setup_time_s,
            self.trained_epochs.map(|v| v.to_string()).unwrap_or_default(),
            self.converged.map(|v| v.to_string()).unwrap_or_default(),
        )
    }
}

/// Evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub method: Method,
    pub tau: f32,
    pub window_factor: usize,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub accounting: Accounting,
    pub scale_factor: Option<f32>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            method: Method::Att,
            tau: 0.25,
            window_factor: 1,
            train: TrainConfig::default(),
            repetitions: 3,
            accounting: Accounting::Inclusive,
            scale_factor: None,
        }
    }
}

/// Evaluate one method against a store and a window stream.
///
/// Predictions run per base window; `sna` is scored after majority-vote
/// aggregation at `window_factor`, `mpa` on the matched base windows.
pub fn evaluate(
    store: &KnowledgeStore,
    stream: &WindowStream,
    opts: &EvalOptions,
) -> Result<EvalReport, EngineError> {
    if store.is_empty() {
        return Err(EngineError::EmptyStore);
    }
    let shots: Vec<ShotRecord> = (0..store.num_shots()).map(|m| store.shot_record(m)).collect();
    let mut setup_opts = SetupOptions::new(store.config().d_face, store.config().d_voice, opts.train.clone());
    setup_opts.repetitions = opts.repetitions;
    setup_opts.accounting = opts.accounting;
    let (artifact, setup_time_s) = measure_setup(opts.method, &shots, None, &setup_opts)?;

    let sf = opts.scale_factor.unwrap_or_else(|| store.scale_factor());
    let records: Vec<PredictionRecord> = match &artifact {
        SetupArtifact::Att(set_up_store) => run_stream_scaled(set_up_store, stream, opts.tau, sf)?,
        SetupArtifact::Tfs(model) | SetupArtifact::Lwf(model) => stream
            .windows
            .iter()
            .map(|w| predict_window_baseline(model, w, opts.tau))
            .collect(),
    };

    let (params_kb, trained_epochs, converged) = match &artifact {
        SetupArtifact::Att(s) => (s.parameter_count_kb(), None, None),
        SetupArtifact::Tfs(m) | SetupArtifact::Lwf(m) => (
            m.parameter_count_kb(),
            Some(m.trained_epochs()),
            Some(m.converged()),
        ),
    };

    // matched-pair accuracy over base windows with registered ground truth
    let mut matched_pred = Vec::new();
    let mut matched_gt = Vec::new();
    for (w, r) in stream.windows.iter().zip(&records) {
        if let Some(expected) = w.expected_index(store) {
            matched_gt.push(Some(store.label_of(expected).unwrap().to_string()));
            matched_pred.push(r.speaker.as_ref().map(|s| s.label.clone()));
        }
    }
    let mpa_value = if matched_pred.is_empty() {
        None
    } else {
        Some(sna(&matched_pred, &matched_gt)?)
    };

    // speaker-naming accuracy at the aggregation factor
    let aggregated = aggregate(&records, opts.window_factor);
    let expected = aggregate_expected(stream, store, opts.window_factor);
    let predicted: Vec<Option<String>> = aggregated.iter().map(|a| a.winner.clone()).collect();
    let expected_labels: Vec<Option<String>> = expected
        .iter()
        .map(|e| e.map(|i| store.label_of(i).unwrap().to_string()))
        .collect();
    let sna_value = if predicted.is_empty() {
        return Err(EngineError::EmptyInput);
    } else {
        sna(&predicted, &expected_labels)?
    };

    Ok(EvalReport {
        method: opts.method.name().to_string(),
        mpa: mpa_value,
        sna: sna_value,
        params_kb,
        setup_time_s,
        n_ids: store.num_identities(),
        n_shots: store.num_shots(),
        d_key: store.d_key(),
        tau: opts.tau,
        window_factor: opts.window_factor.max(1),
        base_windows: stream.len(),
        aggregated_windows: aggregated.len(),
        trained_epochs,
        converged,
    })
}
