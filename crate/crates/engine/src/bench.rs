//! The comparison grid: every (method, identity count, shots-per-identity)
//! cell gets matching-pair accuracy, parameter footprint and setup time on
//! one seeded synthetic population.
//!
//! Identity counts are swept in ascending order so the branch-adding
//! baseline runs as a true incremental protocol: each grid step trains one
//! branch on the newly added identities only, and the row reports both the
//! per-stage and the cumulative setup time. The from-scratch baseline
//! retrains on all data at every step; the attention method re-enrolls.

use serde::{Deserialize, Serialize};

use crate::baselines::{BranchedModel, TrainConfig};
use crate::error::EngineError;
use crate::metrics::{measure_setup, Accounting, Method, SetupArtifact, SetupOptions};
use crate::pipeline::WindowQuery;
use crate::store::ShotRecord;
use crate::synth::{generate_population, PopulationSpec};

/// The identity-count sweep used when none is given: 5 to 50 by fives.
pub fn default_grid_ids() -> Vec<usize> {
    (1..=10).map(|k| k * 5).collect()
}

/// The shots sweep used when none is given: a small and a large setting.
pub fn default_grid_shots() -> Vec<usize> {
    vec![5, 50]
}

/// Grid settings. Accuracy columns are deterministic given the seed;
/// timing columns are hardware-dependent.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub ids: Vec<usize>,
    pub shots: Vec<usize>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub d_face: usize,
    pub d_voice: usize,
    pub noise: f32,
    pub queries_per_id: usize,
    pub tau: f32,
    pub repetitions: usize,
    pub max_centroid_cos: f32,
    pub train: TrainConfig,
    pub accounting: Accounting,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            ids: default_grid_ids(),
            shots: default_grid_shots(),
            methods: vec![Method::Att, Method::Tfs, Method::Lwf],
            seed: 0,
            d_face: 32,
            d_voice: 32,
            noise: 0.45,
            queries_per_id: 40,
            tau: 0.0,
            repetitions: 3,
            max_centroid_cos: 0.9,
            train: TrainConfig::default(),
            accounting: Accounting::Inclusive,
        }
    }
}

/// One grid cell's results. `setup_cumulative_s` differs from
/// `setup_time_s` only for the incremental baseline, where it sums the
/// stages up to this identity count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub n_ids: usize,
    pub shots: usize,
    pub mpa: f64,
    pub params_kb: f64,
    pub setup_time_s: f64,
    pub setup_cumulative_s: f64,
    pub trained_epochs: Option<u32>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "method,n_ids,shots,mpa,params_kb,setup_time_s,setup_cumulative_s,trained_epochs,converged,error";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{:.6},{:.6},{},{},{}",
            self.method,
            self.n_ids,
            self.shots,
            self.mpa,
            self.params_kb,
            self.setup_time_s,
            self.setup_cumulative_s,
            self.trained_epochs.map(|v| v.to_string()).unwrap_or_default(),
            self.converged.map(|v| v.to_string()).unwrap_or_default(),
            self.error.as_deref().unwrap_or_default(),
        )
    }
}

/// Run the full grid, invoking `on_row` as each row completes so partial
/// output survives a failing cell. On a cell failure an annotated row is
/// emitted and the error is returned.
pub fn run_grid(
    spec: &GridSpec,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>, EngineError> {
    if spec.ids.is_empty() || spec.shots.is_empty() || spec.methods.is_empty() {
        return Err(EngineError::InvalidSpec {
            message: "grid needs at least one identity count, shot count and method".into(),
        });
    }
    let mut ids = spec.ids.clone();
    ids.sort_unstable();
    ids.dedup();

    let mut rows = Vec::new();
    for &shots in &spec.shots {
        let max_n = *ids.last().unwrap();
        let population = generate_population(&PopulationSpec {
            n_ids: max_n,
            shots_per_id: shots,
            d_face: spec.d_face,
            d_voice: spec.d_voice,
            face_noise: spec.noise,
            voice_noise: spec.noise,
            distractor_ratio: (1, 0),
            queries_per_id: spec.queries_per_id,
            max_centroid_cos: spec.max_centroid_cos,
            seed: spec.seed.wrapping_add(shots as u64),
        })?;

        let labels: Vec<String> = population
            .centroids
            .iter()
            .map(|c| c.label.clone())
            .collect();

        for &method in &spec.methods {
            let mut lwf_model: Option<BranchedModel> = None;
            let mut cumulative = 0.0f64;
            let mut prev_n = 0usize;
            for &n in &ids {
                let cell = run_cell(
                    spec,
                    &population.shots,
                    &population.stream.windows,
                    &labels,
                    method,
                    n,
                    prev_n,
                    shots,
                    &mut lwf_model,
                    &mut cumulative,
                );
                match cell {
                    Ok(row) => {
                        on_row(&row);
                        rows.push(row);
                    }
                    Err(e) => {
                        let row = BenchRow {
                            method: method.name().into(),
                            n_ids: n,
                            shots,
                            mpa: 0.0,
                            params_kb: 0.0,
                            setup_time_s: 0.0,
                            setup_cumulative_s: cumulative,
                            trained_epochs: None,
                            converged: None,
                            error: Some(e.to_string()),
                        };
                        on_row(&row);
                        rows.push(row);
                        return Err(e);
                    }
                }
                prev_n = n;
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    spec: &GridSpec,
    all_shots: &[ShotRecord],
    all_windows: &[WindowQuery],
    labels: &[String],
    method: Method,
    n: usize,
    prev_n: usize,
    shots: usize,
    lwf_model: &mut Option<BranchedModel>,
    cumulative: &mut f64,
) -> Result<BenchRow, EngineError> {
    // shots are identity-major, so the first n identities are a prefix
    let allowed: std::collections::HashSet<&str> =
        labels[..n].iter().map(String::as_str).collect();
    let cell_shots = &all_shots[..n * shots];
    debug_assert!(cell_shots.iter().all(|s| allowed.contains(s.face_id.as_str())));

    let mut train = spec.train.clone();
    train.seed = spec
        .seed
        .wrapping_add((n as u64) << 24)
        .wrapping_add(shots as u64);
    let mut setup_opts = SetupOptions::new(spec.d_face, spec.d_voice, train);
    setup_opts.repetitions = spec.repetitions;
    setup_opts.accounting = spec.accounting;

    let (artifact, seconds) = match method {
        Method::Lwf => {
            let base = match lwf_model.as_ref() {
                Some(m) => m.clone(),
                None => BranchedModel::new(spec.d_face + spec.d_voice, &setup_opts.train),
            };
            let increment = &all_shots[prev_n * shots..n * shots];
            measure_setup(Method::Lwf, increment, Some(&base), &setup_opts)?
        }
        other => measure_setup(other, cell_shots, None, &setup_opts)?,
    };

    let queries: Vec<&WindowQuery> = all_windows
        .iter()
        .filter(|w| w.ground_truth.as_deref().is_some_and(|g| allowed.contains(g)))
        .collect();

    let mut correct = 0usize;
    let (params_kb, trained_epochs, converged) = match &artifact {
        SetupArtifact::Att(store) => {
            for w in &queries {
                let rec = crate::attention::predict_window(store, w, spec.tau)?;
                if rec.speaker.as_ref().map(|s| s.label.as_str()) == w.ground_truth.as_deref() {
                    correct += 1;
                }
            }
            (store.parameter_count_kb(), None, None)
        }
        SetupArtifact::Tfs(model) | SetupArtifact::Lwf(model) => {
            for w in &queries {
                let rec = crate::baselines::predict_window_baseline(model, w, spec.tau);
                if rec.speaker.as_ref().map(|s| s.label.as_str()) == w.ground_truth.as_deref() {
                    correct += 1;
                }
            }
            (
                model.parameter_count_kb(),
                Some(model.trained_epochs()),
                Some(model.converged()),
            )
        }
    };

    if let SetupArtifact::Lwf(crate::baselines::BaselineModel::Branched(m)) = artifact {
        *lwf_model = Some(m);
    }

    let per_stage = seconds;
    let cumulative_s = if method == Method::Lwf {
        *cumulative += per_stage;
        *cumulative
    } else {
        per_stage
    };

    let mpa = if queries.is_empty() {
        0.0
    } else {
        correct as f64 / queries.len() as f64 * 100.0
    };

    Ok(BenchRow {
        method: method.name().into(),
        n_ids: n,
        shots,
        mpa,
        params_kb,
        setup_time_s: per_stage,
        setup_cumulative_s: cumulative_s,
        trained_epochs,
        converged,
        error: None,
    })
}
