//! Gradient-descent comparators for the attention method.
//!
//! Two baselines share one full-batch softmax-regression core:
//!
//! - training-from-scratch (`tfs`): a single linear classifier over raw
//!   concatenated pair embeddings, retrained on all data whenever the
//!   identity list changes;
//! - a branch-adding variant (`lwf`): a frozen, seeded linear trunk (the
//!   stand-in for a pretrained feature network) plus one output branch per
//!   identity increment, each trained only on that increment's data.
//!   Earlier branches are never touched again.
//!
//! Every optimizer epoch bumps a thread-local counter so tests can assert
//! that the attention path performs zero gradient steps.
//!
//! Checkpoint layout (little-endian): magic, version, dims, then row-major
//! f32 weights followed by f32 biases; branched checkpoints store the trunk
//! first and then each branch with its label table.

use std::cell::Cell;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{PairConfidence, PredictionRecord};
use crate::error::EngineError;
use crate::pipeline::WindowQuery;
use crate::store::{Identity, KnowledgeStore, ShotRecord};

thread_local! {
    static GRADIENT_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of gradient steps taken on the current thread.
pub fn gradient_step_count() -> u64 {
    GRADIENT_STEPS.with(Cell::get)
}

fn record_gradient_step() {
    GRADIENT_STEPS.with(|c| c.set(c.get() + 1));
}

/// Shared optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: u32,
    /// An epoch whose loss improvement is below this counts toward the
    /// convergence patience.
    pub tol: f64,
    pub patience: u32,
    pub seed: u64,
    /// Output width the from-scratch architecture is provisioned for. The
    /// deployed network is sized once, so its parameter footprint does not
    /// depend on how many identities are currently active.
    pub capacity_ids: usize,
    /// Trunk output width for the branched model; `None` picks d_in / 8.
    pub trunk_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            tol: 1e-6,
            patience: 20,
            seed: 0,
            capacity_ids: 500,
            trunk_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn effective_trunk_dim(&self, d_in: usize) -> usize {
        self.trunk_dim.unwrap_or_else(|| (d_in / 8).max(2))
    }
}

/// Training examples: row-major features with one class index per row.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
    pub d: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Build from enrolled shots; the class of a shot is its face label.
    pub fn from_store(store: &KnowledgeStore) -> Result<Self, EngineError> {
        let d = store.d_key();
        let m = store.num_shots();
        let mut features = Vec::with_capacity(m * d);
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            features.extend(store.key_column(i).iter().map(|&v| f64::from(v)));
            labels.push(store.shot_labels()[i].0 as usize);
        }
        let class_labels: Vec<String> = store.labels().to_vec();
        let dataset = Self {
            features,
            labels,
            class_labels,
            d,
        };
        dataset.check_coverage()?;
        Ok(dataset)
    }

    /// Build directly from raw shot records (normalizing each half), with
    /// classes registered in order of first appearance.
    pub fn from_shots(
        shots: &[ShotRecord],
        d_face: usize,
        d_voice: usize,
    ) -> Result<Self, EngineError> {
        let mut store = KnowledgeStore::new(crate::store::StoreConfig::with_dims(d_face, d_voice));
        for shot in shots {
            store.enroll_record(shot)?;
        }
        Self::from_store(&store)
    }

    fn check_coverage(&self) -> Result<(), EngineError> {
        let mut seen = vec![false; self.n_classes()];
        for &y in &self.labels {
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(EngineError::EmptyClass {
                label: self.class_labels[missing].clone(),
            });
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Restrict to the rows whose class is in `keep` (classes re-indexed
    /// in `keep` order).
    pub fn subset(&self, keep: &[String]) -> Self {
        let mut index_of = std::collections::HashMap::new();
        for (i, label) in keep.iter().enumerate() {
            index_of.insert(label.as_str(), i);
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            if let Some(&local) = index_of.get(self.class_labels[y].as_str()) {
                features.extend_from_slice(self.row(i));
                labels.push(local);
            }
        }
        Self {
            features,
            labels,
            class_labels: keep.to_vec(),
            d: self.d,
        }
    }
}

/// Mean softmax cross-entropy and its gradients for a linear classifier.
///
/// `weights` is row-major `n x d`, one row per class. Returned gradients
/// have the same layouts as `weights` and `bias`. Exposed so the analytic
/// gradient can be checked against finite differences.
pub fn softmax_ce_loss_grad(
    features: &[f64],
    labels: &[usize],
    d: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let m = labels.len();
    let mut grad_w = vec![0.0f64; n * d];
    let mut grad_b = vec![0.0f64; n];
    let mut loss = 0.0f64;
    let mut logits = vec![0.0f64; n];
    for i in 0..m {
        let x = &features[i * d..(i + 1) * d];
        for c in 0..n {
            let w = &weights[c * d..(c + 1) * d];
            logits[c] = bias[c] + w.iter().zip(x).map(|(&wj, &xj)| wj * xj).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0f64;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        loss -= (logits[labels[i]] / z).ln();
        for c in 0..n {
            let p = logits[c] / z;
            let coef = p - if c == labels[i] { 1.0 } else { 0.0 };
            grad_b[c] += coef;
            let g = &mut grad_w[c * d..(c + 1) * d];
            for (gj, &xj) in g.iter_mut().zip(x) {
                *gj += coef * xj;
            }
        }
    }
    let inv_m = 1.0 / m as f64;
    loss *= inv_m;
    for g in grad_w.iter_mut() {
        *g *= inv_m;
    }
    for g in grad_b.iter_mut() {
        *g *= inv_m;
    }
    (loss, grad_w, grad_b)
}

struct FitOutcome {
    weights: Vec<f64>,
    bias: Vec<f64>,
    epochs: u32,
    converged: bool,
    loss_history: Vec<f64>,
}

/// Full-batch gradient descent to convergence or the epoch limit.
fn fit_softmax(
    features: &[f64],
    labels: &[usize],
    d: usize,
    n: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> FitOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut weights: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut bias = vec![0.0f64; n];

    let mut loss_history: Vec<f64> = Vec::new();
    let mut streak = 0u32;
    let mut converged = false;
    let mut epochs = 0u32;
    for _ in 0..cfg.max_epochs {
        let (loss, grad_w, grad_b) = softmax_ce_loss_grad(features, labels, d, n, &weights, &bias);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * g;
        }
        for (b, g) in bias.iter_mut().zip(&grad_b) {
            *b -= cfg.learning_rate * g;
        }
        record_gradient_step();
        epochs += 1;
        let improved = loss_history
            .last()
            .is_none_or(|&prev| prev - loss >= cfg.tol);
        loss_history.push(loss);
        if improved {
            streak = 0;
        } else {
            streak += 1;
            if streak >= cfg.patience {
                converged = true;
                break;
            }
        }
    }
    FitOutcome {
        weights,
        bias,
        epochs,
        converged,
        loss_history,
    }
}

fn loss_tail_monotone(history: &[f64], tol: f64) -> bool {
    let tail = &history[history.len().saturating_sub(10)..];
    tail.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Linear softmax classifier trained from scratch on all data.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    class_labels: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    d_in: usize,
    pub trained_epochs: u32,
    pub converged: bool,
    pub loss_history: Vec<f64>,
    capacity_ids: usize,
}

const LINEAR_MAGIC: &[u8; 4] = b"ALSM";
const BRANCH_MAGIC: &[u8; 4] = b"ABRM";
const CHECKPOINT_VERSION: u32 = 1;

impl LinearSoftmaxModel {
    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Footprint of the provisioned architecture (capacity rows plus
    /// biases, 32-bit), independent of the active identity count.
    pub fn parameter_count_bytes(&self) -> u64 {
        let rows = self.capacity_ids.max(self.n_classes()) as u64;
        rows * self.d_in as u64 * 4 + rows * 4
    }

    pub fn parameter_count_kb(&self) -> f64 {
        self.parameter_count_bytes() as f64 / 1024.0
    }

    /// Class-probability vector for one concatenated pair embedding.
    pub fn predict_pair(&self, pair: &[f32]) -> Vec<f32> {
        let logits: Vec<f64> = self
            .weights
            .chunks(self.d_in)
            .zip(&self.bias)
            .map(|(w, &b)| {
                b + w
                    .iter()
                    .zip(pair)
                    .map(|(&wj, &xj)| wj * f64::from(xj))
                    .sum::<f64>()
            })
            .collect();
        softmax_f32(&logits)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), EngineError> {
        w.write_all(LINEAR_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_classes() as u32).to_le_bytes())?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.capacity_ids as u32).to_le_bytes())?;
        write_labels(&mut w, &self.class_labels)?;
        write_f32s(&mut w, &self.weights)?;
        write_f32s(&mut w, &self.bias)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, EngineError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != LINEAR_MAGIC {
            return Err(EngineError::Parse {
                line: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let _version = read_u32(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let capacity_ids = read_u32(&mut r)? as usize;
        let class_labels = read_labels(&mut r, n)?;
        let weights = read_f32s(&mut r, n * d)?;
        let bias = read_f32s(&mut r, n)?;
        Ok(Self {
            class_labels,
            weights,
            bias,
            d_in: d,
            trained_epochs: 0,
            converged: true,
            loss_history: Vec::new(),
            capacity_ids,
        })
    }
}

/// Train a from-scratch linear softmax classifier on the full dataset.
pub fn train_tfs(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<LinearSoftmaxModel, EngineError> {
    if dataset.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    dataset.check_coverage()?;
    let n = dataset.n_classes();
    let out = fit_softmax(&dataset.features, &dataset.labels, dataset.d, n, cfg.seed, cfg);
    let converged = out.converged && loss_tail_monotone(&out.loss_history, cfg.tol);
    Ok(LinearSoftmaxModel {
        class_labels: dataset.class_labels.clone(),
        weights: out.weights,
        bias: out.bias,
        d_in: dataset.d,
        trained_epochs: out.epochs,
        converged,
        loss_history: out.loss_history,
        capacity_ids: cfg.capacity_ids,
    })
}

/// One trained output branch covering the identities of one increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub class_labels: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub trained_epochs: u32,
    pub converged: bool,
}

impl Branch {
    /// Serialized form used for freeze-equality checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.class_labels.len() as u32).to_le_bytes());
        write_labels(&mut out, &self.class_labels).unwrap();
        write_f32s(&mut out, &self.weights).unwrap();
        write_f32s(&mut out, &self.bias).unwrap();
        out
    }
}

/// Frozen shared trunk plus per-increment output branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedModel {
    d_in: usize,
    d_hidden: usize,
    trunk: Vec<f64>,
    branches: Vec<Branch>,
}

impl BranchedModel {
    /// Create an empty branched model. The trunk is drawn once from the
    /// seed and acts as the pretrained feature network: it is never
    /// trained afterwards.
    pub fn new(d_in: usize, cfg: &TrainConfig) -> Self {
        let d_hidden = cfg.effective_trunk_dim(d_in);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = 1.0 / (d_in as f64).sqrt();
        let trunk = (0..d_hidden * d_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            d_in,
            d_hidden,
            trunk,
            branches: Vec::new(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_classes(&self) -> usize {
        self.branches.iter().map(|b| b.class_labels.len()).sum()
    }

    /// All class labels in global order (branch order, then within-branch).
    pub fn class_labels(&self) -> Vec<String> {
        self.branches
            .iter()
            .flat_map(|b| b.class_labels.iter().cloned())
            .collect()
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.branches
            .iter()
            .any(|b| b.class_labels.iter().any(|l| l == label))
    }

    /// Trunk + all branches, 32-bit accounting (grows linearly with the
    /// number of increments).
    pub fn parameter_count_bytes(&self) -> u64 {
        let trunk = (self.d_hidden * self.d_in) as u64 * 4;
        let branches: u64 = self
            .branches
            .iter()
            .map(|b| (b.weights.len() + b.bias.len()) as u64 * 4)
            .sum();
        trunk + branches
    }

    pub fn parameter_count_kb(&self) -> f64 {
        self.parameter_count_bytes() as f64 / 1024.0
    }

    fn project(&self, pair_f64: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0f64; self.d_hidden];
        for (h, row) in hidden.iter_mut().zip(self.trunk.chunks(self.d_in)) {
            *h = row.iter().zip(pair_f64).map(|(&w, &x)| w * x).sum();
        }
        hidden
    }

    /// Concatenated branch logits, softmaxed globally.
    pub fn predict_pair(&self, pair: &[f32]) -> Vec<f32> {
        let pair_f64: Vec<f64> = pair.iter().map(|&v| f64::from(v)).collect();
        let hidden = self.project(&pair_f64);
        let mut logits = Vec::with_capacity(self.n_classes());
        for branch in &self.branches {
            for (c, b) in branch.bias.iter().enumerate() {
                let w = &branch.weights[c * self.d_hidden..(c + 1) * self.d_hidden];
                logits.push(b + w.iter().zip(&hidden).map(|(&wj, &hj)| wj * hj).sum::<f64>());
            }
        }
        softmax_f32(&logits)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), EngineError> {
        w.write_all(BRANCH_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_hidden as u32).to_le_bytes())?;
        w.write_all(&(self.branches.len() as u32).to_le_bytes())?;
        write_f32s(&mut w, &self.trunk)?;
        for branch in &self.branches {
            w.write_all(&branch.to_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, EngineError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BRANCH_MAGIC {
            return Err(EngineError::Parse {
                line: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let _version = read_u32(&mut r)?;
        let d_in = read_u32(&mut r)? as usize;
        let d_hidden = read_u32(&mut r)? as usize;
        let n_branches = read_u32(&mut r)? as usize;
        let trunk = read_f32s(&mut r, d_hidden * d_in)?;
        let mut branches = Vec::with_capacity(n_branches);
        for _ in 0..n_branches {
            let n = read_u32(&mut r)? as usize;
            let class_labels = read_labels(&mut r, n)?;
            let weights = read_f32s(&mut r, n * d_hidden)?;
            let bias = read_f32s(&mut r, n)?;
            branches.push(Branch {
                class_labels,
                weights,
                bias,
                trained_epochs: 0,
                converged: true,
            });
        }
        Ok(Self {
            d_in,
            d_hidden,
            trunk,
            branches,
        })
    }
}

/// Stable content hash so a branch's initialization depends only on the
/// seed and on which identities it covers, not on increment order.
fn label_hash(labels: &[String]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for label in labels {
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Train one new branch on data restricted to identities that no existing
/// branch covers. Prior branches are returned untouched.
pub fn train_lwf_increment(
    model: BranchedModel,
    new_data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BranchedModel, EngineError> {
    if new_data.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    new_data.check_coverage()?;
    if new_data.d != model.d_in {
        return Err(EngineError::ShapeMismatch {
            message: format!("dataset dim {} vs model dim {}", new_data.d, model.d_in),
        });
    }
    for label in &new_data.class_labels {
        if model.contains_label(label) {
            return Err(EngineError::OverlappingIds {
                label: label.clone(),
            });
        }
    }

    // project through the frozen trunk once; the trunk never changes
    let m = new_data.len();
    let mut projected = Vec::with_capacity(m * model.d_hidden);
    for i in 0..m {
        projected.extend(model.project(new_data.row(i)));
    }

    let n_new = new_data.n_classes();
    let branch_seed = cfg.seed ^ label_hash(&new_data.class_labels);
    let out = fit_softmax(&projected, &new_data.labels, model.d_hidden, n_new, branch_seed, cfg);
    let converged = out.converged && loss_tail_monotone(&out.loss_history, cfg.tol);

    let mut model = model;
    model.branches.push(Branch {
        class_labels: new_data.class_labels.clone(),
        weights: out.weights,
        bias: out.bias,
        trained_epochs: out.epochs,
        converged,
    });
    Ok(model)
}

/// Either baseline, behind the shared per-pair prediction surface.
pub enum BaselineModel {
    Linear(LinearSoftmaxModel),
    Branched(BranchedModel),
}

impl BaselineModel {
    pub fn class_labels(&self) -> Vec<String> {
        match self {
            BaselineModel::Linear(m) => m.class_labels().to_vec(),
            BaselineModel::Branched(m) => m.class_labels(),
        }
    }

    pub fn predict_pair(&self, pair: &[f32]) -> Vec<f32> {
        match self {
            BaselineModel::Linear(m) => m.predict_pair(pair),
            BaselineModel::Branched(m) => m.predict_pair(pair),
        }
    }

    pub fn parameter_count_kb(&self) -> f64 {
        match self {
            BaselineModel::Linear(m) => m.parameter_count_kb(),
            BaselineModel::Branched(m) => m.parameter_count_kb(),
        }
    }

    pub fn trained_epochs(&self) -> u32 {
        match self {
            BaselineModel::Linear(m) => m.trained_epochs,
            BaselineModel::Branched(m) => m.branches().iter().map(|b| b.trained_epochs).sum(),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            BaselineModel::Linear(m) => m.converged,
            BaselineModel::Branched(m) => m.branches().iter().all(|b| b.converged),
        }
    }
}

/// Per-pair class distributions for a window's candidate pairs.
pub fn predict_baseline(model: &BaselineModel, window: &WindowQuery) -> Vec<Vec<f32>> {
    window
        .faces
        .iter()
        .map(|face| {
            let mut pair = Vec::with_capacity(face.len() + window.voice.len());
            pair.extend_from_slice(face.values());
            pair.extend_from_slice(window.voice.values());
            model.predict_pair(&pair)
        })
        .collect()
}

/// Window decision for a baseline, mirroring the attention method's rules
/// (later pairs win confidence ties, speaker only above the threshold) so
/// both go through identical downstream metrics.
pub fn predict_window_baseline(
    model: &BaselineModel,
    window: &WindowQuery,
    tau: f32,
) -> PredictionRecord {
    let labels = model.class_labels();
    let distributions = predict_baseline(model, window);
    let mut per_pair = Vec::with_capacity(distributions.len());
    let mut max_conf = 0.0f32;
    let mut winner: Option<usize> = None;
    for (p, scores) in distributions.into_iter().enumerate() {
        let best = crate::attention::tie_break(&scores);
        if scores[best] >= max_conf {
            max_conf = scores[best];
            winner = Some(best);
        }
        per_pair.push(PairConfidence { pair: p, scores });
    }
    let speaker = match winner {
        Some(index) if max_conf > tau => Some(Identity {
            label: labels[index].clone(),
            index,
        }),
        _ => None,
    };
    PredictionRecord {
        window_index: window.index,
        speaker,
        confidence: max_conf,
        per_pair,
    }
}

fn softmax_f32(logits: &[f64]) -> Vec<f32> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / z) as f32).collect()
}

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>, EngineError> {
    let mut buf = [0u8; 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        out.push(f64::from(f32::from_le_bytes(buf)));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EngineError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_labels<W: Write>(w: &mut W, labels: &[String]) -> std::io::Result<()> {
    for label in labels {
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label.as_bytes())?;
    }
    Ok(())
}

fn read_labels<R: Read>(r: &mut R, count: usize) -> Result<Vec<String>, EngineError> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        out.push(String::from_utf8(buf).map_err(|e| EngineError::Parse {
            line: 0,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two orthogonal classes, `shots` slightly jittered examples each.
    fn separable_dataset(shots: usize) -> LabeledDataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for s in 0..shots {
            let eps = 0.01 * s as f64;
            features.extend_from_slice(&[1.0, eps, 1.0, eps]);
            labels.push(0);
            features.extend_from_slice(&[eps, 1.0, eps, 1.0]);
            labels.push(1);
        }
        LabeledDataset {
            features,
            labels,
            class_labels: vec!["A".into(), "B".into()],
            d: 4,
        }
    }

    fn training_accuracy(model: &LinearSoftmaxModel, data: &LabeledDataset) -> f64 {
        let mut correct = 0;
        for i in 0..data.len() {
            let pair: Vec<f32> = data.row(i).iter().map(|&v| v as f32).collect();
            let probs = model.predict_pair(&pair);
            let pred = crate::attention::tie_break(&probs);
            if pred == data.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    }

    #[test]
    fn tfs_separable_data_reaches_full_training_accuracy() {
        let data = separable_dataset(5);
        let cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        let model = train_tfs(&data, &cfg).unwrap();
        assert_eq!(training_accuracy(&model, &data), 1.0);
        assert!(model.trained_epochs > 0);
        // the recorded loss trajectory must not rise near the end
        let tail = &model.loss_history[model.loss_history.len().saturating_sub(10)..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + cfg.tol));
    }

    #[test]
    fn predict_baseline_empty_window_is_empty() {
        let data = separable_dataset(2);
        let model = BaselineModel::Linear(train_tfs(&data, &TrainConfig::default()).unwrap());
        let window = crate::pipeline::WindowQuery {
            index: 0,
            t_start: 0.0,
            t_end: 0.5,
            faces: vec![],
            voice: crate::store::ModalEmbedding::new(vec![1.0, 0.0], crate::store::Modality::Voice)
                .unwrap(),
            ground_truth: None,
        };
        assert!(predict_baseline(&model, &window).is_empty());
        let record = predict_window_baseline(&model, &window, 0.25);
        assert_eq!(record.speaker, None);
    }

    #[test]
    fn tfs_single_class_is_trivially_perfect() {
        let data = LabeledDataset {
            features: vec![1.0, 0.0, 0.0, 1.0],
            labels: vec![0],
            class_labels: vec!["only".into()],
            d: 4,
        };
        let model = train_tfs(&data, &TrainConfig::default()).unwrap();
        assert_eq!(training_accuracy(&model, &data), 1.0);
    }

    #[test]
    fn tfs_missing_class_is_an_error() {
        let mut data = separable_dataset(2);
        data.class_labels.push("ghost".into());
        assert!(matches!(
            train_tfs(&data, &TrainConfig::default()),
            Err(EngineError::EmptyClass { .. })
        ));
    }

    #[test]
    fn tfs_is_deterministic_given_seed() {
        let data = separable_dataset(3);
        let cfg = TrainConfig {
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train_tfs(&data, &cfg).unwrap();
        let b = train_tfs(&data, &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.trained_epochs, b.trained_epochs);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = separable_dataset(3);
        let n = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let weights: Vec<f64> = (0..n * data.d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (_, grad_w, _) =
            softmax_ce_loss_grad(&data.features, &data.labels, data.d, n, &weights, &bias);
        let h = 1e-6;
        for k in 0..weights.len() {
            let mut plus = weights.clone();
            plus[k] += h;
            let mut minus = weights.clone();
            minus[k] -= h;
            let (lp, _, _) =
                softmax_ce_loss_grad(&data.features, &data.labels, data.d, n, &plus, &bias);
            let (lm, _, _) =
                softmax_ce_loss_grad(&data.features, &data.labels, data.d, n, &minus, &bias);
            let numeric = (lp - lm) / (2.0 * h);
            let denom = numeric.abs().max(grad_w[k].abs()).max(1e-8);
            assert!(
                ((grad_w[k] - numeric) / denom).abs() < 1e-4,
                "coordinate {k}: analytic {} vs numeric {}",
                grad_w[k],
                numeric
            );
        }
    }

    #[test]
    fn gradient_steps_are_counted() {
        let before = gradient_step_count();
        let data = separable_dataset(2);
        let model = train_tfs(&data, &TrainConfig::default()).unwrap();
        let after = gradient_step_count();
        assert_eq!(after - before, u64::from(model.trained_epochs));
    }

    #[test]
    fn lwf_increment_freezes_prior_branches() {
        let cfg = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let model = BranchedModel::new(4, &cfg);
        let first = separable_dataset(3);
        let model = train_lwf_increment(model, &first, &cfg).unwrap();
        let frozen = model.branches()[0].to_bytes();

        let second = LabeledDataset {
            features: vec![1.0, 1.0, -1.0, -1.0, 1.0, 0.9, -0.9, -1.0],
            labels: vec![0, 0],
            class_labels: vec!["C".into()],
            d: 4,
        };
        let model = train_lwf_increment(model, &second, &cfg).unwrap();
        assert_eq!(model.branches().len(), 2);
        assert_eq!(model.branches()[0].to_bytes(), frozen);
        assert_eq!(model.n_classes(), 3);
    }

    #[test]
    fn lwf_rejects_overlapping_ids() {
        let cfg = TrainConfig::default();
        let model = BranchedModel::new(4, &cfg);
        let data = separable_dataset(2);
        let model = train_lwf_increment(model, &data, &cfg).unwrap();
        let err = train_lwf_increment(model, &data, &cfg).unwrap_err();
        assert!(matches!(err, EngineError::OverlappingIds { .. }));
    }

    #[test]
    fn lwf_increments_commute_per_branch() {
        let cfg = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let inc_a = LabeledDataset {
            features: vec![1.0, 0.0, 1.0, 0.0, 0.9, 0.1, 1.0, 0.0],
            labels: vec![0, 0],
            class_labels: vec!["A".into()],
            d: 4,
        };
        let inc_b = LabeledDataset {
            features: vec![0.0, 1.0, 0.0, 1.0, 0.1, 0.9, 0.0, 1.0],
            labels: vec![0, 0],
            class_labels: vec!["B".into()],
            d: 4,
        };
        let ab = train_lwf_increment(
            train_lwf_increment(BranchedModel::new(4, &cfg), &inc_a, &cfg).unwrap(),
            &inc_b,
            &cfg,
        )
        .unwrap();
        let ba = train_lwf_increment(
            train_lwf_increment(BranchedModel::new(4, &cfg), &inc_b, &cfg).unwrap(),
            &inc_a,
            &cfg,
        )
        .unwrap();
        assert_eq!(ab.branches()[0].to_bytes(), ba.branches()[1].to_bytes());
        assert_eq!(ab.branches()[1].to_bytes(), ba.branches()[0].to_bytes());
    }

    #[test]
    fn baseline_distributions_sum_to_one() {
        let data = separable_dataset(3);
        let model = BaselineModel::Linear(train_tfs(&data, &TrainConfig::default()).unwrap());
        let probs = model.predict_pair(&[0.3, -0.2, 0.9, 0.1]);
        let sum: f32 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn linear_checkpoint_round_trips() {
        let data = separable_dataset(2);
        let model = train_tfs(&data, &TrainConfig::default()).unwrap();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        let reread = LinearSoftmaxModel::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(reread.class_labels(), model.class_labels());
        let mut second = Vec::new();
        reread.write_checkpoint(&mut second).unwrap();
        assert_eq!(bytes, second);
    }
}
