//! Per-(task, layer) linear probing with a random-vector baseline.
//!
//! A probe is trained on the last-token states of a task's sentences to tell
//! acceptable from unacceptable members. Its cross-validated F1 is compared
//! with the same procedure run on random Gaussian vectors, and the two are
//! combined into a normalized score `(raw - baseline) / (1 - baseline)`.

pub mod folds;
pub mod logreg;
pub mod metrics;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::seed::{derive_seed, rng_for};
use crate::store::{ActivationStore, LayerMatrix, SentenceId, StoreError};

pub use folds::FoldPlan;
pub use logreg::{train_logreg, ProbeClassifier, Standardizer, TrainConfig};
pub use metrics::{f1_score, f1_score_with, F1Average};

/// Guard on the normalized-performance denominator.
pub const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{pairs} pairs cannot fill {folds} folds")]
    TooFewPairs { pairs: usize, folds: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("fold {0}: training split contains a single class")]
    DegenerateFold(usize),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("pair `{0}` is not covered by the fold plan")]
    NotInPlan(String),
    #[error("sentence {0} missing from store")]
    MissingSentence(SentenceId),
    #[error("task `{0}` has no pairs in the dataset")]
    UnknownTask(String),
    #[error("baseline dimension {config} does not match store dimension {store}")]
    DimMismatch { config: usize, store: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Probe hyperparameters. All of them are recorded in output rows through
/// [`ProbeConfig::hash`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2_lambda: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub standardize: bool,
    pub n_folds: usize,
    pub f1_average: F1Average,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_lambda: 1.0,
            tolerance: 1e-6,
            max_iter: 1000,
            standardize: true,
            n_folds: 5,
            f1_average: F1Average::Binary,
        }
    }
}

impl ProbeConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            l2_lambda: self.l2_lambda,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
        }
    }

    /// Short stable digest of the hyperparameters and the global seed.
    pub fn hash(&self, seed: u64) -> String {
        let canonical = serde_json::to_string(&(self, seed)).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Feature matrix with one row per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub x: DMatrix<f64>,
    /// `true` for the acceptable member of a pair.
    pub labels: Vec<bool>,
    pub pair_ids: Vec<String>,
}

impl ProbeData {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub fold_scores: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Row indices sorted by (plan rank of the pair, acceptable first).
fn canonical_rows(pair_ids: &[String], labels: &[bool], plan: &FoldPlan) -> Result<Vec<usize>, ProbeError> {
    let ranks = plan.ranks();
    let mut keyed = Vec::with_capacity(pair_ids.len());
    for (i, (pid, &label)) in pair_ids.iter().zip(labels).enumerate() {
        let rank = *ranks
            .get(pid.as_str())
            .ok_or_else(|| ProbeError::NotInPlan(pid.clone()))?;
        keyed.push(((rank, !label, i), i));
    }
    keyed.sort_unstable();
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Train on out-of-fold rows and score F1 on each fold.
///
/// Rows are visited in the plan's canonical order, so the result does not
/// depend on how the rows of `data` are permuted.
pub fn crossval_f1(
    data: &ProbeData,
    plan: &FoldPlan,
    config: &ProbeConfig,
) -> Result<CrossvalResult, ProbeError> {
    let n = data.n_rows();
    if data.x.nrows() != n || data.pair_ids.len() != n {
        return Err(ProbeError::LengthMismatch {
            expected: n,
            found: data.x.nrows().min(data.pair_ids.len()),
        });
    }
    let order = canonical_rows(&data.pair_ids, &data.labels, plan)?;
    let train_cfg = config.train_config();
    let mut fold_scores = Vec::with_capacity(plan.n_folds);
    for fold in 0..plan.n_folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for &i in &order {
            let f = plan
                .fold_of(&data.pair_ids[i])
                .expect("canonical_rows checked plan coverage");
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        let train_labels: Vec<bool> = train.iter().map(|&i| data.labels[i]).collect();
        let test_labels: Vec<bool> = test.iter().map(|&i| data.labels[i]).collect();
        if train_labels.iter().all(|&l| l) || train_labels.iter().all(|&l| !l) {
            return Err(ProbeError::DegenerateFold(fold));
        }
        let mut x_train = select_rows(&data.x, &train);
        let mut x_test = select_rows(&data.x, &test);
        if config.standardize {
            let s = Standardizer::fit(&x_train);
            x_train = s.transform(&x_train);
            x_test = s.transform(&x_test);
        }
        let clf = train_logreg(&x_train, &train_labels, &train_cfg)?;
        let pred = clf.predict(&x_test);
        fold_scores.push(f1_score_with(&pred, &test_labels, config.f1_average)?);
    }
    let (mean, std) = mean_std(&fold_scores);
    Ok(CrossvalResult {
        mean,
        std,
        fold_scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomBaselineConfig {
    pub dim: usize,
    pub seed: u64,
}

/// Cross-validated F1 when every sentence is replaced by an i.i.d. standard
/// normal vector. Vectors are drawn in the plan's canonical row order.
pub fn random_baseline(
    pair_ids: &[String],
    labels: &[bool],
    dim: usize,
    config: &RandomBaselineConfig,
    plan: &FoldPlan,
    probe: &ProbeConfig,
) -> Result<CrossvalResult, ProbeError> {
    if config.dim != dim {
        return Err(ProbeError::DimMismatch {
            config: config.dim,
            store: dim,
        });
    }
    if pair_ids.len() != labels.len() {
        return Err(ProbeError::LengthMismatch {
            expected: labels.len(),
            found: pair_ids.len(),
        });
    }
    let order = canonical_rows(pair_ids, labels, plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = DMatrix::<f64>::zeros(labels.len(), dim);
    for &row in &order {
        for j in 0..dim {
            x[(row, j)] = rng.sample(StandardNormal);
        }
    }
    let data = ProbeData {
        x,
        labels: labels.to_vec(),
        pair_ids: pair_ids.to_vec(),
    };
    crossval_f1(&data, plan, probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPerf {
    pub value: f64,
    /// Baseline within `DEGENERATE_EPS` of 1; `value` is 0 in that case.
    pub degenerate: bool,
}

/// `(raw - baseline) / (1 - baseline)`. Negative when the probe does worse
/// than on random vectors.
pub fn normalized_perf(raw: f64, baseline: f64) -> NormalizedPerf {
    if baseline >= 1.0 - DEGENERATE_EPS {
        return NormalizedPerf {
            value: 0.0,
            degenerate: true,
        };
    }
    NormalizedPerf {
        value: (raw - baseline) / (1.0 - baseline),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub task_id: String,
    pub layer: usize,
    pub raw_f1_mean: f64,
    pub raw_f1_std: f64,
    pub raw_fold_scores: Vec<f64>,
    pub baseline_f1: f64,
    pub baseline_f1_std: f64,
    pub normalized_perf: f64,
    pub degenerate: bool,
    pub n_pairs: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ProbeScore {
    /// Per-fold normalized scores against the (fold-averaged) baseline.
    pub fn normalized_fold_scores(&self) -> Vec<f64> {
        self.raw_fold_scores
            .iter()
            .map(|&r| normalized_perf(r, self.baseline_f1).value)
            .collect()
    }
}

/// Seeds of one (task, layer) job, derived from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobSeeds {
    /// Shared by every layer of a task, and by the raw and baseline runs.
    pub folds: u64,
    pub baseline: u64,
}

impl JobSeeds {
    pub fn derive(global: u64, task_id: &str, layer: usize) -> Self {
        JobSeeds {
            folds: derive_seed(global, &["folds", task_id]),
            baseline: derive_seed(global, &["baseline", task_id, &layer.to_string()]),
        }
    }
}

/// A task's sentences located in a store.
#[derive(Debug, Clone)]
pub struct TaskRows {
    pub task_id: String,
    pub rows: Vec<usize>,
    pub labels: Vec<bool>,
    pub pair_ids: Vec<String>,
    pub n_pairs: usize,
}

impl TaskRows {
    pub fn locate(dataset: &Dataset, store: &ActivationStore, task_id: &str) -> Result<Self, ProbeError> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut pair_ids = Vec::new();
        let mut n_pairs = 0;
        for pair in dataset.task_pairs(task_id) {
            n_pairs += 1;
            for (id, label) in [
                (SentenceId::good(&pair.pair_id), true),
                (SentenceId::bad(&pair.pair_id), false),
            ] {
                let row = store
                    .row_of(&id)
                    .ok_or_else(|| ProbeError::MissingSentence(id.clone()))?;
                rows.push(row);
                labels.push(label);
                pair_ids.push(pair.pair_id.clone());
            }
        }
        if n_pairs == 0 {
            return Err(ProbeError::UnknownTask(task_id.to_string()));
        }
        Ok(TaskRows {
            task_id: task_id.to_string(),
            rows,
            labels,
            pair_ids,
            n_pairs,
        })
    }

    fn gather(&self, layer: &LayerMatrix<'_>) -> ProbeData {
        let x = DMatrix::from_fn(self.rows.len(), layer.dim, |i, j| {
            layer.row(self.rows[i])[j] as f64
        });
        ProbeData {
            x,
            labels: self.labels.clone(),
            pair_ids: self.pair_ids.clone(),
        }
    }
}

/// Score one task at one layer of an already-read layer matrix.
pub fn probe_rows(
    task: &TaskRows,
    layer: &LayerMatrix<'_>,
    global_seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeScore, ProbeError> {
    let seeds = JobSeeds::derive(global_seed, &task.task_id, layer.layer);
    let plan = FoldPlan::new(&unique_in_order(&task.pair_ids), config.n_folds, seeds.folds)?;
    let data = task.gather(layer);
    let raw = crossval_f1(&data, &plan, config)?;
    let baseline = random_baseline(
        &task.pair_ids,
        &task.labels,
        layer.dim,
        &RandomBaselineConfig {
            dim: layer.dim,
            seed: seeds.baseline,
        },
        &plan,
        config,
    )?;
    let norm = normalized_perf(raw.mean, baseline.mean);
    Ok(ProbeScore {
        task_id: task.task_id.clone(),
        layer: layer.layer,
        raw_f1_mean: raw.mean,
        raw_f1_std: raw.std,
        raw_fold_scores: raw.fold_scores,
        baseline_f1: baseline.mean,
        baseline_f1_std: baseline.std,
        normalized_perf: norm.value,
        degenerate: norm.degenerate,
        n_pairs: task.n_pairs,
        seed: global_seed,
        config_hash: config.hash(global_seed),
    })
}

fn unique_in_order(ids: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(ids.len() / 2);
    for id in ids {
        if out.last() != Some(id) {
            out.push(id.clone());
        }
    }
    out
}

/// Probe one task at one layer.
pub fn probe_task(
    dataset: &Dataset,
    store: &ActivationStore,
    task_id: &str,
    layer: usize,
    global_seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeScore, ProbeError> {
    let task = TaskRows::locate(dataset, store, task_id)?;
    let matrix = store.read_layer(layer)?;
    probe_rows(&task, &matrix, global_seed, config)
}

/// Probe every (task, layer) combination in parallel. Output is ordered by
/// task (in the given order) then layer, and is identical to a serial run.
pub fn probe_grid(
    dataset: &Dataset,
    store: &ActivationStore,
    task_ids: &[String],
    layers: &[usize],
    global_seed: u64,
    config: &ProbeConfig,
) -> Result<Vec<ProbeScore>, ProbeError> {
    let tasks = task_ids
        .iter()
        .map(|t| TaskRows::locate(dataset, store, t))
        .collect::<Result<Vec<_>, _>>()?;
    let matrices = layers
        .iter()
        .map(|&l| store.read_layer(l))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..matrices.len()).map(move |l| (t, l)))
        .collect();
    jobs.par_iter()
        .map(|&(t, l)| probe_rows(&tasks[t], &matrices[l], global_seed, config))
        .collect()
}

/// Random noise matrix helper used by calibration tests and fixtures.
pub fn noise_matrix(rows: usize, dim: usize, seed: u64, label: &str) -> DMatrix<f64> {
    let mut rng = rng_for(seed, &["noise_matrix", label]);
    DMatrix::from_fn(rows, dim, |_, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_perf_identities() {
        assert_eq!(normalized_perf(0.9, 0.5).value, 0.8);
        assert_eq!(normalized_perf(0.42, 0.42).value, 0.0);
        for b in [0.0, 0.3, 0.7] {
            assert_eq!(normalized_perf(1.0, b).value, 1.0);
        }
        let d = normalized_perf(0.7, 1.0 - 1e-9);
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
        assert!(!normalized_perf(0.7, 1.0 - 2e-9).degenerate);
        assert!(normalized_perf(0.3, 0.5).value < 0.0);
    }

    fn pair_data(n_pairs: usize, x: DMatrix<f64>) -> ProbeData {
        let labels = (0..2 * n_pairs).map(|i| i % 2 == 0).collect();
        let pair_ids = (0..2 * n_pairs).map(|i| format!("p{}", i / 2)).collect();
        ProbeData { x, labels, pair_ids }
    }

    #[test]
    fn identical_rows_null() {
        // every row identical: the probe can only predict one class
        let n_pairs = 50;
        let data = pair_data(n_pairs, DMatrix::from_element(2 * n_pairs, 3, 0.7));
        let ids: Vec<String> = (0..n_pairs).map(|i| format!("p{i}")).collect();
        let plan = FoldPlan::new(&ids, 5, 1).unwrap();
        let r = crossval_f1(&data, &plan, &ProbeConfig::default()).unwrap();
        // balanced training split: w = 0, b = 0, decision 0 is a negative prediction
        assert_eq!(r.fold_scores, vec![0.0; 5]);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn degenerate_fold_detected() {
        let n_pairs = 10;
        let mut data = pair_data(n_pairs, noise_matrix(2 * n_pairs, 2, 1, "x"));
        data.labels.iter_mut().for_each(|l| *l = true);
        let ids: Vec<String> = (0..n_pairs).map(|i| format!("p{i}")).collect();
        let plan = FoldPlan::new(&ids, 5, 1).unwrap();
        assert!(matches!(
            crossval_f1(&data, &plan, &ProbeConfig::default()),
            Err(ProbeError::DegenerateFold(0))
        ));
    }

    #[test]
    fn baseline_dim_mismatch() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let rows: Vec<String> = ids.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let plan = FoldPlan::new(&ids, 5, 1).unwrap();
        let cfg = RandomBaselineConfig { dim: 8, seed: 3 };
        assert!(matches!(
            random_baseline(&rows, &labels, 4, &cfg, &plan, &ProbeConfig::default()),
            Err(ProbeError::DimMismatch { config: 8, store: 4 })
        ));
        let a = random_baseline(&rows, &labels, 8, &cfg, &plan, &ProbeConfig::default()).unwrap();
        let b = random_baseline(&rows, &labels, 8, &cfg, &plan, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_hash_changes_with_inputs() {
        let c = ProbeConfig::default();
        assert_eq!(c.hash(1), c.hash(1));
        assert_ne!(c.hash(1), c.hash(2));
        let c2 = ProbeConfig {
            l2_lambda: 0.5,
            ..ProbeConfig::default()
        };
        assert_ne!(c.hash(1), c2.hash(1));
    }
}
