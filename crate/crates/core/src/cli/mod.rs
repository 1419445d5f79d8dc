//! Orchestration behind the `probekit` binary. Every command reads a
//! [`RunConfig`](config::RunConfig), writes under its run directory, and
//! refreshes `manifest.json` there.

pub mod analyze;
pub mod config;
pub mod fixtures;
pub mod paradigms;
pub mod report;
pub mod svg;
pub mod tables;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::comps::{apply_overlay, build_comps, ConceptPropertyTable, CorrectionOverlay};
use crate::corpus::{load_pairs, validate_dataset, CorpusError, Dataset, PairFormat};
use crate::layers::LayerError;
use crate::probe::{probe_task, ProbeError, ProbeScore};
use crate::psycholing::PsycholingError;
use crate::stats::StatsError;
use crate::store::scores::{read_continuation_scores, read_token_scores, ScoreError};
use crate::store::{integrity_check, ActivationStore, SentenceId, StoreError};
use config::{task_specs, ModelConfig, RunConfig};
use tables::{read_csv, write_csv, ProbeRow};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(CorpusError, StoreError, ScoreError, PsycholingError, LayerError, std::io::Error, serde_json::Error);

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::NonFinite => CliError::Numeric(e.to_string()),
            ProbeError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

/// What a command produced, plus anything worth telling the user.
#[derive(Debug, Default)]
pub struct Summary {
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Write through a temporary sibling, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries = std::fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_path_buf();
            let name = rel.to_string_lossy();
            if name != MANIFEST && !name.ends_with(".tmp") {
                out.push(rel);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    probe_config_hash: String,
    files: BTreeMap<String, String>,
}

/// Rewrite `manifest.json` with the digest of every file in the run directory.
pub fn update_manifest(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.run_dir)?;
    let mut files = Vec::new();
    collect_files(&cfg.run_dir, &cfg.run_dir, &mut files)?;
    let mut digests = BTreeMap::new();
    for rel in files {
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        digests.insert(key, sha256_file(&cfg.run_dir.join(&rel))?);
    }
    let manifest = Manifest {
        tool: "probekit",
        version: TOOL_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        probe_config_hash: cfg.probe.hash(cfg.seed),
        files: digests,
    };
    let path = cfg.run_dir.join(MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_model_dataset(model: &ModelConfig) -> Result<Dataset, CliError> {
    let mut ds = Dataset::default();
    for path in &model.datasets {
        ds.extend(load_pairs(path, PairFormat::from_path(path))?);
    }
    let mut seen = HashSet::new();
    for p in &ds.pairs {
        if !seen.insert(p.pair_id.as_str()) {
            return Err(CliError::Data(format!(
                "model `{}`: pair id `{}` appears in more than one dataset",
                model.name, p.pair_id
            )));
        }
    }
    Ok(ds)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Check datasets against the grouping, store integrity and coverage, and
/// score dumps. Writes nothing.
pub fn cmd_validate(cfg: &RunConfig) -> Result<Summary, CliError> {
    let grouping = cfg.grouping()?;
    let mut summary = Summary::default();
    let mut problems = Vec::new();
    for model in &cfg.models {
        let ds = match load_model_dataset(model) {
            Ok(ds) => ds,
            Err(e) => {
                problems.push(format!("{}: {e}", model.name));
                continue;
            }
        };
        let report = validate_dataset(&ds, &task_specs(&grouping, &model.language));
        for v in &report.violations {
            problems.push(format!("{}: {v}", model.name));
        }
        for m in &report.count_mismatches {
            problems.push(format!(
                "{}: task `{}` has {} pairs, expected {}",
                model.name, m.task_id, m.found, m.expected
            ));
        }
        for t in ds.task_ids() {
            if !grouping.contains_key(&t) {
                summary.warn(format!("{}: task `{t}` is not in the grouping", model.name));
            }
        }
        match integrity_check(&model.store) {
            Ok(header) => {
                let ids: HashSet<&SentenceId> = header.sentences.iter().collect();
                let missing = ds
                    .pairs
                    .iter()
                    .flat_map(|p| [SentenceId::good(&p.pair_id), SentenceId::bad(&p.pair_id)])
                    .filter(|id| !ids.contains(id))
                    .count();
                if missing > 0 {
                    problems.push(format!("{}: {missing} sentences missing from store", model.name));
                }
            }
            Err(e) => problems.push(format!("{}: store {}: {e}", model.name, model.store.display())),
        }
        if let Some(p) = &model.token_scores {
            if let Err(e) = read_token_scores(p) {
                problems.push(format!("{}: {e}", model.name));
            }
        }
        if let Some(p) = &model.continuation_scores {
            if let Err(e) = read_continuation_scores(p) {
                problems.push(format!("{}: {e}", model.name));
            }
        }
        info!("{}: {} pairs in {} tasks", model.name, ds.len(), report.task_counts.len());
    }
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Data(problems.join("\n")))
    }
}

/// Build conceptual pairs from a relation table, optionally corrected.
pub fn cmd_build_comps(
    table: &Path,
    overlay: Option<&Path>,
    language: &str,
    out: &Path,
) -> Result<Summary, CliError> {
    let mut table = ConceptPropertyTable::load(table)?;
    if let Some(o) = overlay {
        table = apply_overlay(&table, &CorrectionOverlay::load(o)?)?;
    }
    let ds = build_comps(&table, language)?;
    let format = PairFormat::from_path(out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(out, format)?;
    Ok(Summary {
        outputs: vec![out.to_path_buf()],
        warnings: Vec::new(),
    })
}

pub fn probe_table_path(cfg: &RunConfig, model: &str) -> PathBuf {
    cfg.run_dir.join("probe").join(format!("{model}.csv"))
}

/// Probe rows of one model, ordered by task then layer.
pub fn read_probe_table(cfg: &RunConfig, model: &str) -> Result<Vec<ProbeScore>, CliError> {
    let path = probe_table_path(cfg, model);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no probe table for model `{model}` at {}; run `probe` first",
            path.display()
        )));
    }
    read_csv::<ProbeRow>(&path)?.iter().map(ProbeRow::to_score).collect()
}

fn write_probe_outputs(cfg: &RunConfig, model: &str, scores: &[ProbeScore]) -> Result<Vec<PathBuf>, CliError> {
    let csv_path = probe_table_path(cfg, model);
    let rows: Vec<ProbeRow> = scores.iter().map(|s| ProbeRow::from_score(model, s)).collect();
    write_csv(&csv_path, &rows)?;
    let json_path = csv_path.with_extension("json");
    write_json(&json_path, &scores)?;
    Ok(vec![csv_path, json_path])
}

/// Probe every (task, layer) of every model. Rows already present with the
/// current config hash are reused.
pub fn cmd_probe(cfg: &RunConfig) -> Result<Summary, CliError> {
    let config_hash = cfg.probe.hash(cfg.seed);
    // open all inputs before writing
    let mut inputs = Vec::new();
    for model in &cfg.models {
        let ds = load_model_dataset(model)?;
        let store = ActivationStore::open(&model.store)?;
        let layers: Vec<usize> = if cfg.layers.is_empty() {
            (0..store.n_layers()).collect()
        } else {
            cfg.layers.clone()
        };
        if let Some(&bad) = layers.iter().find(|&&l| l >= store.n_layers()) {
            return Err(CliError::Config(format!(
                "layer {bad} out of range for `{}` ({} layers)",
                model.name,
                store.n_layers()
            )));
        }
        inputs.push((model, ds, store, layers));
    }
    let pool = thread_pool(cfg.threads)?;
    let mut summary = Summary::default();
    for (model, ds, store, layers) in &inputs {
        let path = probe_table_path(cfg, &model.name);
        let mut done: BTreeMap<(String, usize), ProbeScore> = BTreeMap::new();
        if path.exists() {
            match read_csv::<ProbeRow>(&path) {
                Ok(rows) => {
                    for r in rows.iter().filter(|r| r.config_hash == config_hash) {
                        done.insert((r.task_id.clone(), r.layer), r.to_score()?);
                    }
                }
                Err(e) => summary.warn(format!("ignoring unreadable probe table: {e}")),
            }
        }
        let tasks = ds.task_ids();
        let wanted: BTreeSet<(String, usize)> = tasks
            .iter()
            .flat_map(|t| layers.iter().map(move |&l| (t.clone(), l)))
            .collect();
        done.retain(|k, _| wanted.contains(k));
        let reused = done.len();
        for task in &tasks {
            let missing: Vec<usize> = layers
                .iter()
                .copied()
                .filter(|&l| !done.contains_key(&(task.clone(), l)))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let scores = pool.install(|| {
                missing
                    .par_iter()
                    .map(|&l| probe_task(ds, store, task, l, cfg.seed, &cfg.probe))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            for s in scores {
                done.insert((s.task_id.clone(), s.layer), s);
            }
            // checkpoint per task
            let partial: Vec<ProbeScore> = done.values().cloned().collect();
            write_csv(&path, &partial.iter().map(|s| ProbeRow::from_score(&model.name, s)).collect::<Vec<_>>())?;
            info!("{}: probed task `{task}` on {} layers", model.name, missing.len());
        }
        let scores: Vec<ProbeScore> = done.into_values().collect();
        info!(
            "{}: {} rows ({} reused)",
            model.name,
            scores.len(),
            reused
        );
        summary.outputs.extend(write_probe_outputs(cfg, &model.name, &scores)?);
    }
    summary.outputs.push(update_manifest(cfg)?);
    Ok(summary)
}
