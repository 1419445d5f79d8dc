//! Run configuration: TOML file, `PROBEKIT_*` environment overrides, task
//! grouping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::corpus::{Duality, Level, TaskSpec};
use crate::layers::DEFAULT_THRESHOLD_RATIO;
use crate::probe::ProbeConfig;
use crate::psycholing::{PromptOrder, PromptTemplates};
use crate::stats::TTestKind;

pub const DEFAULT_GROUPING: &str = include_str!("../../config/default_grouping.toml");

/// Where a task sits in the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskGroup {
    pub duality: Duality,
    pub level: Level,
    /// Aggregate curve this task contributes to; the duality name by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_pair_count: Option<usize>,
}

impl TaskGroup {
    pub fn group_name(&self) -> &str {
        self.group.as_deref().unwrap_or(self.duality.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingFile {
    #[serde(default)]
    pub tasks: BTreeMap<String, TaskGroup>,
}

impl GroupingFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("grouping: {e}")))
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_GROUPING).expect("built-in grouping parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_language")]
    pub language: String,
    pub datasets: Vec<PathBuf>,
    pub store: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_scores: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_scores: Option<PathBuf>,
    /// Wrapper for metalinguistic prompts with a `{prompt}` placeholder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_wrapper: Option<String>,
}

fn default_language() -> String {
    "en".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestUnit {
    /// Per-task tests on fold scores, combined across tasks with Stouffer.
    #[default]
    Folds,
    /// One test per condition on per-task scores.
    Tasks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub threshold_ratio: f64,
    /// `[a, b]` model pairs; difference curves and tests are `a - b`.
    pub comparisons: Vec<[String; 2]>,
    pub ttest_kind: TTestKind,
    pub ttest_unit: TTestUnit,
    /// Layer for the form-vs-meaning scatter and the neuro column; last by default.
    pub score_layer: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
            comparisons: Vec::new(),
            ttest_kind: TTestKind::Welch,
            ttest_unit: TTestUnit::Folds,
            score_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsycholingConfig {
    pub order_balancing: bool,
    pub single_order: PromptOrder,
    pub templates: PromptTemplates,
}

impl Default for PsycholingConfig {
    fn default() -> Self {
        PsycholingConfig {
            order_balancing: true,
            single_order: PromptOrder::GoodFirst,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    /// Layers to probe; all layers when empty.
    #[serde(default)]
    pub layers: Vec<usize>,
    /// Grouping file; the built-in grouping when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<PathBuf>,
    /// Inline grouping entries, applied over the grouping file.
    #[serde(default)]
    pub tasks: BTreeMap<String, TaskGroup>,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub psycholing: PsycholingConfig,
    #[serde(skip)]
    digest: Option<String>,
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load, apply environment overrides, and resolve relative paths against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.digest = Some(cfg.compute_hash());
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        fn parsed<T: std::str::FromStr>(key: &str, v: String) -> Result<T, CliError> {
            v.parse()
                .map_err(|_| CliError::Config(format!("{key}: cannot parse `{v}`")))
        }
        if let Some(v) = get("PROBEKIT_RUN_DIR") {
            self.run_dir = PathBuf::from(v);
        }
        if let Some(v) = get("PROBEKIT_SEED") {
            self.seed = parsed("PROBEKIT_SEED", v)?;
        }
        if let Some(v) = get("PROBEKIT_THREADS") {
            self.threads = parsed("PROBEKIT_THREADS", v)?;
        }
        if let Some(v) = get("PROBEKIT_L2_LAMBDA") {
            self.probe.l2_lambda = parsed("PROBEKIT_L2_LAMBDA", v)?;
        }
        if let Some(v) = get("PROBEKIT_N_FOLDS") {
            self.probe.n_folds = parsed("PROBEKIT_N_FOLDS", v)?;
        }
        if let Some(v) = get("PROBEKIT_MAX_ITER") {
            self.probe.max_iter = parsed("PROBEKIT_MAX_ITER", v)?;
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_dir);
        if let Some(g) = self.grouping.as_mut() {
            fix(g);
        }
        for m in &mut self.models {
            m.datasets.iter_mut().for_each(fix);
            fix(&mut m.store);
            if let Some(p) = m.token_scores.as_mut() {
                fix(p);
            }
            if let Some(p) = m.continuation_scores.as_mut() {
                fix(p);
            }
        }
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.models.is_empty() {
            return Err(CliError::Config("no [[models]] configured".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(CliError::Config(format!("duplicate model `{}`", m.name)));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("invalid model name `{}`", m.name)));
            }
        }
        for [a, b] in &self.analysis.comparisons {
            for n in [a, b] {
                if !names.contains(n.as_str()) {
                    return Err(CliError::Config(format!("comparison references unknown model `{n}`")));
                }
            }
        }
        if !(self.analysis.threshold_ratio > 0.0 && self.analysis.threshold_ratio <= 1.0) {
            return Err(CliError::Config("threshold_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Grouping file (or built-in default) overlaid with inline entries.
    pub fn grouping(&self) -> Result<BTreeMap<String, TaskGroup>, CliError> {
        let mut tasks = match &self.grouping {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                GroupingFile::parse(&text)?.tasks
            }
            None => GroupingFile::builtin().tasks,
        };
        tasks.extend(self.tasks.clone());
        Ok(tasks)
    }

    /// Digest of the configuration as written (after environment overrides,
    /// before path resolution). The thread count is excluded since it cannot
    /// change any output.
    pub fn hash(&self) -> String {
        self.digest.clone().unwrap_or_else(|| self.compute_hash())
    }

    fn compute_hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.digest = None;
        let canonical = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

/// Validation specs derived from the grouping.
pub fn task_specs(grouping: &BTreeMap<String, TaskGroup>, language: &str) -> Vec<TaskSpec> {
    grouping
        .iter()
        .filter_map(|(id, g)| {
            g.expected_pair_count.map(|n| TaskSpec {
                task_id: id.clone(),
                name: g.name.clone().unwrap_or_else(|| id.clone()),
                duality: g.duality,
                level: g.level,
                language: language.to_string(),
                expected_pair_count: n,
            })
        })
        .collect()
}
