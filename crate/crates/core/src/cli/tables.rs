//! CSV row types for everything the CLI writes.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{write_atomic, CliError};
use crate::probe::ProbeScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub model: String,
    pub task_id: String,
    pub layer: usize,
    pub raw_f1_mean: f64,
    pub raw_f1_std: f64,
    pub baseline_f1: f64,
    pub baseline_f1_std: f64,
    pub normalized_perf: f64,
    pub degenerate: bool,
    pub n_pairs: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Semicolon-separated raw F1 per fold.
    pub fold_scores: String,
}

impl ProbeRow {
    pub fn from_score(model: &str, s: &ProbeScore) -> Self {
        ProbeRow {
            model: model.to_string(),
            task_id: s.task_id.clone(),
            layer: s.layer,
            raw_f1_mean: s.raw_f1_mean,
            raw_f1_std: s.raw_f1_std,
            baseline_f1: s.baseline_f1,
            baseline_f1_std: s.baseline_f1_std,
            normalized_perf: s.normalized_perf,
            degenerate: s.degenerate,
            n_pairs: s.n_pairs,
            seed: s.seed,
            config_hash: s.config_hash.clone(),
            fold_scores: s
                .raw_fold_scores
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn to_score(&self) -> Result<ProbeScore, CliError> {
        let raw_fold_scores = self
            .fold_scores
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("bad fold score `{s}` in probe table")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProbeScore {
            task_id: self.task_id.clone(),
            layer: self.layer,
            raw_f1_mean: self.raw_f1_mean,
            raw_f1_std: self.raw_f1_std,
            raw_fold_scores,
            baseline_f1: self.baseline_f1,
            baseline_f1_std: self.baseline_f1_std,
            normalized_perf: self.normalized_perf,
            degenerate: self.degenerate,
            n_pairs: self.n_pairs,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub curve_id: String,
    /// `task` or `group`.
    pub kind: String,
    pub layer: usize,
    pub value: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub model: String,
    pub curve_id: String,
    pub kind: String,
    /// Empty when the curve is degenerate.
    pub saturation_layer: Option<usize>,
    pub maximum_layer: usize,
    pub peak_value: f64,
    pub threshold_ratio: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub comparison: String,
    pub curve_id: String,
    pub layer: usize,
    pub value: f64,
    pub std_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub comparison: String,
    pub layer: usize,
    /// Task id, or the duality when the test unit is whole tasks.
    pub unit: String,
    pub duality: String,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferRow {
    pub comparison: String,
    pub layer: usize,
    pub duality: String,
    pub k: usize,
    pub combined_z: f64,
    pub combined_p: f64,
    pub n_clamped: usize,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub model: String,
    pub language: String,
    pub layer: usize,
    pub form: f64,
    pub meaning: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub n_points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub task_id: String,
    pub duality: String,
    /// `direct` or `meta`.
    pub paradigm: String,
    /// `pooled`, `good_first` or `bad_first`.
    pub order: String,
    pub accuracy: f64,
    pub tie_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    /// Task id, or `all` on per-duality rows.
    pub task_id: String,
    pub duality: String,
    pub direct: Option<f64>,
    pub meta: Option<f64>,
    pub neuro: Option<f64>,
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_row_round_trips_exactly() {
        let s = ProbeScore {
            task_id: "t".into(),
            layer: 3,
            raw_f1_mean: 0.1 + 0.2,
            raw_f1_std: 1.0 / 3.0,
            raw_fold_scores: vec![0.1, 2.0f64.sqrt() / 3.0, 1e-17],
            baseline_f1: 0.49999999999999994,
            baseline_f1_std: 0.0,
            normalized_perf: -0.25,
            degenerate: false,
            n_pairs: 500,
            seed: u64::MAX,
            config_hash: "abc".into(),
        };
        let row = ProbeRow::from_score("m", &s);
        let bytes = to_csv(&[row.clone()]).unwrap();
        let back: Vec<ProbeRow> = csv::Reader::from_reader(&bytes[..])
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back[0], row);
        assert_eq!(back[0].to_score().unwrap(), s);
    }
}
