//! Planted-signal activation stores for end-to-end testing.
//!
//! Below a task's signal layer, good and bad vectors are i.i.d. standard
//! normal. From the signal layer on, good vectors are shifted by
//! `+separation * u` and bad vectors by `-separation * u` along a fixed unit
//! direction `u` drawn per task.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Role, SentenceId, StoreData, StoreError, StoreHeader};
use crate::corpus::{Dataset, Duality, Level, MinimalPair};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSignal {
    pub task_id: String,
    pub signal_layer: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub n_pairs: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub signal_layer: usize,
    pub separation: f64,
    pub seed: u64,
}

fn check(n_layers: usize, hidden_dim: usize, signal: &TaskSignal) -> Result<(), StoreError> {
    if n_layers == 0 || hidden_dim == 0 {
        return Err(StoreError::InvalidHeader(
            "n_layers and hidden_dim must be >= 1".into(),
        ));
    }
    if signal.signal_layer >= n_layers {
        return Err(StoreError::InvalidHeader(format!(
            "signal_layer {} must be < n_layers {n_layers}",
            signal.signal_layer
        )));
    }
    if !(signal.separation > 0.0 && signal.separation.is_finite()) {
        return Err(StoreError::InvalidHeader(format!(
            "separation must be positive, got {}",
            signal.separation
        )));
    }
    Ok(())
}

/// Build a store covering every pair of `dataset`, planting each task's signal.
/// Tasks without a `TaskSignal` entry are pure noise at every layer.
pub fn plant_signal(
    dataset: &Dataset,
    signals: &[TaskSignal],
    model_name: &str,
    n_layers: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<StoreData, StoreError> {
    let by_task: HashMap<&str, &TaskSignal> =
        signals.iter().map(|s| (s.task_id.as_str(), s)).collect();
    for s in signals {
        check(n_layers, hidden_dim, s)?;
    }
    let mut directions: HashMap<&str, Vec<f64>> = HashMap::new();
    for s in signals {
        let mut rng = rng_for(seed, &["direction", &s.task_id]);
        let mut u: Vec<f64> = (0..hidden_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        directions.insert(&s.task_id, u);
    }

    let sentences: Vec<SentenceId> = dataset
        .pairs
        .iter()
        .flat_map(|p| [SentenceId::good(&p.pair_id), SentenceId::bad(&p.pair_id)])
        .collect();
    let task_of: Vec<&str> = dataset
        .pairs
        .iter()
        .flat_map(|p| [p.task_id.as_str(), p.task_id.as_str()])
        .collect();
    let header = StoreHeader::new(model_name, n_layers, hidden_dim, sentences);
    header.validate()?;

    let mut rng = rng_for(seed, &["noise"]);
    let mut payload = Vec::with_capacity(n_layers * header.n_sentences() * hidden_dim);
    for layer in 0..n_layers {
        for (sentence, task) in header.sentences.iter().zip(&task_of) {
            let shift = by_task
                .get(task)
                .filter(|s| layer >= s.signal_layer)
                .map(|s| match sentence.role {
                    Role::Good => s.separation,
                    Role::Bad => -s.separation,
                });
            for d in 0..hidden_dim {
                let mut v: f64 = rng.sample(StandardNormal);
                if let Some(shift) = shift {
                    v += shift * directions[task][d];
                }
                payload.push(v as f32);
            }
        }
    }
    StoreData::from_payload(header, payload)
}

/// Single-task convenience: a trivial dataset plus its planted store.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<(StoreData, Dataset), StoreError> {
    let task_id = "synthetic";
    let signal = TaskSignal {
        task_id: task_id.to_string(),
        signal_layer: params.signal_layer,
        separation: params.separation,
    };
    check(params.n_layers, params.hidden_dim, &signal)?;
    let dataset = Dataset::new(
        (0..params.n_pairs)
            .map(|i| MinimalPair {
                pair_id: format!("syn_{i}"),
                task_id: task_id.to_string(),
                sentence_good: format!("Synthetic sentence {i} is fine."),
                sentence_bad: format!("Synthetic sentence {i} are fine."),
                language: "en".to_string(),
                duality: Duality::Form,
                phenomenon: "synthetic".to_string(),
                level: Level::Unlabeled,
                concept_good: None,
                concept_bad: None,
            })
            .collect(),
    );
    let store = plant_signal(
        &dataset,
        &[signal],
        "synthetic",
        params.n_layers,
        params.hidden_dim,
        params.seed,
    )?;
    Ok((store, dataset))
}
