//! `psycholing`: direct and metalinguistic accuracy per task, joined with the
//! probing result at the score layer.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use super::config::{ModelConfig, RunConfig};
use super::svg::bar_plot;
use super::tables::{to_csv, AccuracyRow, ComparisonRow};
use super::{load_model_dataset, probe_table_path, read_probe_table, update_manifest, write_atomic, CliError, Summary};
use crate::corpus::{Dataset, Duality};
use crate::psycholing::{
    accuracy_of, build_prompts, direct_score, meta_score, Accuracy, ContinuationIndex, DirectResult, MetaPrompt,
    MetaResult, PromptOrder, PromptTemplates, TokenScoreIndex,
};
use crate::store::scores::{read_continuation_scores, read_token_scores, write_jsonl};

pub fn prompts_path(cfg: &RunConfig, model: &str) -> PathBuf {
    cfg.run_dir.join("psycholing").join("prompts").join(format!("{model}.jsonl"))
}

pub fn model_templates(cfg: &RunConfig, model: &ModelConfig) -> PromptTemplates {
    let mut t = cfg.psycholing.templates.clone();
    if model.prompt_wrapper.is_some() {
        t.wrapper = model.prompt_wrapper.clone();
    }
    t
}

pub fn model_prompts(cfg: &RunConfig, model: &ModelConfig, ds: &Dataset) -> Result<Vec<MetaPrompt>, CliError> {
    Ok(build_prompts(
        ds,
        cfg.psycholing.order_balancing,
        cfg.psycholing.single_order,
        &model_templates(cfg, model),
    )?)
}

fn direct_results(model: &ModelConfig, ds: &Dataset, summary: &mut Summary) -> Result<Option<Vec<DirectResult>>, CliError> {
    let Some(path) = &model.token_scores else {
        summary.warn(format!("{}: no token-score dump; direct paradigm skipped", model.name));
        return Ok(None);
    };
    let file = read_token_scores(path)?;
    if let Some(conv) = file.header.get("bos_convention") {
        log::info!("{}: token scores declare bos_convention = {conv}", model.name);
    }
    let known: HashSet<&str> = ds.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let extra = file.records.iter().filter(|r| !known.contains(r.pair_id.as_str())).count();
    if extra > 0 {
        summary.warn(format!("{}: {extra} token-score records match no pair", model.name));
    }
    let index = TokenScoreIndex::new(&file.records);
    let results = ds
        .pairs
        .iter()
        .map(|p| direct_score(p, &index))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(results))
}

fn meta_results(
    model: &ModelConfig,
    prompts: &[MetaPrompt],
    summary: &mut Summary,
) -> Result<Option<Vec<MetaResult>>, CliError> {
    let Some(path) = &model.continuation_scores else {
        summary.warn(format!(
            "{}: no continuation-score dump; metalinguistic paradigm skipped (direct-only table)",
            model.name
        ));
        return Ok(None);
    };
    let file = read_continuation_scores(path)?;
    let index = ContinuationIndex::new(&file.records);
    let results = prompts
        .iter()
        .map(|p| meta_score(p, &index))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(results))
}

fn accuracy_row(model: &str, task: &str, duality: Duality, paradigm: &str, order: &str, a: Accuracy) -> AccuracyRow {
    AccuracyRow {
        model: model.to_string(),
        task_id: task.to_string(),
        duality: duality.as_str().to_string(),
        paradigm: paradigm.to_string(),
        order: order.to_string(),
        accuracy: a.accuracy,
        tie_rate: a.tie_rate,
        n: a.n,
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Accuracy tables for every model; `emit_prompts` also writes the prompt
/// batches the extractor consumes.
pub fn cmd_psycholing(cfg: &RunConfig, emit_prompts: bool) -> Result<Summary, CliError> {
    let mut summary = Summary::default();
    let mut accuracy = Vec::new();
    let mut comparison = Vec::new();
    let mut by_duality = Vec::new();
    let dir = cfg.run_dir.join("psycholing");
    for model in &cfg.models {
        let ds = load_model_dataset(model)?;
        let prompts = model_prompts(cfg, model, &ds)?;
        if emit_prompts {
            let path = prompts_path(cfg, &model.name);
            let mut bytes = Vec::new();
            let header = BTreeMap::from([
                ("model".to_string(), model.name.clone()),
                ("order_balancing".to_string(), cfg.psycholing.order_balancing.to_string()),
                ("wrapped".to_string(), model_templates(cfg, model).wrapper.is_some().to_string()),
            ]);
            write_jsonl(&mut bytes, &header, &prompts)?;
            write_atomic(&path, &bytes)?;
            summary.outputs.push(path);
        }
        let direct = direct_results(model, &ds, &mut summary)?;
        let meta = meta_results(model, &prompts, &mut summary)?;
        let neuro: Option<BTreeMap<String, f64>> = if probe_table_path(cfg, &model.name).exists() {
            let scores = read_probe_table(cfg, &model.name)?;
            let layer = match cfg.analysis.score_layer {
                Some(l) => l,
                None => scores.iter().map(|s| s.layer).max().unwrap_or(0),
            };
            Some(
                scores
                    .into_iter()
                    .filter(|s| s.layer == layer)
                    .map(|s| (s.task_id, s.normalized_perf))
                    .collect(),
            )
        } else {
            summary.warn(format!("{}: no probe table; neuro column left empty", model.name));
            None
        };

        let mut rows = Vec::new();
        for task in ds.task_ids() {
            let duality = ds.task_pairs(&task).next().expect("task has pairs").duality;
            let direct_acc = direct
                .as_ref()
                .and_then(|r| accuracy_of(r.iter().filter(|x| x.task_id == task)));
            if let Some(a) = direct_acc {
                accuracy.push(accuracy_row(&model.name, &task, duality, "direct", "pooled", a));
            }
            let meta_acc = match &meta {
                Some(results) => {
                    let of_task: Vec<&MetaResult> = results.iter().filter(|x| x.task_id == task).collect();
                    let pooled = accuracy_of(of_task.iter().copied());
                    if let Some(a) = pooled {
                        accuracy.push(accuracy_row(&model.name, &task, duality, "meta", "pooled", a));
                    }
                    if cfg.psycholing.order_balancing {
                        for order in [PromptOrder::GoodFirst, PromptOrder::BadFirst] {
                            if let Some(a) = accuracy_of(of_task.iter().copied().filter(|x| x.order == order)) {
                                accuracy.push(accuracy_row(&model.name, &task, duality, "meta", order.as_str(), a));
                            }
                        }
                    }
                    pooled
                }
                None => None,
            };
            rows.push(ComparisonRow {
                model: model.name.clone(),
                task_id: task.clone(),
                duality: duality.as_str().to_string(),
                direct: direct_acc.map(|a| a.accuracy),
                meta: meta_acc.map(|a| a.accuracy),
                neuro: neuro.as_ref().and_then(|n| n.get(&task).copied()),
            });
        }
        for duality in [Duality::Form, Duality::Meaning] {
            let members: Vec<&ComparisonRow> = rows.iter().filter(|r| r.duality == duality.as_str()).collect();
            if members.is_empty() {
                continue;
            }
            by_duality.push(ComparisonRow {
                model: model.name.clone(),
                task_id: "all".into(),
                duality: duality.as_str().to_string(),
                direct: mean(members.iter().map(|r| r.direct)),
                meta: mean(members.iter().map(|r| r.meta)),
                neuro: mean(members.iter().map(|r| r.neuro)),
            });
        }
        comparison.extend(rows);
    }

    for (name, bytes) in [
        ("accuracy.csv", to_csv(&accuracy)?),
        ("comparison.csv", to_csv(&comparison)?),
        ("comparison_by_duality.csv", to_csv(&by_duality)?),
    ] {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        summary.outputs.push(p);
    }
    let categories: Vec<String> = by_duality.iter().map(|r| format!("{} {}", r.model, r.duality)).collect();
    let values: Vec<Vec<f64>> = [
        |r: &ComparisonRow| r.direct,
        |r: &ComparisonRow| r.meta,
        |r: &ComparisonRow| r.neuro,
    ]
    .iter()
    .map(|f| by_duality.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect())
    .collect();
    let p = dir.join("plots").join("paradigms.svg");
    let body = bar_plot(
        "Direct vs meta vs neuro",
        "score",
        &categories,
        &["direct".into(), "meta".into(), "neuro".into()],
        &values,
    );
    write_atomic(&p, body.as_bytes())?;
    summary.outputs.push(p);
    summary.outputs.push(update_manifest(cfg)?);
    Ok(summary)
}
