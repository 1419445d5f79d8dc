//! `fixtures`: a self-consistent miniature world (pairs, stores with a planted
//! signal, token and continuation score dumps with constructed accuracies,
//! and a run config) for offline end-to-end runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_atomic, write_json, CliError, Summary};
use crate::corpus::comps::{build_comps, Concept, ConceptPropertyTable, Property, Relation, RelationKind};
use crate::corpus::{Dataset, Duality, Level, MinimalPair, PairFormat};
use crate::psycholing::{build_prompts, PromptOrder, PromptTemplates};
use crate::seed::{derive_seed, rng_for};
use crate::store::scores::{write_jsonl, ContinuationScore, TokenScore, TokenScoreRecord};
use crate::store::synthetic::{plant_signal, TaskSignal};
use crate::store::Role;

/// Form tasks: (task id, level, acceptable template, unacceptable template).
const FORM_TASKS: [(&str, Level, &str, &str); 4] = [
    ("subject_verb_agreement", Level::Morphology, "The keeper {i} is asleep", "The keeper {i} are asleep"),
    ("determiner_noun_agreement", Level::Morphology, "This box {i} was lost", "These box {i} was lost"),
    ("island_effects", Level::Syntax, "Who did guest {i} think that Ann saw", "Who did guest {i} wonder whether Ann saw"),
    ("npi_licensing", Level::SemanticsSyntaxInterface, "No student {i} has ever left", "A student {i} has ever left"),
];
const MEANING_RELATIONS: [RelationKind; 2] = [RelationKind::Taxonomy, RelationKind::PropertyNorms];
const N_CONCEPTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureModel {
    pub name: String,
    pub form_separation: f64,
    pub meaning_separation: f64,
    /// Fraction of pairs per task on which the acceptable sentence wins.
    pub direct_accuracy: f64,
    /// Fraction of prompts per task and order answered correctly.
    pub meta_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub seed: u64,
    pub n_pairs: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub signal_layer: usize,
    pub models: Vec<FixtureModel>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let model = |name: &str, form, meaning, direct, meta| FixtureModel {
            name: name.into(),
            form_separation: form,
            meaning_separation: meaning,
            direct_accuracy: direct,
            meta_accuracy: meta,
        };
        FixtureConfig {
            seed: 42,
            n_pairs: 500,
            n_layers: 12,
            hidden_dim: 64,
            signal_layer: 4,
            models: vec![
                model("base", 3.0, 3.0, 0.8, 0.6),
                model("chat", 3.0, 3.0, 0.85, 0.75),
                model("weak", 0.5, 0.3, 0.65, 0.5),
            ],
        }
    }
}

impl FixtureConfig {
    fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_pairs < 5 {
            return bad(format!("n_pairs must be >= 5, got {}", self.n_pairs));
        }
        if self.n_pairs > N_CONCEPTS * N_CONCEPTS {
            return bad(format!("n_pairs must be <= {}", N_CONCEPTS * N_CONCEPTS));
        }
        if self.models.is_empty() {
            return bad("fixture needs at least one model".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(&m.name) {
                return bad(format!("duplicate fixture model `{}`", m.name));
            }
            for a in [m.direct_accuracy, m.meta_accuracy] {
                if !(0.0..=1.0).contains(&a) {
                    return bad(format!("accuracy {a} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<String> {
        FORM_TASKS
            .iter()
            .map(|t| t.0.to_string())
            .chain(MEANING_RELATIONS.iter().map(|r| r.task_id()))
            .collect()
    }
}

fn pseudo_word(k: usize) -> String {
    const SYL: [&str; 8] = ["ba", "ko", "mi", "ru", "te", "la", "no", "si"];
    let mut w = String::new();
    let mut x = k + 8;
    while x > 0 {
        w.push_str(SYL[x % 8]);
        x /= 8;
    }
    w
}

/// Concept/property table yielding `n_pairs` relations of each fixture kind.
pub fn fixture_table(n_pairs: usize) -> ConceptPropertyTable {
    let n_props = n_pairs.div_ceil(N_CONCEPTS);
    let concepts = (0..N_CONCEPTS)
        .map(|k| Concept {
            concept_id: format!("c{k}"),
            surface: BTreeMap::from([("en".to_string(), pseudo_word(k))]),
        })
        .collect();
    let properties = (0..n_props)
        .map(|j| Property {
            property_id: format!("p{j}"),
            templates: BTreeMap::from([("en".to_string(), format!("<C> is known for trait {j}"))]),
            notes: BTreeMap::new(),
        })
        .collect();
    let mut relations = Vec::new();
    for (r, &kind) in MEANING_RELATIONS.iter().enumerate() {
        for i in 0..n_pairs {
            let (pos, prop) = (i % N_CONCEPTS, i / N_CONCEPTS);
            let offset = 1 + (prop + 3 * r) % (N_CONCEPTS - 1);
            relations.push(Relation {
                concept_pos: format!("c{pos}"),
                concept_neg: format!("c{}", (pos + offset) % N_CONCEPTS),
                relation: kind,
                property_id: format!("p{prop}"),
            });
        }
    }
    ConceptPropertyTable {
        concepts,
        properties,
        relations,
    }
}

pub fn fixture_dataset(n_pairs: usize) -> Result<Dataset, CliError> {
    let mut pairs = Vec::new();
    for (task, level, good, bad) in FORM_TASKS {
        for i in 0..n_pairs {
            pairs.push(MinimalPair {
                pair_id: format!("{task}_{i}"),
                task_id: task.to_string(),
                sentence_good: good.replace("{i}", &i.to_string()),
                sentence_bad: bad.replace("{i}", &i.to_string()),
                language: "en".into(),
                duality: Duality::Form,
                phenomenon: task.replace('_', " "),
                level,
                concept_good: None,
                concept_bad: None,
            });
        }
    }
    let mut ds = Dataset::new(pairs);
    ds.extend(build_comps(&fixture_table(n_pairs), "en")?);
    Ok(ds)
}

/// Indices of `n` items, the first `round(accuracy * n)` of which (after a
/// seeded shuffle) are marked correct.
fn correct_mask(n: usize, accuracy: f64, rng: &mut impl Rng) -> Vec<bool> {
    let k = (accuracy * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut mask = vec![false; n];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

fn token_scores(ds: &Dataset, model: &FixtureModel, seed: u64) -> Vec<TokenScoreRecord> {
    let mut rng = rng_for(seed, &["token_scores", &model.name]);
    let mut out = Vec::with_capacity(2 * ds.len());
    for task in ds.task_ids() {
        let pairs: Vec<&MinimalPair> = ds.task_pairs(&task).collect();
        let mask = correct_mask(pairs.len(), model.direct_accuracy, &mut rng);
        for (pair, good_wins) in pairs.into_iter().zip(mask) {
            let mut draw = |s: &str| -> Vec<TokenScore> {
                s.split_whitespace()
                    .map(|w| TokenScore {
                        token: w.to_string(),
                        logprob: rng.gen_range(-9.0..-0.5),
                    })
                    .collect()
            };
            let mut good = draw(&pair.sentence_good);
            let mut bad = draw(&pair.sentence_bad);
            let margin: f64 = rng.gen_range(0.5..3.0);
            let total = |t: &[TokenScore]| t.iter().map(|x| x.logprob).sum::<f64>();
            let (winner, loser) = if good_wins { (&good, &mut bad) } else { (&bad, &mut good) };
            let excess = total(loser) - (total(winner) - margin);
            if excess > 0.0 {
                loser.last_mut().expect("non-empty sentence").logprob -= excess;
            }
            out.push(TokenScoreRecord { pair_id: pair.pair_id.clone(), role: Role::Good, tokens: good });
            out.push(TokenScoreRecord { pair_id: pair.pair_id.clone(), role: Role::Bad, tokens: bad });
        }
    }
    out
}

fn continuation_scores(ds: &Dataset, model: &FixtureModel, seed: u64) -> Result<Vec<ContinuationScore>, CliError> {
    let prompts = build_prompts(ds, true, PromptOrder::GoodFirst, &PromptTemplates::default())?;
    let mut rng = rng_for(seed, &["continuation_scores", &model.name]);
    let mut out = Vec::with_capacity(2 * prompts.len());
    for task in ds.task_ids() {
        for order in [PromptOrder::GoodFirst, PromptOrder::BadFirst] {
            let group: Vec<_> = prompts.iter().filter(|p| p.task_id == task && p.option_order == order).collect();
            let mask = correct_mask(group.len(), model.meta_accuracy, &mut rng);
            for (p, correct) in group.into_iter().zip(mask) {
                let best: f64 = rng.gen_range(-2.0..-0.1);
                let other = best - rng.gen_range(0.2..2.0);
                for label in &p.option_labels {
                    let is_correct = *label == p.correct_option_label;
                    out.push(ContinuationScore {
                        prompt_id: p.prompt_id.clone(),
                        option_label: label.clone(),
                        logprob: if is_correct == correct { best } else { other },
                    });
                }
            }
        }
    }
    Ok(out)
}

fn fixture_run_config(cfg: &FixtureConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run_dir = \"run\"\nseed = {}\ngrouping = \"grouping.toml\"\n", cfg.seed);
    let _ = writeln!(s, "[analysis]");
    if cfg.models.len() >= 2 {
        let _ = writeln!(s, "comparisons = [[\"{}\", \"{}\"]]", cfg.models[1].name, cfg.models[0].name);
    }
    for m in &cfg.models {
        let _ = writeln!(
            s,
            "\n[[models]]\nname = \"{0}\"\nlanguage = \"en\"\ndatasets = [\"pairs.jsonl\"]\nstore = \"{0}.mps\"\ntoken_scores = \"{0}.tokens.jsonl\"\ncontinuation_scores = \"{0}.continuations.jsonl\"",
            m.name
        );
    }
    s
}

fn fixture_grouping(cfg: &FixtureConfig) -> String {
    let mut s = String::new();
    for (task, level, _, _) in FORM_TASKS {
        let _ = writeln!(
            s,
            "[tasks.{task}]\nduality = \"Form\"\nlevel = \"{}\"\nexpected_pair_count = {}\n",
            level.as_str(),
            cfg.n_pairs
        );
    }
    for r in MEANING_RELATIONS {
        let _ = writeln!(
            s,
            "[tasks.{}]\nduality = \"Meaning\"\nlevel = \"Conceptual\"\nexpected_pair_count = {}\n",
            r.task_id(),
            cfg.n_pairs
        );
    }
    s
}

/// Write the fixture world into `out`. Returns the config path among outputs.
pub fn cmd_fixtures(cfg: &FixtureConfig, out: &Path) -> Result<Summary, CliError> {
    cfg.check()?;
    std::fs::create_dir_all(out)?;
    let mut summary = Summary::default();
    let ds = fixture_dataset(cfg.n_pairs)?;
    let pairs_path = out.join("pairs.jsonl");
    ds.save(&pairs_path, PairFormat::Jsonl)?;
    summary.outputs.push(pairs_path);
    let table_path = out.join("comps_table.json");
    write_json(&table_path, &fixture_table(cfg.n_pairs))?;
    summary.outputs.push(table_path);

    for m in &cfg.models {
        let signals: Vec<TaskSignal> = cfg
            .task_ids()
            .into_iter()
            .map(|task_id| {
                let meaning = task_id.starts_with("comps_");
                TaskSignal {
                    task_id,
                    signal_layer: cfg.signal_layer,
                    separation: if meaning { m.meaning_separation } else { m.form_separation },
                }
            })
            .collect();
        let model_seed = derive_seed(cfg.seed, &["model", &m.name]);
        let mut data = plant_signal(&ds, &signals, &m.name, cfg.n_layers, cfg.hidden_dim, model_seed)?;
        data.header.metadata.insert("tap_point".into(), "synthetic".into());
        data.header.metadata.insert("fixture_seed".into(), cfg.seed.to_string());
        let store_path = out.join(format!("{}.mps", m.name));
        write_atomic(&store_path, &data.to_bytes())?;
        summary.outputs.push(store_path);

        let header = BTreeMap::from([
            ("model".to_string(), m.name.clone()),
            ("bos_convention".to_string(), "synthetic".to_string()),
        ]);
        let mut bytes = Vec::new();
        write_jsonl(&mut bytes, &header, &token_scores(&ds, m, cfg.seed))?;
        let p = out.join(format!("{}.tokens.jsonl", m.name));
        write_atomic(&p, &bytes)?;
        summary.outputs.push(p);

        let mut bytes = Vec::new();
        let header = BTreeMap::from([("model".to_string(), m.name.clone())]);
        write_jsonl(&mut bytes, &header, &continuation_scores(&ds, m, cfg.seed)?)?;
        let p = out.join(format!("{}.continuations.jsonl", m.name));
        write_atomic(&p, &bytes)?;
        summary.outputs.push(p);
    }

    let grouping_path = out.join("grouping.toml");
    write_atomic(&grouping_path, fixture_grouping(cfg).as_bytes())?;
    summary.outputs.push(grouping_path);
    let config_path: PathBuf = out.join("probekit.toml");
    write_atomic(&config_path, fixture_run_config(cfg).as_bytes())?;
    summary.outputs.push(config_path);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let ds = fixture_dataset(20).unwrap();
        assert_eq!(ds.task_ids().len(), 6);
        for t in ds.task_ids() {
            assert_eq!(ds.task_pairs(&t).count(), 20);
        }
        assert!(ds.pairs.iter().all(|p| p.violations().is_empty()));
    }

    #[test]
    fn constructed_direct_accuracy_is_exact() {
        let ds = fixture_dataset(50).unwrap();
        let model = FixtureConfig::default().models[0].clone();
        let recs = token_scores(&ds, &model, 1);
        let index = crate::psycholing::TokenScoreIndex::new(&recs);
        let results: Vec<_> = ds
            .pairs
            .iter()
            .map(|p| crate::psycholing::direct_score(p, &index).unwrap())
            .collect();
        for t in ds.task_ids() {
            let a = crate::psycholing::paradigm_accuracy(&results, &t).unwrap();
            assert_eq!(a.accuracy, 0.8);
            assert_eq!(a.tie_rate, 0.0);
        }
        assert!(recs.iter().all(|r| r.check().is_ok()));
    }

    #[test]
    fn pseudo_words_are_distinct() {
        let words: BTreeSet<String> = (0..N_CONCEPTS).map(pseudo_word).collect();
        assert_eq!(words.len(), N_CONCEPTS);
    }
}
