//! Output-probability paradigms: direct sentence-probability comparison and
//! metalinguistic prompting.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Duality, MinimalPair};
use crate::store::scores::{ContinuationScore, TokenScoreRecord};
use crate::store::{Role, SentenceId};

#[derive(Debug, Error, PartialEq)]
pub enum PsycholingError {
    #[error("no token scores for sentence {0}")]
    MissingSentence(SentenceId),
    #[error("pair `{pair_id}` has duality {found}, expected {expected}")]
    WrongDuality {
        pair_id: String,
        expected: Duality,
        found: Duality,
    },
    #[error("pair `{0}` has no concept metadata")]
    MissingConcept(String),
    #[error("concept `{concept}` does not occur in `{sentence}`")]
    ConceptNotInSentence { concept: String, sentence: String },
    #[error("prompt `{prompt_id}` has no score for option `{option}`")]
    MissingOption { prompt_id: String, option: String },
    #[error("no results for task `{0}`")]
    EmptyTask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectResult {
    pub pair_id: String,
    pub task_id: String,
    pub logprob_good: f64,
    pub logprob_bad: f64,
    /// Strictly higher log-probability for the acceptable sentence.
    pub correct: bool,
    pub tie: bool,
}

/// Token-score records keyed by sentence.
#[derive(Debug, Default)]
pub struct TokenScoreIndex<'a> {
    by_sentence: HashMap<SentenceId, &'a TokenScoreRecord>,
}

impl<'a> TokenScoreIndex<'a> {
    pub fn new(records: &'a [TokenScoreRecord]) -> Self {
        TokenScoreIndex {
            by_sentence: records.iter().map(|r| (r.sentence_id(), r)).collect(),
        }
    }

    pub fn get(&self, id: &SentenceId) -> Option<&'a TokenScoreRecord> {
        self.by_sentence.get(id).copied()
    }
}

/// Compare whole-sentence log-probabilities (sums of token log-probs, no
/// length normalization).
pub fn direct_score(pair: &MinimalPair, scores: &TokenScoreIndex<'_>) -> Result<DirectResult, PsycholingError> {
    let lookup = |role| {
        let id = SentenceId::new(pair.pair_id.clone(), role);
        scores
            .get(&id)
            .map(TokenScoreRecord::total_logprob)
            .ok_or(PsycholingError::MissingSentence(id))
    };
    let good = lookup(Role::Good)?;
    let bad = lookup(Role::Bad)?;
    Ok(DirectResult {
        pair_id: pair.pair_id.clone(),
        task_id: pair.task_id.clone(),
        logprob_good: good,
        logprob_bad: bad,
        correct: good > bad,
        tie: good == bad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    GoodFirst,
    BadFirst,
}

impl PromptOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptOrder::GoodFirst => "good_first",
            PromptOrder::BadFirst => "bad_first",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub prompt_id: String,
    pub pair_id: String,
    pub task_id: String,
    pub prompt_text: String,
    pub option_labels: Vec<String>,
    pub correct_option_label: String,
    pub option_order: PromptOrder,
}

/// Prompt wording. `{language}`, `{first}`, `{second}`, `{option_a}`,
/// `{option_b}` and `{question}` are substituted; `wrapper` may wrap the
/// rendered prompt through a `{prompt}` placeholder (e.g. a chat template).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub form: String,
    pub meaning: String,
    /// Per-language overrides of `form` / `meaning`, keyed by language code.
    pub form_by_language: BTreeMap<String, String>,
    pub meaning_by_language: BTreeMap<String, String>,
    /// Interrogative that replaces the concept when a property becomes a
    /// question, keyed by language code; English "what" otherwise.
    pub question_word: BTreeMap<String, String>,
    pub language_names: BTreeMap<String, String>,
    pub wrapper: Option<String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let map = |pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        };
        PromptTemplates {
            form: "Here are two {language} sentences: 1) {first} 2) {second} Which sentence is a better {language} sentence? Respond with either 1 or 2 as your answer. Answer:".into(),
            meaning: "What word is most likely to come next in the following sentence ({option_a}, or {option_b})? {question}".into(),
            form_by_language: BTreeMap::new(),
            meaning_by_language: BTreeMap::new(),
            question_word: map(&[("en", "what"), ("de", "was"), ("zh", "什么")]),
            language_names: map(&[("en", "English"), ("de", "German"), ("zh", "Chinese")]),
            wrapper: None,
        }
    }
}

impl PromptTemplates {
    fn wrap(&self, prompt: String) -> String {
        match &self.wrapper {
            Some(w) => w.replace("{prompt}", &prompt),
            None => prompt,
        }
    }

    fn language_name<'a>(&'a self, code: &'a str) -> &'a str {
        self.language_names.get(code).map(String::as_str).unwrap_or(code)
    }
}

fn with_terminal_punctuation(s: &str) -> String {
    let trimmed = s.trim_end();
    match trimmed.chars().last() {
        Some('.' | '!' | '?' | '。' | '！' | '？') => trimmed.to_string(),
        _ => format!("{trimmed}."),
    }
}

fn prompt_id(pair_id: &str, order: PromptOrder) -> String {
    format!("{pair_id}:{}", order.as_str())
}

pub fn build_meta_prompt_form(
    pair: &MinimalPair,
    order: PromptOrder,
    templates: &PromptTemplates,
) -> Result<MetaPrompt, PsycholingError> {
    if pair.duality != Duality::Form {
        return Err(PsycholingError::WrongDuality {
            pair_id: pair.pair_id.clone(),
            expected: Duality::Form,
            found: pair.duality,
        });
    }
    let (first, second, correct) = match order {
        PromptOrder::GoodFirst => (&pair.sentence_good, &pair.sentence_bad, "1"),
        PromptOrder::BadFirst => (&pair.sentence_bad, &pair.sentence_good, "2"),
    };
    let template = templates
        .form_by_language
        .get(&pair.language)
        .unwrap_or(&templates.form);
    let text = template
        .replace("{language}", templates.language_name(&pair.language))
        .replace("{first}", &with_terminal_punctuation(first))
        .replace("{second}", &with_terminal_punctuation(second));
    Ok(MetaPrompt {
        prompt_id: prompt_id(&pair.pair_id, order),
        pair_id: pair.pair_id.clone(),
        task_id: pair.task_id.clone(),
        prompt_text: templates.wrap(text),
        option_labels: vec!["1".into(), "2".into()],
        correct_option_label: correct.into(),
        option_order: order,
    })
}

/// Byte range of the first case-insensitive occurrence of `needle`.
fn find_case_insensitive(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let needle: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    if needle.is_empty() {
        return None;
    }
    for (start, _) in haystack.char_indices() {
        let mut matched = 0;
        let mut end = start;
        for (off, c) in haystack[start..].char_indices() {
            let lower: Vec<char> = c.to_lowercase().collect();
            if needle.len() < matched + lower.len() || needle[matched..matched + lower.len()] != lower[..] {
                break;
            }
            matched += lower.len();
            end = start + off + c.len_utf8();
            if matched == needle.len() {
                return Some((start, end));
            }
        }
        let _ = end;
    }
    None
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Turn "Helmet can absorb shocks" into "What can absorb shocks?".
fn property_question(sentence: &str, concept: &str, question_word: &str) -> Option<String> {
    let (start, end) = find_case_insensitive(sentence, concept)?;
    let mut q = String::with_capacity(sentence.len() + question_word.len());
    q.push_str(&sentence[..start]);
    q.push_str(question_word);
    q.push_str(&sentence[end..]);
    let q = q
        .trim_end()
        .trim_end_matches(['.', '!', '?', '。', '！', '？'])
        .to_string();
    let q = capitalize_first(q.trim_start());
    let mark = if question_word.chars().all(|c| c.is_ascii()) { "?" } else { "？" };
    Some(format!("{q}{mark}"))
}

pub fn build_meta_prompt_meaning(
    pair: &MinimalPair,
    concept_good: Option<&str>,
    concept_bad: Option<&str>,
    order: PromptOrder,
    templates: &PromptTemplates,
) -> Result<MetaPrompt, PsycholingError> {
    if pair.duality != Duality::Meaning {
        return Err(PsycholingError::WrongDuality {
            pair_id: pair.pair_id.clone(),
            expected: Duality::Meaning,
            found: pair.duality,
        });
    }
    let missing = || PsycholingError::MissingConcept(pair.pair_id.clone());
    let good = concept_good
        .or(pair.concept_good.as_deref())
        .ok_or_else(missing)?;
    let bad = concept_bad
        .or(pair.concept_bad.as_deref())
        .ok_or_else(missing)?;
    let word = templates
        .question_word
        .get(&pair.language)
        .map(String::as_str)
        .unwrap_or("what");
    let question = property_question(&pair.sentence_good, good, word).ok_or_else(|| {
        PsycholingError::ConceptNotInSentence {
            concept: good.to_string(),
            sentence: pair.sentence_good.clone(),
        }
    })?;
    let (a, b) = match order {
        PromptOrder::GoodFirst => (good, bad),
        PromptOrder::BadFirst => (bad, good),
    };
    let template = templates
        .meaning_by_language
        .get(&pair.language)
        .unwrap_or(&templates.meaning);
    let text = template
        .replace("{language}", templates.language_name(&pair.language))
        .replace("{option_a}", a)
        .replace("{option_b}", b)
        .replace("{question}", &question);
    Ok(MetaPrompt {
        prompt_id: prompt_id(&pair.pair_id, order),
        pair_id: pair.pair_id.clone(),
        task_id: pair.task_id.clone(),
        prompt_text: templates.wrap(text),
        option_labels: vec![a.to_string(), b.to_string()],
        correct_option_label: good.to_string(),
        option_order: order,
    })
}

/// Prompts for every pair: both orders when `balanced`, else `single` only.
pub fn build_prompts(
    dataset: &Dataset,
    balanced: bool,
    single: PromptOrder,
    templates: &PromptTemplates,
) -> Result<Vec<MetaPrompt>, PsycholingError> {
    let orders: &[PromptOrder] = if balanced {
        &[PromptOrder::GoodFirst, PromptOrder::BadFirst]
    } else {
        std::slice::from_ref(&single)
    };
    let mut out = Vec::with_capacity(dataset.len() * orders.len());
    for pair in &dataset.pairs {
        for &order in orders {
            out.push(match pair.duality {
                Duality::Form => build_meta_prompt_form(pair, order, templates)?,
                Duality::Meaning => build_meta_prompt_meaning(pair, None, None, order, templates)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub prompt_id: String,
    pub pair_id: String,
    pub task_id: String,
    pub order: PromptOrder,
    pub logprobs: BTreeMap<String, f64>,
    pub correct: bool,
    pub tie: bool,
}

/// Continuation scores keyed by (prompt, option).
#[derive(Debug, Default)]
pub struct ContinuationIndex {
    by_key: HashMap<(String, String), f64>,
}

impl ContinuationIndex {
    pub fn new(scores: &[ContinuationScore]) -> Self {
        ContinuationIndex {
            by_key: scores
                .iter()
                .map(|s| ((s.prompt_id.clone(), s.option_label.clone()), s.logprob))
                .collect(),
        }
    }

    pub fn get(&self, prompt_id: &str, option: &str) -> Option<f64> {
        self.by_key
            .get(&(prompt_id.to_string(), option.to_string()))
            .copied()
    }

    pub fn has_prompt(&self, prompt_id: &str) -> bool {
        self.by_key.keys().any(|(p, _)| p == prompt_id)
    }
}

/// Correct iff the correct option's log-probability is strictly the highest.
pub fn meta_score(prompt: &MetaPrompt, scores: &ContinuationIndex) -> Result<MetaResult, PsycholingError> {
    let mut logprobs = BTreeMap::new();
    for label in &prompt.option_labels {
        let lp = scores
            .get(&prompt.prompt_id, label)
            .ok_or_else(|| PsycholingError::MissingOption {
                prompt_id: prompt.prompt_id.clone(),
                option: label.clone(),
            })?;
        logprobs.insert(label.clone(), lp);
    }
    let correct_lp = logprobs[&prompt.correct_option_label];
    let best_other = prompt
        .option_labels
        .iter()
        .filter(|l| **l != prompt.correct_option_label)
        .map(|l| logprobs[l])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MetaResult {
        prompt_id: prompt.prompt_id.clone(),
        pair_id: prompt.pair_id.clone(),
        task_id: prompt.task_id.clone(),
        order: prompt.option_order,
        logprobs,
        correct: correct_lp > best_other,
        tie: correct_lp == best_other,
    })
}

/// Anything with a correctness verdict for one item of a task.
pub trait Outcome {
    fn task_id(&self) -> &str;
    fn correct(&self) -> bool;
    fn tie(&self) -> bool;
}

impl Outcome for DirectResult {
    fn task_id(&self) -> &str {
        &self.task_id
    }
    fn correct(&self) -> bool {
        self.correct
    }
    fn tie(&self) -> bool {
        self.tie
    }
}

impl Outcome for MetaResult {
    fn task_id(&self) -> &str {
        &self.task_id
    }
    fn correct(&self) -> bool {
        self.correct
    }
    fn tie(&self) -> bool {
        self.tie
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub tie_rate: f64,
    pub n: usize,
}

/// Fraction correct over one task's results; ties count as incorrect.
pub fn paradigm_accuracy<O: Outcome>(results: &[O], task_id: &str) -> Result<Accuracy, PsycholingError> {
    accuracy_of(results.iter().filter(|r| r.task_id() == task_id))
        .ok_or_else(|| PsycholingError::EmptyTask(task_id.to_string()))
}

/// Accuracy over any set of results, `None` when empty.
pub fn accuracy_of<'a, O: Outcome + 'a>(results: impl IntoIterator<Item = &'a O>) -> Option<Accuracy> {
    let (mut n, mut correct, mut ties) = (0usize, 0usize, 0usize);
    for r in results {
        n += 1;
        correct += r.correct() as usize;
        ties += r.tie() as usize;
    }
    (n > 0).then(|| Accuracy {
        accuracy: correct as f64 / n as f64,
        tie_rate: ties as f64 / n as f64,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Level;
    use crate::store::scores::TokenScore;

    fn form_pair() -> MinimalPair {
        MinimalPair {
            pair_id: "p1".into(),
            task_id: "agreement".into(),
            sentence_good: "Mice are hurting a waiter".into(),
            sentence_bad: "Mice was hurting a waiter".into(),
            language: "en".into(),
            duality: Duality::Form,
            phenomenon: "subject-verb agreement".into(),
            level: Level::Morphology,
            concept_good: None,
            concept_bad: None,
        }
    }

    fn meaning_pair() -> MinimalPair {
        MinimalPair {
            pair_id: "c1".into(),
            task_id: "comps_taxonomy".into(),
            sentence_good: "Helmet can absorb shocks".into(),
            sentence_bad: "Cap can absorb shocks".into(),
            language: "en".into(),
            duality: Duality::Meaning,
            phenomenon: "taxonomy".into(),
            level: Level::Conceptual,
            concept_good: Some("helmet".into()),
            concept_bad: Some("cap".into()),
        }
    }

    fn record(pair: &str, role: Role, lps: &[f64]) -> TokenScoreRecord {
        TokenScoreRecord {
            pair_id: pair.into(),
            role,
            tokens: lps
                .iter()
                .enumerate()
                .map(|(i, &logprob)| TokenScore {
                    token: format!("t{i}"),
                    logprob,
                })
                .collect(),
        }
    }

    #[test]
    fn direct_comparison_and_ties() {
        let pair = form_pair();
        let recs = vec![
            record("p1", Role::Good, &[-4.0, -6.2]),
            record("p1", Role::Bad, &[-4.0, -8.4]),
        ];
        let r = direct_score(&pair, &TokenScoreIndex::new(&recs)).unwrap();
        assert!(r.correct && !r.tie);
        assert!((r.logprob_good + 10.2).abs() < 1e-12);

        let tied = vec![record("p1", Role::Good, &[-3.0]), record("p1", Role::Bad, &[-1.0, -2.0])];
        let r = direct_score(&pair, &TokenScoreIndex::new(&tied)).unwrap();
        assert!(!r.correct && r.tie);

        let partial = vec![record("p1", Role::Good, &[-3.0])];
        assert!(matches!(
            direct_score(&pair, &TokenScoreIndex::new(&partial)),
            Err(PsycholingError::MissingSentence(_))
        ));
    }

    #[test]
    fn form_prompt_text() {
        let t = PromptTemplates::default();
        let p = build_meta_prompt_form(&form_pair(), PromptOrder::GoodFirst, &t).unwrap();
        assert_eq!(
            p.prompt_text,
            "Here are two English sentences: 1) Mice are hurting a waiter. 2) Mice was hurting a waiter. Which sentence is a better English sentence? Respond with either 1 or 2 as your answer. Answer:"
        );
        assert_eq!(p.correct_option_label, "1");
        let p = build_meta_prompt_form(&form_pair(), PromptOrder::BadFirst, &t).unwrap();
        assert_eq!(p.correct_option_label, "2");
        assert!(p.prompt_text.contains("1) Mice was hurting a waiter."));
        assert!(matches!(
            build_meta_prompt_form(&meaning_pair(), PromptOrder::GoodFirst, &t),
            Err(PsycholingError::WrongDuality { .. })
        ));
    }

    #[test]
    fn meaning_prompt_text() {
        let t = PromptTemplates::default();
        let p = build_meta_prompt_meaning(&meaning_pair(), None, None, PromptOrder::GoodFirst, &t).unwrap();
        assert_eq!(
            p.prompt_text,
            "What word is most likely to come next in the following sentence (helmet, or cap)? What can absorb shocks?"
        );
        assert_eq!(p.option_labels, vec!["helmet", "cap"]);
        let swapped = build_meta_prompt_meaning(&meaning_pair(), None, None, PromptOrder::BadFirst, &t).unwrap();
        assert_eq!(swapped.correct_option_label, "helmet");
        assert!(swapped.prompt_text.contains("(cap, or helmet)"));

        let mut bare = meaning_pair();
        bare.concept_good = None;
        assert_eq!(
            build_meta_prompt_meaning(&bare, None, None, PromptOrder::GoodFirst, &t),
            Err(PsycholingError::MissingConcept("c1".into()))
        );
    }

    #[test]
    fn wrapper_applies() {
        let t = PromptTemplates {
            wrapper: Some("[INST] {prompt} [/INST]".into()),
            ..PromptTemplates::default()
        };
        let p = build_meta_prompt_form(&form_pair(), PromptOrder::GoodFirst, &t).unwrap();
        assert!(p.prompt_text.starts_with("[INST] Here are two"));
    }

    #[test]
    fn question_from_mid_sentence_concept() {
        assert_eq!(
            property_question("Ein Helm kann Stöße absorbieren", "helm", "was").unwrap(),
            "Ein was kann Stöße absorbieren?"
        );
        assert_eq!(property_question("头盔可以吸收冲击", "头盔", "什么").unwrap(), "什么可以吸收冲击？");
        assert!(property_question("nothing here", "helmet", "what").is_none());
    }

    #[test]
    fn meta_scoring() {
        let t = PromptTemplates::default();
        let p = build_meta_prompt_form(&form_pair(), PromptOrder::GoodFirst, &t).unwrap();
        let scores = vec![
            ContinuationScore { prompt_id: p.prompt_id.clone(), option_label: "1".into(), logprob: -0.3 },
            ContinuationScore { prompt_id: p.prompt_id.clone(), option_label: "2".into(), logprob: -1.4 },
        ];
        let r = meta_score(&p, &ContinuationIndex::new(&scores)).unwrap();
        assert!(r.correct);
        let tie = vec![
            ContinuationScore { prompt_id: p.prompt_id.clone(), option_label: "1".into(), logprob: -0.7 },
            ContinuationScore { prompt_id: p.prompt_id.clone(), option_label: "2".into(), logprob: -0.7 },
        ];
        let r = meta_score(&p, &ContinuationIndex::new(&tie)).unwrap();
        assert!(!r.correct && r.tie);
        assert!(matches!(
            meta_score(&p, &ContinuationIndex::new(&scores[..1])),
            Err(PsycholingError::MissingOption { .. })
        ));
    }

    #[test]
    fn accuracy_bookkeeping() {
        let mk = |correct| DirectResult {
            pair_id: "x".into(),
            task_id: "t".into(),
            logprob_good: 0.0,
            logprob_bad: 0.0,
            correct,
            tie: false,
        };
        let all = vec![mk(true), mk(true)];
        assert_eq!(paradigm_accuracy(&all, "t").unwrap().accuracy, 1.0);
        let half = vec![mk(true), mk(false)];
        assert_eq!(paradigm_accuracy(&half, "t").unwrap().accuracy, 0.5);
        assert!(paradigm_accuracy(&half, "other").is_err());
    }

    #[test]
    fn balanced_prompts_double() {
        let ds = Dataset::new(vec![form_pair(), meaning_pair()]);
        let t = PromptTemplates::default();
        assert_eq!(build_prompts(&ds, true, PromptOrder::GoodFirst, &t).unwrap().len(), 4);
        assert_eq!(build_prompts(&ds, false, PromptOrder::GoodFirst, &t).unwrap().len(), 2);
    }
}
