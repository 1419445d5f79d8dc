//! Minimal-pair datasets: data model, JSONL/CSV loaders and dataset validation.
//!
//! Conceptual (COMPS-style) datasets are assembled from concept/property
//! tables in [`comps`].

pub mod comps;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use comps::{
    apply_overlay, build_comps, Concept, ConceptPropertyTable, CorrectionEntry, CorrectionOverlay,
    EntityKind, Property, Relation, RelationKind, SLOT_MARKER,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("duplicate pair_id `{0}`")]
    DuplicatePairId(String),
    #[error("unknown format `{0}` (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("dangling {kind} id `{id}` in overlay")]
    DanglingEntity { kind: &'static str, id: String },
    #[error("concept `{concept}` has no surface form for language `{language}`")]
    MissingConceptTranslation { concept: String, language: String },
    #[error("property `{property}` has no template for language `{language}`")]
    MissingTemplate { property: String, language: String },
    #[error("malformed template for property `{property}`: {reason}")]
    MalformedTemplate { property: String, reason: String },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid overlay: {0}")]
    InvalidOverlay(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Duality {
    Form,
    Meaning,
}

impl Duality {
    pub fn as_str(self) -> &'static str {
        match self {
            Duality::Form => "Form",
            Duality::Meaning => "Meaning",
        }
    }
}

impl fmt::Display for Duality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Duality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "form" => Ok(Duality::Form),
            "meaning" => Ok(Duality::Meaning),
            other => Err(format!("unknown duality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Morphology,
    SemanticsSyntaxInterface,
    Syntax,
    Conceptual,
    Unlabeled,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Morphology => "Morphology",
            Level::SemanticsSyntaxInterface => "SemanticsSyntaxInterface",
            Level::Syntax => "Syntax",
            Level::Conceptual => "Conceptual",
            Level::Unlabeled => "Unlabeled",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Morphology" => Ok(Level::Morphology),
            "SemanticsSyntaxInterface" => Ok(Level::SemanticsSyntaxInterface),
            "Syntax" => Ok(Level::Syntax),
            "Conceptual" => Ok(Level::Conceptual),
            "Unlabeled" => Ok(Level::Unlabeled),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

/// One acceptable/unacceptable sentence pair.
///
/// `concept_good`/`concept_bad` are only set for conceptual pairs built from a
/// relation table; metalinguistic meaning prompts need them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub pair_id: String,
    pub task_id: String,
    pub sentence_good: String,
    pub sentence_bad: String,
    pub language: String,
    pub duality: Duality,
    pub phenomenon: String,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_good: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_bad: Option<String>,
}

impl MinimalPair {
    /// Invariant violations of this single pair, empty when the pair is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.pair_id.is_empty() {
            out.push("empty pair_id".to_string());
        }
        if self.sentence_good.trim().is_empty() || self.sentence_bad.trim().is_empty() {
            out.push(format!("{}: empty sentence", self.pair_id));
        }
        if self.sentence_good == self.sentence_bad {
            out.push(format!("{}: identical good and bad sentences", self.pair_id));
        }
        match (self.duality, self.level) {
            (Duality::Meaning, Level::Conceptual) => {}
            (Duality::Meaning, lvl) => out.push(format!(
                "{}: meaning pair must have level Conceptual, got {lvl}",
                self.pair_id
            )),
            (Duality::Form, Level::Conceptual) => out.push(format!(
                "{}: form pair cannot have level Conceptual",
                self.pair_id
            )),
            (Duality::Form, _) => {}
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    Jsonl,
    Csv,
}

impl FromStr for PairFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(PairFormat::Jsonl),
            "csv" => Ok(PairFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl PairFormat {
    /// Guess from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PairFormat::Csv,
            _ => PairFormat::Jsonl,
        }
    }
}

/// An ordered collection of minimal pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<MinimalPair>,
}

impl Dataset {
    pub fn new(pairs: Vec<MinimalPair>) -> Self {
        Dataset { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs of one task in dataset order.
    pub fn task_pairs<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a MinimalPair> + 'a {
        self.pairs.iter().filter(move |p| p.task_id == task_id)
    }

    /// Distinct task ids in order of first appearance.
    pub fn task_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.pairs {
            if seen.insert(p.task_id.as_str()) {
                out.push(p.task_id.clone());
            }
        }
        out
    }

    pub fn extend(&mut self, other: Dataset) {
        self.pairs.extend(other.pairs);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for p in &self.pairs {
            wtr.write_record([
                p.pair_id.as_str(),
                p.task_id.as_str(),
                p.sentence_good.as_str(),
                p.sentence_bad.as_str(),
                p.language.as_str(),
                p.duality.as_str(),
                p.phenomenon.as_str(),
                p.level.as_str(),
                p.concept_good.as_deref().unwrap_or(""),
                p.concept_bad.as_deref().unwrap_or(""),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path, format: PairFormat) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        match format {
            PairFormat::Jsonl => self.write_jsonl(&mut w).map_err(|e| CorpusError::io(path, e))?,
            PairFormat::Csv => self.write_csv(&mut w).map_err(|e| CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            })?,
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }
}

const CSV_HEADER: [&str; 10] = [
    "pair_id",
    "task_id",
    "sentence_good",
    "sentence_bad",
    "language",
    "duality",
    "phenomenon",
    "level",
    "concept_good",
    "concept_bad",
];
const REQUIRED_FIELDS: [&str; 8] = [
    "pair_id",
    "task_id",
    "sentence_good",
    "sentence_bad",
    "language",
    "duality",
    "phenomenon",
    "level",
];

/// Load a pair file. Duplicate pair ids are an error.
pub fn load_pairs(path: &Path, format: PairFormat) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        PairFormat::Jsonl => read_jsonl(reader),
        PairFormat::Csv => read_csv(reader),
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Dataset, CorpusError> {
    let mut pairs = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            line: lineno,
            message: "expected a JSON object".to_string(),
        })?;
        for field in REQUIRED_FIELDS {
            if !obj.contains_key(field) {
                return Err(CorpusError::MissingField {
                    line: lineno,
                    field: field.to_string(),
                });
            }
        }
        let pair: MinimalPair = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if !ids.insert(pair.pair_id.clone()) {
            return Err(CorpusError::DuplicatePairId(pair.pair_id));
        }
        pairs.push(pair);
    }
    Ok(Dataset { pairs })
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    // an empty file has no header row and is an empty dataset
    if headers.is_empty() {
        return Ok(Dataset::default());
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut index = BTreeMap::new();
    for field in REQUIRED_FIELDS {
        let i = col(field).ok_or_else(|| CorpusError::MissingField {
            line: 1,
            field: field.to_string(),
        })?;
        index.insert(field, i);
    }
    let concept_good = col("concept_good");
    let concept_bad = col("concept_bad");

    let mut pairs = Vec::new();
    let mut ids = HashSet::new();
    for (idx, record) in rdr.records().enumerate() {
        // header is line 1; assumes no embedded newlines for line numbering
        let lineno = record
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line() as usize))
            .unwrap_or(idx + 2);
        let record = record.map_err(|e| CorpusError::Parse {
            line: idx + 2,
            message: e.to_string(),
        })?;
        let get = |f: &str| record.get(index[f]).unwrap_or("").to_string();
        let optional = |i: Option<usize>| {
            i.and_then(|i| record.get(i))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let duality = get("duality")
            .parse::<Duality>()
            .map_err(|message| CorpusError::Parse { line: lineno, message })?;
        let level = get("level")
            .parse::<Level>()
            .map_err(|message| CorpusError::Parse { line: lineno, message })?;
        let pair = MinimalPair {
            pair_id: get("pair_id"),
            task_id: get("task_id"),
            sentence_good: get("sentence_good"),
            sentence_bad: get("sentence_bad"),
            language: get("language"),
            duality,
            phenomenon: get("phenomenon"),
            level,
            concept_good: optional(concept_good),
            concept_bad: optional(concept_bad),
        };
        if !ids.insert(pair.pair_id.clone()) {
            return Err(CorpusError::DuplicatePairId(pair.pair_id));
        }
        pairs.push(pair);
    }
    Ok(Dataset { pairs })
}

/// Expected shape of one task, used by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub name: String,
    pub duality: Duality,
    pub level: Level,
    pub language: String,
    pub expected_pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountMismatch {
    pub task_id: String,
    pub expected: usize,
    pub found: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Pairs per task id, sorted by task id.
    pub task_counts: BTreeMap<String, usize>,
    pub count_mismatches: Vec<CountMismatch>,
    pub violations: Vec<String>,
    /// Tasks present in the data but absent from the specs. Informational.
    pub unspecified_tasks: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.count_mismatches.is_empty()
    }
}

/// Check a dataset against pair invariants and expected per-task counts.
/// Never fails; problems are collected in the report.
pub fn validate_dataset(dataset: &Dataset, specs: &[TaskSpec]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();
    for pair in &dataset.pairs {
        *report.task_counts.entry(pair.task_id.clone()).or_insert(0) += 1;
        if !ids.insert(pair.pair_id.as_str()) {
            report
                .violations
                .push(format!("duplicate pair_id `{}`", pair.pair_id));
        }
        report.violations.extend(pair.violations());
    }

    let mut spec_ids = HashSet::new();
    for spec in specs {
        if !spec_ids.insert(spec.task_id.as_str()) {
            report
                .violations
                .push(format!("duplicate task spec `{}`", spec.task_id));
            continue;
        }
        if spec.expected_pair_count == 0 {
            report.violations.push(format!(
                "task spec `{}` has expected_pair_count 0",
                spec.task_id
            ));
        }
        let found = report.task_counts.get(&spec.task_id).copied().unwrap_or(0);
        if found != spec.expected_pair_count {
            report.count_mismatches.push(CountMismatch {
                task_id: spec.task_id.clone(),
                expected: spec.expected_pair_count,
                found,
            });
        }
    }
    if !specs.is_empty() {
        report.unspecified_tasks = report
            .task_counts
            .keys()
            .filter(|t| !spec_ids.contains(t.as_str()))
            .cloned()
            .collect();
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const CATS: &str = r#"{"pair_id":"blimp_sa_1","task_id":"simple_agreement","sentence_good":"The cats annoy Tim.","sentence_bad":"The cats annoys Tim.","language":"en","duality":"Form","phenomenon":"simple agreement","level":"Morphology"}"#;

    fn pair(id: &str, task: &str) -> MinimalPair {
        MinimalPair {
            pair_id: id.to_string(),
            task_id: task.to_string(),
            sentence_good: format!("good {id}"),
            sentence_bad: format!("bad {id}"),
            language: "en".to_string(),
            duality: Duality::Form,
            phenomenon: "x".to_string(),
            level: Level::Syntax,
            concept_good: None,
            concept_bad: None,
        }
    }

    #[test]
    fn loads_one_jsonl_pair() {
        let ds = read_jsonl(Cursor::new(CATS)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.pairs[0].duality, Duality::Form);
        assert_eq!(ds.pairs[0].sentence_bad, "The cats annoys Tim.");
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(read_jsonl(Cursor::new("")).unwrap().is_empty());
        assert!(read_csv(Cursor::new("")).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let input = format!("{CATS}\n{CATS}\n");
        match read_jsonl(Cursor::new(input)) {
            Err(CorpusError::DuplicatePairId(id)) => assert_eq!(id, "blimp_sa_1"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_reports_line() {
        let bad = r#"{"pair_id":"a","task_id":"t","sentence_good":"x","sentence_bad":"y","language":"en","duality":"Form","level":"Syntax"}"#;
        let input = format!("{CATS}\n{bad}\n");
        match read_jsonl(Cursor::new(input)) {
            Err(CorpusError::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "phenomenon");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let input = format!("{CATS}\n\n{{not json\n");
        match read_jsonl(Cursor::new(input)) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let mut p = pair("q1", "t");
        p.sentence_good = "He said, \"hi\"".to_string();
        p.concept_good = Some("helmet".into());
        p.concept_bad = Some("cap".into());
        let ds = Dataset::new(vec![p, pair("q2", "t")]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(Cursor::new(buf)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_missing_column() {
        let input = "pair_id,task_id\na,b\n";
        assert!(matches!(
            read_csv(Cursor::new(input)),
            Err(CorpusError::MissingField { .. })
        ));
    }

    #[test]
    fn validation_counts_and_mismatch() {
        let ds = Dataset::new((0..4).map(|i| pair(&format!("p{i}"), "comps")).collect());
        let specs = vec![TaskSpec {
            task_id: "comps".into(),
            name: "COMPS".into(),
            duality: Duality::Meaning,
            level: Level::Conceptual,
            language: "en".into(),
            expected_pair_count: 5,
        }];
        let report = validate_dataset(&ds, &specs);
        assert_eq!(report.task_counts["comps"], 4);
        assert_eq!(
            report.count_mismatches,
            vec![CountMismatch {
                task_id: "comps".into(),
                expected: 5,
                found: 4
            }]
        );
        assert!(!report.is_valid());
    }

    #[test]
    fn identical_sentences_flagged() {
        let mut p = pair("same", "t");
        p.sentence_bad = p.sentence_good.clone();
        let report = validate_dataset(&Dataset::new(vec![p]), &[]);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("identical"));
    }

    #[test]
    fn duality_level_coupling() {
        let mut p = pair("m", "t");
        p.duality = Duality::Meaning;
        assert_eq!(p.violations().len(), 1);
        p.level = Level::Conceptual;
        assert!(p.violations().is_empty());
        p.duality = Duality::Form;
        assert_eq!(p.violations().len(), 1);
    }
}
