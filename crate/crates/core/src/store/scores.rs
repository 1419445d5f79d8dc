//! JSONL sidecars for output-probability dumps.
//!
//! Token scores, one object per sentence:
//! `{"pair_id":"p1","role":"good","tokens":[{"token":"The","logprob":-2.1},...]}`
//!
//! Continuation scores, one object per prompt option:
//! `{"prompt_id":"p1:good_first","option_label":"1","logprob":-0.3}`
//!
//! Either file may start with a header line `{"header":{...}}` carrying
//! string metadata such as the model name and the begin-of-sequence
//! convention used by the extractor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Role, SentenceId};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

pub type ScoreHeader = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub pair_id: String,
    pub role: Role,
    pub tokens: Vec<TokenScore>,
}

impl TokenScoreRecord {
    pub fn sentence_id(&self) -> SentenceId {
        SentenceId::new(self.pair_id.clone(), self.role)
    }

    pub fn total_logprob(&self) -> f64 {
        self.tokens.iter().map(|t| t.logprob).sum()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err(format!("{}: empty token list", self.sentence_id()));
        }
        for t in &self.tokens {
            if !t.logprob.is_finite() || t.logprob > 0.0 {
                return Err(format!(
                    "{}: token {:?} has invalid logprob {}",
                    self.sentence_id(),
                    t.token,
                    t.logprob
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub prompt_id: String,
    pub option_label: String,
    pub logprob: f64,
}

impl ContinuationScore {
    pub fn check(&self) -> Result<(), String> {
        if !self.logprob.is_finite() {
            return Err(format!(
                "{} option {:?}: non-finite logprob",
                self.prompt_id, self.option_label
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile<T> {
    pub header: ScoreHeader,
    pub records: Vec<T>,
}

#[derive(Deserialize)]
struct HeaderLine {
    header: ScoreHeader,
}

trait Checked {
    fn check_record(&self) -> Result<(), String>;
}

impl Checked for TokenScoreRecord {
    fn check_record(&self) -> Result<(), String> {
        self.check()
    }
}

impl Checked for ContinuationScore {
    fn check_record(&self) -> Result<(), String> {
        self.check()
    }
}

fn read_jsonl<T: DeserializeOwned + Checked, R: BufRead>(
    reader: R,
) -> Result<ScoreFile<T>, ScoreError> {
    let mut header = ScoreHeader::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| ScoreError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if records.is_empty() && header.is_empty() {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = h.header;
                continue;
            }
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| ScoreError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        rec.check_record()
            .map_err(|message| ScoreError::Invalid { line: lineno, message })?;
        records.push(rec);
    }
    Ok(ScoreFile { header, records })
}

fn open(path: &Path) -> Result<BufReader<File>, ScoreError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| ScoreError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn read_token_scores(path: &Path) -> Result<ScoreFile<TokenScoreRecord>, ScoreError> {
    read_jsonl(open(path)?)
}

pub fn read_continuation_scores(path: &Path) -> Result<ScoreFile<ContinuationScore>, ScoreError> {
    read_jsonl(open(path)?)
}

pub fn parse_token_scores<R: BufRead>(r: R) -> Result<ScoreFile<TokenScoreRecord>, ScoreError> {
    read_jsonl(r)
}

pub fn parse_continuation_scores<R: BufRead>(
    r: R,
) -> Result<ScoreFile<ContinuationScore>, ScoreError> {
    read_jsonl(r)
}

/// Write a sidecar; the header line is omitted when empty.
pub fn write_jsonl<T: Serialize, W: Write>(
    mut w: W,
    header: &ScoreHeader,
    records: &[T],
) -> std::io::Result<()> {
    if !header.is_empty() {
        serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
        w.write_all(b"\n")?;
    }
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn header_line_and_records() {
        let input = r#"{"header":{"model_name":"tiny","bos_convention":"bos_prepended"}}
{"pair_id":"p1","role":"good","tokens":[{"token":"Mice","logprob":-3.0},{"token":" are","logprob":-1.5}]}
{"pair_id":"p1","role":"bad","tokens":[{"token":"Mice","logprob":-3.0},{"token":" was","logprob":-4.0}]}
"#;
        let f = parse_token_scores(Cursor::new(input)).unwrap();
        assert_eq!(f.header["bos_convention"], "bos_prepended");
        assert_eq!(f.records.len(), 2);
        assert_eq!(f.records[0].total_logprob(), -4.5);
    }

    #[test]
    fn positive_logprob_rejected() {
        let input = r#"{"pair_id":"p1","role":"good","tokens":[{"token":"x","logprob":0.5}]}"#;
        assert!(matches!(
            parse_token_scores(Cursor::new(input)),
            Err(ScoreError::Invalid { line: 1, .. })
        ));
        let empty = r#"{"pair_id":"p1","role":"good","tokens":[]}"#;
        assert!(parse_token_scores(Cursor::new(empty)).is_err());
    }

    #[test]
    fn continuation_round_trip() {
        let recs = vec![
            ContinuationScore {
                prompt_id: "a".into(),
                option_label: "1".into(),
                logprob: -0.25,
            },
            ContinuationScore {
                prompt_id: "a".into(),
                option_label: "2".into(),
                logprob: -1.5,
            },
        ];
        let mut header = ScoreHeader::new();
        header.insert("model_name".into(), "m".into());
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &header, &recs).unwrap();
        let back = parse_continuation_scores(Cursor::new(buf)).unwrap();
        assert_eq!(back.header, header);
        assert_eq!(back.records, recs);
    }
}
