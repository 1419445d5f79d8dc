//! The `.mps` activation container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MPS1"
//! 4       2     format version (1)
//! 6       1     endianness tag (1 = little)
//! 7       1     dtype tag (1 = IEEE-754 float32)
//! 8       4     n_layers (layer 0 = embedding output)
//! 12      4     hidden_dim
//! 16      8     n_sentences
//! 24      4+n   model_name (u32 byte length, UTF-8 bytes)
//! ..      4+n   metadata (u32 byte length, UTF-8 JSON object of string -> string)
//! ..            sentence table: n_sentences x (u32 len, pair_id bytes, u8 role: 0 good, 1 bad)
//! ..            payload: n_layers x n_sentences x hidden_dim float32, layer-major,
//!               rows in sentence-table order
//! end-4   4     CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Token and continuation scores live in JSONL sidecars, see [`scores`].

pub mod scores;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synthetic::{generate_synthetic, plant_signal, SyntheticParams, TaskSignal};

pub const MAGIC: &[u8; 4] = b"MPS1";
pub const FORMAT_VERSION: u16 = 1;
const ENDIAN_LITTLE: u8 = 1;
const DTYPE_F32: u8 = 1;
const FIXED_HEADER_LEN: usize = 24;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an activation store (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported {what} tag {tag}")]
    UnsupportedTag { what: &'static str, tag: u8 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("file too short to be a store ({0} bytes)")]
    Truncated(usize),
    #[error("declared sizes need {expected} bytes but file has {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("layer {layer} out of range (store has {n_layers} layers)")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("non-finite value in {sentence} at layer {layer}")]
    NonFinite { sentence: SentenceId, layer: usize },
    #[error("missing record for {sentence} at layer {layer}")]
    MissingRecord { sentence: SentenceId, layer: usize },
    #[error("duplicate record for {sentence} at layer {layer}")]
    DuplicateRecord { sentence: SentenceId, layer: usize },
    #[error("record for unknown sentence {0}")]
    UnknownSentence(SentenceId),
    #[error("vector has {found} values, store hidden_dim is {expected}")]
    DimMismatch { expected: usize, found: usize },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Good,
    Bad,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Good => "good",
            Role::Bad => "bad",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Role::Good => 0,
            Role::Bad => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Role::Good),
            1 => Some(Role::Bad),
            _ => None,
        }
    }
}

/// A sentence is addressed by its pair and its role within the pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceId {
    pub pair_id: String,
    pub role: Role,
}

impl SentenceId {
    pub fn new(pair_id: impl Into<String>, role: Role) -> Self {
        SentenceId {
            pair_id: pair_id.into(),
            role,
        }
    }
    pub fn good(pair_id: impl Into<String>) -> Self {
        Self::new(pair_id, Role::Good)
    }
    pub fn bad(pair_id: impl Into<String>) -> Self {
        Self::new(pair_id, Role::Bad)
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.pair_id, self.role.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreHeader {
    pub model_name: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub sentences: Vec<SentenceId>,
    /// Free-form provenance, e.g. the hidden-state tap point.
    pub metadata: BTreeMap<String, String>,
}

impl StoreHeader {
    pub fn new(
        model_name: impl Into<String>,
        n_layers: usize,
        hidden_dim: usize,
        sentences: Vec<SentenceId>,
    ) -> Self {
        StoreHeader {
            model_name: model_name.into(),
            n_layers,
            hidden_dim,
            sentences,
            metadata: BTreeMap::new(),
        }
    }

    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.n_layers == 0 {
            return Err(StoreError::InvalidHeader("n_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(StoreError::InvalidHeader("hidden_dim must be >= 1".into()));
        }
        if self.n_layers > u32::MAX as usize || self.hidden_dim > u32::MAX as usize {
            return Err(StoreError::InvalidHeader("dimension exceeds u32".into()));
        }
        let mut seen = HashSet::with_capacity(self.sentences.len());
        for s in &self.sentences {
            if !seen.insert(s) {
                return Err(StoreError::InvalidHeader(format!("duplicate sentence id {s}")));
            }
        }
        Ok(())
    }

    fn payload_floats(&self) -> usize {
        self.n_layers * self.n_sentences() * self.hidden_dim
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(ENDIAN_LITTLE);
        out.push(DTYPE_F32);
        out.extend_from_slice(&(self.n_layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.sentences.len() as u64).to_le_bytes());
        put_str(&mut out, &self.model_name);
        let meta = serde_json::to_string(&self.metadata).expect("string map serializes");
        put_str(&mut out, &meta);
        for s in &self.sentences {
            put_str(&mut out, &s.pair_id);
            out.push(s.role.tag());
        }
        out
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| StoreError::InvalidHeader("header runs past end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, StoreError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| StoreError::InvalidHeader("string is not UTF-8".into()))
    }
}

/// One last-token hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub sentence: SentenceId,
    pub layer: usize,
    pub vector: Vec<f32>,
}

/// A fully materialized store: header plus layer-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreData {
    pub header: StoreHeader,
    pub payload: Vec<f32>,
}

impl StoreData {
    /// Assemble from records in any order. Every (sentence, layer) must be
    /// covered exactly once.
    pub fn from_records<I>(header: StoreHeader, records: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = ActivationRecord>,
    {
        header.validate()?;
        let index: HashMap<&SentenceId, usize> = header
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let n = header.n_sentences();
        let dim = header.hidden_dim;
        let mut payload = vec![0f32; header.payload_floats()];
        let mut filled = vec![false; header.n_layers * n];
        for rec in records {
            let row = *index
                .get(&rec.sentence)
                .ok_or_else(|| StoreError::UnknownSentence(rec.sentence.clone()))?;
            if rec.layer >= header.n_layers {
                return Err(StoreError::LayerOutOfRange {
                    layer: rec.layer,
                    n_layers: header.n_layers,
                });
            }
            if rec.vector.len() != dim {
                return Err(StoreError::DimMismatch {
                    expected: dim,
                    found: rec.vector.len(),
                });
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    sentence: rec.sentence,
                    layer: rec.layer,
                });
            }
            let slot = rec.layer * n + row;
            if std::mem::replace(&mut filled[slot], true) {
                return Err(StoreError::DuplicateRecord {
                    sentence: rec.sentence,
                    layer: rec.layer,
                });
            }
            payload[slot * dim..(slot + 1) * dim].copy_from_slice(&rec.vector);
        }
        if let Some(slot) = filled.iter().position(|f| !f) {
            return Err(StoreError::MissingRecord {
                sentence: header.sentences[slot % n].clone(),
                layer: slot / n,
            });
        }
        Ok(StoreData { header, payload })
    }

    /// Wrap an already layer-major payload.
    pub fn from_payload(header: StoreHeader, payload: Vec<f32>) -> Result<Self, StoreError> {
        header.validate()?;
        if payload.len() != header.payload_floats() {
            return Err(StoreError::SizeMismatch {
                expected: header.payload_floats() * 4,
                actual: payload.len() * 4,
            });
        }
        if let Some(i) = payload.iter().position(|v| !v.is_finite()) {
            let n = header.n_sentences();
            let slot = i / header.hidden_dim;
            return Err(StoreError::NonFinite {
                sentence: header.sentences[slot % n].clone(),
                layer: slot / n,
            });
        }
        Ok(StoreData { header, payload })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.encode();
        out.reserve(self.payload.len() * 4 + CRC_LEN);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| StoreError::io(path, e))
    }
}

/// Validate and write records to `path`.
pub fn write_store<I>(path: &Path, header: StoreHeader, records: I) -> Result<(), StoreError>
where
    I: IntoIterator<Item = ActivationRecord>,
{
    StoreData::from_records(header, records)?.write(path)
}

/// A read-only store held in memory. Checksum and sizes are verified on open.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    header: StoreHeader,
    bytes: Vec<u8>,
    payload_offset: usize,
    index: HashMap<SentenceId, usize>,
}

/// All sentences at one layer, rows in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix<'a> {
    pub layer: usize,
    pub row_ids: &'a [SentenceId],
    pub dim: usize,
    pub data: Vec<f32>,
}

impl LayerMatrix<'_> {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }
}

impl ActivationStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| StoreError::io(path, e))?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, StoreError> {
        if bytes.len() < FIXED_HEADER_LEN + CRC_LEN {
            return Err(StoreError::Truncated(bytes.len()));
        }
        let body_len = bytes.len() - CRC_LEN;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(StoreError::Checksum { stored, computed });
        }

        let mut cur = Cursor {
            buf: &bytes[..body_len],
            pos: 0,
        };
        if cur.take(4)? != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let endian = cur.u8()?;
        if endian != ENDIAN_LITTLE {
            return Err(StoreError::UnsupportedTag {
                what: "endianness",
                tag: endian,
            });
        }
        let dtype = cur.u8()?;
        if dtype != DTYPE_F32 {
            return Err(StoreError::UnsupportedTag {
                what: "dtype",
                tag: dtype,
            });
        }
        let n_layers = cur.u32()? as usize;
        let hidden_dim = cur.u32()? as usize;
        let n_sentences = usize::try_from(cur.u64()?)
            .map_err(|_| StoreError::InvalidHeader("n_sentences overflows".into()))?;
        let model_name = cur.string()?;
        let metadata: BTreeMap<String, String> = serde_json::from_str(&cur.string()?)
            .map_err(|e| StoreError::InvalidHeader(format!("metadata: {e}")))?;
        // each entry needs at least 5 bytes; reject absurd counts before allocating
        if n_sentences > body_len / 5 {
            return Err(StoreError::InvalidHeader(format!(
                "{n_sentences} sentences cannot fit in {body_len} bytes"
            )));
        }
        let mut sentences = Vec::with_capacity(n_sentences);
        for _ in 0..n_sentences {
            let pair_id = cur.string()?;
            let tag = cur.u8()?;
            let role = Role::from_tag(tag).ok_or(StoreError::UnsupportedTag { what: "role", tag })?;
            sentences.push(SentenceId { pair_id, role });
        }
        let header = StoreHeader {
            model_name,
            n_layers,
            hidden_dim,
            sentences,
            metadata,
        };
        header.validate()?;

        let payload_offset = cur.pos;
        let expected = header
            .n_layers
            .checked_mul(header.n_sentences())
            .and_then(|v| v.checked_mul(header.hidden_dim))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(payload_offset + CRC_LEN))
            .ok_or_else(|| StoreError::InvalidHeader("declared sizes overflow".into()))?;
        if expected != bytes.len() {
            return Err(StoreError::SizeMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let index = header
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(ActivationStore {
            header,
            bytes,
            payload_offset,
            index,
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn n_layers(&self) -> usize {
        self.header.n_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.header.hidden_dim
    }

    /// Row index of a sentence in every layer matrix.
    pub fn row_of(&self, id: &SentenceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn read_layer(&self, layer: usize) -> Result<LayerMatrix<'_>, StoreError> {
        if layer >= self.header.n_layers {
            return Err(StoreError::LayerOutOfRange {
                layer,
                n_layers: self.header.n_layers,
            });
        }
        let floats = self.header.n_sentences() * self.header.hidden_dim;
        let start = self.payload_offset + layer * floats * 4;
        let data = self.bytes[start..start + floats * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(LayerMatrix {
            layer,
            row_ids: &self.header.sentences,
            dim: self.header.hidden_dim,
            data,
        })
    }

    /// Full payload, layer-major.
    pub fn to_data(&self) -> StoreData {
        let data = self.bytes[self.payload_offset..self.bytes.len() - CRC_LEN]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        StoreData {
            header: self.header.clone(),
            payload: data,
        }
    }
}

/// Open a store and verify checksum, header and sizes; returns the header.
pub fn integrity_check(path: &Path) -> Result<StoreHeader, StoreError> {
    ActivationStore::open(path).map(|s| s.header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n_pairs: usize, n_layers: usize, dim: usize) -> StoreHeader {
        let sentences = (0..n_pairs)
            .flat_map(|i| [SentenceId::good(format!("p{i}")), SentenceId::bad(format!("p{i}"))])
            .collect();
        StoreHeader::new("test-model", n_layers, dim, sentences)
    }

    fn records(h: &StoreHeader) -> Vec<ActivationRecord> {
        let mut out = Vec::new();
        for layer in 0..h.n_layers {
            for (i, s) in h.sentences.iter().enumerate() {
                out.push(ActivationRecord {
                    sentence: s.clone(),
                    layer,
                    vector: (0..h.hidden_dim)
                        .map(|d| (layer * 100 + i * 10 + d) as f32 * 0.5)
                        .collect(),
                });
            }
        }
        out
    }

    #[test]
    fn payload_size_arithmetic() {
        // 2 sentences x 3 layers x dim 4
        let h = StoreHeader::new(
            "m",
            3,
            4,
            vec![SentenceId::good("a"), SentenceId::bad("a")],
        );
        let header_len = h.encode().len();
        let data = StoreData::from_records(h.clone(), records(&h)).unwrap();
        assert_eq!(data.to_bytes().len(), header_len + 96 + 4);
    }

    #[test]
    fn round_trip_every_layer() {
        let h = header(3, 4, 5);
        let recs = records(&h);
        let data = StoreData::from_records(h.clone(), recs.clone()).unwrap();
        let store = ActivationStore::from_bytes(data.to_bytes()).unwrap();
        assert_eq!(store.header(), &h);
        for layer in 0..4 {
            let m = store.read_layer(layer).unwrap();
            for (i, _) in h.sentences.iter().enumerate() {
                let expected = &recs[layer * h.n_sentences() + i].vector;
                let got = m.row(i);
                assert!(expected
                    .iter()
                    .zip(got)
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
        assert_eq!(store.to_data(), data);
    }

    #[test]
    fn out_of_order_records_accepted() {
        let h = header(2, 2, 3);
        let mut recs = records(&h);
        recs.reverse();
        let a = StoreData::from_records(h.clone(), recs).unwrap();
        let b = StoreData::from_records(h.clone(), records(&h)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_rejected() {
        let h = header(1, 1, 2);
        let mut recs = records(&h);
        recs[1].vector[0] = f32::NAN;
        assert!(matches!(
            StoreData::from_records(h, recs),
            Err(StoreError::NonFinite { .. })
        ));
    }

    #[test]
    fn missing_and_duplicate_records() {
        let h = header(2, 2, 2);
        let mut recs = records(&h);
        recs.pop();
        assert!(matches!(
            StoreData::from_records(h.clone(), recs.clone()),
            Err(StoreError::MissingRecord { layer: 1, .. })
        ));
        recs.push(recs[0].clone());
        assert!(matches!(
            StoreData::from_records(h, recs),
            Err(StoreError::DuplicateRecord { .. })
        ));
    }

    #[test]
    fn empty_store_round_trips() {
        let h = StoreHeader::new("empty", 3, 8, vec![]);
        let data = StoreData::from_records(h.clone(), vec![]).unwrap();
        let store = ActivationStore::from_bytes(data.to_bytes()).unwrap();
        assert_eq!(store.header(), &h);
        assert_eq!(store.read_layer(2).unwrap().n_rows(), 0);
    }

    #[test]
    fn layer_out_of_range() {
        let h = header(1, 3, 2);
        let data = StoreData::from_records(h.clone(), records(&h)).unwrap();
        let store = ActivationStore::from_bytes(data.to_bytes()).unwrap();
        assert!(matches!(
            store.read_layer(3),
            Err(StoreError::LayerOutOfRange { layer: 3, n_layers: 3 })
        ));
    }

    #[test]
    fn truncation_detected_by_checksum() {
        let h = header(2, 2, 2);
        let bytes = StoreData::from_records(h.clone(), records(&h))
            .unwrap()
            .to_bytes();
        for cut in [1, 5, bytes.len() / 2] {
            let truncated = bytes[..bytes.len() - cut].to_vec();
            assert!(matches!(
                ActivationStore::from_bytes(truncated),
                Err(StoreError::Checksum { .. }) | Err(StoreError::Truncated(_))
            ));
        }
    }

    #[test]
    fn header_corruption_detected() {
        let h = header(2, 2, 2);
        let bytes = StoreData::from_records(h.clone(), records(&h))
            .unwrap()
            .to_bytes();
        // flip a byte inside the model name
        let mut bad = bytes.clone();
        bad[FIXED_HEADER_LEN + 5] ^= 0x20;
        assert!(matches!(
            ActivationStore::from_bytes(bad),
            Err(StoreError::Checksum { .. })
        ));
    }

    #[test]
    fn invalid_headers() {
        assert!(StoreHeader::new("m", 0, 1, vec![]).validate().is_err());
        assert!(StoreHeader::new("m", 1, 0, vec![]).validate().is_err());
        let dup = StoreHeader::new("m", 1, 1, vec![SentenceId::good("a"), SentenceId::good("a")]);
        assert!(dup.validate().is_err());
    }

    #[test]
    fn metadata_survives() {
        let mut h = header(1, 1, 1);
        h.metadata.insert("tap_point".into(), "post_block_residual".into());
        let data = StoreData::from_records(h.clone(), records(&h)).unwrap();
        let store = ActivationStore::from_bytes(data.to_bytes()).unwrap();
        assert_eq!(store.header().metadata["tap_point"], "post_block_residual");
    }
}
