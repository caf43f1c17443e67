//! Self-contained model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"IBIC"
//! version  u16
//! length   u64   payload byte count
//! crc32    u32   of the payload
//! payload  sections, each `tag: u8, len: u64, body`
//!            1 config   2 vocabulary   3 idf table   4 labels   5 tensors
//! ```
//!
//! Parameters are stored as raw `f64` bit patterns, so a load reproduces them
//! exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::neural::{forward, ModelConfig, ModelParams, NeuralError, PenaltyScope, Tensor};
use crate::textprep::{self, EncodingMode, SequenceEncoding, TfIdfModel, Vocabulary};

pub const MAGIC: &[u8; 4] = b"IBIC";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 4;

const SEC_CONFIG: u8 = 1;
const SEC_VOCAB: u8 = 2;
const SEC_IDF: u8 = 3;
const SEC_LABELS: u8 = 4;
const SEC_TENSORS: u8 = 5;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u16, expected: u16 },
    #[error(
        "checkpoint checksum mismatch: header says {expected:08x}, payload hashes to {actual:08x}"
    )]
    Checksum { expected: u32, actual: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Everything needed to classify raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub tfidf: TfIdfModel,
    pub labels: Vec<String>,
    pub encoding: EncodingMode,
    pub profile: String,
    pub seed: u64,
}

/// Result of classifying one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label_index: usize,
    pub label: String,
    /// Largest softmax probability.
    pub confidence: f64,
    pub probs: Vec<f64>,
    /// Tokens that survived preprocessing and are in the vocabulary.
    pub known_tokens: usize,
}

impl Checkpoint {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn encode_text(&self, text: &str) -> SequenceEncoding {
        let tokens = textprep::tokenize(text);
        self.tfidf
            .encode(&tokens, self.config.seq_len, self.encoding)
            .expect("checkpoint seq_len is at least 1")
    }

    pub fn predict(&self, seq: &SequenceEncoding) -> Result<Vec<f64>, NeuralError> {
        Ok(forward(&self.params, seq, None)?.probs)
    }

    /// Inference-mode classification; ties go to the lowest label index.
    pub fn classify(&self, text: &str) -> Result<Classification, NeuralError> {
        let seq = self.encode_text(text);
        let probs = self.predict(&seq)?;
        let label_index = textprep::argmax(&probs);
        Ok(Classification {
            label_index,
            label: self.labels[label_index].clone(),
            confidence: probs[label_index],
            probs,
            known_tokens: seq.active_len(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();

        let mut config = Writer::default();
        let c = &self.config;
        for dim in [c.input_dim, c.hidden_units, c.num_classes, c.seq_len] {
            config.u32(dim as u32);
        }
        config.f64(c.l2_lambda);
        config.f64(c.dropout_rate);
        config.u8(match c.l2_scope {
            PenaltyScope::LstmKernels => 0,
            PenaltyScope::AllWeights => 1,
        });
        config.u8(match self.encoding {
            EncodingMode::Sequence => 0,
            EncodingMode::Document => 1,
        });
        config.u64(self.seed);
        config.str(&self.profile);
        section(&mut payload, SEC_CONFIG, config.0);

        let mut vocab = Writer::default();
        vocab.u32(self.tfidf.vocab().len() as u32);
        for t in self.tfidf.vocab().terms() {
            vocab.str(t);
        }
        section(&mut payload, SEC_VOCAB, vocab.0);

        let mut idf = Writer::default();
        idf.u64(self.tfidf.doc_count() as u64);
        for (&df, &w) in self.tfidf.df_table().iter().zip(self.tfidf.idf_table()) {
            idf.u32(df);
            idf.f64(w);
        }
        section(&mut payload, SEC_IDF, idf.0);

        let mut labels = Writer::default();
        labels.u32(self.labels.len() as u32);
        for l in &self.labels {
            labels.str(l);
        }
        section(&mut payload, SEC_LABELS, labels.0);

        let mut tensors = Writer::default();
        let all = self.params.tensors();
        tensors.u32(all.len() as u32);
        for t in all {
            tensors.u32(t.rows() as u32);
            tensors.u32(t.cols() as u32);
            for &v in t.data() {
                tensors.f64(v);
            }
        }
        section(&mut payload, SEC_TENSORS, tensors.0);

        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Corrupt("truncated header".into())
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Corrupt("truncated header".into()));
        }
        let declared_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let expected = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        let actual = crc32fast::hash(payload);
        if actual != expected || declared_len != payload.len() as u64 {
            return Err(CheckpointError::Checksum { expected, actual });
        }
        decode_payload(payload).map_err(CheckpointError::Corrupt)
    }
}

fn section(out: &mut Vec<u8>, tag: u8, body: Vec<u8>) {
    out.push(tag);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("unexpected end of data at byte {}", self.pos))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String, String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| e.to_string())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_payload(payload: &[u8]) -> Result<Checkpoint, String> {
    let mut sections: [Option<&[u8]>; 6] = [None; 6];
    let mut r = Reader::new(payload);
    while !r.done() {
        let tag = r.u8()? as usize;
        let len = r.u64()? as usize;
        let body = r.take(len)?;
        match sections.get_mut(tag) {
            Some(slot @ None) if tag > 0 => *slot = Some(body),
            _ => return Err(format!("unexpected or duplicate section {tag}")),
        }
    }
    let get = |tag: u8, name: &str| {
        sections[tag as usize].ok_or_else(|| format!("missing {name} section"))
    };

    let mut r = Reader::new(get(SEC_CONFIG, "config")?);
    let input_dim = r.u32()? as usize;
    let hidden_units = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let seq_len = r.u32()? as usize;
    let l2_lambda = r.f64()?;
    let dropout_rate = r.f64()?;
    let l2_scope = match r.u8()? {
        0 => PenaltyScope::LstmKernels,
        1 => PenaltyScope::AllWeights,
        other => return Err(format!("unknown penalty scope {other}")),
    };
    let config = ModelConfig {
        input_dim,
        hidden_units,
        num_classes,
        seq_len,
        l2_lambda,
        dropout_rate,
        l2_scope,
    };
    config.validate().map_err(|e| e.to_string())?;
    let encoding = match r.u8()? {
        0 => EncodingMode::Sequence,
        1 => EncodingMode::Document,
        other => return Err(format!("unknown encoding mode {other}")),
    };
    let seed = r.u64()?;
    let profile = r.str()?;

    let mut r = Reader::new(get(SEC_VOCAB, "vocabulary")?);
    let n = r.u32()? as usize;
    let terms = (0..n).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::new(terms.clone());
    if vocab.terms() != terms.as_slice() {
        return Err("vocabulary is not sorted and distinct".into());
    }

    let mut r = Reader::new(get(SEC_IDF, "idf")?);
    let doc_count = r.u64()? as usize;
    let mut df = Vec::with_capacity(n);
    let mut idf = Vec::with_capacity(n);
    for _ in 0..n {
        df.push(r.u32()?);
        idf.push(r.f64()?);
    }
    let tfidf =
        TfIdfModel::from_tables(vocab, doc_count, df, idf).ok_or("inconsistent idf table")?;
    if tfidf.dim() != input_dim {
        return Err("vocabulary size does not match input dimension".into());
    }

    let mut r = Reader::new(get(SEC_LABELS, "labels")?);
    let k = r.u32()? as usize;
    let labels = (0..k).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    if labels.len() != num_classes {
        return Err("label count does not match class count".into());
    }

    let mut r = Reader::new(get(SEC_TENSORS, "tensors")?);
    let mut params = ModelParams::zeros(&config);
    let count = r.u32()? as usize;
    if count != params.tensors().len() {
        return Err(format!(
            "expected {} tensors, found {count}",
            params.tensors().len()
        ));
    }
    for t in params.tensors_mut() {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != t.shape() {
            return Err(format!(
                "tensor shape {rows}x{cols}, expected {:?}",
                t.shape()
            ));
        }
        let data = (0..rows * cols)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>, _>>()?;
        *t = Tensor::from_vec(rows, cols, data);
    }
    if !params.is_finite() {
        return Err("non-finite parameter".into());
    }

    Ok(Checkpoint {
        params,
        config,
        tfidf,
        labels,
        encoding,
        profile,
        seed,
    })
}

pub fn save_checkpoint(
    checkpoint: &Checkpoint,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_params;
    use crate::textprep::fit_tfidf;

    fn sample() -> Checkpoint {
        let docs: Vec<Vec<String>> = ["turn on light", "turn off light", "start fan"]
            .iter()
            .map(|t| textprep::tokenize(t))
            .collect();
        let tfidf = fit_tfidf(&docs).unwrap();
        let config = ModelConfig {
            input_dim: tfidf.dim(),
            hidden_units: 6,
            num_classes: 3,
            l2_lambda: 0.01,
            dropout_rate: 0.2,
            seq_len: 3,
            l2_scope: PenaltyScope::AllWeights,
        };
        Checkpoint {
            params: init_params(&config, 5).unwrap(),
            config,
            tfidf,
            labels: vec!["a".into(), "b".into(), "c".into()],
            encoding: EncodingMode::Sequence,
            profile: "regularized".into(),
            seed: 5,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        for text in ["turn on light", "start fan", "", "light light off"] {
            assert_eq!(back.classify(text).unwrap(), ck.classify(text).unwrap());
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::Checksum { .. })
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Checksum { .. })
        ));
    }

    #[test]
    fn bumped_version_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[4..6].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(CheckpointError::Version { found, expected }) => {
                assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_short_header() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOPE\x01\x00"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"IB"),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn classify_empty_text_has_no_known_tokens() {
        let c = sample().classify("the of and").unwrap();
        assert_eq!(c.known_tokens, 0);
        assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
