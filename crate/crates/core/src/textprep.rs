//! Tokenization, TF-IDF weighting and the sequence/one-hot encodings fed to
//! the classifier.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOPWORDS_TXT: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("no training document has any token after preprocessing")]
    EmptyCorpus,
    #[error("unknown intent label `{0}`")]
    UnknownLabel(String),
    #[error("sequence length must be at least 1")]
    ZeroLength,
}

/// Parses a stopword list: one token per line, `#` starts a comment.
pub fn parse_stopwords(content: &str) -> HashSet<String> {
    content
        .lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(|w| strip_punctuation(&w.to_lowercase()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// The bundled stopword list.
pub fn stopwords() -> &'static HashSet<String> {
    static WORDS: OnceLock<HashSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| parse_stopwords(STOPWORDS_TXT))
}

fn strip_punctuation(token: &str) -> String {
    token.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Lowercases, splits on whitespace, removes every non-alphanumeric character
/// and drops stopwords. Token order and duplicates are preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.to_lowercase()
        .split_whitespace()
        .map(strip_punctuation)
        .filter(|t| !t.is_empty() && !stop.contains(t))
        .collect()
}

/// Sorted distinct terms with a reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: impl IntoIterator<Item = String>) -> Self {
        let terms: Vec<String> = terms
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { terms, index }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// How a document is presented to the recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// One sparse step per token.
    #[default]
    Sequence,
    /// A single step holding the whole document vector.
    Document,
}

/// Fitted TF-IDF statistics. `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    vocab: Vocabulary,
    doc_count: usize,
    df: Vec<u32>,
    idf: Vec<f64>,
}

fn smoothed_idf(doc_count: usize, df: u32) -> f64 {
    ((1.0 + doc_count as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn fit_tfidf<S: AsRef<str>>(train_docs: &[Vec<S>]) -> Result<TfIdfModel, TextError> {
    let vocab = Vocabulary::new(train_docs.iter().flatten().map(|t| t.as_ref().to_owned()));
    if vocab.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut df = vec![0u32; vocab.len()];
    for doc in train_docs {
        let distinct: BTreeSet<usize> = doc
            .iter()
            .map(|t| vocab.index_of(t.as_ref()).expect("term in vocabulary"))
            .collect();
        for i in distinct {
            df[i] += 1;
        }
    }
    Ok(TfIdfModel::from_parts(vocab, train_docs.len(), df))
}

/// A dense sequence of `L` step vectors, left-padded with zero steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoding {
    dim: usize,
    steps: Vec<Vec<f64>>,
    active_len: usize,
}

impl SequenceEncoding {
    pub fn from_steps(steps: Vec<Vec<f64>>, active_len: usize) -> Self {
        let dim = steps.first().map_or(0, Vec::len);
        debug_assert!(steps.iter().all(|s| s.len() == dim));
        Self {
            dim,
            steps,
            active_len,
        }
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active_len(&self) -> usize {
        self.active_len
    }

    /// Sums all steps into a single document vector.
    pub fn document_vector(&self) -> Vec<f64> {
        let mut doc = vec![0.0; self.dim];
        for step in &self.steps {
            for (d, &v) in doc.iter_mut().zip(step) {
                *d += v;
            }
        }
        doc
    }
}

impl TfIdfModel {
    pub fn from_parts(vocab: Vocabulary, doc_count: usize, df: Vec<u32>) -> Self {
        assert_eq!(vocab.len(), df.len());
        let idf = df.iter().map(|&d| smoothed_idf(doc_count, d)).collect();
        Self {
            vocab,
            doc_count,
            df,
            idf,
        }
    }

    /// Rebuilds a model from stored tables, e.g. when loading a checkpoint.
    /// Returns `None` if the table lengths disagree or a `df` is out of range.
    pub fn from_tables(
        vocab: Vocabulary,
        doc_count: usize,
        df: Vec<u32>,
        idf: Vec<f64>,
    ) -> Option<Self> {
        let consistent = vocab.len() == df.len()
            && df.len() == idf.len()
            && df.iter().all(|&d| d >= 1 && d as usize <= doc_count);
        consistent.then_some(Self {
            vocab,
            doc_count,
            df,
            idf,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn df_table(&self) -> &[u32] {
        &self.df
    }

    pub fn idf_table(&self) -> &[f64] {
        &self.idf
    }

    pub fn df(&self, term: &str) -> Option<u32> {
        self.vocab.index_of(term).map(|i| self.df[i])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab.index_of(term).map(|i| self.idf[i])
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    /// In-vocabulary token indices, truncated to the last `max_len`.
    fn kept_indices<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<usize> {
        let known: Vec<usize> = tokens
            .iter()
            .filter_map(|t| self.vocab.index_of(t.as_ref()))
            .collect();
        let skip = known.len().saturating_sub(max_len);
        known[skip..].to_vec()
    }

    /// Per-occurrence weights: each occurrence of term `t` gets `idf(t) / norm`
    /// where `norm` is the L2 norm of the raw count-times-idf document vector,
    /// so summing repeated occurrences recovers the unit-norm TF-IDF vector.
    fn occurrence_weights(&self, kept: &[usize]) -> Vec<f64> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for &i in kept {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
        let norm = counts
            .iter()
            .map(|(&i, &c)| (c * self.idf[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        kept.iter().map(|&i| self.idf[i] / norm).collect()
    }

    /// Encodes tokens as `max_len` steps. Unknown tokens are dropped, the last
    /// `max_len` known tokens are kept, and padding is prepended.
    pub fn encode_sequence<S: AsRef<str>>(
        &self,
        tokens: &[S],
        max_len: usize,
    ) -> Result<SequenceEncoding, TextError> {
        if max_len == 0 {
            return Err(TextError::ZeroLength);
        }
        let kept = self.kept_indices(tokens, max_len);
        let weights = self.occurrence_weights(&kept);
        let pad = max_len - kept.len();
        let mut steps = vec![vec![0.0; self.dim()]; max_len];
        for (k, (&i, &w)) in kept.iter().zip(&weights).enumerate() {
            steps[pad + k][i] = w;
        }
        Ok(SequenceEncoding::from_steps(steps, kept.len()))
    }

    /// Encodes tokens as a single step carrying the unit-norm document vector.
    pub fn encode_document<S: AsRef<str>>(
        &self,
        tokens: &[S],
        max_len: usize,
    ) -> Result<SequenceEncoding, TextError> {
        let seq = self.encode_sequence(tokens, max_len)?;
        let active = seq.active_len().min(1);
        Ok(SequenceEncoding::from_steps(
            vec![seq.document_vector()],
            active,
        ))
    }

    pub fn encode<S: AsRef<str>>(
        &self,
        tokens: &[S],
        max_len: usize,
        mode: EncodingMode,
    ) -> Result<SequenceEncoding, TextError> {
        match mode {
            EncodingMode::Sequence => self.encode_sequence(tokens, max_len),
            EncodingMode::Document => self.encode_document(tokens, max_len),
        }
    }
}

/// Default sequence length: the longest training document, capped at 16.
pub fn default_seq_len<S: AsRef<str>>(train_docs: &[Vec<S>]) -> usize {
    train_docs
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(1)
        .clamp(1, 16)
}

/// A one-hot intent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    vector: Vec<f64>,
    hot_index: usize,
}

impl OneHot {
    pub fn new(hot_index: usize, dim: usize) -> Self {
        assert!(hot_index < dim, "hot index {hot_index} out of range {dim}");
        let mut vector = vec![0.0; dim];
        vector[hot_index] = 1.0;
        Self { vector, hot_index }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn hot_index(&self) -> usize {
        self.hot_index
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

pub fn encode_intent<S: AsRef<str>>(label: &str, labels: &[S]) -> Result<OneHot, TextError> {
    labels
        .iter()
        .position(|l| l.as_ref() == label)
        .map(|i| OneHot::new(i, labels.len()))
        .ok_or_else(|| TextError::UnknownLabel(label.to_owned()))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
