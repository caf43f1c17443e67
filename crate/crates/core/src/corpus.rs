//! Labeled-instruction datasets: loading, validation, stratified splitting and
//! summary statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep;

const BUNDLED_JSONL: &str = include_str!("../data/bundled.jsonl");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("intent `{intent}` has {count} item(s); at least 2 are required to split")]
    TooFewItems { intent: String, count: usize },
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("test fraction {0} leaves the {1} partition empty")]
    EmptyPartition(f64, &'static str),
}

/// One instruction text with its intent label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledInstruction {
    pub text: String,
    pub intent: String,
}

impl LabeledInstruction {
    pub fn new(text: impl Into<String>, intent: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            intent: intent.into(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("`text` is blank".into());
        }
        if self.intent.is_empty() {
            return Err("`intent` is blank".into());
        }
        if !self
            .intent
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(format!("intent `{}` must match [a-z0-9_]+", self.intent));
        }
        Ok(())
    }
}

/// An ordered list of instructions plus the sorted label set that fixes the
/// one-hot index of every intent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    items: Vec<LabeledInstruction>,
    labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, deriving the label list from the items.
    pub fn from_items(items: Vec<LabeledInstruction>) -> Result<Self, CorpusError> {
        if items.is_empty() {
            return Err(CorpusError::Empty);
        }
        for (i, item) in items.iter().enumerate() {
            item.validate().map_err(|message| CorpusError::Malformed {
                line: i + 1,
                message,
            })?;
        }
        let labels: BTreeSet<&str> = items.iter().map(|it| it.intent.as_str()).collect();
        let labels = labels.into_iter().map(str::to_owned).collect();
        Ok(Self { items, labels })
    }

    /// Builds a dataset whose label list is `labels` rather than the labels
    /// present in `items`. Used to keep train/test partitions index-compatible.
    fn with_labels(items: Vec<LabeledInstruction>, labels: Vec<String>) -> Self {
        debug_assert!(items
            .iter()
            .all(|it| labels.binary_search(&it.intent).is_ok()));
        Self { items, labels }
    }

    pub fn items(&self) -> &[LabeledInstruction] {
        &self.items
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Keeps only the items for which `keep` holds, retaining the full label list.
    pub fn filter(
        &self,
        mut keep: impl FnMut(&LabeledInstruction) -> bool,
    ) -> Result<Self, CorpusError> {
        let items: Vec<_> = self.items.iter().filter(|it| keep(it)).cloned().collect();
        if items.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Self::with_labels(items, self.labels.clone()))
    }
}

/// Parses JSON Lines dataset content. Blank lines are skipped.
pub fn parse_dataset(content: &str) -> Result<Dataset, CorpusError> {
    let mut items = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_line(line, idx + 1)?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(CorpusError::Empty);
    }
    Dataset::from_items(items)
}

fn parse_line(line: &str, line_no: usize) -> Result<LabeledInstruction, CorpusError> {
    let item: LabeledInstruction =
        serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
    item.validate().map_err(|message| CorpusError::Malformed {
        line: line_no,
        message,
    })?;
    Ok(item)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(parse_line(&line, idx + 1)?);
    }
    if items.is_empty() {
        return Err(CorpusError::Empty);
    }
    Dataset::from_items(items)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for item in &dataset.items {
        let line = serde_json::to_string(item).expect("instruction serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// The bundled 14-intent corpus: on/off commands for seven appliances, ten
/// paraphrases each.
pub fn bundled_dataset() -> Dataset {
    parse_dataset(BUNDLED_JSONL).expect("bundled corpus is valid")
}

/// Splits per label: `round(count * test_fraction)` items (at least one) go to
/// the test partition, chosen by a seeded shuffle. Both partitions keep the
/// input's full label list and relative item order.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in dataset.items.iter().enumerate() {
        by_label.entry(item.intent.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; dataset.items.len()];
    for (label, indices) in &mut by_label {
        let count = indices.len();
        if count < 2 {
            return Err(CorpusError::TooFewItems {
                intent: (*label).to_owned(),
                count,
            });
        }
        let n_test = ((count as f64 * test_fraction).round() as usize).max(1);
        if n_test >= count {
            return Err(CorpusError::EmptyPartition(test_fraction, "train"));
        }
        indices.shuffle(&mut rng);
        for &i in &indices[..n_test] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, &t) in dataset.items.iter().zip(&in_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((
        Dataset::with_labels(train, dataset.labels.clone()),
        Dataset::with_labels(test, dataset.labels.clone()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total_count: usize,
    pub per_intent_counts: BTreeMap<String, usize>,
    pub token_count_min: usize,
    pub token_count_mean: f64,
    pub token_count_max: usize,
    pub vocabulary_size: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats, CorpusError> {
    if dataset.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut per_intent_counts = BTreeMap::new();
    let mut vocab = BTreeSet::new();
    let mut lengths = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        *per_intent_counts.entry(item.intent.clone()).or_insert(0) += 1;
        let tokens = textprep::tokenize(&item.text);
        lengths.push(tokens.len());
        vocab.extend(tokens);
    }
    let sum: usize = lengths.iter().sum();
    Ok(DatasetStats {
        total_count: dataset.len(),
        per_intent_counts,
        token_count_min: *lengths.iter().min().unwrap(),
        token_count_mean: sum as f64 / lengths.len() as f64,
        token_count_max: *lengths.iter().max().unwrap(),
        vocabulary_size: vocab.len(),
    })
}

impl DatasetStats {
    /// Renders the statistics as `key,value` CSV rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("total_count,{}\n", self.total_count));
        out.push_str(&format!("vocabulary_size,{}\n", self.vocabulary_size));
        out.push_str(&format!("token_count_min,{}\n", self.token_count_min));
        out.push_str(&format!("token_count_mean,{}\n", self.token_count_mean));
        out.push_str(&format!("token_count_max,{}\n", self.token_count_max));
        for (label, count) in &self.per_intent_counts {
            out.push_str(&format!("count:{label},{count}\n"));
        }
        out
    }
}
