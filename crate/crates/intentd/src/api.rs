//! JSON bodies exchanged over HTTP and printed by the CLI.

use intentd_core::dispatch::{Classified, Outcome};
use intentd_core::metrics::{ClassScores, EvalResult};
use intentd_core::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

/// Longest accepted instruction, in characters.
pub const MAX_INSTRUCTION_CHARS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        Self {
            error: error.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub labels: Vec<String>,
    pub hidden_units: usize,
    pub vocab_size: usize,
    pub profile: String,
    pub seed: u64,
}

impl ModelInfo {
    pub fn of(ckpt: &Checkpoint) -> Self {
        Self {
            labels: ckpt.labels.clone(),
            hidden_units: ckpt.config.hidden_units,
            vocab_size: ckpt.tfidf.dim(),
            profile: ckpt.profile.clone(),
            seed: ckpt.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Summary of the evaluation run at service start-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub dataset: String,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub items: u64,
    pub per_class: Vec<LabelScores>,
    pub macro_avg: ClassScores,
    pub weighted_avg: ClassScores,
    pub labels: Vec<String>,
    /// Rows are true labels, columns predictions, both in `labels` order.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsSummary {
    pub fn new(dataset: impl Into<String>, r: &EvalResult) -> Self {
        let labels = r.matrix.labels().to_vec();
        let per_class = labels
            .iter()
            .zip(&r.scores.per_class)
            .map(|(label, s)| LabelScores {
                label: label.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
            })
            .collect();
        Self {
            dataset: dataset.into(),
            accuracy: r.accuracy,
            items: r.matrix.total(),
            per_class,
            macro_avg: r.scores.macro_avg,
            weighted_avg: r.scores.weighted_avg,
            labels,
            confusion: r.matrix.cells().to_vec(),
        }
    }
}

/// Output of `intentd predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub intent: Option<String>,
    pub confidence: f64,
    pub outcome: Outcome,
}

impl Prediction {
    pub fn new(classified: &Classified, outcome: Outcome) -> Self {
        let (intent, confidence) = match classified {
            Classified::Label { label, confidence } => (Some(label.clone()), *confidence),
            _ => (None, 0.0),
        };
        Self {
            intent,
            confidence,
            outcome,
        }
    }
}
