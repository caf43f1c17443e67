//! Training loop, held-out evaluation, per-epoch history and checkpoints.

mod checkpoint;
mod history;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Classification, FORMAT_VERSION,
};
pub use history::{export_history, history_csv, read_history, EpochRecord, HistoryError};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::metrics::{confusion_matrix, EvalResult, MetricsError};
use crate::neural::{
    accumulate_gradients, add_penalty_gradient, cross_entropy, forward, forward_train, init_params,
    AdamConfig, AdamState, Gradients, L2Penalty, ModelConfig, ModelParams, NeuralError,
    PenaltyScope,
};
use crate::textprep::{
    self, encode_intent, fit_tfidf, EncodingMode, OneHot, SequenceEncoding, TextError, TfIdfModel,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train and validation label lists differ")]
    LabelMismatch,
    #[error("{0} dataset is empty")]
    EmptyData(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label `{0}` is not known to the model")]
    UnknownLabel(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// The two training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// No regularization, 75 epochs.
    Baseline,
    /// L2 0.01 and dropout 0.2, 80 epochs.
    Regularized,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Baseline => "baseline",
            Profile::Regularized => "regularized",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Profile::Baseline),
            "regularized" => Ok(Profile::Regularized),
            other => Err(format!(
                "unknown profile `{other}` (expected baseline or regularized)"
            )),
        }
    }
}

/// Hyperparameters of a training run. Input and output dimensions come from
/// the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub l2_lambda: f64,
    #[serde(default)]
    pub l2_scope: PenaltyScope,
    pub dropout_rate: f64,
    /// Token window; `None` means the longest training document, capped at 16.
    pub seq_len: Option<usize>,
    pub encoding: EncodingMode,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        let (epochs, l2_lambda, dropout_rate) = match profile {
            Profile::Baseline => (75, 0.0, 0.0),
            Profile::Regularized => (80, 0.01, 0.2),
        };
        Self {
            profile: profile.as_str().to_owned(),
            epochs,
            batch_size: 16,
            hidden_units: 128,
            l2_lambda,
            l2_scope: PenaltyScope::LstmKernels,
            dropout_rate,
            seq_len: None,
            encoding: EncodingMode::Sequence,
            adam: AdamConfig::default(),
            seed,
            shuffle: true,
        }
    }

    pub fn baseline(seed: u64) -> Self {
        Self::for_profile(Profile::Baseline, seed)
    }

    pub fn regularized(seed: u64) -> Self {
        Self::for_profile(Profile::Regularized, seed)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.seq_len == Some(0) {
            return Err(TrainError::Config("seq_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Encoded examples ready for the network.
struct Encoded {
    inputs: Vec<SequenceEncoding>,
    targets: Vec<OneHot>,
}

fn encode_dataset(
    tfidf: &TfIdfModel,
    data: &Dataset,
    labels: &[String],
    seq_len: usize,
    mode: EncodingMode,
) -> Result<Encoded, TrainError> {
    let mut inputs = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for item in data.items() {
        let tokens = textprep::tokenize(&item.text);
        inputs.push(tfidf.encode(&tokens, seq_len, mode)?);
        targets.push(
            encode_intent(&item.intent, labels)
                .map_err(|_| TrainError::UnknownLabel(item.intent.clone()))?,
        );
    }
    Ok(Encoded { inputs, targets })
}

/// Mean loss (cross-entropy plus L2 penalty) and accuracy in inference mode.
fn score(
    params: &ModelParams,
    penalty: L2Penalty,
    data: &Encoded,
) -> Result<(f64, f64), NeuralError> {
    let mut ce_sum = 0.0;
    let mut correct = 0usize;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let pass = forward(params, x, None)?;
        ce_sum += cross_entropy(&pass.probs, y);
        if textprep::argmax(&pass.probs) == y.hot_index() {
            correct += 1;
        }
    }
    let n = data.inputs.len() as f64;
    let mut loss = ce_sum / n;
    if !penalty.is_zero() {
        loss += penalty.value(params);
    }
    Ok((loss, correct as f64 / n))
}

/// Independent RNG streams derived from the run seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fits TF-IDF on `train`, then runs mini-batch Adam for `cfg.epochs` epochs.
/// After every epoch both sets are scored in inference mode.
pub fn train(
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    if train.labels() != val.labels() {
        return Err(TrainError::LabelMismatch);
    }
    let labels = train.labels().to_vec();

    let train_docs: Vec<Vec<String>> = train
        .items()
        .iter()
        .map(|it| textprep::tokenize(&it.text))
        .collect();
    let tfidf = fit_tfidf(&train_docs)?;
    let seq_len = cfg
        .seq_len
        .unwrap_or_else(|| textprep::default_seq_len(&train_docs));
    let model_cfg = ModelConfig {
        input_dim: tfidf.dim(),
        hidden_units: cfg.hidden_units,
        num_classes: labels.len(),
        l2_lambda: cfg.l2_lambda,
        dropout_rate: cfg.dropout_rate,
        seq_len,
        l2_scope: cfg.l2_scope,
    };
    let penalty = model_cfg.penalty();
    model_cfg.validate()?;

    let train_set = encode_dataset(&tfidf, train, &labels, seq_len, cfg.encoding)?;
    let val_set = encode_dataset(&tfidf, val, &labels, seq_len, cfg.encoding)?;

    let mut params = init_params(&model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut shuffle_rng = stream(cfg.seed, 1);
    let mut dropout_rng = stream(cfg.seed, 2);
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
    let mut grads = Gradients::zeros_like(&params);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            for t in grads.0.tensors_mut() {
                t.data_mut().fill(0.0);
            }
            let mut ce_sum = 0.0;
            for &idx in batch {
                let pass = forward_train(
                    &params,
                    &train_set.inputs[idx],
                    cfg.dropout_rate,
                    &mut dropout_rng,
                )?;
                ce_sum += cross_entropy(&pass.probs, &train_set.targets[idx]);
                accumulate_gradients(&params, &pass, &train_set.targets[idx], &mut grads)?;
            }
            let batch_loss = ce_sum / batch.len() as f64 + penalty.value(&params);
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            add_penalty_gradient(&params, penalty, &mut grads);
            adam.update(&mut params, &grads);
        }

        let (train_loss, train_accuracy) = score(&params, penalty, &train_set)?;
        let (val_loss, val_accuracy) = score(&params, penalty, &val_set)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
    }

    let checkpoint = Checkpoint {
        params,
        config: model_cfg,
        tfidf,
        labels,
        encoding: cfg.encoding,
        profile: cfg.profile.clone(),
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}

/// Classifies every item in inference mode and scores the predictions.
pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<EvalResult, TrainError> {
    let mut truth = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    for item in data.items() {
        let t = checkpoint
            .label_index(&item.intent)
            .ok_or_else(|| TrainError::UnknownLabel(item.intent.clone()))?;
        truth.push(t);
        pred.push(checkpoint.classify(&item.text)?.label_index);
    }
    let matrix = confusion_matrix(&truth, &pred, checkpoint.labels.len())?
        .with_labels(&checkpoint.labels)?;
    Ok(EvalResult::from_matrix(matrix)?)
}

/// Mean cross-entropy plus penalty and accuracy of `checkpoint` on `data`,
/// computed the same way as the per-epoch history.
pub fn dataset_loss(checkpoint: &Checkpoint, data: &Dataset) -> Result<(f64, f64), TrainError> {
    let encoded = encode_dataset(
        &checkpoint.tfidf,
        data,
        &checkpoint.labels,
        checkpoint.config.seq_len,
        checkpoint.encoding,
    )?;
    Ok(score(
        &checkpoint.params,
        checkpoint.config.penalty(),
        &encoded,
    )?)
}
