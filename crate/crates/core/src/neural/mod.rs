//! LSTM classifier with a dense softmax head, trained by hand-written
//! backpropagation through time and Adam. All arithmetic is `f64`.

mod adam;
mod gradcheck;
mod lstm;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use lstm::{
    accumulate_gradients, add_penalty_gradient, backward, cross_entropy, forward, forward_train,
    loss, lstm_step, softmax, DropoutMask, ForwardPass, StepCache,
};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
}

pub(crate) fn check_dim(
    what: &'static str,
    expected: usize,
    actual: usize,
) -> Result<(), NeuralError> {
    if expected == actual {
        Ok(())
    } else {
        Err(NeuralError::Dimension {
            what,
            expected,
            actual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub seq_len: usize,
    #[serde(default)]
    pub l2_scope: PenaltyScope,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_units", self.hidden_units),
            ("num_classes", self.num_classes),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NeuralError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(NeuralError::Config(format!(
                "l2_lambda must be finite and non-negative, got {}",
                self.l2_lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NeuralError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn penalty(&self) -> L2Penalty {
        L2Penalty {
            lambda: self.l2_lambda,
            scope: self.l2_scope,
        }
    }
}

/// Which weight tensors the L2 penalty covers. Biases are never penalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScope {
    /// LSTM input and recurrent kernels; the dense head is left free.
    #[default]
    LstmKernels,
    /// Every weight tensor, including the dense head.
    AllWeights,
}

impl PenaltyScope {
    pub fn covers(self, kind: SlotKind) -> bool {
        !matches!(
            (self, kind),
            (_, SlotKind::Bias) | (PenaltyScope::LstmKernels, SlotKind::HeadKernel)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyScope::LstmKernels => "lstm_kernels",
            PenaltyScope::AllWeights => "all_weights",
        }
    }
}

impl std::str::FromStr for PenaltyScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm_kernels" => Ok(PenaltyScope::LstmKernels),
            "all_weights" => Ok(PenaltyScope::AllWeights),
            other => Err(format!(
                "unknown penalty scope `{other}` (expected lstm_kernels or all_weights)"
            )),
        }
    }
}

/// `lambda * Σ w²` over the tensors selected by `scope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Penalty {
    pub lambda: f64,
    pub scope: PenaltyScope,
}

impl L2Penalty {
    pub const NONE: L2Penalty = L2Penalty {
        lambda: 0.0,
        scope: PenaltyScope::LstmKernels,
    };

    pub fn new(lambda: f64, scope: PenaltyScope) -> Self {
        Self { lambda, scope }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0
    }

    pub fn value(&self, p: &ModelParams) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.lambda * p.penalized_sum_squares(self.scope)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    InputKernel,
    RecurrentKernel,
    HeadKernel,
    Bias,
}

/// Which parameter tensor a slot refers to, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: &'static str,
    pub kind: SlotKind,
}

impl TensorSlot {
    pub fn is_weight(&self) -> bool {
        self.kind != SlotKind::Bias
    }
}

pub const TENSOR_SLOTS: [TensorSlot; 14] = {
    use SlotKind::*;
    const fn s(name: &'static str, kind: SlotKind) -> TensorSlot {
        TensorSlot { name, kind }
    }
    [
        s("w_i", InputKernel),
        s("w_f", InputKernel),
        s("w_g", InputKernel),
        s("w_o", InputKernel),
        s("u_i", RecurrentKernel),
        s("u_f", RecurrentKernel),
        s("u_g", RecurrentKernel),
        s("u_o", RecurrentKernel),
        s("b_i", Bias),
        s("b_f", Bias),
        s("b_g", Bias),
        s("b_o", Bias),
        s("w_y", HeadKernel),
        s("b_y", Bias),
    ]
};

/// All trainable tensors. Gate weights `w_*` are `H x V`, recurrent weights
/// `u_*` are `H x H`, gate biases are `H x 1`, the head is `K x H` plus `K x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_o: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_g: Tensor,
    pub u_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_g: Tensor,
    pub b_o: Tensor,
    pub w_y: Tensor,
    pub b_y: Tensor,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (v, h, k) = (cfg.input_dim, cfg.hidden_units, cfg.num_classes);
        Self {
            w_i: Tensor::zeros(h, v),
            w_f: Tensor::zeros(h, v),
            w_g: Tensor::zeros(h, v),
            w_o: Tensor::zeros(h, v),
            u_i: Tensor::zeros(h, h),
            u_f: Tensor::zeros(h, h),
            u_g: Tensor::zeros(h, h),
            u_o: Tensor::zeros(h, h),
            b_i: Tensor::zeros(h, 1),
            b_f: Tensor::zeros(h, 1),
            b_g: Tensor::zeros(h, 1),
            b_o: Tensor::zeros(h, 1),
            w_y: Tensor::zeros(k, h),
            b_y: Tensor::zeros(k, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Tensors in [`TENSOR_SLOTS`] order.
    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.w_i, &self.w_f, &self.w_g, &self.w_o, &self.u_i, &self.u_f, &self.u_g, &self.u_o,
            &self.b_i, &self.b_f, &self.b_g, &self.b_o, &self.w_y, &self.b_y,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_g,
            &mut self.w_o,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_g,
            &mut self.u_o,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_g,
            &mut self.b_o,
            &mut self.w_y,
            &mut self.b_y,
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols()
    }

    pub fn hidden_units(&self) -> usize {
        self.w_i.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_y.rows()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Sum of squared entries of the weight tensors covered by `scope`.
    pub fn penalized_sum_squares(&self, scope: PenaltyScope) -> f64 {
        self.tensors()
            .iter()
            .zip(TENSOR_SLOTS)
            .filter(|(_, slot)| scope.covers(slot.kind))
            .map(|(t, _)| t.sum_squares())
            .sum()
    }

    /// Checks that every tensor matches the shape implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), NeuralError> {
        let expected = ModelParams::zeros(cfg);
        for (a, b) in self.tensors().iter().zip(expected.tensors()) {
            check_dim("parameter rows", b.rows(), a.rows())?;
            check_dim("parameter cols", b.cols(), a.cols())?;
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelParams);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self(params.zeros_like())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Gradients, alpha: f64) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            a.add_scaled(b, alpha);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.0.tensors_mut() {
            t.scale(alpha);
        }
    }
}

impl std::ops::Deref for Gradients {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases except the forget gate (all ones).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, NeuralError> {
    cfg.validate()?;
    let (v, h, k) = (cfg.input_dim, cfg.hidden_units, cfg.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_bound = glorot_bound(v, h);
    let rec_bound = glorot_bound(h, h);
    let mut p = ModelParams::zeros(cfg);
    for t in [&mut p.w_i, &mut p.w_f, &mut p.w_g, &mut p.w_o] {
        *t = Tensor::uniform(h, v, input_bound, &mut rng);
    }
    for t in [&mut p.u_i, &mut p.u_f, &mut p.u_g, &mut p.u_o] {
        *t = Tensor::uniform(h, h, rec_bound, &mut rng);
    }
    p.b_f = Tensor::filled(h, 1, 1.0);
    p.w_y = Tensor::uniform(k, h, glorot_bound(h, k), &mut rng);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_dim: 7,
            hidden_units: 5,
            num_classes: 3,
            l2_lambda: 0.0,
            dropout_rate: 0.0,
            seq_len: 4,
            l2_scope: PenaltyScope::AllWeights,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(&cfg(), 9).unwrap();
        let b = init_params(&cfg(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&cfg(), 10).unwrap());
        assert!(a.b_f.data().iter().all(|&v| v == 1.0));
        for t in [&a.b_i, &a.b_g, &a.b_o, &a.b_y] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        let bound = (6.0f64 / 12.0).sqrt();
        for t in [&a.w_i, &a.w_f, &a.w_g, &a.w_o] {
            assert!(t.data().iter().all(|v| v.abs() <= bound));
        }
        a.check_shapes(&cfg()).unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.hidden_units = 0;
        assert!(init_params(&c, 0).is_err());
        let mut c = cfg();
        c.l2_lambda = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn penalty_excludes_biases() {
        let mut p = ModelParams::zeros(&cfg());
        p.b_f.data_mut().fill(3.0);
        p.b_y.data_mut().fill(3.0);
        for scope in [PenaltyScope::AllWeights, PenaltyScope::LstmKernels] {
            assert_eq!(p.penalized_sum_squares(scope), 0.0);
        }
        p.w_y.data_mut()[0] = 2.0;
        assert_eq!(p.penalized_sum_squares(PenaltyScope::AllWeights), 4.0);
        assert_eq!(p.penalized_sum_squares(PenaltyScope::LstmKernels), 0.0);
        p.u_g.data_mut()[1] = -1.5;
        p.w_i.data_mut()[2] = 0.5;
        assert_eq!(p.penalized_sum_squares(PenaltyScope::AllWeights), 6.5);
        assert_eq!(p.penalized_sum_squares(PenaltyScope::LstmKernels), 2.5);
        assert_eq!(
            L2Penalty::new(0.01, PenaltyScope::LstmKernels).value(&p),
            0.025
        );
        assert_eq!(L2Penalty::NONE.value(&p), 0.0);
    }

    #[test]
    fn scope_names_roundtrip() {
        for s in [PenaltyScope::AllWeights, PenaltyScope::LstmKernels] {
            assert_eq!(s.as_str().parse::<PenaltyScope>().unwrap(), s);
            assert_eq!(
                serde_json::to_string(&s).unwrap(),
                format!("\"{}\"", s.as_str())
            );
        }
        assert!("dense".parse::<PenaltyScope>().is_err());
    }
}
