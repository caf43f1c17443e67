use rand::Rng;

use super::tensor::{axpy, Tensor};
use super::{check_dim, Gradients, L2Penalty, ModelParams, NeuralError, TENSOR_SLOTS};
use crate::textprep::{OneHot, SequenceEncoding};

const PROB_FLOOR: f64 = 1e-12;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediates of one LSTM step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    /// Nonzero input entries as `(index, value)`.
    pub x: Vec<(usize, f64)>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn preactivation(
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
    x: &[(usize, f64)],
    h_prev: &[f64],
) -> Vec<f64> {
    let mut z = b.data().to_vec();
    for &(j, xj) in x {
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += w.get(r, j) * xj;
        }
    }
    u.matvec_acc(h_prev, &mut z);
    z
}

/// One forget-gate LSTM step:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
/// g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
pub fn lstm_step(
    p: &ModelParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, StepCache), NeuralError> {
    check_dim("lstm input", p.input_dim(), x.len())?;
    check_dim("hidden state", p.hidden_units(), h_prev.len())?;
    check_dim("cell state", p.hidden_units(), c_prev.len())?;
    let sparse: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect();

    let mut i = preactivation(&p.w_i, &p.u_i, &p.b_i, &sparse, h_prev);
    let mut f = preactivation(&p.w_f, &p.u_f, &p.b_f, &sparse, h_prev);
    let mut g = preactivation(&p.w_g, &p.u_g, &p.b_g, &sparse, h_prev);
    let mut o = preactivation(&p.w_o, &p.u_o, &p.b_o, &sparse, h_prev);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));

    let h_units = p.hidden_units();
    let mut c = vec![0.0; h_units];
    let mut tanh_c = vec![0.0; h_units];
    let mut h = vec![0.0; h_units];
    for r in 0..h_units {
        c[r] = f[r] * c_prev[r] + i[r] * g[r];
        tanh_c[r] = c[r].tanh();
        h[r] = o[r] * tanh_c[r];
    }
    let cache = StepCache {
        x: sparse,
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c: c.clone(),
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Inverted-dropout scale factors: each unit is `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng>(units: usize, rate: f64, rng: &mut R) -> Self {
        if rate == 0.0 {
            return Self::identity(units);
        }
        let keep = 1.0 / (1.0 - rate);
        let scale = (0..units)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Self { scale }
    }

    pub fn identity(units: usize) -> Self {
        Self {
            scale: vec![1.0; units],
        }
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// Everything a forward pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub steps: Vec<StepCache>,
    pub h_final: Vec<f64>,
    pub mask: Option<DropoutMask>,
    /// Final hidden state after dropout; the input of the dense head.
    pub h_head: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Unrolls the LSTM from a zero state over every step of `seq`, then applies
/// `mask` (if any) to the final hidden state and the softmax head.
/// `mask = None` is inference mode.
pub fn forward(
    p: &ModelParams,
    seq: &SequenceEncoding,
    mask: Option<&DropoutMask>,
) -> Result<ForwardPass, NeuralError> {
    let h_units = p.hidden_units();
    if seq.is_empty() {
        return Err(NeuralError::Dimension {
            what: "sequence length",
            expected: 1,
            actual: 0,
        });
    }
    let mut h = vec![0.0; h_units];
    let mut c = vec![0.0; h_units];
    let mut steps = Vec::with_capacity(seq.len());
    for x in seq.steps() {
        let (h_next, c_next, cache) = lstm_step(p, x, &h, &c)?;
        h = h_next;
        c = c_next;
        steps.push(cache);
    }
    let h_head = match mask {
        Some(m) => {
            check_dim("dropout mask", h_units, m.scale.len())?;
            h.iter().zip(&m.scale).map(|(a, s)| a * s).collect()
        }
        None => h.clone(),
    };
    let mut logits = p.b_y.data().to_vec();
    p.w_y.matvec_acc(&h_head, &mut logits);
    let probs = softmax(&logits);
    Ok(ForwardPass {
        steps,
        h_final: h,
        mask: mask.cloned(),
        h_head,
        logits,
        probs,
    })
}

/// Training-mode forward pass with a freshly sampled dropout mask.
pub fn forward_train<R: Rng>(
    p: &ModelParams,
    seq: &SequenceEncoding,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<ForwardPass, NeuralError> {
    let mask = DropoutMask::sample(p.hidden_units(), dropout_rate, rng);
    forward(p, seq, Some(&mask))
}

/// `-ln(max(probs[target], 1e-12))`
pub fn cross_entropy(probs: &[f64], target: &OneHot) -> f64 {
    -probs[target.hot_index()].max(PROB_FLOOR).ln()
}

/// Cross-entropy plus the L2 penalty.
pub fn loss(probs: &[f64], target: &OneHot, p: &ModelParams, penalty: L2Penalty) -> f64 {
    let ce = cross_entropy(probs, target);
    if penalty.is_zero() {
        ce
    } else {
        ce + penalty.value(p)
    }
}

/// Exact gradients of [`loss`] for the forward pass `pass`, by
/// backpropagation through every step. The dropout mask stored in `pass` is
/// replayed.
pub fn backward(
    p: &ModelParams,
    pass: &ForwardPass,
    target: &OneHot,
    penalty: L2Penalty,
) -> Result<Gradients, NeuralError> {
    let mut grads = Gradients::zeros_like(p);
    accumulate_gradients(p, pass, target, &mut grads)?;
    add_penalty_gradient(p, penalty, &mut grads);
    Ok(grads)
}

/// Adds `2 * lambda * w` to the gradient of every penalized weight tensor.
pub fn add_penalty_gradient(p: &ModelParams, penalty: L2Penalty, grads: &mut Gradients) {
    if penalty.is_zero() {
        return;
    }
    for ((gt, pt), slot) in grads
        .0
        .tensors_mut()
        .into_iter()
        .zip(p.tensors())
        .zip(TENSOR_SLOTS)
    {
        if penalty.scope.covers(slot.kind) {
            gt.add_scaled(pt, 2.0 * penalty.lambda);
        }
    }
}

/// Adds the cross-entropy gradients of one example to `grads` (no penalty term).
pub fn accumulate_gradients(
    p: &ModelParams,
    pass: &ForwardPass,
    target: &OneHot,
    grads: &mut Gradients,
) -> Result<(), NeuralError> {
    let h_units = p.hidden_units();
    check_dim("target classes", p.num_classes(), target.dim())?;
    check_dim("cached probabilities", p.num_classes(), pass.probs.len())?;
    check_dim("cached hidden state", h_units, pass.h_head.len())?;
    check_dim("gradient rows", h_units, grads.hidden_units())?;

    let g = &mut grads.0;

    let mut dlogits = pass.probs.clone();
    dlogits[target.hot_index()] -= 1.0;
    g.w_y.outer_acc(&dlogits, &pass.h_head);
    axpy(1.0, &dlogits, g.b_y.data_mut());

    let mut dh = vec![0.0; h_units];
    p.w_y.matvec_t_acc(&dlogits, &mut dh);
    if let Some(mask) = &pass.mask {
        for (d, s) in dh.iter_mut().zip(&mask.scale) {
            *d *= s;
        }
    }

    let mut dc_next = vec![0.0; h_units];
    let mut dz_i = vec![0.0; h_units];
    let mut dz_f = vec![0.0; h_units];
    let mut dz_g = vec![0.0; h_units];
    let mut dz_o = vec![0.0; h_units];
    for step in pass.steps.iter().rev() {
        for r in 0..h_units {
            let (i, f, gg, o, tc) = (step.i[r], step.f[r], step.g[r], step.o[r], step.tanh_c[r]);
            let d_o = dh[r] * tc;
            let dc = dc_next[r] + dh[r] * o * (1.0 - tc * tc);
            dz_i[r] = dc * gg * i * (1.0 - i);
            dz_f[r] = dc * step.c_prev[r] * f * (1.0 - f);
            dz_g[r] = dc * i * (1.0 - gg * gg);
            dz_o[r] = d_o * o * (1.0 - o);
            dc_next[r] = dc * f;
        }

        let gates = [
            (&dz_i, &mut g.w_i, &mut g.u_i, &mut g.b_i),
            (&dz_f, &mut g.w_f, &mut g.u_f, &mut g.b_f),
            (&dz_g, &mut g.w_g, &mut g.u_g, &mut g.b_g),
            (&dz_o, &mut g.w_o, &mut g.u_o, &mut g.b_o),
        ];
        for (dz, dw, du, db) in gates {
            let cols = dw.cols();
            let dw = dw.data_mut();
            for &(j, xj) in &step.x {
                for (r, &d) in dz.iter().enumerate() {
                    dw[r * cols + j] += d * xj;
                }
            }
            du.outer_acc(dz, &step.h_prev);
            axpy(1.0, dz, db.data_mut());
        }

        dh.fill(0.0);
        p.u_i.matvec_t_acc(&dz_i, &mut dh);
        p.u_f.matvec_t_acc(&dz_f, &mut dh);
        p.u_g.matvec_t_acc(&dz_g, &mut dh);
        p.u_o.matvec_t_acc(&dz_o, &mut dh);
    }

    Ok(())
}
