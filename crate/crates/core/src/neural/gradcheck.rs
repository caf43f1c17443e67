use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lstm::{backward, forward, loss, DropoutMask};
use super::{init_params, ModelConfig, ModelParams, NeuralError, TENSOR_SLOTS};
use crate::textprep::{OneHot, SequenceEncoding};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor, in [`TENSOR_SLOTS`] order.
    pub per_tensor: Vec<(&'static str, f64)>,
    pub entries_checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backpropagated gradients against central differences
/// `(loss(w + ε) - loss(w - ε)) / 2ε` for every parameter entry of a random
/// model built from `cfg` and `seed`. With `cfg.dropout_rate > 0` a single
/// mask is sampled and replayed for every evaluation.
pub fn gradient_check(
    cfg: &ModelConfig,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport, NeuralError> {
    let mut params = init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (t, slot) in params.tensors_mut().into_iter().zip(TENSOR_SLOTS) {
        if !slot.is_weight() {
            for b in t.data_mut() {
                *b += rng.gen_range(-0.5..0.5);
            }
        }
    }
    let steps = (0..cfg.seq_len)
        .map(|_| {
            (0..cfg.input_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let seq = SequenceEncoding::from_steps(steps, cfg.seq_len);
    let target = OneHot::new(rng.gen_range(0..cfg.num_classes), cfg.num_classes);
    let mask = (cfg.dropout_rate > 0.0)
        .then(|| DropoutMask::sample(cfg.hidden_units, cfg.dropout_rate, &mut rng));
    let penalty = cfg.penalty();

    let objective = |p: &ModelParams| -> Result<f64, NeuralError> {
        let pass = forward(p, &seq, mask.as_ref())?;
        Ok(loss(&pass.probs, &target, p, penalty))
    };

    let pass = forward(&params, &seq, mask.as_ref())?;
    let analytic = backward(&params, &pass, &target, penalty)?;

    let mut per_tensor = Vec::with_capacity(TENSOR_SLOTS.len());
    let mut entries_checked = 0;
    for (slot_idx, slot) in TENSOR_SLOTS.iter().enumerate() {
        let len = params.tensors()[slot_idx].data().len();
        let mut worst = 0.0f64;
        for e in 0..len {
            let original = params.tensors()[slot_idx].data()[e];
            params.tensors_mut()[slot_idx].data_mut()[e] = original + epsilon;
            let plus = objective(&params)?;
            params.tensors_mut()[slot_idx].data_mut()[e] = original - epsilon;
            let minus = objective(&params)?;
            params.tensors_mut()[slot_idx].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.tensors()[slot_idx].data()[e];
            worst = worst.max(relative_error(a, numeric));
            entries_checked += 1;
        }
        per_tensor.push((slot.name, worst));
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        entries_checked,
    })
}
