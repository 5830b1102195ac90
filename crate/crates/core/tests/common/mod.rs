#![allow(dead_code)]

use rand::Rng;
use s2vt_core::model::{Mode, S2vtModel};
use s2vt_core::numkit::{seeded_rng, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so that gradients which are
/// analytically zero compare against finite-difference noise sensibly.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Central differences of `f` with respect to every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic.data().iter().zip(numeric.data()).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Per-parameter max relative error of the model's analytic gradient against
/// central differences. With `dropout_seed`, every loss evaluation replays the
/// same dropout masks.
pub fn model_gradcheck(
    model: &S2vtModel<f64>,
    clip: &Tensor<f64>,
    valid_steps: usize,
    target: &[usize],
    dropout_seed: Option<u64>,
) -> Vec<(usize, f64)> {
    let eval = |m: &S2vtModel<f64>| match dropout_seed {
        Some(seed) => m
            .loss(clip, valid_steps, target, &mut Mode::Train { dropout: 0.2, rng: &mut seeded_rng(seed) })
            .unwrap(),
        None => m.loss(clip, valid_steps, target, &mut Mode::Eval).unwrap(),
    };
    let grads = match dropout_seed {
        Some(seed) => {
            model
                .loss_and_grads(clip, valid_steps, target, &mut Mode::Train { dropout: 0.2, rng: &mut seeded_rng(seed) })
                .unwrap()
                .1
        }
        None => model.loss_and_grads(clip, valid_steps, target, &mut Mode::Eval).unwrap().1,
    };
    let mut out = Vec::new();
    for p in 0..grads.len() {
        let mut probe = model.clone();
        let numeric = numeric_grad(model.params.tensors()[p], |x| {
            *probe.params.tensors_mut()[p] = x.clone();
            eval(&probe)
        });
        out.push((p, max_rel_err(grads.get(p), &numeric)));
    }
    out
}

pub mod metric_oracle;

pub mod search_oracle {
    //! Exhaustive sequence search scored by independent teacher-forced passes.

    use s2vt_core::model::{AttendLayer, ModelConfig, S2vtModel, StepDistribution};
    use s2vt_core::numkit::{seeded_rng, Tensor};
    use s2vt_core::textkit::{BOS, EOS};

    /// Tiny f64 checkpoint with sharpened output weights.
    pub fn tiny_checkpoint(vocab: usize, seed: u64) -> (S2vtModel<f64>, Tensor<f64>, usize) {
        let cfg = ModelConfig { fused_dim: 3, hidden: 4, embed_dim: 3, vocab_size: vocab, attend: AttendLayer::Top };
        let mut rng = seeded_rng(seed);
        let mut model = S2vtModel::init(cfg, &mut rng);
        for v in model.params.out_w.data_mut() {
            *v *= 4.0;
        }
        let clip = super::random_tensor(40, 3, 1.0, &mut rng);
        let valid = 1 + (seed as usize * 7) % 40;
        (model, clip, valid)
    }

    /// Every admissible output: up to `max_words` content tokens (ids ≥ 3,
    /// i.e. UNK and words), then `EOS` unless the cap was reached.
    pub fn all_sequences(vocab: usize, max_words: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..max_words {
            let mut next = Vec::new();
            for prefix in &frontier {
                out.push([prefix.as_slice(), &[EOS]].concat());
                for w in EOS + 1..vocab {
                    next.push([prefix.as_slice(), &[w]].concat());
                }
            }
            frontier = next;
        }
        out.extend(frontier);
        out
    }

    /// Log-probability of `tokens` (a capped sequence is not charged for EOS).
    pub fn sequence_log_prob(model: &S2vtModel<f64>, clip: &Tensor<f64>, valid: usize, tokens: &[usize]) -> f64 {
        let words: Vec<usize> = tokens.iter().copied().filter(|&t| t != EOS).collect();
        let target: Vec<usize> = std::iter::once(BOS).chain(words).chain([EOS]).collect();
        let logits = model.teacher_forced_logits(clip, valid, &target).unwrap();
        tokens.iter().enumerate().map(|(k, &t)| StepDistribution::from_logits(&logits[k]).log_probs()[t]).sum()
    }

    /// Best `(tokens, score)` by `log_prob / len^alpha` over all sequences.
    pub fn exhaustive_best(model: &S2vtModel<f64>, clip: &Tensor<f64>, valid: usize, max_words: usize, alpha: f64) -> (Vec<usize>, f64) {
        all_sequences(model.config.vocab_size, max_words)
            .into_iter()
            .map(|s| {
                let lp = sequence_log_prob(model, clip, valid, &s);
                let score = lp / (s.len() as f64).powf(alpha);
                (s, score)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .unwrap()
    }
}
