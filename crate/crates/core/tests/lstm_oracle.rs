//! The graph-built encoder/decoder against a straight-line f64 implementation.

mod common;

use common::random_tensor;
use s2vt_core::model::{AttendLayer, Mode, ModelConfig, ModelParams, S2vtModel};
use s2vt_core::numkit::{seeded_rng, Tensor};
use s2vt_core::textkit::{BOS, EOS};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vecmat(x: &[f64], m: &Tensor<f64>) -> Vec<f64> {
    (0..m.cols()).map(|j| x.iter().enumerate().map(|(i, &xi)| xi * m.get(i, j)).sum()).collect()
}

/// One LSTM step with gate blocks i, f, o, g.
fn cell(x: &[f64], h: &[f64], c: &[f64], w: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let xw = vecmat(x, w);
    let hu = vecmat(h, u);
    let pre: Vec<f64> = (0..4 * n).map(|k| xw[k] + hu[k] + b.get(0, k)).collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sig(pre[k]);
        let f = sig(pre[n + k]);
        let o = sig(pre[2 * n + k]);
        let g = pre[3 * n + k].tanh();
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

struct Oracle<'a> {
    p: &'a ModelParams<f64>,
    hidden: usize,
}

impl Oracle<'_> {
    fn run(&self, clip: &Tensor<f64>, valid: usize, words: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.hidden;
        let e = self.p.embed.cols();
        let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut carry = (h1.clone(), c1.clone(), h2.clone(), c2.clone());
        let mut tops = Vec::new();
        for t in 0..clip.rows() {
            let proj: Vec<f64> =
                vecmat(clip.row(t), &self.p.in_proj_w).iter().zip(self.p.in_proj_b.row(0)).map(|(a, b)| a + b).collect();
            (h1, c1) = cell(&proj, &h1, &c1, &self.p.lstm1.w, &self.p.lstm1.u, &self.p.lstm1.b);
            let mut x2 = h1.clone();
            x2.extend(vec![0.0; e]);
            (h2, c2) = cell(&x2, &h2, &c2, &self.p.lstm2.w, &self.p.lstm2.u, &self.p.lstm2.b);
            tops.push(h2.clone());
            if t + 1 == valid {
                carry = (h1.clone(), c1.clone(), h2.clone(), c2.clone());
            }
        }
        (h1, c1, h2, c2) = carry;
        let mut logits = Vec::new();
        for &w in words {
            (h1, c1) = cell(&vec![0.0; n], &h1, &c1, &self.p.lstm1.w, &self.p.lstm1.u, &self.p.lstm1.b);
            let mut x2 = h1.clone();
            x2.extend_from_slice(self.p.embed.row(w));
            (h2, c2) = cell(&x2, &h2, &c2, &self.p.lstm2.w, &self.p.lstm2.u, &self.p.lstm2.b);
            let scores: Vec<f64> = tops[..valid]
                .iter()
                .map(|s| s.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>() / (n as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let mut ctx = vec![0.0; n];
            for (s, st) in scores.iter().zip(&tops) {
                let a = (s - m).exp() / z;
                for k in 0..n {
                    ctx[k] += a * st[k];
                }
            }
            let mut feat = h2.clone();
            feat.extend(ctx);
            logits.push(vecmat(&feat, &self.p.out_w).iter().zip(self.p.out_b.row(0)).map(|(a, b)| a + b).collect());
        }
        (tops, logits)
    }
}

#[test]
fn encoder_and_decoder_match_straight_line_oracle() {
    let cfg = ModelConfig { fused_dim: 6, hidden: 8, embed_dim: 8, vocab_size: 12, attend: AttendLayer::Top };
    let mut rng = seeded_rng(5);
    let model = S2vtModel::<f64>::init(cfg.clone(), &mut rng);
    let clip = random_tensor(10, 6, 1.0, &mut rng);
    let target = [BOS, 4, 7, 9, EOS];
    let oracle = Oracle { p: &model.params, hidden: 8 };

    for valid in [10, 4] {
        let (tops, logits) = oracle.run(&clip, valid, &target[..4]);

        let mut fwd = model.forward().unwrap();
        let enc = fwd.encode(&clip, valid, &mut Mode::Eval).unwrap();
        for (t, &s) in enc.states.iter().enumerate() {
            for (a, b) in fwd.graph.value(s).data().iter().zip(&tops[t]) {
                assert!((a - b).abs() < 1e-6, "step {t}: {a} vs {b}");
            }
        }
        let got = model.teacher_forced_logits(&clip, valid, &target).unwrap();
        for (g, o) in got.iter().zip(&logits) {
            for (a, b) in g.data().iter().zip(o) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
