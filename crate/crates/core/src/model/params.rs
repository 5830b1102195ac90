use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numkit::{Scalar, Tensor};

/// Which encoder layer the decoder attends over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttendLayer {
    Bottom,
    #[default]
    Top,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fused_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub attend: AttendLayer,
}

impl ModelConfig {
    /// Two 512-unit LSTMs and a 512-wide word embedding.
    pub fn standard(fused_dim: usize, vocab_size: usize) -> Self {
        Self { fused_dim, hidden: 512, embed_dim: 512, vocab_size, attend: AttendLayer::Top }
    }

    /// Shapes of every parameter tensor, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> [(usize, usize); NUM_PARAMS] {
        let (h, e, v, f) = (self.hidden, self.embed_dim, self.vocab_size, self.fused_dim);
        [
            (f, h),
            (1, h),
            (v, e),
            (h, 4 * h),
            (h, 4 * h),
            (1, 4 * h),
            (h + e, 4 * h),
            (h, 4 * h),
            (1, 4 * h),
            (2 * h, v),
            (1, v),
        ]
    }

    pub fn num_weights(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

pub const NUM_PARAMS: usize = 11;

/// Fixed parameter order; also the checkpoint blob order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "in_proj.w",
    "in_proj.b",
    "embed",
    "lstm1.w",
    "lstm1.u",
    "lstm1.b",
    "lstm2.w",
    "lstm2.u",
    "lstm2.b",
    "out.w",
    "out.b",
];

/// Gate weights for one LSTM layer; gate column blocks are ordered i, f, o, g.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T: Scalar = f32> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub in_proj_w: Tensor<T>,
    pub in_proj_b: Tensor<T>,
    pub embed: Tensor<T>,
    pub lstm1: LstmParams<T>,
    pub lstm2: LstmParams<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::cast_from(rng.random_range(-bound..=bound))).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let t: Vec<Tensor<T>> = config.param_shapes().iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        Self::from_vec(t).expect("shapes come from the config")
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero except the forget gate at 1.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (h, e, v, f) = (config.hidden, config.embed_dim, config.vocab_size, config.fused_dim);
        let inv = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
        let forget_bias = || {
            let mut b = Tensor::zeros(1, 4 * h);
            b.data_mut()[h..2 * h].fill(T::one());
            b
        };
        Self {
            in_proj_w: uniform(f, h, inv(f), rng),
            in_proj_b: Tensor::zeros(1, h),
            embed: uniform(v, e, inv(e), rng),
            lstm1: LstmParams { w: uniform(h, 4 * h, inv(h), rng), u: uniform(h, 4 * h, inv(h), rng), b: forget_bias() },
            lstm2: LstmParams {
                w: uniform(h + e, 4 * h, inv(h + e), rng),
                u: uniform(h, 4 * h, inv(h), rng),
                b: forget_bias(),
            },
            out_w: uniform(2 * h, v, inv(2 * h), rng),
            out_b: Tensor::zeros(1, v),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; NUM_PARAMS] {
        [
            &self.in_proj_w,
            &self.in_proj_b,
            &self.embed,
            &self.lstm1.w,
            &self.lstm1.u,
            &self.lstm1.b,
            &self.lstm2.w,
            &self.lstm2.u,
            &self.lstm2.b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; NUM_PARAMS] {
        [
            &mut self.in_proj_w,
            &mut self.in_proj_b,
            &mut self.embed,
            &mut self.lstm1.w,
            &mut self.lstm1.u,
            &mut self.lstm1.b,
            &mut self.lstm2.w,
            &mut self.lstm2.u,
            &mut self.lstm2.b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn from_vec(tensors: Vec<Tensor<T>>) -> Option<Self> {
        let [in_proj_w, in_proj_b, embed, w1, u1, b1, w2, u2, b2, out_w, out_b]: [Tensor<T>; NUM_PARAMS] =
            tensors.try_into().ok()?;
        Some(Self {
            in_proj_w,
            in_proj_b,
            embed,
            lstm1: LstmParams { w: w1, u: u1, b: b1 },
            lstm2: LstmParams { w: w2, u: u2, b: b2 },
            out_w,
            out_b,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams::from_vec(self.tensors().iter().map(|t| t.cast()).collect()).expect("same arity")
    }

    pub fn matches(&self, config: &ModelConfig) -> bool {
        self.tensors().iter().zip(config.param_shapes()).all(|(t, s)| t.shape() == s)
    }
}
