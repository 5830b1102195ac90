//! The S2VT encoder-decoder.
//!
//! Two stacked LSTMs run over the whole sequence. While encoding, layer 1
//! reads projected frame features and layer 2 reads `[h1; 0]`. While
//! decoding, layer 1 reads zeros and layer 2 reads `[h1; embed(prev_word)]`.
//! Each decode step attends over the encoder outputs with scaled dot-product
//! scores and predicts the next word from `[h2; context]`.

mod params;

use thiserror::Error;

use crate::numkit::{GradTable, Graph, NodeId, NumError, Rng64, Scalar, Tensor};
use crate::textkit::{BOS, EOS, PAD};

pub use params::{AttendLayer, LstmParams, ModelConfig, ModelParams, NUM_PARAMS, PARAM_NAMES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Training mode applies inverted dropout to every LSTM output.
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut Rng64 },
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// Recurrent state of both layers.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub layer1: LstmState,
    pub layer2: LstmState,
}

/// Output of the encoding stage.
#[derive(Clone, Debug)]
pub struct EncodedStates {
    /// Per-step outputs of the attended layer (all steps, padding included).
    pub states: Vec<NodeId>,
    /// The first `valid_steps` states stacked into a `valid_steps x hidden` node.
    pub memory: Option<NodeId>,
    /// Recurrent state after the last valid step.
    pub carry: DecoderState,
    pub valid_steps: usize,
}

/// Word distribution for one decode step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution<T = f32> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> StepDistribution<T> {
    pub fn from_logits(logits: &Tensor<T>) -> Self {
        Self { logits: logits.data().to_vec(), probs: logits.softmax_rows().into_vec() }
    }

    pub fn log_probs(&self) -> Vec<f64> {
        Tensor::row_vector(self.logits.clone()).log_softmax_rows().data().iter().map(|v| v.as_f64()).collect()
    }
}

#[derive(Clone, Copy)]
struct LstmNodes {
    w: NodeId,
    u: NodeId,
    b: NodeId,
}

#[derive(Clone, Copy)]
struct ParamNodes {
    in_w: NodeId,
    in_b: NodeId,
    embed: NodeId,
    lstm1: LstmNodes,
    lstm2: LstmNodes,
    out_w: NodeId,
    out_b: NodeId,
}

/// One forward pass: a graph holding the parameters by reference.
pub struct Forward<'p, T: Scalar = f32> {
    pub graph: Graph<'p, T>,
    config: &'p ModelConfig,
    nodes: ParamNodes,
    zero_h: NodeId,
    zero_e: NodeId,
}

impl<'p, T: Scalar> Forward<'p, T> {
    pub fn new(config: &'p ModelConfig, params: &'p ModelParams<T>) -> Result<Self, ModelError> {
        if !params.matches(config) {
            return Err(ModelError::Contract("parameter shapes do not match the model config".into()));
        }
        let mut graph = Graph::new();
        let t = params.tensors();
        let ids: Vec<NodeId> = t.iter().enumerate().map(|(i, p)| graph.param(i, p)).collect();
        let nodes = ParamNodes {
            in_w: ids[0],
            in_b: ids[1],
            embed: ids[2],
            lstm1: LstmNodes { w: ids[3], u: ids[4], b: ids[5] },
            lstm2: LstmNodes { w: ids[6], u: ids[7], b: ids[8] },
            out_w: ids[9],
            out_b: ids[10],
        };
        let zero_h = graph.constant(Tensor::zeros(1, config.hidden));
        let zero_e = graph.constant(Tensor::zeros(1, config.embed_dim));
        Ok(Self { graph, config, nodes, zero_h, zero_e })
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn lstm_step(&mut self, p: LstmNodes, x: NodeId, s: LstmState) -> Result<LstmState, ModelError> {
        let h = self.config.hidden;
        let g = &mut self.graph;
        let xw = g.matmul(x, p.w)?;
        let hu = g.matmul(s.h, p.u)?;
        let pre = g.add(xw, hu)?;
        let pre = g.add_row(pre, p.b)?;
        let i_pre = g.slice_cols(pre, 0, h)?;
        let f_pre = g.slice_cols(pre, h, 2 * h)?;
        let o_pre = g.slice_cols(pre, 2 * h, 3 * h)?;
        let g_pre = g.slice_cols(pre, 3 * h, 4 * h)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let o = g.sigmoid(o_pre);
        let cand = g.tanh(g_pre);
        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    fn dropout(&mut self, x: NodeId, mode: &mut Mode<'_>) -> Result<NodeId, ModelError> {
        match mode {
            Mode::Train { dropout, rng } if *dropout > 0.0 => {
                let (r, c) = self.graph.value(x).shape();
                let mask = Tensor::dropout_mask(r, c, *dropout, &mut **rng)?;
                Ok(self.graph.mul_const(x, mask)?)
            }
            _ => Ok(x),
        }
    }

    fn zero_state(&self) -> DecoderState {
        let z = LstmState { h: self.zero_h, c: self.zero_h };
        DecoderState { layer1: z, layer2: z }
    }

    /// Runs the encoder over every row of `clip`; the carry is taken at step `valid_steps`.
    pub fn encode(&mut self, clip: &Tensor<T>, valid_steps: usize, mode: &mut Mode<'_>) -> Result<EncodedStates, ModelError> {
        if clip.cols() != self.config.fused_dim {
            return Err(ModelError::Contract(format!(
                "clip dim {} does not match model input dim {}",
                clip.cols(),
                self.config.fused_dim
            )));
        }
        if valid_steps > clip.rows() {
            return Err(ModelError::Contract(format!("valid_steps {valid_steps} exceeds {} steps", clip.rows())));
        }
        let input = self.graph.constant(clip.clone());
        let proj = self.graph.matmul(input, self.nodes.in_w)?;
        let proj = self.graph.add_row(proj, self.nodes.in_b)?;

        let mut state = self.zero_state();
        let mut carry = state;
        let mut states = Vec::with_capacity(clip.rows());
        for t in 0..clip.rows() {
            let x = self.graph.gather_row(proj, t)?;
            state.layer1 = self.lstm_step(self.nodes.lstm1, x, state.layer1)?;
            let out1 = self.dropout(state.layer1.h, mode)?;
            let x2 = self.graph.concat_cols(&[out1, self.zero_e])?;
            state.layer2 = self.lstm_step(self.nodes.lstm2, x2, state.layer2)?;
            let out2 = self.dropout(state.layer2.h, mode)?;
            states.push(match self.config.attend {
                AttendLayer::Top => out2,
                AttendLayer::Bottom => out1,
            });
            if t + 1 == valid_steps {
                carry = state;
            }
        }
        let memory = if valid_steps > 0 { Some(self.graph.stack_rows(&states[..valid_steps])?) } else { None };
        Ok(EncodedStates { states, memory, carry, valid_steps })
    }

    /// One decoder step; returns the `1 x vocab` logits node and the next state.
    pub fn decode_step(
        &mut self,
        prev_word: usize,
        state: &DecoderState,
        enc: &EncodedStates,
        mode: &mut Mode<'_>,
    ) -> Result<(NodeId, DecoderState), ModelError> {
        if prev_word >= self.config.vocab_size {
            return Err(ModelError::Contract(format!(
                "word id {prev_word} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let layer1 = self.lstm_step(self.nodes.lstm1, self.zero_h, state.layer1)?;
        let out1 = self.dropout(layer1.h, mode)?;
        let emb = self.graph.gather_row(self.nodes.embed, prev_word)?;
        let x2 = self.graph.concat_cols(&[out1, emb])?;
        let layer2 = self.lstm_step(self.nodes.lstm2, x2, state.layer2)?;
        let out2 = self.dropout(layer2.h, mode)?;

        let context = match enc.memory {
            Some(memory) => {
                let scores = self.graph.matmul_nt(out2, memory)?;
                let scale = T::one() / T::cast_from(self.config.hidden as f64).sqrt();
                let scores = self.graph.scale(scores, scale);
                let alpha = self.graph.softmax_rows(scores);
                self.graph.matmul(alpha, memory)?
            }
            None => self.zero_h,
        };
        let feat = self.graph.concat_cols(&[out2, context])?;
        let logits = self.graph.matmul(feat, self.nodes.out_w)?;
        let logits = self.graph.add_row(logits, self.nodes.out_b)?;
        Ok((logits, DecoderState { layer1, layer2 }))
    }

    /// Mean negative log-likelihood of `target` under teacher forcing.
    ///
    /// `target` is `BOS w.. EOS` optionally followed by `PAD`s; every position
    /// from the first word through `EOS` is scored.
    pub fn sequence_loss(
        &mut self,
        clip: &Tensor<T>,
        valid_steps: usize,
        target: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<NodeId, ModelError> {
        let eos = validate_target(target)?;
        let enc = self.encode(clip, valid_steps, mode)?;
        let mut state = enc.carry;
        let mut terms = Vec::with_capacity(eos);
        for t in 1..=eos {
            let (logits, next) = self.decode_step(target[t - 1], &state, &enc, mode)?;
            terms.push(self.graph.nll_logits(logits, target[t])?);
            state = next;
        }
        let total = self.graph.sum_nodes(&terms)?;
        Ok(self.graph.scale(total, T::one() / T::cast_from(terms.len() as f64)))
    }
}

/// Returns the index of the terminating EOS.
fn validate_target(target: &[usize]) -> Result<usize, ModelError> {
    if target.first() != Some(&BOS) {
        return Err(ModelError::Contract("target must start with BOS".into()));
    }
    let eos = target
        .iter()
        .position(|&t| t == EOS)
        .ok_or_else(|| ModelError::Contract("target has no EOS".into()))?;
    if target[eos + 1..].iter().any(|&t| t != PAD) {
        return Err(ModelError::Contract("only PAD may follow EOS in a target".into()));
    }
    if target[1..eos].iter().any(|&t| t == PAD || t == BOS) {
        return Err(ModelError::Contract("PAD or BOS inside target content".into()));
    }
    Ok(eos)
}

/// Parameters plus the config that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct S2vtModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> S2vtModel<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self, ModelError> {
        if !params.matches(&config) {
            return Err(ModelError::Contract("parameter shapes do not match the model config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, rng: &mut Rng64) -> Self {
        let params = ModelParams::init(&config, rng);
        Self { config, params }
    }

    pub fn forward(&self) -> Result<Forward<'_, T>, ModelError> {
        Forward::new(&self.config, &self.params)
    }

    pub fn zero_grads(&self) -> GradTable<T> {
        GradTable::zeros_like(self.params.tensors())
    }

    /// Loss value without building gradients.
    pub fn loss(&self, clip: &Tensor<T>, valid_steps: usize, target: &[usize], mode: &mut Mode<'_>) -> Result<T, ModelError> {
        let mut fwd = self.forward()?;
        let loss = fwd.sequence_loss(clip, valid_steps, target, mode)?;
        Ok(fwd.graph.value(loss).item())
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        clip: &Tensor<T>,
        valid_steps: usize,
        target: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(T, GradTable<T>), ModelError> {
        let mut fwd = self.forward()?;
        let loss = fwd.sequence_loss(clip, valid_steps, target, mode)?;
        let mut grads = self.zero_grads();
        fwd.graph.backward(loss, &mut grads)?;
        Ok((fwd.graph.value(loss).item(), grads))
    }

    /// Teacher-forced logits for every decode position (eval mode).
    pub fn teacher_forced_logits(&self, clip: &Tensor<T>, valid_steps: usize, target: &[usize]) -> Result<Vec<Tensor<T>>, ModelError> {
        let eos = validate_target(target)?;
        let mut fwd = self.forward()?;
        let mut mode = Mode::Eval;
        let enc = fwd.encode(clip, valid_steps, &mut mode)?;
        let mut state = enc.carry;
        let mut out = Vec::with_capacity(eos);
        for t in 1..=eos {
            let (logits, next) = fwd.decode_step(target[t - 1], &state, &enc, &mut mode)?;
            out.push(fwd.graph.value(logits).clone());
            state = next;
        }
        Ok(out)
    }
}
