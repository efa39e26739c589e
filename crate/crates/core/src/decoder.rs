//! Attention LSTM decoder conditioned on the measured latent vector.
//!
//! Each step feeds `[token embedding ; ẑ]` through the stacked LSTM, attends
//! from the top hidden state over the encoder-side token rows, and emits
//! `W_o [h ; a] + b_o`. During training the previous ground-truth token is
//! fed with probability `α`, otherwise the model's own argmax.

use rand::Rng;

use crate::corpus::{EOS, PAD, SOS};
use crate::nn::{AttentionMemory, Dense, Graph, LstmCell, MultiHeadAttention, NnError, ParamId, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab_size: usize,
    pub token_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub memory_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    pub dims: DecoderDims,
    pub token_table: ParamId,
    pub init_h: Dense,
    pub init_c: Dense,
    pub cells: Vec<LstmCell>,
    pub attention: MultiHeadAttention,
    pub output: Dense,
}

/// Per-layer `(h, c)` plus the last attention read.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<(Var, Var)>,
    pub context: Option<Var>,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Upper bound on generated tokens when no target is given.
    pub max_len: usize,
    /// Probability of feeding the ground-truth previous token.
    pub teacher_forcing: f64,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Argmax prediction at every step (SOS excluded).
    pub tokens: Vec<usize>,
    /// `1 x V` logits per step.
    pub logits: Vec<Var>,
    /// Token fed at every step; the first is always SOS.
    pub inputs: Vec<usize>,
    /// Steps (after the first) that were fed the ground truth.
    pub fed_truth: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, dims: DecoderDims, rng: &mut R) -> Result<Self, NnError> {
        if dims.layers == 0 {
            return Err(NnError::Shape("decoder needs at least one LSTM layer".into()));
        }
        let token_table = params.add(
            "decoder.tokens",
            Tensor::uniform(dims.vocab_size, dims.token_dim, 0.5, rng),
        );
        let lat_bound = 1.0 / (dims.latent_dim.max(1) as f64).sqrt();
        let init_h = Dense::new(params, "decoder.init_h", dims.latent_dim, dims.hidden, lat_bound, rng);
        let init_c = Dense::new(params, "decoder.init_c", dims.latent_dim, dims.hidden, lat_bound, rng);
        let mut cells = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let d_in = if l == 0 {
                dims.token_dim + dims.latent_dim
            } else {
                dims.hidden
            };
            cells.push(LstmCell::new(params, &format!("decoder.lstm{l}"), d_in, dims.hidden, rng));
        }
        let attention = MultiHeadAttention::new(
            params,
            "decoder.attention",
            dims.hidden,
            dims.memory_dim,
            dims.heads,
            rng,
        )?;
        let output = Dense::new(
            params,
            "decoder.output",
            2 * dims.hidden,
            dims.vocab_size,
            1.0 / ((2 * dims.hidden) as f64).sqrt(),
            rng,
        );
        Ok(Decoder {
            dims,
            token_table,
            init_h,
            init_c,
            cells,
            attention,
            output,
        })
    }

    fn check_latent(&self, g: &Graph, zhat: Var) -> Result<(), NnError> {
        if g.shape(zhat) != (1, self.dims.latent_dim) {
            let (r, c) = g.shape(zhat);
            return Err(NnError::Shape(format!(
                "latent vector {r}x{c}, expected 1x{}",
                self.dims.latent_dim
            )));
        }
        Ok(())
    }

    /// Project `ẑ` into layer 0's `(h, c)`; deeper layers start at zero.
    pub fn init_state(&self, g: &mut Graph, params: &ParamSet, zhat: Var) -> Result<DecoderState, NnError> {
        self.check_latent(g, zhat)?;
        let mut layers = Vec::with_capacity(self.dims.layers);
        layers.push((
            self.init_h.forward(g, params, zhat)?,
            self.init_c.forward(g, params, zhat)?,
        ));
        for _ in 1..self.dims.layers {
            let h = g.constant(Tensor::zeros(1, self.dims.hidden));
            let c = g.constant(Tensor::zeros(1, self.dims.hidden));
            layers.push((h, c));
        }
        Ok(DecoderState {
            layers,
            context: None,
            step: 0,
        })
    }

    /// Project the encoder rows once per sequence.
    pub fn memory(&self, g: &mut Graph, params: &ParamSet, rows: Var, keep: &[bool]) -> Result<AttentionMemory, NnError> {
        self.attention.memory(g, params, rows, keep)
    }

    /// One decoding step; returns logits over the vocabulary and the next
    /// state.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        state: &DecoderState,
        token: usize,
        zhat: Var,
        memory: &AttentionMemory,
    ) -> Result<(Var, DecoderState), NnError> {
        if token >= self.dims.vocab_size {
            return Err(NnError::Shape(format!(
                "token {token} outside vocabulary of {}",
                self.dims.vocab_size
            )));
        }
        self.check_latent(g, zhat)?;
        let table = g.param(params, self.token_table);
        let emb = g.gather(table, &[token])?;
        let mut x = g.concat_cols(&[emb, zhat])?;
        let mut layers = Vec::with_capacity(self.cells.len());
        for (cell, &(h, c)) in self.cells.iter().zip(&state.layers) {
            let (h, c) = cell.forward(g, params, x, h, c)?;
            layers.push((h, c));
            x = h;
        }
        let top = x;
        let attended = self.attention.attend(g, params, memory, top)?;
        let features = g.concat_cols(&[top, attended.output])?;
        let logits = self.output.forward(g, params, features)?;
        Ok((
            logits,
            DecoderState {
                layers,
                context: Some(attended.output),
                step: state.step + 1,
            },
        ))
    }

    /// Run the decoder from SOS.
    ///
    /// With a target, exactly `target.len() - 1` steps run (one per
    /// non-SOS target token) and step `t > 0` is fed `target[t]` with
    /// probability `cfg.teacher_forcing`. Without a target, decoding is
    /// greedy and stops after EOS or `cfg.max_len` tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_sequence<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        zhat: Var,
        memory: &AttentionMemory,
        target: Option<&[usize]>,
        cfg: &DecodeConfig,
        rng: &mut R,
    ) -> Result<DecodeOutput, NnError> {
        if !(0.0..=1.0).contains(&cfg.teacher_forcing) {
            return Err(NnError::Contract(format!(
                "teacher-forcing probability {} outside [0, 1]",
                cfg.teacher_forcing
            )));
        }
        if cfg.teacher_forcing > 0.0 && target.is_none() {
            return Err(NnError::Contract(
                "teacher forcing requested without a target sequence".into(),
            ));
        }
        let steps = match target {
            Some(t) => {
                if t.len() < 2 || t[0] != SOS {
                    return Err(NnError::Contract("target must start with SOS and have a body".into()));
                }
                t.len() - 1
            }
            None => cfg.max_len,
        };
        let mut state = self.init_state(g, params, zhat)?;
        let mut out = DecodeOutput {
            tokens: Vec::with_capacity(steps),
            logits: Vec::with_capacity(steps),
            inputs: Vec::with_capacity(steps),
            fed_truth: 0,
        };
        let mut input = SOS;
        for t in 0..steps {
            if t > 0 {
                let prev_pred = out.tokens[t - 1];
                input = match target {
                    Some(tgt) => {
                        let draw: f64 = rng.gen();
                        if draw < cfg.teacher_forcing {
                            out.fed_truth += 1;
                            tgt[t]
                        } else {
                            prev_pred
                        }
                    }
                    None => prev_pred,
                };
            }
            let (logits, next) = self.decode_step(g, params, &state, input, zhat, memory)?;
            let pred = argmax(g.value(logits).data());
            out.inputs.push(input);
            out.tokens.push(pred);
            out.logits.push(logits);
            state = next;
            if target.is_none() && pred == EOS {
                break;
            }
        }
        Ok(out)
    }
}

/// Strip everything from the first EOS on, plus PAD/SOS.
pub fn trim_prediction(tokens: &[usize]) -> Vec<usize> {
    tokens
        .iter()
        .copied()
        .take_while(|&t| t != EOS)
        .filter(|&t| t != PAD && t != SOS)
        .collect()
}
