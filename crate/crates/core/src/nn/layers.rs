use rand::Rng;

use super::{Graph, NnError, ParamId, ParamSet, Tensor, Var};

/// Affine layer `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    /// Weights uniform in `[-bound, bound]`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::uniform(d_in, d_out, bound, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(1, d_out));
        Dense {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// LSTM cell with fused gate matrices. Gate column blocks are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl LstmCell {
    /// Weights uniform in `[-1/√d_h, 1/√d_h]`; forget-gate bias starts at 1.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_hidden as f64).sqrt();
        let w_input = params.add(
            format!("{name}.w_input"),
            Tensor::uniform(d_in, 4 * d_hidden, bound, rng),
        );
        let w_hidden = params.add(
            format!("{name}.w_hidden"),
            Tensor::uniform(d_hidden, 4 * d_hidden, bound, rng),
        );
        let mut b = Tensor::zeros(1, 4 * d_hidden);
        b.data_mut()[d_hidden..2 * d_hidden].fill(1.0);
        let bias = params.add(format!("{name}.bias"), b);
        LstmCell {
            w_input,
            w_hidden,
            bias,
            d_in,
            d_hidden,
        }
    }

    /// One step: returns `(h, c)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), NnError> {
        let dh = self.d_hidden;
        if g.shape(x) != (1, self.d_in) {
            let (r, c) = g.shape(x);
            return Err(NnError::Shape(format!(
                "lstm input {r}x{c}, expected 1x{}",
                self.d_in
            )));
        }
        if g.shape(h_prev) != (1, dh) || g.shape(c_prev) != (1, dh) {
            return Err(NnError::Shape(format!(
                "lstm state {:?}/{:?}, expected 1x{dh}",
                g.shape(h_prev),
                g.shape(c_prev)
            )));
        }
        let wx = g.param(params, self.w_input);
        let wh = g.param(params, self.w_hidden);
        let b = g.param(params, self.bias);
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(h_prev, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row(z, b)?;

        let i = g.slice_cols(z, 0, dh)?;
        let f = g.slice_cols(z, dh, dh)?;
        let cand = g.slice_cols(z, 2 * dh, dh)?;
        let o = g.slice_cols(z, 3 * dh, dh)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);

        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }
}

/// Multi-head scaled dot-product attention from one query vector over a
/// memory matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_out: ParamId,
    pub d_query: usize,
    pub d_memory: usize,
    pub heads: usize,
}

/// Keys and values projected once per sequence and split per head.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    keys: Vec<Var>,
    values: Vec<Var>,
    keep: Vec<bool>,
}

impl AttentionMemory {
    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

/// Output of one attention read.
#[derive(Debug, Clone)]
pub struct Attended {
    pub output: Var,
    /// Per-head `1 x L` weight rows.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_query: usize,
        d_memory: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || !d_query.is_multiple_of(heads) {
            return Err(NnError::Shape(format!(
                "hidden size {d_query} is not divisible by {heads} heads"
            )));
        }
        let bq = 1.0 / (d_query as f64).sqrt();
        let bm = 1.0 / (d_memory as f64).sqrt();
        Ok(MultiHeadAttention {
            w_query: params.add(format!("{name}.w_query"), Tensor::uniform(d_query, d_query, bq, rng)),
            w_key: params.add(format!("{name}.w_key"), Tensor::uniform(d_memory, d_query, bm, rng)),
            w_value: params.add(format!("{name}.w_value"), Tensor::uniform(d_memory, d_query, bm, rng)),
            w_out: params.add(format!("{name}.w_out"), Tensor::uniform(d_query, d_query, bq, rng)),
            d_query,
            d_memory,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_query / self.heads
    }

    /// Project `memory` (`L x d_memory`) into per-head keys and values.
    /// `keep[i] == false` masks position `i` (padding).
    pub fn memory(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        memory: Var,
        keep: &[bool],
    ) -> Result<AttentionMemory, NnError> {
        let (rows, cols) = g.shape(memory);
        if cols != self.d_memory {
            return Err(NnError::Shape(format!(
                "attention memory {rows}x{cols}, expected Lx{}",
                self.d_memory
            )));
        }
        if rows == 0 {
            return Err(NnError::Degenerate("empty attention memory".into()));
        }
        if keep.len() != rows {
            return Err(NnError::Shape(format!(
                "attention mask of length {} for {rows} positions",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(NnError::Degenerate("attention memory is fully masked".into()));
        }
        let wk = g.param(params, self.w_key);
        let wv = g.param(params, self.w_value);
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let dk = self.head_dim();
        let mut keys = Vec::with_capacity(self.heads);
        let mut values = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            keys.push(g.slice_cols(k, h * dk, dk)?);
            values.push(g.slice_cols(v, h * dk, dk)?);
        }
        Ok(AttentionMemory {
            keys,
            values,
            keep: keep.to_vec(),
        })
    }

    /// Attend from a `1 x d_query` query.
    pub fn attend(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        mem: &AttentionMemory,
        query: Var,
    ) -> Result<Attended, NnError> {
        if g.shape(query) != (1, self.d_query) {
            let (r, c) = g.shape(query);
            return Err(NnError::Shape(format!(
                "attention query {r}x{c}, expected 1x{}",
                self.d_query
            )));
        }
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let wq = g.param(params, self.w_query);
        let q = g.matmul(query, wq)?;
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let scores = g.matmul_t(qh, mem.keys[h])?;
            let scores = g.scale(scores, scale);
            let w = g.masked_softmax(scores, &mem.keep)?;
            contexts.push(g.matmul(w, mem.values[h])?);
            weights.push(w);
        }
        let ctx = g.concat_cols(&contexts)?;
        let wo = g.param(params, self.w_out);
        let output = g.matmul(ctx, wo)?;
        Ok(Attended { output, weights })
    }
}

/// One-shot attention: project the memory and attend once.
pub fn multi_head_attention(
    g: &mut Graph,
    params: &ParamSet,
    layer: &MultiHeadAttention,
    query: Var,
    memory: Var,
    keep: &[bool],
) -> Result<Attended, NnError> {
    let mem = layer.memory(g, params, memory, keep)?;
    layer.attend(g, params, &mem, query)
}
