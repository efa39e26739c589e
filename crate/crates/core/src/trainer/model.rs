//! The full hybrid model and its per-sample forward/backward pass.

use rand::Rng;

use crate::corpus::{detokenize, TokenSequence, Vocabulary};
use crate::decoder::{trim_prediction, DecodeConfig, Decoder};
use crate::embedding::KetEmbedding;
use crate::nn::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::objective::{levenshtein_similarity, sequence_ce, LossComponents, LossWeights};
use crate::qae::{param_shift_grad, qae_forward, AngleEncoder, CircuitParams, QaeConfig, QaeForward, QuantumObjective};
use crate::{Error, Result};

use super::TrainConfig;

pub const THETA_NAME: &str = "qae.theta";

#[derive(Debug, Clone)]
pub struct HybridModel {
    pub qae: QaeConfig,
    pub params: ParamSet,
    pub embedding: KetEmbedding,
    pub encoder: AngleEncoder,
    /// `n_layers x 2 n_total` ansatz angles, trained by parameter shift.
    pub theta: ParamId,
    pub decoder: Decoder,
    pub positional_memory: bool,
    pub max_len: usize,
}

/// What one training sample contributes to a batch.
#[derive(Debug, Clone)]
pub struct SampleStep {
    pub grads: Vec<Tensor>,
    pub losses: LossComponents,
    pub fidelity: f64,
    pub trash_zero_prob: f64,
    pub similarity: f64,
    pub fed_truth: usize,
    pub decode_steps: usize,
}

/// Inference result for one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub original: String,
    pub reconstructed: String,
    pub fidelity: f64,
    pub trash_zero_prob: f64,
    pub similarity: f64,
    pub latent: Vec<f64>,
}

/// Fixed sinusoidal position codes, `len x dim`.
pub fn position_codes(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            t.data_mut()[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    t
}

struct Encoded {
    angles_var: Var,
    angles: Vec<f64>,
    quantum: QaeForward,
    zhat: Var,
    memory: crate::nn::AttentionMemory,
}

impl HybridModel {
    /// Fresh model; every parameter is drawn from `rng` in a fixed order.
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let embedding = KetEmbedding::new(
            &mut params,
            vocab_size,
            cfg.ket_order,
            cfg.ket_site_dim,
            cfg.d_model,
            rng,
        )?;
        let encoder = AngleEncoder::new(&mut params, cfg.d_model, cfg.qae.n_total, rng);
        let init = CircuitParams::random(&cfg.qae, rng);
        let theta = params.add(THETA_NAME, init.to_tensor());
        let decoder = Decoder::new(&mut params, cfg.decoder_dims(vocab_size), rng)?;
        Ok(HybridModel {
            qae: cfg.qae,
            params,
            embedding,
            encoder,
            theta,
            decoder,
            positional_memory: cfg.positional_memory,
            max_len: cfg.max_len,
        })
    }

    /// Same architecture as `new`, with parameters taken from `params`.
    pub fn with_params(cfg: &TrainConfig, vocab_size: usize, params: ParamSet) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = HybridModel::new(cfg, vocab_size, &mut rng)?;
        if params.names() != model.params.names() {
            return Err(Error::Compatibility(format!(
                "parameter names differ from the configured architecture ({} vs {} tensors)",
                params.len(),
                model.params.len()
            )));
        }
        for (id, (have, want)) in params.tensors().iter().zip(model.params.tensors()).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {} is {:?}, configuration expects {:?}",
                    params.names()[id],
                    have.shape(),
                    want.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.vocab_size
    }

    pub fn circuit(&self) -> Result<CircuitParams> {
        Ok(CircuitParams::from_slice(&self.qae, self.params.get(self.theta).data())?)
    }

    fn encode(&self, g: &mut Graph, seq: &TokenSequence, theta: &CircuitParams) -> Result<Encoded> {
        let emb = self.embedding.embed_sequence(g, &self.params, seq.ids())?;
        let angles_var = self.encoder.encode_angles(g, &self.params, emb.pooled)?;
        let angles = g.value(angles_var).data().to_vec();
        let quantum = qae_forward(&angles, theta, &self.qae)?;
        let zhat = g.input(Tensor::row(quantum.latent.clone()));
        let rows = if self.positional_memory {
            let pe = g.constant(position_codes(seq.len(), self.embedding.d_model));
            g.add(emb.rows, pe)?
        } else {
            emb.rows
        };
        let memory = self.decoder.memory(g, &self.params, rows, &emb.keep)?;
        Ok(Encoded {
            angles_var,
            angles,
            quantum,
            zhat,
            memory,
        })
    }

    fn greedy(&self, g: &mut Graph, enc: &Encoded) -> Result<Vec<usize>> {
        let cfg = DecodeConfig {
            max_len: self.max_len + 1,
            teacher_forcing: 0.0,
        };
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self
            .decoder
            .decode_sequence(g, &self.params, enc.zhat, &enc.memory, None, &cfg, &mut no_rng)?;
        Ok(trim_prediction(&out.tokens))
    }

    /// Greedy reconstruction without gradients.
    pub fn reconstruct(&self, seq: &TokenSequence, vocab: &Vocabulary) -> Result<Reconstruction> {
        let theta = self.circuit()?;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, seq, &theta)?;
        let predicted = self.greedy(&mut g, &enc)?;
        let original = detokenize(seq.body(), vocab);
        let reconstructed = detokenize(&predicted, vocab);
        Ok(Reconstruction {
            similarity: levenshtein_similarity(&original, &reconstructed),
            original,
            reconstructed,
            fidelity: enc.quantum.fidelity,
            trash_zero_prob: enc.quantum.trash_zero_prob,
            latent: enc.quantum.latent,
        })
    }

    /// Forward and backward for one molecule.
    ///
    /// The classical tape is rooted at `λ_CE · CE`; its gradient with
    /// respect to the measured latent vector becomes the linear weights of
    /// a quantum objective together with `λ_fid` and `λ_trash`. Parameter
    /// shift on that objective gives the ansatz gradient and the gradient
    /// for the data-layer angles, which is seeded back into the tape to
    /// reach the encoder projection and the embedding factors.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        seq: &TokenSequence,
        vocab: &Vocabulary,
        alpha: f64,
        weights: &LossWeights,
        rng: &mut R,
    ) -> Result<SampleStep> {
        let theta = self.circuit()?;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, seq, &theta)?;
        let cfg = DecodeConfig {
            max_len: self.max_len + 1,
            teacher_forcing: alpha,
        };
        let out = self.decoder.decode_sequence(
            &mut g,
            &self.params,
            enc.zhat,
            &enc.memory,
            Some(seq.ids()),
            &cfg,
            rng,
        )?;
        let ce = sequence_ce(&mut g, &out.logits, &seq.ids()[1..])?;
        let ce_value = g.value(ce).item();
        let root = g.scale(ce, weights.ce);
        let classical = g.backward(root)?;
        let mut grads = g.param_grads(&classical, &self.params);

        let objective = QuantumObjective {
            fidelity_weight: weights.fidelity,
            trash_weight: weights.trash,
            latent_weights: classical.get_or_zeros(enc.zhat, (1, self.qae.n_latent)).into_data(),
        };
        let shift = param_shift_grad(&enc.angles, &theta, &self.qae, &objective)?;
        let seeded = g.backward_seeded(&[(enc.angles_var, Tensor::row(shift.angles))])?;
        g.accumulate_param_grads(&seeded, &mut grads);
        grads[self.theta.index()]
            .data_mut()
            .iter_mut()
            .zip(&shift.theta)
            .for_each(|(a, b)| *a += b);

        let predicted = self.greedy(&mut g, &enc)?;
        let original = detokenize(seq.body(), vocab);
        let similarity = levenshtein_similarity(&original, &detokenize(&predicted, vocab));
        Ok(SampleStep {
            grads,
            losses: LossComponents {
                fidelity: 1.0 - enc.quantum.fidelity,
                ce: ce_value,
                smiles: 1.0 - similarity,
                trash: 1.0 - enc.quantum.trash_zero_prob,
            },
            fidelity: enc.quantum.fidelity,
            trash_zero_prob: enc.quantum.trash_zero_prob,
            similarity,
            fed_truth: out.fed_truth,
            decode_steps: out.tokens.len(),
        })
    }

    /// Differentiable part of one sample's loss,
    /// `λ_fid (1 - F) + λ_CE CE + λ_trash (1 - p₀)`, re-evaluated from
    /// scratch. Used by gradient checks.
    pub fn sample_loss<R: Rng + ?Sized>(
        &self,
        seq: &TokenSequence,
        alpha: f64,
        weights: &LossWeights,
        rng: &mut R,
    ) -> Result<f64> {
        let theta = self.circuit()?;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, seq, &theta)?;
        let cfg = DecodeConfig {
            max_len: self.max_len + 1,
            teacher_forcing: alpha,
        };
        let out = self.decoder.decode_sequence(
            &mut g,
            &self.params,
            enc.zhat,
            &enc.memory,
            Some(seq.ids()),
            &cfg,
            rng,
        )?;
        let ce = sequence_ce(&mut g, &out.logits, &seq.ids()[1..])?;
        Ok(weights.fidelity * (1.0 - enc.quantum.fidelity)
            + weights.ce * g.value(ce).item()
            + weights.trash * (1.0 - enc.quantum.trash_zero_prob))
    }
}
