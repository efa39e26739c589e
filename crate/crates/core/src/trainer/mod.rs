//! Training loop, evaluation, checkpoints and metrics output.
//!
//! Each epoch shuffles the corpus, runs every mini-batch through
//! embedding, circuit and decoder, averages per-sample gradients in a
//! fixed order and takes one Adam step per batch. After the last batch an
//! inference pass over the corpus supplies the fidelity, similarity and
//! trash-probability columns of the epoch's metrics row.
//!
//! All randomness comes from ChaCha streams keyed by `(seed, epoch)`, with
//! each sample at its own offset, so results do not depend on the thread
//! count and a resumed run continues exactly where the original would
//! have been.

mod checkpoint;
mod config;
pub mod metrics;
mod model;

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, Vocabulary};
use crate::nn::{Adam, Tensor};
use crate::objective::{total_loss, BatchMetrics, LossComponents};
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{Preset, TrainConfig};
pub use model::{position_codes, HybridModel, Reconstruction, SampleStep, THETA_NAME};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";

/// Samples evaluated concurrently before their gradients are folded into
/// the batch sum. Fixed, so the summation order never depends on threads.
const REDUCE_CHUNK: usize = 32;

/// `lr_min + ½ (lr_max − lr_min)(1 + cos(π step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "schedule step {step} beyond total {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos()))
}

/// Teacher-forcing probability after `epoch` completed epochs:
/// `max(alpha_min, 1 − epoch / anneal_epochs)`.
pub fn teacher_forcing_alpha(epoch: usize, alpha_min: f64, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        return alpha_min;
    }
    (1.0 - epoch as f64 / anneal_epochs as f64).max(alpha_min)
}

/// Generator for one sample in one epoch.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64);
    rng.set_word_pos((index as u128) << 24);
    rng
}

/// Visiting order of the corpus in one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Corpus-level inference results.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fidelity: f64,
    pub similarity: f64,
    pub trash_zero_prob: f64,
    pub reconstructions: Vec<Reconstruction>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<BatchMetrics>,
}

fn check_corpus(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    for (i, seq) in corpus.sequences.iter().enumerate() {
        if let Some(&bad) = seq.ids().iter().find(|&&t| t >= vocab.len()) {
            return Err(Error::Compatibility(format!(
                "molecule {i} uses token id {bad} outside the {}-entry vocabulary",
                vocab.len()
            )));
        }
        if seq.body().len() > max_len {
            return Err(Error::Config(format!(
                "molecule {i} has {} tokens, more than max_len = {max_len}",
                seq.body().len()
            )));
        }
    }
    Ok(())
}

/// Greedy reconstruction of every molecule, in corpus order.
pub fn evaluate_model(model: &HybridModel, corpus: &Corpus, vocab: &Vocabulary) -> Result<Evaluation> {
    let reconstructions: Vec<Reconstruction> = corpus
        .sequences
        .par_iter()
        .map(|s| model.reconstruct(s, vocab))
        .collect::<Result<_>>()?;
    let n = reconstructions.len().max(1) as f64;
    let mean = |f: fn(&Reconstruction) -> f64| reconstructions.iter().map(f).sum::<f64>() / n;
    Ok(Evaluation {
        fidelity: mean(|r| r.fidelity),
        similarity: mean(|r| r.similarity),
        trash_zero_prob: mean(|r| r.trash_zero_prob),
        reconstructions,
    })
}

/// Inference pass of a checkpoint over a corpus tokenized with `vocab`.
pub fn evaluate(checkpoint: &Checkpoint, corpus: &Corpus, vocab: &Vocabulary) -> Result<Evaluation> {
    if *vocab != checkpoint.vocab {
        return Err(Error::Compatibility(format!(
            "corpus vocabulary has {} entries, checkpoint vocabulary has {}{}",
            vocab.len(),
            checkpoint.vocab.len(),
            if vocab.len() == checkpoint.vocab.len() {
                " with different tokens"
            } else {
                ""
            }
        )));
    }
    let model = checkpoint.model()?;
    check_corpus(corpus, vocab, usize::MAX)?;
    evaluate_model(&model, corpus, vocab)
}

impl Checkpoint {
    pub fn model(&self) -> Result<HybridModel> {
        HybridModel::with_params(&self.config, self.vocab.len(), self.params.clone())
    }
}

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Train from scratch, or continue from `resume`. `on_epoch` sees each
/// metrics row as soon as it is final.
pub fn train(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    on_epoch: &mut (dyn FnMut(&BatchMetrics) + Send),
) -> Result<TrainOutcome> {
    train_epochs(corpus, vocab, cfg, resume, cfg.epochs, on_epoch)
}

/// Like [`train`], but stop after `last_epoch` while keeping the learning
/// rate and teacher-forcing schedules of the full `cfg.epochs` run.
pub fn train_epochs(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    last_epoch: usize,
    on_epoch: &mut (dyn FnMut(&BatchMetrics) + Send),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_corpus(corpus, vocab, cfg.max_len)?;
    if last_epoch > cfg.epochs {
        return Err(Error::Config(format!(
            "cannot stop at epoch {last_epoch} of a {}-epoch run",
            cfg.epochs
        )));
    }
    run_in_pool(cfg.threads, || {
        train_inner(corpus, vocab, cfg, resume, last_epoch, on_epoch)
    })?
}

fn train_inner(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    last_epoch: usize,
    on_epoch: &mut (dyn FnMut(&BatchMetrics) + Send),
) -> Result<TrainOutcome> {
    let (mut model, mut adam, mut history, start_epoch, mut step) = match resume {
        Some(ck) => {
            if ck.vocab != *vocab {
                return Err(Error::Compatibility(
                    "checkpoint vocabulary differs from the corpus vocabulary".into(),
                ));
            }
            if !ck.config.same_architecture(cfg) {
                return Err(Error::Compatibility(
                    "checkpoint was trained with a different architecture".into(),
                ));
            }
            if ck.epoch > last_epoch {
                return Err(Error::Config(format!(
                    "checkpoint already has {} epochs, training should stop at {last_epoch}",
                    ck.epoch
                )));
            }
            let model = HybridModel::with_params(cfg, vocab.len(), ck.params)?;
            (model, ck.adam, ck.history, ck.epoch, ck.step)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let model = HybridModel::new(cfg, vocab.len(), &mut rng)?;
            let adam = Adam::new(&model.params);
            (model, adam, Vec::new(), 0, 0)
        }
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let n = corpus.len();
    for epoch in start_epoch + 1..=last_epoch {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr, cfg.lr_min)?;
        let alpha = teacher_forcing_alpha(epoch - 1, cfg.alpha_min, cfg.alpha_anneal_epochs);
        let order = epoch_order(cfg.seed, epoch, n);
        let mut sums = LossComponents::default();

        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.params.zeros_like();
            let mut bad = Vec::new();
            for chunk in batch.chunks(REDUCE_CHUNK) {
                let results: Vec<Result<SampleStep>> = chunk
                    .par_iter()
                    .map(|&i| {
                        let mut rng = sample_rng(cfg.seed, epoch, i);
                        model.sample_step(&corpus.sequences[i], vocab, alpha, &cfg.weights, &mut rng)
                    })
                    .collect();
                for (&i, r) in chunk.iter().zip(results) {
                    let s = r?;
                    let l = s.losses;
                    let finite = [l.fidelity, l.ce, l.smiles, l.trash].iter().all(|v| v.is_finite())
                        && s.grads.iter().all(Tensor::is_finite);
                    if !finite {
                        bad.push(i);
                        continue;
                    }
                    for (acc, g) in grads.iter_mut().zip(&s.grads) {
                        acc.add_assign(g);
                    }
                    sums.fidelity += l.fidelity;
                    sums.ce += l.ce;
                    sums.smiles += l.smiles;
                    sums.trash += l.trash;
                }
            }
            if !bad.is_empty() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_no,
                    samples: bad,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(inv));
            adam.step(&mut model.params, &grads, lr)?;
            step += 1;
        }

        let eval = evaluate_model(&model, corpus, vocab)?;
        let inv = 1.0 / n as f64;
        let components = LossComponents {
            fidelity: sums.fidelity * inv,
            ce: sums.ce * inv,
            smiles: sums.smiles * inv,
            trash: sums.trash * inv,
        };
        let row = BatchMetrics {
            epoch,
            step,
            lr,
            total: total_loss(&components, &cfg.weights),
            components,
            fidelity: eval.fidelity,
            similarity: eval.similarity,
            trash_zero_prob: eval.trash_zero_prob,
        };
        if !row.total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: 0,
                samples: Vec::new(),
            });
        }
        history.push(row);
        on_epoch(&row);

        let checkpoint = Checkpoint {
            config: cfg.clone(),
            vocab: vocab.clone(),
            params: model.params.clone(),
            adam: adam.clone(),
            epoch,
            step,
            history: history.clone(),
        };
        if let Some(dir) = &cfg.out_dir {
            write_outputs(dir, &checkpoint)?;
        }
    }

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        vocab: vocab.clone(),
        params: model.params,
        adam,
        epoch: last_epoch.max(start_epoch),
        step,
        history: history.clone(),
    };
    Ok(TrainOutcome { checkpoint, history })
}

fn write_outputs(dir: &std::path::Path, ck: &Checkpoint) -> Result<()> {
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    metrics::write_metrics(&dir.join(METRICS_FILE), &ck.history)?;
    metrics::write_plots(dir, &ck.history)
}

/// Paths a run with `out_dir` produces.
pub fn output_paths(dir: &std::path::Path) -> [PathBuf; 4] {
    [
        dir.join(CHECKPOINT_FILE),
        dir.join(METRICS_FILE),
        dir.join(metrics::QUALITY_PLOT),
        dir.join(metrics::LOSS_PLOT),
    ]
}
