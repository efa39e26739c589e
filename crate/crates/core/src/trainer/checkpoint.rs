//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SQAECKPT" | u32 version
//! str config | str vocabulary
//! u64 epoch | u64 step | u64 adam_step | f64 beta1 | f64 beta2 | f64 eps
//! u64 n_params, then per parameter: str name | u64 rows | u64 cols | f64[] value | f64[] m | f64[] v
//! u64 n_history, then per row: u64 epoch | u64 step | f64 x 9
//! sha256 of everything above
//! ```
//!
//! `str` is a u64 byte length followed by UTF-8.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::nn::{Adam, ParamSet, Tensor};
use crate::objective::{BatchMetrics, LossComponents};
use crate::{Error, Result};

use super::TrainConfig;

pub const MAGIC: &[u8; 8] = b"SQAECKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
///
/// Sample-level randomness is derived from `(config.seed, epoch, sample)`,
/// so the seed and epoch stand in for a serialized generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub history: Vec<BatchMetrics>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn floats(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string field is not UTF-8".into()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        // Bounds-check before allocating so a corrupt length cannot
        // request absurd amounts of memory.
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.str(&self.config.to_text());
        w.str(&self.vocab.to_text());
        w.u64(self.epoch as u64);
        w.u64(self.step as u64);
        w.u64(self.adam.step);
        w.f64(self.adam.beta1);
        w.f64(self.adam.beta2);
        w.f64(self.adam.eps);
        w.u64(self.params.len() as u64);
        for (i, t) in self.params.tensors().iter().enumerate() {
            w.str(&self.params.names()[i]);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            w.floats(t.data());
            w.floats(self.adam.m[i].data());
            w.floats(self.adam.v[i].data());
        }
        w.u64(self.history.len() as u64);
        for m in &self.history {
            w.u64(m.epoch as u64);
            w.u64(m.step as u64);
            w.floats(&[
                m.lr,
                m.total,
                m.components.fidelity,
                m.components.ce,
                m.components.smiles,
                m.components.trash,
                m.fidelity,
                m.similarity,
                m.trash_zero_prob,
            ]);
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic or too short)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch (file truncated or corrupt; version {version})"
            )));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let config = TrainConfig::from_text(TrainConfig::default(), &r.str()?)?;
        let vocab = Vocabulary::from_text(&r.str()?).map_err(Error::Checkpoint)?;
        let epoch = r.usize()?;
        let step = r.usize()?;
        let adam_step = r.u64()?;
        let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
        let n = r.usize()?;
        let mut params = ParamSet::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let name = r.str()?;
            let rows = r.usize()?;
            let cols = r.usize()?;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let mut tensor = || -> Result<Tensor> { Ok(Tensor::new(rows, cols, r.floats(len)?)?) };
            params.add(name, tensor()?);
            m.push(tensor()?);
            v.push(tensor()?);
        }
        let rows = r.usize()?;
        let mut history = Vec::new();
        for _ in 0..rows {
            let epoch = r.usize()?;
            let step = r.usize()?;
            let f = r.floats(9)?;
            history.push(BatchMetrics {
                epoch,
                step,
                lr: f[0],
                total: f[1],
                components: LossComponents {
                    fidelity: f[2],
                    ce: f[3],
                    smiles: f[4],
                    trash: f[5],
                },
                fidelity: f[6],
                similarity: f[7],
                trash_zero_prob: f[8],
            });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after history",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            vocab,
            params,
            adam: Adam {
                beta1,
                beta2,
                eps,
                step: adam_step,
                m,
                v,
            },
            epoch,
            step,
            history,
        })
    }

    /// Write atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
