//! Loss terms and sequence metrics.
//!
//! The total loss is `λ₁ L_fid + λ₂ L_CE + λ₃ L_SMILES + λ₄ L_trash`.
//! `L_SMILES = 1 - mean edit-distance similarity` of greedy decodes; it is
//! computed from argmax outputs, so it is reported in the total but
//! contributes nothing to the gradient. Only λ₁, λ₂ and λ₄ scale gradients.

use crate::corpus::PAD;
use crate::nn::{Graph, NnError, Var};

/// Unit-cost edit distance between two symbol sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Edit distance over characters.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

/// `1 - d(a, b) / max(|a|, |b|)`; two empty strings are identical.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

/// Mean cross-entropy of per-step logits against `targets` (SOS already
/// removed). PAD targets are skipped in both numerator and denominator.
pub fn sequence_ce(g: &mut Graph, logits: &[Var], targets: &[usize]) -> Result<Var, NnError> {
    let needed = targets.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    if logits.len() < needed {
        return Err(NnError::Shape(format!(
            "{} decoder steps for {needed} target tokens",
            logits.len()
        )));
    }
    let terms: Vec<Var> = logits
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t != PAD)
        .map(|(&l, &t)| g.cross_entropy(l, t))
        .collect::<Result<_, _>>()?;
    if terms.is_empty() {
        return Err(NnError::Degenerate("no non-PAD targets".into()));
    }
    let n = terms.len() as f64;
    let stacked = g.concat_cols(&terms)?;
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / n))
}

/// The four λ weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub fidelity: f64,
    pub ce: f64,
    pub smiles: f64,
    pub trash: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fidelity: 1.0,
            ce: 1.0,
            smiles: 0.5,
            trash: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.fidelity, self.ce, self.smiles, self.trash];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(format!("loss weights must be finite and non-negative: {all:?}"));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err("at least one loss weight must be positive".into());
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        LossWeights {
            fidelity: self.fidelity * s,
            ce: self.ce * s,
            smiles: self.smiles * s,
            trash: self.trash * s,
        }
    }
}

/// Values of the four loss terms, each already averaged over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub fidelity: f64,
    pub ce: f64,
    pub smiles: f64,
    pub trash: f64,
}

/// One logged row of training metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub components: LossComponents,
    pub fidelity: f64,
    pub similarity: f64,
    pub trash_zero_prob: f64,
}

/// Weighted sum of the components.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.fidelity * c.fidelity + w.ce * c.ce + w.smiles * c.smiles + w.trash * c.trash
}

/// Total loss plus a metrics row with the epoch/step/lr/quality fields left
/// for the caller to fill.
pub fn assemble(c: LossComponents, w: &LossWeights) -> (f64, BatchMetrics) {
    let total = total_loss(&c, w);
    (
        total,
        BatchMetrics {
            total,
            components: c,
            ..BatchMetrics::default()
        },
    )
}
