use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decoder::DecoderDims;
use crate::objective::LossWeights;
use crate::qae::QaeConfig;
use crate::{Error, Result};

/// Every knob of a training run. Serialized as flat `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide. Results do not depend on it.
    pub threads: usize,
    pub qae: QaeConfig,
    pub ket_order: usize,
    pub ket_site_dim: usize,
    pub d_model: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    /// Longest molecule in tokens, sentinels excluded.
    pub max_len: usize,
    /// Add fixed sinusoidal position codes to the attention memory.
    pub positional_memory: bool,
    pub weights: LossWeights,
    pub alpha_min: f64,
    /// Epochs over which teacher forcing decays from 1 to `alpha_min`.
    pub alpha_anneal_epochs: usize,
    /// Where checkpoints, metrics and plots go; `None` keeps everything in
    /// memory.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Toy,
    Overfit,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            "overfit" => Ok(Preset::Overfit),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected paper, toy or overfit)"
            ))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Paper)
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "lr_min",
    "seed",
    "threads",
    "n_total",
    "n_latent",
    "n_trash",
    "n_layers",
    "ket_order",
    "ket_site_dim",
    "d_model",
    "token_dim",
    "hidden",
    "decoder_layers",
    "heads",
    "max_len",
    "positional_memory",
    "lambda_fidelity",
    "lambda_ce",
    "lambda_smiles",
    "lambda_trash",
    "alpha_min",
    "alpha_anneal_epochs",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        let toy = TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            lr_min: 0.0,
            seed: 0,
            threads: 0,
            qae: QaeConfig {
                n_total: 6,
                n_latent: 4,
                n_trash: 2,
                n_layers: 2,
            },
            ket_order: 2,
            ket_site_dim: 4,
            d_model: 32,
            token_dim: 16,
            hidden: 64,
            decoder_layers: 2,
            heads: 4,
            max_len: 16,
            positional_memory: true,
            weights: LossWeights::default(),
            alpha_min: 0.5,
            alpha_anneal_epochs: 10,
            out_dir: None,
        };
        match p {
            Preset::Toy => toy,
            Preset::Overfit => TrainConfig {
                epochs: 200,
                batch_size: 4,
                alpha_min: 0.0,
                alpha_anneal_epochs: 120,
                ..toy
            },
            Preset::Paper => TrainConfig {
                epochs: 50,
                batch_size: 1024,
                lr: 1e-6,
                lr_min: 0.0,
                seed: 0,
                threads: 0,
                qae: QaeConfig::default(),
                ket_order: 4,
                ket_site_dim: 4,
                d_model: 252,
                token_dim: 64,
                hidden: 256,
                decoder_layers: 4,
                heads: 8,
                max_len: 40,
                positional_memory: true,
                weights: LossWeights::default(),
                alpha_min: 0.5,
                alpha_anneal_epochs: 25,
                out_dir: None,
            },
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "n_total" => self.qae.n_total = parse(key, v)?,
            "n_latent" => self.qae.n_latent = parse(key, v)?,
            "n_trash" => self.qae.n_trash = parse(key, v)?,
            "n_layers" => self.qae.n_layers = parse(key, v)?,
            "ket_order" => self.ket_order = parse(key, v)?,
            "ket_site_dim" => self.ket_site_dim = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "token_dim" => self.token_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "decoder_layers" => self.decoder_layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "positional_memory" => self.positional_memory = parse(key, v)?,
            "lambda_fidelity" => self.weights.fidelity = parse(key, v)?,
            "lambda_ce" => self.weights.ce = parse(key, v)?,
            "lambda_smiles" => self.weights.smiles = parse(key, v)?,
            "lambda_trash" => self.weights.trash = parse(key, v)?,
            "alpha_min" => self.alpha_min = parse(key, v)?,
            "alpha_anneal_epochs" => self.alpha_anneal_epochs = parse(key, v)?,
            "out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => {
                return Err(Error::Config(format!(
                    "unknown key '{other}'; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => format!("{:e}", self.lr),
            "lr_min" => format!("{:e}", self.lr_min),
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "n_total" => self.qae.n_total.to_string(),
            "n_latent" => self.qae.n_latent.to_string(),
            "n_trash" => self.qae.n_trash.to_string(),
            "n_layers" => self.qae.n_layers.to_string(),
            "ket_order" => self.ket_order.to_string(),
            "ket_site_dim" => self.ket_site_dim.to_string(),
            "d_model" => self.d_model.to_string(),
            "token_dim" => self.token_dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "decoder_layers" => self.decoder_layers.to_string(),
            "heads" => self.heads.to_string(),
            "max_len" => self.max_len.to_string(),
            "positional_memory" => self.positional_memory.to_string(),
            "lambda_fidelity" => self.weights.fidelity.to_string(),
            "lambda_ce" => self.weights.ce.to_string(),
            "lambda_smiles" => self.weights.smiles.to_string(),
            "lambda_trash" => self.weights.trash.to_string(),
            "alpha_min" => self.alpha_min.to_string(),
            "alpha_anneal_epochs" => self.alpha_anneal_epochs.to_string(),
            "out_dir" => self
                .out_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{raw}'", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(base: TrainConfig, text: &str) -> Result<Self> {
        let mut cfg = base;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(base: TrainConfig, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_text(base, &text)
    }

    /// Every field, one `key = value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("every key is readable");
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_min.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad(format!("lr_min must lie in [0, lr], got {}", self.lr_min));
        }
        self.qae.validate()?;
        for (name, v) in [
            ("ket_order", self.ket_order),
            ("ket_site_dim", self.ket_site_dim),
            ("d_model", self.d_model),
            ("token_dim", self.token_dim),
            ("hidden", self.hidden),
            ("decoder_layers", self.decoder_layers),
            ("heads", self.heads),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden dimension {} is not divisible by {} attention heads",
                self.hidden, self.heads
            ));
        }
        let full = (self.ket_site_dim as f64).powi(self.ket_order as i32);
        if full > 65_536.0 {
            return bad(format!(
                "ket_site_dim^ket_order = {full} is too large for a dense projection"
            ));
        }
        self.weights.validate().map_err(Error::Config)?;
        if !(0.0..=1.0).contains(&self.alpha_min) {
            return bad(format!("alpha_min must lie in [0, 1], got {}", self.alpha_min));
        }
        Ok(())
    }

    pub fn decoder_dims(&self, vocab_size: usize) -> DecoderDims {
        DecoderDims {
            vocab_size,
            token_dim: self.token_dim,
            latent_dim: self.qae.n_latent,
            hidden: self.hidden,
            layers: self.decoder_layers,
            heads: self.heads,
            memory_dim: self.d_model,
        }
    }

    /// True when two configs build models with identical parameter shapes.
    pub fn same_architecture(&self, other: &TrainConfig) -> bool {
        self.qae == other.qae
            && self.ket_order == other.ket_order
            && self.ket_site_dim == other.ket_site_dim
            && self.d_model == other.d_model
            && self.token_dim == other.token_dim
            && self.hidden == other.hidden
            && self.decoder_layers == other.decoder_layers
            && self.heads == other.heads
            && self.positional_memory == other.positional_memory
    }
}
