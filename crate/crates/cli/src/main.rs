//! Command-line driver: corpus preparation, training, evaluation,
//! single-molecule reconstruction, circuit inspection and plotting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use smiles_qae::corpus::{load_corpus, prepare_corpus, tokenize, vocab_sidecar, Corpus, Vocabulary};
use smiles_qae::objective::levenshtein_distance;
use smiles_qae::qae::{gate_listing, QaeConfig};
use smiles_qae::trainer::{self, metrics, Checkpoint, Preset, TrainConfig};
use smiles_qae::{Error, Result};

#[derive(Parser)]
#[command(name = "smiles-qae", version, about = "Hybrid quantum-classical SMILES autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deduplicate and length-filter a SMILES file and write its vocabulary.
    Prepare {
        /// Raw SMILES, one per line.
        #[arg(long)]
        input: PathBuf,
        /// Prepared corpus; the vocabulary goes to `<output>.vocab`.
        #[arg(long)]
        output: PathBuf,
        /// Maximum molecule length in tokens.
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
    /// Train the autoencoder.
    Train(TrainArgs),
    /// Reconstruct every molecule of a corpus and report mean metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus to evaluate, e.g. the training file or a held-out set.
        #[arg(long)]
        corpus: PathBuf,
        /// Also print one tab-separated line per molecule.
        #[arg(long)]
        per_molecule: bool,
    },
    /// Reconstruct a single molecule.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = non_empty)]
        smiles: String,
    },
    /// Print the gate listing of the configured circuit.
    InspectCircuit {
        /// Config file (key = value); qubit keys override the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "paper")]
        preset: String,
    },
    /// Render SVG charts from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory (default: next to the metrics file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared corpus. A `<corpus>.vocab` sidecar is used when present.
    #[arg(long)]
    corpus: PathBuf,
    /// Config file (key = value) applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base hyperparameters: paper, toy or overfit.
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint, metrics and plots.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads (1 = strictly single-threaded; 0 = automatic).
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this epoch, keeping the schedules of the full run.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Use hidden dimension 252 with 4 attention heads instead of 256 with 8.
    #[arg(long)]
    paper_dims: bool,
}

fn non_empty(s: &str) -> std::result::Result<String, String> {
    if s.trim().is_empty() {
        Err("must not be empty".into())
    } else {
        Ok(s.to_string())
    }
}

/// Reference configuration, printed verbatim in the `paper` run header.
const REFERENCE_SETUP: &[(&str, &str)] = &[
    ("Number of encoder qubits", "8"),
    ("Number of latent qubits", "5"),
    ("QAE layers", "5"),
    ("Trash qubits", "4"),
    ("Entanglement topology", "CRZ gates"),
    ("Hidden dimension", "252"),
    ("Decoder layers", "4"),
    ("Attention heads", "8"),
    ("Batch size", "1024"),
    ("Learning rate", "1e-6"),
    ("Optimizer", "Adam"),
    ("Epochs", "50"),
];

fn build_config(args: &TrainArgs) -> Result<(Preset, TrainConfig)> {
    let preset: Preset = args.preset.parse()?;
    let mut cfg = TrainConfig::preset(preset);
    if let Some(path) = &args.config {
        cfg = TrainConfig::load(cfg, path)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if args.paper_dims {
        cfg.hidden = 252;
        cfg.heads = 4;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    cfg.out_dir = Some(args.out.clone());
    cfg.validate()?;
    Ok((preset, cfg))
}

/// Corpus plus vocabulary: the sidecar if one exists, otherwise built from
/// the file itself.
fn load_training_corpus(path: &Path, max_len: usize) -> Result<(Corpus, Vocabulary)> {
    let sidecar = vocab_sidecar(path);
    if sidecar.exists() {
        let vocab = Vocabulary::load(&sidecar)?;
        let (corpus, _) = load_corpus(path, &vocab, max_len)?;
        Ok((corpus, vocab))
    } else {
        let (corpus, vocab, _) = prepare_corpus(path, max_len)?;
        Ok((corpus, vocab))
    }
}

fn cmd_prepare(input: &Path, output: &Path, max_len: usize) -> Result<()> {
    let (corpus, vocab, report) = prepare_corpus(input, max_len)?;
    corpus.write_smiles(output)?;
    let sidecar = vocab_sidecar(output);
    vocab.save(&sidecar)?;
    println!("{report}");
    println!("vocabulary: {} entries -> {}", vocab.len(), sidecar.display());
    println!("output: {}", output.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (preset, cfg) = build_config(args)?;
    let (corpus, vocab) = load_training_corpus(&args.corpus, cfg.max_len)?;
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;

    let mut out = std::io::stdout().lock();
    if preset == Preset::Paper {
        let _ = writeln!(out, "# reference configuration");
        for (k, v) in REFERENCE_SETUP {
            let _ = writeln!(out, "#   {k:<26} {v}");
        }
        let _ = writeln!(
            out,
            "# note: 5 latent + 4 trash != 8 qubits; running {} latent + {} trash of {}",
            cfg.qae.n_latent, cfg.qae.n_trash, cfg.qae.n_total
        );
        let _ = writeln!(
            out,
            "# note: hidden 252 is not divisible by 8 heads; running hidden {} with {} heads (--paper-dims gives 252 with 4)",
            cfg.hidden, cfg.heads
        );
    }
    let _ = writeln!(out, "# preset: {}", args.preset);
    for line in cfg.to_text().lines() {
        let _ = writeln!(out, "#   {line}");
    }
    let _ = writeln!(
        out,
        "# corpus: {} molecules, vocabulary {} entries",
        corpus.len(),
        vocab.len()
    );
    let _ = out.flush();
    drop(out);

    let started = Instant::now();
    let last = args.stop_after.unwrap_or(cfg.epochs);
    let outcome = trainer::train_epochs(&corpus, &vocab, &cfg, resume, last, &mut |m| {
        println!(
            "epoch {:>4}  step {:>6}  lr {:.3e}  loss {:.4}  fid {:.4}  ce {:.4}  smiles {:.4}  trash {:.4}  fidelity {:.4}  similarity {:.4}  trash_p0 {:.4}",
            m.epoch,
            m.step,
            m.lr,
            m.total,
            m.components.fidelity,
            m.components.ce,
            m.components.smiles,
            m.components.trash,
            m.fidelity,
            m.similarity,
            m.trash_zero_prob
        );
    })?;
    if outcome.checkpoint.epoch == 0 {
        return Err(Error::Contract("training finished without completing an epoch".into()));
    }
    println!("elapsed_seconds: {:.1}", started.elapsed().as_secs_f64());
    for p in trainer::output_paths(&args.out) {
        println!("wrote: {}", p.display());
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, corpus_path: &Path, per_molecule: bool) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let sidecar = vocab_sidecar(corpus_path);
    let vocab = if sidecar.exists() {
        Vocabulary::load(&sidecar)?
    } else {
        ck.vocab.clone()
    };
    let (corpus, _) = load_corpus(corpus_path, &vocab, ck.config.max_len)?;
    let eval = trainer::evaluate(&ck, &corpus, &vocab)?;
    if per_molecule {
        for r in &eval.reconstructions {
            println!("{}\t{}\t{:.6}\t{:.6}", r.original, r.reconstructed, r.similarity, r.fidelity);
        }
    }
    println!("molecules: {}", eval.reconstructions.len());
    println!("fidelity: {:.6}", eval.fidelity);
    println!("similarity: {:.6}", eval.similarity);
    println!("trash_zero_prob: {:.6}", eval.trash_zero_prob);
    Ok(())
}

fn cmd_reconstruct(checkpoint: &Path, smiles: &str) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let seq = tokenize(smiles.trim(), &ck.vocab)?;
    let model = ck.model()?;
    let r = model.reconstruct(&seq, &ck.vocab)?;
    println!("original: {}", r.original);
    println!("reconstruction: {}", r.reconstructed);
    println!("fidelity: {:.6}", r.fidelity);
    println!("similarity: {:.6}", r.similarity);
    println!("trash_zero_prob: {:.6}", r.trash_zero_prob);
    println!("edit_distance: {}", levenshtein_distance(&r.original, &r.reconstructed));
    let latent: Vec<String> = r.latent.iter().map(|z| format!("{z:.6}")).collect();
    println!("latent: {}", latent.join(" "));
    Ok(())
}

fn cmd_inspect(config: Option<&Path>, preset: &str) -> Result<()> {
    let mut cfg = TrainConfig::preset(preset.parse()?);
    if let Some(path) = config {
        cfg = TrainConfig::load(cfg, path)?;
    }
    let q: QaeConfig = cfg.qae;
    let gates = gate_listing(&q)?;
    println!(
        "# {} qubits ({} latent, {} trash), {} ansatz layers",
        q.n_total, q.n_latent, q.n_trash, q.n_layers
    );
    println!("{:<5} {:<4} {:<9} parameter", "layer", "gate", "qubits");
    for g in &gates {
        println!("{g}");
    }
    println!("gates: {}", gates.len());
    println!(
        "rotation parameters: {} ({} layers x {} qubits x 2 + {} data angles)",
        q.num_rotation_params(),
        q.n_layers,
        q.n_total,
        q.n_total
    );
    Ok(())
}

fn cmd_plot(metrics_path: &Path, out: Option<&Path>) -> Result<()> {
    let rows = metrics::read_metrics(metrics_path)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => metrics_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    metrics::write_plots(&dir, &rows)?;
    for name in [metrics::QUALITY_PLOT, metrics::LOSS_PLOT] {
        println!("wrote: {}", dir.join(name).display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            input,
            output,
            max_len,
        } => cmd_prepare(&input, &output, max_len),
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            checkpoint,
            corpus,
            per_molecule,
        } => cmd_eval(&checkpoint, &corpus, per_molecule),
        Command::Reconstruct { checkpoint, smiles } => cmd_reconstruct(&checkpoint, &smiles),
        Command::InspectCircuit { config, preset } => cmd_inspect(config.as_deref(), &preset),
        Command::Plot { metrics, out } => cmd_plot(&metrics, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
