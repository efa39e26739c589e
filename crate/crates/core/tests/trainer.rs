use std::path::{Path, PathBuf};

use smiles_qae::corpus::{build_vocab, prepare_corpus, Corpus, Vocabulary};
use smiles_qae::trainer::{self, metrics, Checkpoint, Preset, TrainConfig};
use smiles_qae::Error;

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn tiny() -> (Corpus, Vocabulary, TrainConfig) {
    let lines = ["CCO", "c1ccccc1"];
    let vocab = build_vocab(&lines).unwrap();
    let (corpus, _) = Corpus::from_lines(&lines, &vocab, 16, "tiny").unwrap();
    let mut cfg = TrainConfig::preset(Preset::Toy);
    cfg.epochs = 1;
    cfg.threads = 1;
    (corpus, vocab, cfg)
}

fn one_epoch_checkpoint() -> Checkpoint {
    let (corpus, vocab, cfg) = tiny();
    trainer::train(&corpus, &vocab, &cfg, None, &mut |_| {}).unwrap().checkpoint
}

#[test]
fn single_epoch_on_two_molecules() {
    let (corpus, vocab, cfg) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..cfg
    };
    let mut seen = 0;
    let out = trainer::train(&corpus, &vocab, &cfg, None, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 1);
    assert_eq!(out.history.len(), 1);
    let row = &out.history[0];
    assert_eq!((row.epoch, row.step), (1, 1));
    assert!(row.total.is_finite());
    for p in trainer::output_paths(dir.path()) {
        assert!(p.exists(), "{} missing", p.display());
    }
    let text = std::fs::read_to_string(dir.path().join(trainer::METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), metrics::CSV_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn truncated_and_corrupt_checkpoints_are_rejected() {
    let bytes = one_epoch_checkpoint().to_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    assert!(err.to_string().contains("c.bin"));

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x40;
    let err = Checkpoint::from_bytes(&flipped).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");

    let err = Checkpoint::from_bytes(b"hello world, not a checkpoint at all......").unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn version_mismatch_names_both_versions() {
    let mut bytes = one_epoch_checkpoint().to_bytes();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    assert!(err.contains("version 7") && err.contains("version 1"), "{err}");
}

#[test]
fn non_finite_parameters_abort_with_location() {
    let (corpus, vocab, mut cfg) = tiny();
    let mut ck = one_epoch_checkpoint();
    let id = ck.params.ids().find(|&i| ck.params.name(i) == "qae.theta").unwrap();
    ck.params.get_mut(id).data_mut()[0] = f64::NAN;
    cfg.epochs = 2;
    match trainer::train(&corpus, &vocab, &cfg, Some(ck), &mut |_| {}) {
        Err(Error::NonFinite { epoch, batch, .. }) => assert_eq!((epoch, batch), (2, 0)),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn untrained_model_reconstructs_poorly() {
    let cfg = TrainConfig::preset(Preset::Toy);
    let (corpus, vocab, _) = prepare_corpus(&data_file("toy.smi"), cfg.max_len).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let model = trainer::HybridModel::new(&cfg, vocab.len(), &mut rng).unwrap();
    let eval = trainer::evaluate_model(&model, &corpus, &vocab).unwrap();
    assert!(eval.similarity < 0.2, "similarity {}", eval.similarity);
    assert_eq!(eval.reconstructions.len(), corpus.len());
}

#[test]
fn evaluation_with_other_vocabulary_is_incompatible() {
    let ck = one_epoch_checkpoint();
    let lines = ["CCN", "CCCl"];
    let vocab = build_vocab(&lines).unwrap();
    let (corpus, _) = Corpus::from_lines(&lines, &vocab, 16, "other").unwrap();
    let err = trainer::evaluate(&ck, &corpus, &vocab).unwrap_err();
    assert!(matches!(err, Error::Compatibility(_)), "{err}");
}

#[test]
fn resume_with_different_architecture_is_incompatible() {
    let (corpus, vocab, mut cfg) = tiny();
    let ck = one_epoch_checkpoint();
    cfg.epochs = 2;
    cfg.hidden = 32;
    let err = trainer::train(&corpus, &vocab, &cfg, Some(ck), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Compatibility(_)), "{err}");
}

#[test]
fn metrics_file_with_wrong_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "epoch,loss\n1,2.0\n").unwrap();
    let err = metrics::read_metrics(&path).unwrap_err().to_string();
    assert!(err.contains("expected columns"), "{err}");
}
