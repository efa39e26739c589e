//! SMILES ingestion: tokenization, vocabularies and deduplicated corpora.
//!
//! Tokens are produced by greedy longest match over a fixed table: bracket
//! atoms (`[nH]`, `[C@@H]`, ...) are single tokens, two-letter symbols
//! (`Cl`, `Br`, `Si`, `@@`) and `%NN` ring closures are single tokens, and
//! everything else is one character. Paren balance and chemical validity are
//! not checked here.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<sos>", "<eos>", "<unk>"];
const TWO_CHAR_TOKENS: [&str; 4] = ["Cl", "Br", "Si", "@@"];
const SINGLE_CHAR_TOKENS: &str = "BCNOPSFIbcnops()=#$:/\\.-@0123456789";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("rejected molecule {smiles:?}: {reason}")]
    Reject { smiles: String, reason: String },

    #[error("empty corpus: {0}")]
    Empty(String),

    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("malformed vocabulary file {path}: {message}")]
    Vocabulary { path: PathBuf, message: String },
}

fn reject(smiles: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Reject {
        smiles: smiles.to_string(),
        reason: reason.into(),
    }
}

/// Split a SMILES string into token strings without consulting a vocabulary.
pub fn split_tokens(smiles: &str) -> Result<Vec<&str>, CorpusError> {
    if smiles.is_empty() {
        return Err(reject(smiles, "empty string"));
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &smiles[pos..];
        let c = bytes[pos];
        if !c.is_ascii() {
            return Err(reject(smiles, format!("non-ASCII character at byte {pos}")));
        }
        let len = if c == b'[' {
            match rest.find(']') {
                Some(1) => return Err(reject(smiles, "empty bracket atom")),
                Some(end) => {
                    if rest[1..end].contains('[') {
                        return Err(reject(smiles, format!("nested bracket at byte {pos}")));
                    }
                    end + 1
                }
                None => return Err(reject(smiles, format!("unclosed bracket at byte {pos}"))),
            }
        } else if c == b'%' {
            let digits = rest.as_bytes().get(1..3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => 3,
                _ => return Err(reject(smiles, format!("malformed ring closure at byte {pos}"))),
            }
        } else if TWO_CHAR_TOKENS.iter().any(|t| rest.starts_with(t)) {
            2
        } else if SINGLE_CHAR_TOKENS.as_bytes().contains(&c) {
            1
        } else {
            return Err(reject(
                smiles,
                format!("character {:?} at byte {pos} is not a SMILES token", c as char),
            ));
        };
        tokens.push(&smiles[pos..pos + len]);
        pos += len;
    }
    Ok(tokens)
}

/// Token-string to id map with four reserved ids and sorted ordinary tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from an arbitrary collection of token strings; duplicates and
    /// order do not matter.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ordinary: Vec<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !RESERVED_NAMES.contains(&t.as_str()))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ordinary.sort();
        let tokens: Vec<String> = RESERVED_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(ordinary)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_RESERVED || lines[..NUM_RESERVED] != RESERVED_NAMES {
            return Err("missing reserved header tokens".into());
        }
        let vocab = Vocabulary::from_tokens(lines[NUM_RESERVED..].iter().copied());
        if vocab.tokens.iter().map(String::as_str).ne(lines.iter().copied()) {
            return Err("tokens are duplicated or not in sorted order".into());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_text()).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Vocabulary::from_text(&text).map_err(|message| CorpusError::Vocabulary {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Sentinel-framed token ids: `SOS, x_1, ..., x_n, EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    /// Validate and wrap raw ids.
    pub fn from_ids(ids: Vec<usize>, vocab_size: usize) -> Result<Self, String> {
        if ids.len() < 2 {
            return Err(format!("sequence of length {} has no room for sentinels", ids.len()));
        }
        if ids[0] != SOS || ids[ids.len() - 1] != EOS {
            return Err("sequence must start with SOS and end with EOS".into());
        }
        let interior = &ids[1..ids.len() - 1];
        if interior.iter().any(|&t| t == SOS || t == EOS) {
            return Err("interior SOS/EOS".into());
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= vocab_size) {
            return Err(format!("token id {bad} outside vocabulary of size {vocab_size}"));
        }
        Ok(TokenSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens between the sentinels.
    pub fn body(&self) -> &[usize] {
        &self.0[1..self.0.len() - 1]
    }
}

/// Tokenize with a vocabulary. Tokens the vocabulary does not know map to
/// [`UNK`].
pub fn tokenize(smiles: &str, vocab: &Vocabulary) -> Result<TokenSequence, CorpusError> {
    let pieces = split_tokens(smiles)?;
    let mut ids = Vec::with_capacity(pieces.len() + 2);
    ids.push(SOS);
    ids.extend(pieces.iter().map(|p| vocab.id(p).unwrap_or(UNK)));
    ids.push(EOS);
    Ok(TokenSequence(ids))
}

/// Concatenate token strings, skipping PAD/SOS/EOS. UNK renders as `?`.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        match id {
            PAD | SOS | EOS => {}
            UNK => out.push('?'),
            _ => out.push_str(vocab.token(id).unwrap_or("?")),
        }
    }
    out
}

/// Vocabulary over every token observed in the tokenizable lines.
pub fn build_vocab<S: AsRef<str>>(lines: &[S]) -> Result<Vocabulary, CorpusError> {
    let mut seen = HashSet::new();
    let mut usable = 0usize;
    for line in lines {
        if let Ok(tokens) = split_tokens(line.as_ref()) {
            usable += 1;
            seen.extend(tokens.into_iter().map(str::to_string));
        }
    }
    if usable == 0 {
        return Err(CorpusError::Empty("no tokenizable lines".into()));
    }
    Ok(Vocabulary::from_tokens(seen))
}

/// Counts of what happened to each non-comment, non-blank input line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub length_filtered: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lines: {}", self.lines)?;
        writeln!(f, "accepted: {}", self.accepted)?;
        writeln!(f, "duplicates: {}", self.duplicates)?;
        writeln!(f, "rejected: {}", self.rejected)?;
        write!(f, "length_filtered: {}", self.length_filtered)
    }
}

/// Deduplicated, length-filtered, tokenized molecules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub smiles: Vec<String>,
    pub sequences: Vec<TokenSequence>,
    /// Maximum number of tokens per molecule, sentinels excluded.
    pub max_len: usize,
    pub source: PathBuf,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Build from raw lines. `#` comments and blank lines are skipped and not
    /// counted.
    pub fn from_lines<S: AsRef<str> + Sync>(
        lines: &[S],
        vocab: &Vocabulary,
        max_len: usize,
        source: impl Into<PathBuf>,
    ) -> Result<(Corpus, LoadReport), CorpusError> {
        let candidates: Vec<&str> = lines
            .iter()
            .map(|l| l.as_ref().trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let tokenized: Vec<Result<TokenSequence, CorpusError>> =
            candidates.par_iter().map(|s| tokenize(s, vocab)).collect();

        let mut report = LoadReport {
            lines: candidates.len(),
            ..LoadReport::default()
        };
        let mut seen = HashSet::new();
        let mut smiles = Vec::new();
        let mut sequences = Vec::new();
        for (raw, seq) in candidates.iter().zip(tokenized) {
            let Ok(seq) = seq else {
                report.rejected += 1;
                continue;
            };
            if seq.len() - 2 > max_len {
                report.length_filtered += 1;
                continue;
            }
            if !seen.insert(*raw) {
                report.duplicates += 1;
                continue;
            }
            report.accepted += 1;
            smiles.push(raw.to_string());
            sequences.push(seq);
        }
        if sequences.is_empty() {
            return Err(CorpusError::Empty(format!(
                "all {} lines were rejected, filtered or duplicates",
                report.lines
            )));
        }
        let corpus = Corpus {
            smiles,
            sequences,
            max_len,
            source: source.into(),
        };
        Ok((corpus, report))
    }

    /// Write the accepted SMILES, one per line.
    pub fn write_smiles(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = self.smiles.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Load a one-SMILES-per-line file against an existing vocabulary.
pub fn load_corpus(
    path: &Path,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let lines = read_lines(path)?;
    Corpus::from_lines(&lines, vocab, max_len, path)
}

/// Load a file and build its vocabulary from the lines that survive
/// tokenization and length filtering.
pub fn prepare_corpus(
    path: &Path,
    max_len: usize,
) -> Result<(Corpus, Vocabulary, LoadReport), CorpusError> {
    let lines = read_lines(path)?;
    let kept: Vec<&str> = lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter(|l| split_tokens(l).is_ok_and(|t| t.len() <= max_len))
        .collect();
    let vocab = build_vocab(&kept).map_err(|_| {
        CorpusError::Empty(format!("no usable lines in {}", path.display()))
    })?;
    let (corpus, report) = Corpus::from_lines(&lines, &vocab, max_len, path)?;
    Ok((corpus, vocab, report))
}

/// Path of the vocabulary sidecar written next to a prepared corpus.
pub fn vocab_sidecar(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.as_os_str().to_owned();
    name.push(".vocab");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_for(lines: &[&str]) -> Vocabulary {
        build_vocab(lines).unwrap()
    }

    fn names(seq: &TokenSequence, vocab: &Vocabulary) -> Vec<String> {
        seq.ids()
            .iter()
            .map(|&i| vocab.token(i).unwrap().to_string())
            .collect()
    }

    #[test]
    fn ethanol_splits_per_character() {
        let vocab = vocab_for(&["CCO"]);
        let seq = tokenize("CCO", &vocab).unwrap();
        assert_eq!(names(&seq, &vocab), ["<sos>", "C", "C", "O", "<eos>"]);
    }

    #[test]
    fn chlorine_is_one_token() {
        let vocab = vocab_for(&["CCl"]);
        let seq = tokenize("CCl", &vocab).unwrap();
        assert_eq!(names(&seq, &vocab), ["<sos>", "C", "Cl", "<eos>"]);
    }

    #[test]
    fn longest_match_table_by_hand() {
        let cases: &[(&str, &[&str])] = &[
            ("BrCCBr", &["Br", "C", "C", "Br"]),
            ("C[Si](C)C", &["C", "[Si]", "(", "C", ")", "C"]),
            ("[C@@H](N)O", &["[C@@H]", "(", "N", ")", "O"]),
            ("C@@C", &["C", "@@", "C"]),
            ("c1cc[nH]c1", &["c", "1", "c", "c", "[nH]", "c", "1"]),
            ("C%12CC%12", &["C", "%12", "C", "C", "%12"]),
            ("N#CC=O", &["N", "#", "C", "C", "=", "O"]),
            ("C/C=C\\C", &["C", "/", "C", "=", "C", "\\", "C"]),
            ("ClBr", &["Cl", "Br"]),
            ("Sc", &["S", "c"]),
        ];
        for (smiles, expected) in cases {
            assert_eq!(split_tokens(smiles).unwrap(), *expected, "{smiles}");
        }
    }

    #[test]
    fn unmatched_paren_is_accepted() {
        assert_eq!(split_tokens("C(").unwrap(), ["C", "("]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(split_tokens("C[NH"), Err(CorpusError::Reject { .. })));
        assert!(matches!(split_tokens("CXC"), Err(CorpusError::Reject { .. })));
        assert!(matches!(split_tokens("C[]C"), Err(CorpusError::Reject { .. })));
        assert!(matches!(split_tokens("C%1"), Err(CorpusError::Reject { .. })));
        assert!(matches!(split_tokens(""), Err(CorpusError::Reject { .. })));
        assert!(matches!(split_tokens("CÖ"), Err(CorpusError::Reject { .. })));
    }

    #[test]
    fn vocab_sizes() {
        assert_eq!(vocab_for(&["CCO"]).len(), 6);
        assert_eq!(vocab_for(&["CCO", "CCN"]).len(), 7);
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = vocab_for(&["CCO", "CCN", "c1ccccc1Cl"]);
        let b = vocab_for(&["c1ccccc1Cl", "CCO", "CCN"]);
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = vocab_for(&["CC(=O)[O-]", "c1ccncc1Br"]);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("C\nO\n").is_err());
    }

    #[test]
    fn empty_vocab_input() {
        assert!(matches!(build_vocab(&["XYZ"]), Err(CorpusError::Empty(_))));
        assert!(matches!(build_vocab::<&str>(&[]), Err(CorpusError::Empty(_))));
    }

    #[test]
    fn detokenize_inverts() {
        let vocab = vocab_for(&["CCO", "CCl"]);
        for s in ["CCO", "CCl"] {
            let seq = tokenize(s, &vocab).unwrap();
            assert_eq!(detokenize(seq.ids(), &vocab), s);
        }
        let unknown = tokenize("CBr", &vocab).unwrap();
        assert_eq!(unknown.ids()[2], UNK);
    }

    #[test]
    fn sequence_invariants() {
        assert!(TokenSequence::from_ids(vec![SOS, 5, EOS], 6).is_ok());
        assert!(TokenSequence::from_ids(vec![SOS, 6, EOS], 6).is_err());
        assert!(TokenSequence::from_ids(vec![5, 5, EOS], 6).is_err());
        assert!(TokenSequence::from_ids(vec![SOS, EOS, 5, EOS], 6).is_err());
        assert!(TokenSequence::from_ids(vec![SOS], 6).is_err());
    }

    #[test]
    fn dedup_and_report() {
        let vocab = vocab_for(&["CCO", "CCN"]);
        let lines = ["CCO", "CCO", "CCN"];
        let (corpus, report) = Corpus::from_lines(&lines, &vocab, 64, "mem").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(report.accepted, 2);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn long_line_is_filtered() {
        let long = "C".repeat(500);
        let vocab = vocab_for(&["CCO"]);
        let lines = [long.as_str(), "CCO"];
        let (_, report) = Corpus::from_lines(&lines, &vocab, 64, "mem").unwrap();
        assert_eq!(report.length_filtered, 1);
        assert_eq!(report.accepted, 1);

        let only = [long.as_str()];
        assert!(matches!(
            Corpus::from_lines(&only, &vocab, 64, "mem"),
            Err(CorpusError::Empty(_))
        ));
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let vocab = vocab_for(&["CCO"]);
        let lines = ["# header", "", "CCO", "  ", "C?O"];
        let (corpus, report) = Corpus::from_lines(&lines, &vocab, 64, "mem").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.lines, 2);
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn report_format_is_key_value() {
        let r = LoadReport {
            lines: 3,
            accepted: 2,
            duplicates: 1,
            rejected: 0,
            length_filtered: 0,
        };
        let text = r.to_string();
        assert!(text.lines().all(|l| l.split_once(": ").is_some()));
        assert!(text.contains("duplicates: 1"));
    }
}
