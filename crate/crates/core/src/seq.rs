//! Alphabet, label-sequence and alignment types shared by the loss and
//! decoding code, together with the collapse mapping that turns a
//! per-timestep path into a label sequence.
//!
//! Class index 0 is always the blank symbol; the characters of an
//! [`Alphabet`] occupy indices `1..=labels.len()`. This is the wire
//! convention for every emission matrix and checkpoint in the crate.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::mat::{log_softmax_rows, softmax_rows, GridParseError, Mat};

/// Class index of the blank symbol.
pub const BLANK: usize = 0;

/// Guard for the brute-force alignment enumeration: instances where the
/// number of candidate paths `C^T` exceeds this are refused.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("alphabet labels must be unique, found duplicate {0:?}")]
    DuplicateLabel(char),
    #[error("character {0:?} is not in the alphabet")]
    UnknownChar(char),
    #[error("label index {index} out of range for alphabet with {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },
    #[error("enumeration of {paths} paths exceeds cap {cap}")]
    EnumerationCapExceeded { paths: u128, cap: u128 },
    #[error("emission row {row} sums to {sum}, expected 1 within 1e-9")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("emission probability at ({row}, {col}) is {value}, outside [0, 1]")]
    ProbOutOfRange { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridParseError),
}

/// Ordered set of non-blank character symbols. Blank is implicit at index 0,
/// so the total class count is `labels.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<char>,
}

impl Alphabet {
    pub fn new(labels: impl IntoIterator<Item = char>) -> Result<Self, SeqError> {
        let labels: Vec<char> = labels.into_iter().collect();
        for (i, &c) in labels.iter().enumerate() {
            if labels[..i].contains(&c) {
                return Err(SeqError::DuplicateLabel(c));
            }
        }
        Ok(Alphabet { labels })
    }

    pub fn from_str(labels: &str) -> Result<Self, SeqError> {
        Self::new(labels.chars())
    }

    /// Total class count including blank.
    pub fn class_count(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn labels(&self) -> &[char] {
        &self.labels
    }

    /// Class index of a character (1-based; blank is 0).
    pub fn class_of(&self, c: char) -> Option<usize> {
        self.labels.iter().position(|&l| l == c).map(|i| i + 1)
    }

    /// Character for a non-blank class index.
    pub fn char_of(&self, class: usize) -> Option<char> {
        if class == BLANK {
            None
        } else {
            self.labels.get(class - 1).copied()
        }
    }

    pub fn encode(&self, text: &str) -> Result<LabelSequence, SeqError> {
        let mut items = Vec::with_capacity(text.chars().count());
        for c in text.chars() {
            items.push(self.class_of(c).ok_or(SeqError::UnknownChar(c))?);
        }
        Ok(LabelSequence::new(items))
    }

    pub fn decode(&self, seq: &LabelSequence) -> Result<String, SeqError> {
        seq.items()
            .iter()
            .map(|&i| {
                self.char_of(i).ok_or(SeqError::LabelOutOfRange {
                    index: i,
                    classes: self.class_count(),
                })
            })
            .collect()
    }

    pub fn check_labels(&self, seq: &LabelSequence) -> Result<(), SeqError> {
        let classes = self.class_count();
        for &i in seq.items() {
            if i == BLANK || i >= classes {
                return Err(SeqError::LabelOutOfRange { index: i, classes });
            }
        }
        Ok(())
    }
}

/// A target word: non-blank label indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    /// Panics if any item is the blank index; blanks only occur in alignments.
    pub fn new(items: Vec<usize>) -> Self {
        assert!(items.iter().all(|&i| i != BLANK), "blank label in LabelSequence");
        LabelSequence(items)
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of adjacent equal pairs; the minimum feasible alignment length
    /// is `len() + adjacent_repeats()`.
    pub fn adjacent_repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub fn min_alignment_len(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

/// A per-timestep label path over the blank-extended alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Alignment(Vec<usize>);

impl Alignment {
    pub fn new(items: Vec<usize>) -> Self {
        Alignment(items)
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The collapse mapping: merge adjacent repeated labels, then delete blanks.
/// The order matters; `(a, -, a)` keeps both `a`s while `(a, a)` keeps one.
pub fn collapse(alignment: &Alignment) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in alignment.items() {
        if Some(label) != prev && label != BLANK {
            out.push(label);
        }
        prev = Some(label);
    }
    LabelSequence(out)
}

/// Exhaustively enumerates every alignment of length `len` that collapses to
/// `target`. Brute-force oracle; refuses when `C^len` exceeds
/// [`DEFAULT_ENUMERATION_CAP`].
pub fn enumerate_inverse(
    alphabet: &Alphabet,
    target: &LabelSequence,
    len: usize,
) -> Result<Vec<Alignment>, SeqError> {
    enumerate_inverse_with_cap(alphabet, target, len, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_inverse_with_cap(
    alphabet: &Alphabet,
    target: &LabelSequence,
    len: usize,
    cap: u128,
) -> Result<Vec<Alignment>, SeqError> {
    let classes = alphabet.class_count();
    let paths = (classes as u128)
        .checked_pow(len as u32)
        .unwrap_or(u128::MAX);
    if paths > cap {
        return Err(SeqError::EnumerationCapExceeded { paths, cap });
    }
    let mut out = Vec::new();
    let mut current = vec![BLANK; len];
    loop {
        let candidate = Alignment::new(current.clone());
        if collapse(&candidate) == *target {
            out.push(candidate);
        }
        // odometer increment in base `classes`
        let mut pos = len;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < classes {
                break;
            }
            current[pos] = 0;
        }
    }
}

/// Per-timestep label distributions: a `T x C` matrix whose rows are
/// probability distributions over the blank-extended classes. Optionally
/// carries the pre-softmax scores it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionMatrix {
    probs: Mat,
    logits: Option<Mat>,
}

impl EmissionMatrix {
    /// Validates that every row is a distribution (sums to 1 within 1e-9,
    /// entries in `[0, 1]`).
    pub fn from_probs(probs: Mat) -> Result<Self, SeqError> {
        for r in 0..probs.rows() {
            let mut sum = 0.0;
            for (c, &v) in probs.row(r).iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(SeqError::ProbOutOfRange { row: r, col: c, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SeqError::RowNotNormalized { row: r, sum });
            }
        }
        Ok(EmissionMatrix { probs, logits: None })
    }

    /// Normalizes pre-softmax scores row-wise.
    pub fn from_logits(logits: Mat) -> Self {
        let probs = softmax_rows(&logits);
        EmissionMatrix { probs, logits: Some(logits) }
    }

    /// Sequence length T.
    pub fn t_len(&self) -> usize {
        self.probs.rows()
    }

    /// Class count C (including blank).
    pub fn class_count(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn logits(&self) -> Option<&Mat> {
        self.logits.as_ref()
    }

    pub fn prob(&self, t: usize, class: usize) -> f64 {
        self.probs.get(t, class)
    }

    /// Element-wise log of the probabilities (log-softmax of the logits when
    /// available, which avoids `ln(0)` for saturated rows).
    pub fn log_probs(&self) -> Mat {
        match &self.logits {
            Some(logits) => log_softmax_rows(logits),
            None => self.probs.map(f64::ln),
        }
    }

    /// Reads the "T C" + rows text grid format used by the CLI.
    pub fn read(reader: impl BufRead) -> Result<Self, SeqError> {
        let grid = Mat::read_grid(reader)?;
        Self::from_probs(grid)
    }

    pub fn write(&self, writer: impl Write) -> std::io::Result<()> {
        self.probs.write_grid(writer)
    }
}
