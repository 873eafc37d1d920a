//! Best-path decoding and prefix beam search over emission matrices.

use std::collections::HashMap;

use crate::mat::lse2;
use crate::seq::{collapse, Alignment, EmissionMatrix, LabelSequence, BLANK};

/// Decoded sequence with its log score. For best-path decoding the score is
/// the log-probability of the single best path; for beam search it is the
/// total probability of every path collapsing to the sequence.
#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub sequence: LabelSequence,
    pub log_score: f64,
    /// Remaining beam entries ranked by descending score; empty for
    /// best-path decoding.
    pub alternates: Vec<(LabelSequence, f64)>,
}

/// Per-timestep argmax followed by the collapse mapping. Ties go to the
/// lowest class index, so blank wins blank/non-blank ties; the
/// decoding-penalty loss depends on this being deterministic.
pub fn best_path(emissions: &EmissionMatrix) -> DecodeResult {
    let mut path = Vec::with_capacity(emissions.t_len());
    let mut log_score = 0.0;
    for t in 0..emissions.t_len() {
        let row = emissions.probs().row(t);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        log_score += row[best].ln();
        path.push(best);
    }
    DecodeResult {
        sequence: collapse(&Alignment::new(path)),
        log_score,
        alternates: Vec::new(),
    }
}

#[derive(Clone, Copy)]
struct PrefixMass {
    // log-probability of all paths collapsing to the prefix that end in blank
    blank: f64,
    // ... and that end in the prefix's last label
    non_blank: f64,
}

impl PrefixMass {
    fn total(&self) -> f64 {
        lse2(self.blank, self.non_blank)
    }
}

/// Prefix beam search: tracks collapsed prefixes with separate blank and
/// non-blank path masses, merging paths that collapse to the same prefix,
/// and prunes to the `beam_width` prefixes with the largest total mass.
///
/// With a beam wide enough to hold every reachable prefix the search is
/// exact: the returned score equals the full CTC probability of the
/// sequence.
pub fn beam_search(emissions: &EmissionMatrix, beam_width: usize) -> DecodeResult {
    assert!(beam_width >= 1, "beam width must be at least 1");
    let t_len = emissions.t_len();
    let classes = emissions.class_count();

    let mut beam: Vec<(Vec<usize>, PrefixMass)> = vec![(
        Vec::new(),
        PrefixMass { blank: 0.0, non_blank: f64::NEG_INFINITY },
    )];

    let mut next: HashMap<Vec<usize>, PrefixMass> = HashMap::new();
    for t in 0..t_len {
        next.clear();
        let row = emissions.probs().row(t);
        for (prefix, mass) in &beam {
            let total = mass.total();
            // extend by blank: prefix unchanged, mass moves to the blank slot
            let p_blank = row[BLANK].ln();
            merge(&mut next, prefix.clone(), p_blank + total, f64::NEG_INFINITY);

            for label in 1..classes {
                let p = row[label].ln();
                if Some(&label) == prefix.last() {
                    // repeated label: staying on the same prefix only extends
                    // paths that end in that label ...
                    merge(&mut next, prefix.clone(), f64::NEG_INFINITY, p + mass.non_blank);
                    // ... while paths ending in blank start a new occurrence
                    let mut grown = prefix.clone();
                    grown.push(label);
                    merge(&mut next, grown, f64::NEG_INFINITY, p + mass.blank);
                } else {
                    let mut grown = prefix.clone();
                    grown.push(label);
                    merge(&mut next, grown, f64::NEG_INFINITY, p + total);
                }
            }
        }
        beam = next.drain().collect();
        // deterministic order: by total mass descending, then prefix
        beam.sort_by(|a, b| {
            b.1.total()
                .partial_cmp(&a.1.total())
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        beam.truncate(beam_width);
    }

    let mut ranked: Vec<(LabelSequence, f64)> = beam
        .into_iter()
        .map(|(prefix, mass)| (LabelSequence::new(prefix), mass.total()))
        .collect();
    let (sequence, log_score) = ranked.remove(0);
    DecodeResult { sequence, log_score, alternates: ranked }
}

fn merge(next: &mut HashMap<Vec<usize>, PrefixMass>, prefix: Vec<usize>, blank: f64, non_blank: f64) {
    let entry = next.entry(prefix).or_insert(PrefixMass {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    });
    entry.blank = lse2(entry.blank, blank);
    entry.non_blank = lse2(entry.non_blank, non_blank);
}
