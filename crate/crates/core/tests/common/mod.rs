//! Shared fixtures for the integration suites: a synthetic book corpus
//! whose vocabulary terms are pairwise far apart in edit distance, OCR-like
//! word corruption, and an index-free linear-scan tf-idf oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinescan::retrieval::{tokenize, BookRecord, RankedHit};

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Pseudo-words with pairwise edit distance >= `min_sep`, so a couple of
/// character edits can never move a word closer to a different vocabulary
/// entry than to its original.
pub fn word_pool(seed: u64, count: usize, min_sep: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<String> = vec!["volume".to_string()];
    while pool.len() < count + 1 {
        let len = rng.random_range(6..=10);
        let candidate: String = (0..len)
            .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
            .collect();
        if pool
            .iter()
            .all(|w| spinescan::editdist::edit_distance_str(w, &candidate) >= min_sep)
        {
            pool.push(candidate);
        }
    }
    pool.remove(0); // "volume" stays reserved for meta fields
    pool
}

pub struct SynthCorpus {
    pub records: Vec<BookRecord>,
    /// Indices of records whose title token sequence is unique.
    pub unique_titles: Vec<usize>,
}

/// `count` book records with 3–5 word titles drawn from a shared pool,
/// author/publisher meta terms and occasional volume numbers.
pub fn synth_corpus(seed: u64, count: usize) -> SynthCorpus {
    let pool = word_pool(seed, 480, 5);
    let (title_pool, rest) = pool.split_at(400);
    let (author_pool, publisher_pool) = rest.split_at(50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let n_words = rng.random_range(3..=5);
        let mut words: Vec<&String> = Vec::with_capacity(n_words);
        while words.len() < n_words {
            let w = &title_pool[rng.random_range(0..title_pool.len())];
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let title = words.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
        let mut meta = vec![
            author_pool[rng.random_range(0..author_pool.len())].clone(),
            publisher_pool[rng.random_range(0..publisher_pool.len())].clone(),
        ];
        if rng.random_bool(0.3) {
            meta.push(format!("volume {}", rng.random_range(1..=9)));
        }
        records.push(BookRecord {
            id: format!("bk-{i:04}"),
            title,
            meta,
            location: if rng.random_bool(0.5) {
                Some(format!("stack {} shelf {}", rng.random_range(1..=20), rng.random_range(1..=8)))
            } else {
                None
            },
        });
    }

    let mut title_counts: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &records {
        *title_counts.entry(tokenize(&rec.title).join(" ")).or_insert(0) += 1;
    }
    let unique_titles = records
        .iter()
        .enumerate()
        .filter(|(_, r)| title_counts[&tokenize(&r.title).join(" ")] == 1)
        .map(|(i, _)| i)
        .collect();

    SynthCorpus { records, unique_titles }
}

/// Applies `edits` random single-character edits (substitute, insert or
/// delete) to a word.
pub fn corrupt_word(word: &str, edits: usize, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    for _ in 0..edits {
        let op = rng.random_range(0..3);
        match op {
            0 if !chars.is_empty() => {
                let pos = rng.random_range(0..chars.len());
                chars[pos] = LETTERS[rng.random_range(0..LETTERS.len())] as char;
            }
            1 => {
                let pos = rng.random_range(0..=chars.len());
                chars.insert(pos, LETTERS[rng.random_range(0..LETTERS.len())] as char);
            }
            _ if !chars.is_empty() => {
                let pos = rng.random_range(0..chars.len());
                chars.remove(pos);
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

/// Index-free cosine ranking: recomputes tf, df and idf straight from the
/// records. Independent oracle for `retrieval::query`.
pub fn linear_scan_rank(records: &[BookRecord], keywords: &[String], k: usize) -> Vec<RankedHit> {
    let doc_count = records.len();
    let doc_terms: Vec<BTreeMap<String, usize>> = records
        .iter()
        .map(|r| {
            let mut counts = BTreeMap::new();
            for tok in tokenize(&r.title) {
                *counts.entry(tok).or_insert(0) += 1;
            }
            for m in &r.meta {
                for tok in tokenize(m) {
                    *counts.entry(tok).or_insert(0) += 1;
                }
            }
            counts
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for terms in &doc_terms {
        for term in terms.keys() {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let idf = |term: &str| -> f64 {
        match df.get(term) {
            Some(&d) => (doc_count as f64 / d as f64).ln(),
            None => 0.0,
        }
    };

    let mut q_counts: BTreeMap<String, usize> = BTreeMap::new();
    for kw in keywords {
        for tok in tokenize(kw) {
            *q_counts.entry(tok).or_insert(0) += 1;
        }
    }
    let q_norm = q_counts
        .iter()
        .map(|(t, &tf)| {
            let w = tf as f64 * idf(t);
            w * w
        })
        .sum::<f64>()
        .sqrt();
    if q_norm == 0.0 {
        return Vec::new();
    }

    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (doc, terms) in doc_terms.iter().enumerate() {
        let d_norm = terms
            .iter()
            .map(|(t, &tf)| {
                let w = tf as f64 * idf(t);
                w * w
            })
            .sum::<f64>()
            .sqrt();
        if d_norm == 0.0 {
            continue;
        }
        let dot: f64 = q_counts
            .iter()
            .map(|(t, &q_tf)| {
                let d_tf = *terms.get(t).unwrap_or(&0);
                q_tf as f64 * idf(t) * d_tf as f64 * idf(t)
            })
            .sum();
        if dot > 0.0 {
            scored.push((doc, dot / (q_norm * d_norm)));
        }
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| records[a.0].id.cmp(&records[b.0].id))
    });
    scored.truncate(k);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (doc, score))| RankedHit { id: records[doc].id.clone(), score, rank: i + 1 })
        .collect()
}

/// Random emission matrix (softmax of uniform logits) for oracle suites.
pub fn random_emissions(
    rng: &mut ChaCha8Rng,
    t_len: usize,
    classes: usize,
) -> spinescan::seq::EmissionMatrix {
    let logits =
        spinescan::mat::Mat::from_fn(t_len, classes, |_, _| rng.random_range(-2.0..2.0));
    spinescan::seq::EmissionMatrix::from_logits(logits)
}

/// Random target without adjacent repeats, always feasible for `max_len`
/// timesteps when `len <= max_len`.
pub fn random_target(rng: &mut ChaCha8Rng, classes: usize, len: usize) -> spinescan::seq::LabelSequence {
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        let mut label = rng.random_range(1..classes);
        while items.last() == Some(&label) {
            label = rng.random_range(1..classes);
        }
        items.push(label);
    }
    spinescan::seq::LabelSequence::new(items)
}
