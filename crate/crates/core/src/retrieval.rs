//! Book inventory index and query engine: tf-idf ranking over title and
//! meta terms, nearest-neighbor dictionary correction of noisy recognition
//! output, and the retrieval metrics (precision/recall, recall@k, MRR).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::editdist::edit_distance_str;
use crate::par::*;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate book ids: {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("query truth id {0:?} is not in the index")]
    UnknownTruthId(String),
    #[error("record on line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Indexed book metadata. `meta` carries author/publisher/volume strings;
/// `location` is a shelf or stack descriptor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookRecord {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub meta: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DocEntry {
    id: String,
    /// L2 norm of the document's tf-idf vector.
    norm: f64,
}

/// Inverted index with tf-idf weights: `tf` is the raw count, `idf` is
/// `ln(N / df)` with no smoothing, and document vectors are L2-normalized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    docs: Vec<DocEntry>,
    /// Total term occurrences across the corpus, for correction tie-breaks.
    collection_freq: BTreeMap<String, u64>,
}

/// Lowercases, strips punctuation to token boundaries, splits on
/// whitespace. Digits are kept; volume numbers discriminate between
/// otherwise identical titles.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision_at_1: f64,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub f_score: f64,
    pub mrr: f64,
    pub query_count: usize,
    /// Queries with a nonempty result list (the precision denominator).
    pub declared_count: usize,
}

impl InvertedIndex {
    /// Builds the index from records; fails on duplicate ids, listing the
    /// offenders.
    pub fn build(records: &[BookRecord]) -> Result<Self, RetrievalError> {
        let mut seen = BTreeMap::new();
        let mut dupes = Vec::new();
        for rec in records {
            if let Some(count) = seen.insert(rec.id.clone(), 1u32) {
                let _ = count;
                dupes.push(rec.id.clone());
            }
        }
        if !dupes.is_empty() {
            dupes.sort();
            dupes.dedup();
            return Err(RetrievalError::DuplicateIds(dupes));
        }

        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut collection_freq: BTreeMap<String, u64> = BTreeMap::new();
        let mut term_counts: Vec<BTreeMap<String, u32>> = Vec::with_capacity(records.len());
        for (doc, rec) in records.iter().enumerate() {
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in tokenize(&rec.title) {
                *counts.entry(token).or_insert(0) += 1;
            }
            for meta in &rec.meta {
                for token in tokenize(meta) {
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
            for (term, &tf) in &counts {
                postings.entry(term.clone()).or_default().push((doc as u32, tf));
                *collection_freq.entry(term.clone()).or_insert(0) += tf as u64;
            }
            term_counts.push(counts);
        }

        let doc_count = records.len();
        let mut docs: Vec<DocEntry> = records
            .iter()
            .map(|r| DocEntry { id: r.id.clone(), norm: 0.0 })
            .collect();
        for (doc, counts) in term_counts.iter().enumerate() {
            let mut norm_sq = 0.0;
            for (term, &tf) in counts {
                let df = postings[term].len();
                let idf = (doc_count as f64 / df as f64).ln();
                let w = tf as f64 * idf;
                norm_sq += w * w;
            }
            docs[doc].norm = norm_sq.sqrt();
        }

        Ok(InvertedIndex { postings, docs, collection_freq })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.docs.iter().any(|d| d.id == id)
    }

    pub fn idf(&self, term: &str) -> f64 {
        match self.postings.get(term) {
            Some(posting) => (self.doc_count() as f64 / posting.len() as f64).ln(),
            None => 0.0,
        }
    }

    pub fn write_jsonl_records(records: &[BookRecord], mut writer: impl Write) -> Result<(), RetrievalError> {
        for rec in records {
            let line = serde_json::to_string(rec)
                .map_err(|e| RetrievalError::BadRecord { line: 0, message: e.to_string() })?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    /// Reads one JSON `BookRecord` per line.
    pub fn read_jsonl_records(reader: impl BufRead) -> Result<Vec<BookRecord>, RetrievalError> {
        let mut out = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BookRecord = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::BadRecord { line: idx + 1, message: e.to_string() })?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Nearest vocabulary term within `max_distance` edits; ties prefer the
/// higher collection frequency, then the lexicographically smaller term.
/// Returns the token unchanged when nothing is close enough.
pub fn dictionary_correct(token: &str, index: &InvertedIndex, max_distance: usize) -> String {
    let token_lc = token.to_lowercase();
    if index.postings.contains_key(&token_lc) {
        return token_lc;
    }
    let token_len = token_lc.chars().count();
    let mut best: Option<(usize, u64, &str)> = None;
    for (term, &cf) in &index.collection_freq {
        let term_len = term.chars().count();
        if term_len.abs_diff(token_len) > max_distance {
            continue;
        }
        let d = edit_distance_str(&token_lc, term);
        if d > max_distance {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bcf, _)) => d < bd || (d == bd && cf > bcf),
        };
        if better {
            best = Some((d, cf, term));
        }
    }
    match best {
        Some((_, _, term)) => term.to_string(),
        None => token.to_string(),
    }
}

/// Corrects every keyword against the index vocabulary; the query-side
/// refinement step of the retrieval pipeline.
pub fn correct_keywords(keywords: &[String], index: &InvertedIndex, max_distance: usize) -> Vec<String> {
    keywords
        .iter()
        .map(|k| dictionary_correct(k, index, max_distance))
        .collect()
}

/// Cosine ranking of documents against the tf-idf query vector. Documents
/// with zero score are dropped, so a query sharing no terms with the corpus
/// returns an empty list. Score ties break by ascending id.
pub fn query(index: &InvertedIndex, keywords: &[String], k: usize) -> Vec<RankedHit> {
    assert!(k >= 1);
    let mut q_counts: BTreeMap<String, u32> = BTreeMap::new();
    for kw in keywords {
        for token in tokenize(kw) {
            *q_counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut q_norm_sq = 0.0;
    let mut scores: Vec<f64> = vec![0.0; index.doc_count()];
    for (term, &tf) in &q_counts {
        let idf = index.idf(term);
        if idf == 0.0 {
            continue;
        }
        let q_w = tf as f64 * idf;
        q_norm_sq += q_w * q_w;
        if let Some(posting) = index.postings.get(term) {
            for &(doc, doc_tf) in posting {
                scores[doc as usize] += q_w * doc_tf as f64 * idf;
            }
        }
    }
    if q_norm_sq == 0.0 {
        return Vec::new();
    }
    let q_norm = q_norm_sq.sqrt();
    let mut hits: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(doc, s)| s > 0.0 && index.docs[doc].norm > 0.0)
        .map(|(doc, s)| (doc, s / (q_norm * index.docs[doc].norm)))
        .collect();
    hits.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.docs[a.0].id.cmp(&index.docs[b.0].id))
    });
    hits.truncate(k);
    hits.into_iter()
        .enumerate()
        .map(|(i, (doc, score))| RankedHit {
            id: index.docs[doc].id.clone(),
            score,
            rank: i + 1,
        })
        .collect()
}

/// A labeled evaluation query: keywords plus the id of the one relevant
/// book.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalQuery {
    pub keywords: Vec<String>,
    pub truth_id: String,
}

/// Runs every query against the full ranking and aggregates the metrics:
/// precision@1 over declared (nonempty-result) queries, recall@k over all
/// queries, the F-score of those two, and the mean reciprocal rank with
/// RR = 0 for queries whose truth never appears.
pub fn evaluate(
    index: &InvertedIndex,
    queries: &[EvalQuery],
    ks: &[usize],
) -> Result<RetrievalMetrics, RetrievalError> {
    for q in queries {
        if !index.contains_id(&q.truth_id) {
            return Err(RetrievalError::UnknownTruthId(q.truth_id.clone()));
        }
    }
    let full_k = index.doc_count().max(1);
    let ranks: Vec<(bool, Option<usize>)> = queries
        .par_iter()
        .map(|q| {
            let hits = query(index, &q.keywords, full_k);
            let declared = !hits.is_empty();
            let rank = hits.iter().find(|h| h.id == q.truth_id).map(|h| h.rank);
            (declared, rank)
        })
        .collect();

    let total = queries.len();
    let declared = ranks.iter().filter(|(d, _)| *d).count();
    let correct_at_1 = ranks.iter().filter(|(_, r)| *r == Some(1)).count();
    let precision_at_1 = if declared > 0 { correct_at_1 as f64 / declared as f64 } else { 0.0 };
    let recall_at = |k: usize| -> f64 {
        if total == 0 {
            return 0.0;
        }
        ranks.iter().filter(|(_, r)| matches!(r, Some(rank) if *rank <= k)).count() as f64
            / total as f64
    };
    let recall_at_k: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, recall_at(k))).collect();
    let recall_1 = recall_at(1);
    let f_score = if precision_at_1 + recall_1 > 0.0 {
        2.0 * precision_at_1 * recall_1 / (precision_at_1 + recall_1)
    } else {
        0.0
    };
    let mrr = if total > 0 {
        ranks
            .iter()
            .map(|(_, r)| r.map_or(0.0, |rank| 1.0 / rank as f64))
            .sum::<f64>()
            / total as f64
    } else {
        0.0
    };
    Ok(RetrievalMetrics {
        precision_at_1,
        recall_at_k,
        f_score,
        mrr,
        query_count: total,
        declared_count: declared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, title: &str, meta: &[&str]) -> BookRecord {
        BookRecord {
            id: id.to_string(),
            title: title.to_string(),
            meta: meta.iter().map(|s| s.to_string()).collect(),
            location: None,
        }
    }

    fn kw(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_strips_punctuation_and_keeps_digits() {
        assert_eq!(
            tokenize("Advanced TCP/IP, Volume 2!"),
            vec!["advanced", "tcp", "ip", "volume", "2"]
        );
    }

    #[test]
    fn idf_degenerates_to_zero_for_shared_terms() {
        let idx = InvertedIndex::build(&[
            record("a", "rust in action", &[]),
            record("b", "rust in action", &[]),
        ])
        .unwrap();
        assert_eq!(idx.idf("rust"), 0.0);
        // every score is zero, so the result list is empty
        assert!(query(&idx, &kw(&["rust", "action"]), 5).is_empty());
    }

    #[test]
    fn single_document_has_zero_idf() {
        let idx = InvertedIndex::build(&[record("a", "calculus", &[])]).unwrap();
        assert_eq!(idx.idf("calculus"), 0.0);
    }

    #[test]
    fn idf_is_ln_n_over_df() {
        let idx = InvertedIndex::build(&[
            record("a", "signal processing", &[]),
            record("b", "signal theory", &[]),
            record("c", "organic chemistry", &[]),
        ])
        .unwrap();
        assert!((idx.idf("processing") - 3f64.ln()).abs() < 1e-12);
        assert!((idx.idf("signal") - (3f64 / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let err = InvertedIndex::build(&[
            record("x", "one", &[]),
            record("x", "two", &[]),
            record("y", "three", &[]),
        ])
        .unwrap_err();
        match err {
            RetrievalError::DuplicateIds(ids) => assert_eq!(ids, vec!["x".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn exact_title_ranks_first() {
        let idx = InvertedIndex::build(&[
            record("1", "compilers principles techniques", &["aho"]),
            record("2", "operating system concepts", &["silberschatz"]),
            record("3", "database system concepts", &["korth"]),
        ])
        .unwrap();
        let hits = query(&idx, &kw(&["operating", "system", "concepts"]), 3);
        assert_eq!(hits[0].id, "2");
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn no_vocabulary_overlap_is_empty() {
        let idx = InvertedIndex::build(&[record("1", "linear algebra", &[])]).unwrap();
        assert!(query(&idx, &kw(&["quantum", "field"]), 5).is_empty());
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let idx = InvertedIndex::build(&[
            record("zz", "unique topic", &[]),
            record("aa", "unique topic", &[]),
            record("mm", "another thing entirely", &[]),
        ])
        .unwrap();
        let hits = query(&idx, &kw(&["unique", "topic"]), 3);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].id, "aa");
        assert_eq!(hits[1].id, "zz");
        assert!((hits[0].score - hits[1].score).abs() < 1e-12);
    }

    #[test]
    fn dictionary_correct_fixes_ocr_noise() {
        let idx = InvertedIndex::build(&[
            record("1", "engineering mathematics", &[]),
            record("2", "civil engineering handbook", &[]),
        ])
        .unwrap();
        assert_eq!(dictionary_correct("engineerim", &idx, 3), "engineering");
        assert_eq!(dictionary_correct("engineering", &idx, 3), "engineering");
        // far beyond max_distance stays unchanged
        assert_eq!(dictionary_correct("zzzzzzzzzz", &idx, 2), "zzzzzzzzzz");
    }

    #[test]
    fn dictionary_correct_tie_prefers_frequent_term() {
        // "cat" and "car" are both 1 edit from "caw"; "car" occurs more often
        let idx = InvertedIndex::build(&[
            record("1", "the car manual", &["car repairs"]),
            record("2", "a cat story", &[]),
        ])
        .unwrap();
        assert_eq!(dictionary_correct("caw", &idx, 2), "car");
    }

    #[test]
    fn evaluate_hand_computed_mrr() {
        // truth at rank 1 for one query, rank 2 for the other -> MRR 0.75
        let idx = InvertedIndex::build(&[
            record("a", "alpha beta gamma", &[]),
            record("b", "alpha beta delta", &[]),
            record("c", "unrelated words here", &[]),
        ])
        .unwrap();
        let queries = vec![
            EvalQuery { keywords: kw(&["unrelated", "words", "here"]), truth_id: "c".into() },
            // shares "alpha beta" with both a and b; "delta" favors b, truth a sits at rank 2
            EvalQuery { keywords: kw(&["alpha", "beta", "delta"]), truth_id: "a".into() },
        ];
        let metrics = evaluate(&idx, &queries, &[1, 2]).unwrap();
        assert!((metrics.mrr - 0.75).abs() < 1e-12);
        assert!((metrics.recall_at_k[&1] - 0.5).abs() < 1e-12);
        assert!((metrics.recall_at_k[&2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_perfect_run() {
        let idx = InvertedIndex::build(&[
            record("a", "first unique title", &[]),
            record("b", "second distinct name", &[]),
        ])
        .unwrap();
        let queries = vec![
            EvalQuery { keywords: kw(&["first", "unique", "title"]), truth_id: "a".into() },
            EvalQuery { keywords: kw(&["second", "distinct", "name"]), truth_id: "b".into() },
        ];
        let metrics = evaluate(&idx, &queries, &[1]).unwrap();
        assert_eq!(metrics.precision_at_1, 1.0);
        assert_eq!(metrics.recall_at_k[&1], 1.0);
        assert_eq!(metrics.mrr, 1.0);
        assert_eq!(metrics.f_score, 1.0);
    }

    #[test]
    fn evaluate_rejects_unknown_truth() {
        let idx = InvertedIndex::build(&[record("a", "something", &[])]).unwrap();
        let queries = vec![EvalQuery { keywords: kw(&["something"]), truth_id: "nope".into() }];
        assert!(matches!(
            evaluate(&idx, &queries, &[1]),
            Err(RetrievalError::UnknownTruthId(_))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            BookRecord {
                id: "isbn-1".into(),
                title: "Numerical Recipes".into(),
                meta: vec!["press".into(), "3rd".into()],
                location: Some("stack 4".into()),
            },
            record("isbn-2", "Pattern Recognition", &["bishop"]),
        ];
        let mut buf = Vec::new();
        InvertedIndex::write_jsonl_records(&records, &mut buf).unwrap();
        let back = InvertedIndex::read_jsonl_records(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }
}
