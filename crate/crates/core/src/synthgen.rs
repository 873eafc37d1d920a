//! Synthetic aligned sequence data: each character of a random target word
//! emits a contiguous run of noisy one-hot feature frames, and the frame
//! extent of every character is tracked so the per-timestep supervision has
//! ground-truth spans to work from. Also provides the length-grouped
//! batching used for mini-batch training.

use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::losses::{CharSpan, CharSpanAnnotation};
use crate::mat::Mat;
use crate::par::*;
use crate::seq::{Alphabet, LabelSequence, SeqError};

/// Frames per character, drawn uniformly; gives variable alignments like
/// real glyph widths.
pub const SPAN_LEN_RANGE: RangeInclusive<usize> = 2..=6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: expected 4 tab-separated fields")]
    BadRecord { line: usize },
    #[error("line {line}: malformed span entry {entry:?}")]
    BadSpan { line: usize, entry: String },
    #[error("line {line}: malformed feature block")]
    BadFeatures { line: usize },
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One generated sample: `T x D` features, the target word, and the
/// character spans (with per-frame receptive fields) that produced it.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub input: Mat,
    pub target: LabelSequence,
    pub spans: CharSpanAnnotation,
    pub noise_level: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Generates `count` samples, deterministically for a fixed seed. Samples
/// are produced in parallel from per-sample derived seeds, so thread count
/// never changes the output.
///
/// Feature frames are D=C-dimensional soft one-hots: the frame of a
/// character holds 1 at that character's class index plus `noise_level`
/// times standard Gaussian noise in every dimension. Targets avoid adjacent
/// repeated labels so the span-induced per-frame labeling always collapses
/// back to the target.
pub fn generate(
    seed: u64,
    alphabet: &Alphabet,
    count: usize,
    length_range: RangeInclusive<usize>,
    noise_level: f64,
) -> Vec<SynthSample> {
    assert!(*length_range.start() >= 1);
    assert!((0.0..1.0).contains(&noise_level));
    let classes = alphabet.class_count();
    assert!(classes >= 2, "alphabet must have at least one label");
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (i as u64)));
            generate_one(&mut rng, classes, &length_range, noise_level)
        })
        .collect()
}

fn generate_one(
    rng: &mut ChaCha8Rng,
    classes: usize,
    length_range: &RangeInclusive<usize>,
    noise_level: f64,
) -> SynthSample {
    let word_len = rng.random_range(length_range.clone());
    let mut labels = Vec::with_capacity(word_len);
    for _ in 0..word_len {
        let mut label = rng.random_range(1..classes);
        while labels.last() == Some(&label) {
            label = rng.random_range(1..classes);
        }
        labels.push(label);
    }
    let span_lens: Vec<usize> = (0..word_len)
        .map(|_| rng.random_range(SPAN_LEN_RANGE))
        .collect();
    let t_len: usize = span_lens.iter().sum();

    let mut spans = Vec::with_capacity(word_len);
    let mut input = Mat::zeros(t_len, classes);
    let mut frame = 0usize;
    for (&label, &span_len) in labels.iter().zip(&span_lens) {
        spans.push(CharSpan {
            label,
            start: frame as f64,
            end: (frame + span_len) as f64,
        });
        for _ in 0..span_len {
            let row = input.row_mut(frame);
            row[label] = 1.0;
            if noise_level > 0.0 {
                for v in row.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *v += noise_level * g;
                }
            }
            frame += 1;
        }
    }

    let receptive_fields = (0..t_len).map(|t| (t as f64, (t + 1) as f64)).collect();
    SynthSample {
        input,
        target: LabelSequence::new(labels),
        spans: CharSpanAnnotation { spans, receptive_fields },
        noise_level,
    }
}

/// Groups sample indices by target length and chunks each group, preserving
/// the original order inside a group. Every batch holds samples of one
/// target length; groups are emitted in ascending length order.
pub fn batch_by_length(samples: &[SynthSample], batch_size: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut lengths: Vec<usize> = samples.iter().map(|s| s.target.len()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut batches = Vec::new();
    for len in lengths {
        let group: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.target.len() == len)
            .map(|(i, _)| i)
            .collect();
        for chunk in group.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches
}

/// One record per line: target string, comma-separated `char:start:end`
/// spans, the noise level, then the feature grid flattened as
/// `T D v11 v12 ...`.
pub fn write_dataset(
    samples: &[SynthSample],
    alphabet: &Alphabet,
    mut writer: impl Write,
) -> Result<(), DatasetError> {
    for sample in samples {
        let target = alphabet.decode(&sample.target)?;
        let spans: Vec<String> = sample
            .spans
            .spans
            .iter()
            .map(|s| {
                let c = alphabet.char_of(s.label).unwrap_or('?');
                format!("{c}:{}:{}", s.start, s.end)
            })
            .collect();
        let mut features = format!("{} {}", sample.input.rows(), sample.input.cols());
        for v in sample.input.data() {
            features.push(' ');
            features.push_str(&v.to_string());
        }
        writeln!(
            writer,
            "{target}\t{}\t{}\t{features}",
            spans.join(","),
            sample.noise_level
        )?;
    }
    Ok(())
}

pub fn read_dataset(
    reader: impl BufRead,
    alphabet: &Alphabet,
) -> Result<Vec<SynthSample>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [target, spans, noise, features] = fields.as_slice() else {
            return Err(DatasetError::BadRecord { line: idx });
        };
        let target = alphabet.encode(target)?;
        let mut span_list = Vec::new();
        for entry in spans.split(',').filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = entry.split(':').collect();
            let [ch, start, end] = parts.as_slice() else {
                return Err(DatasetError::BadSpan { line: idx, entry: entry.to_string() });
            };
            let label = ch
                .chars()
                .next()
                .and_then(|c| alphabet.class_of(c))
                .ok_or_else(|| DatasetError::BadSpan { line: idx, entry: entry.to_string() })?;
            let start: f64 = start
                .parse()
                .map_err(|_| DatasetError::BadSpan { line: idx, entry: entry.to_string() })?;
            let end: f64 = end
                .parse()
                .map_err(|_| DatasetError::BadSpan { line: idx, entry: entry.to_string() })?;
            span_list.push(CharSpan { label, start, end });
        }
        let noise_level: f64 = noise.parse().map_err(|_| DatasetError::BadRecord { line: idx })?;
        let mut tokens = features.split_whitespace();
        let (t_len, d) = match (tokens.next(), tokens.next()) {
            (Some(t), Some(d)) => (
                t.parse::<usize>().map_err(|_| DatasetError::BadFeatures { line: idx })?,
                d.parse::<usize>().map_err(|_| DatasetError::BadFeatures { line: idx })?,
            ),
            _ => return Err(DatasetError::BadFeatures { line: idx }),
        };
        let mut data = Vec::with_capacity(t_len * d);
        for tok in tokens {
            data.push(tok.parse::<f64>().map_err(|_| DatasetError::BadFeatures { line: idx })?);
        }
        if data.len() != t_len * d {
            return Err(DatasetError::BadFeatures { line: idx });
        }
        let receptive_fields = (0..t_len).map(|t| (t as f64, (t + 1) as f64)).collect();
        out.push(SynthSample {
            input: Mat::from_vec(t_len, d, data),
            target,
            spans: CharSpanAnnotation { spans: span_list, receptive_fields },
            noise_level,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::assign_pt_labels;
    use crate::seq::{collapse, Alignment};

    fn alphabet() -> Alphabet {
        Alphabet::from_str("abcd").unwrap()
    }

    #[test]
    fn zero_noise_frames_are_separable() {
        let samples = generate(7, &alphabet(), 20, 2..=4, 0.0);
        for sample in &samples {
            let mut frame = 0;
            for span in &sample.spans.spans {
                let len = (span.end - span.start) as usize;
                for _ in 0..len {
                    let row = sample.input.row(frame);
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    assert_eq!(argmax, span.label);
                    frame += 1;
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_dataset() {
        let a = generate(42, &alphabet(), 10, 2..=5, 0.3);
        let b = generate(42, &alphabet(), 10, 2..=5, 0.3);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.target, y.target);
        }
    }

    #[test]
    fn span_lengths_tile_the_input() {
        for sample in generate(3, &alphabet(), 25, 1..=6, 0.2) {
            let total: f64 = sample.spans.spans.iter().map(|s| s.end - s.start).sum();
            assert_eq!(total as usize, sample.input.rows());
            // spans are ordered and non-overlapping
            for w in sample.spans.spans.windows(2) {
                assert!(w[0].end <= w[1].start);
            }
        }
    }

    #[test]
    fn zero_noise_pt_labels_collapse_to_target() {
        for sample in generate(11, &alphabet(), 30, 1..=5, 0.0) {
            let pt = assign_pt_labels(&sample.spans);
            let collapsed = collapse(&Alignment::new(pt.labels().to_vec()));
            assert_eq!(collapsed, sample.target);
        }
    }

    #[test]
    fn batches_group_by_target_length() {
        let samples = generate(5, &alphabet(), 40, 1..=4, 0.1);
        let batches = batch_by_length(&samples, 8);
        let mut seen = vec![false; samples.len()];
        for batch in &batches {
            assert!(!batch.is_empty() && batch.len() <= 8);
            let len = samples[batch[0]].target.len();
            for &i in batch {
                assert_eq!(samples[i].target.len(), len);
                assert!(!seen[i], "sample {i} appears twice");
                seen[i] = true;
            }
            // original order preserved within the batch
            for w in batch.windows(2) {
                assert!(w[0] < w[1]);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_sample_single_batch() {
        let samples = generate(9, &alphabet(), 1, 3..=3, 0.0);
        let batches = batch_by_length(&samples, 4);
        assert_eq!(batches, vec![vec![0]]);
    }

    #[test]
    fn dataset_serialization_round_trips_and_is_stable() {
        let alphabet = alphabet();
        let samples = generate(21, &alphabet, 8, 1..=4, 0.25);
        let mut buf_a = Vec::new();
        write_dataset(&samples, &alphabet, &mut buf_a).unwrap();
        let again = generate(21, &alphabet, 8, 1..=4, 0.25);
        let mut buf_b = Vec::new();
        write_dataset(&again, &alphabet, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b, "same seed must serialize byte-identically");

        let back = read_dataset(buf_a.as_slice(), &alphabet).unwrap();
        assert_eq!(back.len(), samples.len());
        for (x, y) in samples.iter().zip(&back) {
            assert_eq!(x.target, y.target);
            assert_eq!(x.input, y.input);
            assert_eq!(x.spans, y.spans);
        }
    }
}
