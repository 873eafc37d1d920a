//! Single command-line entry point wiring all library modules: loss
//! evaluation, gradient checking, decoding, training-curve reproduction,
//! segmentation, indexing, querying and retrieval evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spinescan::gradcheck::{self, CheckKind};
use spinescan::model::SeqModel;
use spinescan::retrieval::{self, EvalQuery, InvertedIndex};
use spinescan::seq::{Alphabet, EmissionMatrix};
use spinescan::train::{self, LossKind, TrainConfig};
use spinescan::{decode, segment, synthgen};

const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";

#[derive(Parser)]
#[command(name = "spinescan", version, about = "Book-spine reading toolkit")]
struct Cli {
    /// Seed for every randomized subcommand.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecodeMethod {
    Bestpath,
    Beam,
}

#[derive(Subcommand)]
enum Command {
    /// Print the CTC loss of an emission matrix against a target string.
    CtcLoss {
        /// Emission matrix in the "T C" + rows text grid format.
        #[arg(long)]
        emissions: PathBuf,
        /// Target word over the alphabet.
        #[arg(long)]
        target: String,
        /// Non-blank characters, in class order (blank is class 0).
        #[arg(long, default_value = DEFAULT_ALPHABET)]
        alphabet: String,
    },
    /// Print the max relative gradient error over random instances.
    Gradcheck {
        /// Loss to check: ctc, pt, combined or wctc.
        #[arg(long, default_value = "ctc")]
        loss: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Check end-to-end through the sequence model instead of at the
        /// logits level.
        #[arg(long)]
        end_to_end: bool,
    },
    /// Decode an emission matrix to a string.
    Decode {
        #[arg(long)]
        emissions: PathBuf,
        #[arg(long, value_enum, default_value_t = DecodeMethod::Bestpath)]
        method: DecodeMethod,
        #[arg(long, default_value_t = 16)]
        beam_width: usize,
        #[arg(long, default_value = DEFAULT_ALPHABET)]
        alphabet: String,
    },
    /// Train the sequence model on the synthetic task and write the curve
    /// CSV (epoch, ctc, pt, lambda, wctc, val_ctc, val_blank_frac).
    Train {
        /// Training objective: ctc, ctc_pt or wctc_pt.
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train_count: usize,
        #[arg(long, default_value_t = 500)]
        val_count: usize,
        /// Non-blank characters of the synthetic alphabet.
        #[arg(long, default_value = "abcdefgh")]
        alphabet: String,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        /// Initial per-timestep weight; balanced on the first batch when
        /// omitted.
        #[arg(long)]
        lambda0: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        lambda_decay: f64,
        /// Warm-up epochs before WCTC activates (wctc_pt only).
        #[arg(long, default_value_t = 2)]
        switch_epoch: usize,
        /// Word length range of the synthetic task, inclusive.
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        /// Also save the trained model checkpoint.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Split a saliency map into spine boundaries.
    Segment {
        /// Saliency grid in the "H W" + rows text format, values in [0, 1].
        #[arg(long)]
        saliency: PathBuf,
        /// Output JSON array of boundary column indices.
        #[arg(long)]
        out: PathBuf,
        /// NMS window in columns; defaults to W / 50.
        #[arg(long)]
        nms_window: Option<usize>,
        #[arg(long, default_value_t = 0.6)]
        min_gap_score: f64,
    },
    /// Build a tf-idf index from a JSON-lines book corpus.
    Index {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query an index with keywords.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Whitespace-separated keywords.
        #[arg(long)]
        q: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Skip the dictionary correction of query tokens.
        #[arg(long)]
        no_correct: bool,
    },
    /// Evaluate retrieval metrics over a JSON-lines query file.
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// One {"keywords": [...], "truth_id": "..."} object per line.
        #[arg(long)]
        queries: PathBuf,
        /// Comma-separated recall@k cutoffs.
        #[arg(long, default_value = "1,5")]
        ks: String,
        /// Apply dictionary correction to query keywords before ranking.
        #[arg(long)]
        correct: bool,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own message (help/version go to stdout)
            let _ = err.print();
            return if err.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn read_emissions(path: &PathBuf) -> Result<EmissionMatrix> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EmissionMatrix::read(BufReader::new(file)).context("parsing emission matrix")
}

fn alphabet_for(em: &EmissionMatrix, alphabet: &str) -> Result<Alphabet> {
    let alphabet = Alphabet::from_str(alphabet)?;
    if alphabet.class_count() != em.class_count() {
        bail!(
            "emission matrix has {} classes but the alphabet implies {} (labels + blank)",
            em.class_count(),
            alphabet.class_count()
        );
    }
    Ok(alphabet)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CtcLoss { emissions, target, alphabet } => {
            let em = read_emissions(&emissions)?;
            let alphabet = alphabet_for(&em, &alphabet)?;
            let target = alphabet.encode(&target)?;
            let outcome = spinescan::ctc::log_prob(&em, &target);
            if !outcome.feasible {
                bail!("target does not fit in {} timesteps", em.t_len());
            }
            println!("{}", -outcome.value);
        }
        Command::Gradcheck { loss, trials, end_to_end } => {
            let kind: CheckKind = loss.parse().map_err(anyhow::Error::msg)?;
            let err = if end_to_end {
                gradcheck::random_model_suite(kind, trials, cli.seed, gradcheck::DEFAULT_STEP)
            } else {
                gradcheck::random_logits_suite(kind, trials, cli.seed, gradcheck::DEFAULT_STEP)
            };
            println!("{err:e}");
        }
        Command::Decode { emissions, method, beam_width, alphabet } => {
            let em = read_emissions(&emissions)?;
            let alphabet = alphabet_for(&em, &alphabet)?;
            let result = match method {
                DecodeMethod::Bestpath => decode::best_path(&em),
                DecodeMethod::Beam => decode::beam_search(&em, beam_width),
            };
            println!("{}", alphabet.decode(&result.sequence)?);
        }
        Command::Train {
            loss,
            epochs,
            out,
            train_count,
            val_count,
            alphabet,
            noise,
            batch_size,
            hidden,
            lambda0,
            lambda_decay,
            switch_epoch,
            min_len,
            max_len,
            save_model,
        } => {
            let loss_kind: LossKind = loss.parse().map_err(anyhow::Error::msg)?;
            let alphabet = Alphabet::from_str(&alphabet)?;
            if min_len < 1 || max_len < min_len {
                bail!("invalid length range {min_len}..={max_len}");
            }
            let train_set =
                synthgen::generate(cli.seed, &alphabet, train_count, min_len..=max_len, noise);
            let val_set = synthgen::generate(
                cli.seed.wrapping_add(1),
                &alphabet,
                val_count,
                min_len..=max_len,
                noise,
            );
            let config = TrainConfig {
                loss_kind,
                lambda0,
                lambda_decay,
                wctc_switch_epoch: switch_epoch,
                batch_size,
                epochs,
                seed: cli.seed,
                hidden_dim: hidden,
            };
            let classes = alphabet.class_count();
            let mut model = SeqModel::new(classes, config.hidden_dim, classes, config.seed);
            let curve = train::train(&mut model, &train_set, &val_set, &config)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            curve.write_csv(BufWriter::new(file))?;
            if let Some(path) = save_model {
                let file =
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                model.save(BufWriter::new(file))?;
            }
            if curve.skipped_infeasible > 0 {
                eprintln!("skipped {} infeasible samples", curve.skipped_infeasible);
            }
        }
        Command::Segment { saliency, out, nms_window, min_gap_score } => {
            let file =
                File::open(&saliency).with_context(|| format!("opening {}", saliency.display()))?;
            let grid = spinescan::mat::Mat::read_grid(BufReader::new(file))
                .context("parsing saliency grid")?;
            let map = segment::SaliencyMap::new(grid)?;
            let window = nms_window.unwrap_or_else(|| (map.width() / 50).max(1));
            let seg = segment::split_spines(&map, window, min_gap_score);
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            serde_json::to_writer(BufWriter::new(file), &seg.boundaries)?;
        }
        Command::Index { input, out } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let records = InvertedIndex::read_jsonl_records(BufReader::new(file))?;
            let index = InvertedIndex::build(&records)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            serde_json::to_writer(BufWriter::new(file), &index)?;
        }
        Command::Query { index, q, k, no_correct } => {
            let index = load_index(&index)?;
            let mut keywords: Vec<String> = q.split_whitespace().map(str::to_string).collect();
            if !no_correct {
                keywords = retrieval::correct_keywords(&keywords, &index, 2);
            }
            let hits = retrieval::query(&index, &keywords, k);
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            serde_json::to_writer_pretty(&mut out, &hits)?;
            writeln!(out)?;
        }
        Command::Eval { index, queries, ks, correct } => {
            let index = load_index(&index)?;
            let file =
                File::open(&queries).with_context(|| format!("opening {}", queries.display()))?;
            let mut eval_queries = read_queries(BufReader::new(file))?;
            if correct {
                for q in &mut eval_queries {
                    q.keywords = retrieval::correct_keywords(&q.keywords, &index, 2);
                }
            }
            let ks: Vec<usize> = ks
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .context("parsing --ks")?;
            let metrics = retrieval::evaluate(&index, &eval_queries, &ks)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            serde_json::to_writer_pretty(&mut out, &metrics)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn load_index(path: &PathBuf) -> Result<InvertedIndex> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).context("parsing index file")
}

fn read_queries(reader: impl std::io::BufRead) -> Result<Vec<EvalQuery>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuery = serde_json::from_str(&line)
            .with_context(|| format!("query file line {}", idx + 1))?;
        out.push(q);
    }
    Ok(out)
}
