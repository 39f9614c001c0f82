use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

mod commands;
mod config;

/// Invocation problems (bad flags, missing paths, unreadable config).
/// These exit with status 2; everything else that fails exits with 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "rarelm", version, about = "Rare-word embedding enrichment for neural language models")]
pub struct Cli {
    /// Seed for every random choice (initialisation, shuffling, candidate
    /// sampling, synthetic data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for rescoring (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Training text, one sentence per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Multiword names, one per line; matching word sequences are joined
    /// with underscores.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count words and write a vocabulary file.
    BuildVocab {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long)]
        min_count: Option<u64>,
        /// Maximum size including the special tokens.
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the LSTM language model.
    TrainLstm {
        #[command(flatten)]
        input: CorpusArgs,
        /// Vocabulary file; built from the corpus when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Held-out text monitored for learning-rate decay.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        lr_decay: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        bptt_len: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        clip_norm: Option<f64>,
        /// Checkpoint output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch perplexities as TSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train an interpolated modified Kneser-Ney model and write ARPA.
    TrainNgram {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        /// Drop highest-order n-grams seen fewer times than this.
        #[arg(long)]
        cutoff: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace rare-word embedding columns with candidate centroids.
    Enrich {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Words eligible for enrichment (e.g. street names).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Corpus to count frequencies from; the model's vocabulary counts
        /// are used when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<u64>,
        /// Candidates per rare word.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = ["equal", "frequency", "similarity"])]
        weighting: Option<String>,
        #[arg(long, value_parser = ["shared", "perword"])]
        sharing: Option<String>,
        #[arg(long, value_parser = ["allStreets", "fromNbest"])]
        mode: Option<String>,
        /// N-best file, required by fromNbest.
        #[arg(long)]
        nbest: Option<PathBuf>,
        /// Word vectors for similarity weighting.
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Enriched checkpoint output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-rank n-best lists with the neural LM (optionally mixed with KN).
    Rescore {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        kn: Option<PathBuf>,
        #[arg(long)]
        nbest: Option<PathBuf>,
        /// Joins multiword names inside the hypotheses.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Probability weight of the KN model.
        #[arg(long)]
        interp_weight: Option<f64>,
        #[arg(long)]
        lm_weight: Option<f64>,
        #[arg(long)]
        word_insertion_penalty: Option<f64>,
        /// Rescored n-best output; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        one_best: Option<PathBuf>,
    },
    /// Perplexity of a text under the neural LM, the KN model or their mix.
    Ppl {
        #[command(flatten)]
        input: CorpusArgs,
        /// Transcript file (`utt_id<TAB>text`) to score instead of a corpus.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        kn: Option<PathBuf>,
        #[arg(long)]
        interp_weight: Option<f64>,
    },
    /// Word error rate and rare-word accuracy of one-best output.
    Wer {
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        hyp: Option<PathBuf>,
        /// Words whose recognition accuracy is reported.
        #[arg(long)]
        tracked: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescoring WER across frequency thresholds or candidate counts.
    Sweep {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        kn: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        nbest: Option<PathBuf>,
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Tracked words; defaults to the rare set at --threshold.
        #[arg(long)]
        tracked: Option<PathBuf>,
        /// Comma-separated thresholds to sweep.
        #[arg(long, value_delimiter = ',', conflicts_with = "ks")]
        thresholds: Option<Vec<u64>>,
        /// Comma-separated candidate counts to sweep at --threshold.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = ["allStreets", "fromNbest"])]
        mode: Option<String>,
        #[arg(long)]
        interp_weight: Option<f64>,
        #[arg(long)]
        lm_weight: Option<f64>,
        /// TSV output for plotting.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic street-name benchmark.
    GenSynthetic {
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        streets: Option<usize>,
        #[arg(long)]
        rare_fraction: Option<f64>,
        #[arg(long)]
        threshold: Option<u64>,
        #[arg(long)]
        train_sentences: Option<usize>,
        #[arg(long)]
        eval_utterances: Option<usize>,
        #[arg(long)]
        nbest_size: Option<usize>,
        /// `street<TAB>confusable words` lines overriding the built-in table.
        #[arg(long)]
        confusions: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
