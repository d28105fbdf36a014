use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Lattice generation, second-pass LM rescoring, tuning and evaluation.
#[derive(Debug, Parser)]
#[command(name = "lmrescore", version)]
pub struct Cli {
    /// Print errors to stderr as one JSON object per line
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// Worker threads for utterance-level parallelism
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic emissions, references and an LM training corpus
    Gen(GenArgs),
    /// Beam-search emissions into segment lattices
    Decode(DecodeArgs),
    /// Rerank lattice N-best lists with an external LM
    Rescore(RescoreArgs),
    /// Grid-search the ILM and ELM weights on a development set
    Tune(TuneArgs),
    /// Rescore at fixed weights and report metrics in one step
    Apply(ApplyArgs),
    /// Score transcripts against references
    Eval(EvalArgs),
    /// Extract salient terms from references
    Salient(SalientArgs),
    /// Log perplexity per word of a text under a scorer
    Ppl(PplArgs),
    /// Write scorer protocol conformance vectors from the built-in n-gram
    Vectors(VectorsArgs),
    /// Serve the built-in n-gram over the scorer protocol
    Serve(ServeArgs),
}

/// External LM selection. Exactly one source: an n-gram trained here, or
/// an out-of-process scorer given by `--scorer` or `RESCORE_SCORER`.
#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Train the built-in n-gram on this corpus (one sentence per line)
    #[arg(long, value_name = "FILE", conflicts_with = "scorer")]
    pub ngram_corpus: Option<PathBuf>,

    /// Order of the built-in n-gram
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub ngram_order: usize,

    /// Out-of-process scorer: `tcp://host:port` or a shell command
    #[arg(long, value_name = "ENDPOINT")]
    pub scorer: Option<String>,

    /// Seconds to wait for each scorer response
    #[arg(long, default_value_t = 30.0, value_name = "SECS")]
    pub scorer_timeout: f64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for emissions.jsonl, refs.jsonl and lm_corpus.txt
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    pub utterances: usize,
    #[arg(long, default_value_t = 2)]
    pub min_segments: usize,
    #[arg(long, default_value_t = 3)]
    pub max_segments: usize,
    #[arg(long, default_value_t = 3)]
    pub min_words: usize,
    #[arg(long, default_value_t = 5)]
    pub max_words: usize,
    /// Probability that a token frame favours the confusable competitor
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub max_blanks: usize,
    /// Raw score of planted tokens; higher means more confident frames
    #[arg(long, default_value_t = 6.0)]
    pub peak: f64,
    /// Sentences in the LM training corpus
    #[arg(long, default_value_t = 2000)]
    pub lm_sentences: usize,
    #[arg(long, default_value_t = 5)]
    pub lm_min_words: usize,
    #[arg(long, default_value_t = 12)]
    pub lm_max_words: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Emission records (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub emissions: PathBuf,
    /// Lattice file to write (JSON lines, one utterance per line)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// References keyed by utterance id; embedded in the lattices and
    /// used for the quality block
    #[arg(long, value_name = "FILE")]
    pub refs: Option<PathBuf>,
    /// First-pass transcripts to write
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub beam: usize,
    /// Label history length that identifies a search state
    #[arg(long, default_value_t = 2)]
    pub context: usize,
    /// Merge search states that share a label history
    #[arg(long, overrides_with = "no_merge")]
    pub merge: bool,
    #[arg(long, overrides_with = "merge")]
    pub no_merge: bool,
    /// Print quality rows for both the trie and merged lattice of the same
    /// search
    #[arg(long)]
    pub compare: bool,
    #[arg(long, default_value_t = 2)]
    pub label_lm_order: usize,
    /// Train the label LM on this corpus instead of using a uniform one
    #[arg(long, value_name = "FILE")]
    pub label_lm_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub label_lm_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub label_lm_weight: f64,
    /// Shallow-fusion weight of the external LM; enables fusion
    #[arg(long)]
    pub fusion_weight: Option<f64>,
    /// Label-LM subtraction weight under fusion
    #[arg(long, default_value_t = 0.0)]
    pub fusion_ilm_weight: f64,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

impl DecodeArgs {
    pub fn merge_states(&self) -> bool {
        !self.no_merge
    }
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// ILM subtraction weight
    #[arg(long, conflicts_with = "params")]
    pub mu: Option<f64>,
    /// ELM weight
    #[arg(long, conflicts_with = "params")]
    pub nu: Option<f64>,
    /// Take mu and nu from a tuning result
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub nbest: usize,
    /// Previous segments whose 1-best conditions the ELM
    #[arg(long, default_value_t = 1)]
    pub context_segments: usize,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long, value_name = "FILE")]
    pub lattices: PathBuf,
    /// Transcript file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Wer,
    Ster,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Development lattices
    #[arg(long, value_name = "FILE")]
    pub lattices: PathBuf,
    /// References; defaults to the ones embedded in the lattices
    #[arg(long, value_name = "FILE")]
    pub refs: Option<PathBuf>,
    /// Tuning result to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Comma-separated mu values
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub mu_grid: Option<Vec<f64>>,
    /// Comma-separated nu values
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub nu_grid: Option<Vec<f64>>,
    /// Allow grids that do not contain 0
    #[arg(long)]
    pub no_anchor: bool,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Wer)]
    pub objective: ObjectiveArg,
    /// Salient-term file, required by the ster objective
    #[arg(long, value_name = "FILE")]
    pub salient: Option<PathBuf>,
    /// Query the scorer again at every grid point
    #[arg(long)]
    pub no_cache: bool,
    /// Held-out lattices to report WER on at the chosen weights
    #[arg(long, value_name = "FILE")]
    pub eval_lattices: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long, default_value_t = 16)]
    pub nbest: usize,
    #[arg(long, default_value_t = 1)]
    pub context_segments: usize,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Salient-term file; adds STER to the report
    #[arg(long, value_name = "FILE")]
    pub salient: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    /// Report file to write (JSON)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Flat CSV table to write
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long, value_name = "FILE")]
    pub lattices: PathBuf,
    /// References; defaults to the ones embedded in the lattices
    #[arg(long, value_name = "FILE")]
    pub refs: Option<PathBuf>,
    /// Transcript file to write
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub report: ReportArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub transcripts: PathBuf,
    /// References; defaults to the ones embedded in `--lattices`
    #[arg(long, value_name = "FILE")]
    pub refs: Option<PathBuf>,
    /// Lattices for oracle WER and path statistics
    #[arg(long, value_name = "FILE")]
    pub lattices: Option<PathBuf>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct SalientArgs {
    #[arg(long, value_name = "FILE")]
    pub refs: PathBuf,
    /// Share of each document's tokens the selected terms must cover
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PplArgs {
    /// One sentence per line
    #[arg(long, value_name = "FILE")]
    pub text: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct VectorsArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "FILE")]
    pub ngram_corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub ngram_order: usize,
    /// Listen on this address instead of stdin/stdout
    #[arg(long, value_name = "ADDR")]
    pub tcp: Option<String>,
}
