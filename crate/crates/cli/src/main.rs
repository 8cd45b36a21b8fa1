//! Command-line surface of the induction toolkit.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model
//! errors (missing files, malformed corpora or model files, failed
//! preconditions).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use grammerge::count::{is_positive, parse_count};
use grammerge::{
    induce_classes, induce_hmm, induce_scfg, trace_to_jsonl, ClassMode, Corpus,
    Count, Hmm, Hyperparams, MergeModel, PosteriorScore, Scfg, SearchConfig, SearchResult,
    Strategy, Tokenization,
};

#[derive(Parser)]
#[command(
    name = "grammerge",
    version,
    about = "Induce probabilistic grammars from sample corpora by Bayesian model merging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce an HMM by state merging.
    InduceHmm(InduceArgs),
    /// Induce a stochastic context-free grammar by merging and chunking.
    InduceScfg(InduceArgs),
    /// Induce word classes over a word corpus.
    InduceClasses(ClassArgs),
    /// Score a model file: description length, marginal, posterior.
    Score(ScoreArgs),
    /// Print all strings of bounded length a model generates.
    Enumerate(EnumerateArgs),
    /// Draw random strings from an SCFG.
    Sample(SampleArgs),
    /// Parse a model file and re-serialize it (format validation).
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TokenizeArg {
    Chars,
    Words,
}

impl From<TokenizeArg> for Tokenization {
    fn from(t: TokenizeArg) -> Tokenization {
        match t {
            TokenizeArg::Chars => Tokenization::Chars,
            TokenizeArg::Words => Tokenization::Words,
        }
    }
}

fn count_arg(s: &str) -> Result<Count, String> {
    let c = parse_count(s).ok_or_else(|| format!("expected an integer or p/q fraction, got {s:?}"))?;
    if !is_positive(&c) {
        return Err(format!("must be > 0, got {s}"));
    }
    Ok(c)
}

#[derive(Args)]
struct HyperArgs {
    /// Symmetric Dirichlet concentration.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight on the description-length prior.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

impl HyperArgs {
    fn build(&self) -> Result<Hyperparams, String> {
        if !(self.alpha > 0.0) {
            return Err(format!("--alpha must be > 0, got {}", self.alpha));
        }
        if !(self.lambda > 0.0) {
            return Err(format!("--lambda must be > 0, got {}", self.lambda));
        }
        Ok(Hyperparams { alpha: self.alpha, prior_weight: self.lambda })
    }
}

#[derive(Args)]
struct InduceArgs {
    /// Corpus file to induce from.
    #[arg(long)]
    corpus: PathBuf,
    /// How corpus lines split into symbols.
    #[arg(long, value_enum, default_value = "chars")]
    tokenize: TokenizeArg,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Beam width; 1 selects greedy search.
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Greedy lookahead depth past a local maximum.
    #[arg(long, default_value_t = 2)]
    lookahead: usize,
    /// Beam rounds without improvement before stopping.
    #[arg(long, default_value_t = 4)]
    patience: usize,
    /// Hard cap on accepted steps / expansion rounds.
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Longest nonterminal sequence considered for chunking.
    #[arg(long, default_value_t = 4)]
    max_chunk_len: usize,
    /// Minimum weighted occurrence count of a chunk candidate.
    #[arg(long, value_parser = count_arg, default_value = "2")]
    min_chunk_occ: Count,
    /// Restrict HMM merge pairs to those sharing a symbol or predecessor.
    #[arg(long, default_value_t = false)]
    prune_pairs: bool,
    /// Rescale corpus counts to this total before induction.
    #[arg(long, value_parser = count_arg)]
    scale_total: Option<Count>,
    /// Incorporate in batches of this size, searching after each.
    #[arg(long)]
    online_batch: Option<usize>,
    /// Check every incremental rescore against a full recomputation.
    #[arg(long, default_value_t = false, hide = true)]
    verify_rescore: bool,
    /// Where to write the induced model (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the JSONL search trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl InduceArgs {
    fn config(&self) -> Result<SearchConfig, String> {
        if self.beam == 0 {
            return Err("--beam must be >= 1".into());
        }
        if self.patience == 0 {
            return Err("--patience must be >= 1".into());
        }
        if self.max_chunk_len < 2 {
            return Err("--max-chunk-len must be >= 2".into());
        }
        if self.online_batch == Some(0) {
            return Err("--online-batch must be >= 1".into());
        }
        Ok(SearchConfig {
            strategy: if self.beam >= 2 { Strategy::Beam } else { Strategy::Greedy },
            beam_width: self.beam,
            lookahead: self.lookahead,
            patience: self.patience,
            max_steps: self.max_steps,
            max_chunk_len: self.max_chunk_len,
            min_chunk_occurrences: self.min_chunk_occ,
            prune_hmm_pairs: self.prune_pairs,
            online_batch: self.online_batch,
            verify_rescore: self.verify_rescore,
            ..SearchConfig::default()
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Bayes,
    MlTarget,
}

#[derive(Args)]
struct ClassArgs {
    /// Corpus file to induce from.
    #[arg(long)]
    corpus: PathBuf,
    /// Merging criterion: Bayesian posterior or likelihood to a target.
    #[arg(long, value_enum, default_value = "bayes")]
    mode: ModeArg,
    /// Target class count (ml-target mode).
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Greedy lookahead depth (bayes mode).
    #[arg(long, default_value_t = 2)]
    lookahead: usize,
    /// Hard cap on accepted steps.
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Rescale corpus counts to this total before induction.
    #[arg(long, value_parser = count_arg)]
    scale_total: Option<Count>,
    /// Where to write the class listing (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the class bigram model in HMM format.
    #[arg(long)]
    hmm_out: Option<PathBuf>,
    /// Where to write the JSONL search trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Model file (HMM or SCFG format).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Emit the report as a JSON object.
    #[arg(long, default_value_t = false)]
    json: bool,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Model file (HMM or SCFG format).
    #[arg(long)]
    model: PathBuf,
    /// Maximum string length.
    #[arg(long, default_value_t = 10)]
    max_len: usize,
}

#[derive(Args)]
struct SampleArgs {
    /// SCFG model file to sample from.
    #[arg(long)]
    model: PathBuf,
    /// Number of strings to draw.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reject derivations longer than this many expansions.
    #[arg(long, default_value_t = 200)]
    max_expansions: usize,
    /// Ignore counts and expand with uniform production probabilities.
    #[arg(long, default_value_t = false)]
    uniform: bool,
    /// Where to write the sampled corpus (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Model file (HMM or SCFG format).
    #[arg(long)]
    model: PathBuf,
    /// Where to write the re-serialized model (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| data(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => fs::write(path, content)
            .map_err(|e| data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_corpus(
    path: &Path,
    tokenization: Tokenization,
    scale_total: Option<Count>,
) -> Result<Corpus, CliError> {
    let text = read_file(path)?;
    let corpus = Corpus::parse(&text, tokenization).map_err(data)?;
    match scale_total {
        Some(total) => corpus.scale_to(total).map_err(data),
        None => Ok(corpus),
    }
}

/// A parsed model file: the first directive line decides the format.
enum Model {
    Hmm(Hmm),
    Scfg(Scfg),
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let text = read_file(path)?;
    let head = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if head.starts_with("hmm") {
        Hmm::parse(&text).map(Model::Hmm).map_err(data)
    } else if head.starts_with("start:") {
        Scfg::parse(&text).map(Model::Scfg).map_err(data)
    } else {
        Err(data(format!(
            "{}: cannot tell the model format from its first line {head:?}",
            path.display()
        )))
    }
}

fn summarize<M: MergeModel>(result: &SearchResult<M>) -> String {
    let accepted = result.trace.iter().filter(|t| t.accepted).count();
    format!(
        "initial log_posterior: {:.6}\nfinal log_posterior: {:.6}\nfinal dl_bits: {:.4}\naccepted steps: {accepted}\n",
        result.initial_score.log_posterior, result.final_score.log_posterior, result.final_score.dl_bits
    )
}

fn write_induction_outputs<M: MergeModel>(
    result: &SearchResult<M>,
    model_text: String,
    out: Option<&Path>,
    trace: Option<&Path>,
) -> Result<(), CliError> {
    write_output(out, &model_text)?;
    if let Some(trace_path) = trace {
        write_output(Some(trace_path), &trace_to_jsonl(&result.trace))?;
    }
    if out.is_some() {
        print!("{}", summarize(result));
    }
    Ok(())
}

fn score_report(score: &PosteriorScore, hyper: &Hyperparams, json: bool) -> String {
    if json {
        let v = serde_json::json!({
            "dl_bits": score.dl_bits,
            "log_prior": score.log_prior,
            "log_marginal": score.log_marginal,
            "log_posterior": score.log_posterior,
            "alpha": hyper.alpha,
            "lambda": hyper.prior_weight,
        });
        format!("{v}\n")
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "dl_bits: {:.6}", score.dl_bits);
        let _ = writeln!(out, "log_prior: {:.6}", score.log_prior);
        let _ = writeln!(out, "log_marginal: {:.6}", score.log_marginal);
        let _ = writeln!(out, "log_posterior: {:.6}", score.log_posterior);
        let _ = writeln!(out, "alpha: {}", hyper.alpha);
        let _ = writeln!(out, "lambda: {}", hyper.prior_weight);
        out
    }
}

fn format_tokens(tokens: &[String]) -> String {
    if tokens.iter().all(|t| t.chars().count() == 1) {
        tokens.concat()
    } else {
        tokens.join(" ")
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::InduceHmm(args) => {
            let hyper = args.hyper.build().map_err(usage)?;
            let cfg = args.config().map_err(usage)?;
            let corpus = load_corpus(&args.corpus, args.tokenize.into(), args.scale_total)?;
            let result = induce_hmm(&corpus, &hyper, &cfg).map_err(data)?;
            write_induction_outputs(
                &result,
                result.final_model.to_text(),
                args.out.as_deref(),
                args.trace.as_deref(),
            )
        }
        Command::InduceScfg(args) => {
            let hyper = args.hyper.build().map_err(usage)?;
            let cfg = args.config().map_err(usage)?;
            let corpus = load_corpus(&args.corpus, args.tokenize.into(), args.scale_total)?;
            let result = induce_scfg(&corpus, &hyper, &cfg).map_err(data)?;
            write_induction_outputs(
                &result,
                result.final_model.to_text(),
                args.out.as_deref(),
                args.trace.as_deref(),
            )
        }
        Command::InduceClasses(args) => {
            let hyper = args.hyper.build().map_err(usage)?;
            let mode = match args.mode {
                ModeArg::Bayes => ClassMode::Bayes,
                ModeArg::MlTarget => ClassMode::MlTarget,
            };
            if mode == ClassMode::MlTarget && args.classes.is_none() {
                return Err(usage("--mode ml-target requires --classes"));
            }
            let cfg = SearchConfig {
                lookahead: args.lookahead,
                max_steps: args.max_steps,
                ..SearchConfig::default()
            };
            let corpus = load_corpus(&args.corpus, Tokenization::Words, args.scale_total)?;
            let (model, result) =
                induce_classes(&corpus, &hyper, mode, args.classes, &cfg).map_err(data)?;
            write_output(args.out.as_deref(), &model.to_text())?;
            if let Some(hmm_path) = args.hmm_out.as_deref() {
                write_output(Some(hmm_path), &model.hmm().to_text())?;
            }
            if let Some(trace_path) = args.trace.as_deref() {
                write_output(Some(trace_path), &trace_to_jsonl(&result.trace))?;
            }
            if args.out.is_some() {
                print!("{}", summarize(&result));
            }
            Ok(())
        }
        Command::Score(args) => {
            let hyper = args.hyper.build().map_err(usage)?;
            let score = match load_model(&args.model)? {
                Model::Hmm(h) => h.score(&hyper),
                Model::Scfg(g) => g.score(&hyper),
            };
            print!("{}", score_report(&score, &hyper, args.json));
            Ok(())
        }
        Command::Enumerate(args) => {
            if args.max_len == 0 {
                return Err(usage("--max-len must be >= 1"));
            }
            let language = match load_model(&args.model)? {
                Model::Hmm(h) => h.enumerate_language(args.max_len),
                Model::Scfg(g) => g.enumerate_language(args.max_len),
            };
            let mut lines: Vec<(usize, String)> = language
                .iter()
                .map(|toks| (toks.len(), format_tokens(toks)))
                .collect();
            lines.sort();
            for (_, line) in lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Sample(args) => {
            if args.n == 0 {
                return Err(usage("--n must be >= 1"));
            }
            let Model::Scfg(g) = load_model(&args.model)? else {
                return Err(data("sample requires an SCFG model file"));
            };
            let corpus = g
                .sample_strings(args.n, args.seed, args.max_expansions, args.uniform)
                .map_err(data)?;
            write_output(args.out.as_deref(), &corpus.to_text())
        }
        Command::Convert(args) => {
            let text = match load_model(&args.model)? {
                Model::Hmm(h) => h.to_text(),
                Model::Scfg(g) => g.to_text(),
            };
            write_output(args.out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
