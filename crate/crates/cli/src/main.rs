//! Command-line surface: `train`, `parse`, `eval`, and `oracle`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 checkpoint
//! mismatch.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use semparse_core::asdl::Grammar;
use semparse_core::convert::{MrFormat, TableContext};
use semparse_core::dataset::{load_dataset, tokenize};
use semparse_core::scorer::checkpoint::{load as load_checkpoint, save as save_checkpoint, LoadedScorer};
use semparse_core::scorer::train::{build_vocabs, prepare, train, TrainOptions};
use semparse_core::scorer::{Precision, Scalar, Scorer, ScorerConfig, ScorerError};
use semparse_core::search::{answer_prune, beam_search, BeamConfig};
use semparse_core::transition::{extract_actions, extract_actions_with_columns, render_actions};

#[derive(Parser)]
#[command(
    name = "semparse",
    version,
    about = "Grammar-driven transition-based semantic parser"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Decode utterances into meaning representations
    Parse(ParseArgs),
    /// Score a dataset with exact-match and execution accuracy
    Eval(EvalArgs),
    /// Dump oracle action sequences for a dataset
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GrammarArgs {
    /// ASDL grammar file
    #[arg(long)]
    grammar: PathBuf,
    /// Root type of the grammar
    #[arg(long = "root-type")]
    root_type: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Lambda,
    Sql,
    Pyexpr,
}

impl From<FormatArg> for MrFormat {
    fn from(f: FormatArg) -> MrFormat {
        match f {
            FormatArg::Lambda => MrFormat::Lambda,
            FormatArg::Sql => MrFormat::Sql,
            FormatArg::Pyexpr => MrFormat::PyExpr,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Training dataset (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 10)]
    batch_size: usize,
    #[arg(long = "lr", default_value_t = 5e-3)]
    learning_rate: f64,
    #[arg(long = "clip", default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop once train exact match reaches this fraction
    #[arg(long = "stop-at-em")]
    stop_at_em: Option<f64>,
    #[arg(long = "embed-dim", default_value_t = 128)]
    embed_dim: usize,
    #[arg(long = "hidden-dim", default_value_t = 256)]
    hidden_dim: usize,
    #[arg(long = "field-embed-dim", default_value_t = 64)]
    field_embed_dim: usize,
    #[arg(long = "action-embed-dim", default_value_t = 64)]
    action_embed_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    /// Vocabulary frequency cutoff
    #[arg(long, default_value_t = 2)]
    cutoff: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Single)]
    precision: PrecisionArg,
    /// Ablate parent feeding in the decoder
    #[arg(long = "no-parent-feeding")]
    no_parent_feeding: bool,
    /// Also append the epoch log to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long = "max-actions", default_value_t = 200)]
    max_actions: usize,
    /// Sort finished hypotheses by length-normalized score
    #[arg(long = "length-normalize")]
    length_normalize: bool,
    /// Drop beam candidates whose execution result is empty (tables only)
    #[arg(long)]
    prune: bool,
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// Input file: JSONL `{"utterance": ..., "table"?: ...}` or plain
    /// text, one utterance per line
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Emit up to K candidates per input as JSON lines
    #[arg(long)]
    nbest: Option<usize>,
    /// Override the meaning-representation format recorded in the
    /// checkpoint
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write to this file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluation dataset (JSONL)
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write the full report as JSON to this file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long)]
    data: PathBuf,
    /// Write to this file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Errors mapped to process exit codes.
enum CmdError {
    Data(anyhow::Error),
    Checkpoint(String),
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Data(_) => 2,
            CmdError::Checkpoint(_) => 3,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Data(e) => write!(f, "{e:#}"),
            CmdError::Checkpoint(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CmdError {
    fn from(e: E) -> Self {
        let err: anyhow::Error = e.into();
        match err.downcast_ref::<ScorerError>() {
            Some(ScorerError::CheckpointMismatch(msg)) => CmdError::Checkpoint(msg.clone()),
            _ => CmdError::Data(err),
        }
    }
}

type CmdResult = Result<(), CmdError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage text
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Parse(args) => cmd_parse(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_grammar(args: &GrammarArgs) -> Result<Arc<Grammar>, CmdError> {
    let text = std::fs::read_to_string(&args.grammar).map_err(|e| {
        CmdError::Data(anyhow::anyhow!(
            "cannot read grammar `{}`: {e}",
            args.grammar.display()
        ))
    })?;
    let grammar = semparse_core::parse_grammar(&text, &args.root_type)
        .map_err(|e| CmdError::Data(e.into()))?;
    Ok(Arc::new(grammar))
}

fn write_out(path: Option<&Path>, content: &str) -> CmdResult {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| CmdError::Data(e.into())),
        None => {
            print!("{content}");
            std::io::stdout().flush().ok();
            Ok(())
        }
    }
}

// ------------------------------------------------------------- train

fn cmd_train(args: TrainArgs) -> CmdResult {
    let grammar = load_grammar(&args.grammar)?;
    let format: MrFormat = args.format.into();
    let examples = load_dataset(&args.data, format, &grammar)?;
    let pairs = prepare(&grammar, format, &examples)?;
    let config = ScorerConfig {
        embed_dim: args.embed_dim,
        hidden_dim: args.hidden_dim,
        field_embed_dim: args.field_embed_dim,
        action_embed_dim: args.action_embed_dim,
        dropout_rate: args.dropout,
        vocab_cutoff: args.cutoff,
        scalar_precision: match args.precision {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        },
        parent_feeding: !args.no_parent_feeding,
    };
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        grad_clip: args.grad_clip,
        seed: args.seed,
        stop_at_em: args.stop_at_em,
    };
    match config.scalar_precision {
        Precision::Single => {
            run_train::<f32>(grammar, config, format, &pairs, &opts, &args)
        }
        Precision::Double => {
            run_train::<f64>(grammar, config, format, &pairs, &opts, &args)
        }
    }
}

fn run_train<F: Scalar>(
    grammar: Arc<Grammar>,
    config: ScorerConfig,
    format: MrFormat,
    pairs: &[semparse_core::scorer::train::TrainingPair],
    opts: &TrainOptions,
    args: &TrainArgs,
) -> CmdResult {
    let (src_vocab, gen_vocab) = build_vocabs(pairs, config.vocab_cutoff);
    let mut scorer: Scorer<F> =
        Scorer::new(config, grammar, src_vocab, gen_vocab, args.seed)?;
    let metrics = train(&mut scorer, pairs, opts)?;
    let mut log = String::new();
    let _ = writeln!(log, "epoch,loss,train_em");
    for m in &metrics {
        let _ = writeln!(log, "{},{:.6},{:.4}", m.epoch, m.loss, m.train_em);
    }
    print!("{log}");
    if let Some(path) = &args.log {
        std::fs::write(path, &log).map_err(|e| CmdError::Data(e.into()))?;
    }
    save_checkpoint(&scorer, format, &args.ckpt)?;
    Ok(())
}

// ------------------------------------------------------------- parse

#[derive(Deserialize)]
struct ParseInputLine {
    utterance: String,
    #[serde(default)]
    table: Option<TableContext>,
}

fn read_parse_inputs(path: &Path) -> Result<Vec<(Vec<String>, Option<TableContext>)>, CmdError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CmdError::Data(anyhow::anyhow!("cannot read input `{}`: {e}", path.display()))
    })?;
    let mut inputs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (utterance, table) = if line.starts_with('{') {
            let parsed: ParseInputLine = serde_json::from_str(line).map_err(|e| {
                CmdError::Data(anyhow::anyhow!("input line {}: {e}", i + 1))
            })?;
            (parsed.utterance, parsed.table)
        } else {
            (line.to_string(), None)
        };
        let tokens = tokenize(&utterance);
        if tokens.is_empty() {
            return Err(CmdError::Data(anyhow::anyhow!(
                "input line {}: utterance is empty",
                i + 1
            )));
        }
        inputs.push((tokens, table));
    }
    Ok(inputs)
}

fn cmd_parse(args: ParseArgs) -> CmdResult {
    let grammar = load_grammar(&args.grammar)?;
    let loaded = load_checkpoint(&args.ckpt, &grammar)?;
    let format: MrFormat = args.format.map(Into::into).unwrap_or(loaded.format);
    let inputs = read_parse_inputs(&args.input)?;
    let out = match loaded.scorer {
        LoadedScorer::Single(s) => run_parse(&s, format, &inputs, &args)?,
        LoadedScorer::Double(s) => run_parse(&s, format, &inputs, &args)?,
    };
    write_out(args.output.as_deref(), &out)
}

fn run_parse<F: Scalar>(
    scorer: &Scorer<F>,
    format: MrFormat,
    inputs: &[(Vec<String>, Option<TableContext>)],
    args: &ParseArgs,
) -> Result<String, CmdError> {
    let grammar = scorer.grammar();
    let config = BeamConfig {
        beam_size: args.decode.beam,
        max_actions: args.decode.max_actions,
        length_normalize: args.decode.length_normalize,
    };
    let mut out = String::new();
    for (utterance, table) in inputs {
        let mut candidates = beam_search(scorer, utterance, &config, table.as_ref())?;
        if args.decode.prune {
            if let Some(t) = table {
                candidates = answer_prune(&candidates, t, grammar);
            }
        }
        match args.nbest {
            None => {
                let top = candidates
                    .first()
                    .and_then(|(tree, _)| format.to_text(tree, grammar, table.as_ref()).ok());
                let _ = writeln!(out, "{}", top.unwrap_or_else(|| "<FAIL>".to_string()));
            }
            Some(k) => {
                let rendered: Vec<serde_json::Value> = candidates
                    .iter()
                    .take(k)
                    .filter_map(|(tree, score)| {
                        format
                            .to_text(tree, grammar, table.as_ref())
                            .ok()
                            .map(|mr| serde_json::json!({"mr": mr, "score": score}))
                    })
                    .collect();
                let record = serde_json::json!({
                    "utterance": utterance.join(" "),
                    "candidates": rendered,
                });
                let _ = writeln!(out, "{record}");
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- eval

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let grammar = load_grammar(&args.grammar)?;
    let loaded = load_checkpoint(&args.ckpt, &grammar)?;
    let format: MrFormat = args.format.map(Into::into).unwrap_or(loaded.format);
    let examples = load_dataset(&args.data, format, &grammar)?;
    let config = BeamConfig {
        beam_size: args.decode.beam,
        max_actions: args.decode.max_actions,
        length_normalize: args.decode.length_normalize,
    };
    let report = match loaded.scorer {
        LoadedScorer::Single(s) => {
            semparse_core::eval::evaluate(&s, format, &examples, &config, args.decode.prune)?
        }
        LoadedScorer::Double(s) => {
            semparse_core::eval::evaluate(&s, format, &examples, &config, args.decode.prune)?
        }
    };
    println!("exact_match_accuracy {:.4}", report.exact_match_accuracy);
    match report.execution_accuracy {
        Some(ex) => println!("execution_accuracy {ex:.4}"),
        None => println!("execution_accuracy n/a"),
    }
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CmdError::Data(e.into()))?;
        std::fs::write(path, json).map_err(|e| CmdError::Data(e.into()))?;
    }
    Ok(())
}

// ------------------------------------------------------------- oracle

fn cmd_oracle(args: OracleArgs) -> CmdResult {
    let grammar = load_grammar(&args.grammar)?;
    let format: MrFormat = args.format.into();
    let examples = load_dataset(&args.data, format, &grammar)?;
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let tree = semparse_core::dataset::convert_checked(
            format,
            &ex.mr_text,
            &grammar,
            ex.table.as_ref(),
        )
        .map_err(|msg| CmdError::Data(anyhow::anyhow!("example {}: {msg}", i + 1)))?;
        let actions = match &ex.table {
            Some(t) => extract_actions_with_columns(&grammar, &tree, t.width()),
            None => extract_actions(&grammar, &tree),
        }
        .map_err(|e| CmdError::Data(e.into()))?;
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&render_actions(&grammar, &actions));
    }
    write_out(args.output.as_deref(), &out)
}
