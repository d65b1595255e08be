use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nertag::app::{evaluate_files, lexmatch_file, tag_file, TagOptions};
use nertag::exec::Execution;
use nertag::lexicon::{Encoding, MatchMode};
use nertag::tagging::Dialect;
use nertag::train::{detect_failed_trial, train, LexiconSpec, RunConfig, TrainStatus, TrialOutcome};

/// Named entity tagger: BLSTM with character CNN, lexicon features and a
/// transition model over BIOES tags.
#[derive(Parser)]
#[command(name = "nertag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model.
    Train(TrainArgs),
    /// Tag a column file with a trained model.
    Tag(TagArgs),
    /// Score predictions against gold tags.
    Eval(EvalArgs),
    /// Annotate a column file with lexicon matches.
    Lexmatch(LexmatchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory for checkpoints, predictions and the training log.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Lexicon feature as NAME=PATH; repeatable.
    #[arg(long, value_parser = parse_lexicon)]
    lexicon: Vec<(String, PathBuf)>,
    /// Matching mode for the lexicons given on the command line.
    #[arg(long)]
    mode: Option<MatchMode>,
    /// Feature encoding for the lexicons given on the command line.
    #[arg(long)]
    encoding: Option<Encoding>,
    /// Enforce BIOES structure when decoding for evaluation.
    #[arg(long)]
    constrained: bool,
    /// Run per-sentence work on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TagArgs {
    /// Checkpoint directory, or a training output directory.
    #[arg(long)]
    model: PathBuf,
    input: PathBuf,
    /// Write here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    constrained: bool,
    /// Replace a lexicon of the model: NAME=PATH; repeatable.
    #[arg(long, value_parser = parse_lexicon)]
    lexicon: Vec<(String, PathBuf)>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    gold: PathBuf,
    predicted: PathBuf,
    /// Tag scheme of the gold file.
    #[arg(long, default_value = "auto")]
    dialect: Dialect,
}

#[derive(Args)]
struct LexmatchArgs {
    /// Lexicon as NAME=PATH; repeatable.
    #[arg(long, value_parser = parse_lexicon)]
    lexicon: Vec<(String, PathBuf)>,
    input: PathBuf,
    #[arg(long, default_value = "partial")]
    mode: MatchMode,
    #[arg(long, default_value = "bioes")]
    encoding: Encoding,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_lexicon(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

enum Failure {
    Core(nertag::Error),
    Io(PathBuf, io::Error),
    Trial(String),
}

impl From<nertag::Error> for Failure {
    fn from(e: nertag::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(nertag::Error::Config(_)) => 1,
            Failure::Core(nertag::Error::Diverged(_)) | Failure::Trial(_) => 3,
            Failure::Core(_) | Failure::Io(..) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(path, e) => write!(f, "{}: {e}", path.display()),
            Failure::Trial(m) => f.write_str(m),
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Io(p.into(), e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn effective_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut c = match &args.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value.clone() {
                c.$field = v;
            }
        };
    }
    set!(seed, args.seed);
    set!(dropout, args.dropout);
    set!(learning_rate, args.lr);
    set!(epochs, args.epochs);
    set!(batch_size, args.batch_size);
    if args.train.is_some() {
        c.train = args.train.clone();
    }
    if args.dev.is_some() {
        c.dev = args.dev.clone();
    }
    if args.model_dir.is_some() {
        c.model_dir = args.model_dir.clone();
    }
    if args.embeddings.is_some() {
        c.embeddings = args.embeddings.clone();
    }
    if args.constrained {
        c.constrained = true;
    }
    for (name, path) in &args.lexicon {
        match c.lexicons.iter_mut().find(|l| &l.name == name) {
            Some(spec) => spec.path = path.clone(),
            None => c.lexicons.push(LexiconSpec {
                name: name.clone(),
                path: path.clone(),
                mode: MatchMode::Partial,
                encoding: Encoding::Bioes,
                categories: None,
            }),
        }
        let spec = c.lexicons.iter_mut().find(|l| &l.name == name).unwrap();
        if let Some(m) = args.mode {
            spec.mode = m;
        }
        if let Some(e) = args.encoding {
            spec.encoding = e;
        }
    }
    c.validate()?;
    Ok(c)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let config = effective_config(&args)?;
    eprintln!("effective configuration:\n{}", config.to_json().trim_end());
    if config.model_dir.is_none() {
        log::warn!("no --model-dir given; the trained model will not be saved");
    }
    let outcome = train(&config, execution(args.sequential))?;
    if let TrainStatus::Diverged { epoch, message } = &outcome.log.status {
        return Err(Failure::Trial(format!("diverged in epoch {epoch}: {message}")));
    }
    if let Some(rule) = config.failure_rule() {
        if detect_failed_trial(&outcome.log, &rule)? == TrialOutcome::Fail {
            return Err(Failure::Trial(format!(
                "failed trial: final {:?} below {}",
                rule.metric, rule.threshold
            )));
        }
    }
    Ok(())
}

fn cmd_tag(args: TagArgs) -> Result<(), Failure> {
    let opts = TagOptions {
        constrained: args.constrained,
        lexicons: args.lexicon,
        embeddings: args.embeddings,
        exec: execution(args.sequential),
    };
    let mut out = output(args.output.as_deref())?;
    tag_file(&args.model, &args.input, &mut out, &opts)?;
    out.flush().map_err(|e| Failure::Io(args.output.unwrap_or_default(), e))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let report = evaluate_files(&args.gold, &args.predicted, args.dialect)?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_lexmatch(args: LexmatchArgs) -> Result<(), Failure> {
    let specs: Vec<LexiconSpec> = args
        .lexicon
        .into_iter()
        .map(|(name, path)| LexiconSpec {
            name,
            path,
            mode: args.mode,
            encoding: args.encoding,
            categories: None,
        })
        .collect();
    let mut out = output(args.output.as_deref())?;
    lexmatch_file(&specs, &args.input, args.mode, args.encoding, &mut out)?;
    out.flush().map_err(|e| Failure::Io(args.output.unwrap_or_default(), e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Lexmatch(a) => cmd_lexmatch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
