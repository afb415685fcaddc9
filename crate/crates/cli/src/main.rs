mod report;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{NaiveDateTime, TimeDelta};
use clap::{Args, Parser, Subcommand, ValueEnum};
use regex::Regex;

use nodefail::augment::PowerLawSpec;
use nodefail::graph;
use nodefail::infer;
use nodefail::ingest::{self, RuleSet, DEFAULT_TIMESTAMP_FORMAT};
use nodefail::predict::{self, PredictionRecord, Session};
use nodefail::{parse_matrix, Assignment, EventFailureMatrix, EventId, Model, Structure};

/// Predict network node failures from device log events with a
/// power-law augmented Bayesian network.
#[derive(Parser, Debug)]
#[command(name = "nodefail", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check an event-failure matrix and summarize it
    Validate {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Build a model file from a matrix and power-law parameters
    Augment(AugmentArgs),
    /// Print every conditional probability table of a model
    ExportCpt {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run one MAP query and print the prediction
    Query(QueryArgs),
    /// Stream a device log through a prediction session
    Predict(PredictArgs),
    /// Write a synthetic log for one failure's event sequence
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Deterministic,
    Sampled,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Power-law exponent (at least 2)
    #[arg(long)]
    k: f64,
    /// Population size S
    #[arg(long)]
    population: u64,
    /// Explicit scale constant a (its mass must land within [0.9, 1.1])
    #[arg(long, conflicts_with = "normalize")]
    a: Option<f64>,
    /// Choose a so the probabilities sum to exactly 1 (the default)
    #[arg(long)]
    normalize: bool,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: Mode,
    /// RNG seed, required with --mode sampled
    #[arg(long)]
    seed: Option<u64>,
    /// Parents of each event are its W immediate predecessors
    #[arg(long, default_value_t = 2, conflicts_with = "edges")]
    window: usize,
    /// Edges file with `parent -> child` lines, instead of --window
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Observed events, e.g. E1=1,E2=1
    #[arg(long)]
    evidence: String,
    /// Events to decode; defaults to every event not in the evidence
    #[arg(long)]
    query: Option<String>,
    /// Accept `=0` evidence values
    #[arg(long)]
    allow_absence: bool,
    /// Also print the full posterior and per-event marginals
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    /// Log file, or `-` for standard input
    #[arg(long)]
    log: PathBuf,
    /// Keep reading lines appended to the log
    #[arg(long)]
    follow: bool,
    /// Lines matching this pattern clear the session
    #[arg(long)]
    reset_pattern: Option<String>,
    /// Include per-event posterior marginals in each record
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Failure label, e.g. F2
    #[arg(long)]
    failure: String,
    /// Timestamp of the first line
    #[arg(long, default_value = "2024-01-01T00:00:00")]
    start: String,
    /// Seconds between consecutive lines
    #[arg(long, default_value_t = 60)]
    spacing: i64,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

enum Failure {
    /// Bad flag values; exit 2.
    Usage(String),
    /// Invalid input files or failed checks; exit 1.
    Invalid(String),
}

type CmdResult = Result<(), Failure>;

fn invalid(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| invalid(path, e))
}

fn write(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| invalid(path, e))
}

fn load_matrix(path: &Path) -> Result<EventFailureMatrix, Failure> {
    parse_matrix(&read(path)?).map_err(|e| invalid(path, e))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::from_json(&read(path)?).map_err(|e| invalid(path, e))
}

fn validate(matrix: &Path) -> CmdResult {
    let m = load_matrix(matrix)?;
    println!("{}: valid", matrix.display());
    println!("events: {}", m.event_labels().join(", "));
    println!("failures: {}", m.failure_labels().join(", "));
    let starts: Vec<&str> = m.start_states().into_iter().map(|e| m.event_label(e)).collect();
    println!("start states: {}", starts.join(", "));
    for f in m.failure_ids() {
        let seq: Vec<&str> = m
            .event_sequence(f)
            .expect("own failure")
            .into_iter()
            .map(|e| m.event_label(e))
            .collect();
        println!("  {}: {}", m.failure_label(f), seq.join(" -> "));
    }
    Ok(())
}

fn augment(args: &AugmentArgs) -> CmdResult {
    let m = load_matrix(&args.matrix)?;
    let mut spec = PowerLawSpec::new(args.k, m.n_failures(), args.population);
    if let Some(a) = args.a {
        spec = spec.with_scale(a);
    }
    if let Mode::Sampled = args.mode {
        let seed = args
            .seed
            .ok_or_else(|| Failure::Usage("--mode sampled requires --seed".into()))?;
        spec = spec.sampled(seed);
    } else if args.seed.is_some() {
        return Err(Failure::Usage("--seed only applies to --mode sampled".into()));
    }
    if args.window == 0 {
        return Err(Failure::Usage("--window must be at least 1".into()));
    }
    let structure = match &args.edges {
        Some(path) => Structure::Edges(graph::parse_edges(&read(path)?).map_err(|e| invalid(path, e))?),
        None => Structure::Window(args.window),
    };
    let model = Model::augment(m, &spec, &structure).map_err(|e| invalid(&args.matrix, e))?;
    write(&args.output, &model.to_json())?;
    print!("{}", report::population_stats(&model));
    eprintln!("wrote {}", args.output.display());
    Ok(())
}

fn parse_evidence(m: &EventFailureMatrix, text: &str, allow_absence: bool) -> Result<Assignment, Failure> {
    let mut evidence = Assignment::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (label, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--evidence: `{item}` is not of the form EVENT=1")))?;
        let event = m
            .event(label.trim())
            .map_err(|e| Failure::Usage(format!("--evidence: {e}")))?;
        let value = match value.trim() {
            "1" => true,
            "0" if allow_absence => false,
            "0" => {
                return Err(Failure::Usage(format!(
                    "--evidence: `{item}` asserts non-occurrence; pass --allow-absence to accept it"
                )))
            }
            other => return Err(Failure::Usage(format!("--evidence: value `{other}` must be 0 or 1"))),
        };
        if evidence.insert(event, value).is_some() {
            return Err(Failure::Usage(format!("--evidence: {} given twice", label.trim())));
        }
    }
    if evidence.is_empty() {
        return Err(Failure::Usage("--evidence: no events given".into()));
    }
    Ok(evidence)
}

fn parse_query(m: &EventFailureMatrix, text: &str) -> Result<Vec<EventId>, Failure> {
    let query = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|l| m.event(l).map_err(|e| Failure::Usage(format!("--query: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if query.is_empty() {
        return Err(Failure::Usage("--query: no events given".into()));
    }
    Ok(query)
}

fn query(args: &QueryArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let m = &model.matrix;
    let evidence = parse_evidence(m, &args.evidence, args.allow_absence)?;
    let query = match &args.query {
        Some(q) => parse_query(m, q)?,
        None => Vec::new(),
    };
    if let Some(&e) = query.iter().find(|&&e| evidence.contains(e)) {
        return Err(Failure::Usage(format!(
            "--query: {} is also given as evidence",
            m.event_label(e)
        )));
    }
    let prediction = predict::predict(&model, &evidence, &query).map_err(|e| Failure::Invalid(e.to_string()))?;
    print!("{}", report::query_answer(m, &prediction));
    if prediction.zero_evidence {
        eprintln!("warning: the evidence has probability 0 under this model; OUTPUT is the all-zero tie-break assignment");
    }
    if args.verbose && !prediction.query.is_empty() {
        let post = infer::posterior(&model.net, &prediction.query, &evidence)
            .map_err(|e| Failure::Invalid(e.to_string()))?;
        print!("{}", report::posterior_table(&model, &evidence, &post));
        let marginals = infer::marginals(&model.net, &evidence).map_err(|e| Failure::Invalid(e.to_string()))?;
        print!("{}", report::marginals_table(m, &marginals));
    }
    Ok(())
}

fn run_predict(args: &PredictArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let m = &model.matrix;
    let rules = RuleSet::load(&args.rules, m).map_err(|e| invalid(&args.rules, e))?;
    let reset = args
        .reset_pattern
        .as_deref()
        .map(Regex::new)
        .transpose()
        .map_err(|e| Failure::Usage(format!("--reset-pattern: {e}")))?;

    let source = ingest::open_source(&args.log).map_err(|e| Failure::Invalid(e.to_string()))?;
    let mut stream = ingest::EventStream::new(source, rules, args.follow);
    if let Some(pattern) = reset {
        stream = stream.with_reset(pattern);
    }
    let mut session = Session::new(&model);
    let stdout = io::stdout();
    let mut out = stdout.lock();

    while let Some(item) = stream.next() {
        let event = item.map_err(|e| invalid(&args.log, e))?;
        if stream.take_reset() {
            session.reset();
        }
        let first = session.observed().is_empty();
        let prediction = session
            .observe(event.event, event.timestamp)
            .map_err(|e| Failure::Invalid(format!("{}: line {}: {e}", args.log.display(), event.line)))?;
        if first && session.started_at_valid_state() == Some(false) {
            eprintln!(
                "warning: {}: line {}: {} is not a start state of any failure",
                args.log.display(),
                event.line,
                m.event_label(event.event)
            );
        }
        if prediction.zero_evidence {
            eprintln!(
                "warning: {}: line {}: observed events have probability 0 under this model",
                args.log.display(),
                event.line
            );
        }
        let marginals = if args.verbose {
            Some(infer::marginals(&model.net, &session.evidence()).map_err(|e| Failure::Invalid(e.to_string()))?)
        } else {
            None
        };
        let record = PredictionRecord::new(m, &session, &prediction, marginals.as_deref());
        writeln!(out, "{}", record.to_json()).map_err(|e| Failure::Invalid(e.to_string()))?;
        out.flush().ok();
    }
    eprintln!(
        "{}: {} lines read, {} events matched, {} timestamps unparsed",
        args.log.display(),
        stream.lines_read(),
        stream.lines_matched(),
        stream.unparsed_timestamps()
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> CmdResult {
    let m = load_matrix(&args.matrix)?;
    let f = m
        .failure(&args.failure)
        .map_err(|e| Failure::Usage(format!("--failure: {e}")))?;
    let start = NaiveDateTime::parse_from_str(&args.start, DEFAULT_TIMESTAMP_FORMAT)
        .map_err(|e| Failure::Usage(format!("--start: {e} (expected {DEFAULT_TIMESTAMP_FORMAT})")))?;
    if args.spacing < 0 {
        return Err(Failure::Usage("--spacing must not be negative".into()));
    }
    let log = ingest::synth_log(&m, f, start, TimeDelta::seconds(args.spacing)).expect("failure exists");
    write(&args.output, &log)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { matrix } => validate(matrix),
        Command::Augment(args) => augment(args),
        Command::ExportCpt { model } => load_model(model).map(|m| print!("{}", report::all_cpts(&m.net))),
        Command::Query(args) => query(args),
        Command::Predict(args) => run_predict(args),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
