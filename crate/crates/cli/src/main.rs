use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use argloop_core::analysis::{
    correlation_matrix, demographic_slice, event_shift, export_stance_dataset, AgeGroup, EventWindows, SliceMode,
    SliceSpec, SplitFractions, StanceSplits, Weight,
};
use argloop_core::config::Config;
use argloop_core::corpus::synthetic::{generate, SyntheticSpec};
use argloop_core::corpus::{load_corpus, write_corpus, Corpus, CorpusFormat, LoadOptions, ThemeRegistry};
use argloop_core::evaluation::{
    self, effective_labels, labeled_samples, read_labels_csv, sample_for_review, score_report, write_samples_csv,
    LabelRecord, DEFAULT_PER_BIN,
};
use argloop_core::pipeline::{self, checkpoint_path, Engine};
use argloop_core::state::{RunState, StateLock};
use argloop_server::ServiceState;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(
    name = "argloop",
    version,
    about = "Talking-point discovery over ad corpora with an LLM in the loop"
)]
struct Cli {
    /// Log filter, e.g. `info` or `argloop_core=debug`. RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus file and optionally rewrite it in canonical form.
    Ingest(IngestArgs),
    /// Run pipeline iterations, creating or resuming a state file.
    Run(RunArgs),
    /// Review sampling, quality report and threshold sweep.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Correlation, event, demographic and stance analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Same as `analyze export-stance`.
    ExportStance(StanceArgs),
    /// Serve the review API and UI.
    Serve(ServeArgs),
    /// Write a synthetic corpus with planted argument groups.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Registry {
    /// Themes found in the file.
    Infer,
    Climate,
    Covid,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Corpus file (JSONL or CSV).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<CorpusFormat>,
    #[arg(long, value_enum, default_value = "infer")]
    registry: Registry,
    /// Add themes missing from the registry instead of failing.
    #[arg(long)]
    allow_new_themes: bool,
}

impl CorpusArgs {
    fn load(&self, path: &Path) -> Result<Corpus> {
        let mut options = LoadOptions::new(self.format.unwrap_or_else(|| CorpusFormat::from_path(path)));
        options.registry = match self.registry {
            Registry::Infer => None,
            Registry::Climate => Some(ThemeRegistry::climate()),
            Registry::Covid => Some(ThemeRegistry::covid()),
        };
        options.allow_new_themes = self.allow_new_themes;
        let corpus = load_corpus(path, &options).with_context(|| format!("loading corpus {}", path.display()))?;
        tracing::info!(instances = corpus.len(), themes = corpus.theme_count(), "corpus loaded");
        Ok(corpus)
    }

    /// The `--corpus` file, or the one recorded in the state. Checked
    /// against the state's corpus digest.
    fn load_for(&self, state: &RunState) -> Result<Corpus> {
        let path = match (&self.corpus, &state.corpus.path) {
            (Some(p), _) | (None, Some(p)) => p.clone(),
            (None, None) => bail!("the state records no corpus path; pass --corpus"),
        };
        let corpus = self.load(&path)?;
        state.check_corpus(&corpus)?;
        Ok(corpus)
    }
}

#[derive(Debug, Args)]
struct StateArg {
    /// Run state file.
    #[arg(long, env = "ARGLOOP_STATE")]
    state: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write the validated corpus here (format from the extension).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    state: StateArg,
    /// Total number of iterations the state should reach.
    #[arg(long)]
    iterations: Option<u32>,
    /// Generate talking points from raw texts, skipping summaries.
    #[arg(long)]
    no_summary: bool,
    /// Keep iterating until coverage reaches this value.
    #[arg(long)]
    until_coverage: Option<f64>,
    /// Similarity at or above which talking points merge.
    #[arg(long)]
    merge_threshold: Option<f64>,
    /// Cosine distance below which an instance is assigned.
    #[arg(long)]
    assign_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Draw assignments per theme and distance quartile for human review.
    Sample {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_PER_BIN)]
        per_bin: usize,
        /// CSV output; the label column is left empty for annotators.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest labels and print accuracy and macro-F1 per distance band.
    Report {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Labels CSV (instance_id,talking_point_id,label) appended to the state's label log.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covered instance counts at several assignment thresholds.
    Sweep {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [0.6, 0.5, 0.4, 0.3])]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Pearson correlation between talking points and instance labels.
    Correlate {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Directory for correlation_matrix.csv and correlation_long.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Top talking points before and after an event date.
    Events {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value_t = 30)]
        before_days: i64,
        #[arg(long, default_value_t = 30)]
        after_days: i64,
        #[arg(long, default_value_t = 4)]
        top_k: usize,
        #[arg(long, default_value = "count")]
        weight: Weight,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Talking points and entities of ads targeting an age group in a state.
    Demo {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// 13-24, 25-54 or 55+.
        #[arg(long)]
        age_group: AgeGroup,
        /// Two-letter state code.
        #[arg(long)]
        region: String,
        #[arg(long, default_value_t = 0.5)]
        min_share: f64,
        #[arg(long, default_value = "share_threshold")]
        mode: SliceMode,
        /// Entities to extract with the configured LLM; 0 skips extraction.
        #[arg(long, default_value_t = 10)]
        entities: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// (talking point, text, stance) records split for classifier training.
    ExportStance(StanceArgs),
}

#[derive(Debug, Args)]
struct StanceArgs {
    #[command(flatten)]
    state: StateArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Directory for train.jsonl, validation.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Accepted stance labels; any label counts when omitted.
    #[arg(long, value_delimiter = ',')]
    stances: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    state: StateArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    themes: usize,
    #[arg(long, default_value_t = 40)]
    per_theme: usize,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    #[arg(long, default_value_t = 0.3)]
    diffuse: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted group of every instance as JSON.
    #[arg(long)]
    groups_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Run(args) => run(args),
        Command::Eval(cmd) => eval(cmd),
        Command::Analyze(cmd) => analyze(cmd),
        Command::ExportStance(args) => export_stance(args),
        Command::Serve(args) => serve(args),
        Command::Synth(args) => synth(args),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Pretty JSON to `out`, or stdout.
fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}")?;
            w.flush()?;
            tracing::info!(path = %path.display(), "written");
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let Some(path) = &args.corpus.corpus else {
        bail!("--corpus is required");
    };
    let corpus = args.corpus.load(path)?;
    if let Some(out) = &args.out {
        let mut w = create(out)?;
        write_corpus(&corpus, CorpusFormat::from_path(out), &mut w)?;
        w.flush()?;
    }
    let sizes: std::collections::BTreeMap<String, usize> = argloop_core::corpus::theme_partition(&corpus)
        .into_iter()
        .map(|(t, v)| (t, v.len()))
        .collect();
    emit_json(
        &serde_json::json!({
            "instances": corpus.len(),
            "themes": sizes,
            "digest": argloop_core::state::corpus_digest(&corpus),
        }),
        None,
    )
}

fn run(args: RunArgs) -> Result<()> {
    let state_path = &args.state.state;
    let _lock = StateLock::acquire(state_path)?;
    let file_config = args.config.as_deref().map(Config::load).transpose()?;

    let (mut state, corpus) = if state_path.exists() {
        let mut state = RunState::load(state_path)?;
        let corpus = args.corpus.load_for(&state)?;
        if let Some(c) = file_config {
            if c != state.config {
                tracing::warn!("config file differs from the state's recorded config; using the file");
            }
            state.config = c;
        }
        tracing::info!(iterations = state.iterations.len(), "resuming");
        (state, corpus)
    } else {
        let Some(path) = &args.corpus.corpus else {
            bail!("--corpus is required to start a new run");
        };
        let corpus = args.corpus.load(path)?;
        let state = RunState::new(file_config.unwrap_or_default(), &corpus, Some(path.clone()));
        (state, corpus)
    };

    let config = &mut state.config;
    if args.no_summary {
        config.ablation_no_summary = true;
    }
    if let Some(t) = args.merge_threshold {
        config.merge_threshold = t;
    }
    if let Some(t) = args.assign_threshold {
        config.assign_threshold = t;
    }
    config.validate()?;
    if let Some(c) = args.until_coverage {
        if !(0.0..=1.0).contains(&c) {
            bail!("--until-coverage {c} is outside [0, 1]");
        }
    }

    let target = match (args.iterations, args.until_coverage) {
        (Some(n), _) => n,
        (None, Some(_)) => UNTIL_COVERAGE_CAP,
        (None, None) => state.config.max_iterations,
    };
    let remaining = target.saturating_sub(state.iterations.len() as u32);
    let engine = Engine::new(&corpus, state.config.build_embedder(), state.config.build_llm()?)
        .with_checkpoint(checkpoint_path(state_path));
    if remaining == 0 {
        tracing::info!(target, "state already has the requested iterations");
        state.save(state_path)?;
    }
    let summary = pipeline::run(&engine, &mut state, remaining, args.until_coverage, Some(state_path))?;
    for rec in &state.iterations {
        tracing::info!(
            iteration = rec.iteration,
            coverage = format!("{:.3}", rec.coverage_after),
            new_talking_points = rec.new_talking_points,
            merged_away = rec.merged_away,
            "iteration"
        );
    }
    emit_json(
        &serde_json::json!({
            "iterations_run": summary.iterations_run,
            "iterations_total": state.iterations.len(),
            "coverage": summary.coverage,
            "active_talking_points": state.active_talking_points().count(),
            "state": state_path,
        }),
        None,
    )
}

/// Iteration cap when only `--until-coverage` bounds a run.
const UNTIL_COVERAGE_CAP: u32 = 20;

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Sample {
            state,
            corpus,
            seed,
            per_bin,
            out,
        } => {
            let state = RunState::load(&state.state)?;
            let corpus = corpus_if_available(&corpus, &state);
            let samples = sample_for_review(&state.assignments, &state.talking_points, per_bin, seed)?;
            let mut w = create(&out)?;
            write_samples_csv(&samples, corpus.as_ref(), &state.talking_points, &mut w)?;
            w.flush()?;
            tracing::info!(samples = samples.len(), path = %out.display(), "review sample written");
            Ok(())
        }
        EvalCommand::Report {
            state: state_arg,
            corpus,
            labels,
            out,
        } => {
            let path = &state_arg.state;
            let mut state = RunState::load(path)?;
            let corpus = corpus.load_for(&state)?;
            if let Some(labels_path) = labels {
                let _lock = StateLock::acquire(path)?;
                let file = File::open(&labels_path).with_context(|| format!("opening {}", labels_path.display()))?;
                let rows = read_labels_csv(file)?;
                let now = chrono::Utc::now();
                let source = labels_path.display().to_string();
                state.labels.extend(rows.into_iter().map(|(i, t, label)| LabelRecord {
                    instance_id: i,
                    talking_point_id: t,
                    label,
                    source: source.clone(),
                    recorded_at: now,
                }));
                state.touch();
                state.save(path)?;
            }
            let effective = effective_labels(&state.labels);
            let (samples, stray) = labeled_samples(&state.assignments, &state.talking_points, &effective)?;
            if !stray.is_empty() {
                tracing::warn!(
                    count = stray.len(),
                    "labels for pairs that are not current assignments were ignored"
                );
            }
            if samples.is_empty() {
                bail!(evaluation::EvalError::EmptyInput);
            }
            let report = score_report(&samples, &state.assignments, &corpus)?;
            emit_json(&report, out.as_deref())
        }
        EvalCommand::Sweep {
            state,
            corpus,
            thresholds,
            out,
        } => {
            let state = RunState::load(&state.state)?;
            let corpus = corpus.load_for(&state)?;
            let engine = Engine::new(&corpus, state.config.build_embedder(), state.config.build_llm()?);
            let points = engine.sweep(&state, &thresholds)?;
            emit_json(&points, out.as_deref())
        }
    }
}

fn corpus_if_available(args: &CorpusArgs, state: &RunState) -> Option<Corpus> {
    match args.load_for(state) {
        Ok(c) => Some(c),
        Err(e) => {
            tracing::warn!(error = %format!("{e:#}"), "continuing without instance texts");
            None
        }
    }
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Correlate { state, corpus, out_dir } => {
            let state = RunState::load(&state.state)?;
            let corpus = corpus.load_for(&state)?;
            let matrix = correlation_matrix(&state.assignments, &corpus)?;
            let matrix_path = out_dir.join("correlation_matrix.csv");
            let long_path = out_dir.join("correlation_long.csv");
            matrix.write_matrix_csv(create(&matrix_path)?)?;
            matrix.write_long_csv(create(&long_path)?)?;
            tracing::info!(
                talking_points = matrix.rows.len(),
                labels = matrix.columns.len(),
                dir = %out_dir.display(),
                "correlation written"
            );
            Ok(())
        }
        AnalyzeCommand::Events {
            state,
            corpus,
            date,
            before_days,
            after_days,
            top_k,
            weight,
            out,
        } => {
            let state = RunState::load(&state.state)?;
            let corpus = corpus.load_for(&state)?;
            let windows = EventWindows {
                event: date,
                before: chrono::Duration::days(before_days),
                after: chrono::Duration::days(after_days),
            };
            let shift = event_shift(&state.assignments, &corpus, windows, top_k, weight)?;
            emit_json(&shift, out.as_deref())
        }
        AnalyzeCommand::Demo {
            state,
            corpus,
            age_group,
            region,
            min_share,
            mode,
            entities,
            out,
        } => {
            let state = RunState::load(&state.state)?;
            let corpus = corpus.load_for(&state)?;
            let spec = SliceSpec {
                min_share,
                mode,
                ..SliceSpec::new(age_group, region.to_ascii_uppercase())
            };
            let runner = if entities > 0 {
                Some(state.config.build_llm()?)
            } else {
                None
            };
            let report = demographic_slice(&corpus, &state.assignments, &spec, entities, runner.as_ref())?;
            emit_json(&report, out.as_deref())
        }
        AnalyzeCommand::ExportStance(args) => export_stance(args),
    }
}

fn export_stance(args: StanceArgs) -> Result<()> {
    let state = RunState::load(&args.state.state)?;
    let corpus = args.corpus.load_for(&state)?;
    let splits = export_stance_dataset(
        &state.assignments,
        &corpus,
        &state.talking_points,
        args.stances.as_deref(),
        SplitFractions::default(),
        args.seed,
    )?;
    for (name, records) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        let mut w = create(&args.out_dir.join(format!("{name}.jsonl")))?;
        StanceSplits::write_jsonl(records, &mut w)?;
        w.flush()?;
    }
    emit_json(
        &serde_json::json!({
            "train": splits.train.len(),
            "validation": splits.validation.len(),
            "test": splits.test.len(),
            "unassigned_excluded": splits.unassigned_excluded,
        }),
        None,
    )
}

fn serve(args: ServeArgs) -> Result<()> {
    let path = args.state.state.clone();
    let _lock = StateLock::acquire(&path)?;
    let state = RunState::load(&path)?;
    let corpus = corpus_if_available(&args.corpus, &state);
    let mut service = ServiceState::new(state, corpus, Some(path));
    if let Some(dir) = args.ui_dir {
        if !dir.is_dir() {
            bail!("--ui-dir {} is not a directory", dir.display());
        }
        service = service.with_ui_dir(dir);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        tracing::info!(addr = %listener.local_addr()?, "serving review API");
        tokio::select! {
            r = argloop_server::serve(listener, Arc::new(service)) => r?,
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        }
        Ok(())
    })
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        themes: args.themes,
        per_theme: args.per_theme,
        groups_per_theme: args.groups,
        diffuse_fraction: args.diffuse,
        seed: args.seed,
    };
    let (corpus, groups) = generate(&spec)?;
    let mut w = create(&args.out)?;
    write_corpus(&corpus, CorpusFormat::from_path(&args.out), &mut w)?;
    w.flush()?;
    if let Some(path) = &args.groups_out {
        emit_json(&groups, Some(path))?;
    }
    tracing::info!(instances = corpus.len(), path = %args.out.display(), "synthetic corpus written");
    Ok(())
}
