// SPDX-License-Identifier: Apache-2.0

//! Command-line surface: `ingest`, `analyze`, `bench gen`, `bench eval`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::anomaly::{TokenSetError, WeightedTokenSet};
use crate::bench::{self, CaseError, CaseInputs, EvalOptions, SymptomProfile};
use crate::config::{
    load_settings, ConfigError, ConfigSettings, EntrySource, PropertyCatalog, SettingsFormat, DEFAULT_HOT_K,
};
use crate::direct::DirectOptions;
use crate::llm::{
    prompts, BackendKind, HeuristicBackend, LlmBackend, LlmError, LlmSettings, MockBackend, RemoteBackend,
    DEFAULT_MAX_SUSPECTS, DEFAULT_MODEL, DEFAULT_VERIFY_THRESHOLD,
};
use crate::log_parser::{read_log_file, LogParser, ParserConfig, ParserConfigError};
use crate::pipeline::{analyze, ExitStatus, PipelineInputs, PipelineOptions};
use crate::report::{render, ReportFormat, ToolMeta};
use crate::template_store::{StoreError, TemplateStore};

#[derive(Debug, Parser)]
#[command(name = "confloc", version, about = "Localize configuration error triggers from run-time logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine templates from fault-free logs into a template store.
    Ingest(IngestArgs),
    /// Diagnose may-fault logs against a store and configuration settings.
    Analyze(Box<AnalyzeArgs>),
    /// Benchmark case generation and evaluation.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Args)]
pub struct ParserArgs {
    /// TOML or JSON parser settings.
    #[arg(long)]
    pub parser_config: Option<PathBuf>,
    #[arg(long)]
    pub tree_depth: Option<usize>,
    #[arg(long)]
    pub similarity: Option<f64>,
    #[arg(long)]
    pub max_children: Option<usize>,
    /// Header regex with a `message` group.
    #[arg(long)]
    pub header_pattern: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    /// Created when missing, extended otherwise.
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub parser: ParserArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmChoice {
    Mock,
    Remote,
    Heuristic,
}

impl LlmChoice {
    fn kind(self) -> BackendKind {
        match self {
            LlmChoice::Mock => BackendKind::Mock,
            LlmChoice::Remote => BackendKind::Remote,
            LlmChoice::Heuristic => BackendKind::Heuristic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatChoice {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    #[arg(long, value_enum, default_value = "remote")]
    pub llm: LlmChoice,
    /// Mock scripts, one file per task key (`verify.txt`, `case1-indirect.txt`).
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Prefix for mock fixture keys.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long, env = "LLM_MODEL", default_value = DEFAULT_MODEL)]
    pub model: String,
    #[arg(long, default_value_t = DEFAULT_VERIFY_THRESHOLD, value_parser = clap::value_parser!(u8).range(0..=100))]
    pub verify_threshold: u8,
    #[arg(long, default_value_t = DEFAULT_MAX_SUSPECTS, value_parser = parse_positive)]
    pub max_suspects: usize,
    /// Skip verification and accept direct matches.
    #[arg(long)]
    pub no_verify: bool,
    #[arg(long, default_value_t = DEFAULT_HOT_K)]
    pub hot_k: usize,
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<PathBuf>,
    /// User configuration files (XML or flat `name=value`).
    #[arg(long, num_args = 1.., required = true)]
    pub config: Vec<PathBuf>,
    /// Additional configuration files whose entries are marked fabricated.
    #[arg(long, num_args = 1..)]
    pub decoys: Vec<PathBuf>,
    /// Property catalog (JSON array of name/description objects).
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    #[arg(long)]
    pub store: PathBuf,
    /// Weighted anomaly tokens (JSON or TOML).
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatChoice,
    /// Recorded in the report metadata.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub parser: ParserArgs,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Generate one mutated case directory.
    Gen(GenArgs),
    /// Evaluate case directories and write metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileChoice {
    Direct,
    Indirect,
    Clean,
}

impl From<ProfileChoice> for SymptomProfile {
    fn from(p: ProfileChoice) -> Self {
        match p {
            ProfileChoice::Direct => SymptomProfile::DirectSymptom,
            ProfileChoice::Indirect => SymptomProfile::IndirectSymptom,
            ProfileChoice::Clean => SymptomProfile::Clean,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Base configuration to mutate.
    #[arg(long)]
    pub config: PathBuf,
    /// Property universe with descriptions.
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub profile: ProfileChoice,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HOT_K)]
    pub hot_k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A case directory or a directory of case directories.
    #[arg(long)]
    pub cases: PathBuf,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Metrics destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::IoFailure { .. } => ExitStatus::IoError,
            _ => ExitStatus::DataError,
        };
        Self::new(status, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::IoFailure { .. } => ExitStatus::IoError,
            _ => ExitStatus::DataError,
        };
        Self::new(status, e.to_string())
    }
}

impl From<ParserConfigError> for CliError {
    fn from(e: ParserConfigError) -> Self {
        let status = match e {
            ParserConfigError::Io { .. } => ExitStatus::IoError,
            ParserConfigError::Decode { .. } => ExitStatus::DataError,
            _ => ExitStatus::Usage,
        };
        Self::new(status, e.to_string())
    }
}

impl From<TokenSetError> for CliError {
    fn from(e: TokenSetError) -> Self {
        let status = match e {
            TokenSetError::Io { .. } => ExitStatus::IoError,
            _ => ExitStatus::DataError,
        };
        Self::new(status, e.to_string())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        Self::new(ExitStatus::LlmFailure, e.to_string())
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        let status = match e {
            CaseError::Io { .. } => ExitStatus::IoError,
            CaseError::Bench(_) | CaseError::Malformed { .. } => ExitStatus::DataError,
            CaseError::Pipeline(_) => ExitStatus::DataError,
        };
        Self::new(status, e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ExitStatus::IoError, format!("{}: {e}", path.display()))
}

fn parser_config(args: &ParserArgs) -> Result<ParserConfig, CliError> {
    let mut cfg = match &args.parser_config {
        Some(p) => ParserConfig::load(p)?,
        None => ParserConfig::default(),
    };
    if let Some(d) = args.tree_depth {
        cfg.depth = d;
    }
    if let Some(s) = args.similarity {
        cfg.similarity = s;
    }
    if let Some(m) = args.max_children {
        cfg.max_children = m;
    }
    if let Some(h) = &args.header_pattern {
        cfg.header_pattern = h.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_logs(parser: &LogParser, paths: &[PathBuf]) -> Result<crate::log_parser::ParsedLog, CliError> {
    let mut lines = Vec::new();
    for p in paths {
        lines.extend(read_log_file(p).map_err(|e| io_error(p, e))?);
    }
    Ok(parser.parse(lines))
}

/// `SOURCE_DATE_EPOCH` when set, else the wall clock.
fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_error(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn run_ingest(args: &IngestArgs) -> Result<ExitStatus, CliError> {
    let parser = LogParser::new(parser_config(&args.parser)?)?;
    let parsed = parse_logs(&parser, &args.logs)?;
    let mut store = if args.store.exists() {
        TemplateStore::load(&args.store)?
    } else {
        TemplateStore::new(parser.fingerprint(), creation_time())
    };
    let added = store.ingest(&parsed)?;
    store.persist(&args.store)?;
    eprintln!(
        "ingested {} record(s): {} new template(s), {} in store",
        parsed.records.len(),
        added,
        store.len()
    );
    Ok(ExitStatus::FaultFree)
}

fn load_all(paths: &[PathBuf], source: EntrySource) -> Result<ConfigSettings, CliError> {
    let mut merged = ConfigSettings::default();
    for p in paths {
        let s = load_settings(p, SettingsFormat::from_path(p))?.with_source(source);
        for name in merged.merge(s) {
            log::warn!("{}: overrides earlier value of {name}", p.display());
        }
    }
    Ok(merged)
}

fn llm_settings(args: &LlmArgs) -> LlmSettings {
    LlmSettings {
        model_id: args.model.clone(),
        fixture_case: args.case.clone(),
        verify_threshold: args.verify_threshold,
        max_suspects: args.max_suspects,
        ..LlmSettings::default()
    }
}

fn pipeline_options(args: &LlmArgs) -> PipelineOptions {
    PipelineOptions {
        no_verify: args.no_verify,
        hot_k: args.hot_k,
        direct: DirectOptions::default(),
        llm: llm_settings(args),
    }
}

fn backend(args: &LlmArgs) -> Result<Box<dyn LlmBackend>, CliError> {
    Ok(match args.llm {
        LlmChoice::Mock => {
            let dir = args
                .fixtures
                .as_ref()
                .ok_or_else(|| CliError::new(ExitStatus::Usage, "--llm mock requires --fixtures <dir>"))?;
            Box::new(MockBackend::from_dir(dir).map_err(|e| io_error(dir, e))?)
        }
        LlmChoice::Remote => Box::new(RemoteBackend::from_env()?),
        LlmChoice::Heuristic => Box::new(HeuristicBackend),
    })
}

fn run_analyze(args: &AnalyzeArgs) -> Result<ExitStatus, CliError> {
    let parser = LogParser::new(parser_config(&args.parser)?)?;
    let store = TemplateStore::load(&args.store)?;
    let parsed = parse_logs(&parser, &args.logs)?;
    let mut settings = load_all(&args.config, EntrySource::UserDefined)?;
    settings.merge(load_all(&args.decoys, EntrySource::Fabricated)?);
    let catalog = match &args.descriptions {
        Some(p) => PropertyCatalog::load(p)?,
        None => PropertyCatalog::default(),
    };
    let tokens = match &args.tokens {
        Some(p) => WeightedTokenSet::load(p)?,
        None => WeightedTokenSet::default(),
    };
    let backend = backend(&args.llm)?;
    let meta = ToolMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        store_fingerprint: format!("{:016x}", store.meta().parser_fingerprint),
        store_created_at: store.meta().created_at,
        prompt_version: prompts::PROMPT_VERSION.to_string(),
        llm_backend: args.llm.llm.kind().to_string(),
        seed: args.seed,
    };
    let inputs = PipelineInputs { parsed: &parsed, store: &store, tokens: &tokens, settings: &settings, catalog: &catalog };
    let outcome = analyze(&inputs, backend.as_ref(), &pipeline_options(&args.llm), meta)?;
    let format = match args.format {
        FormatChoice::Text => ReportFormat::Text,
        FormatChoice::Json => ReportFormat::Json,
    };
    write_output(args.report.as_deref(), &render(&outcome.report, format))?;
    if let Some(e) = &outcome.llm_error {
        eprintln!("confloc: LLM request failed: {e}");
    }
    Ok(outcome.status)
}

fn run_gen(args: &GenArgs) -> Result<ExitStatus, CliError> {
    let base = load_settings(&args.config, SettingsFormat::from_path(&args.config))?;
    let catalog = PropertyCatalog::load(&args.catalog)?;
    let options = PipelineOptions { hot_k: args.hot_k, ..PipelineOptions::default() };
    let case = bench::gen_case(&base, &catalog, args.seed, args.profile.into(), &options)?;
    case.write(&args.out)?;
    eprintln!("wrote case {} to {}", case.truth.case_id, args.out.display());
    Ok(ExitStatus::FaultFree)
}

fn run_eval(args: &EvalArgs) -> Result<ExitStatus, CliError> {
    let options = EvalOptions { backend: args.llm.llm.kind(), pipeline: pipeline_options(&args.llm) };
    let remote = match args.llm.llm {
        LlmChoice::Remote => Some(RemoteBackend::from_env()?),
        _ => None,
    };
    let dirs = bench::case_dirs(&args.cases)?;
    if dirs.is_empty() {
        return Err(CliError::new(ExitStatus::DataError, format!("no case directories under {}", args.cases.display())));
    }
    let mut results = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let case = CaseInputs::read(dir)?;
        results.push(bench::eval_case(&case, &options, remote.as_ref().map(|r| r as &dyn LlmBackend))?);
    }
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let metrics = bench::evaluate(results, options.variant());
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
    write_output(args.out.as_deref(), json.as_bytes())?;
    Ok(ExitStatus::FaultFree)
}

pub fn execute(cli: &Cli) -> Result<ExitStatus, CliError> {
    match &cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Bench(BenchCommand::Gen(a)) => run_gen(a),
        Command::Bench(BenchCommand::Eval(a)) => run_eval(a),
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage.code() } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(status)) => status.code(),
        Ok(Err(e)) => {
            eprintln!("confloc: {}", e.message);
            e.status.code()
        }
        Err(_) => ExitStatus::Internal.code(),
    }
}
