//! Command-line front end. Each subcommand delegates to one library stage
//! and writes a run record next to its outputs.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, AnalysisError};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{self, CorpusError, ParallelSegment, Warning};
use crate::dataset::{self, BuildOptions, DatasetError, EvalOptions, InstructionRecord, TrainingMethod};
use crate::fewshot::{MixturePolicy, MixtureVariant};
use crate::generation::{self, CompletionClient, GenerationError, GenerationMode, GenerationResult, RowStatus, TokenCounter};
use crate::io::{read_jsonl, write_json_atomic, write_jsonl_atomic, IoError};
use crate::metrics::{self, EvalInput, Metric, MetricError, SegmentEvaluation};
use crate::mock::{MockResponder, MockServer};
use crate::templates::{self, TemplateId};

pub const INSTRUCTION_SCHEMA_VERSION: u32 = 1;
pub const GENERATION_SCHEMA_VERSION: u32 = 1;
pub const EVALUATION_SCHEMA_VERSION: u32 = 1;
pub const RUN_RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mtkit", about = "Few-shot instruction data, generation and MT evaluation toolkit")]
#[command(disable_version_flag = true, arg_required_else_help = true)]
pub struct Cli {
    /// Print version, metric signatures and schema versions.
    #[arg(short = 'V', long = "version", global = true)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration (seed is mandatory).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a scored corpus and sample per-pair training and example pools.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory for pool files and their statistics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the few-shot training mixture from sampled pools.
    BuildTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pools: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_records: Option<usize>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, value_parser = parse_template)]
        template: Option<TemplateId>,
    },
    /// Build zero- and few-shot evaluation records.
    BuildEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated shot settings.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        #[arg(long)]
        strip_references: bool,
        #[arg(long, value_parser = parse_template)]
        template: Option<TemplateId>,
    },
    /// Send evaluation prompts to a completions endpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        url: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        max_tokens: Option<u32>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        concurrency: Option<usize>,
        /// Keep successful rows of an existing output and redo the rest.
        #[arg(long)]
        resume: bool,
        /// External token counter command (JSON string per line in, count per line out).
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        token_counter: Option<Vec<String>>,
    },
    /// Score generations with BLEU/chrF and attach external neural scores.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        generations: Option<PathBuf>,
        /// Test corpus supplying references and domains by segment id.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Score TSV with header segment_id, comet, kiwi.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write (segment_id, src, hyp, ref) triples for the neural scorer.
        #[arg(long)]
        emit_triples: Option<PathBuf>,
    },
    /// Produce diagnostic tables from evaluations.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Evaluation JSONL files written by `score`.
        #[arg(long, num_args = 1.., required_unless_present = "pairs")]
        evaluations: Vec<PathBuf>,
        /// Paired sentence-BLEU CSV (segment_id, domain, system, pair,
        /// zero_bleu, few_bleu) used for the hallucination report instead of
        /// pairing evaluations.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        hallucination: bool,
        #[arg(long)]
        deltas: bool,
        #[arg(long)]
        aggregate: bool,
        #[arg(long)]
        lengths: bool,
        #[arg(long, value_parser = parse_metric)]
        delta_metric: Option<Metric>,
        /// Corpus-level metric reports whose values replace segment means.
        #[arg(long, num_args = 1..)]
        metric_report: Vec<PathBuf>,
        /// `system=path` generation files for length statistics.
        #[arg(long, num_args = 1.., value_parser = parse_named_path)]
        generations: Vec<(String, PathBuf)>,
        /// Evaluation records whose references give the reference lengths.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Emit or check a trainer hyperparameter manifest.
    Manifest {
        #[arg(long, value_enum, default_value = "lora")]
        method: MethodArg,
        #[arg(long)]
        lora_r: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate an existing manifest instead of emitting one.
        #[arg(long, conflicts_with_all = ["out", "lora_r"])]
        check: Option<PathBuf>,
    },
    /// Run the mock completions server until interrupted.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: String,
        /// Corpus whose target texts are returned for matching sources.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Append a newline and a spurious continuation to every answer.
        #[arg(long)]
        overgenerate: bool,
        /// Answer this many initial requests with HTTP 429.
        #[arg(long, default_value_t = 0)]
        rate_limit: usize,
        /// Answer HTTP 500 for prompts whose source equals this text (repeatable).
        #[arg(long)]
        fail_source: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Lora,
    FullFt,
}

fn parse_template(s: &str) -> Result<TemplateId, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected system=path")?;
    if name.is_empty() {
        return Err("empty system name".into());
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

/// Failure classes mapped onto exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        validation(e)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Parse { .. } => validation(e),
            IoError::Io { .. } => runtime(e),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(io) => io.into(),
            other => validation(other),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Corpus(c) => c.into(),
            other => validation(other),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Config(_) => validation(e),
            GenerationError::Io(io) => io.into(),
            other => runtime(other),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Io(io) => io.into(),
            other => validation(other),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(io) => io.into(),
            other => validation(other),
        }
    }
}

/// Audit trail written beside every subcommand's outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub subcommand: String,
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub schema_versions: BTreeMap<&'static str, u32>,
    pub metric_signatures: BTreeMap<&'static str, String>,
    pub inputs: BTreeMap<String, String>,
    pub row_counts: BTreeMap<String, usize>,
}

fn schema_versions() -> BTreeMap<&'static str, u32> {
    BTreeMap::from([
        ("instruction_record", INSTRUCTION_SCHEMA_VERSION),
        ("training_manifest", dataset::MANIFEST_SCHEMA_VERSION),
        ("generation_result", GENERATION_SCHEMA_VERSION),
        ("segment_evaluation", EVALUATION_SCHEMA_VERSION),
        ("run_record", RUN_RECORD_SCHEMA_VERSION),
    ])
}

fn metric_signatures() -> BTreeMap<&'static str, String> {
    use metrics::{BleuConfig, BleuTokenizer};
    BTreeMap::from([
        ("bleu", BleuConfig::corpus().signature()),
        ("bleu_zh", BleuConfig::corpus().with_tokenizer(BleuTokenizer::Zh).signature()),
        ("sentence_bleu", BleuConfig::sentence().signature()),
        ("chrf", metrics::chrf_signature()),
    ])
}

pub fn version_text() -> String {
    let mut s = format!("mtkit {}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in metric_signatures() {
        s.push_str(&format!("signature {k}: {v}\n"));
    }
    for (k, v) in schema_versions() {
        s.push_str(&format!("schema {k}: {v}\n"));
    }
    s
}

struct Run {
    cfg: RunConfig,
    record: RunRecord,
}

impl Run {
    fn new(subcommand: &str, common: &Common) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        Ok(Self {
            record: RunRecord {
                schema_version: RUN_RECORD_SCHEMA_VERSION,
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: None,
                seed: None,
                schema_versions: schema_versions(),
                metric_signatures: metric_signatures(),
                inputs: BTreeMap::new(),
                row_counts: BTreeMap::new(),
            },
            cfg,
        })
    }

    /// Validates the effective config (after flag overrides) and fixes the hash.
    fn seal(&mut self) -> Result<(), CliError> {
        self.cfg.validate()?;
        self.cfg.filter.seed = self.cfg.seed;
        self.record.config_hash = Some(self.cfg.hash());
        self.record.seed = Some(self.cfg.seed);
        Ok(())
    }

    fn input(&mut self, name: &str, flag: Option<PathBuf>, configured: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let path = flag
            .or(configured)
            .ok_or_else(|| validation(format!("missing input path {name} (flag or config paths)")))?;
        if !path.exists() {
            return Err(validation(format!("input {name} does not exist: {}", path.display())));
        }
        self.record.inputs.insert(name.to_string(), path.display().to_string());
        Ok(path)
    }

    fn count(&mut self, name: impl Into<String>, n: usize) {
        self.record.row_counts.insert(name.into(), n);
    }

    fn finish(self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(format!("run.{}.json", self.record.subcommand));
        write_json_atomic(&path, &self.record)?;
        Ok(())
    }
}

/// Resolves an output location and makes sure its directory can be created.
/// `is_dir` marks outputs that are directories rather than files.
fn output(name: &str, flag: Option<PathBuf>, configured: Option<PathBuf>, is_dir: bool) -> Result<PathBuf, CliError> {
    let path = flag
        .or(configured)
        .ok_or_else(|| validation(format!("missing output path {name} (flag or config paths)")))?;
    let dir = if is_dir { path.clone() } else { parent_dir(&path) };
    std::fs::create_dir_all(&dir)
        .map_err(|e| validation(format!("output {name}: cannot create {}: {e}", dir.display())))?;
    Ok(path)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.version {
        print!("{}", version_text());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return 1;
    };
    match execute(command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Filter { common, corpus, out } => cmd_filter(&common, corpus, out),
        Command::BuildTrain {
            common,
            pools,
            out,
            n_records,
            variant,
            template,
        } => cmd_build_train(&common, pools, out, n_records, variant, template),
        Command::BuildEval {
            common,
            test,
            dev,
            out,
            shots,
            strip_references,
            template,
        } => cmd_build_eval(&common, test, dev, out, shots, strip_references, template),
        Command::Generate {
            common,
            records,
            out,
            url,
            mode,
            max_tokens,
            temperature,
            concurrency,
            resume,
            token_counter,
        } => {
            let overrides = GenerateOverrides {
                url,
                mode,
                max_tokens,
                temperature,
                concurrency,
                token_counter,
            };
            cmd_generate(&common, records, out, overrides, resume)
        }
        Command::Score {
            common,
            records,
            generations,
            segments,
            scores,
            system,
            out,
            emit_triples,
        } => cmd_score(&common, records, generations, segments, scores, system, out, emit_triples),
        Command::Analyze {
            common,
            evaluations,
            pairs,
            out,
            hallucination,
            deltas,
            aggregate,
            lengths,
            delta_metric,
            metric_report,
            generations,
            records,
        } => {
            let any = hallucination || deltas || aggregate || lengths;
            let have_evals = !evaluations.is_empty();
            let which = AnalyzeWhich {
                hallucination: hallucination || !any,
                deltas: deltas || (!any && have_evals),
                aggregate: aggregate || (!any && have_evals),
                lengths: lengths || (!any && !generations.is_empty()),
            };
            let inputs = AnalyzeInputs {
                evaluations,
                pairs,
                metric_reports: metric_report,
                generations,
                records,
            };
            cmd_analyze(&common, inputs, out, which, delta_metric)
        }
        Command::Manifest {
            method,
            lora_r,
            out,
            check,
        } => cmd_manifest(method, lora_r, out, check),
        Command::ServeMock {
            addr,
            references,
            overgenerate,
            rate_limit,
            fail_source,
        } => cmd_serve_mock(&addr, references, overgenerate, rate_limit, fail_source),
    }
}

fn cmd_filter(common: &Common, corpus_flag: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::new("filter", common)?;
    let corpus_path = run.input("corpus", corpus_flag, run.cfg.paths.corpus_in.clone())?;
    let out = output("pools_out", out, run.cfg.paths.pools_out.clone(), true)?;
    run.seal()?;

    let segments = corpus::open_segments(&corpus_path, None)?;
    let outcome = corpus::sample_pool(segments, &run.cfg.filter)?;
    for w in &outcome.warnings {
        log::warn!("{}", serde_json::to_string(w).expect("warning serializes"));
    }
    for (name, n) in corpus::write_pools(&out, &outcome.pools)? {
        run.count(name, n);
    }
    let n = write_jsonl_atomic::<Warning, _>(&out.join("warnings.jsonl"), &outcome.warnings)?;
    run.count("warnings", n);
    write_json_atomic(&out.join("stats.json"), &outcome.stats)?;
    run.finish(&out)
}

fn cmd_build_train(
    common: &Common,
    pools_flag: Option<PathBuf>,
    out: Option<PathBuf>,
    n_records: Option<usize>,
    variant: Option<VariantArg>,
    template: Option<TemplateId>,
) -> Result<(), CliError> {
    let mut run = Run::new("build-train", common)?;
    let pools_dir = run.input("pools", pools_flag, run.cfg.paths.pools_out.clone())?;
    let out = output("dataset_out", out, run.cfg.paths.dataset_out.clone(), false)?;
    if let Some(v) = variant {
        run.cfg.policy.variant = match v {
            VariantArg::Balanced => MixtureVariant::Balanced,
            VariantArg::Unbalanced => MixtureVariant::Unbalanced,
        };
    }
    if let Some(t) = template {
        run.cfg.dataset.few_shot_template = t;
    }
    if n_records.is_some() {
        run.cfg.dataset.n_records = n_records;
    }
    run.seal()?;

    let pools = corpus::read_pools(&pools_dir)?;
    let n = run
        .cfg
        .dataset
        .n_records
        .unwrap_or_else(|| run.cfg.filter.per_pair_cap.saturating_mul(pools.len()));
    let opts = BuildOptions {
        few_shot_template: run.cfg.dataset.few_shot_template,
        names: run.cfg.dataset.names(),
    };
    let policy: MixturePolicy = run.cfg.policy;
    let records = dataset::build_training_set(&pools, &policy, n, run.cfg.seed, &opts)?;
    let count = write_jsonl_atomic(&out, &records)?;
    run.count("records", count);
    run.finish(&parent_dir(&out))
}

fn load_corpus_strict(path: &Path) -> Result<Vec<ParallelSegment>, CliError> {
    Ok(corpus::load_segments(path)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_build_eval(
    common: &Common,
    test: Option<PathBuf>,
    dev: Option<PathBuf>,
    out: Option<PathBuf>,
    shots: Option<Vec<usize>>,
    strip_references: bool,
    template: Option<TemplateId>,
) -> Result<(), CliError> {
    let mut run = Run::new("build-eval", common)?;
    let test_path = run.input("test", test, run.cfg.paths.test_in.clone())?;
    let dev_path = run.input("dev", dev, run.cfg.paths.dev_in.clone())?;
    let out = output("eval_out", out, run.cfg.paths.eval_out.clone(), false)?;
    if let Some(s) = shots {
        run.cfg.dataset.eval_shots = s;
    }
    if strip_references {
        run.cfg.dataset.strip_references = true;
    }
    if let Some(t) = template {
        run.cfg.dataset.few_shot_template = t;
    }
    run.seal()?;

    let test_segments = load_corpus_strict(&test_path)?;
    let dev_pools = dataset::group_by_pair(&load_corpus_strict(&dev_path)?);
    let opts = EvalOptions {
        build: BuildOptions {
            few_shot_template: run.cfg.dataset.few_shot_template,
            names: run.cfg.dataset.names(),
        },
        shots: run.cfg.dataset.eval_shots.clone(),
        strip_references: run.cfg.dataset.strip_references,
    };
    let records = dataset::build_eval_set(&test_segments, &dev_pools, run.cfg.seed, &opts)?;
    let count = write_jsonl_atomic(&out, &records)?;
    run.count("records", count);
    run.finish(&parent_dir(&out))
}

struct GenerateOverrides {
    url: Option<String>,
    mode: Option<ModeArg>,
    max_tokens: Option<u32>,
    temperature: Option<f64>,
    concurrency: Option<usize>,
    token_counter: Option<Vec<String>>,
}

fn cmd_generate(
    common: &Common,
    records: Option<PathBuf>,
    out: Option<PathBuf>,
    o: GenerateOverrides,
    resume: bool,
) -> Result<(), CliError> {
    let mut run = Run::new("generate", common)?;
    let records_path = run.input("records", records, run.cfg.paths.eval_out.clone())?;
    let out = output("generations_out", out, run.cfg.paths.generations_out.clone(), false)?;
    if let Some(url) = o.url {
        run.cfg.endpoint.url = url;
    }
    if let Some(m) = o.mode {
        run.cfg.decoding.mode = match m {
            ModeArg::Pretrained => GenerationMode::Pretrained,
            ModeArg::Finetuned => GenerationMode::Finetuned,
        };
    }
    if let Some(v) = o.max_tokens {
        run.cfg.decoding.max_tokens = v;
    }
    if let Some(v) = o.temperature {
        run.cfg.decoding.temperature = v;
    }
    if let Some(v) = o.concurrency {
        run.cfg.endpoint.concurrency = v;
    }
    run.seal()?;

    let counter = o.token_counter.map_or(TokenCounter::Whitespace, TokenCounter::External);
    let records: Vec<InstructionRecord> = read_jsonl(&records_path)?;
    let client = CompletionClient::new(run.cfg.endpoint.clone(), run.cfg.decoding)?;
    let summary = generation::run_batch(&records, &client, &counter, &out, resume)?;
    log::info!(
        "{} rows: {} ok, {} errors, {} reused",
        summary.total,
        summary.ok,
        summary.errors,
        summary.reused
    );
    run.count("rows", summary.total);
    run.count("ok", summary.ok);
    run.count("errors", summary.errors);
    run.finish(&parent_dir(&out))
}

#[derive(Serialize)]
struct Triple<'a> {
    segment_id: String,
    src: &'a str,
    hyp: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

/// Joins generation rows with their evaluation records. Error rows are
/// scored as empty hypotheses so that failures lower the score instead of
/// silently shrinking the test set.
pub fn eval_inputs(
    records: &[InstructionRecord],
    rows: &[GenerationResult],
    segments: Option<&[ParallelSegment]>,
) -> Result<Vec<EvalInput>, CliError> {
    let by_id: HashMap<&str, &ParallelSegment> = segments
        .unwrap_or_default()
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    if rows.len() != records.len() {
        return Err(validation(format!(
            "{} generation rows for {} records",
            rows.len(),
            records.len()
        )));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, (rec, row)) in records.iter().zip(rows).enumerate() {
        if row.index != i || row.segment_id != rec.segment_id || row.shots != rec.n_shots {
            return Err(validation(format!("generation row {i} does not match its record")));
        }
        let spec = templates::parse(&rec.prompt)
            .map_err(|e| validation(format!("record {i} ({}): {e}", rec.segment_id)))?;
        let seg = by_id.get(rec.segment_id.as_str());
        let reference = match seg {
            Some(s) => s.tgt_text.clone(),
            None if !rec.completion.is_empty() => rec.completion.clone(),
            None => {
                return Err(validation(format!(
                    "no reference for {} (records were stripped; pass --segments)",
                    rec.segment_id
                )))
            }
        };
        if row.status == RowStatus::Error {
            log::warn!("scoring failed row {i} ({}) as an empty hypothesis", rec.segment_id);
        }
        out.push(EvalInput {
            segment_id: rec.segment_id.clone(),
            pair: rec.pair.clone(),
            domain: seg.map(|s| s.domain.clone()),
            shots: rec.n_shots,
            source: spec.source,
            reference,
            hypothesis: row.translation.clone(),
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    common: &Common,
    records: Option<PathBuf>,
    generations: Option<PathBuf>,
    segments: Option<PathBuf>,
    scores: Option<PathBuf>,
    system: Option<String>,
    out: Option<PathBuf>,
    emit_triples: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut run = Run::new("score", common)?;
    let records_path = run.input("records", records, run.cfg.paths.eval_out.clone())?;
    let gen_path = run.input("generations", generations, run.cfg.paths.generations_out.clone())?;
    let segments_path = match segments.or(run.cfg.paths.test_in.clone()) {
        Some(p) => Some(run.input("segments", Some(p), None)?),
        None => None,
    };
    let scores_path = match scores.or(run.cfg.paths.scores_in.clone()) {
        Some(p) => Some(run.input("scores", Some(p), None)?),
        None => None,
    };
    let out = output("reports_out", out, run.cfg.paths.reports_out.clone(), true)?;
    if let Some(s) = system {
        run.cfg.analysis.system = s;
    }
    run.seal()?;

    let records: Vec<InstructionRecord> = read_jsonl(&records_path)?;
    let rows: Vec<GenerationResult> = read_jsonl(&gen_path)?;
    let segs = segments_path.as_deref().map(load_corpus_strict).transpose()?;
    let inputs = eval_inputs(&records, &rows, segs.as_deref())?;
    let score_map = scores_path.as_deref().map(metrics::ingest_scores).transpose()?;

    if let Some(path) = emit_triples {
        let triples: Vec<Triple<'_>> = inputs
            .iter()
            .map(|i| Triple {
                segment_id: i.score_key(),
                src: &i.source,
                hyp: &i.hypothesis,
                reference: &i.reference,
            })
            .collect();
        let n = write_jsonl_atomic(&path, &triples)?;
        run.count("triples", n);
    }

    let (evals, report) = metrics::evaluate(&run.cfg.analysis.system, &inputs, score_map.as_ref());
    let n = write_jsonl_atomic(&out.join("evaluations.jsonl"), &evals)?;
    run.count("evaluations", n);
    metrics::write_metric_report(&out.join("metrics.csv"), &report)?;
    run.count("metric_rows", report.len());
    run.finish(&out)
}

struct AnalyzeInputs {
    evaluations: Vec<PathBuf>,
    pairs: Option<PathBuf>,
    metric_reports: Vec<PathBuf>,
    generations: Vec<(String, PathBuf)>,
    records: Option<PathBuf>,
}

struct AnalyzeWhich {
    hallucination: bool,
    deltas: bool,
    aggregate: bool,
    lengths: bool,
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn cmd_analyze(
    common: &Common,
    inputs: AnalyzeInputs,
    out: Option<PathBuf>,
    which: AnalyzeWhich,
    delta_metric: Option<Metric>,
) -> Result<(), CliError> {
    let AnalyzeInputs {
        evaluations: evaluation_paths,
        pairs,
        metric_reports,
        generations,
        records,
    } = inputs;
    let mut run = Run::new("analyze", common)?;
    if (which.deltas || which.aggregate) && evaluation_paths.is_empty() {
        return Err(validation("--deltas and --aggregate need --evaluations"));
    }
    if let Some(p) = &pairs {
        run.input("pairs", Some(p.clone()), None)?;
    }
    for (i, p) in evaluation_paths.iter().enumerate() {
        run.input(&format!("evaluations[{i}]"), Some(p.clone()), None)?;
    }
    for (i, p) in metric_reports.iter().enumerate() {
        run.input(&format!("metric_report[{i}]"), Some(p.clone()), None)?;
    }
    for (name, p) in &generations {
        run.input(&format!("generations[{name}]"), Some(p.clone()), None)?;
    }
    let records_path = if which.lengths {
        Some(run.input("records", records, run.cfg.paths.eval_out.clone())?)
    } else {
        None
    };
    let out = output("reports_out", out, run.cfg.paths.reports_out.clone(), true)?;
    run.seal()?;

    let mut evals: Vec<SegmentEvaluation> = Vec::new();
    for p in &evaluation_paths {
        evals.extend(read_jsonl::<SegmentEvaluation>(p)?);
    }
    let a = run.cfg.analysis.clone();

    if which.hallucination {
        let inputs: Vec<analysis::HallucinationInput> = match &pairs {
            Some(p) => crate::io::read_csv(p)?,
            None => analysis::pair_sentence_bleu(&evals)?,
        };
        let thresholds = analysis::Thresholds {
            hi: a.hallucination_hi,
            lo: a.hallucination_lo,
        };
        let report = analysis::hallucination_rate(&inputs, thresholds);
        analysis::write_hallucination_csv(&out.join("hallucination.csv"), &report)?;
        analysis::write_hallucination_table(&out.join("hallucination_table.csv"), &report)?;
        run.count("hallucination_groups", report.groups.len());
        run.count("hallucination_flagged", report.flagged.len());
    }

    if which.deltas {
        let mut systems: BTreeMap<&str, (Vec<SegmentEvaluation>, BTreeMap<usize, Vec<SegmentEvaluation>>)> =
            BTreeMap::new();
        for e in &evals {
            let entry = systems.entry(e.system.as_str()).or_default();
            if e.shots == 0 {
                entry.0.push(e.clone());
            } else {
                entry.1.entry(e.shots).or_default().push(e.clone());
            }
        }
        let metric = delta_metric.unwrap_or_else(|| {
            if evals.iter().all(|e| e.comet.is_some()) {
                Metric::Comet
            } else {
                log::info!("COMET scores incomplete; computing deltas on sentence BLEU");
                Metric::Bleu
            }
        });
        for (system, (zero, few_by_k)) in &systems {
            let Some((k, few)) = few_by_k.iter().next_back() else {
                continue;
            };
            let deltas = analysis::compute_deltas(zero, few, metric, a.top_k)?;
            let stem = format!("{}.{}shot", file_safe(system), k);
            deltas.write(
                &out.join(format!("deltas.{stem}.csv")),
                &out.join(format!("delta_histogram.{stem}.csv")),
                &out.join(format!("inspection.{stem}.jsonl")),
            )?;
            run.count(format!("deltas.{stem}"), deltas.records.len());
        }
    }

    if which.aggregate {
        let mut rows = analysis::aggregate_report(&evals);
        analysis::write_aggregate_csv(&out.join("aggregate.csv"), &rows)?;
        run.count("aggregate_rows", rows.len());
        if !metric_reports.is_empty() {
            let mut corpus_rows = Vec::new();
            for p in &metric_reports {
                corpus_rows.extend(metrics::read_metric_report(p)?);
            }
            let corpus_rows = analysis::aggregate_from_metric_rows(&corpus_rows);
            rows.retain(|r| {
                !corpus_rows
                    .iter()
                    .any(|c| (&c.pair, &c.system, c.shots, c.metric) == (&r.pair, &r.system, r.shots, r.metric))
            });
            rows.extend(corpus_rows);
        }
        let table = analysis::pivot(&rows);
        analysis::write_pivot_csv(&out.join("table.csv"), &table)?;
        run.count("table_rows", table.len());
    }

    if which.lengths {
        let records: Vec<InstructionRecord> = read_jsonl(records_path.as_deref().expect("checked above"))?;
        let reference_lengths: Vec<usize> = records
            .iter()
            .filter(|r| r.n_shots == 0)
            .map(|r| r.completion.split_whitespace().count())
            .collect();
        let mut results = BTreeMap::new();
        for (name, p) in &generations {
            results.insert(name.clone(), read_jsonl::<GenerationResult>(p)?);
        }
        let report = analysis::length_distribution(&results, &reference_lengths, a.length_bin_width)?;
        report.write(&out.join("lengths_histogram.csv"), &out.join("lengths_summary.csv"))?;
        run.count("length_bins", report.histograms.len());
    }

    run.finish(&out)
}

fn cmd_manifest(
    method: MethodArg,
    lora_r: Option<u32>,
    out: Option<PathBuf>,
    check: Option<PathBuf>,
) -> Result<(), CliError> {
    if let Some(path) = check {
        let text = std::fs::read_to_string(&path).map_err(|e| IoError::io(&path, e))?;
        dataset::TrainingManifest::from_json(&text).map_err(validation)?;
        println!("{}: ok", path.display());
        return Ok(());
    }
    let method = match method {
        MethodArg::Lora => TrainingMethod::Lora,
        MethodArg::FullFt => TrainingMethod::FullFt,
    };
    if lora_r.is_some() && method == TrainingMethod::FullFt {
        return Err(validation("--lora-r only applies to LoRA manifests"));
    }
    let manifest = dataset::emit_manifest(method, lora_r);
    manifest.validate().map_err(validation)?;
    match out {
        Some(path) => write_json_atomic(&path, &manifest)?,
        None => println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes")),
    }
    Ok(())
}

fn cmd_serve_mock(
    addr: &str,
    references: Option<PathBuf>,
    overgenerate: bool,
    rate_limit: usize,
    fail_sources: Vec<String>,
) -> Result<(), CliError> {
    let translations = match references {
        Some(p) => load_corpus_strict(&p)?
            .into_iter()
            .map(|s| (s.src_text, s.tgt_text))
            .collect(),
        None => HashMap::new(),
    };
    let mut responder = MockResponder::reference(translations);
    responder.overgenerate = overgenerate;
    let server = MockServer::bind(addr, responder).map_err(runtime)?;
    server.inject_rate_limits(rate_limit);
    for s in &fail_sources {
        server.fail_source(s);
    }
    eprintln!("mock completions endpoint listening on {}", server.url());
    server.wait();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run(["mtkit", "frobnicate"]), 1);
        assert_eq!(run(["mtkit"]), 1);
    }

    #[test]
    fn version_lists_signatures_and_schemas() {
        let v = version_text();
        assert!(v.contains("tok:13a|smooth:none"));
        assert!(v.contains("nc:6|nw:0"));
        assert!(v.contains("schema instruction_record: 1"));
        assert_eq!(run(["mtkit", "--version"]), 0);
    }

    #[test]
    fn named_paths() {
        assert_eq!(parse_named_path("ft=a/b.jsonl").unwrap(), ("ft".into(), PathBuf::from("a/b.jsonl")));
        assert!(parse_named_path("nope").is_err());
    }
}
