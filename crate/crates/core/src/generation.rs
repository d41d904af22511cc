//! Batch client for OpenAI-compatible completion endpoints, with the
//! first-newline post-processing used to measure overgeneration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::InstructionRecord;
use crate::io::{read_jsonl, write_json_atomic, write_jsonl_atomic, IoError};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("endpoint_unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("token counter failed: {0}")]
    TokenCounter(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Base model: the endpoint is asked to stop at the first newline.
    #[default]
    Pretrained,
    /// Instruction-tuned model: generation ends at the model's own EOS.
    Finetuned,
}

impl GenerationMode {
    pub fn stop_sequences(self) -> &'static [&'static str] {
        match self {
            GenerationMode::Pretrained => &["\n"],
            GenerationMode::Finetuned => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finish {
    Eos,
    NewlineTruncated,
    LengthCapped,
}

/// Why the endpoint stopped, as reported in its response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointStop {
    Eos,
    /// A requested stop sequence matched.
    StopSequence(String),
    Length,
}

impl EndpointStop {
    /// Interprets `finish_reason` plus the optional `stop_reason` field that
    /// vLLM-style servers add to name the matched stop string.
    pub fn from_response(finish_reason: Option<&str>, stop_reason: Option<&Value>) -> Self {
        Self::from_reasons(finish_reason, stop_reason.and_then(Value::as_str))
    }

    /// Same as [`EndpointStop::from_response`] for a string `stop_reason`.
    pub fn from_reasons(finish_reason: Option<&str>, stop_reason: Option<&str>) -> Self {
        match (finish_reason, stop_reason) {
            (Some("length"), _) => EndpointStop::Length,
            (_, Some(s)) => EndpointStop::StopSequence(s.to_string()),
            (_, None) => EndpointStop::Eos,
        }
    }
}

/// Strips leading whitespace and cuts at the first line break.
///
/// Any line break in the output, whether the endpoint returned it or stopped
/// on a newline stop sequence, marks the row as `newline_truncated`. Both
/// modes apply the same rule so that an instruction-tuned model that still
/// overgenerates is visible in the statistics.
pub fn postprocess(raw: &str, stop: &EndpointStop) -> (String, Finish) {
    let text = raw.trim_start();
    if let Some(cut) = text.find(['\n', '\r']) {
        return (text[..cut].to_string(), Finish::NewlineTruncated);
    }
    let finish = match stop {
        EndpointStop::Length => Finish::LengthCapped,
        EndpointStop::StopSequence(s) if s.contains('\n') => Finish::NewlineTruncated,
        _ => Finish::Eos,
    };
    (text.to_string(), finish)
}

/// Counts tokens for length statistics.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "command")]
pub enum TokenCounter {
    #[default]
    Whitespace,
    /// External program fed one JSON string per line on stdin, answering
    /// with one integer per line.
    External(Vec<String>),
}

impl TokenCounter {
    pub fn count_all(&self, texts: &[&str]) -> Result<Vec<usize>, GenerationError> {
        match self {
            TokenCounter::Whitespace => Ok(texts.iter().map(|t| t.split_whitespace().count()).collect()),
            TokenCounter::External(cmd) => run_external_counter(cmd, texts),
        }
    }
}

fn run_external_counter(cmd: &[String], texts: &[&str]) -> Result<Vec<usize>, GenerationError> {
    let fail = |m: String| GenerationError::TokenCounter(m);
    let (prog, args) = cmd.split_first().ok_or_else(|| fail("empty command".into()))?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("{prog}: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload: String = texts
        .iter()
        .map(|t| serde_json::to_string(t).expect("string serializes") + "\n")
        .collect();
    let writer = thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let stdout = child.stdout.take().expect("piped stdout");
    let counts: Vec<usize> = BufReader::new(stdout)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| fail(e.to_string()))?;
            l.trim().parse().map_err(|_| fail(format!("bad count line {l:?}")))
        })
        .collect::<Result<_, _>>()?;
    writer
        .join()
        .expect("writer thread")
        .map_err(|e| fail(e.to_string()))?;
    let status = child.wait().map_err(|e| fail(e.to_string()))?;
    if !status.success() {
        return Err(fail(format!("exited with {status}")));
    }
    if counts.len() != texts.len() {
        return Err(fail(format!("{} counts for {} texts", counts.len(), texts.len())));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: Option<String>,
    /// Name of the environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub concurrency: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/completions".into(),
            model: None,
            auth_env: None,
            timeout_secs: 120,
            max_attempts: 5,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub max_tokens: u32,
    /// Zero means greedy decoding.
    pub temperature: f64,
    pub mode: GenerationMode,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 0.0,
            mode: GenerationMode::Pretrained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub index: usize,
    pub segment_id: String,
    pub shots: usize,
    pub status: RowStatus,
    pub error: Option<String>,
    pub raw_output: String,
    pub translation: String,
    pub finish: Option<Finish>,
    pub raw_token_count: usize,
    pub translation_token_count: usize,
}

impl GenerationResult {
    fn matches(&self, index: usize, rec: &InstructionRecord) -> bool {
        self.index == index && self.segment_id == rec.segment_id && self.shots == rec.n_shots
    }
}

#[derive(Debug)]
enum Attempt {
    Done { raw: String, stop: EndpointStop },
    Retry(String),
    Fatal(String),
    Unreachable(String),
}

/// Thread-safe completions client.
pub struct CompletionClient {
    agent: ureq::Agent,
    endpoint: EndpointConfig,
    decoding: DecodingConfig,
    auth: Option<String>,
}

/// Outcome of one request after retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    Completed { raw: String, stop: EndpointStop },
    Failed(String),
    Unreachable(String),
}

impl CompletionClient {
    pub fn new(endpoint: EndpointConfig, decoding: DecodingConfig) -> Result<Self, GenerationError> {
        if endpoint.max_attempts == 0 || endpoint.concurrency == 0 {
            return Err(GenerationError::Config(
                "max_attempts and concurrency must be positive".into(),
            ));
        }
        let auth = match &endpoint.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenerationError::Config(format!("auth environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build();
        Ok(Self {
            agent,
            endpoint,
            decoding,
            auth,
        })
    }

    fn body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "prompt": prompt,
            "max_tokens": self.decoding.max_tokens,
            "temperature": self.decoding.temperature,
        });
        if let Some(model) = &self.endpoint.model {
            body["model"] = json!(model);
        }
        let stop = self.decoding.mode.stop_sequences();
        if !stop.is_empty() {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.endpoint.url);
        if let Some(token) = &self.auth {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => match resp.into_json::<Value>() {
                Ok(v) => parse_completion(&v).map_or_else(Attempt::Fatal, |(raw, stop)| Attempt::Done { raw, stop }),
                Err(e) => Attempt::Retry(format!("invalid_response: {e}")),
            },
            Err(ureq::Error::Status(429, _)) => Attempt::Retry("rate_limited".into()),
            Err(ureq::Error::Status(code, _)) if code >= 500 => Attempt::Retry(format!("http_status{{{code}}}")),
            Err(ureq::Error::Status(code, _)) => Attempt::Fatal(format!("http_status{{{code}}}")),
            Err(ureq::Error::Transport(t)) => match t.kind() {
                ureq::ErrorKind::ConnectionFailed | ureq::ErrorKind::Dns => Attempt::Unreachable(t.to_string()),
                _ => Attempt::Retry(format!("transport: {t}")),
            },
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .endpoint
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.endpoint.backoff_max_ms);
        Duration::from_millis(ms)
    }

    /// Sends one prompt, retrying transient failures with exponential backoff.
    pub fn complete(&self, prompt: &str) -> RequestOutcome {
        let body = self.body(prompt);
        let mut last = String::new();
        for attempt in 0..self.endpoint.max_attempts {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done { raw, stop } => {
                    if attempt > 0 {
                        log::info!("request succeeded after {attempt} retries");
                    }
                    return RequestOutcome::Completed { raw, stop };
                }
                Attempt::Fatal(e) => return RequestOutcome::Failed(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
                Attempt::Unreachable(e) => {
                    log::warn!("attempt {} could not connect: {e}", attempt + 1);
                    if attempt + 1 == self.endpoint.max_attempts {
                        return RequestOutcome::Unreachable(e);
                    }
                    last = e;
                }
            }
        }
        RequestOutcome::Failed(format!("max_retries_exceeded (last: {last})"))
    }
}

fn parse_completion(v: &Value) -> Result<(String, EndpointStop), String> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| "invalid_response: no choices".to_string())?;
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| "invalid_response: missing text".to_string())?;
    let stop = EndpointStop::from_response(
        choice.get("finish_reason").and_then(Value::as_str),
        choice.get("stop_reason"),
    );
    Ok((text.to_string(), stop))
}

/// Summary of a batch run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub ok: usize,
    pub errors: usize,
    pub reused: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ResumeMarker {
    total: usize,
    completed: usize,
    reason: String,
}

pub fn resume_marker_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".resume");
    output.with_file_name(name)
}

fn build_row(
    index: usize,
    rec: &InstructionRecord,
    outcome: Result<(String, EndpointStop), String>,
    counter: &TokenCounter,
) -> Result<GenerationResult, GenerationError> {
    let mut row = GenerationResult {
        index,
        segment_id: rec.segment_id.clone(),
        shots: rec.n_shots,
        status: RowStatus::Error,
        error: None,
        raw_output: String::new(),
        translation: String::new(),
        finish: None,
        raw_token_count: 0,
        translation_token_count: 0,
    };
    match outcome {
        Ok((raw, stop)) => {
            let (translation, finish) = postprocess(&raw, &stop);
            let counts = counter.count_all(&[&raw, &translation])?;
            row.status = RowStatus::Ok;
            row.finish = Some(finish);
            row.raw_token_count = counts[0];
            row.translation_token_count = counts[1];
            row.raw_output = raw;
            row.translation = translation;
        }
        Err(e) => row.error = Some(e),
    }
    Ok(row)
}

/// Generates a translation for every record and writes results to `output`
/// in input order.
///
/// With `resume`, successful rows already present in `output` are kept and
/// only missing or failed rows are requested again. If the endpoint becomes
/// unreachable the rows finished so far are written together with a
/// `.resume` marker and the batch returns `EndpointUnreachable`.
pub fn run_batch(
    records: &[InstructionRecord],
    client: &CompletionClient,
    counter: &TokenCounter,
    output: &Path,
    resume: bool,
) -> Result<BatchSummary, GenerationError> {
    let marker = resume_marker_path(output);
    let mut done: BTreeMap<usize, GenerationResult> = BTreeMap::new();
    if resume && output.exists() {
        for row in read_jsonl::<GenerationResult>(output)? {
            let keep = row.status == RowStatus::Ok
                && records.get(row.index).is_some_and(|rec| row.matches(row.index, rec));
            if keep {
                done.insert(row.index, row);
            }
        }
    }
    let reused = done.len();
    let pending: Vec<usize> = (0..records.len()).filter(|i| !done.contains_key(i)).collect();

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let unreachable: Mutex<Option<String>> = Mutex::new(None);
    let fresh: Mutex<Vec<GenerationResult>> = Mutex::new(Vec::with_capacity(pending.len()));
    let counter_error: Mutex<Option<GenerationError>> = Mutex::new(None);
    let workers = client.endpoint.concurrency.min(pending.len().max(1));

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&index) = pending.get(slot) else { return };
                let rec = &records[index];
                let outcome = match client.complete(&rec.prompt) {
                    RequestOutcome::Completed { raw, stop } => Ok((raw, stop)),
                    RequestOutcome::Failed(e) => Err(e),
                    RequestOutcome::Unreachable(e) => {
                        abort.store(true, Ordering::SeqCst);
                        unreachable.lock().unwrap().get_or_insert(e);
                        return;
                    }
                };
                match build_row(index, rec, outcome, counter) {
                    Ok(row) => fresh.lock().unwrap().push(row),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        counter_error.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });

    for row in fresh.into_inner().unwrap() {
        done.insert(row.index, row);
    }
    let count = write_jsonl_atomic(output, done.values())?;
    let failure = unreachable.into_inner().unwrap();
    if let Some(e) = counter_error.into_inner().unwrap() {
        write_marker(&marker, records.len(), count, &e.to_string())?;
        return Err(e);
    }
    if let Some(e) = failure {
        write_marker(&marker, records.len(), count, &format!("endpoint_unreachable: {e}"))?;
        return Err(GenerationError::EndpointUnreachable(e));
    }
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| IoError::io(&marker, e))?;
    }
    let ok = done.values().filter(|r| r.status == RowStatus::Ok).count();
    Ok(BatchSummary {
        total: count,
        ok,
        errors: count - ok,
        reused,
    })
}

fn write_marker(path: &Path, total: usize, completed: usize, reason: &str) -> Result<(), IoError> {
    write_json_atomic(
        path,
        &ResumeMarker {
            total,
            completed,
            reason: reason.to_string(),
        },
    )
}
