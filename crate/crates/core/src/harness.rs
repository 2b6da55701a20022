//! Template testing: populate, generate through a provider, score JSON format-following.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::taxonomy::JsonAttribute;
use crate::template::{PromptTemplate, TemplateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("missing binding for placeholder {0:?}")]
    MissingBinding(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    Http(u16),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("no scripted output for {0}")]
    MockMissing(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("no outputs to score")]
    NoOutputs,
    #[error("variant {tag} has placeholders {found:?}, expected {expected:?}")]
    VariantPlaceholderMismatch { tag: String, expected: Vec<String>, found: Vec<String> },
}

impl From<TemplateError> for HarnessError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::MissingBinding(name) => HarnessError::MissingBinding(name),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, backoff_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub token_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub temperature: f64,
    /// Location of the completion text in the response body.
    pub response_pointer: String,
    /// When set, sent as a leading system message.
    pub system_prompt: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            token_env: "OPENAI_API_KEY".into(),
            max_in_flight: 4,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            temperature: 0.0,
            response_pointer: "/choices/0/message/content".into(),
            system_prompt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub template_id: String,
    pub variant: String,
    pub input_id: String,
}

impl std::fmt::Display for RunKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.template_id, self.input_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub model: Option<String>,
    pub finish_reason: Option<String>,
    pub retries: u32,
}

pub trait Provider: Sync {
    fn complete(&self, key: &RunKey, prompt: &str) -> Result<Completion, HarnessError>;

    /// Whether results depend on a remote model (and so cannot be replayed).
    fn is_live(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub key: RunKey,
    pub output: String,
    #[serde(skip)]
    pub latency: Duration,
    pub model: Option<String>,
    pub finish_reason: Option<String>,
    pub retries: u32,
}

pub fn generate(key: &RunKey, prompt: &str, provider: &dyn Provider) -> Result<GenerationResult, HarnessError> {
    let started = Instant::now();
    let c = provider.complete(key, prompt)?;
    Ok(GenerationResult {
        key: key.clone(),
        output: c.text,
        latency: started.elapsed(),
        model: c.model,
        finish_reason: c.finish_reason,
        retries: c.retries,
    })
}

/// Chat-completions style HTTP endpoint.
pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, HarnessError> {
        if cfg.endpoint.trim().is_empty() {
            return Err(HarnessError::Config("endpoint is empty".into()));
        }
        if cfg.model.trim().is_empty() {
            return Err(HarnessError::Config("model is empty".into()));
        }
        if cfg.max_in_flight == 0 {
            return Err(HarnessError::Config("max_in_flight must be at least 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &self.cfg.system_prompt {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        json!({"model": self.cfg.model, "messages": messages, "temperature": self.cfg.temperature})
    }

    fn once(&self, body: &str, token: Option<&str>) -> Result<Result<Completion, HarnessError>, HarnessError> {
        let mut req = self.agent.post(&self.cfg.endpoint).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        // Ok(Err) is final, Err is retryable
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Ok(Err(HarnessError::Timeout)),
            Err(e) => return Err(HarnessError::BadResponse(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(HarnessError::Http(status));
        }
        if status != 200 {
            return Ok(Err(HarnessError::Http(status)));
        }
        let raw = resp.body_mut().read_to_string().map_err(|e| HarnessError::BadResponse(e.to_string()))?;
        let v: Value = match serde_json::from_str(&raw) {
            Ok(v) => v,
            Err(e) => return Ok(Err(HarnessError::BadResponse(e.to_string()))),
        };
        let Some(text) = v.pointer(&self.cfg.response_pointer).and_then(Value::as_str) else {
            return Ok(Err(HarnessError::BadResponse(format!("no text at {}", self.cfg.response_pointer))));
        };
        Ok(Ok(Completion {
            text: text.to_string(),
            model: v.get("model").and_then(Value::as_str).map(str::to_string),
            finish_reason: v.pointer("/choices/0/finish_reason").and_then(Value::as_str).map(str::to_string),
            retries: 0,
        }))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, _key: &RunKey, prompt: &str) -> Result<Completion, HarnessError> {
        let body = self.request_body(prompt).to_string();
        let token = std::env::var(&self.cfg.token_env).ok().filter(|t| !t.is_empty());
        let mut retries = 0;
        loop {
            match self.once(&body, token.as_deref()) {
                Ok(done) => return done.map(|c| Completion { retries, ..c }),
                Err(e) if retries >= self.cfg.retry.max_retries => {
                    return Err(HarnessError::ExhaustedRetries { attempts: retries + 1, last: e.to_string() })
                }
                Err(_) => {
                    retries += 1;
                    std::thread::sleep(Duration::from_millis(self.cfg.retry.backoff_ms * retries as u64));
                }
            }
        }
    }

    fn is_live(&self) -> bool {
        true
    }
}

/// Replays scripted outputs keyed by template id and input id.
pub enum MockProvider {
    /// `<dir>/<template_id>/<input_id>.txt`
    Dir(PathBuf),
    Map(BTreeMap<(String, String), String>),
}

impl MockProvider {
    pub fn from_map<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = ((S, S), S)>,
        S: Into<String>,
    {
        Self::Map(entries.into_iter().map(|((t, i), o)| ((t.into(), i.into()), o.into())).collect())
    }
}

impl Provider for MockProvider {
    fn complete(&self, key: &RunKey, _prompt: &str) -> Result<Completion, HarnessError> {
        let text = match self {
            Self::Dir(dir) => std::fs::read_to_string(dir.join(&key.template_id).join(format!("{}.txt", key.input_id)))
                .map_err(|_| HarnessError::MockMissing(key.to_string()))?,
            Self::Map(m) => m
                .get(&(key.template_id.clone(), key.input_id.clone()))
                .cloned()
                .ok_or_else(|| HarnessError::MockMissing(key.to_string()))?,
        };
        Ok(Completion { text, model: Some("mock".into()), finish_reason: Some("stop".into()), retries: 0 })
    }
}

/// Named binding set, e.g. `("input-1", {"document": "..."})`.
pub type BindingSet = (String, BTreeMap<String, String>);

pub fn populate(template: &PromptTemplate, bindings: &[BindingSet]) -> Result<Vec<String>, HarnessError> {
    bindings.iter().map(|(_, b)| Ok(template.render(b)?.text)).collect()
}

/// Runs jobs with at most `max_in_flight` concurrent provider calls. Results keep job order.
pub fn run_bounded(
    jobs: &[(RunKey, String)],
    provider: &dyn Provider,
    max_in_flight: usize,
) -> Vec<Result<GenerationResult, HarnessError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<GenerationResult, HarnessError>>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..max_in_flight.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((key, prompt)) = jobs.get(i) else { break };
                let r = generate(key, prompt, provider);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(Option::unwrap).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extracted {
    pub candidate: String,
    pub fenced: bool,
    /// Non-whitespace outside the one stripped fence pair.
    pub surrounding_text: bool,
}

/// Strips at most one code-fence pair (``` or ```lang) wrapping the output.
pub fn extract_json(output: &str) -> Extracted {
    let trimmed = output.trim();
    if let Some(after) = trimmed.strip_prefix("```") {
        let line_end = after.find('\n').unwrap_or(after.len());
        let tag = &after[..line_end];
        let body_start =
            if tag.trim().chars().all(|c| c.is_ascii_alphanumeric() || "_+-".contains(c)) { line_end } else { 0 };
        if let Some(close) = after[body_start..].rfind("```") {
            let body = &after[body_start..body_start + close];
            let rest = &after[body_start + close + 3..];
            return Extracted {
                candidate: body.trim().to_string(),
                fenced: true,
                surrounding_text: !rest.trim().is_empty(),
            };
        }
    }
    Extracted { candidate: trimmed.to_string(), fenced: false, surrounding_text: false }
}

fn parse_object(candidate: &str) -> Option<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(candidate) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedJsonSchema {
    pub required: BTreeSet<String>,
    /// Keys with description text; always a subset of `required`.
    pub described: BTreeMap<String, String>,
}

impl ExpectedJsonSchema {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(keys: I) -> Self {
        Self { required: keys.into_iter().map(Into::into).collect(), described: BTreeMap::new() }
    }

    pub fn from_attributes(attrs: &[JsonAttribute]) -> Self {
        let mut s = Self::default();
        for a in attrs {
            s.required.insert(a.name.clone());
            if let Some(d) = &a.description {
                s.described.insert(a.name.clone(), d.clone());
            }
        }
        s
    }
}

/// 1 iff the output is exactly one JSON object, optionally inside one code fence.
/// Keys are not checked.
pub fn binary_format_following(output: &str, _schema: &ExpectedJsonSchema) -> u8 {
    let e = extract_json(output);
    u8::from(!e.surrounding_text && parse_object(&e.candidate).is_some())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradedRubric {
    pub start: f64,
    pub parse_failure: f64,
    pub key_set_mismatch: f64,
    pub missing_keys: f64,
    pub extraneous_text: f64,
    pub floor: f64,
}

impl Default for GradedRubric {
    fn default() -> Self {
        Self {
            start: 5.0,
            parse_failure: 2.0,
            key_set_mismatch: 1.0,
            missing_keys: 0.5,
            extraneous_text: 0.5,
            floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDetail {
    pub parsed: bool,
    pub fenced: bool,
    /// Text outside the JSON, or an output that did not parse at all.
    pub extraneous_text: bool,
    pub missing_keys: Vec<String>,
    pub extra_keys: Vec<String>,
}

pub fn inspect_output(output: &str, schema: &ExpectedJsonSchema) -> (OutputDetail, Option<BTreeSet<String>>) {
    let e = extract_json(output);
    let obj = parse_object(&e.candidate);
    let keys: Option<BTreeSet<String>> = obj.map(|m| m.keys().cloned().collect());
    let present = keys.clone().unwrap_or_default();
    let detail = OutputDetail {
        parsed: keys.is_some(),
        fenced: e.fenced,
        extraneous_text: e.surrounding_text || keys.is_none(),
        missing_keys: schema.required.difference(&present).cloned().collect(),
        extra_keys: if schema.required.is_empty() {
            vec![]
        } else {
            present.difference(&schema.required).cloned().collect()
        },
    };
    (detail, keys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatFollowReport {
    pub binary_rate: f64,
    pub graded: f64,
    pub details: Vec<OutputDetail>,
}

/// Deterministic 1–5 proxy for format consistency across one template's outputs.
pub fn graded_format_following(
    outputs: &[String],
    schema: &ExpectedJsonSchema,
    rubric: &GradedRubric,
) -> Result<FormatFollowReport, HarnessError> {
    if outputs.is_empty() {
        return Err(HarnessError::NoOutputs);
    }
    let inspected: Vec<_> = outputs.iter().map(|o| inspect_output(o, schema)).collect();
    let mut score = rubric.start;
    if inspected.iter().any(|(d, _)| !d.parsed) {
        score -= rubric.parse_failure;
    }
    let key_sets: BTreeSet<&BTreeSet<String>> = inspected.iter().filter_map(|(_, k)| k.as_ref()).collect();
    if key_sets.len() > 1 {
        score -= rubric.key_set_mismatch;
    }
    for (d, _) in &inspected {
        if !d.missing_keys.is_empty() {
            score -= rubric.missing_keys;
        }
        if d.extraneous_text {
            score -= rubric.extraneous_text;
        }
    }
    let binary = outputs.iter().map(|o| binary_format_following(o, schema) as usize).sum::<usize>();
    Ok(FormatFollowReport {
        binary_rate: binary as f64 / outputs.len() as f64,
        graded: score.clamp(rubric.floor, rubric.start),
        details: inspected.into_iter().map(|(d, _)| d).collect(),
    })
}

/// Optional content-quality scorer; not used unless supplied.
pub trait Judge: Sync {
    fn score(&self, prompt: &str, output: &str) -> Result<f64, HarnessError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub tag: String,
    pub template_id: String,
    pub runs: usize,
    pub failed_runs: usize,
    pub binary_rate: f64,
    pub graded: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_mean: Option<f64>,
    pub details: Vec<OutputDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rubric: GradedRubric,
    pub inputs: Vec<String>,
    pub variants: Vec<VariantReport>,
}

pub struct CompareOptions<'a> {
    pub max_in_flight: usize,
    pub rubric: GradedRubric,
    pub judge: Option<&'a dyn Judge>,
}

impl Default for CompareOptions<'_> {
    fn default() -> Self {
        Self { max_in_flight: 4, rubric: GradedRubric::default(), judge: None }
    }
}

pub fn compare_patterns(
    variants: &[(String, PromptTemplate)],
    bindings: &[BindingSet],
    schema: &ExpectedJsonSchema,
    provider: &dyn Provider,
    opts: &CompareOptions,
) -> Result<ComparisonReport, HarnessError> {
    let names = |t: &PromptTemplate| -> Vec<String> {
        t.placeholder_names().into_iter().map(str::to_string).collect::<BTreeSet<_>>().into_iter().collect()
    };
    if let Some((_, first)) = variants.first() {
        let expected = names(first);
        for (tag, t) in variants {
            let found = names(t);
            if found != expected {
                return Err(HarnessError::VariantPlaceholderMismatch { tag: tag.clone(), expected, found });
            }
        }
    }
    let mut jobs = Vec::new();
    for (tag, t) in variants {
        for (prompt, (input_id, _)) in populate(t, bindings)?.into_iter().zip(bindings) {
            jobs.push((RunKey { template_id: t.id.clone(), variant: tag.clone(), input_id: input_id.clone() }, prompt));
        }
    }
    let results = run_bounded(&jobs, provider, opts.max_in_flight);

    let mut reports = Vec::new();
    for (vi, (tag, t)) in variants.iter().enumerate() {
        let range = vi * bindings.len()..(vi + 1) * bindings.len();
        let mut outputs = Vec::new();
        let mut prompts = Vec::new();
        let mut failed = 0;
        for (r, (_, prompt)) in results[range.clone()].iter().zip(&jobs[range]) {
            match r {
                Ok(g) => {
                    outputs.push(g.output.clone());
                    prompts.push(prompt);
                }
                Err(HarnessError::MockMissing(k)) => return Err(HarnessError::MockMissing(k.clone())),
                Err(_) => failed += 1,
            }
        }
        let scored = graded_format_following(&outputs, schema, &opts.rubric)?;
        let judge_mean = match opts.judge {
            Some(j) => {
                let mut total = 0.0;
                for (prompt, out) in prompts.iter().zip(&outputs) {
                    total += j.score(prompt, out)?;
                }
                Some(total / outputs.len() as f64)
            }
            None => None,
        };
        reports.push(VariantReport {
            tag: tag.clone(),
            template_id: t.id.clone(),
            runs: bindings.len(),
            failed_runs: failed,
            binary_rate: scored.binary_rate,
            graded: scored.graded,
            judge_mean,
            details: scored.details,
        });
    }
    Ok(ComparisonReport {
        rubric: opts.rubric.clone(),
        inputs: bindings.iter().map(|(id, _)| id.clone()).collect(),
        variants: reports,
    })
}

impl ComparisonReport {
    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| Variant | Template | Runs | Binary rate | Graded (1-5) |\n|---|---|---:|---:|---:|\n");
        for v in &self.variants {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {:.2} |",
                v.tag, v.template_id, v.runs, v.binary_rate, v.graded
            );
        }
        let r = &self.rubric;
        let _ = writeln!(
            out,
            "\nGraded score is an automatic proxy: start {}, -{} any parse failure, -{} key sets differ, \
             -{} per output missing keys, -{} per output with extraneous text, floor {}.",
            r.start, r.parse_failure, r.key_set_mismatch, r.missing_keys, r.extraneous_text, r.floor
        );
        out
    }
}
