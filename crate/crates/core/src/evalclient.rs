//! Base-vs-seg evaluation against a chat-completions endpoint: completion
//! client with retry/backoff, answer extraction and exact-match scoring,
//! bounded-concurrency dataset runs, delta reports, and the prob/CoT
//! protocol split for multiple-choice tasks.

use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::delimit::DelimiterSpec;
use crate::promptkit::{
    build_icl_prompt, AnswerFormat, Prompt, PromptError, PromptMode, TaskTemplate,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    EndpointUnreachable { attempts: u32, last: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned status {0}")]
    HttpStatus(u16),
    #[error("endpoint does not expose token logprobs")]
    LogprobsUnsupported,
    #[error("dataset contains no items")]
    EmptyDataset,
    #[error("reports cover different datasets or item sets")]
    DatasetMismatch,
    #[error("invalid endpoint config: {0}")]
    InvalidEndpoint(String),
    #[error("dataset parse failure at line {line}: {message}")]
    DatasetParse { line: usize, message: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn default_max_tokens() -> u32 {
    512
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_concurrency() -> usize {
    4
}
fn default_retry_base_ms() -> u64 {
    100
}

/// An opaque external model behind a chat-completions wire protocol.
/// The API key is read from the named environment variable only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env_var: None,
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            stop_sequences: vec![],
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_concurrency: default_max_concurrency(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.temperature < 0.0 {
            return Err(EvalError::InvalidEndpoint("temperature must be >= 0".into()));
        }
        if self.max_concurrency < 1 {
            return Err(EvalError::InvalidEndpoint("max_concurrency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let content = std::fs::read_to_string(path)?;
        let ep: ModelEndpoint = serde_json::from_str(&content)
            .map_err(|e| EvalError::InvalidEndpoint(e.to_string()))?;
        ep.validate()?;
        Ok(ep)
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

fn request_once(
    ep: &ModelEndpoint,
    body: &Value,
) -> Result<Value, (bool, Option<u16>, String)> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(ep.timeout_ms))
        .build()
        .map_err(|e| (false, None, e.to_string()))?;
    let url = format!("{}/v1/chat/completions", ep.base_url.trim_end_matches('/'));
    let mut req = client.post(&url).json(body);
    if let Some(key) = ep.api_key() {
        req = req.bearer_auth(key);
    }
    match req.send() {
        Ok(resp) => {
            let status = resp.status().as_u16();
            if status == 200 {
                resp.json::<Value>()
                    .map_err(|e| (false, Some(200), e.to_string()))
            } else {
                Err((retryable(status), Some(status), format!("status {status}")))
            }
        }
        Err(e) => Err((true, None, e.to_string())),
    }
}

fn request_with_retries(ep: &ModelEndpoint, body: &Value) -> Result<Value, EvalError> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match request_once(ep, body) {
            Ok(v) => return Ok(v),
            Err((can_retry, status, message)) => {
                if can_retry && attempts <= ep.max_retries {
                    let backoff = ep.retry_base_ms.saturating_mul(1u64 << (attempts - 1).min(8));
                    std::thread::sleep(Duration::from_millis(backoff));
                    continue;
                }
                return Err(match status {
                    Some(429) => EvalError::RateLimited { attempts },
                    Some(200) => EvalError::MalformedResponse(message),
                    Some(s) if s >= 500 => EvalError::EndpointUnreachable {
                        attempts,
                        last: message,
                    },
                    Some(s) => EvalError::HttpStatus(s),
                    None => EvalError::EndpointUnreachable {
                        attempts,
                        last: message,
                    },
                });
            }
        }
    }
}

fn completion_body(ep: &ModelEndpoint, content: &str, logprobs: bool) -> Value {
    let mut body = serde_json::json!({
        "model": ep.model_name,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": ep.max_tokens,
        "temperature": ep.temperature,
    });
    if !ep.stop_sequences.is_empty() {
        body["stop"] = serde_json::json!(ep.stop_sequences);
    }
    if logprobs {
        body["logprobs"] = serde_json::json!(true);
        body["max_tokens"] = serde_json::json!(1);
    }
    body
}

fn completion_text(response: &Value) -> Result<String, EvalError> {
    let choice = response["choices"]
        .as_array()
        .and_then(|c| c.first())
        .ok_or_else(|| EvalError::MalformedResponse("missing choices[0]".into()))?;
    choice["message"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .map(str::to_string)
        .ok_or_else(|| EvalError::MalformedResponse("missing completion text".into()))
}

fn truncate_at_stops(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// Request a completion for the prompt, retrying transient failures with
/// exponential backoff and truncating at the endpoint's stop sequences.
pub fn complete(ep: &ModelEndpoint, p: &Prompt) -> Result<String, EvalError> {
    complete_text(ep, &p.text())
}

pub fn complete_text(ep: &ModelEndpoint, content: &str) -> Result<String, EvalError> {
    let body = completion_body(ep, content, false);
    let response = request_with_retries(ep, &body)?;
    let text = completion_text(&response)?;
    Ok(truncate_at_stops(&text, &ep.stop_sequences))
}

/// Canonical numeric rendering: "35.0" and "35" become the same string.
fn canonical_number(s: &str) -> Option<String> {
    let cleaned = s.trim().trim_start_matches('+');
    if cleaned.is_empty() {
        return None;
    }
    let v: f64 = cleaned.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    if v == v.trunc() && v.abs() < 1e15 {
        Some(format!("{}", v as i64))
    } else {
        Some(format!("{v}"))
    }
}

fn extract_gsm8k(completion: &str) -> Option<String> {
    let tail = completion.rsplit("####").next()?;
    if tail.len() == completion.len() {
        return None; // no "####" marker at all
    }
    let mut number = String::new();
    let mut seen_digit = false;
    for c in tail.chars() {
        match c {
            '0'..='9' => {
                seen_digit = true;
                number.push(c);
            }
            ',' if seen_digit => {} // thousands separator
            '.' if seen_digit && !number.contains('.') => number.push(c),
            '-' if !seen_digit && number.is_empty() => number.push(c),
            _ if seen_digit => break,
            _ if c.is_whitespace() => continue,
            _ if number == "-" => {
                number.clear();
            }
            _ => continue,
        }
    }
    let number = number.trim_end_matches('.');
    seen_digit.then(|| number.to_string())
}

fn extract_boxed(completion: &str) -> Option<String> {
    let markers = ["\\boxed{", "\\fbox{"];
    let (start, marker) = markers
        .iter()
        .filter_map(|m| completion.rfind(m).map(|i| (i, *m)))
        .max_by_key(|(i, _)| *i)?;
    let inner_start = start + marker.len();
    let mut depth = 1usize;
    let mut end = None;
    for (i, c) in completion[inner_start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(inner_start + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let content = &completion[inner_start..end?];
    if content.contains("\\boxed{") || content.contains("\\fbox{") {
        extract_boxed(content)
    } else {
        let trimmed = content.trim();
        (!trimmed.is_empty()).then(|| trimmed.to_string())
    }
}

fn extract_choice_letter(completion: &str) -> Option<String> {
    let chars: Vec<char> = completion.chars().collect();
    let mut last = None;
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='J').contains(&c) {
            continue;
        }
        let left_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let right_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if left_ok && right_ok {
            last = Some(c.to_string());
        }
    }
    last
}

fn normalize_free(s: &str) -> String {
    let lowered = s.to_lowercase();
    let despaced: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { ' ' })
        .collect();
    despaced
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(|w| canonical_number(w).unwrap_or_else(|| w.trim_matches('.').to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pull a normalized answer out of a raw completion; `None` means nothing
/// matched and the item scores incorrect.
pub fn extract_answer(completion: &str, fmt: AnswerFormat) -> Option<String> {
    match fmt {
        AnswerFormat::Gsm8kHash => extract_gsm8k(completion),
        AnswerFormat::MathBoxed => extract_boxed(completion),
        AnswerFormat::ChoiceLetter => extract_choice_letter(completion),
        AnswerFormat::DropFree => {
            let n = normalize_free(completion);
            (!n.is_empty()).then_some(n)
        }
        AnswerFormat::Raw => {
            let t = completion.trim();
            (!t.is_empty()).then(|| t.to_string())
        }
    }
}

fn normalize_for_match(s: &str, fmt: AnswerFormat) -> String {
    match fmt {
        AnswerFormat::DropFree => normalize_free(s),
        AnswerFormat::ChoiceLetter => s.trim().to_uppercase(),
        _ => s.trim().replace(',', ""),
    }
}

/// Exact match after format-specific normalization; numeric strings compare
/// as values ("35" == "35.0").
pub fn exact_match(pred: Option<&str>, gold: &str, fmt: AnswerFormat) -> bool {
    let Some(pred) = pred else { return false };
    let p = normalize_for_match(pred, fmt);
    let g = normalize_for_match(gold, fmt);
    if p == g {
        return true;
    }
    match (canonical_number(&p), canonical_number(&g)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// One dataset item. `gold` accepts a single string or a list of
/// acceptable alternatives (DROP-style multi-answer gold sets).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub question: String,
    #[serde(deserialize_with = "string_or_seq")]
    pub gold: Vec<String>,
    #[serde(default)]
    pub exemplars: Option<Vec<(String, String)>>,
}

fn string_or_seq<'de, D>(deserializer: D) -> Result<Vec<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut items = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| EvalError::DatasetParse {
            line: line_no + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub mode: PromptMode,
    pub raw_completion: String,
    pub extracted: Option<String>,
    pub gold: Vec<String>,
    pub correct: bool,
    pub latency_ms: u64,
    pub token_usage: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: PromptMode,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy_pct: f64,
    pub failures: usize,
    pub records: Vec<EvalRecord>,
}

/// 100·correct/total rounded half-up to two decimals.
pub fn accuracy_pct(n_correct: usize, n_items: usize) -> f64 {
    (100.0 * n_correct as f64 / n_items as f64 * 100.0).round() / 100.0
}

/// The prompt run_eval issues for an item; exposed so tests and mock scripts
/// can reproduce it exactly.
pub fn render_eval_prompt(
    item: &EvalItem,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
) -> Result<Prompt, PromptError> {
    let empty = Vec::new();
    let exemplars = item.exemplars.as_ref().unwrap_or(&empty);
    build_icl_prompt(exemplars, &item.question, tmpl, mode, d)
}

/// Evaluate every item with bounded request parallelism. Per-item endpoint
/// errors score as incorrect with an error note instead of aborting the run.
pub fn run_eval(
    dataset_path: &Path,
    ep: &ModelEndpoint,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
) -> Result<EvalReport, EvalError> {
    let items = load_dataset(dataset_path)?;
    run_eval_items(&items, ep, tmpl, mode, d)
}

pub fn run_eval_items(
    items: &[EvalItem],
    ep: &ModelEndpoint,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    ep.validate()?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<EvalRecord>>> = Mutex::new(vec![None; items.len()]);
    let workers = ep.max_concurrency.min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let record = eval_one(&items[idx], ep, tmpl, mode, d);
                slots.lock().unwrap()[idx] = Some(record);
            });
        }
    });

    let records: Vec<EvalRecord> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect();
    let n_correct = records.iter().filter(|r| r.correct).count();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok(EvalReport {
        dataset: tmpl.dataset.clone(),
        mode,
        n_items: records.len(),
        n_correct,
        accuracy_pct: accuracy_pct(n_correct, records.len()),
        failures,
        records,
    })
}

fn eval_one(
    item: &EvalItem,
    ep: &ModelEndpoint,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
) -> EvalRecord {
    let started = Instant::now();
    let outcome = render_eval_prompt(item, tmpl, mode, d)
        .map_err(EvalError::from)
        .and_then(|p| complete(ep, &p));
    let latency_ms = started.elapsed().as_millis() as u64;
    match outcome {
        Ok(raw) => {
            let extracted = extract_answer(&raw, tmpl.answer_format);
            let correct = item
                .gold
                .iter()
                .any(|g| exact_match(extracted.as_deref(), g, tmpl.answer_format));
            EvalRecord {
                item_id: item.id.clone(),
                mode,
                raw_completion: raw,
                extracted,
                gold: item.gold.clone(),
                correct,
                latency_ms,
                token_usage: None,
                error: None,
            }
        }
        Err(e) => EvalRecord {
            item_id: item.id.clone(),
            mode,
            raw_completion: String::new(),
            extracted: None,
            gold: item.gold.clone(),
            correct: false,
            latency_ms,
            token_usage: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub base_pct: f64,
    pub seg_pct: f64,
    pub delta: f64,
}

impl DeltaRow {
    /// "+7.73%↑", "-0.24%↓", "+0.00%"
    pub fn formatted(&self) -> String {
        let marker = if self.delta > 0.0 {
            "\u{2191}"
        } else if self.delta < 0.0 {
            "\u{2193}"
        } else {
            ""
        };
        format!("{:+.2}%{}", self.delta, marker)
    }
}

/// Signed base→seg accuracy difference, two decimals.
pub fn delta_report(base: &EvalReport, seg: &EvalReport) -> Result<DeltaRow, EvalError> {
    if base.dataset != seg.dataset {
        return Err(EvalError::DatasetMismatch);
    }
    let mut base_ids: Vec<&str> = base.records.iter().map(|r| r.item_id.as_str()).collect();
    let mut seg_ids: Vec<&str> = seg.records.iter().map(|r| r.item_id.as_str()).collect();
    base_ids.sort_unstable();
    seg_ids.sort_unstable();
    if base_ids != seg_ids {
        return Err(EvalError::DatasetMismatch);
    }
    Ok(delta_from_pcts(&base.dataset, base.accuracy_pct, seg.accuracy_pct))
}

/// Pure-arithmetic delta over already-computed accuracy percentages.
pub fn delta_from_pcts(dataset: &str, base_pct: f64, seg_pct: f64) -> DeltaRow {
    let delta = ((seg_pct - base_pct) * 100.0).round() / 100.0;
    DeltaRow {
        dataset: dataset.to_string(),
        base_pct,
        seg_pct,
        delta,
    }
}

/// Markdown comparison table: one row per dataset, columns base | seg | Δ.
pub fn delta_table_markdown(rows: &[DeltaRow]) -> String {
    let mut out = String::from("| Dataset | base | seg | Δ |\n|---|---|---|---|\n");
    for row in rows {
        out.push_str(&format!(
            "| {} | {:.2} | {:.2} | {} |\n",
            row.dataset,
            row.base_pct,
            row.seg_pct,
            row.formatted()
        ));
    }
    out
}

/// Score each choice letter by its logprob as a one-token continuation of the
/// question prompt; ties break toward the earliest letter.
pub fn prob_protocol(
    ep: &ModelEndpoint,
    question: &str,
    choices: &[String],
) -> Result<char, EvalError> {
    let prompt = render_choice_prompt(question, choices);
    let body = completion_body(ep, &prompt, true);
    let response = request_with_retries(ep, &body)?;
    let top = response["choices"]
        .as_array()
        .and_then(|c| c.first())
        .and_then(|c| c["logprobs"]["top_logprobs"].as_object())
        .ok_or(EvalError::LogprobsUnsupported)?;
    let mut best: Option<(char, f64)> = None;
    for (i, _) in choices.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        let lp = top
            .get(&letter.to_string())
            .and_then(Value::as_f64)
            .unwrap_or(f64::NEG_INFINITY);
        let better = match best {
            None => lp > f64::NEG_INFINITY || i == 0,
            Some((_, b)) => lp > b,
        };
        if better {
            best = Some((letter, lp));
        }
    }
    best.map(|(l, _)| l).ok_or(EvalError::LogprobsUnsupported)
}

/// Render a multiple-choice question with lettered options.
pub fn render_choice_prompt(question: &str, choices: &[String]) -> String {
    let mut out = format!("Question: {question}\n");
    for (i, c) in choices.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", (b'A' + i as u8) as char, c));
    }
    out.push_str("Answer:");
    out
}

/// Zero-shot CoT prompt the cot protocol issues for a question.
pub fn render_cot_prompt(question: &str, tmpl: &TaskTemplate) -> String {
    if tmpl.cot {
        format!("Question: {question}\nAnswer: Let's think step by step.")
    } else {
        format!("Question: {question}\nAnswer:")
    }
}

/// Generate a reasoning chain, then extract the final choice letter.
/// `None` means nothing extractable; the item scores incorrect.
pub fn cot_protocol(
    ep: &ModelEndpoint,
    question: &str,
    tmpl: &TaskTemplate,
) -> Result<Option<char>, EvalError> {
    let raw = complete_text(ep, &render_cot_prompt(question, tmpl))?;
    Ok(extract_answer(&raw, AnswerFormat::ChoiceLetter)
        .and_then(|s| s.chars().next()))
}

/// Two-row prob/CoT comparison across model columns. With exactly two columns
/// an Improvement column (second minus first) is appended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub columns: Vec<String>,
    pub prob_pct: Vec<f64>,
    pub cot_pct: Vec<f64>,
}

impl ProtocolReport {
    pub fn to_markdown(&self) -> String {
        let improvement = self.columns.len() == 2;
        let mut header = String::from("| |");
        for c in &self.columns {
            header.push_str(&format!(" {c} |"));
        }
        if improvement {
            header.push_str(" Improvement |");
        }
        let cols = self.columns.len() + 1 + usize::from(improvement);
        let rule = format!("|{}\n", "---|".repeat(cols));
        let mut out = format!("{header}\n{rule}");
        for (name, values) in [("Prob", &self.prob_pct), ("CoT", &self.cot_pct)] {
            let mut row = format!("| {name} |");
            for v in values {
                row.push_str(&format!(" {v:.2} |"));
            }
            if improvement {
                let imp = ((values[1] - values[0]) * 100.0).round() / 100.0;
                row.push_str(&format!(" {imp:+.2}% |"));
            }
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}
