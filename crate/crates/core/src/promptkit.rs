//! Few-shot prompt assembly with sentence delimiters, SFT dataset
//! transformation, and the pause-token baseline transform.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::delimit::{insert_at_sentences, DelimiterSpec};
use crate::textseg::{segment_rule, Document, SegError};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("need {needed} exemplars but only {got} provided")]
    InsufficientExemplars { needed: usize, got: usize },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("segmentation failed: {0}")]
    Seg(#[from] SegError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Answer extraction convention for a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// Number after the last "####", commas stripped.
    Gsm8kHash,
    /// Innermost brace content of the last boxed expression.
    MathBoxed,
    /// Last standalone letter A-J.
    ChoiceLetter,
    /// Whitespace/article/case-normalized free text.
    DropFree,
    /// Trimmed completion as-is.
    Raw,
}

/// Base (plain) vs seg (sentence-delimited) prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Base,
    Seg,
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Self::Base),
            "seg" => Ok(Self::Seg),
            other => Err(format!("unknown mode {other:?} (expected base|seg)")),
        }
    }
}

/// Whether the evaluation setting is few-shot prompting or a fine-tuned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Icl,
    Sft,
}

/// Per-benchmark evaluation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub dataset: String,
    pub n_shot: usize,
    pub cot: bool,
    pub answer_format: AnswerFormat,
    pub stop_sequences: Vec<String>,
}

impl TaskTemplate {
    /// Built-in n-shot/CoT settings per benchmark. `large_model` selects the
    /// reduced shot count used for large models on GSM8k under ICL.
    pub fn builtin(dataset: &str, regime: Regime, large_model: bool) -> Result<Self, PromptError> {
        let qa_stop = vec!["\nQuestion:".to_string()];
        let (n_shot, cot, answer_format, stop) = match dataset {
            "mmlu" => (
                if regime == Regime::Icl { 4 } else { 0 },
                true,
                AnswerFormat::ChoiceLetter,
                qa_stop,
            ),
            "mmlu_pro" => (5, true, AnswerFormat::ChoiceLetter, qa_stop),
            "gsm8k" => (
                match (regime, large_model) {
                    (Regime::Icl, true) => 4,
                    _ => 8,
                },
                true,
                AnswerFormat::Gsm8kHash,
                qa_stop,
            ),
            "math" => (4, true, AnswerFormat::MathBoxed, qa_stop),
            "drop" => (3, false, AnswerFormat::DropFree, qa_stop),
            "gpqa" => (0, true, AnswerFormat::ChoiceLetter, qa_stop),
            "humaneval" => (0, false, AnswerFormat::Raw, vec![]),
            other => return Err(PromptError::UnknownDataset(other.to_string())),
        };
        Ok(TaskTemplate {
            dataset: dataset.to_string(),
            n_shot,
            cot,
            answer_format,
            stop_sequences: stop,
        })
    }
}

/// Which parts of the prompt receive delimiters in seg mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegScope {
    #[default]
    Both,
    QuestionsOnly,
    AnswersOnly,
}

/// An assembled few-shot context plus query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prompt {
    pub context: String,
    pub query: String,
    pub mode: PromptMode,
    pub delimiter: Option<DelimiterSpec>,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}{}", self.context, self.query)
    }
}

/// Segment `text` and terminate every sentence with the delimiter. Texts that
/// are empty after trimming pass through unchanged.
pub fn delimit_text(text: &str, d: &DelimiterSpec) -> Result<String, PromptError> {
    if text.trim().is_empty() {
        return Ok(text.to_string());
    }
    let doc = Document::new("inline", text);
    let b = segment_rule(&doc)?;
    Ok(insert_at_sentences(&doc, &b, d).0)
}

/// Assemble a few-shot prompt. In seg mode both exemplar questions and
/// answers, and the query, are sentence-delimited (restrict via `scope`).
pub fn build_icl_prompt_scoped(
    exemplars: &[(String, String)],
    query: &str,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
    scope: SegScope,
) -> Result<Prompt, PromptError> {
    if exemplars.len() < tmpl.n_shot {
        return Err(PromptError::InsufficientExemplars {
            needed: tmpl.n_shot,
            got: exemplars.len(),
        });
    }
    let seg_q = mode == PromptMode::Seg && scope != SegScope::AnswersOnly;
    let seg_a = mode == PromptMode::Seg && scope != SegScope::QuestionsOnly;
    let mut context = String::new();
    for (q, a) in exemplars.iter().take(tmpl.n_shot) {
        let q = if seg_q { delimit_text(q, d)? } else { q.clone() };
        let a = if seg_a { delimit_text(a, d)? } else { a.clone() };
        context.push_str(&format!("Question: {q}\nAnswer: {a}\n\n"));
    }
    let rendered_query = if seg_q {
        delimit_text(query, d)?
    } else {
        query.to_string()
    };
    let query = if tmpl.n_shot == 0 {
        rendered_query
    } else {
        format!("Question: {rendered_query}\nAnswer:")
    };
    Ok(Prompt {
        context,
        query,
        mode,
        delimiter: (mode == PromptMode::Seg).then(|| d.clone()),
    })
}

pub fn build_icl_prompt(
    exemplars: &[(String, String)],
    query: &str,
    tmpl: &TaskTemplate,
    mode: PromptMode,
    d: &DelimiterSpec,
) -> Result<Prompt, PromptError> {
    build_icl_prompt_scoped(exemplars, query, tmpl, mode, d, SegScope::Both)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PausePlacement {
    #[default]
    Suffix,
    Prefix,
}

/// Append (or prepend) `k` space-separated pause tokens.
pub fn pause_transform_at(text: &str, k: usize, pause_literal: &str, at: PausePlacement) -> String {
    if k == 0 {
        return text.to_string();
    }
    let pauses: Vec<&str> = std::iter::repeat(pause_literal).take(k).collect();
    match at {
        PausePlacement::Suffix => format!("{} {}", text, pauses.join(" ")),
        PausePlacement::Prefix => format!("{} {}", pauses.join(" "), text),
    }
}

pub fn pause_transform(text: &str, k: usize, pause_literal: &str) -> String {
    pause_transform_at(text, k, pause_literal, PausePlacement::Suffix)
}

/// Input schema adapter selected by the CLI `--format` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    /// Already-normalized records: {id, category, prompt, response}.
    #[default]
    Normalized,
    /// Benchmark-style records: {id?, question, answer}.
    Qa,
}

impl std::str::FromStr for InputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "qa" => Ok(Self::Qa),
            other => Err(format!("unknown input format {other:?} (expected normalized|qa)")),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransformReport {
    pub read: usize,
    pub dropped_by_category: usize,
    pub malformed: usize,
    pub written: usize,
    pub malformed_lines: Vec<usize>,
}

fn normalize_record(mut record: Value, format: InputFormat, line_no: usize) -> Option<Value> {
    if format == InputFormat::Qa {
        let obj = record.as_object_mut()?;
        if let Some(q) = obj.remove("question") {
            obj.insert("prompt".into(), q);
        }
        if let Some(a) = obj.remove("answer") {
            obj.insert("response".into(), a);
        }
        obj.entry("id").or_insert_with(|| json!(format!("line-{line_no}")));
        obj.entry("category").or_insert_with(|| json!(""));
    }
    let obj = record.as_object()?;
    let ok = ["id", "category", "prompt", "response"]
        .iter()
        .all(|k| obj.get(*k).is_some_and(Value::is_string));
    ok.then_some(record)
}

/// Stream a normalized JSONL instruction dataset, drop filtered categories,
/// delimit surviving prompts and responses, and write the transformed records
/// plus a `train_config.json` sidecar next to the output file.
pub fn transform_sft_dataset(
    in_path: &Path,
    out_path: &Path,
    d: &DelimiterSpec,
    filters: &[String],
    format: InputFormat,
) -> Result<TransformReport, PromptError> {
    let input = std::fs::File::open(in_path)?;
    let reader = std::io::BufReader::new(input);
    let mut writer = BufWriter::new(std::fs::File::create(out_path)?);
    let mut report = TransformReport::default();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.read += 1;
        let parsed: Option<Value> = serde_json::from_str(&line)
            .ok()
            .and_then(|v| normalize_record(v, format, line_no + 1));
        let Some(mut record) = parsed else {
            report.malformed += 1;
            report.malformed_lines.push(line_no + 1);
            continue;
        };
        let category = record["category"].as_str().unwrap_or_default().to_string();
        if filters.iter().any(|f| f == &category) {
            report.dropped_by_category += 1;
            continue;
        }
        let prompt = record["prompt"].as_str().unwrap_or_default().to_string();
        let response = record["response"].as_str().unwrap_or_default().to_string();
        let obj = record.as_object_mut().expect("validated object");
        obj.insert("prompt".into(), json!(delimit_text(&prompt, d)?));
        obj.insert("response".into(), json!(delimit_text(&response, d)?));
        obj.insert("delimiter".into(), json!(d.literal));
        writeln!(writer, "{}", serde_json::to_string(&record).expect("serializable"))?;
        report.written += 1;
    }
    writer.flush()?;

    let sidecar = out_path.with_file_name("train_config.json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&train_config()).unwrap())?;
    Ok(report)
}

/// Reference fine-tuning configuration emitted alongside transformed datasets
/// for downstream trainers; this toolkit never trains.
pub fn train_config() -> Value {
    json!({
        "trainer": {
            "use_flash_attn": true,
            "max_seq_length": 2048,
            "train_batch_size": 128,
            "learning_rate": 5.0e-06,
            "lr_scheduler_type": "linear",
            "warmup_ratio": 0.03,
            "weight_decay": 0.0,
            "num_train_epochs": 1
        },
        "deepspeed": {
            "zero_stage": 2,
            "gradient_clipping": 1.0,
            "offload": "none"
        }
    })
}
