//! Python bindings: sentence segmentation, delimiter insertion, prompt
//! assembly, answer scoring, dataset transformation, and attention analysis.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use segdelim::attnlens::{self, Aggregation, TokenRoles};
use segdelim::corpusstats;
use segdelim::delimit::{self, spec_for};
use segdelim::evalclient;
use segdelim::promptkit::{self, InputFormat, PromptMode, Regime, TaskTemplate};
use segdelim::textseg::{self, Document};
use segdelim::tokenize;
use segdelim::AnswerFormat;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_format(fmt: &str) -> PyResult<AnswerFormat> {
    match fmt {
        "gsm8k_hash" => Ok(AnswerFormat::Gsm8kHash),
        "math_boxed" => Ok(AnswerFormat::MathBoxed),
        "choice_letter" => Ok(AnswerFormat::ChoiceLetter),
        "drop_free" => Ok(AnswerFormat::DropFree),
        "raw" => Ok(AnswerFormat::Raw),
        other => Err(err(format!(
            "unknown answer format {other:?} (gsm8k_hash|math_boxed|choice_letter|drop_free|raw)"
        ))),
    }
}

/// Sentence-end character offsets of `text`.
#[pyfunction]
fn segment(text: &str) -> PyResult<Vec<usize>> {
    let doc = Document::new("py", text);
    let b = textseg::segment_rule(&doc).map_err(err)?;
    Ok(b.offsets().to_vec())
}

/// The sentences of `text`; concatenating them reconstructs `text`.
#[pyfunction]
fn sentences(text: &str) -> PyResult<Vec<String>> {
    let doc = Document::new("py", text);
    let b = textseg::segment_rule(&doc).map_err(err)?;
    Ok(textseg::sentences(&doc, &b)
        .into_iter()
        .map(str::to_string)
        .collect())
}

/// Insert `delimiter` after every sentence.
#[pyfunction]
#[pyo3(signature = (text, delimiter = "<seg>"))]
fn insert_sentence_delimiters(text: &str, delimiter: &str) -> PyResult<String> {
    promptkit::delimit_text(text, &spec_for(delimiter)).map_err(err)
}

/// Insert `delimiter` after every `n` tokens (and after the final token).
#[pyfunction]
#[pyo3(signature = (text, n, delimiter = "<seg>"))]
fn insert_fixed_chunks(text: &str, n: usize, delimiter: &str) -> PyResult<String> {
    let d = spec_for(delimiter);
    let mut v = tokenize::Vocabulary::new();
    v.register_special(&d.literal).ok();
    let tt = tokenize::tokenize(&mut v, text).map_err(err)?;
    Ok(delimit::insert_fixed_chunks(&tt, n, &d).map_err(err)?.0)
}

/// Insert `count` delimiters at seeded-random token gaps.
#[pyfunction]
#[pyo3(signature = (text, count, seed, delimiter = "<seg>"))]
fn insert_random(text: &str, count: usize, seed: u64, delimiter: &str) -> PyResult<String> {
    let d = spec_for(delimiter);
    let mut v = tokenize::Vocabulary::new();
    v.register_special(&d.literal).ok();
    let tt = tokenize::tokenize(&mut v, text).map_err(err)?;
    Ok(delimit::insert_random(&tt, count, seed, &d).map_err(err)?.0)
}

/// Remove every inserted `delimiter`; inverse of the insert functions when
/// the literal does not occur in the source text.
#[pyfunction]
#[pyo3(signature = (text, delimiter = "<seg>"))]
fn strip_delimiters(text: &str, delimiter: &str) -> String {
    delimit::strip_delimiters(text, &spec_for(delimiter))
}

/// The built-in delimiter catalog as (literal, class) pairs.
#[pyfunction]
fn delimiter_catalog() -> Vec<(String, String)> {
    delimit::catalog()
        .into_iter()
        .map(|d| {
            let class = serde_json::to_value(d.class)
                .expect("serializable")
                .as_str()
                .expect("string variant")
                .to_string();
            (d.literal, class)
        })
        .collect()
}

/// Reference whitespace-and-punctuation tokenizer.
#[pyclass]
struct Vocabulary {
    inner: tokenize::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[new]
    fn new() -> Self {
        Vocabulary {
            inner: tokenize::Vocabulary::new(),
        }
    }

    fn register_special(&mut self, literal: &str) -> PyResult<u32> {
        self.inner.register_special(literal).map_err(err)
    }

    fn freeze(&mut self) {
        self.inner.freeze();
    }

    fn id_of(&self, token: &str) -> Option<u32> {
        self.inner.id_of(token)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Tokenize `text`, growing the vocabulary unless frozen. Returns
    /// (token, id, char_start, char_end) tuples.
    fn tokenize(&mut self, text: &str) -> PyResult<Vec<(String, u32, usize, usize)>> {
        let tt = tokenize::tokenize(&mut self.inner, text).map_err(err)?;
        Ok(tt
            .tokens
            .into_iter()
            .map(|t| (t.text, t.id, t.span.0, t.span.1))
            .collect())
    }
}

/// Assemble a few-shot prompt for a built-in benchmark template.
#[pyfunction]
#[pyo3(signature = (dataset, query, exemplars, mode = "seg", delimiter = "<seg>", sft = false, large_model = false, shots = None))]
#[allow(clippy::too_many_arguments)]
fn build_prompt(
    dataset: &str,
    query: &str,
    exemplars: Vec<(String, String)>,
    mode: &str,
    delimiter: &str,
    sft: bool,
    large_model: bool,
    shots: Option<usize>,
) -> PyResult<String> {
    let regime = if sft { Regime::Sft } else { Regime::Icl };
    let mut tmpl = TaskTemplate::builtin(dataset, regime, large_model).map_err(err)?;
    if let Some(shots) = shots {
        tmpl.n_shot = shots;
    }
    let mode = PromptMode::from_str(mode).map_err(err)?;
    let prompt = promptkit::build_icl_prompt(&exemplars, query, &tmpl, mode, &spec_for(delimiter))
        .map_err(err)?;
    Ok(prompt.text())
}

/// Extract the final answer from a completion under the given format.
#[pyfunction]
fn extract_answer(completion: &str, fmt: &str) -> PyResult<Option<String>> {
    Ok(evalclient::extract_answer(completion, parse_format(fmt)?))
}

/// Format-aware exact match of an extracted prediction against a gold answer.
#[pyfunction]
fn exact_match(pred: Option<String>, gold: &str, fmt: &str) -> PyResult<bool> {
    Ok(evalclient::exact_match(pred.as_deref(), gold, parse_format(fmt)?))
}

/// 100·correct/total rounded half-up to two decimals.
#[pyfunction]
fn accuracy_pct(n_correct: usize, n_items: usize) -> f64 {
    evalclient::accuracy_pct(n_correct, n_items)
}

/// Signed base→seg delta like "+7.73%↑".
#[pyfunction]
fn format_delta(base_pct: f64, seg_pct: f64) -> String {
    evalclient::delta_from_pcts("py", base_pct, seg_pct).formatted()
}

/// Transform a JSONL instruction dataset into delimiter-inserted SFT data.
/// Returns the conservation report as a dict.
#[pyfunction]
#[pyo3(signature = (in_path, out_path, delimiter = "<seg>", filters = vec![], format = "normalized"))]
fn transform_sft_dataset<'py>(
    py: Python<'py>,
    in_path: PathBuf,
    out_path: PathBuf,
    delimiter: &str,
    filters: Vec<String>,
    format: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let format = InputFormat::from_str(format).map_err(err)?;
    let report = promptkit::transform_sft_dataset(
        &in_path,
        &out_path,
        &spec_for(delimiter),
        &filters,
        format,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("read", report.read)?;
    out.set_item("dropped_by_category", report.dropped_by_category)?;
    out.set_item("malformed", report.malformed)?;
    out.set_item("written", report.written)?;
    out.set_item("malformed_lines", report.malformed_lines)?;
    Ok(out)
}

/// Segment and tokenize a JSONL corpus; returns summary statistics.
#[pyfunction]
#[pyo3(signature = (path, field = "text"))]
fn corpus_stats<'py>(py: Python<'py>, path: PathBuf, field: &str) -> PyResult<Bound<'py, PyDict>> {
    let mut vocab = tokenize::Vocabulary::new();
    let stats = corpusstats::corpus_stats(&path, &mut vocab, field).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("items", stats.per_item_sentence_counts.len())?;
    out.set_item("total_sentences", stats.total_sentences())?;
    out.set_item("malformed", stats.malformed)?;
    out.set_item("tokenizer", &stats.tokenizer)?;
    out.set_item(
        "sentence_count_summary",
        (
            stats.sentence_count_summary.median,
            stats.sentence_count_summary.min,
            stats.sentence_count_summary.max,
        ),
    )?;
    out.set_item(
        "sentence_length_summary",
        (
            stats.sentence_length_summary.median,
            stats.sentence_length_summary.min,
            stats.sentence_length_summary.max,
        ),
    )?;
    Ok(out)
}

/// Mean attention ratio of delimiter positions vs own-sentence tokens, read
/// from a tensor file and a roles file.
#[pyfunction]
fn relative_attention<'py>(
    py: Python<'py>,
    tensor_path: PathBuf,
    roles_path: PathBuf,
) -> PyResult<Bound<'py, PyDict>> {
    let t = attnlens::load_attention(&tensor_path).map_err(err)?;
    let roles = TokenRoles::load(&roles_path).map_err(err)?;
    let report =
        attnlens::relative_delimiter_attention(&t, &roles, Aggregation::MeanAll).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("ratio", report.mean_all.ratio)?;
    out.set_item("delim_score", report.mean_all.delim_score)?;
    out.set_item("sent_avg_score", report.mean_all.sent_avg_score)?;
    out.set_item("note", report.aggregation_note)?;
    Ok(out)
}

/// The reference fine-tuning configuration as a JSON string.
#[pyfunction]
fn train_config() -> String {
    serde_json::to_string_pretty(&promptkit::train_config()).expect("serializable")
}

#[pymodule]
fn segdelim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(sentences, m)?)?;
    m.add_function(wrap_pyfunction!(insert_sentence_delimiters, m)?)?;
    m.add_function(wrap_pyfunction!(insert_fixed_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(insert_random, m)?)?;
    m.add_function(wrap_pyfunction!(strip_delimiters, m)?)?;
    m.add_function(wrap_pyfunction!(delimiter_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_pct, m)?)?;
    m.add_function(wrap_pyfunction!(format_delta, m)?)?;
    m.add_function(wrap_pyfunction!(transform_sft_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(relative_attention, m)?)?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_class::<Vocabulary>()?;
    Ok(())
}
