//! Corpus statistics: sentence counts per item and sentence lengths in
//! tokens, with CSV/SVG histogram export.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textseg::{segment_rule, sentences, Document, SegError};
use crate::tokenize::{tokenize, TokenizeError, Vocabulary, TOKENIZER_NAME};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no observations to export")]
    EmptyStats,
    #[error("segmentation failed: {0}")]
    Seg(#[from] SegError),
    #[error("tokenization failed: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: usize,
    pub min: usize,
    pub max: usize,
}

/// Lower median for even counts.
pub fn summarize(values: &[usize]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(Summary {
        median: sorted[(sorted.len() - 1) / 2],
        min: sorted[0],
        max: *sorted.last().unwrap(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_item_sentence_counts: Vec<usize>,
    pub sentence_token_lengths: Vec<usize>,
    pub sentence_count_summary: Summary,
    pub sentence_length_summary: Summary,
    pub malformed: usize,
    pub tokenizer: String,
}

impl CorpusStats {
    pub fn total_sentences(&self) -> usize {
        self.per_item_sentence_counts.iter().sum()
    }
}

/// Associative partial-statistics accumulator: merge order does not affect
/// the result because only exact counts are kept.
#[derive(Debug, Default, Clone)]
pub struct StatsAccumulator {
    pub per_item_sentence_counts: Vec<usize>,
    pub sentence_token_lengths: Vec<usize>,
    pub malformed: usize,
}

impl StatsAccumulator {
    pub fn observe_item(&mut self, vocab: &mut Vocabulary, text: &str) -> Result<(), StatsError> {
        let doc = Document::new("item", text);
        let b = segment_rule(&doc)?;
        self.per_item_sentence_counts.push(b.len());
        for sentence in sentences(&doc, &b) {
            self.sentence_token_lengths.push(tokenize(vocab, sentence)?.len());
        }
        Ok(())
    }

    pub fn merge(&mut self, other: StatsAccumulator) {
        self.per_item_sentence_counts.extend(other.per_item_sentence_counts);
        self.sentence_token_lengths.extend(other.sentence_token_lengths);
        self.malformed += other.malformed;
    }

    pub fn finish(self) -> Result<CorpusStats, StatsError> {
        let count_summary = summarize(&self.per_item_sentence_counts).ok_or(StatsError::EmptyStats)?;
        let length_summary = summarize(&self.sentence_token_lengths).ok_or(StatsError::EmptyStats)?;
        Ok(CorpusStats {
            per_item_sentence_counts: self.per_item_sentence_counts,
            sentence_token_lengths: self.sentence_token_lengths,
            sentence_count_summary: count_summary,
            sentence_length_summary: length_summary,
            malformed: self.malformed,
            tokenizer: TOKENIZER_NAME.to_string(),
        })
    }
}

/// Stream a JSONL dataset, segment each item's `field` text, tokenize each
/// sentence, and aggregate. Malformed records are skipped and counted.
pub fn corpus_stats(
    dataset_path: &Path,
    vocab: &mut Vocabulary,
    field: &str,
) -> Result<CorpusStats, StatsError> {
    let file = std::fs::File::open(dataset_path)?;
    let mut acc = StatsAccumulator::default();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let text = serde_json::from_str::<serde_json::Value>(&line)
            .ok()
            .and_then(|v| v[field].as_str().map(str::to_string))
            .filter(|t| !t.trim().is_empty());
        match text {
            Some(text) => acc.observe_item(vocab, &text)?,
            None => acc.malformed += 1,
        }
    }
    acc.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: usize,
    pub bin_hi: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    /// observations above the zoom threshold, excluded from `bins`
    pub truncated_tail: usize,
}

pub fn histogram(values: &[usize], bin_width: usize, cap: Option<usize>) -> Histogram {
    let bin_width = bin_width.max(1);
    let mut truncated_tail = 0usize;
    let mut kept: Vec<usize> = Vec::new();
    for &v in values {
        match cap {
            Some(c) if v > c => truncated_tail += 1,
            _ => kept.push(v),
        }
    }
    let mut bins = Vec::new();
    if let Some(&max) = kept.iter().max() {
        let n_bins = max / bin_width + 1;
        let mut counts = vec![0usize; n_bins];
        for v in kept {
            counts[v / bin_width] += 1;
        }
        for (i, count) in counts.into_iter().enumerate() {
            bins.push(HistogramBin {
                bin_lo: i * bin_width,
                bin_hi: (i + 1) * bin_width,
                count,
            });
        }
    }
    Histogram {
        bins,
        truncated_tail,
    }
}

/// Value at or below which `pct` percent of observations fall.
pub fn percentile(values: &[usize], pct: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.saturating_sub(1).min(sorted.len() - 1)])
}

fn write_csv(path: &Path, hist: &Histogram) -> Result<(), StatsError> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in &hist.bins {
        out.push_str(&format!("{},{},{}\n", b.bin_lo, b.bin_hi, b.count));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_svg(path: &Path, hist: &Histogram, title: &str) -> Result<(), StatsError> {
    let width = 640usize;
    let height = 360usize;
    let margin = 40usize;
    let max_count = hist.bins.iter().map(|b| b.count).max().unwrap_or(1).max(1);
    let n = hist.bins.len().max(1);
    let bar_w = (width - 2 * margin) / n;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"10\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{margin}\" y=\"16\">{title}</text>\n"
    );
    for (i, b) in hist.bins.iter().enumerate() {
        let h = (b.count * (height - 2 * margin)) / max_count;
        let x = margin + i * bar_w;
        let y = height - margin - h;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"steelblue\"/>\n",
            bar_w.saturating_sub(1).max(1)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Export full-range and zoomed (≤ 95th percentile) histogram pairs for both
/// distributions as CSV + SVG files under `out_dir`.
pub fn export_histograms(
    stats: &CorpusStats,
    out_dir: &Path,
    bin_width: usize,
) -> Result<(), StatsError> {
    if stats.per_item_sentence_counts.is_empty() || stats.sentence_token_lengths.is_empty() {
        return Err(StatsError::EmptyStats);
    }
    std::fs::create_dir_all(out_dir)?;
    let series: [(&str, &[usize]); 2] = [
        ("sentence_counts", &stats.per_item_sentence_counts),
        ("sentence_lengths", &stats.sentence_token_lengths),
    ];
    for (name, values) in series {
        let full = histogram(values, bin_width, None);
        let zoom_cap = percentile(values, 95.0).expect("non-empty");
        let zoomed = histogram(values, bin_width, Some(zoom_cap));
        write_csv(&out_dir.join(format!("{name}_full.csv")), &full)?;
        write_csv(&out_dir.join(format!("{name}_zoom.csv")), &zoomed)?;
        write_svg(
            &out_dir.join(format!("{name}_full.svg")),
            &full,
            &format!("{name} (full, tokenizer: {})", stats.tokenizer),
        )?;
        write_svg(
            &out_dir.join(format!("{name}_zoom.svg")),
            &zoomed,
            &format!(
                "{name} (<=p95, tail {} truncated, tokenizer: {})",
                zoomed.truncated_tail, stats.tokenizer
            ),
        )?;
    }
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "tokenizer": stats.tokenizer,
            "items": stats.per_item_sentence_counts.len(),
            "total_sentences": stats.total_sentences(),
            "malformed": stats.malformed,
            "sentence_count_summary": stats.sentence_count_summary,
            "sentence_length_summary": stats.sentence_length_summary,
        }))
        .expect("serializable"),
    )?;
    Ok(())
}
