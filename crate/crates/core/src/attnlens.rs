//! Attention tensor ingestion, relative delimiter-attention statistics, and
//! deterministic heatmap rendering.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delimit;

const MAGIC: &[u8; 5] = b"ATTN1";
const ROW_SUM_TOL: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum AttnError {
    #[error("bad magic: expected ATTN1")]
    BadMagic,
    #[error("dimension mismatch: header declares {expected} floats, payload has {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("attention row (layer {layer}, head {head}, query {query}) sums to {sum}, not 1")]
    RowSumViolation {
        layer: usize,
        head: usize,
        query: usize,
        sum: f32,
    },
    #[error("negative weight at (layer {layer}, head {head}, query {query})")]
    NegativeWeight {
        layer: usize,
        head: usize,
        query: usize,
    },
    #[error("roles cover {roles} positions but tensor has {seq_len}")]
    RoleCountMismatch { roles: usize, seq_len: usize },
    #[error("sentence {0} has {1} sentence-final positions, expected exactly 1")]
    BadSentenceFinals(u32, usize),
    #[error("no delimiter positions in roles")]
    NoDelimiters,
    #[error("no sentence-final positions in roles")]
    NoSentenceFinals,
    #[error("layer/head index out of range")]
    IndexOutOfRange,
    #[error("label count {labels} does not match seq_len {seq_len}")]
    LabelCountMismatch { labels: usize, seq_len: usize },
    #[error("malformed roles file: {0}")]
    MalformedRolesFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// L×H×T×T row-stochastic attention weights, row-major
/// (layer-major, then head, then query row).
#[derive(Debug, Clone)]
pub struct AttentionTensor {
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    weights: Vec<f32>,
}

impl AttentionTensor {
    /// Validate shape, non-negativity, and row sums (1 within 1e-4; causal
    /// zero rows above the diagonal are permitted inside a row).
    pub fn new(
        layers: usize,
        heads: usize,
        seq_len: usize,
        weights: Vec<f32>,
    ) -> Result<Self, AttnError> {
        let expected = layers * heads * seq_len * seq_len;
        if weights.len() != expected {
            return Err(AttnError::DimMismatch {
                expected,
                actual: weights.len(),
            });
        }
        let t = AttentionTensor {
            layers,
            heads,
            seq_len,
            weights,
        };
        for layer in 0..layers {
            for head in 0..heads {
                for query in 0..seq_len {
                    let row = t.row(layer, head, query);
                    if row.iter().any(|&w| w < 0.0) {
                        return Err(AttnError::NegativeWeight { layer, head, query });
                    }
                    let sum: f32 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(AttnError::RowSumViolation {
                            layer,
                            head,
                            query,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f32] {
        let t = self.seq_len;
        let base = ((layer * self.heads + head) * t + query) * t;
        &self.weights[base..base + t]
    }

    pub fn save(&self, path: &Path) -> Result<(), AttnError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        for dim in [self.layers as u32, self.heads as u32, self.seq_len as u32, 0u32] {
            file.write_all(&dim.to_le_bytes())?;
        }
        for w in &self.weights {
            file.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Read and validate a tensor file: magic "ATTN1", four u32 LE dims
/// (L, H, T, reserved), then L·H·T·T f32 LE weights.
pub fn load_attention(path: &Path) -> Result<AttentionTensor, AttnError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 5];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AttnError::BadMagic);
    }
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    let dims: Vec<usize> = header
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (layers, heads, seq_len) = (dims[0], dims[1], dims[2]);
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(AttnError::DimMismatch {
            expected: layers * heads * seq_len * seq_len,
            actual: payload.len() / 4,
        });
    }
    let weights: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AttentionTensor::new(layers, heads, seq_len, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenLabel {
    Delimiter,
    PunctDelimiter,
    SentenceFinal,
    Ordinary,
}

/// Per-position role labels plus sentence membership.
#[derive(Debug, Clone)]
pub struct TokenRoles {
    pub labels: Vec<TokenLabel>,
    pub sentence_ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RoleEntry {
    pos: usize,
    label: TokenLabel,
    sentence_id: u32,
}

impl TokenRoles {
    /// Validate against a tensor: one label per position, exactly one
    /// sentence-final position per sentence.
    pub fn validate(&self, seq_len: usize) -> Result<(), AttnError> {
        if self.labels.len() != seq_len || self.sentence_ids.len() != seq_len {
            return Err(AttnError::RoleCountMismatch {
                roles: self.labels.len(),
                seq_len,
            });
        }
        let mut sentences: std::collections::BTreeMap<u32, usize> = Default::default();
        for (label, &sid) in self.labels.iter().zip(&self.sentence_ids) {
            if *label != TokenLabel::Delimiter {
                *sentences.entry(sid).or_default() += usize::from(*label == TokenLabel::SentenceFinal);
            }
        }
        for (sid, finals) in sentences {
            if finals != 1 {
                return Err(AttnError::BadSentenceFinals(sid, finals));
            }
        }
        Ok(())
    }

    /// Roles file: JSON array of {pos, label, sentence_id}.
    pub fn load(path: &Path) -> Result<Self, AttnError> {
        let content = std::fs::read_to_string(path)?;
        let mut entries: Vec<RoleEntry> = serde_json::from_str(&content)
            .map_err(|e| AttnError::MalformedRolesFile(e.to_string()))?;
        entries.sort_by_key(|e| e.pos);
        for (i, e) in entries.iter().enumerate() {
            if e.pos != i {
                return Err(AttnError::MalformedRolesFile(format!(
                    "positions not contiguous from 0 (missing {i})"
                )));
            }
        }
        Ok(TokenRoles {
            labels: entries.iter().map(|e| e.label).collect(),
            sentence_ids: entries.iter().map(|e| e.sentence_id).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AttnError> {
        let entries: Vec<RoleEntry> = self
            .labels
            .iter()
            .zip(&self.sentence_ids)
            .enumerate()
            .map(|(pos, (label, &sentence_id))| RoleEntry {
                pos,
                label: *label,
                sentence_id,
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&entries).expect("serializable"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    MeanAll,
    PerLayer,
}

/// Comparison baseline for the sentence-average score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    /// Non-delimiter positions of the query's own sentence.
    #[default]
    OwnSentence,
    /// All non-delimiter positions at or before the query.
    WholePrefix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelativeAttention {
    pub delim_score: f64,
    pub sent_avg_score: f64,
    pub punct_score: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelativeAttentionReport {
    pub mean_all: RelativeAttention,
    /// Present under per-layer aggregation.
    pub per_layer: Option<Vec<RelativeAttention>>,
    pub aggregation_note: String,
}

fn head_scores(
    t: &AttentionTensor,
    roles: &TokenRoles,
    layer: usize,
    head: usize,
    baseline: Baseline,
) -> (f64, f64, f64, usize) {
    let delim_positions: Vec<usize> = (0..t.seq_len)
        .filter(|&p| roles.labels[p] == TokenLabel::Delimiter)
        .collect();
    let punct_positions: Vec<usize> = (0..t.seq_len)
        .filter(|&p| roles.labels[p] == TokenLabel::PunctDelimiter)
        .collect();
    let (mut delim_sum, mut sent_sum, mut punct_sum, mut sentences) = (0.0, 0.0, 0.0, 0usize);
    for q in 0..t.seq_len {
        if roles.labels[q] != TokenLabel::SentenceFinal {
            continue;
        }
        let delims: Vec<usize> = delim_positions.iter().copied().filter(|&p| p <= q).collect();
        if delims.is_empty() {
            continue; // nothing before the first delimiter to measure against
        }
        let row = t.row(layer, head, q);
        let mean = |positions: &[usize]| -> f64 {
            positions.iter().map(|&p| row[p] as f64).sum::<f64>() / positions.len() as f64
        };
        let sent_positions: Vec<usize> = (0..=q)
            .filter(|&p| roles.labels[p] != TokenLabel::Delimiter)
            .filter(|&p| match baseline {
                Baseline::OwnSentence => roles.sentence_ids[p] == roles.sentence_ids[q],
                Baseline::WholePrefix => true,
            })
            .collect();
        let puncts: Vec<usize> = punct_positions.iter().copied().filter(|&p| p <= q).collect();
        delim_sum += mean(&delims);
        sent_sum += if sent_positions.is_empty() { 0.0 } else { mean(&sent_positions) };
        punct_sum += if puncts.is_empty() { 0.0 } else { mean(&puncts) };
        sentences += 1;
    }
    (delim_sum, sent_sum, punct_sum, sentences)
}

fn finish(delim: f64, sent: f64, punct: f64, n: f64) -> RelativeAttention {
    let delim_score = delim / n;
    let sent_avg_score = sent / n;
    let punct_score = punct / n;
    let ratio = if sent_avg_score == 0.0 {
        0.0
    } else {
        delim_score / sent_avg_score
    };
    RelativeAttention {
        delim_score,
        sent_avg_score,
        punct_score,
        ratio,
    }
}

/// Mean attention each sentence's final token pays to delimiter positions at
/// or before it, against the mean attention to the non-delimiter tokens of its
/// own sentence, averaged over sentences then heads and layers.
pub fn relative_delimiter_attention(
    t: &AttentionTensor,
    roles: &TokenRoles,
    agg: Aggregation,
) -> Result<RelativeAttentionReport, AttnError> {
    relative_delimiter_attention_with(t, roles, agg, Baseline::OwnSentence)
}

pub fn relative_delimiter_attention_with(
    t: &AttentionTensor,
    roles: &TokenRoles,
    agg: Aggregation,
    baseline: Baseline,
) -> Result<RelativeAttentionReport, AttnError> {
    roles.validate(t.seq_len)?;
    if !roles.labels.contains(&TokenLabel::Delimiter) {
        return Err(AttnError::NoDelimiters);
    }
    if !roles.labels.contains(&TokenLabel::SentenceFinal) {
        return Err(AttnError::NoSentenceFinals);
    }

    let mut per_layer = Vec::with_capacity(t.layers);
    let (mut all_delim, mut all_sent, mut all_punct, mut all_n) = (0.0, 0.0, 0.0, 0.0);
    for layer in 0..t.layers {
        let (mut d, mut s, mut p, mut n) = (0.0, 0.0, 0.0, 0.0);
        for head in 0..t.heads {
            let (hd, hs, hp, hn) = head_scores(t, roles, layer, head, baseline);
            d += hd;
            s += hs;
            p += hp;
            n += hn as f64;
        }
        all_delim += d;
        all_sent += s;
        all_punct += p;
        all_n += n;
        if n > 0.0 {
            per_layer.push(finish(d, s, p, n));
        } else {
            per_layer.push(finish(0.0, 0.0, 0.0, 1.0));
        }
    }
    if all_n == 0.0 {
        return Err(AttnError::NoSentenceFinals);
    }
    Ok(RelativeAttentionReport {
        mean_all: finish(all_delim, all_sent, all_punct, all_n),
        per_layer: matches!(agg, Aggregation::PerLayer).then_some(per_layer),
        aggregation_note:
            "unweighted mean over sentences, heads, and layers; ratio = delim_score / sent_avg_score"
                .to_string(),
    })
}

/// Render one head's T×T attention matrix as a grayscale SVG grid with token
/// labels; rows/columns of catalog delimiter tokens are outlined. Output bytes
/// are deterministic for fixed input.
pub fn heatmap_svg(
    t: &AttentionTensor,
    layer: usize,
    head: usize,
    labels: &[String],
    out_path: &Path,
) -> Result<(), AttnError> {
    if layer >= t.layers || head >= t.heads {
        return Err(AttnError::IndexOutOfRange);
    }
    if labels.len() != t.seq_len {
        return Err(AttnError::LabelCountMismatch {
            labels: labels.len(),
            seq_len: t.seq_len,
        });
    }
    let cell = 24usize;
    let margin = 90usize;
    let n = t.seq_len;
    let size = margin + n * cell + 10;
    let delimiter_literals: Vec<String> =
        delimit::catalog().into_iter().map(|d| d.literal).collect();
    let is_delim: Vec<bool> = labels
        .iter()
        .map(|l| delimiter_literals.iter().any(|d| d == l))
        .collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         font-family=\"monospace\" font-size=\"10\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (q, row_label) in labels.iter().enumerate() {
        let row = t.row(layer, head, q);
        for (k, &w) in row.iter().enumerate() {
            let shade = (255.0 - (f64::from(w).clamp(0.0, 1.0) * 255.0)).round() as u8;
            let x = margin + k * cell;
            let y = margin + q * cell;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{shade},{shade})\"/>\n"
            ));
        }
        let y = margin + q * cell + cell / 2 + 3;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{y}\">{}</text>\n",
            escape_xml(row_label)
        ));
    }
    for (k, col_label) in labels.iter().enumerate() {
        let x = margin + k * cell + cell / 2;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"end\" \
             transform=\"rotate(-90 {x} {})\">{}</text>\n",
            margin - 6,
            margin - 6,
            escape_xml(col_label)
        ));
    }
    for (idx, _) in is_delim.iter().enumerate().filter(|(_, d)| **d) {
        let x = margin + idx * cell;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{margin}\" width=\"{cell}\" height=\"{}\" \
             fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
            n * cell
        ));
        svg.push_str(&format!(
            "<rect x=\"{margin}\" y=\"{}\" width=\"{}\" height=\"{cell}\" \
             fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
            margin + idx * cell,
            n * cell
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(out_path, svg)?;
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
