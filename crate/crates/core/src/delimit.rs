//! Delimiter catalog and the three placement strategies: sentence boundaries,
//! fixed n-token chunks, and seeded random token gaps.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textseg::{char_to_byte, Boundaries, Document};
use crate::tokenize::TokenizedText;

#[derive(Debug, Error)]
pub enum DelimitError {
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("requested {count} delimiters but text has only {tokens} tokens")]
    CountExceedsTokens { count: usize, tokens: usize },
    #[error("unknown delimiter class {0:?}")]
    UnknownClass(String),
}

/// Delimiter classes, ordered from most to least structural.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelimiterClass {
    /// Syntactically distinct tokens with no surface meaning ("<seg>").
    Structured,
    /// Ordinary words ("seg", "and").
    Semantic,
    /// Punctuation already used in human text ("\n", ".").
    Natural,
    /// Numeric or symbol strings ("114", ".&?").
    Arbitrary,
}

impl std::str::FromStr for DelimiterClass {
    type Err = DelimitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(Self::Structured),
            "semantic" => Ok(Self::Semantic),
            "natural" => Ok(Self::Natural),
            "arbitrary" => Ok(Self::Arbitrary),
            other => Err(DelimitError::UnknownClass(other.to_string())),
        }
    }
}

/// A delimiter literal plus its class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimiterSpec {
    pub literal: String,
    pub class: DelimiterClass,
}

impl DelimiterSpec {
    pub fn new(literal: impl Into<String>, class: DelimiterClass) -> Self {
        DelimiterSpec {
            literal: literal.into(),
            class,
        }
    }

    /// The built-in "<seg>" delimiter.
    pub fn seg() -> Self {
        DelimiterSpec::new("<seg>", DelimiterClass::Structured)
    }
}

/// The built-in delimiter catalog.
pub fn catalog() -> Vec<DelimiterSpec> {
    use DelimiterClass::*;
    vec![
        DelimiterSpec::new("<seg>", Structured),
        DelimiterSpec::new("<and>", Structured),
        DelimiterSpec::new("####", Structured),
        DelimiterSpec::new("seg", Semantic),
        DelimiterSpec::new("and", Semantic),
        DelimiterSpec::new("\n", Natural),
        DelimiterSpec::new(".", Natural),
        DelimiterSpec::new("114", Arbitrary),
        DelimiterSpec::new(".&?", Arbitrary),
    ]
}

/// Look a literal up in the built-in catalog; unknown literals default to
/// the arbitrary class.
pub fn spec_for(literal: &str) -> DelimiterSpec {
    catalog()
        .into_iter()
        .find(|d| d.literal == literal)
        .unwrap_or_else(|| DelimiterSpec::new(literal, DelimiterClass::Arbitrary))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Positions are character offsets (sentence boundaries).
    Sentence,
    /// Positions are 1-based token counts; a delimiter follows every n tokens.
    FixedChunk { n: usize },
    /// Positions are 1-based token gaps drawn without replacement.
    Random { seed: u64 },
}

/// Where delimiters were placed, for audit and round-trip checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub strategy: Strategy,
    pub delimiter: DelimiterSpec,
    pub positions: Vec<usize>,
    /// Set when the literal already occurs in the source text, so
    /// strip-insert round-tripping cannot be guaranteed.
    pub non_invertible: bool,
}

fn collides(text: &str, d: &DelimiterSpec) -> bool {
    matches!(d.class, DelimiterClass::Natural) || text.contains(&d.literal)
}

/// Splice `" " + literal` immediately after each boundary offset.
pub fn insert_at_sentences(
    doc: &Document,
    b: &Boundaries,
    d: &DelimiterSpec,
) -> (String, InsertionPlan) {
    let inserted = format!(" {}", d.literal);
    let mut out = String::with_capacity(doc.text.len() + b.len() * inserted.len());
    let mut prev_byte = 0usize;
    for &off in b.offsets() {
        let end_byte = char_to_byte(&doc.text, off);
        out.push_str(&doc.text[prev_byte..end_byte]);
        out.push_str(&inserted);
        prev_byte = end_byte;
    }
    out.push_str(&doc.text[prev_byte..]);
    let plan = InsertionPlan {
        strategy: Strategy::Sentence,
        delimiter: d.clone(),
        positions: b.offsets().to_vec(),
        non_invertible: collides(&doc.text, d),
    };
    (out, plan)
}

fn splice_after_tokens(tt: &TokenizedText, gaps: &[usize], d: &DelimiterSpec) -> String {
    let inserted = format!(" {}", d.literal);
    let mut out = String::with_capacity(tt.source.len() + gaps.len() * inserted.len());
    let mut prev_byte = 0usize;
    for &gap in gaps {
        let char_off = tt.tokens[gap - 1].span.1;
        let end_byte = char_to_byte(&tt.source, char_off);
        out.push_str(&tt.source[prev_byte..end_byte]);
        out.push_str(&inserted);
        prev_byte = end_byte;
    }
    out.push_str(&tt.source[prev_byte..]);
    out
}

/// Insert a delimiter after every `n` tokens and after the final token, so the
/// output ends with a delimiter like the sentence strategy does. Total count
/// is ceil(T/n).
pub fn insert_fixed_chunks(
    tt: &TokenizedText,
    n: usize,
    d: &DelimiterSpec,
) -> Result<(String, InsertionPlan), DelimitError> {
    if n == 0 {
        return Err(DelimitError::ZeroChunkSize);
    }
    let total = tt.len();
    let mut gaps: Vec<usize> = (1..=total / n).map(|k| k * n).collect();
    if total > 0 && gaps.last() != Some(&total) {
        gaps.push(total);
    }
    let out = splice_after_tokens(tt, &gaps, d);
    let plan = InsertionPlan {
        strategy: Strategy::FixedChunk { n },
        delimiter: d.clone(),
        positions: gaps,
        non_invertible: collides(&tt.source, d),
    };
    Ok((out, plan))
}

/// Insert `count` delimiters at token gaps drawn uniformly without replacement
/// from 1..=T (never before the first token). Deterministic for a fixed seed.
pub fn insert_random(
    tt: &TokenizedText,
    count: usize,
    seed: u64,
    d: &DelimiterSpec,
) -> Result<(String, InsertionPlan), DelimitError> {
    let total = tt.len();
    if count > total {
        return Err(DelimitError::CountExceedsTokens {
            count,
            tokens: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaps: Vec<usize> = sample(&mut rng, total, count)
        .into_iter()
        .map(|g| g + 1)
        .collect();
    gaps.sort_unstable();
    let out = splice_after_tokens(tt, &gaps, d);
    let plan = InsertionPlan {
        strategy: Strategy::Random { seed },
        delimiter: d.clone(),
        positions: gaps,
        non_invertible: collides(&tt.source, d),
    };
    Ok((out, plan))
}

/// Remove every `" " + literal` occurrence plus a bare leading literal.
/// Inverse of the insert operations for non-colliding delimiters.
pub fn strip_delimiters(text: &str, d: &DelimiterSpec) -> String {
    let spaced = format!(" {}", d.literal);
    let stripped = text.replace(&spaced, "");
    match stripped.strip_prefix(&d.literal) {
        Some(rest) => rest.to_string(),
        None => stripped,
    }
}
