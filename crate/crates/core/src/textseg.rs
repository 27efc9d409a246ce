//! Rule-based sentence boundary detection and external boundary ingestion.
//!
//! Boundaries are character offsets (not bytes, not token positions): each
//! offset marks the position immediately after a sentence's final character.
//! Slicing the document text at the offsets and concatenating the pieces
//! reconstructs the text exactly.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("document text is empty or whitespace-only")]
    EmptyDocument,
    #[error("malformed boundary file: {0}")]
    MalformedBoundaryFile(String),
    #[error("boundary offset {offset} out of range for document of {len} characters")]
    OutOfRangeOffset { offset: usize, len: usize },
    #[error("boundary offsets not strictly increasing: {prev} then {next}")]
    NonMonotonic { prev: usize, next: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A source text with an identifier and free-form metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    /// Length in characters (boundary offsets index into this range).
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Ordered sentence-end character offsets over one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundaries {
    offsets: Vec<usize>,
}

impl Boundaries {
    /// Validate raw offsets against a document: strictly increasing, each in
    /// (0, char_len], and covering the document through its last non-whitespace
    /// character. The final offset is normalized to char_len so trailing
    /// whitespace stays attached to the last sentence.
    pub fn new(mut offsets: Vec<usize>, doc: &Document) -> Result<Self, SegError> {
        let len = doc.char_len();
        let mut prev = 0usize;
        for &off in &offsets {
            if off == 0 || off > len {
                return Err(SegError::OutOfRangeOffset { offset: off, len });
            }
            if off <= prev && prev != 0 {
                return Err(SegError::NonMonotonic { prev, next: off });
            }
            prev = off;
        }
        let trimmed_len = doc.text.trim_end().chars().count();
        match offsets.last_mut() {
            Some(last) => {
                if *last < trimmed_len {
                    return Err(SegError::MalformedBoundaryFile(format!(
                        "boundaries end at {} but document has content through {}",
                        last, trimmed_len
                    )));
                }
                *last = len;
            }
            None => {
                if trimmed_len > 0 {
                    return Err(SegError::MalformedBoundaryFile(
                        "empty boundary list for non-empty document".into(),
                    ));
                }
            }
        }
        Ok(Boundaries { offsets })
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "rev.", "gen.", "sen.", "rep.", "gov.", "lt.", "sgt.",
    "col.", "maj.", "capt.", "cmdr.", "adm.", "hon.", "fr.", "st.", "jr.", "sr.", "e.g.", "i.e.",
    "etc.", "vs.", "viz.", "cf.", "al.", "et.", "ca.", "approx.", "dept.", "univ.", "assn.",
    "inc.", "ltd.", "co.", "corp.", "no.", "vol.", "fig.", "eq.", "sec.", "pp.", "ed.", "esp.",
    "est.", "min.", "max.", "avg.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.",
    "sep.", "sept.", "oct.", "nov.", "dec.", "mon.", "tue.", "wed.", "thu.", "fri.", "sat.",
    "sun.", "u.s.", "u.k.",
];

/// Deterministic rule-based sentence segmenter.
///
/// A sentence ends at `.`, `!`, `?`, or at a newline, when followed by
/// whitespace plus an uppercase/opening character or end-of-text. Known
/// abbreviations, single-letter initials, and decimal points never
/// terminate; an ellipsis terminates only at end-of-text or before an
/// uppercase letter.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter {
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Segmenter {
    /// Replace the built-in abbreviation list (entries include the final dot).
    pub fn with_abbreviations<I, S>(abbrevs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Segmenter {
            abbreviations: abbrevs.into_iter().map(|s| s.into().to_lowercase()).collect(),
        }
    }

    /// Load one abbreviation per line, `#` comments and blanks skipped.
    pub fn from_abbreviation_file(path: &Path) -> Result<Self, SegError> {
        let content = std::fs::read_to_string(path)?;
        Ok(Self::with_abbreviations(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        ))
    }

    pub fn segment(&self, doc: &Document) -> Result<Boundaries, SegError> {
        if doc.text.trim().is_empty() {
            return Err(SegError::EmptyDocument);
        }
        let chars: Vec<char> = doc.text.chars().collect();
        let n = chars.len();
        let mut offsets: Vec<usize> = Vec::new();
        let mut last = 0usize;

        let push = |offsets: &mut Vec<usize>, last: &mut usize, pos: usize, chars: &[char]| {
            if pos > *last && chars[*last..pos].iter().any(|c| !c.is_whitespace()) {
                offsets.push(pos);
                *last = pos;
            }
        };

        for i in 0..n {
            let c = chars[i];
            match c {
                '.' | '!' | '?' => {
                    // defer to the last punctuation char of a cluster ("?!", "...")
                    if i + 1 < n && matches!(chars[i + 1], '.' | '!' | '?') {
                        continue;
                    }
                    let dot_run = chars[..=i].iter().rev().take_while(|&&d| d == '.').count();
                    let is_ellipsis = dot_run >= 3;
                    if c == '.' && !is_ellipsis {
                        if self.is_decimal_point(&chars, i) || self.is_abbreviation(&chars, i) {
                            continue;
                        }
                    }
                    let mut k = i + 1;
                    while k < n && chars[k].is_whitespace() {
                        k += 1;
                    }
                    if k == n {
                        push(&mut offsets, &mut last, i + 1, &chars);
                    } else if k > i + 1 {
                        let starts = if is_ellipsis {
                            chars[k].is_uppercase()
                        } else {
                            is_sentence_start(chars[k])
                        };
                        if starts {
                            push(&mut offsets, &mut last, i + 1, &chars);
                        }
                    }
                }
                '\n' => {
                    let mut k = i + 1;
                    while k < n && chars[k].is_whitespace() {
                        k += 1;
                    }
                    if k == n || is_sentence_start(chars[k]) {
                        // end the sentence after its last non-whitespace character
                        let mut e = i;
                        while e > last && chars[e - 1].is_whitespace() {
                            e -= 1;
                        }
                        push(&mut offsets, &mut last, e, &chars);
                    }
                }
                _ => {}
            }
        }

        if last < n {
            if chars[last..].iter().any(|c| !c.is_whitespace()) {
                offsets.push(n);
            } else if let Some(l) = offsets.last_mut() {
                *l = n;
            }
        }
        Boundaries::new(offsets, doc)
    }

    fn is_decimal_point(&self, chars: &[char], i: usize) -> bool {
        i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit()
    }

    fn is_abbreviation(&self, chars: &[char], i: usize) -> bool {
        let mut start = i;
        while start > 0 && (chars[start - 1].is_alphabetic() || chars[start - 1] == '.') {
            start -= 1;
        }
        if start == i {
            return false; // bare dot, no preceding token
        }
        let token: String = chars[start..=i].iter().collect::<String>().to_lowercase();
        if self.abbreviations.contains(&token) {
            return true;
        }
        // single-letter initials: "A. Smith"
        let letters: Vec<&char> = chars[start..i].iter().filter(|c| c.is_alphabetic()).collect();
        letters.len() == 1 && i - start == 1
    }
}

fn is_sentence_start(c: char) -> bool {
    // '#' covers final-answer lines like "#### 35"
    c.is_uppercase() || matches!(c, '(' | '[' | '{' | '"' | '\'' | '#' | '\u{201C}' | '\u{2018}')
}

/// Segment with the default rule set.
pub fn segment_rule(doc: &Document) -> Result<Boundaries, SegError> {
    Segmenter::default().segment(doc)
}

/// Slice the document into sentence strings; concatenation reproduces the text.
pub fn sentences<'a>(doc: &'a Document, b: &Boundaries) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(b.len());
    let mut prev_byte = 0usize;
    for &off in b.offsets() {
        let end_byte = char_to_byte(&doc.text, off);
        out.push(&doc.text[prev_byte..end_byte]);
        prev_byte = end_byte;
    }
    out
}

/// Byte index of the `char_idx`-th character (== text.len() at the end).
pub fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

/// Read a boundary file (JSON array of character offsets) and validate it
/// against the document it was computed for.
pub fn load_boundaries(path: &Path, doc: &Document) -> Result<Boundaries, SegError> {
    let content = std::fs::read_to_string(path)?;
    let raw: Vec<usize> = serde_json::from_str(&content)
        .map_err(|e| SegError::MalformedBoundaryFile(e.to_string()))?;
    Boundaries::new(raw, doc)
}

/// Write boundaries in the interchange format `load_boundaries` accepts.
pub fn save_boundaries(path: &Path, b: &Boundaries) -> Result<(), SegError> {
    std::fs::write(path, serde_json::to_string(b.offsets()).expect("serializable"))?;
    Ok(())
}
