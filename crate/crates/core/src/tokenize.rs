//! Reference whitespace+punctuation tokenizer with character-span tracking,
//! atomic special tokens, and character↔token boundary mapping.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textseg::Boundaries;

pub const TOKENIZER_NAME: &str = "segdelim-reference-v1";

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("special token {0:?} contains whitespace")]
    WhitespaceInSpecial(String),
    #[error("special token literal is empty")]
    EmptySpecial,
    #[error("unknown token {0:?} with frozen vocabulary")]
    UnknownToken(String),
    #[error("boundary at char {offset} falls inside token {index} spanning [{start},{end})")]
    BoundaryInsideToken {
        offset: usize,
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("mapped token boundaries collide at token {0}")]
    BoundaryCollision(usize),
    #[error("malformed vocabulary file: {0}")]
    MalformedVocabFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What to do when a character boundary falls strictly inside a token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnapPolicy {
    /// Move the boundary to that token's end.
    #[default]
    SnapRight,
    Error,
}

/// Token-string→id map with dense ids and a set of atomic special tokens.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: HashMap<String, u32>,
    by_id: Vec<String>,
    specials: Vec<String>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    specials: Vec<String>,
    entries: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.entries.get(token).copied()
    }

    pub fn is_special(&self, token: &str) -> bool {
        self.specials.iter().any(|s| s == token)
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    /// Unknown tokens become errors instead of growing the vocabulary.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn intern(&mut self, token: &str) -> Result<u32, TokenizeError> {
        if let Some(id) = self.entries.get(token) {
            return Ok(*id);
        }
        if self.frozen {
            return Err(TokenizeError::UnknownToken(token.to_string()));
        }
        let id = self.by_id.len() as u32;
        self.entries.insert(token.to_string(), id);
        self.by_id.push(token.to_string());
        Ok(id)
    }

    /// Register `literal` as an atomic special token; idempotent on repeats.
    pub fn register_special(&mut self, literal: &str) -> Result<u32, TokenizeError> {
        if literal.is_empty() {
            return Err(TokenizeError::EmptySpecial);
        }
        if literal.chars().any(char::is_whitespace) {
            return Err(TokenizeError::WhitespaceInSpecial(literal.to_string()));
        }
        if let Some(id) = self.entries.get(literal) {
            if !self.is_special(literal) {
                self.specials.push(literal.to_string());
            }
            return Ok(*id);
        }
        let frozen = std::mem::replace(&mut self.frozen, false);
        let id = self.intern(literal)?;
        self.frozen = frozen;
        self.specials.push(literal.to_string());
        Ok(id)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        let file = VocabFile {
            specials: self.specials.clone(),
            entries: self.entries.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file).expect("serializable"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        let content = std::fs::read_to_string(path)?;
        let file: VocabFile = serde_json::from_str(&content)
            .map_err(|e| TokenizeError::MalformedVocabFile(e.to_string()))?;
        let mut by_id = vec![String::new(); file.entries.len()];
        for (tok, id) in &file.entries {
            let slot = by_id.get_mut(*id as usize).ok_or_else(|| {
                TokenizeError::MalformedVocabFile(format!("id {id} not dense from 0"))
            })?;
            if !slot.is_empty() {
                return Err(TokenizeError::MalformedVocabFile(format!("duplicate id {id}")));
            }
            *slot = tok.clone();
        }
        Ok(Vocabulary {
            entries: file.entries,
            by_id,
            specials: file.specials,
            frozen: false,
        })
    }
}

/// One token with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub id: u32,
    /// [start, end) in characters of the source text.
    pub span: (usize, usize),
}

/// Tokenized text; spans index characters of `source`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
    pub source: String,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Tokenize: split on whitespace, then peel leading/trailing punctuation into
/// separate tokens. Registered special tokens are emitted whole wherever they
/// appear as a complete word or as a word's punctuation-stripped core.
pub fn tokenize(vocab: &mut Vocabulary, text: &str) -> Result<TokenizedText, TokenizeError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_word(vocab, &chars, start, i, &mut tokens)?;
    }
    Ok(TokenizedText {
        tokens,
        source: text.to_string(),
    })
}

fn split_word(
    vocab: &mut Vocabulary,
    chars: &[char],
    start: usize,
    end: usize,
    out: &mut Vec<Token>,
) -> Result<(), TokenizeError> {
    if start >= end {
        return Ok(());
    }
    if let Some((s, e)) = find_special(vocab, chars, start, end) {
        if s == start && e == end {
            let word: String = chars[start..end].iter().collect();
            let id = vocab.id_of(&word).expect("special is interned");
            out.push(Token {
                text: word,
                id,
                span: (start, end),
            });
            return Ok(());
        }
        split_word(vocab, chars, start, s, out)?;
        let word: String = chars[s..e].iter().collect();
        let id = vocab.id_of(&word).expect("special is interned");
        out.push(Token {
            text: word,
            id,
            span: (s, e),
        });
        return split_word(vocab, chars, e, end, out);
    }
    if is_punct(chars[start]) && end - start > 1 {
        emit(vocab, chars, start, start + 1, out)?;
        return split_word(vocab, chars, start + 1, end, out);
    }
    if is_punct(chars[end - 1]) && end - start > 1 {
        split_word(vocab, chars, start, end - 1, out)?;
        return emit(vocab, chars, end - 1, end, out);
    }
    emit(vocab, chars, start, end, out)
}

/// Leftmost (longest on ties) occurrence of a registered special inside the
/// word, bounded by punctuation or the word edges so that e.g. a registered
/// "and" never splits "sand".
fn find_special(
    vocab: &Vocabulary,
    chars: &[char],
    start: usize,
    end: usize,
) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for special in vocab.specials() {
        let sc: Vec<char> = special.chars().collect();
        if sc.is_empty() || sc.len() > end - start {
            continue;
        }
        for s in start..=end - sc.len() {
            let e = s + sc.len();
            if chars[s..e] != sc[..] {
                continue;
            }
            let left_ok = s == start || is_punct(chars[s - 1]);
            let right_ok = e == end || is_punct(chars[e]);
            if left_ok && right_ok {
                let better = match best {
                    None => true,
                    Some((bs, be)) => s < bs || (s == bs && e > be),
                };
                if better {
                    best = Some((s, e));
                }
                break;
            }
        }
    }
    best
}

fn emit(
    vocab: &mut Vocabulary,
    chars: &[char],
    start: usize,
    end: usize,
    out: &mut Vec<Token>,
) -> Result<(), TokenizeError> {
    let text: String = chars[start..end].iter().collect();
    let id = vocab.intern(&text)?;
    out.push(Token {
        text,
        id,
        span: (start, end),
    });
    Ok(())
}

/// Map character boundary offsets to token indices: each offset maps to the
/// last token whose span ends at or before it; an offset strictly inside a
/// token snaps to that token's end (or errors, per policy).
pub fn char_to_token_boundaries(
    b: &Boundaries,
    tt: &TokenizedText,
    policy: SnapPolicy,
) -> Result<Vec<usize>, TokenizeError> {
    let mut out = Vec::with_capacity(b.len());
    for &offset in b.offsets() {
        let mut idx = None;
        for (t, tok) in tt.tokens.iter().enumerate() {
            if tok.span.0 < offset {
                idx = Some(t);
                if offset < tok.span.1 {
                    if policy == SnapPolicy::Error {
                        return Err(TokenizeError::BoundaryInsideToken {
                            offset,
                            index: t,
                            start: tok.span.0,
                            end: tok.span.1,
                        });
                    }
                    break;
                }
            } else {
                break;
            }
        }
        if let Some(idx) = idx {
            if out.last().is_some_and(|&p| p >= idx) {
                return Err(TokenizeError::BoundaryCollision(idx));
            }
            out.push(idx);
        }
    }
    Ok(out)
}
