//! Sentence-boundary delimiter insertion toolkit.
//!
//! Segments text into sentences, inserts structural delimiter tokens under
//! several placement strategies, assembles sentence-delimited few-shot
//! prompts, transforms instruction datasets for fine-tuning, evaluates
//! base-vs-seg prompting against chat-completions endpoints, and analyzes
//! how much attention delimiter tokens attract.

pub mod attnlens;
pub mod corpusstats;
pub mod delimit;
pub mod evalclient;
pub mod mock;
pub mod promptkit;
pub mod textseg;
pub mod tokenize;

pub use delimit::{DelimiterClass, DelimiterSpec};
pub use promptkit::{AnswerFormat, PromptMode, TaskTemplate};
pub use textseg::{Boundaries, Document};
pub use tokenize::{TokenizedText, Vocabulary};
