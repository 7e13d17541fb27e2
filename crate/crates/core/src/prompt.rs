//! FIM prompt and training-text rendering.
//!
//! Three shapes are produced from a [`Segmentation`]:
//!
//! * the generation prompt `PRE + comment(question) + prefix + SUF + suffix + MID`,
//! * the FIM training text, which is the prompt followed by `generation + EOT`,
//! * the chat training pair `(question, prefix + generation + suffix)`.
//!
//! Sentinels are concatenated with no surrounding whitespace. Every training
//! sample carries the half-open span of its response that holds the
//! generation, measured in Unicode scalar values; only that span enters the
//! DPO loss.

use crate::segment::Segmentation;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sentinels {
    pub pre: String,
    pub suf: String,
    pub mid: String,
    pub eot: String,
}

impl Default for Sentinels {
    fn default() -> Self {
        Self {
            pre: "<PRE>".into(),
            suf: "<SUF>".into(),
            mid: "<MID>".into(),
            eot: "<EOT>".into(),
        }
    }
}

impl Sentinels {
    pub fn all(&self) -> [&str; 4] {
        [&self.pre, &self.suf, &self.mid, &self.eot]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let all = self.all();
        for (i, a) in all.iter().enumerate() {
            if a.is_empty() {
                return Err(PromptError::InvalidSentinels("sentinels must be non-empty".into()));
            }
            if all[i + 1..].contains(a) {
                return Err(PromptError::InvalidSentinels(format!("sentinel {a:?} is repeated")));
            }
        }
        Ok(())
    }

    /// First sentinel occurring inside `text`, if any.
    pub fn find_in<'a>(&'a self, text: &str) -> Option<&'a str> {
        self.all().into_iter().find(|s| text.contains(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Fim,
    Chat,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Fim => "fim",
            Style::Chat => "chat",
        })
    }
}

/// Half-open `[start, end)` interval in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct LossSpan {
    pub start: usize,
    pub end: usize,
}

impl From<LossSpan> for [usize; 2] {
    fn from(s: LossSpan) -> Self {
        [s.start, s.end]
    }
}

impl From<[usize; 2]> for LossSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl LossSpan {
    /// The covered slice of `text`, or `None` when the span does not fit.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        let mut idx = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = idx.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            idx.nth(self.end - self.start - 1)?
        };
        Some(&text[start..end])
    }
}

/// One rendered training text.
///
/// For [`Style::Fim`] the full text is `prompt + response`; for
/// [`Style::Chat`] `prompt` is the user turn and `response` the assistant
/// turn. `loss_span` indexes into `response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSample {
    pub style: Style,
    pub prompt: String,
    pub response: String,
    pub loss_span: LossSpan,
}

impl RenderedSample {
    pub fn full_text(&self) -> String {
        format!("{}{}", self.prompt, self.response)
    }

    pub fn loss_text(&self) -> &str {
        self.loss_span
            .slice(&self.response)
            .expect("loss span is constructed inside the response")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("sentinel {sentinel:?} occurs inside the {field}")]
    SentinelCollision { sentinel: String, field: &'static str },
    #[error("invalid sentinel configuration: {0}")]
    InvalidSentinels(String),
}

/// Turns the problem statement into a block of `# ` comment lines followed by
/// one blank `#` line.
///
/// Not idempotent: converting already-commented text comments it again.
pub fn convert_question(question: &str) -> String {
    let mut out = String::with_capacity(question.len() + 16);
    for line in question.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("#\n");
    out
}

fn check(sentinels: &Sentinels, text: &str, field: &'static str) -> Result<(), PromptError> {
    match sentinels.find_in(text) {
        Some(s) => Err(PromptError::SentinelCollision {
            sentinel: s.to_string(),
            field,
        }),
        None => Ok(()),
    }
}

pub fn build_fim_prompt(seg: &Segmentation, question: &str, sentinels: &Sentinels) -> Result<String, PromptError> {
    let comment = convert_question(question);
    check(sentinels, &comment, "question")?;
    check(sentinels, &seg.prefix, "prefix")?;
    check(sentinels, &seg.suffix, "suffix")?;
    let mut out = String::with_capacity(
        comment.len() + seg.prefix.len() + seg.suffix.len() + sentinels.all().iter().map(|s| s.len()).sum::<usize>(),
    );
    out.push_str(&sentinels.pre);
    out.push_str(&comment);
    out.push_str(&seg.prefix);
    out.push_str(&sentinels.suf);
    out.push_str(&seg.suffix);
    out.push_str(&sentinels.mid);
    Ok(out)
}

pub fn render_training(
    seg: &Segmentation,
    generation: &str,
    question: &str,
    style: Style,
    sentinels: &Sentinels,
) -> Result<RenderedSample, PromptError> {
    let gen_chars = generation.chars().count();
    match style {
        Style::Fim => {
            check(sentinels, generation, "generation")?;
            let prompt = build_fim_prompt(seg, question, sentinels)?;
            Ok(RenderedSample {
                style,
                prompt,
                response: format!("{generation}{}", sentinels.eot),
                loss_span: LossSpan {
                    start: 0,
                    end: gen_chars,
                },
            })
        }
        Style::Chat => {
            let start = seg.prefix.chars().count();
            Ok(RenderedSample {
                style,
                prompt: question.to_string(),
                response: format!("{}{generation}{}", seg.prefix, seg.suffix),
                loss_span: LossSpan {
                    start,
                    end: start + gen_chars,
                },
            })
        }
    }
}
