//! Zero-shot and few-shot instruction templates.
//!
//! Four layouts are supported. `ZeroShot` is the bare instruction block:
//!
//! ```text
//! Translate the source text from German to English.
//! Source: Hallo Welt
//! Target:
//! ```
//!
//! `FewShot1` repeats that block once per example, `FewShot2` (the default)
//! puts numbered examples under a "Consider the following N translations"
//! header, and `FewShot3` uses the same header without the count or the
//! numbering. Every layout ends in `Target:` with no trailing space or
//! newline; the completion supplies the leading space.
//!
//! [`parse`] inverts [`render`] exactly and reports the byte offset of the
//! first token that does not fit the grammar.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelSegment;
use crate::lang::{LangError, LangPair, LanguageNames};

pub const MAX_SHOTS: usize = 5;

/// Placeholder appended to every gold completion. Trainers replace it with
/// their tokenizer's end-of-sequence token.
pub const EOS_MARKER: &str = "<EOS>";

/// Inserted between consecutive numbered examples in `FewShot2`.
pub const FEW_SHOT_2_EXAMPLE_SEPARATOR: &str = "";

const TARGET_LABEL: &str = "Target:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ZeroShot,
    #[serde(rename = "few_shot_1")]
    FewShot1,
    #[serde(rename = "few_shot_2")]
    FewShot2,
    #[serde(rename = "few_shot_3")]
    FewShot3,
}

impl TemplateId {
    pub const DEFAULT_FEW_SHOT: TemplateId = TemplateId::FewShot2;

    pub fn is_few_shot(self) -> bool {
        self != TemplateId::ZeroShot
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ZeroShot => "zero_shot",
            TemplateId::FewShot1 => "few_shot_1",
            TemplateId::FewShot2 => "few_shot_2",
            TemplateId::FewShot3 => "few_shot_3",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" => Ok(TemplateId::ZeroShot),
            "few_shot_1" => Ok(TemplateId::FewShot1),
            "few_shot_2" => Ok(TemplateId::FewShot2),
            "few_shot_3" => Ok(TemplateId::FewShot3),
            other => Err(format!("unknown template {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub source: String,
    pub target: String,
}

/// Everything needed to render one prompt. Language fields hold display
/// names ("German"), not codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub template: TemplateId,
    pub source_language: String,
    pub target_language: String,
    pub source: String,
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed_prompt at byte {offset}: expected {expected}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("shot_count_mismatch: {template} does not accept {shots} shots")]
    ShotCountMismatch { template: TemplateId, shots: usize },
    #[error("invalid {field}: {reason}")]
    InvalidText { field: String, reason: String },
    #[error(transparent)]
    Malformed(#[from] ParseError),
    #[error(transparent)]
    Lang(#[from] LangError),
}

/// Checks that a text can occupy a `Source:`/`Target:` slot.
pub fn check_slot_text(field: &str, text: &str) -> Result<(), TemplateError> {
    let reason = if text.trim().is_empty() {
        "empty"
    } else if text.contains(['\n', '\r']) {
        "contains a line break"
    } else if text.contains(TARGET_LABEL) {
        "contains the reserved label \"Target:\""
    } else {
        return Ok(());
    };
    Err(TemplateError::InvalidText {
        field: field.to_string(),
        reason: reason.to_string(),
    })
}

fn check_language_name(field: &str, name: &str) -> Result<(), TemplateError> {
    let reason = if name.trim().is_empty() {
        "empty"
    } else if name.contains(['\n', '\r']) {
        "contains a line break"
    } else if name.contains(" to ") {
        "contains \" to \""
    } else {
        return Ok(());
    };
    Err(TemplateError::InvalidText {
        field: field.to_string(),
        reason: reason.to_string(),
    })
}

impl PromptSpec {
    /// Builds a spec for `pair`, resolving display names through `names`.
    pub fn for_pair(
        template: TemplateId,
        pair: &LangPair,
        names: &LanguageNames,
        source: impl Into<String>,
        shots: Vec<Shot>,
    ) -> Result<Self, TemplateError> {
        Ok(PromptSpec {
            template,
            source_language: names.name(pair.src())?.to_string(),
            target_language: names.name(pair.tgt())?.to_string(),
            source: source.into(),
            shots,
        })
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let n = self.shots.len();
        let ok = match self.template {
            TemplateId::ZeroShot => n == 0,
            _ => (1..=MAX_SHOTS).contains(&n),
        };
        if !ok {
            return Err(TemplateError::ShotCountMismatch {
                template: self.template,
                shots: n,
            });
        }
        check_language_name("source_language", &self.source_language)?;
        check_language_name("target_language", &self.target_language)?;
        check_slot_text("source", &self.source)?;
        for (i, shot) in self.shots.iter().enumerate() {
            check_slot_text(&format!("shots[{i}].source"), &shot.source)?;
            check_slot_text(&format!("shots[{i}].target"), &shot.target)?;
        }
        Ok(())
    }
}

fn instruction(x: &str, y: &str) -> String {
    format!("Translate the source text from {x} to {y}.")
}

/// Renders a prompt. Pure; the output never ends in a newline.
pub fn render(spec: &PromptSpec) -> Result<String, TemplateError> {
    spec.validate()?;
    let (x, y) = (&spec.source_language, &spec.target_language);
    let head = instruction(x, y);
    let mut out = String::new();
    match spec.template {
        TemplateId::ZeroShot => {}
        TemplateId::FewShot1 => {
            for shot in &spec.shots {
                out.push_str(&format!(
                    "{head}\nSource: {}\nTarget: {}\n",
                    shot.source, shot.target
                ));
            }
        }
        TemplateId::FewShot2 => {
            out.push_str(&format!(
                "Consider the following {} translations from {x} to {y}.\n",
                spec.shots.len()
            ));
            for (i, shot) in spec.shots.iter().enumerate() {
                if i > 0 {
                    out.push_str(FEW_SHOT_2_EXAMPLE_SEPARATOR);
                }
                out.push_str(&format!(
                    "Example {}\nSource: {}\nTarget: {}\n",
                    i + 1,
                    shot.source,
                    shot.target
                ));
            }
            out.push('\n');
        }
        TemplateId::FewShot3 => {
            out.push_str(&format!("Consider the following translations from {x} to {y}.\n"));
            for shot in &spec.shots {
                out.push_str(&format!("Source: {}\nTarget: {}\n", shot.source, shot.target));
            }
            out.push('\n');
        }
    }
    out.push_str(&format!("{head}\nSource: {}\n{TARGET_LABEL}", spec.source));
    Ok(out)
}

/// Gold completion for a training record: a leading space, the reference,
/// then [`EOS_MARKER`].
pub fn completion_for(seg: &ParallelSegment) -> String {
    format!(" {}{EOS_MARKER}", seg.tgt_text)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn fail<T>(&self, offset: usize, expected: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset,
            expected: expected.into(),
        })
    }

    fn literal(&mut self, lit: &str) -> Result<(), ParseError> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            self.fail(self.pos, format!("{lit:?}"))
        }
    }

    /// Matches space-separated words one token at a time so that errors
    /// point at the word that went wrong.
    fn words(&mut self, phrase: &str) -> Result<(), ParseError> {
        for (i, word) in phrase.split(' ').enumerate() {
            if i > 0 {
                self.literal(" ")?;
            }
            self.literal(word)?;
        }
        Ok(())
    }

    fn line(&mut self) -> &'a str {
        let rest = self.rest();
        let end = rest.find('\n').unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn text_slot(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        let text = self.line();
        if check_slot_text("text", text).is_err() {
            return self.fail(start, "nonempty text");
        }
        Ok(text.to_string())
    }

    fn number(&mut self) -> Result<(usize, usize), ParseError> {
        let start = self.pos;
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.fail(start, "a number");
        }
        let n = self.rest()[..digits].parse().or_else(|_| self.fail(start, "a number"))?;
        self.pos += digits;
        Ok((n, start))
    }

    /// `{X} to {Y}.` up to the end of the line.
    fn languages(&mut self) -> Result<(String, String), ParseError> {
        let start = self.pos;
        let line = self.line();
        let Some(split) = line.find(" to ") else {
            return self.fail(start + line.len(), "\" to \"");
        };
        let x = &line[..split];
        let after = &line[split + 4..];
        let Some(y) = after.strip_suffix('.') else {
            return self.fail(start + line.len(), "\".\"");
        };
        if x.trim().is_empty() {
            return self.fail(start, "source language name");
        }
        if y.trim().is_empty() {
            return self.fail(start + split + 4, "target language name");
        }
        Ok((x.to_string(), y.to_string()))
    }

    fn instruction(&mut self) -> Result<(String, String, usize), ParseError> {
        self.words("Translate the source text from")?;
        self.literal(" ")?;
        let at = self.pos;
        let (x, y) = self.languages()?;
        Ok((x, y, at))
    }

    fn source_line(&mut self) -> Result<String, ParseError> {
        self.words("Source:")?;
        self.literal(" ")?;
        let s = self.text_slot()?;
        self.literal("\n")?;
        Ok(s)
    }

    fn shot_pair(&mut self) -> Result<Shot, ParseError> {
        let source = self.source_line()?;
        self.words(TARGET_LABEL)?;
        self.literal(" ")?;
        let target = self.text_slot()?;
        self.literal("\n")?;
        Ok(Shot { source, target })
    }

    fn final_block(&mut self, x: &str, y: &str) -> Result<String, ParseError> {
        let (x2, y2, at) = self.instruction()?;
        if x2 != x || y2 != y {
            return self.fail(at, format!("\"{x} to {y}.\""));
        }
        self.literal("\n")?;
        let source = self.source_line()?;
        self.words(TARGET_LABEL)?;
        if self.pos != self.text.len() {
            return self.fail(self.pos, "end of prompt");
        }
        Ok(source)
    }
}

/// Parses a rendered prompt back into its [`PromptSpec`].
pub fn parse(prompt: &str) -> Result<PromptSpec, ParseError> {
    let mut c = Cursor {
        text: prompt,
        pos: 0,
    };
    if prompt.starts_with("Consider") {
        parse_headed(&mut c)
    } else {
        parse_repeated(&mut c)
    }
}

fn parse_headed(c: &mut Cursor<'_>) -> Result<PromptSpec, ParseError> {
    c.words("Consider the following")?;
    c.literal(" ")?;
    let announced = if c.rest().starts_with(|ch: char| ch.is_ascii_digit()) {
        let n = c.number()?;
        c.literal(" ")?;
        Some(n)
    } else {
        None
    };
    c.words("translations from")?;
    c.literal(" ")?;
    let (x, y) = c.languages()?;
    c.literal("\n")?;

    let mut shots = Vec::new();
    let template = if announced.is_some() {
        while c.rest().starts_with("Example") {
            if !shots.is_empty() {
                c.literal(FEW_SHOT_2_EXAMPLE_SEPARATOR)?;
            }
            c.words("Example")?;
            c.literal(" ")?;
            let (i, at) = c.number()?;
            if i != shots.len() + 1 {
                return c.fail(at, format!("example number {}", shots.len() + 1));
            }
            c.literal("\n")?;
            shots.push(c.shot_pair()?);
        }
        TemplateId::FewShot2
    } else {
        while c.rest().starts_with("Source") {
            shots.push(c.shot_pair()?);
        }
        TemplateId::FewShot3
    };
    if shots.is_empty() {
        return c.fail(c.pos, if announced.is_some() { "\"Example\"" } else { "\"Source:\"" });
    }
    if shots.len() > MAX_SHOTS {
        return c.fail(c.pos, format!("at most {MAX_SHOTS} examples"));
    }
    if let Some((n, at)) = announced {
        if n != shots.len() {
            return c.fail(at, format!("example count {}", shots.len()));
        }
    }
    c.literal("\n")?;
    let source = c.final_block(&x, &y)?;
    Ok(PromptSpec {
        template,
        source_language: x,
        target_language: y,
        source,
        shots,
    })
}

fn parse_repeated(c: &mut Cursor<'_>) -> Result<PromptSpec, ParseError> {
    let mut shots = Vec::new();
    let mut langs: Option<(String, String)> = None;
    loop {
        let block_start = c.pos;
        let (x, y, at) = c.instruction()?;
        match &langs {
            Some((x0, y0)) if (x0, y0) != (&x, &y) => {
                return c.fail(at, format!("\"{x0} to {y0}.\""));
            }
            Some(_) => {}
            None => langs = Some((x, y)),
        }
        c.literal("\n")?;
        let source = c.source_line()?;
        c.words(TARGET_LABEL)?;
        if c.pos == c.text.len() {
            let (x, y) = langs.unwrap_or_default();
            let template = if shots.is_empty() {
                TemplateId::ZeroShot
            } else {
                TemplateId::FewShot1
            };
            return Ok(PromptSpec {
                template,
                source_language: x,
                target_language: y,
                source,
                shots,
            });
        }
        if shots.len() == MAX_SHOTS {
            return c.fail(block_start, format!("at most {MAX_SHOTS} examples"));
        }
        c.literal(" ")?;
        let target = c.text_slot()?;
        c.literal("\n")?;
        shots.push(Shot { source, target });
    }
}
