//! Language codes, translation directions, and English display names.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("invalid language code {0:?}: expected nonempty lowercase ASCII letters")]
    InvalidCode(String),
    #[error("language pair {0:?} has identical source and target")]
    SameLanguage(String),
    #[error("malformed language pair {0:?}: expected \"src-tgt\"")]
    MalformedPair(String),
    #[error("no display name known for language code {0:?}; supply one explicitly")]
    UnknownName(String),
}

/// A short language code such as `de` or `en`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LangCode(String);

impl LangCode {
    pub fn new(code: &str) -> Result<Self, LangError> {
        if code.is_empty() || !code.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(LangError::InvalidCode(code.to_string()));
        }
        Ok(Self(code.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A translation direction. Serialized as `"src-tgt"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LangPair {
    src: LangCode,
    tgt: LangCode,
}

impl LangPair {
    pub fn new(src: &str, tgt: &str) -> Result<Self, LangError> {
        let src = LangCode::new(src)?;
        let tgt = LangCode::new(tgt)?;
        if src == tgt {
            return Err(LangError::SameLanguage(format!("{src}-{tgt}")));
        }
        Ok(Self { src, tgt })
    }

    pub fn src(&self) -> &LangCode {
        &self.src
    }

    pub fn tgt(&self) -> &LangCode {
        &self.tgt
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for LangPair {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (src, tgt) = s
            .split_once('-')
            .ok_or_else(|| LangError::MalformedPair(s.to_string()))?;
        LangPair::new(src, tgt)
    }
}

impl Serialize for LangPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LangPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const BUILTIN_NAMES: &[(&str, &str)] = &[
    ("nl", "Dutch"),
    ("fr", "French"),
    ("de", "German"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("en", "English"),
    ("zh", "Chinese"),
];

/// Maps language codes to the English exonyms used inside prompts.
///
/// The built-in table covers the languages of the default experiments;
/// anything else has to be registered with [`LanguageNames::with_name`].
#[derive(Debug, Clone, Default)]
pub struct LanguageNames {
    extra: BTreeMap<String, String>,
}

impl LanguageNames {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_name(mut self, code: &str, name: &str) -> Self {
        self.extra.insert(code.to_string(), name.to_string());
        self
    }

    pub fn extend<I: IntoIterator<Item = (String, String)>>(&mut self, names: I) {
        self.extra.extend(names);
    }

    pub fn name(&self, code: &LangCode) -> Result<&str, LangError> {
        if let Some(name) = self.extra.get(code.as_str()) {
            return Ok(name);
        }
        builtin_name(code.as_str()).ok_or_else(|| LangError::UnknownName(code.to_string()))
    }
}

pub fn builtin_name(code: &str) -> Option<&'static str> {
    BUILTIN_NAMES
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, name)| *name)
}
