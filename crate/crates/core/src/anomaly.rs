// SPDX-License-Identifier: Apache-2.0

//! Anomaly identification: specific-template extraction, weighted token
//! scoring, and key log message recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::log_parser::{LogRecord, LogTemplate, ParsedLog};
use crate::template_store::{StoreError, TemplateStore};

/// Weights are held as integer millionths so sums and comparisons are exact.
pub const WEIGHT_SCALE: u64 = 1_000_000;

pub const DEFAULT_TOKENS: [&str; 10] = [
    "error", "exception", "invalid", "failure", "disable", "false", "fault", "warn", "because",
    "exit",
];

#[derive(Debug, thiserror::Error)]
pub enum TokenSetError {
    #[error("token {0:?} must be non-empty, lowercase and alphanumeric")]
    InvalidToken(String),
    #[error("weight for {token:?} must be finite and non-negative, got {weight}")]
    InvalidWeight { token: String, weight: f64 },
    #[error("failed to read token file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to decode token file {path}: {message}")]
    Decode { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedTokenSet {
    tokens: BTreeMap<String, u64>,
}

impl Default for WeightedTokenSet {
    fn default() -> Self {
        let tokens = DEFAULT_TOKENS
            .iter()
            .map(|t| (t.to_string(), WEIGHT_SCALE / 10))
            .collect();
        Self { tokens }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TokenSpec {
    Pair(String, f64),
    Named { token: String, weight: f64 },
}

#[derive(Deserialize)]
struct TokenFile {
    tokens: Vec<TokenSpec>,
}

impl WeightedTokenSet {
    pub fn new<I, S>(pairs: I) -> Result<Self, TokenSetError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut tokens = BTreeMap::new();
        for (token, weight) in pairs {
            let token = token.into();
            if token.is_empty()
                || !token.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase())
            {
                return Err(TokenSetError::InvalidToken(token));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(TokenSetError::InvalidWeight { token, weight });
            }
            tokens.insert(token, (weight * WEIGHT_SCALE as f64).round() as u64);
        }
        Ok(Self { tokens })
    }

    /// Builds a set from weights already expressed in millionths.
    pub fn from_micros<I, S>(pairs: I) -> Result<Self, TokenSetError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut set = Self::new(std::iter::empty::<(String, f64)>())?;
        for (token, micros) in pairs {
            let token = token.into();
            Self::new([(token.clone(), 0.0)])?;
            set.tokens.insert(token, micros);
        }
        Ok(set)
    }

    /// Loads `[[tokens]]` from TOML, or a JSON array of `{token, weight}`
    /// objects or `[token, weight]` pairs.
    pub fn load(path: &Path) -> Result<Self, TokenSetError> {
        let p = path.display().to_string();
        let text =
            fs::read_to_string(path).map_err(|source| TokenSetError::Io { path: p.clone(), source })?;
        let specs: Vec<TokenSpec> = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str::<TokenFile>(&text).map(|f| f.tokens).map_err(|e| e.to_string())
        }
        .map_err(|message| TokenSetError::Decode { path: p, message })?;
        Self::new(specs.into_iter().map(|s| match s {
            TokenSpec::Pair(t, w) | TokenSpec::Named { token: t, weight: w } => (t, w),
        }))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens.iter().map(|(t, w)| (t.as_str(), *w))
    }

    pub fn total_micros(&self) -> u64 {
        self.tokens.values().sum()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnomalyDegree(u64);

impl AnomalyDegree {
    pub fn from_micros(micros: u64) -> Self {
        Self(micros)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / WEIGHT_SCALE as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for AnomalyDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for AnomalyDegree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for AnomalyDegree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Self((v * WEIGHT_SCALE as f64).round() as u64))
    }
}

/// Lowercased words of `text`: maximal alphanumeric runs, further split where
/// a lowercase letter or digit is followed by an uppercase letter
/// (`NullPointerException` yields `null`, `pointer`, `exception`).
pub fn words(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;
    for c in text.chars() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                out.insert(std::mem::take(&mut current));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            if (p.is_lowercase() || p.is_numeric()) && c.is_uppercase() && !current.is_empty() {
                out.insert(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
        prev = Some(c);
    }
    if !current.is_empty() {
        out.insert(current);
    }
    out
}

/// Sum of the weights of tokens present in `text`; each token counts once.
pub fn anomaly_degree(text: &str, tokens: &WeightedTokenSet) -> AnomalyDegree {
    let present = words(text);
    AnomalyDegree(
        tokens
            .iter()
            .filter(|(t, _)| present.contains(*t))
            .map(|(_, w)| w)
            .sum(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyLogMessage {
    pub record: LogRecord,
    pub template_degree: AnomalyDegree,
    pub variable_degree: AnomalyDegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    FaultFree,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationVerdict {
    pub kind: VerdictKind,
    pub key_messages: Vec<KeyLogMessage>,
    pub specific_template_count: usize,
}

/// Templates of `parsed` whose hash is absent from the store.
pub fn extract_specific<'a>(
    parsed: &'a ParsedLog,
    store: &TemplateStore,
) -> Result<Vec<&'a LogTemplate>, StoreError> {
    store.check_fingerprint(parsed.fingerprint)?;
    Ok(parsed
        .templates
        .values()
        .filter(|t| !store.contains(t.hash))
        .collect())
}

fn variable_text(record: &LogRecord) -> String {
    record
        .variables
        .iter()
        .chain(&record.stack_lines)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One key message per positively scoring specific template: the record whose
/// variables and stack lines score highest, earliest origin on ties.
pub fn recover_key_messages(
    specific: &[&LogTemplate],
    parsed: &ParsedLog,
    tokens: &WeightedTokenSet,
) -> Vec<KeyLogMessage> {
    let mut out = Vec::new();
    for template in specific {
        let template_degree = anomaly_degree(&template.pattern, tokens);
        if !template_degree.is_positive() {
            continue;
        }
        let best = parsed
            .records_of(template.hash)
            .map(|r| (anomaly_degree(&variable_text(r), tokens), r))
            .max_by(|(da, ra), (db, rb)| da.cmp(db).then_with(|| rb.origin.cmp(&ra.origin)));
        if let Some((variable_degree, record)) = best {
            out.push(KeyLogMessage { record: record.clone(), template_degree, variable_degree });
        }
    }
    out.sort_by(|a, b| {
        b.template_degree
            .cmp(&a.template_degree)
            .then_with(|| a.record.origin.cmp(&b.record.origin))
    });
    out
}

pub fn classify(
    parsed: &ParsedLog,
    store: &TemplateStore,
    tokens: &WeightedTokenSet,
) -> Result<IdentificationVerdict, StoreError> {
    let specific = extract_specific(parsed, store)?;
    let key_messages = recover_key_messages(&specific, parsed, tokens);
    let kind = if key_messages.is_empty() {
        VerdictKind::FaultFree
    } else {
        VerdictKind::Anomalous
    };
    Ok(IdentificationVerdict { kind, key_messages, specific_template_count: specific.len() })
}
