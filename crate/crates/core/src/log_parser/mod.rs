// SPDX-License-Identifier: Apache-2.0

//! Log parsing: header recognition, stack attachment and template mining.
//!
//! Every line is either the start of a log record or a stack continuation of
//! the nearest preceding record. Only record messages take part in template
//! mining; stack lines are kept on the record for later inference phases.

mod drain;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::hash::{canonicalize, fnv1a64};

/// Placeholder symbol for one run-time variable.
pub const WILDCARD_TOKEN: &str = "<*>";

/// Default anchored header pattern: optional timestamp, optional level,
/// optional `Component:` prefix.
pub const DEFAULT_HEADER_PATTERN: &str = r"^(?:(?P<timestamp>\d{4}-\d{2}-\d{2}[ T]\d{2}:\d{2}:\d{2}(?:[.,]\d{1,9})?)\s+)?(?:\[?(?P<level>TRACE|DEBUG|INFO|WARN|WARNING|ERROR|FATAL)\]?\s+)?(?:(?P<component>[\w.$\-\[\]]+):\s+)?(?P<message>.*)$";

/// One raw input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLine {
    pub file_id: String,
    /// 1-based.
    pub line_no: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    LogStart,
    StackContinuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Level {
    Trace,
    Debug,
    Info,
    Warn,
    Error,
    Fatal,
}

impl Level {
    fn parse(s: &str) -> Option<Level> {
        Some(match s {
            "TRACE" => Level::Trace,
            "DEBUG" => Level::Debug,
            "INFO" => Level::Info,
            "WARN" | "WARNING" => Level::Warn,
            "ERROR" => Level::Error,
            "FATAL" => Level::Fatal,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Trace => "TRACE",
            Level::Debug => "DEBUG",
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
            Level::Fatal => "FATAL",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub timestamp: Option<String>,
    pub level: Option<Level>,
    pub component: Option<String>,
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub file_id: String,
    pub line_no: usize,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file_id, self.line_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub header: Option<Header>,
    pub message: String,
    pub stack_lines: Vec<String>,
    pub template_id: u64,
    pub variables: Vec<String>,
    pub origin: Origin,
}

impl LogRecord {
    /// Renders the record back to log lines (header, message, stack).
    pub fn to_lines(&self) -> Vec<String> {
        let mut first = String::new();
        if let Some(h) = &self.header {
            for part in [h.timestamp.as_deref(), h.level.map(|l| l.as_str())]
                .into_iter()
                .flatten()
            {
                first.push_str(part);
                first.push(' ');
            }
            if let Some(c) = &h.component {
                first.push_str(c);
                first.push_str(": ");
            }
        }
        first.push_str(&self.message);
        let mut out = vec![first];
        out.extend(self.stack_lines.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub pattern: String,
    pub hash: u64,
    pub support: u64,
}

impl LogTemplate {
    pub fn placeholder_count(&self) -> usize {
        self.pattern
            .split(' ')
            .filter(|t| *t == WILDCARD_TOKEN)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedLog {
    pub records: Vec<LogRecord>,
    pub templates: BTreeMap<u64, LogTemplate>,
    /// Fingerprint of the parser configuration that produced this value.
    pub fingerprint: u64,
}

impl ParsedLog {
    pub fn template_of(&self, record: &LogRecord) -> Option<&LogTemplate> {
        self.templates.get(&record.template_id)
    }

    pub fn records_of(&self, template: u64) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.template_id == template)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserConfig {
    pub depth: usize,
    pub similarity: f64,
    pub max_children: usize,
    pub header_pattern: String,
    /// Treat tokens that contain a digit as run-time variables.
    pub mask_digits: bool,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            similarity: 0.4,
            max_children: 100,
            header_pattern: DEFAULT_HEADER_PATTERN.to_string(),
            mask_digits: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParserConfigError {
    #[error("invalid header pattern: {0}")]
    HeaderPattern(#[from] regex::Error),
    #[error("similarity threshold must be in (0, 1], got {0}")]
    Similarity(f64),
    #[error("tree depth must be at least 2, got {0}")]
    Depth(usize),
    #[error("failed to read parser config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to decode parser config {path}: {message}")]
    Decode { path: String, message: String },
}

impl ParserConfig {
    /// Reads a TOML or JSON settings file (chosen by extension, `.json` is JSON).
    pub fn load(path: &Path) -> Result<Self, ParserConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ParserConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let decoded = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let cfg: ParserConfig = decoded.map_err(|message| ParserConfigError::Decode {
            path: path.display().to_string(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ParserConfigError> {
        if !(self.similarity > 0.0 && self.similarity <= 1.0) {
            return Err(ParserConfigError::Similarity(self.similarity));
        }
        if self.depth < 2 {
            return Err(ParserConfigError::Depth(self.depth));
        }
        Regex::new(&self.header_pattern)?;
        Ok(())
    }

    /// Stable 64-bit identity of every setting that influences template boundaries.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "depth={};similarity={:?};max_children={};mask_digits={};header={}",
            self.depth, self.similarity, self.max_children, self.mask_digits, self.header_pattern
        );
        fnv1a64(canonical.as_bytes())
    }
}

/// A parser bound to one validated configuration.
#[derive(Debug, Clone)]
pub struct LogParser {
    config: ParserConfig,
    header: Regex,
    stack_frame: Regex,
    more_frames: Regex,
}

struct Pending {
    header: Option<Header>,
    message: String,
    stack_lines: Vec<String>,
    origin: Origin,
}

impl LogParser {
    pub fn new(config: ParserConfig) -> Result<Self, ParserConfigError> {
        config.validate()?;
        Ok(Self {
            header: Regex::new(&config.header_pattern)?,
            stack_frame: Regex::new(r"^\s+at\s").expect("static regex"),
            more_frames: Regex::new(r"^\s*\.\.\.\s*\d+\s+more\b").expect("static regex"),
            config,
        })
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }

    /// Stack heuristics: an indented `at ` frame, a `Caused by:` line, a
    /// `... N more` marker, or any indented line directly after another
    /// stack line.
    pub fn classify_line(&self, line: &RawLine, prev: Option<LineKind>) -> LineKind {
        let text = line.text.as_str();
        let indented = text.starts_with(|c: char| c.is_whitespace());
        if self.stack_frame.is_match(text)
            || text.trim_start().starts_with("Caused by:")
            || self.more_frames.is_match(text)
            || (indented && prev == Some(LineKind::StackContinuation))
        {
            LineKind::StackContinuation
        } else {
            LineKind::LogStart
        }
    }

    fn split_header(&self, text: &str) -> (Option<Header>, String) {
        let trimmed = text.trim();
        if let Some(caps) = self.header.captures(trimmed) {
            let timestamp = caps.name("timestamp").map(|m| m.as_str().to_string());
            let level = caps.name("level").and_then(|m| Level::parse(m.as_str()));
            if timestamp.is_some() || level.is_some() {
                let component = caps.name("component").map(|m| m.as_str().to_string());
                let message = match caps.name("message") {
                    Some(m) => m.as_str(),
                    None => &trimmed[caps.get(0).map_or(0, |m| m.end())..],
                };
                let header = Header { timestamp, level, component };
                return (Some(header), message.trim().to_string());
            }
        }
        (None, trimmed.to_string())
    }

    /// Parses a sequence of lines (possibly from several files) into records
    /// and templates. Blank lines are skipped.
    pub fn parse<I>(&self, lines: I) -> ParsedLog
    where
        I: IntoIterator<Item = RawLine>,
    {
        let mut pending: Vec<Pending> = Vec::new();
        let mut prev: Option<LineKind> = None;
        let mut current_file: Option<String> = None;

        for line in lines {
            if current_file.as_deref() != Some(line.file_id.as_str()) {
                current_file = Some(line.file_id.clone());
                prev = None;
            }
            if line.text.trim().is_empty() {
                continue;
            }
            let kind = self.classify_line(&line, prev);
            prev = Some(kind);
            match kind {
                LineKind::LogStart => {
                    let (header, message) = self.split_header(&line.text);
                    pending.push(Pending {
                        header,
                        message,
                        stack_lines: Vec::new(),
                        origin: Origin { file_id: line.file_id, line_no: line.line_no },
                    });
                }
                LineKind::StackContinuation => {
                    let owner_in_file = pending
                        .last()
                        .is_some_and(|p| p.origin.file_id == line.file_id);
                    if !owner_in_file {
                        pending.push(Pending {
                            header: None,
                            message: String::new(),
                            stack_lines: Vec::new(),
                            origin: Origin {
                                file_id: line.file_id.clone(),
                                line_no: line.line_no,
                            },
                        });
                    }
                    pending
                        .last_mut()
                        .expect("owner record exists")
                        .stack_lines
                        .push(line.text.trim_end().to_string());
                }
            }
        }

        self.mine(pending)
    }

    fn mine(&self, pending: Vec<Pending>) -> ParsedLog {
        let cfg = &self.config;
        let mut tree = drain::DrainTree::new(cfg.depth, cfg.similarity, cfg.max_children, cfg.mask_digits);
        let assignments: Vec<usize> = pending
            .iter()
            .map(|p| {
                let words: Vec<&str> = p.message.split_whitespace().collect();
                tree.add(&words)
            })
            .collect();

        let cluster_hashes: Vec<(u64, String)> = tree
            .clusters
            .iter()
            .map(|c| {
                let pattern = canonicalize(&c.pattern());
                (fnv1a64(pattern.as_bytes()), pattern)
            })
            .collect();

        let mut templates: BTreeMap<u64, LogTemplate> = BTreeMap::new();
        let mut records = Vec::with_capacity(pending.len());
        for (p, cluster_idx) in pending.into_iter().zip(assignments) {
            let cluster = &tree.clusters[cluster_idx];
            let (hash, pattern) = &cluster_hashes[cluster_idx];
            let variables = p
                .message
                .split_whitespace()
                .zip(&cluster.tokens)
                .filter(|(_, t)| **t == drain::Token::Wild)
                .map(|(w, _)| w.to_string())
                .collect();
            templates
                .entry(*hash)
                .or_insert_with(|| LogTemplate { pattern: pattern.clone(), hash: *hash, support: 0 })
                .support += 1;
            records.push(LogRecord {
                header: p.header,
                message: p.message,
                stack_lines: p.stack_lines,
                template_id: *hash,
                variables,
                origin: p.origin,
            });
        }

        ParsedLog { records, templates, fingerprint: cfg.fingerprint() }
    }
}

/// Splits raw bytes into numbered lines, replacing invalid UTF-8.
pub fn lines_from_bytes(file_id: &str, bytes: &[u8]) -> Vec<RawLine> {
    bytes
        .split(|b| *b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            RawLine {
                file_id: file_id.to_string(),
                line_no: i + 1,
                text: String::from_utf8_lossy(raw).into_owned(),
            }
        })
        .collect()
}

pub fn read_log_file(path: &Path) -> std::io::Result<Vec<RawLine>> {
    let bytes = fs::read(path)?;
    Ok(lines_from_bytes(&path.display().to_string(), &bytes))
}

/// Parses one in-memory log text with the given parser.
pub fn parse_text(parser: &LogParser, file_id: &str, text: &str) -> ParsedLog {
    parser.parse(lines_from_bytes(file_id, text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> LogParser {
        LogParser::new(ParserConfig::default()).unwrap()
    }

    fn raw(text: &str) -> RawLine {
        RawLine { file_id: "f".into(), line_no: 1, text: text.into() }
    }

    #[test]
    fn classifies_header_line() {
        let p = parser();
        let line = raw("2023-08-01 12:00:01 INFO JobClient: Running job job_1");
        assert_eq!(p.classify_line(&line, None), LineKind::LogStart);
        let (h, msg) = p.split_header(&line.text);
        let h = h.unwrap();
        assert_eq!(h.timestamp.as_deref(), Some("2023-08-01 12:00:01"));
        assert_eq!(h.level, Some(Level::Info));
        assert_eq!(h.component.as_deref(), Some("JobClient"));
        assert_eq!(msg, "Running job job_1");
    }

    #[test]
    fn classifies_stack_lines() {
        let p = parser();
        assert_eq!(
            p.classify_line(&raw("\tat org.example.Foo.bar(Foo.java:10)"), None),
            LineKind::StackContinuation
        );
        assert_eq!(
            p.classify_line(&raw("Caused by: NullPointerException"), None),
            LineKind::StackContinuation
        );
        assert_eq!(p.classify_line(&raw("\t... 12 more"), None), LineKind::StackContinuation);
    }

    #[test]
    fn headerless_prose_is_a_log_start() {
        let p = parser();
        let line = raw("bare continuation prose");
        assert_eq!(p.classify_line(&line, None), LineKind::LogStart);
        assert_eq!(p.split_header(&line.text).0, None);
        // indentation alone is not a stack line without stack context
        assert_eq!(p.classify_line(&raw("  indented prose"), Some(LineKind::LogStart)), LineKind::LogStart);
        assert_eq!(
            p.classify_line(&raw("  Suppressed: x"), Some(LineKind::StackContinuation)),
            LineKind::StackContinuation
        );
    }

    #[test]
    fn two_jobs_share_a_template() {
        let parsed = parse_text(&parser(), "f", "Running job job_1\nRunning job job_2\n");
        assert_eq!(parsed.templates.len(), 1);
        let t = parsed.templates.values().next().unwrap();
        assert_eq!(t.pattern, "Running job <*>");
        assert_eq!(t.support, 2);
        assert_eq!(parsed.records[0].variables, vec!["job_1"]);
        assert_eq!(parsed.records[1].variables, vec!["job_2"]);
    }

    #[test]
    fn constant_message_has_no_variables() {
        let parsed = parse_text(&parser(), "f", "all tasks completed\n");
        let t = parsed.templates.values().next().unwrap();
        assert_eq!(t.pattern, "all tasks completed");
        assert!(parsed.records[0].variables.is_empty());
    }

    #[test]
    fn stack_lines_attach_to_record() {
        let text = "2023-07-14 10:12:02 ERROR security.Groups: Error java.lang.NullPointerException\n\
                    \tat a.B.c(B.java:1)\n\tat a.B.d(B.java:2)\n\tat a.B.e(B.java:3)\n";
        let parsed = parse_text(&parser(), "f", text);
        assert_eq!(parsed.records.len(), 1);
        let r = &parsed.records[0];
        assert_eq!(r.stack_lines.len(), 3);
        assert_eq!(parsed.template_of(r).unwrap().pattern, "Error java.lang.NullPointerException");
    }

    #[test]
    fn leading_stack_block_gets_synthetic_record() {
        let parsed = parse_text(&parser(), "f", "\tat a.B.c(B.java:1)\nINFO x: hello\n");
        assert_eq!(parsed.records.len(), 2);
        assert!(parsed.records[0].header.is_none());
        assert_eq!(parsed.records[0].message, "");
        assert_eq!(parsed.records[0].stack_lines.len(), 1);
    }

    #[test]
    fn stack_does_not_cross_files() {
        let mut lines = lines_from_bytes("a", b"INFO x: hello\n");
        lines.extend(lines_from_bytes("b", b"\tat a.B.c(B.java:1)\n"));
        let parsed = parser().parse(lines);
        assert_eq!(parsed.records.len(), 2);
        assert!(parsed.records[0].stack_lines.is_empty());
        assert_eq!(parsed.records[1].origin.file_id, "b");
    }

    #[test]
    fn empty_input_yields_no_records() {
        let parsed = parse_text(&parser(), "f", "");
        assert!(parsed.records.is_empty());
        assert!(parsed.templates.is_empty());
    }

    #[test]
    fn invalid_utf8_is_replaced() {
        let lines = lines_from_bytes("f", b"bad \xff byte\n");
        assert!(lines[0].text.contains('\u{FFFD}'));
        let parsed = parser().parse(lines);
        assert_eq!(parsed.records.len(), 1);
    }

    #[test]
    fn config_rejects_bad_similarity() {
        let cfg = ParserConfig { similarity: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ParserConfigError::Similarity(_))));
    }

    #[test]
    fn fingerprint_tracks_settings() {
        let a = ParserConfig::default();
        let b = ParserConfig { depth: 5, ..Default::default() };
        assert_eq!(a.fingerprint(), ParserConfig::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
