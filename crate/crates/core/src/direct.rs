// SPDX-License-Identifier: Apache-2.0

//! Rule-based direct inference: property names and raw values matched
//! against key log messages. Stack lines never take part.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::anomaly::KeyLogMessage;
use crate::config::{ConfigEntry, ConfigSettings, HotTermFilter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MatchKind {
    NameHit { matched_segments: Vec<String>, full_name_hit: bool },
    ValueHit { matched_span: (usize, usize) },
}

impl MatchKind {
    pub fn is_name_hit(&self) -> bool {
        matches!(self, MatchKind::NameHit { .. })
    }

    fn rank(&self) -> u8 {
        match self {
            MatchKind::NameHit { .. } => 0,
            MatchKind::ValueHit { .. } => 1,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MatchKind::NameHit { .. } => "name hits",
            MatchKind::ValueHit { .. } => "value hits",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEntry {
    pub key_message: KeyLogMessage,
    pub entry: ConfigEntry,
    pub kind: MatchKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub matches: Vec<MatchedEntry>,
}

impl MatchSet {
    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    /// Distinct matched property names, in first-seen order.
    pub fn properties(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.matches
            .iter()
            .map(|m| m.entry.property.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectOptions {
    pub name_match: bool,
    pub value_match: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { name_match: true, value_match: true }
    }
}

/// Whether `needle` occurs in `haystack` (both already lowercased) delimited
/// by non-alphanumeric characters or the ends of the text.
fn contains_whole_token(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(start, m)| {
        let end = start + m.len();
        let left = text_char_before(haystack, start).is_none_or(|c| !c.is_alphanumeric());
        let right = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        left && right
    })
}

fn text_char_before(text: &str, idx: usize) -> Option<char> {
    text[..idx].chars().next_back()
}

/// Name matching: a full dotted-name substring hit, or at least one non-hot
/// segment present as a whole token. Comparison is case-insensitive.
pub fn match_names(
    msgs: &[KeyLogMessage],
    settings: &ConfigSettings,
    filter: &HotTermFilter,
) -> Vec<MatchedEntry> {
    let mut out = Vec::new();
    for msg in msgs {
        let text = msg.record.message.to_lowercase();
        for entry in &settings.entries {
            let name = entry.property.to_lowercase();
            let mut cold: Vec<String> = Vec::new();
            for seg in name.split('.').filter(|s| !s.is_empty()) {
                if !filter.contains(seg) && !cold.iter().any(|c| c == seg) {
                    cold.push(seg.to_string());
                }
            }
            let full_name_hit = !name.is_empty() && text.contains(&name);
            let matched_segments = if full_name_hit {
                cold
            } else {
                cold.into_iter().filter(|s| contains_whole_token(&text, s)).collect()
            };
            if full_name_hit || !matched_segments.is_empty() {
                out.push(MatchedEntry {
                    key_message: msg.clone(),
                    entry: entry.clone(),
                    kind: MatchKind::NameHit { matched_segments, full_name_hit },
                });
            }
        }
    }
    out
}

/// Value matching: raw substring search of the trimmed value; the first
/// occurrence gives the span.
pub fn match_values(msgs: &[KeyLogMessage], settings: &ConfigSettings) -> Vec<MatchedEntry> {
    let mut out = Vec::new();
    for msg in msgs {
        let text = &msg.record.message;
        for entry in &settings.entries {
            let value = entry.value.trim();
            if value.is_empty() {
                continue;
            }
            if let Some(start) = text.find(value) {
                out.push(MatchedEntry {
                    key_message: msg.clone(),
                    entry: entry.clone(),
                    kind: MatchKind::ValueHit { matched_span: (start, start + value.len()) },
                });
            }
        }
    }
    out
}

fn order(a: &MatchedEntry, b: &MatchedEntry) -> Ordering {
    a.key_message
        .record
        .origin
        .cmp(&b.key_message.record.origin)
        .then_with(|| a.entry.property.cmp(&b.entry.property))
        .then_with(|| a.kind.rank().cmp(&b.kind.rank()))
        .then_with(|| a.entry.source.cmp(&b.entry.source))
}

/// Deduplicated union of name and value matches, ordered by message origin,
/// property name, then kind.
pub fn run_direct(
    msgs: &[KeyLogMessage],
    settings: &ConfigSettings,
    filter: &HotTermFilter,
    options: DirectOptions,
) -> MatchSet {
    let mut all = Vec::new();
    if options.name_match {
        all.extend(match_names(msgs, settings, filter));
    }
    if options.value_match {
        all.extend(match_values(msgs, settings));
    }
    all.sort_by(order);
    all.dedup_by(|b, a| order(a, b) == Ordering::Equal);
    MatchSet { matches: all }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::anomaly::AnomalyDegree;
    use crate::config::{parse_flat_settings, EntrySource};
    use crate::log_parser::{LogRecord, Origin};

    pub(crate) fn key(line_no: usize, message: &str, stack: &[&str]) -> KeyLogMessage {
        KeyLogMessage {
            record: LogRecord {
                header: None,
                message: message.to_string(),
                stack_lines: stack.iter().map(|s| s.to_string()).collect(),
                template_id: 0,
                variables: vec![],
                origin: Origin { file_id: "f".into(), line_no },
            },
            template_degree: AnomalyDegree::from_micros(100_000),
            variable_degree: AnomalyDegree::default(),
        }
    }

    fn hot(terms: &[&str]) -> HotTermFilter {
        HotTermFilter { terms: terms.iter().map(|s| s.to_string()).collect(), k: terms.len() }
    }

    #[test]
    fn full_name_hit() {
        let msgs = [key(1, "Deleting mapred.local.dir contents failed", &[])];
        let s = parse_flat_settings("mapred.local.dir=/tmp/x\n").unwrap();
        let m = match_names(&msgs, &s, &hot(&["mapred"]));
        assert_eq!(m.len(), 1);
        assert_eq!(
            m[0].kind,
            MatchKind::NameHit { matched_segments: vec!["local".into(), "dir".into()], full_name_hit: true }
        );
    }

    #[test]
    fn partial_segments_hit() {
        let msgs = [key(1, "Mount point name.key has no mount entry", &[])];
        let s = parse_flat_settings("fs.viewfs.mounttable.default.name.key=x\n").unwrap();
        let m = match_names(&msgs, &s, &hot(&["fs", "default"]));
        assert_eq!(m.len(), 1);
        assert_eq!(
            m[0].kind,
            MatchKind::NameHit { matched_segments: vec!["name".into(), "key".into()], full_name_hit: false }
        );
    }

    #[test]
    fn hot_segments_are_ignored() {
        let msgs = [key(1, "hadoop started", &[])];
        let s = parse_flat_settings("hadoop.tmp.dir=/tmp\n").unwrap();
        assert!(match_names(&msgs, &s, &hot(&["hadoop"])).is_empty());
    }

    #[test]
    fn segments_need_whole_tokens() {
        let msgs = [key(1, "directory cleanup", &[])];
        let s = parse_flat_settings("x.dir=1\n").unwrap();
        assert!(match_names(&msgs, &s, &hot(&["x"])).is_empty());
    }

    #[test]
    fn job_completed_matches_nothing() {
        let msgs = [key(1, "job completed", &[])];
        let s = parse_flat_settings("mapred.local.dir=/tmp\ndfs.replication=3\n").unwrap();
        assert!(run_direct(&msgs, &s, &hot(&[]), DirectOptions::default()).is_empty());
    }

    #[test]
    fn zero_value_inside_port_is_a_value_hit() {
        let msgs = [key(1, "Call to [kry1040/72.30.116.100:50020] failed", &[])];
        let s = parse_flat_settings("dfs.datanode.du.reserved.pct=0\n").unwrap();
        let m = match_values(&msgs, &s);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].kind, MatchKind::ValueHit { matched_span: (13, 14) });
    }

    #[test]
    fn value_span_is_first_occurrence() {
        let msgs = [key(1, "buffer set to 8192 bytes, 8192 again", &[])];
        let s = parse_flat_settings("io.buffer=8192\n").unwrap();
        let m = match_values(&msgs, &s);
        let text = &msgs[0].record.message;
        assert_eq!(m[0].kind, MatchKind::ValueHit { matched_span: (14, 18) });
        assert_eq!(&text[14..18], "8192");
    }

    #[test]
    fn empty_value_never_matches() {
        let msgs = [key(1, "anything", &[])];
        let s = parse_flat_settings("a=\n").unwrap();
        assert!(match_values(&msgs, &s).is_empty());
    }

    #[test]
    fn stack_lines_are_ignored() {
        let msgs = [key(1, "Error java.lang.NullPointerException", &["\tat Foo.search(Foo.java:10)"])];
        let s = parse_flat_settings("ldap.search.levels=10\n").unwrap();
        assert!(run_direct(&msgs, &s, &hot(&["ldap"]), DirectOptions::default()).is_empty());
    }

    #[test]
    fn both_kinds_are_kept() {
        let msgs = [key(1, "timeout 30 exceeded", &[])];
        let s = parse_flat_settings("ipc.timeout=30\n").unwrap();
        let set = run_direct(&msgs, &s, &hot(&["ipc"]), DirectOptions::default());
        assert_eq!(set.len(), 2);
        assert!(set.matches[0].kind.is_name_hit());
        assert!(!set.matches[1].kind.is_name_hit());
    }

    #[test]
    fn one_name_two_values() {
        let msgs = [key(1, "retries 7 on 8020 exhausted", &[])];
        let s = parse_flat_settings("client.retries=100\nipc.port=8020\nmax.attempts=7\n").unwrap();
        let set = run_direct(&msgs, &s, &hot(&["client", "ipc", "max"]), DirectOptions::default());
        let got: Vec<_> = set.matches.iter().map(|m| (m.entry.property.as_str(), m.kind.is_name_hit())).collect();
        assert_eq!(got, vec![("client.retries", true), ("ipc.port", false), ("max.attempts", false)]);
    }

    #[test]
    fn ablation_toggles() {
        let msgs = [key(1, "timeout 30 exceeded", &[])];
        let s = parse_flat_settings("ipc.timeout=30\n").unwrap();
        let names = run_direct(&msgs, &s, &hot(&[]), DirectOptions { name_match: true, value_match: false });
        assert_eq!(names.len(), 1);
        let values = run_direct(&msgs, &s, &hot(&[]), DirectOptions { name_match: false, value_match: true });
        assert_eq!(values.len(), 1);
    }

    #[test]
    fn fabricated_entries_participate() {
        let msgs = [key(1, "port 50020", &[])];
        let mut s = parse_flat_settings("a=1\n").unwrap();
        s.merge(parse_flat_settings("b=0\n").unwrap().with_source(EntrySource::Fabricated));
        let set = run_direct(&msgs, &s, &hot(&[]), DirectOptions::default());
        assert_eq!(set.properties(), vec!["b"]);
    }
}
