// SPDX-License-Identifier: Apache-2.0

//! Diagnosis report: verdict, suspects with evidence, flow and notes.
//!
//! The JSON layout is documented in `docs/report-schema.md`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anomaly::KeyLogMessage;
use crate::direct::MatchSet;
use crate::llm::SuspectSet;

pub const SCHEMA_VERSION: u32 = 1;
pub const EXCERPT_LIMIT: usize = 500;
const ELLIPSIS: &str = "...";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportVerdict {
    FaultFree,
    ConfigurationError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    /// Direct matches confirmed by verification.
    FastFlow,
    /// No direct match; indirect inference only.
    DirectFlow,
    /// Verification rejected the matches; indirect inference followed.
    CompleteFlow,
}

impl Flow {
    pub fn label(self) -> &'static str {
        match self {
            Flow::FastFlow => "fast",
            Flow::DirectFlow => "direct",
            Flow::CompleteFlow => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub file: String,
    pub line: usize,
    pub excerpt: String,
}

impl EvidenceItem {
    pub fn from_message(msg: &KeyLogMessage) -> Self {
        Self {
            file: msg.record.origin.file_id.clone(),
            line: msg.record.origin.line_no,
            excerpt: excerpt(&msg.record.to_lines().join("\n")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectEvidence {
    pub property: String,
    pub messages: Vec<EvidenceItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolMeta {
    pub version: String,
    /// Hex parser-config fingerprint of the template store.
    pub store_fingerprint: String,
    /// Unix seconds recorded when the store was created.
    pub store_created_at: u64,
    pub prompt_version: String,
    pub llm_backend: String,
    /// Echo of `--seed`; analysis itself draws no random numbers.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub schema_version: u32,
    pub verdict: ReportVerdict,
    pub inconclusive: bool,
    pub flow: Option<Flow>,
    pub suspects: Option<SuspectSet>,
    pub evidence: Vec<SuspectEvidence>,
    /// All key messages, filled only for inconclusive reports.
    pub context: Vec<EvidenceItem>,
    pub phase_notes: Vec<String>,
    pub tool_meta: ToolMeta,
}

/// Everything the pipeline knows once it stops.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisState {
    pub key_messages: Vec<KeyLogMessage>,
    pub matches: MatchSet,
    /// `None` when stage 1 found no anomaly.
    pub suspects: Option<SuspectSet>,
    pub flow: Option<Flow>,
    pub notes: Vec<String>,
    pub meta: ToolMeta,
}

/// Truncates to [`EXCERPT_LIMIT`] characters plus an ellipsis marker.
pub fn excerpt(text: &str) -> String {
    match text.char_indices().nth(EXCERPT_LIMIT) {
        Some((cut, _)) => format!("{}{ELLIPSIS}", &text[..cut]),
        None => text.to_string(),
    }
}

/// Messages matched to the property, or every key message when none was.
fn evidence_for(property: &str, state: &AnalysisState) -> Vec<EvidenceItem> {
    let mut seen = BTreeSet::new();
    let mut items: Vec<EvidenceItem> = state
        .matches
        .matches
        .iter()
        .filter(|m| m.entry.property == property)
        .filter(|m| seen.insert(m.key_message.record.origin.clone()))
        .map(|m| EvidenceItem::from_message(&m.key_message))
        .collect();
    if items.is_empty() {
        items = state.key_messages.iter().map(EvidenceItem::from_message).collect();
    }
    items.sort_by(|a, b| (&a.file, a.line).cmp(&(&b.file, b.line)));
    items
}

pub fn build_report(state: &AnalysisState) -> DiagnosisReport {
    let Some(suspects) = &state.suspects else {
        return DiagnosisReport {
            schema_version: SCHEMA_VERSION,
            verdict: ReportVerdict::FaultFree,
            inconclusive: false,
            flow: None,
            suspects: None,
            evidence: Vec::new(),
            context: Vec::new(),
            phase_notes: state.notes.clone(),
            tool_meta: state.meta.clone(),
        };
    };
    let inconclusive = suspects.is_empty();
    let evidence = suspects
        .suspects
        .iter()
        .map(|s| SuspectEvidence {
            property: s.property.clone(),
            messages: evidence_for(&s.property, state),
        })
        .collect();
    let context = if inconclusive {
        state.key_messages.iter().map(EvidenceItem::from_message).collect()
    } else {
        Vec::new()
    };
    DiagnosisReport {
        schema_version: SCHEMA_VERSION,
        verdict: ReportVerdict::ConfigurationError,
        inconclusive,
        flow: state.flow,
        suspects: Some(suspects.clone()),
        evidence,
        context,
        phase_notes: state.notes.clone(),
        tool_meta: state.meta.clone(),
    }
}

fn push_excerpt(out: &mut String, indent: &str, item: &EvidenceItem) {
    let mut lines = item.excerpt.lines();
    let _ = writeln!(out, "{indent}- {}:{}: {}", item.file, item.line, lines.next().unwrap_or(""));
    for l in lines {
        let _ = writeln!(out, "{indent}  {l}");
    }
}

fn render_text(r: &DiagnosisReport) -> String {
    let mut out = String::new();
    match r.verdict {
        ReportVerdict::FaultFree => {
            out.push_str("VERDICT: configuration-fault-free\n");
            out.push_str("No configuration error occurs.\n");
        }
        ReportVerdict::ConfigurationError => {
            out.push_str("VERDICT: configuration-error\n");
            if let Some(flow) = r.flow {
                let _ = writeln!(out, "FLOW: {}", flow.label());
            }
            if r.inconclusive {
                out.push_str("RESULT: inconclusive, no configuration error trigger found\n");
            }
        }
    }
    if let Some(set) = r.suspects.as_ref().filter(|s| !s.is_empty()) {
        out.push_str("\nSUSPECTS\n");
        for s in &set.suspects {
            match &s.value {
                Some(v) => {
                    let _ = writeln!(out, "{}. {} = {}", s.rank, s.property, v);
                }
                None => {
                    let _ = writeln!(out, "{}. {}", s.rank, s.property);
                }
            }
            let _ = writeln!(out, "   explanation: {}", s.explanation);
            if let Some(ev) = r.evidence.iter().find(|e| e.property == s.property) {
                out.push_str("   evidence:\n");
                for item in &ev.messages {
                    push_excerpt(&mut out, "     ", item);
                }
            }
        }
    }
    if !r.context.is_empty() {
        out.push_str("\nKEY LOG MESSAGES\n");
        for item in &r.context {
            push_excerpt(&mut out, "  ", item);
        }
    }
    if !r.phase_notes.is_empty() {
        out.push_str("\nNOTES\n");
        for n in &r.phase_notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    let m = &r.tool_meta;
    let _ = writeln!(
        out,
        "\nconfloc {} (store {} created {}, prompts {}, llm {})",
        m.version, m.store_fingerprint, m.store_created_at, m.prompt_version, m.llm_backend
    );
    out
}

pub fn render(report: &DiagnosisReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Text => render_text(report).into_bytes(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s.into_bytes()
        }
    }
}
