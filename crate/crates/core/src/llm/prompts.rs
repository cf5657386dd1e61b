// SPDX-License-Identifier: Apache-2.0

//! Prompt construction. Prompts are a pure function of their inputs and the
//! template version.

use crate::anomaly::KeyLogMessage;
use crate::config::{ConfigSettings, EntrySource, PropertyCatalog};
use crate::direct::{MatchKind, MatchSet};

pub const PROMPT_VERSION: &str = "v1";

const VERIFY_SYSTEM: &str = include_str!("prompts/verify_system_v1.txt");
const INDIRECT_SYSTEM: &str = include_str!("prompts/indirect_system_v1.txt");
const NO_DESCRIPTION: &str = "(no description available)";

pub fn verify_system_prompt() -> String {
    VERIFY_SYSTEM.to_string()
}

pub fn indirect_system_prompt(max_suspects: usize) -> String {
    INDIRECT_SYSTEM.replace("{max_suspects}", &max_suspects.to_string())
}

fn describe_kind(kind: &MatchKind, message: &str) -> String {
    match kind {
        MatchKind::NameHit { matched_segments, full_name_hit } => {
            let mut s = String::from("name hits");
            if *full_name_hit {
                s.push_str(" (full property name)");
            }
            if !matched_segments.is_empty() {
                s.push_str(&format!(" [segments: {}]", matched_segments.join(", ")));
            }
            s
        }
        MatchKind::ValueHit { matched_span: (start, end) } => {
            let excerpt = message.get(*start..*end).unwrap_or_default();
            format!("value hits [{excerpt:?} at {start}..{end}]")
        }
    }
}

/// One numbered block per matched entry (numbering starts at 1).
pub fn verify_user_prompt(matches: &MatchSet, catalog: &PropertyCatalog) -> String {
    let mut out = String::from("MATCHED ENTRIES\n");
    for (i, m) in matches.matches.iter().enumerate() {
        let msg = &m.key_message.record.message;
        out.push_str(&format!(
            "\nENTRY {}\nlog message: {}\nproperty: {}\nvalue: {}\ndescription: {}\nmatch: {}\n",
            i + 1,
            msg,
            m.entry.property,
            m.entry.value,
            catalog.description(&m.entry.property).unwrap_or(NO_DESCRIPTION),
            describe_kind(&m.kind, msg),
        ));
    }
    out
}

fn render_message(out: &mut String, index: usize, msg: &KeyLogMessage) {
    out.push_str(&format!("\n[{}] {}\n", index + 1, msg.record.origin));
    for line in msg.record.to_lines() {
        out.push_str(&line);
        out.push('\n');
    }
}

pub fn indirect_user_prompt(
    msgs: &[KeyLogMessage],
    settings: &ConfigSettings,
    catalog: &PropertyCatalog,
) -> String {
    let mut out = String::from("KEY LOG MESSAGES\n");
    for (i, m) in msgs.iter().enumerate() {
        render_message(&mut out, i, m);
    }
    out.push_str("\nCONFIGURATION SETTINGS\n");
    for e in &settings.entries {
        let tag = match e.source {
            EntrySource::UserDefined => "",
            EntrySource::Fabricated => " (additional file)",
        };
        out.push_str(&format!("{}={}{}\n", e.property, e.value, tag));
    }
    out.push_str("\nPROPERTY DESCRIPTIONS\n");
    let mut described = std::collections::BTreeSet::new();
    for e in &settings.entries {
        if let Some(d) = catalog.description(&e.property) {
            if described.insert(e.property.as_str()) {
                out.push_str(&format!("{}: {}\n", e.property, d));
            }
        }
    }
    out
}
