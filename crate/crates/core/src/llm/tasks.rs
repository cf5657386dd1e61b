// SPDX-License-Identifier: Apache-2.0

//! Match verification and indirect inference on top of [`complete`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts;
use super::{complete, LlmBackend, LlmError, LlmSettings, OriginPhase, Suspect, SuspectSet, TaskKind};
use crate::anomaly::KeyLogMessage;
use crate::config::{ConfigSettings, PropertyCatalog};
use crate::direct::MatchSet;

pub const HEURISTIC_EXPLANATION: &str = "heuristic: most anomalous log matches";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryScore {
    /// 1-based position in the match set.
    pub index: usize,
    pub score: u8,
    pub plausible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub per_entry: Vec<EntryScore>,
    pub passed: bool,
    pub warnings: Vec<String>,
    /// No output line could be parsed at all.
    pub malformed: bool,
}

impl VerificationVerdict {
    /// Plausible entries collapsed per property, best score first.
    pub fn suspects(&self, matches: &MatchSet, max_suspects: usize) -> SuspectSet {
        struct Acc {
            best: u8,
            first: usize,
            value: String,
            name: bool,
            value_hit: bool,
        }
        let mut by_prop: BTreeMap<&str, Acc> = BTreeMap::new();
        for s in self.per_entry.iter().filter(|s| s.plausible) {
            let m = &matches.matches[s.index - 1];
            let acc = by_prop.entry(m.entry.property.as_str()).or_insert(Acc {
                best: s.score,
                first: s.index,
                value: m.entry.value.clone(),
                name: false,
                value_hit: false,
            });
            acc.best = acc.best.max(s.score);
            acc.first = acc.first.min(s.index);
            if m.kind.is_name_hit() {
                acc.name = true;
            } else {
                acc.value_hit = true;
            }
        }
        let mut ordered: Vec<_> = by_prop.into_iter().collect();
        ordered.sort_by(|(_, a), (_, b)| b.best.cmp(&a.best).then(a.first.cmp(&b.first)));
        let suspects = ordered
            .into_iter()
            .take(max_suspects)
            .enumerate()
            .map(|(i, (property, acc))| Suspect {
                property: property.to_string(),
                value: Some(acc.value),
                explanation: match (acc.name, acc.value_hit) {
                    (true, true) => "name hits; value hits",
                    (true, false) => "name hits",
                    _ => "value hits",
                }
                .to_string(),
                rank: i + 1,
            })
            .collect();
        SuspectSet { suspects, origin_phase: OriginPhase::Verification }
    }
}

fn entry_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*ENTRY\s+(\d+)\s*:\s*SCORE\s*=\s*(\d+)\s*$").unwrap())
}

fn suspect_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*SUSPECT\s+(\d+)\s*:\s*([^|]*?)\s*\|\s*(.*?)\s*$").unwrap())
}

/// Parses `ENTRY <i>: SCORE=<s>` lines. Entries without a usable line score 0.
pub fn parse_verification(text: &str, entries: usize, threshold: u8) -> VerificationVerdict {
    let mut scores: BTreeMap<usize, u8> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut parsed = 0usize;
    for line in text.lines() {
        let Some(caps) = entry_line().captures(line) else { continue };
        let index: usize = caps[1].parse().unwrap_or(0);
        let score: Option<u8> = caps[2].parse().ok().filter(|s| *s <= 100);
        match score {
            Some(score) if (1..=entries).contains(&index) => {
                parsed += 1;
                if scores.insert(index, score).is_some() {
                    warnings.push(format!("entry {index} scored more than once; keeping the last score"));
                }
            }
            Some(_) => warnings.push(format!("ignoring score for unknown entry {index}")),
            None => warnings.push(format!("score out of range on line {:?}", line.trim())),
        }
    }
    let malformed = parsed == 0;
    if malformed {
        warnings.push("MalformedOutput: no ENTRY line could be parsed".to_string());
    }
    let per_entry: Vec<EntryScore> = (1..=entries)
        .map(|index| {
            let score = match scores.get(&index) {
                Some(s) => *s,
                None => {
                    if !malformed {
                        warnings.push(format!("no score for entry {index}; treating as 0"));
                    }
                    0
                }
            };
            EntryScore { index, score, plausible: score >= threshold }
        })
        .collect();
    let passed = per_entry.iter().any(|e| e.plausible);
    VerificationVerdict { per_entry, passed, warnings, malformed }
}

/// Asks the model to score each matched entry.
pub fn verify(
    matches: &MatchSet,
    catalog: &PropertyCatalog,
    backend: &dyn LlmBackend,
    settings: &LlmSettings,
) -> Result<VerificationVerdict, LlmError> {
    if matches.is_empty() {
        return Err(LlmError::InvalidRequest("verification needs at least one matched entry".into()));
    }
    let request = settings.request(
        TaskKind::Verify,
        prompts::verify_system_prompt(),
        prompts::verify_user_prompt(matches, catalog),
    );
    let text = complete(backend, &request)?;
    Ok(parse_verification(&text, matches.len(), settings.verify_threshold))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndirectOutcome {
    pub suspects: SuspectSet,
    pub warnings: Vec<String>,
}

impl IndirectOutcome {
    pub fn is_inconclusive(&self) -> bool {
        self.suspects.is_empty()
    }
}

/// Parses `SUSPECT <rank>: <property> | <explanation>` lines, keeping only
/// properties present in `settings`.
pub fn parse_suspects(text: &str, settings: &ConfigSettings, max_suspects: usize) -> IndirectOutcome {
    let mut warnings = Vec::new();
    let mut raw: Vec<(usize, String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(c) = suspect_line().captures(line) {
            let rank = c[1].parse().unwrap_or(usize::MAX);
            raw.push((rank, c[2].to_string(), c[3].to_string()));
        }
    }
    raw.sort_by_key(|(rank, _, _)| *rank);
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (_, property, explanation) in raw {
        if !settings.contains_property(&property) {
            warnings.push(format!("dropping suspect {property:?}: not among the provided settings"));
        } else if explanation.is_empty() {
            warnings.push(format!("dropping suspect {property:?}: empty explanation"));
        } else if !seen.insert(property.clone()) {
            warnings.push(format!("dropping duplicate suspect {property:?}"));
        } else {
            kept.push((property, explanation));
        }
    }
    if kept.len() > max_suspects {
        warnings.push(format!("keeping the first {max_suspects} of {} suspects", kept.len()));
        kept.truncate(max_suspects);
    }
    let suspects = kept
        .into_iter()
        .enumerate()
        .map(|(i, (property, explanation))| Suspect {
            value: settings.get(&property).map(|e| e.value.clone()),
            property,
            explanation,
            rank: i + 1,
        })
        .collect();
    IndirectOutcome {
        suspects: SuspectSet { suspects, origin_phase: OriginPhase::IndirectInference },
        warnings,
    }
}

/// Builds the indirect prompt, evicting the oldest key messages while the
/// user prompt exceeds `cap` bytes (at least one message is always kept).
pub fn fit_indirect_prompt(
    msgs: &[KeyLogMessage],
    settings: &ConfigSettings,
    catalog: &PropertyCatalog,
    cap: usize,
) -> (String, usize) {
    let mut by_age: Vec<usize> = (0..msgs.len()).collect();
    by_age.sort_by(|a, b| msgs[*a].record.origin.cmp(&msgs[*b].record.origin));
    let mut evicted: BTreeSet<usize> = BTreeSet::new();
    loop {
        let kept: Vec<KeyLogMessage> = msgs
            .iter()
            .enumerate()
            .filter(|(i, _)| !evicted.contains(i))
            .map(|(_, m)| m.clone())
            .collect();
        let prompt = prompts::indirect_user_prompt(&kept, settings, catalog);
        if prompt.len() <= cap || kept.len() <= 1 {
            return (prompt, evicted.len());
        }
        evicted.insert(by_age[evicted.len()]);
    }
}

/// Asks the model to pick suspects among all provided settings.
pub fn infer_indirect(
    msgs: &[KeyLogMessage],
    settings: &ConfigSettings,
    catalog: &PropertyCatalog,
    backend: &dyn LlmBackend,
    llm: &LlmSettings,
) -> Result<IndirectOutcome, LlmError> {
    let (user, evicted) = fit_indirect_prompt(msgs, settings, catalog, llm.prompt_cap);
    let request = llm.request(TaskKind::Indirect, prompts::indirect_system_prompt(llm.max_suspects), user);
    let text = complete(backend, &request)?;
    let mut outcome = parse_suspects(&text, settings, llm.max_suspects);
    if evicted > 0 {
        outcome
            .warnings
            .insert(0, format!("prompt cap reached: evicted {evicted} oldest key message(s)"));
    }
    if outcome.is_inconclusive() {
        outcome.warnings.push("Inconclusive: no valid suspect in the model output".to_string());
    }
    Ok(outcome)
}

/// Picks the property matched by the most distinct key messages.
pub fn heuristic_verify(matches: &MatchSet) -> SuspectSet {
    #[derive(Default)]
    struct Tally<'a> {
        origins: BTreeSet<String>,
        name_hits: usize,
        value: &'a str,
    }
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    for m in &matches.matches {
        let t = tallies.entry(m.entry.property.as_str()).or_default();
        t.origins.insert(m.key_message.record.origin.to_string());
        t.value = &m.entry.value;
        if m.kind.is_name_hit() {
            t.name_hits += 1;
        }
    }
    let best = tallies.into_iter().min_by(|(pa, a), (pb, b)| {
        b.origins
            .len()
            .cmp(&a.origins.len())
            .then(b.name_hits.cmp(&a.name_hits))
            .then(pa.cmp(pb))
    });
    let suspects = best
        .map(|(property, t)| Suspect {
            property: property.to_string(),
            value: Some(t.value.to_string()),
            explanation: HEURISTIC_EXPLANATION.to_string(),
            rank: 1,
        })
        .into_iter()
        .collect();
    SuspectSet { suspects, origin_phase: OriginPhase::Verification }
}
