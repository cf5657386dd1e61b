// SPDX-License-Identifier: Apache-2.0

//! The analysis state machine: stage 1, then direct inference, verification
//! and indirect inference as the flow requires.

use serde::{Deserialize, Serialize};

use crate::anomaly::{classify, KeyLogMessage, VerdictKind, WeightedTokenSet};
use crate::config::{build_hot_filter, ConfigSettings, PropertyCatalog, DEFAULT_HOT_K};
use crate::direct::{run_direct, DirectOptions, MatchSet};
use crate::llm::{
    heuristic_verify, infer_indirect, verify, BackendKind, LlmBackend, LlmError, LlmSettings,
    OriginPhase, Suspect, SuspectSet,
};
use crate::log_parser::ParsedLog;
use crate::report::{build_report, AnalysisState, DiagnosisReport, Flow, ToolMeta};
use crate::template_store::{StoreError, TemplateStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Stage1,
    Direct,
    Verify,
    Indirect,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Stage1 => "stage1",
            Phase::Direct => "direct",
            Phase::Verify => "verify",
            Phase::Indirect => "indirect",
        }
    }
}

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    FaultFree,
    Suspects,
    Inconclusive,
    Usage,
    DataError,
    IoError,
    LlmFailure,
    Internal,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::FaultFree => 0,
            ExitStatus::Suspects => 10,
            ExitStatus::Inconclusive => 11,
            ExitStatus::Usage => 64,
            ExitStatus::DataError => 65,
            ExitStatus::IoError => 66,
            ExitStatus::LlmFailure => 69,
            ExitStatus::Internal => 70,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Accept direct matches without verification.
    pub no_verify: bool,
    pub hot_k: usize,
    pub direct: DirectOptions,
    pub llm: LlmSettings,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { no_verify: false, hot_k: DEFAULT_HOT_K, direct: DirectOptions::default(), llm: LlmSettings::default() }
    }
}

pub struct PipelineInputs<'a> {
    pub parsed: &'a ParsedLog,
    pub store: &'a TemplateStore,
    pub tokens: &'a WeightedTokenSet,
    pub settings: &'a ConfigSettings,
    pub catalog: &'a PropertyCatalog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutcome {
    pub report: DiagnosisReport,
    pub status: ExitStatus,
    pub trace: Vec<Phase>,
    pub matches: MatchSet,
    /// Set when an LLM call failed mid-pipeline.
    pub llm_error: Option<LlmError>,
}

impl AnalysisOutcome {
    pub fn flow(&self) -> Option<Flow> {
        self.report.flow
    }

    pub fn suspects(&self) -> Vec<&str> {
        self.report.suspects.iter().flat_map(|s| s.properties()).collect()
    }
}

/// Direct matches taken as suspects without verification, one per property
/// in first-seen order.
fn unverified_suspects(matches: &MatchSet) -> SuspectSet {
    let suspects = matches
        .properties()
        .into_iter()
        .enumerate()
        .map(|(i, property)| {
            let kinds: Vec<_> = matches.matches.iter().filter(|m| m.entry.property == property).collect();
            let name = kinds.iter().any(|m| m.kind.is_name_hit());
            let value = kinds.iter().any(|m| !m.kind.is_name_hit());
            Suspect {
                property: property.to_string(),
                value: Some(kinds[0].entry.value.clone()),
                explanation: match (name, value) {
                    (true, true) => "name hits; value hits",
                    (true, false) => "name hits",
                    _ => "value hits",
                }
                .to_string(),
                rank: i + 1,
            }
        })
        .collect();
    SuspectSet { suspects, origin_phase: OriginPhase::DirectInference }
}

/// Direct inference with a hot-term filter over the catalog and settings names.
pub fn direct_matches(msgs: &[KeyLogMessage], inputs: &PipelineInputs<'_>, options: &PipelineOptions) -> MatchSet {
    let mut universe = inputs.catalog.clone();
    universe.extend_universe(inputs.settings);
    let filter = build_hot_filter(&universe, options.hot_k);
    run_direct(msgs, inputs.settings, &filter, options.direct)
}

struct Run {
    trace: Vec<Phase>,
    notes: Vec<String>,
}

impl Run {
    fn enter(&mut self, phase: Phase) {
        self.trace.push(phase);
    }

    fn trace_note(&self) -> String {
        let labels: Vec<_> = self.trace.iter().map(|p| p.label()).collect();
        format!("trace: {}", labels.join("/"))
    }
}

/// Runs the whole analysis. Store/config mismatches are the only hard errors;
/// LLM failures are folded into the outcome.
pub fn analyze(
    inputs: &PipelineInputs<'_>,
    backend: &dyn LlmBackend,
    options: &PipelineOptions,
    meta: ToolMeta,
) -> Result<AnalysisOutcome, StoreError> {
    let mut run = Run { trace: vec![Phase::Stage1], notes: Vec::new() };
    let verdict = classify(inputs.parsed, inputs.store, inputs.tokens)?;
    let mut state = AnalysisState {
        key_messages: verdict.key_messages.clone(),
        matches: MatchSet::default(),
        suspects: None,
        flow: None,
        notes: Vec::new(),
        meta,
    };
    let finish = |run: Run, mut state: AnalysisState, llm_error: Option<LlmError>| {
        let mut notes = vec![run.trace_note()];
        notes.extend(run.notes);
        state.notes = notes;
        let report = build_report(&state);
        let status = if llm_error.is_some() {
            ExitStatus::LlmFailure
        } else {
            match &state.suspects {
                None => ExitStatus::FaultFree,
                Some(s) if s.is_empty() => ExitStatus::Inconclusive,
                Some(_) => ExitStatus::Suspects,
            }
        };
        AnalysisOutcome { report, status, trace: run.trace, matches: state.matches, llm_error }
    };
    if verdict.kind == VerdictKind::FaultFree {
        return Ok(finish(run, state, None));
    }
    run.notes.push(format!(
        "stage 1: {} specific template(s), {} key message(s)",
        verdict.specific_template_count,
        verdict.key_messages.len()
    ));

    run.enter(Phase::Direct);
    state.matches = direct_matches(&verdict.key_messages, inputs, options);
    run.notes.push(format!(
        "direct inference: {} matched entr{} over {} propert{}",
        state.matches.len(),
        if state.matches.len() == 1 { "y" } else { "ies" },
        state.matches.properties().len(),
        if state.matches.properties().len() == 1 { "y" } else { "ies" },
    ));

    let heuristic = backend.kind() == BackendKind::Heuristic;
    let flow = if state.matches.is_empty() {
        Flow::DirectFlow
    } else if options.no_verify {
        state.suspects = Some(unverified_suspects(&state.matches));
        state.flow = Some(Flow::FastFlow);
        return Ok(finish(run, state, None));
    } else {
        run.enter(Phase::Verify);
        if heuristic {
            state.suspects = Some(heuristic_verify(&state.matches));
            state.flow = Some(Flow::FastFlow);
            return Ok(finish(run, state, None));
        }
        match verify(&state.matches, inputs.catalog, backend, &options.llm) {
            Ok(v) => {
                run.notes.extend(v.warnings.iter().map(|w| format!("verification: {w}")));
                if v.passed {
                    state.suspects = Some(v.suspects(&state.matches, options.llm.max_suspects));
                    state.flow = Some(Flow::FastFlow);
                    return Ok(finish(run, state, None));
                }
                run.notes.push("verification: no plausible entry".into());
                Flow::CompleteFlow
            }
            Err(e) => {
                run.notes.push(format!("verification failed: {e}"));
                state.suspects = Some(SuspectSet::empty(OriginPhase::Verification));
                state.flow = Some(Flow::FastFlow);
                return Ok(finish(run, state, Some(e)));
            }
        }
    };

    state.flow = Some(flow);
    if heuristic {
        run.notes.push("indirect inference disabled for the heuristic backend".into());
        state.suspects = Some(SuspectSet::empty(OriginPhase::IndirectInference));
        return Ok(finish(run, state, None));
    }
    run.enter(Phase::Indirect);
    match infer_indirect(&verdict.key_messages, inputs.settings, inputs.catalog, backend, &options.llm) {
        Ok(outcome) => {
            run.notes.extend(outcome.warnings.iter().map(|w| format!("indirect inference: {w}")));
            state.suspects = Some(outcome.suspects);
            Ok(finish(run, state, None))
        }
        Err(e) => {
            run.notes.push(format!("indirect inference failed: {e}"));
            state.suspects = Some(SuspectSet::empty(OriginPhase::IndirectInference));
            Ok(finish(run, state, Some(e)))
        }
    }
}
