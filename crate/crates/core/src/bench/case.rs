// SPDX-License-Identifier: Apache-2.0

//! Benchmark cases on disk, their evaluation and aggregate metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{baseline_log, gen_synthetic_logs, SymptomProfile, TemplatePool};
use super::{fp_rate, make_mutated_case, BenchError, GroundTruth, PhaseSelector};
use crate::anomaly::{classify, VerdictKind, WeightedTokenSet};
use crate::config::{parse_xml_settings, render_xml_settings, ConfigSettings, EntrySource, PropertyCatalog};
use crate::direct::MatchSet;
use crate::llm::{prompts, BackendKind, HeuristicBackend, LlmBackend, MockBackend};
use crate::log_parser::{parse_text, LogParser, ParserConfig};
use crate::pipeline::{analyze, direct_matches, PipelineInputs, PipelineOptions};
use crate::report::{Flow, ToolMeta};
use crate::template_store::TemplateStore;

pub const SCRIPTED_PLAUSIBLE: u8 = 95;
pub const SCRIPTED_IMPLAUSIBLE: u8 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseTruth {
    pub case_id: String,
    pub seed: u64,
    pub profile: SymptomProfile,
    #[serde(flatten)]
    pub truth: GroundTruth,
}

/// Everything a case directory holds.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInputs {
    pub truth: CaseTruth,
    pub logs: String,
    pub baseline: String,
    pub mutated: ConfigSettings,
    pub decoys: ConfigSettings,
    pub catalog: PropertyCatalog,
    /// Scripted mock replies keyed by task (`verify`, `indirect`).
    pub fixtures: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("pipeline error: {0}")]
    Pipeline(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CaseError + '_ {
    move |source| CaseError::Io { path: path.display().to_string(), source }
}

fn read(path: &Path) -> Result<String, CaseError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<(), CaseError> {
    fs::write(path, text).map_err(io_err(path))
}

fn all_settings(mutated: &ConfigSettings, decoys: &ConfigSettings) -> ConfigSettings {
    let mut s = mutated.clone();
    s.merge(decoys.clone().with_source(EntrySource::Fabricated));
    s
}

/// Scripts an LLM that recognizes the trigger: high scores for its entries,
/// low for the rest, and the trigger as the single indirect suspect.
fn scripted_fixtures(truth: &GroundTruth, matches: &MatchSet) -> BTreeMap<String, String> {
    let verify: String = matches
        .matches
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let score =
                if m.entry.property == truth.trigger.property { SCRIPTED_PLAUSIBLE } else { SCRIPTED_IMPLAUSIBLE };
            format!("ENTRY {}: SCORE={score}\n", i + 1)
        })
        .collect();
    let indirect = format!(
        "SUSPECT 1: {} | The failure follows from the invalid value {:?} of this property.\n",
        truth.trigger.property, truth.trigger.value
    );
    BTreeMap::from([("verify".to_string(), verify), ("indirect".to_string(), indirect)])
}

/// Generates one seeded case. The mock fixtures are scripted against the
/// direct-inference result computed with `options`.
pub fn gen_case(
    base: &ConfigSettings,
    catalog: &PropertyCatalog,
    seed: u64,
    profile: SymptomProfile,
    options: &PipelineOptions,
) -> Result<CaseInputs, CaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = make_mutated_case(base, catalog, &mut rng)?;
    let pool = TemplatePool::default();
    let baseline = baseline_log(&pool, &mut rng);
    let logs = gen_synthetic_logs(&case.truth, profile, &pool, &mut rng);
    let mut inputs = CaseInputs {
        truth: CaseTruth { case_id: format!("{}-{seed}", profile.label()), seed, profile, truth: case.truth },
        logs,
        baseline,
        mutated: case.mutated,
        decoys: case.decoys,
        catalog: catalog.clone(),
        fixtures: BTreeMap::new(),
    };
    let matches = inputs.direct_matches(options)?;
    inputs.fixtures = scripted_fixtures(&inputs.truth.truth, &matches);
    Ok(inputs)
}

struct Prepared {
    parsed: crate::log_parser::ParsedLog,
    store: TemplateStore,
    settings: ConfigSettings,
}

impl CaseInputs {
    fn prepare(&self) -> Prepared {
        let parser = LogParser::new(ParserConfig::default()).expect("default parser config is valid");
        let base = parse_text(&parser, "baseline.log", &self.baseline);
        let mut store = TemplateStore::new(base.fingerprint, 0);
        store.ingest(&base).expect("fingerprints agree");
        Prepared {
            parsed: parse_text(&parser, "logs.txt", &self.logs),
            store,
            settings: all_settings(&self.mutated, &self.decoys),
        }
    }

    /// Stage 1 then direct inference; empty when stage 1 finds nothing.
    pub fn direct_matches(&self, options: &PipelineOptions) -> Result<MatchSet, CaseError> {
        let p = self.prepare();
        let tokens = WeightedTokenSet::default();
        let verdict = classify(&p.parsed, &p.store, &tokens).map_err(|e| CaseError::Pipeline(e.to_string()))?;
        if verdict.kind == VerdictKind::FaultFree {
            return Ok(MatchSet::default());
        }
        let inputs = PipelineInputs {
            parsed: &p.parsed,
            store: &p.store,
            tokens: &tokens,
            settings: &p.settings,
            catalog: &self.catalog,
        };
        Ok(direct_matches(&verdict.key_messages, &inputs, options))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CaseError> {
        fs::create_dir_all(dir.join("fixtures")).map_err(io_err(dir))?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("truth serializes") + "\n";
        write(&dir.join("truth.json"), &truth)?;
        write(&dir.join("logs.txt"), &self.logs)?;
        write(&dir.join("baseline.log"), &self.baseline)?;
        write(&dir.join("mutated.xml"), &render_xml_settings(&self.mutated))?;
        write(&dir.join("decoys.xml"), &render_xml_settings(&self.decoys))?;
        write(&dir.join("catalog.json"), &self.catalog.to_json())?;
        for (key, text) in &self.fixtures {
            write(&dir.join("fixtures").join(format!("{key}.txt")), text)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, CaseError> {
        let truth_path = dir.join("truth.json");
        let truth: CaseTruth = serde_json::from_str(&read(&truth_path)?)
            .map_err(|e| CaseError::Malformed { path: truth_path.display().to_string(), message: e.to_string() })?;
        let xml = |name: &str| -> Result<ConfigSettings, CaseError> {
            let path = dir.join(name);
            parse_xml_settings(&read(&path)?)
                .map_err(|e| CaseError::Malformed { path: path.display().to_string(), message: e.to_string() })
        };
        let catalog_path = dir.join("catalog.json");
        let catalog = PropertyCatalog::from_json(&read(&catalog_path)?)
            .map_err(|message| CaseError::Malformed { path: catalog_path.display().to_string(), message })?;
        let mut fixtures = BTreeMap::new();
        let fixture_dir = dir.join("fixtures");
        if fixture_dir.is_dir() {
            for key in ["verify", "indirect"] {
                let path = fixture_dir.join(format!("{key}.txt"));
                if path.is_file() {
                    fixtures.insert(key.to_string(), read(&path)?);
                }
            }
        }
        Ok(Self {
            truth,
            logs: read(&dir.join("logs.txt"))?,
            baseline: read(&dir.join("baseline.log"))?,
            mutated: xml("mutated.xml")?,
            decoys: xml("decoys.xml")?.with_source(EntrySource::Fabricated),
            catalog,
            fixtures,
        })
    }
}

/// Pipeline variant under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full pipeline.
    Default,
    /// Verification removed; direct matches accepted.
    NoVerify,
    /// Verification replaced by the match-count heuristic.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub backend: BackendKind,
    pub pipeline: PipelineOptions,
}

impl EvalOptions {
    pub fn variant(&self) -> Variant {
        if self.pipeline.no_verify {
            Variant::NoVerify
        } else if self.backend == BackendKind::Heuristic {
            Variant::Heuristic
        } else {
            Variant::Default
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub case_id: String,
    pub profile: SymptomProfile,
    pub stage1_anomalous: bool,
    pub stage1_correct: bool,
    /// Trigger among the final suspects.
    pub stage2_correct: bool,
    pub suspect_count: usize,
    pub flow: Option<Flow>,
    pub fp_rate: Option<f64>,
    /// Distinct properties matched by direct inference.
    pub direct_count: usize,
    pub direct_fp_rate: Option<f64>,
    pub exit_code: i32,
}

/// Runs one case through the pipeline. `remote` is used only when the
/// options select the remote backend.
pub fn eval_case(
    case: &CaseInputs,
    options: &EvalOptions,
    remote: Option<&dyn LlmBackend>,
) -> Result<EvalResult, CaseError> {
    let p = case.prepare();
    let tokens = WeightedTokenSet::default();
    let inputs = PipelineInputs {
        parsed: &p.parsed,
        store: &p.store,
        tokens: &tokens,
        settings: &p.settings,
        catalog: &case.catalog,
    };
    let mock = MockBackend::from_scripts(case.fixtures.clone());
    let backend: &dyn LlmBackend = match options.backend {
        BackendKind::Mock => &mock,
        BackendKind::Heuristic => &HeuristicBackend,
        BackendKind::Remote => remote.ok_or_else(|| CaseError::Pipeline("remote backend unavailable".into()))?,
    };
    let meta = ToolMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        store_fingerprint: format!("{:016x}", p.parsed.fingerprint),
        store_created_at: 0,
        prompt_version: prompts::PROMPT_VERSION.to_string(),
        llm_backend: options.backend.to_string(),
        seed: Some(case.truth.seed),
    };
    let out = analyze(&inputs, backend, &options.pipeline, meta).map_err(|e| CaseError::Pipeline(e.to_string()))?;
    let trigger = case.truth.truth.trigger.property.as_str();
    let suspects = out.suspects();
    let truth_present = suspects.contains(&trigger);
    let stage1_anomalous = out.report.suspects.is_some();
    let direct = out.matches.properties();
    Ok(EvalResult {
        case_id: case.truth.case_id.clone(),
        profile: case.truth.profile,
        stage1_anomalous,
        stage1_correct: stage1_anomalous == (case.truth.profile != SymptomProfile::Clean),
        stage2_correct: truth_present,
        suspect_count: suspects.len(),
        flow: out.flow(),
        fp_rate: fp_rate(suspects.len(), truth_present).ok(),
        direct_count: direct.len(),
        direct_fp_rate: fp_rate(direct.len(), direct.contains(&trigger)).ok(),
        exit_code: out.status.code(),
    })
}

/// Case directories under `root`: `root` itself when it holds a case,
/// otherwise its immediate subdirectories that do, sorted by name.
pub fn case_dirs(root: &Path) -> Result<Vec<PathBuf>, CaseError> {
    if root.join("truth.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.join("truth.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn eval_cases(
    root: &Path,
    options: &EvalOptions,
    remote: Option<&dyn LlmBackend>,
) -> Result<Vec<EvalResult>, CaseError> {
    let mut results = case_dirs(root)?
        .iter()
        .map(|dir| eval_case(&CaseInputs::read(dir)?, options, remote))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub correct: usize,
    pub entered: usize,
    pub accuracy: Option<f64>,
}

impl Ratio {
    pub fn of(results: &[EvalResult], selector: PhaseSelector) -> Self {
        let (entered, correct) = results.iter().fold((0, 0), |(n, c), r| {
            let (enters, ok) = match selector {
                PhaseSelector::Stage1 => (true, r.stage1_correct),
                PhaseSelector::Stage2 => (r.stage1_anomalous, r.stage2_correct),
                PhaseSelector::Flow(f) => (r.flow == Some(f), r.stage2_correct),
            };
            if enters {
                (n + 1, c + usize::from(ok))
            } else {
                (n, c)
            }
        });
        let accuracy = if entered == 0 { None } else { Some(correct as f64 / entered as f64) };
        Self { correct, entered, accuracy }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variant: Variant,
    pub cases: usize,
    pub stage1: Ratio,
    pub stage2: Ratio,
    pub flows: BTreeMap<String, Ratio>,
    /// Mean of `(n - 1) / n` over cases whose suspects contain the trigger.
    pub mean_fp_rate: Option<f64>,
    /// The same figure for the raw direct-inference matches.
    pub mean_direct_fp_rate: Option<f64>,
    /// Anomalous cases whose suspects miss the trigger.
    pub localization_failures: usize,
    pub results: Vec<EvalResult>,
}

pub fn evaluate(results: Vec<EvalResult>, variant: Variant) -> Metrics {
    let flows = [Flow::FastFlow, Flow::DirectFlow, Flow::CompleteFlow]
        .into_iter()
        .map(|f| (f.label().to_string(), Ratio::of(&results, PhaseSelector::Flow(f))))
        .collect();
    Metrics {
        variant,
        cases: results.len(),
        stage1: Ratio::of(&results, PhaseSelector::Stage1),
        stage2: Ratio::of(&results, PhaseSelector::Stage2),
        flows,
        mean_fp_rate: mean(results.iter().filter_map(|r| r.fp_rate)),
        mean_direct_fp_rate: mean(results.iter().filter_map(|r| r.direct_fp_rate)),
        localization_failures: results.iter().filter(|r| r.stage1_anomalous && !r.stage2_correct).count(),
        results,
    }
}
