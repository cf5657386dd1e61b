// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use confloc::anomaly::{
    anomaly_degree, classify, extract_specific, recover_key_messages, KeyLogMessage, VerdictKind, WeightedTokenSet,
};
use confloc::bench::{gen_case, make_mutated_case, mutate_value, CaseInputs, MutateType, MutationStrategy, SymptomProfile};
use confloc::config::{
    build_hot_filter, load_settings, segment_name, ConfigEntry, ConfigSettings, EntrySource, PropertyCatalog,
    SettingsFormat,
};
use confloc::direct::{run_direct, DirectOptions, MatchKind};
use confloc::llm::{MockBackend, TaskKind};
use confloc::log_parser::{parse_text, LogParser, ParsedLog, ParserConfig, WILDCARD_TOKEN};
use confloc::pipeline::{analyze, PipelineInputs, PipelineOptions};
use confloc::report::{render, DiagnosisReport, ReportFormat, ToolMeta};
use confloc::template_store::TemplateStore;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn parser() -> LogParser {
    LogParser::new(ParserConfig::default()).unwrap()
}

const WORDS: [&str; 12] = [
    "open", "block", "replica", "Error", "closing", "lease", "socket", "failure", "granted", "served", "invalid",
    "exception",
];

/// Log text: headed lines with word and numeric tokens, some followed by
/// stack frames.
fn log_text() -> impl Strategy<Value = String> {
    let line = (
        prop::sample::select(vec!["INFO", "WARN", "ERROR"]),
        prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..6),
        prop::option::of(0u32..100_000),
        0usize..3,
    );
    prop::collection::vec(line, 1..25).prop_map(|lines| {
        let mut out = String::new();
        for (i, (level, words, num, frames)) in lines.into_iter().enumerate() {
            out.push_str(&format!("2024-01-02 03:04:{:02},000 {level} dfs.Node: {}", i % 60, words.join(" ")));
            if let Some(n) = num {
                out.push_str(&format!(" id {n}"));
            }
            out.push('\n');
            for f in 0..frames {
                out.push_str(&format!("\tat org.example.Frame{f}.run(Frame.java:{})\n", 10 + f));
            }
        }
        out
    })
}

fn store_of(parsed: &ParsedLog) -> TemplateStore {
    let mut s = TemplateStore::new(parsed.fingerprint, 0);
    s.ingest(parsed).unwrap();
    s
}

fn template_pairs(p: &ParsedLog) -> BTreeMap<String, u64> {
    p.templates.values().map(|t| (t.pattern.clone(), t.support)).collect()
}

fn property_name() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z][a-z0-9-]{0,6}", 1..5).prop_map(|s| s.join("."))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reparse_of_rendered_records_is_identical(text in log_text()) {
        let p = parser();
        let first = parse_text(&p, "a.log", &text);
        let rendered: Vec<String> = first.records.iter().flat_map(|r| r.to_lines()).collect();
        let second = parse_text(&p, "a.log", &rendered.join("\n"));
        prop_assert_eq!(&first.templates, &second.templates);
        let ids = |p: &ParsedLog| p.records.iter().map(|r| r.template_id).collect::<Vec<_>>();
        prop_assert_eq!(ids(&first), ids(&second));
    }

    #[test]
    fn per_file_parsing_ignores_file_order(a in log_text(), b in log_text()) {
        let p = parser();
        let merge = |x: &ParsedLog, y: &ParsedLog| {
            let mut m = template_pairs(x);
            for (k, v) in template_pairs(y) {
                *m.entry(k).or_default() += v;
            }
            m
        };
        let (pa, pb) = (parse_text(&p, "a", &a), parse_text(&p, "b", &b));
        let (qb, qa) = (parse_text(&p, "b", &b), parse_text(&p, "a", &a));
        prop_assert_eq!(merge(&pa, &pb), merge(&qb, &qa));
    }

    #[test]
    fn templates_never_hold_stack_text(text in log_text()) {
        let parsed = parse_text(&parser(), "a.log", &text);
        for r in &parsed.records {
            let pattern = &parsed.template_of(r).unwrap().pattern;
            for s in &r.stack_lines {
                prop_assert!(!pattern.contains(s.trim()));
            }
            prop_assert_eq!(pattern.split(' ').filter(|t| *t == WILDCARD_TOKEN).count(), r.variables.len());
        }
    }

    #[test]
    fn store_contains_exactly_ingested_hashes(a in log_text(), b in log_text()) {
        let p = parser();
        let pa = parse_text(&p, "a", &a);
        let store = store_of(&pa);
        for t in pa.templates.values() {
            prop_assert!(store.contains(t.hash));
        }
        for t in parse_text(&p, "b", &b).templates.values() {
            prop_assert_eq!(store.contains(t.hash), pa.templates.contains_key(&t.hash));
        }
        prop_assert_eq!(store.len(), pa.templates.len());
    }

    #[test]
    fn store_bytes_are_deterministic(a in log_text(), b in log_text()) {
        let p = parser();
        let build = || {
            let mut s = TemplateStore::new(p.fingerprint(), 7);
            s.ingest(&parse_text(&p, "a", &a)).unwrap();
            s.ingest(&parse_text(&p, "b", &b)).unwrap();
            s.to_bytes()
        };
        prop_assert_eq!(build(), build());
    }

    #[test]
    fn degree_is_monotone_under_append(a in "[ -~]{0,60}", b in "[ -~]{0,60}") {
        let tokens = WeightedTokenSet::default();
        let joined = format!("{a} {b}");
        prop_assert!(anomaly_degree(&joined, &tokens) >= anomaly_degree(&a, &tokens));
    }

    #[test]
    fn default_degrees_are_tenths(text in "[ -~]{0,120}") {
        let d = anomaly_degree(&text, &WeightedTokenSet::default()).value();
        prop_assert!(d <= 1.0 + 1e-12);
        prop_assert!(((d * 10.0).round() - d * 10.0).abs() < 1e-12);
    }

    #[test]
    fn key_messages_follow_positive_specifics(base in log_text(), fault in log_text()) {
        let p = parser();
        let store = store_of(&parse_text(&p, "base", &base));
        let parsed = parse_text(&p, "fault", &fault);
        let tokens = WeightedTokenSet::default();
        let verdict = classify(&parsed, &store, &tokens).unwrap();
        let specific = extract_specific(&parsed, &store).unwrap();
        let keys = recover_key_messages(&specific, &parsed, &tokens);
        let positive = specific.iter().filter(|t| anomaly_degree(&t.pattern, &tokens).is_positive()).count();
        prop_assert_eq!(keys.len(), positive);
        prop_assert_eq!(verdict.key_messages.len(), keys.len());
        if verdict.kind == VerdictKind::FaultFree {
            prop_assert!(keys.is_empty());
        }
    }

    #[test]
    fn segments_rejoin(name in property_name()) {
        prop_assert_eq!(segment_name(&name).unwrap().join("."), name);
    }

    #[test]
    fn hot_filter_is_deterministic_subset(names in prop::collection::vec(property_name(), 1..40), k in 0usize..30) {
        let catalog = PropertyCatalog::new(names.iter().map(|n| (n.clone(), None)).collect());
        let a = build_hot_filter(&catalog, k);
        let mut reversed = names.clone();
        reversed.reverse();
        let b = build_hot_filter(&PropertyCatalog::new(reversed.into_iter().map(|n| (n, None)).collect()), k);
        prop_assert_eq!(&a.terms, &b.terms);
        prop_assert!(a.terms.len() <= k);
        for t in &a.terms {
            prop_assert!(names.iter().any(|n| n.to_lowercase().split('.').any(|s| s == t)));
        }
    }

    #[test]
    fn direct_matching_invariants(
        seed in 0u64..500,
        extra in property_name(),
        extra_value in "[0-9a-z]{1,4}",
    ) {
        let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        let base = load_settings(&data.join("hadoop-base.xml"), SettingsFormat::XmlProperties).unwrap();
        let catalog = PropertyCatalog::load(&data.join("hadoop-catalog.json")).unwrap();
        let profile = if seed % 2 == 0 { SymptomProfile::DirectSymptom } else { SymptomProfile::IndirectSymptom };
        let case = gen_case(&base, &catalog, seed, profile, &PipelineOptions::default()).unwrap();
        let p = parser();
        let store = store_of(&parse_text(&p, "baseline.log", &case.baseline));
        let parsed = parse_text(&p, "logs.txt", &case.logs);
        let msgs: Vec<KeyLogMessage> = classify(&parsed, &store, &WeightedTokenSet::default()).unwrap().key_messages;
        let filter = build_hot_filter(&catalog, 20);
        let settings = case.mutated.clone();
        let m1 = run_direct(&msgs, &settings, &filter, DirectOptions::default());
        prop_assert_eq!(&m1, &run_direct(&msgs, &settings, &filter, DirectOptions::default()));

        for m in &m1.matches {
            let text = m.key_message.record.message.to_lowercase();
            match &m.kind {
                MatchKind::NameHit { matched_segments, full_name_hit } => {
                    for s in matched_segments {
                        prop_assert!(text.contains(s.as_str()));
                    }
                    if *full_name_hit {
                        let cold: Vec<String> = m.entry.property.to_lowercase().split('.')
                            .filter(|s| !filter.contains(s)).map(str::to_string).collect();
                        let mut dedup = cold.clone();
                        dedup.dedup();
                        prop_assert_eq!(matched_segments, &dedup);
                    }
                }
                MatchKind::ValueHit { matched_span: (a, b) } => {
                    prop_assert_eq!(&m.key_message.record.message[*a..*b], m.entry.value.trim());
                }
            }
        }

        let mut bigger = settings.clone();
        if !bigger.contains_property(&extra) {
            bigger.entries.push(ConfigEntry::new(extra, extra_value, EntrySource::UserDefined));
        }
        let m2 = run_direct(&msgs, &bigger, &filter, DirectOptions::default());
        for m in &m1.matches {
            prop_assert!(m2.matches.contains(m));
        }
    }

    #[test]
    fn violation_values_never_parse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in MutationStrategy::ALL.into_iter().filter(|s| s.mutate_type == MutateType::Violation) {
            prop_assert!(mutate_value(s, &mut rng).parse::<f64>().is_err());
        }
    }

    #[test]
    fn mutated_cases_reproduce(seed in any::<u64>()) {
        let catalog = PropertyCatalog::new((0..30).map(|i| (format!("svc.p{i}"), None)).collect());
        let base = ConfigSettings::default();
        let a = make_mutated_case(&base, &catalog, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = make_mutated_case(&base, &catalog, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn run_case(case: &CaseInputs, no_verify: bool) -> (confloc::pipeline::AnalysisOutcome, MockBackend) {
    let p = parser();
    let store = store_of(&parse_text(&p, "baseline.log", &case.baseline));
    let parsed = parse_text(&p, "logs.txt", &case.logs);
    let tokens = WeightedTokenSet::default();
    let mut settings = case.mutated.clone();
    settings.merge(case.decoys.clone().with_source(EntrySource::Fabricated));
    let backend = MockBackend::from_scripts(case.fixtures.clone());
    let inputs = PipelineInputs { parsed: &parsed, store: &store, tokens: &tokens, settings: &settings, catalog: &case.catalog };
    let options = PipelineOptions { no_verify, ..PipelineOptions::default() };
    let meta = ToolMeta {
        version: "test".into(),
        store_fingerprint: "0".into(),
        store_created_at: 0,
        prompt_version: "v1".into(),
        llm_backend: "mock".into(),
        seed: Some(case.truth.seed),
    };
    let outcome = analyze(&inputs, &backend, &options, meta).unwrap();
    (outcome, backend)
}

fn seeded_cases() -> Vec<CaseInputs> {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let base = load_settings(&data.join("hadoop-base.xml"), SettingsFormat::XmlProperties).unwrap();
    let catalog = PropertyCatalog::load(&data.join("hadoop-catalog.json")).unwrap();
    let mut out = vec![];
    for seed in 100..130 {
        for profile in [SymptomProfile::Clean, SymptomProfile::DirectSymptom, SymptomProfile::IndirectSymptom] {
            out.push(gen_case(&base, &catalog, seed, profile, &PipelineOptions::default()).unwrap());
        }
    }
    out
}

#[test]
fn reports_round_trip_and_carry_evidence() {
    for case in seeded_cases() {
        let (outcome, _) = run_case(&case, false);
        let r = &outcome.report;
        let back: DiagnosisReport = serde_json::from_slice(&render(r, ReportFormat::Json)).unwrap();
        assert_eq!(&back, r, "{}", case.truth.case_id);
        if r.inconclusive {
            assert!(!r.context.is_empty() || outcome.matches.is_empty());
        } else if let Some(s) = &r.suspects {
            for suspect in &s.suspects {
                let ev = r.evidence.iter().find(|e| e.property == suspect.property);
                assert!(ev.is_some_and(|e| !e.messages.is_empty()), "{}: {}", case.truth.case_id, suspect.property);
            }
        }
    }
}

#[test]
fn flow_label_matches_trace() {
    use confloc::pipeline::Phase;
    use confloc::report::Flow;
    for case in seeded_cases() {
        let (outcome, _) = run_case(&case, false);
        let t = &outcome.trace;
        let expected = match (t.contains(&Phase::Direct), t.contains(&Phase::Verify), t.contains(&Phase::Indirect)) {
            (false, _, _) => None,
            (true, true, false) => Some(Flow::FastFlow),
            (true, false, true) => Some(Flow::DirectFlow),
            (true, true, true) => Some(Flow::CompleteFlow),
            (true, false, false) => Some(Flow::FastFlow),
        };
        assert_eq!(outcome.report.flow, expected, "{} {:?}", case.truth.case_id, t);
        let note = &outcome.report.phase_notes[0];
        let labels: Vec<&str> = t.iter().map(|p| p.label()).collect();
        assert_eq!(note, &format!("trace: {}", labels.join("/")));
    }
}

#[test]
fn no_verify_never_calls_verification() {
    for case in seeded_cases() {
        let (_, backend) = run_case(&case, true);
        assert_eq!(backend.calls(TaskKind::Verify), 0, "{}", case.truth.case_id);
    }
}

#[test]
fn mock_pipeline_is_bit_deterministic() {
    for case in seeded_cases().into_iter().step_by(4) {
        let a = render(&run_case(&case, false).0.report, ReportFormat::Json);
        let b = render(&run_case(&case, false).0.report, ReportFormat::Json);
        assert_eq!(a, b);
    }
}
