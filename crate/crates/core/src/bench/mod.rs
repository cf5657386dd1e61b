// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness: numeric value mutation, mutated cases with decoy
//! files, synthetic log corpora and evaluation metrics.

mod case;
mod synth;

use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigEntry, ConfigSettings, EntrySource, PropertyCatalog};
use crate::report::Flow;

pub use case::{
    case_dirs, eval_case, eval_cases, evaluate, gen_case, CaseError, CaseInputs, CaseTruth,
    EvalOptions, EvalResult, Metrics, Ratio, Variant, SCRIPTED_IMPLAUSIBLE, SCRIPTED_PLAUSIBLE,
};
pub use synth::{baseline_log, gen_synthetic_logs, SymptomProfile, TemplatePool};

pub const DECOY_COUNT: usize = 9;
/// Single-precision float extremum used as the open bound of numeric ranges.
pub const FLOAT_BOUND: f64 = 3.4e38;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Datatype {
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutateType {
    Compliance,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Positive,
    Negative,
    Zero,
    StringViolation,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationStrategy {
    pub datatype: Datatype,
    pub mutate_type: MutateType,
    pub value_type: ValueType,
}

impl MutationStrategy {
    pub const ALL: [MutationStrategy; 5] = [
        Self::numeric(ValueType::Positive),
        Self::numeric(ValueType::Negative),
        Self::numeric(ValueType::Zero),
        Self::numeric(ValueType::StringViolation),
        Self::numeric(ValueType::Empty),
    ];

    pub const fn numeric(value_type: ValueType) -> Self {
        let mutate_type = match value_type {
            ValueType::Positive | ValueType::Negative | ValueType::Zero => MutateType::Compliance,
            ValueType::StringViolation | ValueType::Empty => MutateType::Violation,
        };
        Self { datatype: Datatype::Numeric, mutate_type, value_type }
    }
}

/// A plain decimal with four significant digits and magnitude in
/// `[1e-3, 1e38)`, so strictly inside `(0, FLOAT_BOUND)`.
fn positive_decimal(rng: &mut impl Rng) -> String {
    let mantissa: u32 = rng.random_range(1000..=9999);
    let exponent: i32 = rng.random_range(-3..=37);
    let digits = mantissa.to_string();
    if exponent < 0 {
        format!("0.{}{digits}", "0".repeat((-exponent - 1) as usize))
    } else if exponent >= 3 {
        format!("{digits}{}", "0".repeat((exponent - 3) as usize))
    } else {
        let point = exponent as usize + 1;
        format!("{}.{}", &digits[..point], &digits[point..])
    }
}

pub fn mutate_value(strategy: MutationStrategy, rng: &mut impl Rng) -> String {
    match strategy.value_type {
        ValueType::Positive => positive_decimal(rng),
        ValueType::Negative => format!("-{}", positive_decimal(rng)),
        ValueType::Zero => "0".to_string(),
        ValueType::StringViolation => (0..5).map(|_| rng.random_range(b'a'..=b'z') as char).collect(),
        ValueType::Empty => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trigger: ConfigEntry,
    pub strategy: MutationStrategy,
    pub decoys: Vec<ConfigEntry>,
    pub decoy_strategies: Vec<MutationStrategy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutatedCase {
    pub mutated: ConfigSettings,
    pub decoys: ConfigSettings,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("property universe has {size} name(s); at least {} are needed", DECOY_COUNT + 1)]
    UniverseTooSmall { size: usize },
    #[error("no case entered the selected phase")]
    EmptyDenominator,
    #[error("ground truth is not among the suspects")]
    NotApplicable,
}

/// Replaces one uniformly chosen property with a mutated value and builds a
/// separate decoy file of nine other mutated properties.
pub fn make_mutated_case(
    base: &ConfigSettings,
    universe: &PropertyCatalog,
    rng: &mut impl Rng,
) -> Result<MutatedCase, BenchError> {
    let names = &universe.universe;
    if names.len() < DECOY_COUNT + 1 {
        return Err(BenchError::UniverseTooSmall { size: names.len() });
    }
    let trigger_idx = rng.random_range(0..names.len());
    let strategy = *MutationStrategy::ALL.choose(rng).expect("strategies");
    let trigger = ConfigEntry::new(names[trigger_idx].clone(), mutate_value(strategy, rng), EntrySource::UserDefined);

    let others: Vec<&String> = names.iter().enumerate().filter(|(i, _)| *i != trigger_idx).map(|(_, n)| n).collect();
    let mut picked = sample(rng, others.len(), DECOY_COUNT).into_vec();
    picked.sort_unstable();
    let mut decoys = Vec::with_capacity(DECOY_COUNT);
    let mut decoy_strategies = Vec::with_capacity(DECOY_COUNT);
    for i in picked {
        let s = *MutationStrategy::ALL.choose(rng).expect("strategies");
        decoys.push(ConfigEntry::new(others[i].clone(), mutate_value(s, rng), EntrySource::Fabricated));
        decoy_strategies.push(s);
    }

    let mut mutated = base.clone();
    match mutated.entries.iter_mut().find(|e| e.property == trigger.property && e.source == EntrySource::UserDefined) {
        Some(e) => e.value = trigger.value.clone(),
        None => mutated.entries.push(trigger.clone()),
    }
    let decoy_settings = ConfigSettings { entries: decoys.clone() };
    Ok(MutatedCase { mutated, decoys: decoy_settings, truth: GroundTruth { trigger, strategy, decoys, decoy_strategies } })
}

/// Which cases count toward an accuracy figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSelector {
    /// Every case; correct when the stage-1 verdict matches the profile.
    Stage1,
    /// Cases classified anomalous; correct when the trigger is a suspect.
    Stage2,
    /// Stage-2 cases that took the given flow.
    Flow(Flow),
}

/// Correct over entered, for the cases the selector admits.
pub fn accuracy(results: &[EvalResult], selector: PhaseSelector) -> Result<f64, BenchError> {
    let ratio = Ratio::of(results, selector);
    if ratio.entered == 0 {
        return Err(BenchError::EmptyDenominator);
    }
    Ok(ratio.correct as f64 / ratio.entered as f64)
}

/// Share of suspects that are not the trigger: `(n - 1) / n`.
pub fn fp_rate(suspect_count: usize, truth_present: bool) -> Result<f64, BenchError> {
    if !truth_present || suspect_count == 0 {
        return Err(BenchError::NotApplicable);
    }
    Ok((suspect_count - 1) as f64 / suspect_count as f64)
}
