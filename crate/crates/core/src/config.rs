// SPDX-License-Identifier: Apache-2.0

//! User configuration settings, the property catalog, and the hot-term filter.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use quick_xml::events::Event;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    IoFailure { path: String, source: std::io::Error },
    #[error("malformed configuration at {locus}: {message}")]
    MalformedConfig { locus: String, message: String },
    #[error("duplicate property {0:?}")]
    DuplicateProperty(String),
    #[error("property name {0:?} has an empty segment")]
    EmptySegment(String),
    #[error("malformed catalog {path}: {message}")]
    MalformedCatalog { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    UserDefined,
    Fabricated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub property: String,
    pub value: String,
    pub source: EntrySource,
}

impl ConfigEntry {
    pub fn new(property: impl Into<String>, value: impl Into<String>, source: EntrySource) -> Self {
        Self { property: property.into(), value: value.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingsFormat {
    XmlProperties,
    FlatKeyValue,
}

impl SettingsFormat {
    /// `.xml` files are XML properties; anything else is `key=value`.
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
            SettingsFormat::XmlProperties
        } else {
            SettingsFormat::FlatKeyValue
        }
    }
}

/// An ordered list of entries; names are unique per source.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSettings {
    pub entries: Vec<ConfigEntry>,
}

impl ConfigSettings {
    pub fn from_entries(entries: Vec<ConfigEntry>) -> Result<Self, ConfigError> {
        let mut seen = HashSet::new();
        for e in &entries {
            segment_name(&e.property)?;
            if !seen.insert((e.source, e.property.as_str())) {
                return Err(ConfigError::DuplicateProperty(e.property.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_property(&self, property: &str) -> bool {
        self.entries.iter().any(|e| e.property == property)
    }

    /// First entry for `property`, preferring user-defined over fabricated.
    pub fn get(&self, property: &str) -> Option<&ConfigEntry> {
        let mut found = self.entries.iter().filter(|e| e.property == property);
        let first = found.next()?;
        if first.source == EntrySource::UserDefined {
            return Some(first);
        }
        found.find(|e| e.source == EntrySource::UserDefined).or(Some(first))
    }

    /// Merges `other` into `self`; a property already present with the same
    /// source is overwritten in place (last wins). Returns the overwritten names.
    pub fn merge(&mut self, other: ConfigSettings) -> Vec<String> {
        let mut overwritten = Vec::new();
        for entry in other.entries {
            match self
                .entries
                .iter_mut()
                .find(|e| e.property == entry.property && e.source == entry.source)
            {
                Some(existing) => {
                    overwritten.push(entry.property.clone());
                    *existing = entry;
                }
                None => self.entries.push(entry),
            }
        }
        overwritten
    }

    pub fn with_source(mut self, source: EntrySource) -> Self {
        for e in &mut self.entries {
            e.source = source;
        }
        self
    }
}

pub fn load_settings(path: &Path, format: SettingsFormat) -> Result<ConfigSettings, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        SettingsFormat::XmlProperties => parse_xml_settings(&text),
        SettingsFormat::FlatKeyValue => parse_flat_settings(&text),
    }
}

/// `key=value` per line; `#` and `!` start comments.
pub fn parse_flat_settings(text: &str) -> Result<ConfigSettings, ConfigError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::MalformedConfig {
            locus: format!("line {}", i + 1),
            message: "expected key=value".into(),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::MalformedConfig {
                locus: format!("line {}", i + 1),
                message: "empty property name".into(),
            });
        }
        entries.push(ConfigEntry::new(key, value.trim(), EntrySource::UserDefined));
    }
    ConfigSettings::from_entries(entries)
}

/// Hadoop-style `<configuration><property><name/><value/></property>...`.
pub fn parse_xml_settings(text: &str) -> Result<ConfigSettings, ConfigError> {
    let mut reader = quick_xml::Reader::from_str(text);
    let mut entries = Vec::new();
    let mut index = 0usize;
    let mut in_property = false;
    let mut field: Option<&'static str> = None;
    let mut name: Option<String> = None;
    let mut value = String::new();
    let malformed = |locus: String, message: String| ConfigError::MalformedConfig { locus, message };

    loop {
        let event = reader.read_event().map_err(|e| {
            malformed(format!("byte {}", reader.buffer_position()), e.to_string())
        })?;
        match event {
            Event::Start(e) => match e.name().as_ref() {
                b"property" => {
                    index += 1;
                    in_property = true;
                    name = None;
                    value.clear();
                }
                b"name" if in_property => field = Some("name"),
                b"value" if in_property => field = Some("value"),
                _ => field = None,
            },
            Event::Empty(e) => {
                if e.name().as_ref() == b"value" && in_property {
                    value.clear();
                }
            }
            Event::Text(t) => {
                let s = t
                    .unescape()
                    .map_err(|e| malformed(format!("property #{index}"), e.to_string()))?;
                match field {
                    Some("name") => name.get_or_insert_with(String::new).push_str(&s),
                    Some("value") => value.push_str(&s),
                    _ => {}
                }
            }
            Event::CData(t) => {
                let s = String::from_utf8_lossy(&t).into_owned();
                match field {
                    Some("name") => name.get_or_insert_with(String::new).push_str(&s),
                    Some("value") => value.push_str(&s),
                    _ => {}
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"property" => {
                    let n = name.take().map(|n| n.trim().to_string()).unwrap_or_default();
                    if n.is_empty() {
                        return Err(malformed(format!("property #{index}"), "missing <name>".into()));
                    }
                    entries.push(ConfigEntry::new(n, value.trim(), EntrySource::UserDefined));
                    in_property = false;
                    field = None;
                }
                _ => field = None,
            },
            Event::Eof => break,
            _ => {}
        }
    }
    if in_property {
        return Err(malformed(format!("property #{index}"), "unterminated <property>".into()));
    }
    ConfigSettings::from_entries(entries)
}

/// Renders settings as Hadoop-style XML.
pub fn render_xml_settings(settings: &ConfigSettings) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>\n<configuration>\n");
    for e in &settings.entries {
        out.push_str(&format!(
            "  <property>\n    <name>{}</name>\n    <value>{}</value>\n  </property>\n",
            quick_xml::escape::escape(e.property.as_str()),
            quick_xml::escape::escape(e.value.as_str())
        ));
    }
    out.push_str("</configuration>\n");
    out
}

/// Splits a dotted property name; casing is preserved.
pub fn segment_name(property: &str) -> Result<Vec<&str>, ConfigError> {
    let segments: Vec<&str> = property.split('.').collect();
    if property.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::EmptySegment(property.to_string()));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CatalogRecord {
    name: String,
    #[serde(default)]
    description: Option<String>,
}

/// Known property names with their documentation text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropertyCatalog {
    pub descriptions: BTreeMap<String, String>,
    pub universe: Vec<String>,
}

impl PropertyCatalog {
    pub fn new(records: Vec<(String, Option<String>)>) -> Self {
        let mut catalog = PropertyCatalog::default();
        let mut seen = HashSet::new();
        for (name, description) in records {
            if seen.insert(name.clone()) {
                catalog.universe.push(name.clone());
            }
            if let Some(d) = description {
                catalog.descriptions.insert(name, d);
            }
        }
        catalog
    }

    /// Catalog file: JSON array of `{"name": ..., "description": ...}`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::IoFailure {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|message| ConfigError::MalformedCatalog {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let records: Vec<CatalogRecord> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Ok(Self::new(records.into_iter().map(|r| (r.name, r.description)).collect()))
    }

    pub fn to_json(&self) -> String {
        let records: Vec<CatalogRecord> = self
            .universe
            .iter()
            .map(|n| CatalogRecord { name: n.clone(), description: self.descriptions.get(n).cloned() })
            .collect();
        serde_json::to_string_pretty(&records).expect("catalog serializes") + "\n"
    }

    pub fn description(&self, property: &str) -> Option<&str> {
        self.descriptions.get(property).map(String::as_str)
    }

    /// Adds names from `settings` that the catalog does not know yet.
    pub fn extend_universe(&mut self, settings: &ConfigSettings) {
        let known: HashSet<String> = self.universe.iter().cloned().collect();
        let mut added = BTreeSet::new();
        for e in &settings.entries {
            if !known.contains(&e.property) {
                added.insert(e.property.clone());
            }
        }
        self.universe.extend(added);
    }
}

pub const DEFAULT_HOT_K: usize = 20;

/// The most frequent property-name segments, excluded from name matching.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotTermFilter {
    pub terms: BTreeSet<String>,
    pub k: usize,
}

impl HotTermFilter {
    pub fn contains(&self, segment: &str) -> bool {
        self.terms.contains(&segment.to_lowercase())
    }
}

/// Counts lowercased segments over every universe name and keeps the `k`
/// most frequent, ties broken lexicographically.
pub fn build_hot_filter(catalog: &PropertyCatalog, k: usize) -> HotTermFilter {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for name in &catalog.universe {
        for segment in name.split('.').filter(|s| !s.is_empty()) {
            *counts.entry(segment.to_lowercase()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    HotTermFilter { terms: ranked.into_iter().take(k).map(|(s, _)| s).collect(), k }
}
