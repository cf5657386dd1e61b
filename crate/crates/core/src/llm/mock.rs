// SPDX-License-Identifier: Apache-2.0

//! Scripted backend: returns fixture text keyed by task and case.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use super::{BackendKind, CompletionRequest, LlmBackend, LlmError, TaskKind};

#[derive(Debug, Default)]
pub struct MockBackend {
    scripts: BTreeMap<String, String>,
    calls: Mutex<Vec<(TaskKind, String)>>,
}

impl MockBackend {
    pub fn from_scripts<I, K, V>(scripts: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            scripts: scripts.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// One script per regular file; the key is the file stem
    /// (`case1-verify.txt` answers key `case1-verify`).
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut scripts = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.is_file() {
                continue;
            }
            if let Some(stem) = path.file_stem() {
                scripts.insert(stem.to_string_lossy().into_owned(), fs::read_to_string(&path)?);
            }
        }
        Ok(Self::from_scripts(scripts))
    }

    pub fn insert(&mut self, key: impl Into<String>, script: impl Into<String>) {
        self.scripts.insert(key.into(), script.into());
    }

    /// Number of requests received for `task`.
    pub fn calls(&self, task: TaskKind) -> usize {
        self.calls
            .lock()
            .expect("mock call log poisoned")
            .iter()
            .filter(|(t, _)| *t == task)
            .count()
    }
}

impl LlmBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    /// Exact key first, then the bare task key.
    fn send(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls
            .lock()
            .expect("mock call log poisoned")
            .push((request.task, request.fixture_key.clone()));
        self.scripts
            .get(&request.fixture_key)
            .or_else(|| self.scripts.get(request.task.key()))
            .cloned()
            .ok_or_else(|| LlmError::MissingFixture(request.fixture_key.clone()))
    }
}
