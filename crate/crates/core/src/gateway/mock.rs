//! Deterministic mock backend: scripted responses matched by role+substring
//! selectors or exact cache keys. The test seam for the whole pipeline.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendReply, CacheKey, ModelRequest, PromptRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FixtureSelector {
    /// Matches requests of `role` whose prompt text contains `substring`.
    RoleSubstring { role: PromptRole, substring: String },
    /// Matches exactly one request by content address; beats any substring.
    ExactKey(CacheKey),
}

impl FixtureSelector {
    pub fn role_substring(role: PromptRole, substring: impl Into<String>) -> Self {
        FixtureSelector::RoleSubstring { role, substring: substring.into() }
    }

    pub fn exact(key: CacheKey) -> Self {
        FixtureSelector::ExactKey(key)
    }
}

struct Fixture {
    selector: FixtureSelector,
    response: String,
    /// Remaining scripted transient failures before the response is served.
    fail_times: u32,
}

/// Fixture-backed [`Backend`]; reports zero latency so mock runs are
/// bit-identical across repetitions.
pub struct MockBackend {
    fixtures: Mutex<Vec<Fixture>>,
}

/// One line of a fixtures JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<PromptRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fail_times: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend { fixtures: Mutex::new(Vec::new()) }
    }

    pub fn register_fixture(&self, selector: FixtureSelector, response: impl Into<String>) -> Result<()> {
        self.register(selector, response.into(), 0)
    }

    /// Like [`Self::register_fixture`], but the first `fail_times` matching
    /// calls fail transiently (exercises the retry path).
    pub fn register_flaky_fixture(
        &self,
        selector: FixtureSelector,
        response: impl Into<String>,
        fail_times: u32,
    ) -> Result<()> {
        self.register(selector, response.into(), fail_times)
    }

    fn register(&self, selector: FixtureSelector, response: String, fail_times: u32) -> Result<()> {
        let mut fixtures = self.fixtures.lock().unwrap();
        if let Some(existing) = fixtures.iter().find(|f| f.selector == selector) {
            if existing.response == response {
                return Ok(()); // idempotent re-registration
            }
            return Err(Error::FixtureConflict(format!(
                "selector {selector:?} already registered with a different response"
            )));
        }
        fixtures.push(Fixture { selector, response, fail_times });
        Ok(())
    }

    /// Load fixtures from a JSONL file; returns how many were registered.
    pub fn load_fixtures(&self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::IoMissing {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut count = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(line).map_err(|e| {
                Error::ConfigInvalid(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            let selector = match (&record.key, &record.role, &record.substring) {
                (Some(key), None, None) => FixtureSelector::exact(CacheKey::from_hex(key.clone())),
                (None, Some(role), Some(substring)) => {
                    FixtureSelector::role_substring(*role, substring.clone())
                }
                _ => {
                    return Err(Error::ConfigInvalid(format!(
                        "{}:{}: fixture needs either key or role+substring",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            self.register(selector, record.response, record.fail_times)?;
            count += 1;
        }
        Ok(count)
    }

    /// Selection: exact key beats substring; among substring matches the
    /// longest substring wins, ties go to registration order.
    fn select(&self, req: &ModelRequest) -> Option<usize> {
        let fixtures = self.fixtures.lock().unwrap();
        let key = req.cache_key();
        if let Some(i) = fixtures
            .iter()
            .position(|f| matches!(&f.selector, FixtureSelector::ExactKey(k) if *k == key))
        {
            return Some(i);
        }
        let prompt = req.prompt_text();
        let mut best: Option<(usize, usize)> = None; // (substring len, index)
        for (i, fixture) in fixtures.iter().enumerate() {
            if let FixtureSelector::RoleSubstring { role, substring } = &fixture.selector {
                if *role == req.role && prompt.contains(substring.as_str()) {
                    let len = substring.len();
                    if best.map(|(blen, _)| len > blen).unwrap_or(true) {
                        best = Some((len, i));
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ModelRequest) -> std::result::Result<BackendReply, BackendError> {
        let Some(index) = self.select(req) else {
            return Err(BackendError::Unavailable(format!(
                "no fixture matches role={} key={}",
                req.role.as_str(),
                req.cache_key()
            )));
        };
        let mut fixtures = self.fixtures.lock().unwrap();
        let fixture = &mut fixtures[index];
        if fixture.fail_times > 0 {
            fixture.fail_times -= 1;
            return Err(BackendError::Transient("scripted transient failure".into()));
        }
        Ok(BackendReply { text: fixture.response.clone(), usage: None, latency_s: 0.0 })
    }
}
