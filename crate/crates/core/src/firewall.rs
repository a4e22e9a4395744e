//! Keeps the held-out test split out of everything the agent can observe.
//!
//! The firewall knows the spellings of the test path and the SHA-256 digest
//! of its contents. It redacts them from text and scans run directories for
//! leaks after the fact.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::model::{lexical_normalize, DatasetManifest};

/// Replacement text for withheld strings.
pub const REDACTED: &str = "[withheld]";

/// Run-directory files written only by the harness; they legitimately name
/// the test split and are never shown to the agent.
pub const HARNESS_ONLY_FILES: [&str; 2] = ["manifest.json", "test_metrics.json"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Firewall {
    spellings: Vec<String>,
    digest: Option<String>,
}

/// One needle found in one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub file: PathBuf,
    pub needle: String,
}

impl Firewall {
    pub fn for_manifest(manifest: &DatasetManifest) -> Self {
        Self::for_test_path(&manifest.test_path)
    }

    pub fn for_test_path(test_path: &Path) -> Self {
        let mut spellings = vec![test_path.to_string_lossy().into_owned()];
        let absolute = if test_path.is_absolute() {
            test_path.to_path_buf()
        } else {
            std::env::current_dir()
                .map(|cwd| cwd.join(test_path))
                .unwrap_or_else(|_| test_path.to_path_buf())
        };
        spellings.push(lexical_normalize(&absolute).to_string_lossy().into_owned());
        if let Ok(canonical) = test_path.canonicalize() {
            spellings.push(canonical.to_string_lossy().into_owned());
        }
        spellings.retain(|s| !s.is_empty());
        spellings.sort();
        spellings.dedup();
        let digest = fs::read(test_path).ok().map(|bytes| sha256_hex(&bytes));
        Self { spellings, digest }
    }

    /// Every spelling of the test path; used as denied patterns.
    pub fn path_spellings(&self) -> Vec<String> {
        self.spellings.clone()
    }

    pub fn digest(&self) -> Option<&str> {
        self.digest.as_deref()
    }

    /// All strings that must never reach the agent or the run ledger.
    pub fn redactions(&self) -> Vec<String> {
        let mut out = self.spellings.clone();
        out.extend(self.digest.clone());
        out
    }

    pub fn redact(&self, text: &str) -> String {
        redact_with(text, &self.redactions())
    }

    pub fn find_in(&self, bytes: &[u8]) -> Vec<String> {
        self.redactions()
            .into_iter()
            .filter(|needle| contains(bytes, needle.as_bytes()))
            .collect()
    }

    /// Byte-scans every file under `run_dir` except the harness-only files at
    /// its top level.
    pub fn scan_run_dir(&self, run_dir: &Path) -> io::Result<Vec<Leak>> {
        let mut leaks = Vec::new();
        for entry in WalkDir::new(run_dir).sort_by_file_name() {
            let entry = entry.map_err(|e| io::Error::other(e.to_string()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(run_dir).unwrap_or(entry.path());
            if rel.components().count() == 1
                && HARNESS_ONLY_FILES.contains(&rel.to_string_lossy().as_ref())
            {
                continue;
            }
            let bytes = fs::read(entry.path())?;
            for needle in self.find_in(&bytes) {
                leaks.push(Leak {
                    file: rel.to_path_buf(),
                    needle,
                });
            }
        }
        Ok(leaks)
    }
}

/// Replaces each needle (longest first) with [`REDACTED`].
pub fn redact_with(text: &str, needles: &[String]) -> String {
    let mut needles: Vec<&String> = needles.iter().filter(|n| !n.is_empty()).collect();
    needles.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let mut out = text.to_string();
    for needle in needles {
        if out.contains(needle.as_str()) {
            out = out.replace(needle.as_str(), REDACTED);
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
