//! The agent's only effect channel: shell commands, file writes and guest
//! script execution inside a per-run workspace.
//!
//! Every workspace has the same layout regardless of backend:
//!
//! ```text
//! data/       read-only copies or mounts of the training split
//! work/       agent-authored files
//! artifacts/  model outputs
//! ```
//!
//! Agent-originated calls (`exec_shell`, `write_script`, `run_script`) pass
//! through the path policy; the held-out test file is never mounted and any
//! reference to it is denied.

mod container;
mod policy;
mod process;
mod runner;

pub use container::{ContainerFactory, ContainerSandbox};
pub use policy::{check_path_policy, screen_command, screen_script, PathDecision};
pub use process::{ProcessFactory, ProcessSandbox};
pub use runner::{truncate_output, OUTPUT_CAP_BYTES};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::model::{Backend, DatasetManifest, RunConfig};

/// Exit code reported when a command is killed for exceeding its timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;
/// Exit code reported when the path policy refuses a call.
pub const DENIED_EXIT_CODE: i32 = 126;
/// Where the training split appears inside every workspace.
pub const GUEST_TRAIN_PATH: &str = "data/train.csv";
/// Path of the workspace root as the agent sees it.
pub const GUEST_ROOT: &str = "/workspace";

const WORKSPACE_DIRS: [&str; 3] = ["data", "work", "artifacts"];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("{backend} backend unavailable: {reason}")]
    Provision { backend: Backend, reason: String },

    #[error("sandbox spec invariant violated: {0}")]
    Invariant(String),

    #[error("denied by sandbox policy: {0}")]
    Policy(String),

    #[error("not found in workspace: {0}")]
    NotFound(String),

    #[error("sandbox handle has been torn down")]
    Stale,

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A host file exposed read-only at a workspace-relative guest path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mount {
    pub host: PathBuf,
    pub guest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Allowed,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSpec {
    /// Host directory for the workspace. `None` lets the factory allocate a
    /// fresh scratch directory that is removed on teardown.
    pub workspace_root: Option<PathBuf>,
    pub readonly_mounts: Vec<Mount>,
    /// Wildcard patterns (`*`, `?`) for paths that must never be touched.
    pub denied_paths: Vec<String>,
    pub network: Network,
    pub cpu_limit: Option<f64>,
    pub mem_limit_mb: Option<u64>,
    pub tool_timeout_s: u64,
    /// Strings scrubbed from every tool output before the agent sees it.
    #[serde(default)]
    pub redactions: Vec<String>,
}

impl SandboxSpec {
    /// Standard spec for a run: training split mounted at
    /// [`GUEST_TRAIN_PATH`], every spelling of the test path denied.
    pub fn for_dataset(manifest: &DatasetManifest, config: &RunConfig) -> Self {
        let firewall = crate::firewall::Firewall::for_manifest(manifest);
        Self {
            workspace_root: None,
            readonly_mounts: vec![Mount {
                host: manifest.train_path.clone(),
                guest: GUEST_TRAIN_PATH.to_string(),
            }],
            denied_paths: firewall.path_spellings(),
            network: Network::Allowed,
            cpu_limit: None,
            mem_limit_mb: None,
            tool_timeout_s: config.tool_timeout_s,
            redactions: firewall.redactions(),
        }
    }

    /// Checks that `test_path` is denied and never mounted.
    pub fn validate_against(&self, test_path: &Path) -> Result<(), SandboxError> {
        let test = test_path.to_string_lossy();
        if !self
            .denied_paths
            .iter()
            .any(|pattern| policy::wildcard_match(pattern, &test))
        {
            return Err(SandboxError::Invariant(
                "held-out test path is not covered by denied_paths".to_string(),
            ));
        }
        self.validate_mounts()
    }

    /// Mounts must not expose a denied path.
    pub fn validate_mounts(&self) -> Result<(), SandboxError> {
        for mount in &self.readonly_mounts {
            let mut spellings = vec![mount.host.to_string_lossy().into_owned()];
            if let Ok(canonical) = mount.host.canonicalize() {
                spellings.push(canonical.to_string_lossy().into_owned());
            }
            for spelling in &spellings {
                if self
                    .denied_paths
                    .iter()
                    .any(|pattern| policy::wildcard_match(pattern, spelling))
                {
                    return Err(SandboxError::Invariant(format!(
                        "readonly mount for `{}` exposes a denied path",
                        mount.guest
                    )));
                }
            }
            if mount.guest.starts_with('/') || mount.guest.split('/').any(|c| c == "..") {
                return Err(SandboxError::Invariant(format!(
                    "mount guest path `{}` must be workspace-relative",
                    mount.guest
                )));
            }
        }
        Ok(())
    }
}

/// One sandboxed action requested by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolInvocation {
    Shell {
        command: String,
        timeout_s: u64,
    },
    WriteFile {
        path: String,
        content: String,
    },
    RunScript {
        path: String,
        args: Vec<String>,
        timeout_s: u64,
    },
}

/// Captured outcome of a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Wall-clock time; excluded from the agent-facing rendering.
    #[serde(skip)]
    pub duration_s: f64,
    pub timed_out: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub denied: bool,
}

impl ToolResult {
    pub fn denied(reason: &str) -> Self {
        Self {
            exit_code: DENIED_EXIT_CODE,
            stdout: String::new(),
            stderr: format!("denied by sandbox policy: {reason}"),
            duration_s: 0.0,
            timed_out: false,
            denied: true,
        }
    }

    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out && !self.denied
    }

    /// Last `max_chars` characters of stderr (or stdout when stderr is
    /// empty), for feeding failures back to the agent.
    pub fn tail(&self, max_chars: usize) -> String {
        let text = if self.stderr.trim().is_empty() {
            &self.stdout
        } else {
            &self.stderr
        };
        let count = text.chars().count();
        text.chars().skip(count.saturating_sub(max_chars)).collect()
    }
}

/// A live workspace. One pipeline uses a handle at a time and calls on a
/// handle are strictly sequential.
pub trait Sandbox: Send {
    fn backend(&self) -> Backend;

    fn spec(&self) -> &SandboxSpec;

    /// Host directory backing the workspace.
    fn workspace(&self) -> &Path;

    fn is_live(&self) -> bool;

    /// Runs an agent shell command with the workspace as working directory.
    fn exec_shell(&mut self, command: &str, timeout_s: u64) -> Result<ToolResult, SandboxError>;

    /// Runs a workspace script with the guest interpreter. The script body
    /// and arguments are screened by the path policy first.
    fn run_script(
        &mut self,
        relpath: &str,
        args: &[String],
        timeout_s: u64,
    ) -> Result<ToolResult, SandboxError>;

    /// Runs an orchestrator-issued argv (no shell, no screening).
    fn exec_trusted(&mut self, argv: &[String], timeout_s: u64)
        -> Result<ToolResult, SandboxError>;

    /// Releases the workspace. Calling it twice is a no-op.
    fn teardown(&mut self) -> Result<(), SandboxError>;

    /// Creates or overwrites a workspace file and returns its guest path.
    fn write_script(&mut self, relpath: &str, content: &[u8]) -> Result<String, SandboxError> {
        self.ensure_live()?;
        let target = self.resolve(relpath)?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, content)?;
        Ok(format!("{GUEST_ROOT}/{}", normalized_rel(relpath)))
    }

    fn ensure_live(&self) -> Result<(), SandboxError> {
        if self.is_live() {
            Ok(())
        } else {
            Err(SandboxError::Stale)
        }
    }

    /// Maps a workspace-relative path to its host location, enforcing the
    /// policy.
    fn resolve(&self, relpath: &str) -> Result<PathBuf, SandboxError> {
        if relpath.is_empty() || relpath.starts_with('/') || relpath.starts_with('~') {
            return Err(SandboxError::Policy(format!(
                "`{relpath}` must be a workspace-relative path"
            )));
        }
        match check_path_policy(self.spec(), self.workspace(), relpath) {
            PathDecision::Allow => Ok(self.workspace().join(normalized_rel(relpath))),
            PathDecision::Deny(reason) => Err(SandboxError::Policy(reason)),
        }
    }

    fn read_file(&self, relpath: &str) -> Result<Vec<u8>, SandboxError> {
        let path = self.resolve(relpath)?;
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(SandboxError::NotFound(relpath.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn exists(&self, relpath: &str) -> bool {
        self.resolve(relpath).map(|p| p.exists()).unwrap_or(false)
    }

    fn remove_file(&mut self, relpath: &str) -> Result<(), SandboxError> {
        let path = self.resolve(relpath)?;
        match fs::remove_file(path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Sorted workspace-relative file listing, skipping hidden entries.
    fn list_files(&self, relpath: &str) -> Result<Vec<String>, SandboxError> {
        let root = if relpath.is_empty() || relpath == "." {
            self.workspace().to_path_buf()
        } else {
            self.resolve(relpath)?
        };
        if !root.exists() {
            return Ok(Vec::new());
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(&root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'))
        {
            let entry = entry.map_err(|e| io::Error::other(e.to_string()))?;
            if entry.file_type().is_file() {
                let rel = entry
                    .path()
                    .strip_prefix(self.workspace())
                    .unwrap_or(entry.path());
                files.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(files)
    }

    /// Copies a workspace file or directory to a host destination.
    fn copy_out(&self, relpath: &str, dest: &Path) -> Result<(), SandboxError> {
        let source = self.resolve(relpath)?;
        if !source.exists() {
            return Err(SandboxError::NotFound(relpath.to_string()));
        }
        copy_tree(&source, dest)?;
        Ok(())
    }

    /// Copies a host file or directory into the workspace.
    fn copy_in(&mut self, source: &Path, relpath: &str) -> Result<(), SandboxError> {
        self.ensure_live()?;
        let dest = self.resolve(relpath)?;
        copy_tree(source, &dest)?;
        Ok(())
    }
}

/// Allocates sandboxes for one backend. Shared across concurrent runs.
pub trait SandboxFactory: Send + Sync {
    fn backend(&self) -> Backend;

    fn provision(&self, spec: SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError>;
}

/// Builds the factory selected by `config.backend`.
pub fn factory_for(config: &RunConfig) -> Box<dyn SandboxFactory> {
    match config.backend {
        Backend::PlainProcess => {
            Box::new(ProcessFactory::new(config.guest_interpreter_cmd.clone()))
        }
        Backend::Container => Box::new(ContainerFactory::new(
            config.container_runtime.clone(),
            config.container_image.clone(),
            config.guest_interpreter_cmd.clone(),
        )),
    }
}

fn normalized_rel(relpath: &str) -> String {
    crate::model::lexical_normalize(Path::new(relpath))
        .to_string_lossy()
        .replace('\\', "/")
}

/// Creates the standard directory layout under `root`.
fn prepare_layout(root: &Path) -> io::Result<()> {
    for dir in WORKSPACE_DIRS {
        fs::create_dir_all(root.join(dir))?;
    }
    fs::create_dir_all(root.join(".tmp"))?;
    Ok(())
}

pub(crate) fn copy_tree(source: &Path, dest: &Path) -> io::Result<()> {
    if source.is_file() {
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(source, dest)?;
        return Ok(());
    }
    for entry in WalkDir::new(source).sort_by_file_name() {
        let entry = entry.map_err(|e| io::Error::other(e.to_string()))?;
        let rel = entry.path().strip_prefix(source).unwrap_or(entry.path());
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Splits a configured command line (e.g. `python3 -u`) into argv.
pub(crate) fn split_command(command: &str) -> Vec<String> {
    shlex::split(command)
        .unwrap_or_else(|| command.split_whitespace().map(str::to_string).collect())
}
