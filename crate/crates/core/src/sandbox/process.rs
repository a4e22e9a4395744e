//! Plain child processes in a scratch directory. Tools run with the
//! orchestrator's own privileges; only the path policy stands between the
//! agent and the host filesystem, so runs on this backend are flagged unsafe.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use log::debug;
use tempfile::TempDir;

use super::policy::{screen_command, screen_script};
use super::runner::{run_command, sanitize};
use super::{
    prepare_layout, split_command, PathDecision, Sandbox, SandboxError, SandboxFactory,
    SandboxSpec, ToolResult,
};
use crate::model::Backend;

#[derive(Debug, Clone)]
pub struct ProcessFactory {
    interpreter: Vec<String>,
}

impl ProcessFactory {
    pub fn new(interpreter_cmd: impl AsRef<str>) -> Self {
        Self {
            interpreter: split_command(interpreter_cmd.as_ref()),
        }
    }
}

impl SandboxFactory for ProcessFactory {
    fn backend(&self) -> Backend {
        Backend::PlainProcess
    }

    fn provision(&self, mut spec: SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError> {
        spec.validate_mounts()?;
        let (root, scratch) = match &spec.workspace_root {
            Some(root) => {
                fs::create_dir_all(root)?;
                (root.clone(), None)
            }
            None => {
                let dir = tempfile::Builder::new().prefix("mlpilot-ws-").tempdir()?;
                (dir.path().to_path_buf(), Some(dir))
            }
        };
        prepare_layout(&root)?;
        for mount in &spec.readonly_mounts {
            let target = root.join(&mount.guest);
            install_readonly(&mount.host, &target)?;
        }
        spec.workspace_root = Some(root.clone());
        debug!("provisioned plain-process workspace at {}", root.display());
        Ok(Box::new(ProcessSandbox {
            spec,
            root,
            scratch,
            interpreter: self.interpreter.clone(),
            live: true,
        }))
    }
}

/// Copies `host` to `target` and drops write permission.
pub(crate) fn install_readonly(host: &Path, target: &Path) -> Result<(), SandboxError> {
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    if target.exists() {
        let mut perms = fs::metadata(target)?.permissions();
        #[allow(clippy::permissions_set_readonly_false)]
        perms.set_readonly(false);
        fs::set_permissions(target, perms)?;
    }
    fs::copy(host, target)?;
    let mut perms = fs::metadata(target)?.permissions();
    perms.set_readonly(true);
    fs::set_permissions(target, perms)?;
    Ok(())
}

pub struct ProcessSandbox {
    spec: SandboxSpec,
    root: PathBuf,
    scratch: Option<TempDir>,
    interpreter: Vec<String>,
    live: bool,
}

impl ProcessSandbox {
    fn command(&self, program: &str) -> Command {
        let mut cmd = Command::new(program);
        cmd.current_dir(&self.root)
            .env_clear()
            .env(
                "PATH",
                std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()),
            )
            .env("HOME", &self.root)
            .env("TMPDIR", self.root.join(".tmp"))
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0");
        cmd
    }

    fn finish(&self, cmd: Command, timeout_s: u64) -> Result<ToolResult, SandboxError> {
        let mut result = run_command(cmd, Duration::from_secs(timeout_s.max(1)))?;
        result.stdout = sanitize(&result.stdout, &self.root, &self.spec.redactions);
        result.stderr = sanitize(&result.stderr, &self.root, &self.spec.redactions);
        Ok(result)
    }
}

impl Sandbox for ProcessSandbox {
    fn backend(&self) -> Backend {
        Backend::PlainProcess
    }

    fn spec(&self) -> &SandboxSpec {
        &self.spec
    }

    fn workspace(&self) -> &Path {
        &self.root
    }

    fn is_live(&self) -> bool {
        self.live
    }

    fn exec_shell(&mut self, command: &str, timeout_s: u64) -> Result<ToolResult, SandboxError> {
        self.ensure_live()?;
        if let PathDecision::Deny(reason) = screen_command(&self.spec, &self.root, command) {
            return Ok(ToolResult::denied(&reason));
        }
        let mut cmd = self.command("bash");
        cmd.arg("-c").arg(command);
        self.finish(cmd, timeout_s)
    }

    fn run_script(
        &mut self,
        relpath: &str,
        args: &[String],
        timeout_s: u64,
    ) -> Result<ToolResult, SandboxError> {
        self.ensure_live()?;
        let body = match self.read_file(relpath) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(SandboxError::Policy(reason)) => return Ok(ToolResult::denied(&reason)),
            Err(SandboxError::NotFound(path)) => return Ok(missing_script(&path)),
            Err(e) => return Err(e),
        };
        if let PathDecision::Deny(reason) = screen_script(&self.spec, &self.root, &body, args) {
            return Ok(ToolResult::denied(&reason));
        }
        let (program, rest) = self
            .interpreter
            .split_first()
            .ok_or_else(|| SandboxError::Invariant("empty interpreter command".into()))?;
        let mut cmd = self.command(program);
        cmd.args(rest).arg(relpath).args(args);
        self.finish(cmd, timeout_s)
    }

    fn exec_trusted(
        &mut self,
        argv: &[String],
        timeout_s: u64,
    ) -> Result<ToolResult, SandboxError> {
        self.ensure_live()?;
        let (program, rest) = argv
            .split_first()
            .ok_or_else(|| SandboxError::Invariant("empty argv".into()))?;
        let mut cmd = self.command(program);
        cmd.args(rest);
        self.finish(cmd, timeout_s)
    }

    fn teardown(&mut self) -> Result<(), SandboxError> {
        if !self.live {
            return Ok(());
        }
        self.live = false;
        if let Some(scratch) = self.scratch.take() {
            make_writable(scratch.path());
            scratch.close()?;
        }
        Ok(())
    }
}

impl Drop for ProcessSandbox {
    fn drop(&mut self) {
        let _ = self.teardown();
    }
}

pub(crate) fn missing_script(path: &str) -> ToolResult {
    ToolResult {
        exit_code: 127,
        stdout: String::new(),
        stderr: format!("script not found: {path}"),
        duration_s: 0.0,
        timed_out: false,
        denied: false,
    }
}

/// Read-only files would block removal of the scratch directory on some
/// platforms.
fn make_writable(root: &Path) {
    for entry in walkdir::WalkDir::new(root).into_iter().flatten() {
        if let Ok(meta) = entry.metadata() {
            let mut perms = meta.permissions();
            if perms.readonly() {
                #[allow(clippy::permissions_set_readonly_false)]
                perms.set_readonly(false);
                let _ = fs::set_permissions(entry.path(), perms);
            }
        }
    }
}
