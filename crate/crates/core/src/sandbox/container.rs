//! Container backend: one long-lived container per workspace, driven through
//! the runtime's CLI (`docker` or a compatible replacement).
//!
//! The workspace directory lives on the host and is bind-mounted at
//! `/workspace`; the training split is bind-mounted read-only over
//! `/workspace/data/train.csv`. Nothing else from the host is visible.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use log::{debug, warn};
use tempfile::TempDir;

use super::policy::{screen_command, screen_script};
use super::process::{install_readonly, missing_script};
use super::runner::{run_command, sanitize};
use super::{
    prepare_layout, split_command, Network, PathDecision, Sandbox, SandboxError, SandboxFactory,
    SandboxSpec, ToolResult, GUEST_ROOT,
};
use crate::model::Backend;

static CONTAINER_SEQ: AtomicU64 = AtomicU64::new(0);

const CONTROL_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct ContainerFactory {
    runtime: String,
    image: String,
    interpreter: Vec<String>,
}

impl ContainerFactory {
    pub fn new(
        runtime: impl Into<String>,
        image: impl Into<String>,
        interpreter_cmd: impl AsRef<str>,
    ) -> Self {
        Self {
            runtime: runtime.into(),
            image: image.into(),
            interpreter: split_command(interpreter_cmd.as_ref()),
        }
    }

    fn unavailable(&self, reason: impl Into<String>) -> SandboxError {
        SandboxError::Provision {
            backend: Backend::Container,
            reason: format!("container runtime `{}`: {}", self.runtime, reason.into()),
        }
    }

    /// Checks that the runtime binary exists and answers.
    pub fn probe(&self) -> Result<(), SandboxError> {
        let mut cmd = Command::new(&self.runtime);
        cmd.arg("version");
        match run_command(cmd, Duration::from_secs(20)) {
            Ok(result) if result.success() => Ok(()),
            Ok(result) => Err(self.unavailable(result.tail(400).trim().to_string())),
            Err(e) => Err(self.unavailable(e.to_string())),
        }
    }
}

impl SandboxFactory for ContainerFactory {
    fn backend(&self) -> Backend {
        Backend::Container
    }

    fn provision(&self, mut spec: SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError> {
        spec.validate_mounts()?;
        self.probe()?;
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
        // Host-side copy keeps workspace reads uniform across backends; the
        // bind mount below shadows it inside the container.
        for mount in &spec.readonly_mounts {
            install_readonly(&mount.host, &root.join(&mount.guest))?;
        }

        let name = format!(
            "mlpilot-{}-{}",
            std::process::id(),
            CONTAINER_SEQ.fetch_add(1, Ordering::Relaxed)
        );
        let mut cmd = Command::new(&self.runtime);
        cmd.args(["run", "-d", "--rm", "--name", &name, "-w", GUEST_ROOT]);
        cmd.arg("-v")
            .arg(format!("{}:{GUEST_ROOT}", root.display()));
        for mount in &spec.readonly_mounts {
            let host = mount.host.canonicalize()?;
            cmd.arg("-v").arg(format!(
                "{}:{GUEST_ROOT}/{}:ro",
                host.display(),
                mount.guest
            ));
        }
        if spec.network == Network::Denied {
            cmd.args(["--network", "none"]);
        }
        if let Some(cpus) = spec.cpu_limit {
            cmd.arg("--cpus").arg(cpus.to_string());
        }
        if let Some(mem) = spec.mem_limit_mb {
            cmd.arg("--memory").arg(format!("{mem}m"));
        }
        cmd.args([
            "-e",
            "HOME=/workspace",
            "-e",
            "PYTHONDONTWRITEBYTECODE=1",
            "-e",
            "PYTHONHASHSEED=0",
        ]);
        cmd.arg(&self.image).args(["sleep", "infinity"]);
        let started =
            run_command(cmd, CONTROL_TIMEOUT).map_err(|e| self.unavailable(e.to_string()))?;
        if !started.success() {
            return Err(self.unavailable(format!(
                "failed to start container: {}",
                started.tail(400).trim()
            )));
        }
        spec.workspace_root = Some(root.clone());
        debug!("started container {name} for workspace {}", root.display());
        Ok(Box::new(ContainerSandbox {
            spec,
            root,
            scratch,
            runtime: self.runtime.clone(),
            name,
            interpreter: self.interpreter.clone(),
            live: true,
        }))
    }
}

pub struct ContainerSandbox {
    spec: SandboxSpec,
    root: PathBuf,
    scratch: Option<TempDir>,
    runtime: String,
    name: String,
    interpreter: Vec<String>,
    live: bool,
}

impl ContainerSandbox {
    /// `docker exec` with an in-container `timeout` so the guest process dies
    /// even if the client is killed first.
    fn exec(&self, argv: &[String], timeout_s: u64) -> Result<ToolResult, SandboxError> {
        let timeout_s = timeout_s.max(1);
        let mut cmd = Command::new(&self.runtime);
        cmd.args([
            "exec", "-w", GUEST_ROOT, &self.name, "timeout", "-s", "KILL",
        ])
        .arg(format!("{timeout_s}s"))
        .args(argv);
        let mut result = run_command(cmd, Duration::from_secs(timeout_s + 5))?;
        // `timeout -s KILL` reports 137 when it fires.
        if result.exit_code == 137 && result.duration_s >= timeout_s as f64 {
            result.timed_out = true;
            result.exit_code = super::TIMEOUT_EXIT_CODE;
        }
        result.stdout = sanitize(&result.stdout, &self.root, &self.spec.redactions);
        result.stderr = sanitize(&result.stderr, &self.root, &self.spec.redactions);
        Ok(result)
    }
}

impl Sandbox for ContainerSandbox {
    fn backend(&self) -> Backend {
        Backend::Container
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
        self.exec(&["bash".into(), "-c".into(), command.into()], timeout_s)
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
        let mut argv = self.interpreter.clone();
        argv.push(relpath.to_string());
        argv.extend(args.iter().cloned());
        self.exec(&argv, timeout_s)
    }

    fn exec_trusted(
        &mut self,
        argv: &[String],
        timeout_s: u64,
    ) -> Result<ToolResult, SandboxError> {
        self.ensure_live()?;
        self.exec(argv, timeout_s)
    }

    fn teardown(&mut self) -> Result<(), SandboxError> {
        if !self.live {
            return Ok(());
        }
        self.live = false;
        let mut cmd = Command::new(&self.runtime);
        cmd.args(["rm", "-f", &self.name]);
        match run_command(cmd, CONTROL_TIMEOUT) {
            Ok(result) if !result.success() => {
                warn!(
                    "removing container {} failed: {}",
                    self.name,
                    result.tail(200).trim()
                )
            }
            Err(e) => warn!("removing container {} failed: {e}", self.name),
            _ => {}
        }
        if let Some(scratch) = self.scratch.take() {
            // Files created by a root guest may not be removable; leave them.
            if let Err(e) = scratch.close() {
                warn!("workspace cleanup incomplete: {e}");
            }
        }
        Ok(())
    }
}

impl Drop for ContainerSandbox {
    fn drop(&mut self) {
        let _ = self.teardown();
    }
}
