//! Child-process execution with a wall-clock timeout and capped output.

use std::io::{self, Read};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{ToolResult, TIMEOUT_EXIT_CODE};

/// Per-stream cap on captured output.
pub const OUTPUT_CAP_BYTES: usize = 64 * 1024;

/// How long to keep draining pipes after the main process has exited.
const DRAIN_GRACE: Duration = Duration::from_secs(2);

#[derive(Default)]
struct Capture {
    kept: Vec<u8>,
    total: usize,
    done: bool,
}

/// Decodes captured bytes, appending a marker when `total` exceeded the cap.
pub fn truncate_output(kept: &[u8], total: usize) -> String {
    let cut = kept.len().min(OUTPUT_CAP_BYTES);
    let mut text = String::from_utf8_lossy(&kept[..cut]).into_owned();
    if total > cut {
        text.push_str(&format!(
            "\n[output truncated: {} more bytes]\n",
            total - cut
        ));
    }
    text
}

/// Runs `cmd` to completion or until `timeout`, killing its whole process
/// group on expiry.
pub(crate) fn run_command(mut cmd: Command, timeout: Duration) -> io::Result<ToolResult> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let stdout = spawn_reader(child.stdout.take());
    let stderr = spawn_reader(child.stderr.take());

    let (exit_code, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => (status.code().unwrap_or(-1), false),
        None => {
            kill_group(&mut child);
            let _ = child.wait();
            (TIMEOUT_EXIT_CODE, true)
        }
    };

    // Background descendants may still hold the pipes open.
    let grace_end = Instant::now() + DRAIN_GRACE;
    while Instant::now() < grace_end && !(is_done(&stdout) && is_done(&stderr)) {
        thread::sleep(Duration::from_millis(10));
    }
    if !(is_done(&stdout) && is_done(&stderr)) {
        kill_group(&mut child);
    }

    Ok(ToolResult {
        exit_code,
        stdout: snapshot(&stdout),
        stderr: snapshot(&stderr),
        duration_s: started.elapsed().as_secs_f64(),
        timed_out,
        denied: false,
    })
}

fn spawn_reader<R: Read + Send + 'static>(source: Option<R>) -> Arc<Mutex<Capture>> {
    let capture = Arc::new(Mutex::new(Capture::default()));
    let Some(mut source) = source else {
        capture.lock().unwrap().done = true;
        return capture;
    };
    let sink = Arc::clone(&capture);
    thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match source.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let mut cap = sink.lock().unwrap();
                    let room = OUTPUT_CAP_BYTES.saturating_sub(cap.kept.len());
                    cap.kept.extend_from_slice(&buf[..n.min(room)]);
                    cap.total += n;
                }
            }
        }
        sink.lock().unwrap().done = true;
    });
    capture
}

fn is_done(capture: &Arc<Mutex<Capture>>) -> bool {
    capture.lock().unwrap().done
}

fn snapshot(capture: &Arc<Mutex<Capture>>) -> String {
    let cap = capture.lock().unwrap();
    truncate_output(&cap.kept, cap.total)
}

fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    {
        if let Ok(pid) = libc::pid_t::try_from(child.id()) {
            // SAFETY: plain syscall; the group id is the child's pid because
            // it was spawned with process_group(0).
            unsafe {
                libc::killpg(pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
}

/// Rewrites host-specific paths and scrubs withheld strings.
pub(crate) fn sanitize(text: &str, workspace: &Path, redactions: &[String]) -> String {
    let mut out = text.to_string();
    let mut roots = vec![workspace.to_string_lossy().into_owned()];
    if let Ok(real) = workspace.canonicalize() {
        roots.push(real.to_string_lossy().into_owned());
    }
    // Longest first so a canonical path is not half-replaced by a prefix.
    roots.sort_by_key(|r| std::cmp::Reverse(r.len()));
    for root in roots.iter().filter(|r| r.len() > 1) {
        out = out.replace(root.as_str(), super::GUEST_ROOT);
    }
    crate::firewall::redact_with(&out, redactions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut cmd = Command::new("bash");
        cmd.arg("-c").arg(script);
        cmd
    }

    #[test]
    fn captures_exit_code_and_streams() {
        let result = run_command(
            sh("echo out; echo err >&2; exit 3"),
            Duration::from_secs(10),
        )
        .unwrap();
        assert_eq!(result.exit_code, 3);
        assert_eq!(result.stdout, "out\n");
        assert_eq!(result.stderr, "err\n");
        assert!(!result.timed_out);
    }

    #[test]
    fn timeout_kills_process_group() {
        let started = Instant::now();
        let result = run_command(
            sh("sleep 30 & sleep 30; echo never"),
            Duration::from_millis(300),
        )
        .unwrap();
        assert!(result.timed_out);
        assert_eq!(result.exit_code, TIMEOUT_EXIT_CODE);
        assert!(started.elapsed() < Duration::from_secs(10));
        assert!(!result.stdout.contains("never"));
    }

    #[test]
    fn output_is_capped() {
        let result = run_command(
            sh("head -c 200000 /dev/zero | tr '\\0' a"),
            Duration::from_secs(10),
        )
        .unwrap();
        assert!(result.stdout.starts_with("aaaa"));
        assert!(result
            .stdout
            .contains("[output truncated: 134464 more bytes]"));
    }

    #[test]
    fn sanitize_rewrites_and_redacts() {
        let text = "/tmp/ws123/work/x.py failed reading /srv/held.csv";
        let out = sanitize(
            text,
            Path::new("/tmp/ws123"),
            &["/srv/held.csv".to_string()],
        );
        assert_eq!(out, "/workspace/work/x.py failed reading [withheld]");
    }
}
