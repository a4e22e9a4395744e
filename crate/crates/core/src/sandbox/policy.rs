//! Path policy shared by both backends.
//!
//! A path is allowed when it resolves inside the workspace (following
//! symlinks that already exist) and matches none of the denied patterns.
//! Shell commands and script bodies are screened by pulling out every
//! path-like fragment and applying the same rule. The screening is
//! heuristic: it rejects obvious references and is the only barrier on the
//! plain-process backend, which is why that backend is flagged unsafe.

use std::path::{Path, PathBuf};

use super::{SandboxSpec, GUEST_ROOT};
use crate::model::lexical_normalize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathDecision {
    Allow,
    Deny(String),
}

impl PathDecision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, PathDecision::Allow)
    }
}

/// Decides whether the agent may touch `requested`.
///
/// Relative paths are taken from the workspace root; `~` and `/workspace`
/// both name the workspace root.
pub fn check_path_policy(spec: &SandboxSpec, workspace: &Path, requested: &str) -> PathDecision {
    let requested = requested.trim();
    if matches_denied(spec, requested) {
        return PathDecision::Deny("reference to a withheld path".to_string());
    }
    let expanded = expand(workspace, requested);
    let normalized = lexical_normalize(&expanded);
    if matches_denied(spec, &normalized.to_string_lossy()) {
        return PathDecision::Deny("reference to a withheld path".to_string());
    }
    let root = lexical_normalize(workspace);
    if !normalized.starts_with(&root) {
        return PathDecision::Deny(format!("`{requested}` is outside the sandbox workspace"));
    }
    // Symlinks planted inside the workspace must not lead out of it.
    if let Some(real) = canonical_prefix(&normalized) {
        if matches_denied(spec, &real.to_string_lossy()) {
            return PathDecision::Deny("reference to a withheld path".to_string());
        }
        let real_root = root.canonicalize().unwrap_or(root);
        if !real.starts_with(&real_root) {
            return PathDecision::Deny(format!(
                "`{requested}` resolves outside the sandbox workspace"
            ));
        }
    }
    PathDecision::Allow
}

/// Screens a shell command line.
pub fn screen_command(spec: &SandboxSpec, workspace: &Path, command: &str) -> PathDecision {
    let tokens = shlex::split(command)
        .unwrap_or_else(|| command.split_whitespace().map(str::to_string).collect());
    for token in &tokens {
        if let PathDecision::Deny(reason) = screen_text(spec, workspace, token) {
            return PathDecision::Deny(reason);
        }
    }
    PathDecision::Allow
}

/// Screens a guest script body and its arguments.
pub fn screen_script(
    spec: &SandboxSpec,
    workspace: &Path,
    body: &str,
    args: &[String],
) -> PathDecision {
    let body = match body.strip_prefix("#!") {
        Some(rest) => rest.split_once('\n').map(|(_, tail)| tail).unwrap_or(""),
        None => body,
    };
    if let PathDecision::Deny(reason) = screen_text(spec, workspace, body) {
        return PathDecision::Deny(reason);
    }
    for arg in args {
        if let PathDecision::Deny(reason) = screen_text(spec, workspace, arg) {
            return PathDecision::Deny(reason);
        }
    }
    PathDecision::Allow
}

fn screen_text(spec: &SandboxSpec, workspace: &Path, text: &str) -> PathDecision {
    for fragment in path_fragments(text) {
        if !looks_like_path(fragment) && !matches_denied(spec, fragment) {
            continue;
        }
        if let PathDecision::Deny(reason) = check_path_policy(spec, workspace, fragment) {
            return PathDecision::Deny(reason);
        }
    }
    PathDecision::Allow
}

/// Splits free text into candidate path fragments. URLs are dropped.
fn path_fragments(text: &str) -> Vec<&str> {
    const OUTER: &[char] = &[
        ';', '|', '&', '<', '>', '(', ')', '\'', '"', '`', ',', '=', '{', '}', '[', ']', '$', '+',
        '%', '\\',
    ];
    let mut out = Vec::new();
    for piece in text.split(|c: char| c.is_whitespace() || OUTER.contains(&c)) {
        if piece.is_empty() || piece.contains("://") {
            continue;
        }
        out.extend(piece.split(':').filter(|p| !p.is_empty()));
    }
    out
}

fn looks_like_path(fragment: &str) -> bool {
    // A bare run of slashes is almost always an operator (`a / b`, `a // b`).
    if fragment.chars().all(|c| c == '/') {
        return false;
    }
    // `n//2` splits into `n` and `//2`: floor division, not a path.
    if let Some(rest) = fragment.strip_prefix("//") {
        if !rest.contains('/') {
            return false;
        }
    }
    fragment.contains('/') || fragment.starts_with('~') || fragment == ".." || fragment == "."
}

fn expand(workspace: &Path, requested: &str) -> PathBuf {
    if let Some(rest) = requested.strip_prefix('~') {
        return workspace.join(rest.trim_start_matches('/'));
    }
    if requested == GUEST_ROOT {
        return workspace.to_path_buf();
    }
    if let Some(rest) = requested
        .strip_prefix(GUEST_ROOT)
        .and_then(|r| r.strip_prefix('/'))
    {
        return workspace.join(rest);
    }
    let path = Path::new(requested);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workspace.join(path)
    }
}

/// Canonical form of the longest existing ancestor, with the remaining
/// components re-appended.
fn canonical_prefix(path: &Path) -> Option<PathBuf> {
    let mut existing = path.to_path_buf();
    let mut tail = Vec::new();
    loop {
        if let Ok(real) = existing.canonicalize() {
            let mut out = real;
            for component in tail.iter().rev() {
                out.push(component);
            }
            return Some(out);
        }
        let name = existing.file_name()?.to_os_string();
        tail.push(name);
        if !existing.pop() {
            return None;
        }
    }
}

fn matches_denied(spec: &SandboxSpec, text: &str) -> bool {
    !text.is_empty()
        && spec
            .denied_paths
            .iter()
            .any(|pattern| wildcard_match(pattern, text))
}

/// Glob-style match where `*` spans any run of characters (including `/`)
/// and `?` matches one character.
pub(crate) fn wildcard_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((star_pi, star_ti)) = star {
            pi = star_pi + 1;
            ti = star_ti + 1;
            star = Some((star_pi, star_ti + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::Network;

    fn spec(denied: &[&str]) -> SandboxSpec {
        SandboxSpec {
            workspace_root: None,
            readonly_mounts: Vec::new(),
            denied_paths: denied.iter().map(|s| s.to_string()).collect(),
            network: Network::Allowed,
            cpu_limit: None,
            mem_limit_mb: None,
            tool_timeout_s: 5,
            redactions: Vec::new(),
        }
    }

    #[test]
    fn wildcard() {
        assert!(wildcard_match("/data/*_test.csv", "/data/a/b_test.csv"));
        assert!(wildcard_match("a?c", "abc"));
        assert!(!wildcard_match("a?c", "ac"));
        assert!(wildcard_match("*", ""));
        assert!(!wildcard_match("/x/test.csv", "/x/test.csvx"));
    }

    #[test]
    fn workspace_paths() {
        let dir = tempfile::tempdir().unwrap();
        let ws = dir.path();
        let s = spec(&[]);
        assert!(check_path_policy(&s, ws, "work/train.py").is_allowed());
        assert!(check_path_policy(&s, ws, "work/../data/train.csv").is_allowed());
        assert!(check_path_policy(&s, ws, "/workspace/work/x").is_allowed());
        assert!(check_path_policy(&s, ws, "~/artifacts").is_allowed());
        assert!(!check_path_policy(&s, ws, "../escape").is_allowed());
        assert!(!check_path_policy(&s, ws, "/etc/passwd").is_allowed());
        assert!(!check_path_policy(&s, ws, "work/../../x").is_allowed());
    }

    #[test]
    fn denied_patterns_win_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let ws = dir.path();
        let held_out = ws.join("data/held_out.csv");
        let s = spec(&[&held_out.to_string_lossy()]);
        assert!(!check_path_policy(&s, ws, "data/held_out.csv").is_allowed());
        assert!(!check_path_policy(&s, ws, "data/./held_out.csv").is_allowed());
    }

    #[cfg(unix)]
    #[test]
    fn symlink_escape_is_denied() {
        let outside = tempfile::tempdir().unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path(), dir.path().join("link")).unwrap();
        let s = spec(&[]);
        assert!(!check_path_policy(&s, dir.path(), "link/secret").is_allowed());
    }

    #[test]
    fn command_screening() {
        let dir = tempfile::tempdir().unwrap();
        let ws = dir.path();
        let s = spec(&["/srv/data/held_out.csv"]);
        let allowed = [
            "ls -la work",
            "python3 work/train.py --out artifacts/model.json",
            "head -n 5 data/train.csv | wc -l",
            "curl -s https://example.org/x/y",
            "python3 -c 'print(4 / 2)'",
            "sed -i 's/a/b/' work/x.py",
        ];
        for command in allowed {
            assert!(screen_command(&s, ws, command).is_allowed(), "{command}");
        }
        let denied = [
            "cat /srv/data/held_out.csv",
            "cp ../../held_out.csv work/",
            "cd .. && ls",
            "python3 -c \"open('/srv/data/held_out.csv').read()\"",
            "cat<../x",
            "ls ${PWD}/../",
            "echo $(cat ~/../secret)",
        ];
        for command in denied {
            assert!(!screen_command(&s, ws, command).is_allowed(), "{command}");
        }
    }

    #[test]
    fn script_screening() {
        let dir = tempfile::tempdir().unwrap();
        let ws = dir.path();
        let s = spec(&[]);
        let ok = "#!/usr/bin/env python3\nimport csv\nrows = list(csv.reader(open('data/train.csv')))\nx = len(rows)//2\n";
        assert!(screen_script(&s, ws, ok, &["--input".into(), "work/in.csv".into()]).is_allowed());
        let bad = "import os\nprint(open(os.path.join('..', 'x')).read())\n";
        assert!(!screen_script(&s, ws, bad, &[]).is_allowed());
        assert!(!screen_script(&s, ws, "pass\n", &["/etc/hosts".into()]).is_allowed());
    }
}
