//! Verification and isolated execution of generated Python programs.
//!
//! Verification is a static deny-list scan plus a compile-only interpreter run.
//! Execution happens in a private temp directory under an audit-hook guard that
//! refuses network, process and out-of-tree filesystem access.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Exit status the emission block uses when the result variable is unset.
const NO_RESULT_EXIT: i32 = 17;

const DEFAULT_DENIED_IMPORTS: &[&str] = &[
    "os", "sys", "subprocess", "socket", "shutil", "pathlib", "urllib", "urllib2", "urllib3", "http", "requests",
    "httpx", "ftplib", "smtplib", "telnetlib", "poplib", "imaplib", "ssl", "asyncio", "ctypes", "cffi",
    "multiprocessing", "threading", "signal", "importlib", "pty", "tty", "fcntl", "resource", "builtins", "io",
    "tempfile", "glob", "pickle", "marshal", "shelve", "webbrowser", "code", "codeop", "runpy", "gc", "inspect",
];

const GUARD: &str = r#"
import os, sys
_root = os.path.realpath(sys.argv[1])
_source = open(os.path.join(_root, "program.py"), encoding="utf-8").read()
_prefixes = tuple(sorted({os.path.realpath(p) for p in (sys.prefix, sys.base_prefix, sys.exec_prefix, os.path.dirname(os.__file__))}))
_write_flags = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
_blocked = ("subprocess.", "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "os.forkpty", "os.kill",
            "os.killpg", "os.remove", "os.unlink", "os.rmdir", "os.rename", "os.chmod", "os.chown", "os.truncate",
            "os.mkdir", "os.symlink", "os.link", "shutil.", "ctypes.", "pty.", "webbrowser.", "urllib.")

def _guard(event, args):
    if event.startswith("socket.") or event.startswith(_blocked):
        raise PermissionError("sandbox denied " + event)
    if event == "open":
        path, mode = args[0], args[1]
        if isinstance(path, int):
            return
        real = os.path.realpath(os.fsdecode(path))
        if real == _root or real.startswith(_root + os.sep):
            return
        flags = args[2] if len(args) > 2 and isinstance(args[2], int) else 0
        if mode is None:
            readonly = not flags & _write_flags
        else:
            readonly = not any(c in str(mode) for c in "wax+")
        if readonly and real.startswith(_prefixes):
            return
        raise PermissionError("sandbox denied open of " + real)

sys.addaudithook(_guard)
exec(compile(_source, "program.py", "exec"), {"__name__": "__main__"})
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxProfile {
    /// Interpreter invocation, e.g. `["python3"]`.
    pub interpreter: Vec<String>,
    /// Arguments placed before the script path when executing.
    #[serde(default = "default_isolation")]
    pub isolation_args: Vec<String>,
    #[serde(with = "duration_secs", default = "default_timeout")]
    pub wall_timeout: Duration,
    #[serde(default = "default_result_variable")]
    pub result_variable: String,
    #[serde(default = "default_denied_imports")]
    pub denied_imports: Vec<String>,
}

fn default_isolation() -> Vec<String> {
    // -S: no site-packages, so programs see the standard library only (and start faster).
    vec!["-I".into(), "-B".into(), "-S".into()]
}

fn default_timeout() -> Duration {
    Duration::from_secs(10)
}

fn default_result_variable() -> String {
    "ans".into()
}

fn default_denied_imports() -> Vec<String> {
    DEFAULT_DENIED_IMPORTS.iter().map(|s| s.to_string()).collect()
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs.is_finite() && secs > 0.0) {
            return Err(serde::de::Error::custom("wall_timeout must be a positive number of seconds"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

impl Default for SandboxProfile {
    fn default() -> Self {
        SandboxProfile {
            interpreter: vec!["python3".into()],
            isolation_args: default_isolation(),
            wall_timeout: default_timeout(),
            result_variable: default_result_variable(),
            denied_imports: default_denied_imports(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    Unavailable(String),
    #[error("program timed out")]
    Timeout,
    #[error("runtime fault: {0}")]
    RuntimeFault(String),
    #[error("program did not set the result variable")]
    NoResultVariable,
    #[error("invalid sandbox profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramVerdict {
    pub ok: bool,
    pub diagnostics: String,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic()) && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

impl SandboxProfile {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.interpreter.is_empty() || self.interpreter[0].trim().is_empty() {
            return Err(SandboxError::InvalidProfile("interpreter command is empty".into()));
        }
        if self.wall_timeout.is_zero() {
            return Err(SandboxError::InvalidProfile("wall_timeout must be positive".into()));
        }
        if !is_identifier(&self.result_variable) {
            return Err(SandboxError::InvalidProfile(format!("{:?} is not an identifier", self.result_variable)));
        }
        Ok(())
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.wall_timeout = t;
        self
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.interpreter[0]);
        cmd.args(&self.interpreter[1..]);
        cmd
    }
}

fn import_patterns() -> &'static (Regex, Regex, Regex) {
    static RES: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    RES.get_or_init(|| {
        (
            Regex::new(r"^\s*import\s+(.+)$").unwrap(),
            Regex::new(r"^\s*from\s+([A-Za-z_][\w\.]*)\s+import\b").unwrap(),
            Regex::new(r"\b(open|exec|eval|__import__|compile|input|breakpoint|globals|getattr|setattr|delattr|vars)\s*\(").unwrap(),
        )
    })
}

/// Removes `#` comments outside string literals on one line (best effort).
fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) if c == q && prev != '\\' => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' => quote = Some(c),
            None if c == '#' => return &line[..i],
            None => {}
        }
        prev = c;
    }
    line
}

/// Deny-list findings, one diagnostic per offending line.
pub fn static_scan(program: &str, profile: &SandboxProfile) -> Vec<String> {
    let (import_re, from_re, call_re) = import_patterns();
    let denied = |module: &str| {
        let top = module.trim().split('.').next().unwrap_or("").trim();
        profile.denied_imports.iter().any(|d| d == top).then(|| top.to_string())
    };
    let mut findings = Vec::new();
    for (n, raw) in program.lines().enumerate() {
        let line = strip_comment(raw);
        let lineno = n + 1;
        for stmt in line.split(';') {
            if let Some(c) = from_re.captures(stmt) {
                if let Some(m) = denied(&c[1]) {
                    findings.push(format!("line {lineno}: denied import `{m}`"));
                }
            } else if let Some(c) = import_re.captures(stmt) {
                for part in c[1].split(',') {
                    let module = part.split_whitespace().next().unwrap_or("");
                    if let Some(m) = denied(module) {
                        findings.push(format!("line {lineno}: denied import `{m}`"));
                    }
                }
            }
        }
        for c in call_re.captures_iter(line) {
            // Attribute access such as `str.format(` is fine; only bare builtins are denied.
            let start = c.get(1).unwrap().start();
            if line[..start].ends_with('.') {
                continue;
            }
            findings.push(format!("line {lineno}: denied call `{}`", &c[1]));
        }
    }
    findings
}

struct Finished {
    status: std::process::ExitStatus,
    stdout: String,
    stderr: String,
}

enum RunOutcome {
    Finished(Finished),
    TimedOut,
}

fn run_with_timeout(mut cmd: Command, stdin: Option<&str>, timeout: Duration) -> Result<RunOutcome, SandboxError> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| SandboxError::Unavailable(e.to_string()))?;
    if let Some(input) = stdin {
        use std::io::Write;
        let mut pipe = child.stdin.take().expect("stdin piped");
        pipe.write_all(input.as_bytes()).map_err(|e| SandboxError::Unavailable(e.to_string()))?;
    }
    let mut out = child.stdout.take().expect("stdout piped");
    let mut err = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out.read_to_end(&mut s);
        String::from_utf8_lossy(&s).into_owned()
    });
    let err_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err.read_to_end(&mut s);
        String::from_utf8_lossy(&s).into_owned()
    });
    let started = Instant::now();
    let status = loop {
        match child.try_wait().map_err(|e| SandboxError::Unavailable(e.to_string()))? {
            Some(status) => break Some(status),
            None if started.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    };
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(match status {
        Some(status) => RunOutcome::Finished(Finished { status, stdout, stderr }),
        None => RunOutcome::TimedOut,
    })
}

fn stderr_excerpt(stderr: &str) -> String {
    let lines: Vec<&str> = stderr.lines().filter(|l| !l.trim().is_empty()).collect();
    let tail = &lines[lines.len().saturating_sub(4)..];
    tail.join("\n")
}

/// Static scan, then a compile-only interpreter pass.
pub fn verify(program: &str, profile: &SandboxProfile) -> Result<ProgramVerdict, SandboxError> {
    profile.validate()?;
    if program.trim().is_empty() {
        return Ok(ProgramVerdict { ok: false, diagnostics: "program is empty".into() });
    }
    let findings = static_scan(program, profile);
    if !findings.is_empty() {
        return Ok(ProgramVerdict { ok: false, diagnostics: findings.join("; ") });
    }
    let mut cmd = profile.command();
    cmd.args(&profile.isolation_args)
        .arg("-c")
        .arg("import sys; compile(sys.stdin.read(), '<program>', 'exec')");
    match run_with_timeout(cmd, Some(program), profile.wall_timeout)? {
        RunOutcome::TimedOut => Err(SandboxError::Unavailable("compile check timed out".into())),
        RunOutcome::Finished(f) if f.status.success() => Ok(ProgramVerdict { ok: true, diagnostics: String::new() }),
        RunOutcome::Finished(f) => Ok(ProgramVerdict { ok: false, diagnostics: stderr_excerpt(&f.stderr) }),
    }
}

fn emission_block(var: &str) -> String {
    format!(
        "\n\n# result emission\ntry:\n    {var}\nexcept NameError:\n    raise SystemExit({NO_RESULT_EXIT})\nprint({var})\n"
    )
}

/// Runs `program` in a private temp directory; returns the last non-empty stdout line.
pub fn execute(program: &str, profile: &SandboxProfile) -> Result<String, SandboxError> {
    profile.validate()?;
    let dir = tempfile::tempdir().map_err(|e| SandboxError::Unavailable(e.to_string()))?;
    let script = format!("{}{}", program.trim_end(), emission_block(&profile.result_variable));
    write_file(&dir.path().join("program.py"), &script)?;
    write_file(&dir.path().join("guard.py"), GUARD)?;
    let mut cmd = profile.command();
    cmd.args(&profile.isolation_args)
        .arg(dir.path().join("guard.py"))
        .arg(dir.path())
        .current_dir(dir.path())
        .env_clear()
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0");
    if let Ok(path) = std::env::var("PATH") {
        cmd.env("PATH", path);
    }
    match run_with_timeout(cmd, None, profile.wall_timeout)? {
        RunOutcome::TimedOut => Err(SandboxError::Timeout),
        RunOutcome::Finished(f) => {
            if f.status.code() == Some(NO_RESULT_EXIT) {
                return Err(SandboxError::NoResultVariable);
            }
            if !f.status.success() {
                let excerpt = stderr_excerpt(&f.stderr);
                return Err(SandboxError::RuntimeFault(if excerpt.is_empty() {
                    format!("interpreter exited with {}", f.status)
                } else {
                    excerpt
                }));
            }
            f.stdout
                .lines()
                .rev()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .map(str::to_string)
                .ok_or(SandboxError::NoResultVariable)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), SandboxError> {
    std::fs::write(path, contents).map_err(|e| SandboxError::Unavailable(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHORTAGE: &str = "# Python Code, return 'ans'. Make sure that 'ans' is a string selected from the options in the question\nquantity_demanded_at_price_955 = 13400\nquantity_supplied_at_price_955 = 11400\nif quantity_demanded_at_price_955 > quantity_supplied_at_price_955:\n    ans = 'shortage'\nelse:\n    ans = 'surplus'";

    #[test]
    fn scan_names_denied_imports() {
        let p = SandboxProfile::default();
        assert_eq!(static_scan("import socket\n", &p), ["line 1: denied import `socket`"]);
        assert_eq!(static_scan("from urllib.request import urlopen", &p), ["line 1: denied import `urllib`"]);
        assert_eq!(static_scan("import math, os.path as p", &p), ["line 1: denied import `os`"]);
        assert_eq!(static_scan("x = 1; import subprocess", &p), ["line 1: denied import `subprocess`"]);
        assert!(static_scan("import math\nfrom fractions import Fraction\n", &p).is_empty());
    }

    #[test]
    fn scan_flags_dangerous_builtins() {
        let p = SandboxProfile::default();
        assert_eq!(static_scan("ans = eval('1+1')", &p), ["line 1: denied call `eval`"]);
        assert_eq!(static_scan("open('/etc/passwd')", &p), ["line 1: denied call `open`"]);
        assert!(static_scan("ans = '{}'.format(3)  # open(", &p).is_empty());
        assert!(static_scan("ans = 'use eval(x) carefully'", &p).len() == 1, "string contents are not parsed");
    }

    #[test]
    fn verifies_shortage_program() {
        let v = verify(SHORTAGE, &SandboxProfile::default()).unwrap();
        assert_eq!(v, ProgramVerdict { ok: true, diagnostics: String::new() });
    }

    #[test]
    fn syntax_errors_fail_verification() {
        let v = verify("ans = (1 + 2", &SandboxProfile::default()).unwrap();
        assert!(!v.ok);
        assert!(v.diagnostics.contains("SyntaxError"), "{}", v.diagnostics);
    }

    #[test]
    fn executes_shortage_program() {
        assert_eq!(execute(SHORTAGE, &SandboxProfile::default()).unwrap(), "shortage");
    }

    #[test]
    fn runtime_fault_carries_diagnostic() {
        match execute("ans = 1/0", &SandboxProfile::default()) {
            Err(SandboxError::RuntimeFault(msg)) => assert!(msg.contains("ZeroDivisionError"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_result_variable() {
        assert_eq!(execute("x = 3", &SandboxProfile::default()), Err(SandboxError::NoResultVariable));
    }

    #[test]
    fn guard_blocks_network_and_files() {
        let p = SandboxProfile::default();
        let r = execute("__import__('socket').socket()\nans = 1", &p);
        assert!(matches!(&r, Err(SandboxError::RuntimeFault(m)) if m.contains("sandbox denied")), "{r:?}");
        let r = execute("f = open('/tmp/outside.txt', 'w')\nans = 1", &p);
        assert!(matches!(&r, Err(SandboxError::RuntimeFault(m)) if m.contains("sandbox denied")), "{r:?}");
    }

    #[test]
    fn writes_inside_temp_dir_are_allowed() {
        let p = SandboxProfile::default();
        let r = execute("f = open('scratch.txt', 'w')\nf.write('x')\nf.close()\nans = 'ok'", &p);
        assert_eq!(r.unwrap(), "ok");
    }

    #[test]
    fn custom_result_variable() {
        let p = SandboxProfile { result_variable: "result".into(), ..SandboxProfile::default() };
        assert_eq!(execute("result = 6 * 7", &p).unwrap(), "42");
        let bad = SandboxProfile { result_variable: "1x".into(), ..SandboxProfile::default() };
        assert!(matches!(execute("x = 1", &bad), Err(SandboxError::InvalidProfile(_))));
    }

    #[test]
    fn missing_interpreter_is_unavailable() {
        let p = SandboxProfile { interpreter: vec!["/nonexistent/python".into()], ..SandboxProfile::default() };
        assert!(matches!(execute("ans = 1", &p), Err(SandboxError::Unavailable(_))));
    }

    #[test]
    fn profile_deserializes_with_defaults() {
        let p: SandboxProfile = toml::from_str("interpreter = [\"python3\"]\nwall_timeout = 2.5\n").unwrap();
        assert_eq!(p.wall_timeout, Duration::from_millis(2500));
        assert_eq!(p.result_variable, "ans");
        assert!(toml::from_str::<SandboxProfile>("interpreter = [\"python3\"]\nwall_timeout = 0\n").is_err());
    }
}
