//! Code-cell executors for the notebook component.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
    Timeout,
}

/// A recorded notebook cell. Never rewritten once appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotebookCell {
    pub code: String,
    pub output: String,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellOutcome {
    pub stdout: String,
    pub stderr: String,
    pub status: CellStatus,
    pub duration: Duration,
}

impl CellOutcome {
    fn instant(stdout: &str, status: CellStatus) -> Self {
        Self {
            stdout: stdout.to_string(),
            stderr: String::new(),
            status,
            duration: Duration::ZERO,
        }
    }

    /// Stdout followed by stderr, as shown in the notebook.
    pub fn combined(&self) -> String {
        match (self.stdout.is_empty(), self.stderr.is_empty()) {
            (_, true) => self.stdout.clone(),
            (true, false) => self.stderr.clone(),
            (false, false) => format!("{}\n{}", self.stdout.trim_end(), self.stderr),
        }
    }
}

pub struct ExecRequest<'a> {
    pub code: &'a str,
    /// Cells already in the notebook, oldest first.
    pub history: &'a [NotebookCell],
    /// `(file name, contents)` placed in the working directory.
    pub files: &'a [(String, String)],
}

pub trait CellExecutor: Send + Sync {
    fn execute(&self, req: &ExecRequest<'_>) -> Result<CellOutcome, EnvError>;
}

/// Canned outputs keyed by exact code text.
#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    outputs: BTreeMap<String, String>,
}

impl MockExecutor {
    pub fn new(outputs: BTreeMap<String, String>) -> Self {
        Self { outputs }
    }

    pub fn with(mut self, code: &str, output: &str) -> Self {
        self.outputs.insert(code.to_string(), output.to_string());
        self
    }
}

impl CellExecutor for MockExecutor {
    fn execute(&self, req: &ExecRequest<'_>) -> Result<CellOutcome, EnvError> {
        Ok(match self.outputs.get(req.code) {
            Some(out) => CellOutcome::instant(out, CellStatus::Ok),
            None => CellOutcome {
                stderr: "NameError: no recorded output for this cell".into(),
                ..CellOutcome::instant("", CellStatus::Error)
            },
        })
    }
}

/// Re-serves cells from a recorded notebook, matched by position and code.
#[derive(Debug, Default)]
pub struct ReplayExecutor {
    cells: Mutex<BTreeMap<(usize, String), NotebookCell>>,
}

impl ReplayExecutor {
    pub fn from_cells(cells: &[NotebookCell]) -> Self {
        let map = cells
            .iter()
            .enumerate()
            .map(|(i, c)| ((i, c.code.clone()), c.clone()))
            .collect();
        Self {
            cells: Mutex::new(map),
        }
    }
}

impl CellExecutor for ReplayExecutor {
    fn execute(&self, req: &ExecRequest<'_>) -> Result<CellOutcome, EnvError> {
        let cells = self.cells.lock().expect("replay lock");
        let cell = cells
            .get(&(req.history.len(), req.code.to_string()))
            .ok_or_else(|| {
                EnvError::ExecutorUnavailable(format!(
                    "no recorded cell {} with this code",
                    req.history.len()
                ))
            })?;
        Ok(CellOutcome::instant(&cell.output, cell.status))
    }
}

const DRIVER: &str = r#"
import ast, contextlib, io, json, sys, traceback
req = json.load(sys.stdin)
g = {"__name__": "__main__"}
for src in req["history"]:
    try:
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            exec(compile(src, "<history>", "exec"), g)
    except BaseException:
        pass
try:
    tree = ast.parse(req["code"], "<cell>", "exec")
    last = None
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        last = ast.Expression(tree.body.pop().value)
    exec(compile(tree, "<cell>", "exec"), g)
    if last is not None:
        value = eval(compile(last, "<cell>", "eval"), g)
        if value is not None:
            print(repr(value))
except BaseException:
    traceback.print_exc(limit=-1)
    sys.exit(1)
"#;

/// Runs each cell in a fresh `python3` process inside a scratch directory.
/// Earlier successful cells are re-executed silently first so variables
/// carry over between cells.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    pub interpreter: PathBuf,
    pub timeout: Duration,
    pub cpu_seconds: u64,
    pub max_file_bytes: u64,
    pub max_output_bytes: usize,
}

impl Default for SubprocessExecutor {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            timeout: Duration::from_secs(5),
            cpu_seconds: 10,
            max_file_bytes: 16 << 20,
            max_output_bytes: 16 << 10,
        }
    }
}

impl SubprocessExecutor {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Fails with `ExecutorUnavailable` when the interpreter cannot start.
    pub fn probe(&self) -> Result<(), EnvError> {
        Command::new(&self.interpreter)
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| EnvError::ExecutorUnavailable(format!("{}: {e}", self.interpreter.display())))
            .and_then(|s| {
                if s.success() {
                    Ok(())
                } else {
                    Err(EnvError::ExecutorUnavailable(format!("{} exited with {s}", self.interpreter.display())))
                }
            })
    }

    fn truncate(&self, mut s: String) -> String {
        if s.len() > self.max_output_bytes {
            let mut cut = self.max_output_bytes;
            while !s.is_char_boundary(cut) {
                cut -= 1;
            }
            s.truncate(cut);
            s.push_str("\n[output truncated]");
        }
        s
    }
}

fn read_all(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl CellExecutor for SubprocessExecutor {
    fn execute(&self, req: &ExecRequest<'_>) -> Result<CellOutcome, EnvError> {
        let unavailable = |e: std::io::Error| EnvError::ExecutorUnavailable(e.to_string());
        let dir = tempfile::tempdir().map_err(unavailable)?;
        for (name, contents) in req.files {
            let file_name = std::path::Path::new(name)
                .file_name()
                .ok_or_else(|| EnvError::InvalidSpec(format!("bad data file name {name}")))?;
            std::fs::write(dir.path().join(file_name), contents).map_err(unavailable)?;
        }
        let history: Vec<&str> = req
            .history
            .iter()
            .filter(|c| c.status == CellStatus::Ok)
            .map(|c| c.code.as_str())
            .collect();
        let input = serde_json::json!({ "history": history, "code": req.code }).to_string();

        let cpu = self.cpu_seconds;
        let fsize = self.max_file_bytes;
        let mut cmd = Command::new(&self.interpreter);
        cmd.arg("-c")
            .arg(DRIVER)
            .current_dir(dir.path())
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", dir.path())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("MPLBACKEND", "Agg")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // SAFETY: only async-signal-safe libc calls run between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let cpu_limit = libc::rlimit {
                    rlim_cur: cpu,
                    rlim_max: cpu,
                };
                let file_limit = libc::rlimit {
                    rlim_cur: fsize,
                    rlim_max: fsize,
                };
                libc::setrlimit(libc::RLIMIT_CPU, &cpu_limit);
                libc::setrlimit(libc::RLIMIT_FSIZE, &file_limit);
                Ok(())
            });
        }
        let start = Instant::now();
        let mut child = cmd.spawn().map_err(unavailable)?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = read_all(child.stdout.take().expect("piped stdout"));
        let stderr = read_all(child.stderr.take().expect("piped stderr"));
        let _ = stdin.write_all(input.as_bytes());
        drop(stdin);

        let status = loop {
            match child.try_wait().map_err(unavailable)? {
                Some(s) => break Some(s),
                None if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        };
        let stdout = self.truncate(stdout.join().unwrap_or_default());
        let mut stderr = self.truncate(stderr.join().unwrap_or_default());
        let status = match status {
            None => {
                stderr.push_str(&format!("TimeoutError: cell exceeded {:?}", self.timeout));
                CellStatus::Timeout
            }
            Some(s) if s.success() => CellStatus::Ok,
            Some(_) => CellStatus::Error,
        };
        Ok(CellOutcome {
            stdout,
            stderr,
            status,
            duration: start.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ex: &dyn CellExecutor, code: &str, history: &[NotebookCell]) -> CellOutcome {
        ex.execute(&ExecRequest {
            code,
            history,
            files: &[],
        })
        .unwrap()
    }

    #[test]
    fn mock_returns_canned_output() {
        let ex = MockExecutor::default().with("1+1", "2");
        let out = run(&ex, "1+1", &[]);
        assert_eq!((out.stdout.as_str(), out.status), ("2", CellStatus::Ok));
        assert_eq!(run(&ex, "2+2", &[]).status, CellStatus::Error);
    }

    #[test]
    fn replay_matches_position_and_code() {
        let cells = vec![NotebookCell {
            code: "x = 1".into(),
            output: String::new(),
            status: CellStatus::Ok,
        }];
        let ex = ReplayExecutor::from_cells(&cells);
        assert_eq!(run(&ex, "x = 1", &[]).status, CellStatus::Ok);
        let err = ex.execute(&ExecRequest {
            code: "x = 1",
            history: &cells,
            files: &[],
        });
        assert!(matches!(err, Err(EnvError::ExecutorUnavailable(_))));
    }

    fn python() -> Option<SubprocessExecutor> {
        let ex = SubprocessExecutor::default();
        ex.probe().ok().map(|_| ex)
    }

    #[test]
    fn subprocess_echoes_last_expression_and_keeps_state() {
        let Some(ex) = python() else { return };
        let first = run(&ex, "x = 20\nx + 1", &[]);
        assert_eq!(first.stdout.trim(), "21");
        let history = vec![NotebookCell {
            code: "x = 20".into(),
            output: String::new(),
            status: CellStatus::Ok,
        }];
        assert_eq!(run(&ex, "print(x * 2)", &history).stdout.trim(), "40");
    }

    #[test]
    fn subprocess_reports_errors_and_timeouts() {
        let Some(ex) = python() else { return };
        let err = run(&ex, "1/0", &[]);
        assert_eq!(err.status, CellStatus::Error);
        assert!(err.stderr.contains("ZeroDivisionError"));

        let ex = ex.with_timeout(Duration::from_millis(500));
        let slow = run(&ex, "while True:\n    pass", &[]);
        assert_eq!(slow.status, CellStatus::Timeout);
        assert!(slow.duration < Duration::from_secs(3));
    }

    #[test]
    fn subprocess_sees_data_files() {
        let Some(ex) = python() else { return };
        let files = vec![("d.csv".to_string(), "a,b\n1,2\n".to_string())];
        let out = ex
            .execute(&ExecRequest {
                code: "open('d.csv').read().splitlines()[1]",
                history: &[],
                files: &files,
            })
            .unwrap();
        assert_eq!(out.stdout.trim(), "'1,2'");
    }
}
