//! Subprocess execution with wall-clock timeouts, command templates, and a
//! small bounded worker pool used by the generation/sim/synth stages.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct ProcOutput {
    /// Exit code; `None` when the process was killed (timeout) or died to a
    /// signal.
    pub status: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub duration: Duration,
}

impl ProcOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.status == Some(0)
    }

    pub fn combined(&self) -> String {
        let mut out = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&self.stderr);
        }
        out
    }
}

/// Expands a whitespace-tokenized command template. A token that is exactly
/// a `{placeholder}` expands to all of its values (so `{sources}` can become
/// several argv entries); placeholders embedded in larger tokens substitute
/// their single joined value. No shell is involved, so paths never need
/// quoting.
pub fn build_argv(template: &str, subs: &[(&str, Vec<String>)]) -> Vec<String> {
    let mut argv = Vec::new();
    for token in template.split_whitespace() {
        let mut expanded = false;
        for (name, values) in subs {
            let pat = format!("{{{name}}}");
            if token == pat {
                argv.extend(values.iter().cloned());
                expanded = true;
                break;
            }
        }
        if !expanded {
            let mut tok = token.to_string();
            for (name, values) in subs {
                let pat = format!("{{{name}}}");
                if tok.contains(&pat) {
                    tok = tok.replace(&pat, &values.join(" "));
                }
            }
            argv.push(tok);
        }
    }
    argv
}

/// Renders a multi-line script template by straight placeholder replacement.
pub fn render_script(template: &str, subs: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in subs {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Runs `argv` in `cwd`, capturing output, killing the process once
/// `timeout` elapses. An empty argv or spawn failure surfaces as
/// `io::Error` (callers map NotFound to their tool-missing error).
pub fn run_with_timeout(
    argv: &[String],
    cwd: &Path,
    timeout: Duration,
) -> std::io::Result<ProcOutput> {
    if argv.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "empty command",
        ));
    }
    let start = Instant::now();
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;

    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            timed_out = true;
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(10));
    };

    let stdout = String::from_utf8_lossy(&out_thread.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_thread.join().unwrap_or_default()).into_owned();
    Ok(ProcOutput {
        status: status.and_then(|s| s.code()),
        stdout,
        stderr,
        timed_out,
        duration: start.elapsed(),
    })
}

/// Maps `f` over `items` on up to `jobs` worker threads, preserving input
/// order in the result. `jobs <= 1` degrades to a plain sequential loop.
pub fn parallel_map<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let mut out: Vec<Option<R>> = Vec::new();
    parallel_for_each(jobs, items, &f, |idx, r| {
        if out.len() <= idx {
            out.resize_with(idx + 1, || None);
        }
        out[idx] = Some(r);
    });
    out.into_iter().map(|r| r.expect("worker produced result")).collect()
}

/// Like [`parallel_map`] but feeds results to `sink` on the calling thread
/// as they complete (completion order, not input order), which lets callers
/// persist progress incrementally. `sink` receives the item's input index.
pub fn parallel_for_each<T, R, F, S>(jobs: usize, items: Vec<T>, f: &F, mut sink: S)
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
    S: FnMut(usize, R),
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        for (idx, item) in items.into_iter().enumerate() {
            sink(idx, f(item));
        }
        return;
    }
    let queue: Mutex<Vec<(usize, T)>> =
        Mutex::new(items.into_iter().enumerate().rev().collect());
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue poisoned").pop();
                match next {
                    Some((idx, item)) => {
                        if tx.send((idx, f(item))).is_err() {
                            break;
                        }
                    }
                    None => break,
                }
            });
        }
        drop(tx);
        for (idx, r) in rx {
            sink(idx, r);
        }
    });
}
