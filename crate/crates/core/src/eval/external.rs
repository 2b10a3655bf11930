//! External evaluator plugin over standard input/output.
//!
//! Request: `{"id":N,"arch":{...}}\n`. Response: `{"id":N,"accuracy":X}\n` or
//! `{"id":N,"error":"msg"}\n`. One JSON object per line, UTF-8. The plugin
//! exits when its standard input closes. Lines with a foreign id are logged
//! and skipped.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use serde_json::Value;

use crate::arch::{canonical_serialize, BlockArch};

use super::{EvalError, Evaluator};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

pub fn format_request(id: u64, arch: &BlockArch) -> String {
    format!("{{\"id\":{},\"arch\":{}}}\n", id, canonical_serialize(arch))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PluginResponse {
    Accuracy { id: u64, accuracy: f64 },
    Error { id: u64, message: String },
}

impl PluginResponse {
    pub fn id(&self) -> u64 {
        match self {
            PluginResponse::Accuracy { id, .. } | PluginResponse::Error { id, .. } => *id,
        }
    }
}

pub fn parse_response(line: &str) -> Result<PluginResponse, EvalError> {
    let protocol = |message: &str| EvalError::Protocol { message: message.to_string(), line: line.to_string() };
    let value: Value = serde_json::from_str(line).map_err(|_| protocol("not a JSON object"))?;
    let obj = value.as_object().ok_or_else(|| protocol("not a JSON object"))?;
    let id = obj.get("id").and_then(Value::as_u64).ok_or_else(|| protocol("missing integer id"))?;
    match (obj.get("accuracy"), obj.get("error")) {
        (Some(acc), None) => {
            let accuracy = acc.as_f64().ok_or_else(|| protocol("accuracy is not a number"))?;
            if !(0.0..=100.0).contains(&accuracy) {
                return Err(protocol("accuracy outside [0, 100]"));
            }
            Ok(PluginResponse::Accuracy { id, accuracy })
        }
        (None, Some(err)) => {
            let message = err.as_str().ok_or_else(|| protocol("error is not a string"))?;
            Ok(PluginResponse::Error { id, message: message.to_string() })
        }
        _ => Err(protocol("expected exactly one of accuracy or error")),
    }
}

struct PluginProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl PluginProcess {
    fn spawn(command: &[String]) -> Result<Self, EvalError> {
        let (program, args) =
            command.split_first().ok_or_else(|| EvalError::Unreachable("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Unreachable(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(PluginProcess { child, stdin, lines })
    }

    fn exit_error(&mut self) -> EvalError {
        // stdout is closed; give the process a moment to report its status.
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) if status.success() => return EvalError::Transport("plugin closed its output".into()),
                Ok(Some(status)) => return EvalError::Transport(format!("plugin exited with {status}")),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => return EvalError::Transport("plugin closed its output".into()),
                Err(e) => return EvalError::Transport(e.to_string()),
            }
        }
    }

    fn request(&mut self, id: u64, arch: &BlockArch, timeout: Duration) -> Result<f64, EvalError> {
        let line = format_request(id, arch);
        let stdin = self.stdin.as_mut().expect("stdin open while process is live");
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(match self.child.try_wait() {
                Ok(Some(_)) => self.exit_error(),
                _ => EvalError::Transport(e.to_string()),
            });
        }
        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(raw)) => {
                    let resp = match parse_response(&raw) {
                        Ok(resp) => resp,
                        Err(err) => {
                            warn!("malformed plugin line: {raw:?}");
                            return Err(err);
                        }
                    };
                    if resp.id() != id {
                        warn!("skipping plugin line for id {} while waiting for {id}: {raw:?}", resp.id());
                        continue;
                    }
                    return match resp {
                        PluginResponse::Accuracy { accuracy, .. } => Ok(accuracy),
                        PluginResponse::Error { message, .. } => Err(EvalError::Rejected(message)),
                    };
                }
                Ok(Err(e)) => return Err(EvalError::Transport(e.to_string())),
                Err(RecvTimeoutError::Timeout) => return Err(EvalError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(self.exit_error()),
            }
        }
    }

    fn is_reusable(err: &EvalError) -> bool {
        matches!(err, EvalError::Rejected(_))
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        // Closing stdin asks the plugin to exit.
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) => thread::sleep(Duration::from_millis(5)),
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of plugin processes, one per concurrent request. A process that times
/// out or breaks the protocol is discarded and replaced on the next request.
pub struct ExternalEvaluator {
    command: Vec<String>,
    timeout: Duration,
    next_id: AtomicU64,
    idle: Mutex<Vec<PluginProcess>>,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        ExternalEvaluator { command, timeout, next_id: AtomicU64::new(1), idle: Mutex::new(Vec::new()) }
    }

    /// Launches one instance up front so that an unusable command surfaces
    /// before a run starts.
    pub fn check(&self) -> Result<(), EvalError> {
        let proc = PluginProcess::spawn(&self.command)?;
        self.idle.lock().expect("pool lock").push(proc);
        Ok(())
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut proc = match pooled {
            Some(p) => p,
            None => PluginProcess::spawn(&self.command)?,
        };
        let result = proc.request(id, arch, self.timeout);
        match &result {
            Ok(_) => self.idle.lock().expect("pool lock").push(proc),
            Err(e) if PluginProcess::is_reusable(e) => self.idle.lock().expect("pool lock").push(proc),
            Err(_) => drop(proc),
        }
        result
    }
}

/// One-shot evaluation: launch the plugin, send a single request, close it.
pub fn external_evaluate(arch: &BlockArch, command: &[String], timeout: Duration) -> Result<f64, EvalError> {
    let mut proc = PluginProcess::spawn(command)?;
    proc.request(1, arch, timeout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{LayerCode, OpKind};

    #[test]
    fn request_line_is_exact() {
        let arch = BlockArch::from_codes([LayerCode::unary(OpKind::DWCONV3, 1)], 24).unwrap();
        assert_eq!(
            format_request(7, &arch),
            "{\"id\":7,\"arch\":{\"layers\":[{\"op\":\"dwconv\",\"k\":3,\"p\":[1,0]}]}}\n"
        );
    }

    #[test]
    fn response_parsing() {
        assert_eq!(
            parse_response(r#"{"id":3,"accuracy":50.0}"#).unwrap(),
            PluginResponse::Accuracy { id: 3, accuracy: 50.0 }
        );
        assert_eq!(
            parse_response(r#"{"id":4,"error":"channel mismatch"}"#).unwrap(),
            PluginResponse::Error { id: 4, message: "channel mismatch".into() }
        );
        for bad in [
            "hello",
            "[1,2]",
            r#"{"accuracy":50}"#,
            r#"{"id":1}"#,
            r#"{"id":1,"accuracy":50,"error":"x"}"#,
            r#"{"id":1,"accuracy":"high"}"#,
            r#"{"id":1,"accuracy":120}"#,
        ] {
            match parse_response(bad) {
                Err(EvalError::Protocol { line, .. }) => assert_eq!(line, bad),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn missing_program_is_unreachable() {
        let arch = BlockArch::from_codes([LayerCode::unary(OpKind::DWCONV3, 1)], 24).unwrap();
        let cmd = vec!["/nonexistent/plugin-binary".to_string()];
        assert!(matches!(external_evaluate(&arch, &cmd, Duration::from_secs(1)), Err(EvalError::Unreachable(_))));
        assert!(matches!(external_evaluate(&arch, &[], Duration::from_secs(1)), Err(EvalError::Unreachable(_))));
    }
}
