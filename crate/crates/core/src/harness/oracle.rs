//! Line-delimited JSON protocol for external captioners.
//!
//! The command is run through `sh -c` once per batch. Every request is
//! written as one line, then stdin is closed:
//!
//! ```text
//! -> {"id": "img-3", "image": "/abs/path/img-3.png", "prompt": "Please describe this image in detail."}
//! <- {"id": "img-3", "caption": "A dog lying next to a red car."}
//! ```
//!
//! Responses may come in any order. Each must arrive within the timeout of
//! the previous one. Extra output after the last answer is still checked for
//! repeated ids until the process exits.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::OracleError;

pub const DEFAULT_PROMPT: &str = "Please describe this image in detail.";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub command: String,
    pub timeout: Duration,
    pub prompt: String,
}

impl OracleConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
            prompt: DEFAULT_PROMPT.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRequest {
    pub id: String,
    pub image: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RequestLine {
    pub id: String,
    pub image: String,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResponseLine {
    pub id: String,
    pub caption: String,
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        if let Ok(None) = self.0.try_wait() {
            let _ = self.0.kill();
        }
        let _ = self.0.wait();
    }
}

fn spawn_reader(stdout: std::process::ChildStdout) -> Receiver<(usize, std::io::Result<String>)> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (i, line) in BufReader::new(stdout).lines().enumerate() {
            let stop = line.is_err();
            if tx.send((i + 1, line)).is_err() || stop {
                break;
            }
        }
    });
    rx
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_owned())
}

/// Sends every request to one oracle process and collects captions by id.
pub fn caption_batch(config: &OracleConfig, requests: &[CaptionRequest]) -> Result<HashMap<String, String>, OracleError> {
    let mut pending = BTreeSet::new();
    for r in requests {
        if !pending.insert(r.id.clone()) {
            return Err(OracleError::DuplicateRequest(r.id.clone()));
        }
    }
    let mut answers = HashMap::with_capacity(requests.len());
    if requests.is_empty() {
        return Ok(answers);
    }

    let child = Command::new("sh")
        .arg("-c")
        .arg(&config.command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|source| OracleError::Spawn {
            command: config.command.clone(),
            source,
        })?;
    let mut child = ChildGuard(child);
    let lines = spawn_reader(child.0.stdout.take().expect("piped stdout"));

    {
        let mut stdin = child.0.stdin.take().expect("piped stdin");
        for r in requests {
            let line = RequestLine {
                id: r.id.clone(),
                image: absolute(&r.image).to_string_lossy().into_owned(),
                prompt: Some(config.prompt.clone()),
            };
            let mut text = serde_json::to_string(&line).expect("request serializes");
            text.push('\n');
            // A closed pipe means the oracle quit; the read loop reports it.
            if stdin.write_all(text.as_bytes()).is_err() {
                break;
            }
        }
        let _ = stdin.flush();
    }

    loop {
        let done = pending.is_empty();
        let (line_no, line) = match lines.recv_timeout(config.timeout) {
            Ok(msg) => msg,
            Err(RecvTimeoutError::Disconnected) if done => break,
            Err(RecvTimeoutError::Disconnected) => {
                return Err(OracleError::Exited {
                    pending: pending.into_iter().collect(),
                })
            }
            // Finished answering but never exited; nothing left to check.
            Err(RecvTimeoutError::Timeout) if done => break,
            Err(RecvTimeoutError::Timeout) => {
                return Err(OracleError::Timeout {
                    secs: config.timeout.as_secs_f64(),
                    pending: pending.into_iter().collect(),
                })
            }
        };
        let line = line.map_err(OracleError::Pipe)?;
        if line.trim().is_empty() {
            continue;
        }
        let resp: ResponseLine = serde_json::from_str(&line).map_err(|e| OracleError::MalformedJson {
            line_no,
            line: line.clone(),
            reason: e.to_string(),
        })?;
        if pending.remove(&resp.id) {
            answers.insert(resp.id, resp.caption);
        } else if answers.contains_key(&resp.id) {
            return Err(OracleError::DuplicateId { line_no, line });
        } else {
            return Err(OracleError::UnknownId { line_no, line });
        }
    }
    Ok(answers)
}

/// Captions one image; the id sent is the file stem.
pub fn oracle_caption(config: &OracleConfig, image: &Path) -> Result<String, OracleError> {
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_owned());
    let mut answers = caption_batch(
        config,
        &[CaptionRequest {
            id: id.clone(),
            image: image.to_owned(),
        }],
    )?;
    Ok(answers.remove(&id).expect("batch returns every id"))
}
