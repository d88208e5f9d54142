//! External classifier processes speaking line-delimited JSON.
//!
//! The child is spawned once and kept alive. Each request is one line on its
//! stdin:
//!
//! ```json
//! {"id": "digits/test/0", "shape": [8, 8, 1], "pixels": [0.0, 0.51, ...]}
//! ```
//!
//! and each answer one line on its stdout, in request order:
//!
//! ```json
//! {"id": "digits/test/0", "probs": [0.01, 0.9, ...]}
//! {"id": "digits/test/1", "error": "could not classify"}
//! ```
//!
//! Pixels are row-major with channels interleaved, values in `[0, 1]`.
//! A shared deadline covers each batch; on timeout, crash, or out-of-order
//! ids the batch fails with a named error. The handle serializes access, so
//! it is safe to share across threads (calls just queue).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::ImageTensor;

use super::ClassifierError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// How to launch and interpret an external classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSpec {
    /// Executable and arguments, e.g. `["python3", "serve_model.py"]`.
    pub command: Vec<String>,
    pub class_count: usize,
    /// Deadline for answering one batch of requests.
    pub timeout: Duration,
}

impl ExternalSpec {
    pub fn new(command: Vec<String>, class_count: usize) -> Self {
        Self {
            command,
            class_count,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: &'a str,
    shape: [usize; 3],
    pixels: &'a [f64],
}

#[derive(Deserialize)]
struct WireResponse {
    id: String,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug)]
struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

#[derive(Debug)]
pub struct ExternalProcessClassifier {
    class_count: usize,
    timeout: Duration,
    io: Mutex<ChildIo>,
}

impl ExternalProcessClassifier {
    pub fn spawn(spec: ExternalSpec) -> Result<Self, ClassifierError> {
        let Some((program, args)) = spec.command.split_first() else {
            return Err(ClassifierError::Spawn {
                command: String::new(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
            });
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ClassifierError::Spawn {
                command: spec.command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");

        // A detached reader decouples child output from deadlines: the main
        // thread waits on the channel with a timeout instead of blocking on a
        // pipe that may never deliver.
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });

        Ok(Self {
            class_count: spec.class_count,
            timeout: spec.timeout,
            io: Mutex::new(ChildIo {
                child,
                stdin,
                lines: rx,
            }),
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn predict_raw(
        &self,
        sample_id: &str,
        image: &ImageTensor,
    ) -> Result<Vec<f64>, ClassifierError> {
        let mut out = self.predict_batch_raw(&[(sample_id, image)])?;
        Ok(out.pop().expect("one response per request"))
    }

    /// Send all requests, then collect all responses in order under one
    /// deadline.
    pub fn predict_batch_raw(
        &self,
        items: &[(&str, &ImageTensor)],
    ) -> Result<Vec<Vec<f64>>, ClassifierError> {
        let mut io = self.io.lock().unwrap_or_else(|poison| poison.into_inner());
        let deadline = Instant::now() + self.timeout;

        for (id, image) in items {
            let (height, width, channels) = image.shape();
            let request = WireRequest {
                id,
                shape: [height, width, channels],
                pixels: image.pixels(),
            };
            let mut line = serde_json::to_string(&request)
                .map_err(|e| ClassifierError::ProcessIo(e.to_string()))?;
            line.push('\n');
            io.stdin
                .write_all(line.as_bytes())
                .map_err(|e| ClassifierError::ProcessIo(e.to_string()))?;
        }
        io.stdin
            .flush()
            .map_err(|e| ClassifierError::ProcessIo(e.to_string()))?;

        let mut results = Vec::with_capacity(items.len());
        for (id, _) in items {
            let remaining = deadline
                .checked_duration_since(Instant::now())
                .ok_or(ClassifierError::Timeout(self.timeout))?;
            let line = match io.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ClassifierError::ProcessIo(e.to_string())),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ClassifierError::Timeout(self.timeout))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(ClassifierError::ProcessClosed),
            };
            let response: WireResponse =
                serde_json::from_str(&line).map_err(|e| ClassifierError::BadResponse {
                    line: snippet(&line),
                    message: e.to_string(),
                })?;
            if response.id != *id {
                return Err(ClassifierError::IdMismatch {
                    want: (*id).to_string(),
                    got: response.id,
                });
            }
            if let Some(message) = response.error {
                return Err(ClassifierError::Remote {
                    id: (*id).to_string(),
                    message,
                });
            }
            let probs = response.probs.ok_or_else(|| ClassifierError::BadResponse {
                line: snippet(&line),
                message: "response carries neither `probs` nor `error`".to_string(),
            })?;
            results.push(probs);
        }
        Ok(results)
    }
}

impl Drop for ExternalProcessClassifier {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

fn snippet(line: &str) -> String {
    const LIMIT: usize = 200;
    if line.len() <= LIMIT {
        line.trim_end().to_string()
    } else {
        let mut end = LIMIT;
        while !line.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &line[..end])
    }
}
