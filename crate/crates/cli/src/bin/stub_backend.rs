//! Reference implementation of the external classifier protocol, used by the
//! integration tests as a stand-in model.
//!
//! Reads one JSON request per line on stdin
//! (`{"id": "...", "shape": [h, w, c], "pixels": [...]}`), answers one JSON
//! response per line on stdout (`{"id": "...", "probs": [...]}` or
//! `{"id": "...", "error": "..."}`).
//!
//! Environment knobs:
//! - `STUB_CLASSES`: how many probabilities to emit (default 3).
//! - `STUB_MODE`: `mean` (default; deterministic softmax over pixel-mean
//!   logits), `uniform`, `first-hot`, or a misbehavior — `echo-error`,
//!   `wrong-id`, `wrong-count`, `bad-json`, `hang`, `crash`.

use std::io::{BufRead, Write};

use serde::Deserialize;

#[derive(Deserialize)]
struct Request {
    id: String,
    #[allow(dead_code)]
    shape: [usize; 3],
    pixels: Vec<f64>,
}

fn probs_for(mode: &str, classes: usize, pixels: &[f64]) -> Vec<f64> {
    match mode {
        "uniform" => vec![1.0 / classes as f64; classes],
        "first-hot" => {
            let mut p = vec![0.0; classes];
            p[0] = 1.0;
            p
        }
        // Default: softmax over logits spread by the pixel mean, so the
        // answer depends deterministically on the image.
        _ => {
            let mean = if pixels.is_empty() {
                0.0
            } else {
                pixels.iter().sum::<f64>() / pixels.len() as f64
            };
            let logits: Vec<f64> = (0..classes).map(|i| mean * (i + 1) as f64).collect();
            let top = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    }
}

fn main() {
    let mode = std::env::var("STUB_MODE").unwrap_or_default();
    let classes: usize = std::env::var("STUB_CLASSES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3);

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line.expect("stdin readable");
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = serde_json::from_str(&line).expect("well-formed request");
        let reply = match mode.as_str() {
            "crash" => std::process::exit(1),
            "hang" => {
                std::thread::sleep(std::time::Duration::from_secs(3600));
                unreachable!()
            }
            "bad-json" => "this is not json".to_string(),
            "echo-error" => format!(
                "{{\"id\":{},\"error\":\"scripted failure\"}}",
                serde_json::to_string(&request.id).unwrap()
            ),
            "wrong-id" => {
                let probs = probs_for("mean", classes, &request.pixels);
                format!(
                    "{{\"id\":{},\"probs\":{}}}",
                    serde_json::to_string(&format!("{}x", request.id)).unwrap(),
                    serde_json::to_string(&probs).unwrap()
                )
            }
            "wrong-count" => {
                let probs = vec![1.0 / (classes + 1) as f64; classes + 1];
                format!(
                    "{{\"id\":{},\"probs\":{}}}",
                    serde_json::to_string(&request.id).unwrap(),
                    serde_json::to_string(&probs).unwrap()
                )
            }
            mode => {
                let probs = probs_for(mode, classes, &request.pixels);
                format!(
                    "{{\"id\":{},\"probs\":{}}}",
                    serde_json::to_string(&request.id).unwrap(),
                    serde_json::to_string(&probs).unwrap()
                )
            }
        };
        writeln!(out, "{reply}").expect("stdout writable");
        out.flush().expect("stdout flushable");
    }
}
