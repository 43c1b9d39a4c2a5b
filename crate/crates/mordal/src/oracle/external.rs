//! External trainer subprocess speaking newline-delimited JSON.
//!
//! Requests go to the child's stdin, responses come back on stdout, one JSON
//! object per line. The handshake `{"id":0,"op":"hello"}` must be answered
//! with `{"id":0,"protocol":1}` before any evaluation. Each evaluation
//! request `{"id":N,"op":"eval","ve":…,"llm":…,"ratio":…}` is answered with
//! `{"id":N,"error":…,"cost":…}`; the trainer's error and cost are passed
//! through verbatim (no checkpoint accounting — the trainer owns its costs).
//!
//! At most one request is outstanding per subprocess; run several oracles for
//! parallelism.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{validate_query, EvalRecord, Oracle, OracleError, Zoo, ERROR_FLOOR};
use crate::clustering::Candidate;

pub const PROTOCOL_VERSION: u64 = 1;

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Deserialize)]
struct HelloResponse {
    id: u64,
    protocol: u64,
}

#[derive(Debug, Deserialize)]
struct EvalResponse {
    id: u64,
    error: f64,
    cost: f64,
}

struct ProcessState {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

pub struct ExternalOracle {
    zoo: Zoo,
    state: Mutex<ProcessState>,
    timeout: Duration,
}

impl ExternalOracle {
    /// Launches `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, zoo: Zoo) -> Result<Self, OracleError> {
        Self::spawn_with_timeout(command, zoo, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with_timeout(
        command: &str,
        zoo: Zoo,
        timeout: Duration,
    ) -> Result<Self, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let oracle = Self {
            zoo,
            state: Mutex::new(ProcessState {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
            timeout,
        };
        oracle.handshake()?;
        Ok(oracle)
    }

    fn handshake(&self) -> Result<(), OracleError> {
        let mut state = self.state.lock().expect("oracle state poisoned");
        let request = json!({"id": 0, "op": "hello"});
        let line = round_trip(&mut state, &request.to_string(), self.timeout)?;
        let resp: HelloResponse =
            serde_json::from_str(&line).map_err(|e| OracleError::Protocol {
                reason: format!("malformed handshake response: {e}"),
                payload: line.clone(),
            })?;
        if resp.id != 0 || resp.protocol != PROTOCOL_VERSION {
            return Err(OracleError::Protocol {
                reason: format!(
                    "handshake must answer id 0 with protocol {PROTOCOL_VERSION}, got id {} protocol {}",
                    resp.id, resp.protocol
                ),
                payload: line,
            });
        }
        Ok(())
    }
}

fn round_trip(
    state: &mut ProcessState,
    request: &str,
    timeout: Duration,
) -> Result<String, OracleError> {
    if let Some(status) = state.child.try_wait()? {
        return Err(OracleError::Protocol {
            reason: format!("oracle subprocess exited with {status}"),
            payload: String::new(),
        });
    }
    writeln!(state.stdin, "{request}")?;
    state.stdin.flush()?;
    match state.lines.recv_timeout(timeout) {
        Ok(Ok(line)) => Ok(line),
        Ok(Err(e)) => Err(OracleError::Io(e)),
        Err(RecvTimeoutError::Timeout) => Err(OracleError::Timeout {
            seconds: timeout.as_secs_f64(),
        }),
        Err(RecvTimeoutError::Disconnected) => {
            let status = state.child.wait()?;
            Err(OracleError::Protocol {
                reason: format!("oracle subprocess closed its stdout (exit {status})"),
                payload: String::new(),
            })
        }
    }
}

impl Oracle for ExternalOracle {
    fn zoo(&self) -> &Zoo {
        &self.zoo
    }

    fn query(&self, candidate: &Candidate, ratio: f64) -> Result<EvalRecord, OracleError> {
        validate_query(&self.zoo, candidate, ratio)?;
        let mut state = self.state.lock().expect("oracle state poisoned");
        state.next_id += 1;
        let id = state.next_id;
        let request = json!({
            "id": id,
            "op": "eval",
            "ve": candidate.ve,
            "llm": candidate.llm,
            "ratio": ratio,
        });
        let line = round_trip(&mut state, &request.to_string(), self.timeout)?;
        let resp: EvalResponse = serde_json::from_str(&line).map_err(|e| OracleError::Protocol {
            reason: format!("malformed eval response: {e}"),
            payload: line.clone(),
        })?;
        if resp.id != id {
            return Err(OracleError::Protocol {
                reason: format!("response id {} does not match request id {id}", resp.id),
                payload: line,
            });
        }
        if !(resp.error > 0.0 && resp.error <= 1.0) || !resp.error.is_finite() {
            return Err(OracleError::Protocol {
                reason: format!("error {} outside (0, 1]", resp.error),
                payload: line,
            });
        }
        if !resp.cost.is_finite() || resp.cost < 0.0 {
            return Err(OracleError::Protocol {
                reason: format!("cost {} must be finite and non-negative", resp.cost),
                payload: line,
            });
        }
        Ok(EvalRecord {
            candidate: candidate.clone(),
            ratio,
            error: resp.error.max(ERROR_FLOOR),
            cost: resp.cost,
        })
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(mut state) = self.state.lock() {
            let _ = state.child.kill();
            let _ = state.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zoo() -> Zoo {
        Zoo::new(vec!["v".into()], vec!["l".into()]).unwrap()
    }

    /// Echo trainer: error fixed at 0.5, cost equal to the requested ratio.
    const ECHO_TRAINER: &str = r#"python3 -c '
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "hello":
        print(json.dumps({"id": req["id"], "protocol": 1}), flush=True)
    else:
        print(json.dumps({"id": req["id"], "error": 0.5, "cost": req["ratio"]}), flush=True)
'"#;

    #[test]
    fn echo_trainer_round_trip() {
        let oracle = ExternalOracle::spawn_with_timeout(ECHO_TRAINER, zoo(), Duration::from_secs(20))
            .unwrap();
        let rec = oracle.query(&Candidate::new("v", "l"), 0.25).unwrap();
        assert_eq!(rec.error, 0.5);
        assert_eq!(rec.cost, 0.25);
        let rec = oracle.query(&Candidate::new("v", "l"), 0.5).unwrap();
        assert_eq!(rec.cost, 0.5);
    }

    #[test]
    fn nonpositive_error_is_a_protocol_error() {
        let bad = r#"python3 -c '
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "hello":
        print(json.dumps({"id": req["id"], "protocol": 1}), flush=True)
    else:
        print(json.dumps({"id": req["id"], "error": -0.1, "cost": 0.0}), flush=True)
'"#;
        let oracle =
            ExternalOracle::spawn_with_timeout(bad, zoo(), Duration::from_secs(20)).unwrap();
        let err = oracle.query(&Candidate::new("v", "l"), 0.25).unwrap_err();
        assert!(matches!(err, OracleError::Protocol { .. }), "got {err:?}");
    }

    #[test]
    fn mismatched_id_is_a_protocol_error() {
        let bad = r#"python3 -c '
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "hello":
        print(json.dumps({"id": req["id"], "protocol": 1}), flush=True)
    else:
        print(json.dumps({"id": 999, "error": 0.5, "cost": 0.1}), flush=True)
'"#;
        let oracle =
            ExternalOracle::spawn_with_timeout(bad, zoo(), Duration::from_secs(20)).unwrap();
        let err = oracle.query(&Candidate::new("v", "l"), 0.25).unwrap_err();
        assert!(matches!(err, OracleError::Protocol { .. }), "got {err:?}");
    }

    #[test]
    fn bad_handshake_fails_spawn() {
        let bad = r#"python3 -c '
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "protocol": 99}), flush=True)
'"#;
        let err = ExternalOracle::spawn_with_timeout(bad, zoo(), Duration::from_secs(20))
            .err()
            .expect("bad handshake must fail");
        assert!(matches!(err, OracleError::Protocol { .. }), "got {err:?}");
    }
}
