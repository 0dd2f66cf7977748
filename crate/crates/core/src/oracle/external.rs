//! Child-process model speaking the line protocol
//!
//! ```text
//! harness → model:  INIT
//! model  → harness: READY <m>
//! harness → model:  PREDICT v1,v2,...,vn
//! model  → harness: CLASS c1,c2,...,cm
//! harness → model:  SHUTDOWN
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::OracleError;
use crate::rational::format_decimal;
use crate::schema::{Instance, Prediction};

/// Fractional digits sent for each feature value.
pub const WIRE_DIGITS: usize = 9;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug)]
pub struct ExternalModel {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    labels: usize,
}

pub fn encode_request(x: &Instance) -> String {
    let values: Vec<String> = x.0.iter().map(|v| format_decimal(v, WIRE_DIGITS)).collect();
    format!("PREDICT {}", values.join(","))
}

/// Parses a `CLASS` reply; anything else is a protocol violation.
pub fn decode_reply(line: &str, labels: usize) -> Option<Prediction> {
    let body = line.strip_prefix("CLASS ")?;
    let classes = body.split(',').map(|c| c.parse::<i64>().ok()).collect::<Option<Vec<_>>>()?;
    (classes.len() == labels).then_some(Prediction(classes))
}

impl ExternalModel {
    /// Starts `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, labels: usize, timeout: Duration) -> Result<Self, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::Spawn { command: command.to_string(), message: e.to_string() })?;
        let stdout = child.stdout.take().ok_or_else(|| OracleError::Spawn {
            command: command.to_string(),
            message: "no stdout handle".into(),
        })?;
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut model = Self { command: command.to_string(), child, stdin, lines: rx, timeout, labels };
        let reply = model.exchange("INIT")?;
        let announced = reply
            .strip_prefix("READY ")
            .and_then(|m| m.trim().parse::<usize>().ok())
            .ok_or_else(|| OracleError::Handshake { command: command.to_string(), reply: reply.clone() })?;
        if announced != labels {
            return Err(OracleError::LabelCountMismatch { expected: labels, found: announced });
        }
        Ok(model)
    }

    fn exchange(&mut self, request: &str) -> Result<String, OracleError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| OracleError::ProcessDied { request: request.to_string() })?;
        writeln!(stdin, "{request}")
            .and_then(|_| stdin.flush())
            .map_err(|_| OracleError::ProcessDied { request: request.to_string() })?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line.trim_end_matches('\r').to_string()),
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => {
                Err(OracleError::ProcessDied { request: request.to_string() })
            }
            Err(RecvTimeoutError::Timeout) => Err(OracleError::Timeout {
                request: request.to_string(),
                timeout_ms: self.timeout.as_millis() as u64,
            }),
        }
    }

    pub fn predict(&mut self, x: &Instance) -> Result<Prediction, OracleError> {
        let request = encode_request(x);
        let reply = self.exchange(&request)?;
        decode_reply(&reply, self.labels).ok_or(OracleError::Protocol { request, reply })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = writeln!(stdin, "SHUTDOWN");
            let _ = stdin.flush();
        }
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    #[test]
    fn requests_use_bounded_decimals() {
        let x = Instance(vec![int(3), ratio(-1, 4), ratio(1, 3)]);
        assert_eq!(encode_request(&x), "PREDICT 3,-0.25,0.333333333");
    }

    #[test]
    fn replies_must_be_well_formed() {
        assert_eq!(decode_reply("CLASS 1,0", 2), Some(Prediction(vec![1, 0])));
        assert_eq!(decode_reply("CLASS 1", 2), None);
        assert_eq!(decode_reply("CLASS 1,x", 2), None);
        assert_eq!(decode_reply("class 1", 1), None);
        assert_eq!(decode_reply("CLASS  1", 1), None);
        assert_eq!(decode_reply("READY 1", 1), None);
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_lines_never_misread(line in ".*") {
            if let Some(z) = decode_reply(&line, 2) {
                let canonical = format!("CLASS {},{}", z.0[0], z.0[1]);
                // Only lines that denote exactly these codes decode.
                let reparsed = decode_reply(&canonical, 2);
                proptest::prop_assert_eq!(reparsed, Some(z));
                proptest::prop_assert!(line.starts_with("CLASS "));
            }
        }
    }
}
