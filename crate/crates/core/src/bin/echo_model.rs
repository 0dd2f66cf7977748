//! Reference model process for the line protocol.
//!
//! Usage: `echo_model [labels]`. Every label gets the class
//! `round(first feature) mod 2`.

use std::io::{self, BufRead, Write};

fn class_of(line: &str) -> Option<i64> {
    let first = line.split(',').next()?.trim();
    let v: f64 = first.parse().ok()?;
    Some((v.round() as i64).rem_euclid(2))
}

fn main() {
    let labels: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let reply = if line == "INIT" {
            format!("READY {labels}")
        } else if line == "SHUTDOWN" {
            break;
        } else if let Some(values) = line.strip_prefix("PREDICT ") {
            match class_of(values) {
                Some(c) => format!("CLASS {}", vec![c.to_string(); labels].join(",")),
                None => "ERROR".to_string(),
            }
        } else {
            "ERROR".to_string()
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}
