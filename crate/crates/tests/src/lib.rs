//! Report plumbing for the acceptance suite in `tests/acceptance.rs`.
//!
//! Run it with `cargo test -p semqg-tests --test acceptance`. Set
//! `ACCEPTANCE_ONLY=3,6` to run a subset of criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<26} {:>7.1}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Criteria picked by `ACCEPTANCE_ONLY`, or all of them.
pub fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        _ => true,
    }
}

/// Runs one criterion; a panic counts as a failure.
pub fn run(id: usize, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    let out = Outcome {
        id,
        name,
        passed,
        detail,
        elapsed: t0.elapsed(),
    };
    println!("{}", out.line());
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
