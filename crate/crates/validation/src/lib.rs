//! Runner for the end-to-end acceptance checks in `tests/acceptance.rs`.
//!
//! Each check is a closure returning a one-line summary on success or a
//! reason on failure; a panic counts as a failure. Every check runs even
//! after an earlier one fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub type Outcome = Result<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: u64,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {} [{}s]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

pub fn run_check(id: usize, title: &'static str, check: impl FnOnce() -> Outcome) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = match catch_unwind(AssertUnwindSafe(check)) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, format!("panic: {msg}"))
        }
    };
    Verdict {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs(),
    }
}

/// `Ok(summary)` when `cond` holds, `Err(summary)` otherwise.
pub fn expect(cond: bool, summary: String) -> Outcome {
    if cond {
        Ok(summary)
    } else {
        Err(summary)
    }
}
