//! Minimal runner for acceptance criteria: each criterion prints one
//! `PASS`, `FAIL` or `SKIP` line as soon as it finishes.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

/// Result of one criterion body: whether it holds and what was measured.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    /// Conjunction of several named checks, each rendered as `name=ok|no`.
    pub fn all(checks: Vec<(String, bool)>, extra: impl Into<String>) -> Self {
        let pass = checks.iter().all(|c| c.1);
        let mut detail: Vec<String> = checks
            .iter()
            .map(|(n, ok)| format!("{n}={}", if *ok { "ok" } else { "no" }))
            .collect();
        let extra = extra.into();
        if !extra.is_empty() {
            detail.push(extra);
        }
        Self::new(pass, detail.join("; "))
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
    only: Option<String>,
}

impl Report {
    /// `only` restricts the run to criteria whose name starts with it.
    pub fn new(only: Option<String>) -> Self {
        Self {
            outcomes: Vec::new(),
            only,
        }
    }

    /// Runs one criterion. Errors and panics count as failures; an optional
    /// wall-clock limit is part of the criterion.
    pub fn run<F>(&mut self, name: &'static str, limit: Option<Duration>, body: F)
    where
        F: FnOnce() -> Result<Verdict, String>,
    {
        if self.only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            return;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(body));
        let elapsed = start.elapsed();
        let (mut status, mut detail) = match result {
            Ok(Ok(v)) => (if v.pass { Status::Pass } else { Status::Fail }, v.detail),
            Ok(Err(e)) => (Status::Fail, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (Status::Fail, format!("panic: {msg}"))
            }
        };
        if let Some(limit) = limit {
            if elapsed > limit && status == Status::Pass {
                status = Status::Fail;
                detail.push_str(&format!("; over the {:.0} s limit", limit.as_secs_f64()));
            }
        }
        self.record(Outcome {
            name,
            status,
            detail,
            elapsed,
        });
    }

    pub fn skip(&mut self, name: &'static str, reason: &str) {
        if self.only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            return;
        }
        self.record(Outcome {
            name,
            status: Status::Skip,
            detail: reason.to_string(),
            elapsed: Duration::ZERO,
        });
    }

    fn record(&mut self, o: Outcome) {
        println!(
            "{} {} ({:.1} s): {}",
            o.status,
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
        self.outcomes.push(o);
    }

    pub fn count(&self, status: Status) -> usize {
        self.outcomes.iter().filter(|o| o.status == status).count()
    }

    pub fn summary(&self) -> String {
        format!(
            "acceptance: {} passed, {} failed, {} skipped",
            self.count(Status::Pass),
            self.count(Status::Fail),
            self.count(Status::Skip)
        )
    }
}
