//! Bookkeeping for the end-to-end acceptance run in `tests/acceptance.rs`.

use std::io::Write;
use std::time::{Duration, Instant};

/// Outcome of one numbered criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Prints a detail line under the criterion being run.
pub fn note(text: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "    {}", text.as_ref());
    let _ = out.flush();
}

#[derive(Default)]
pub struct Ledger {
    outcomes: Vec<Outcome>,
}

impl Ledger {
    /// Runs `check`, prints its verdict line at once and records it. A check
    /// that returns `Err` counts as a failure with the error as detail.
    pub fn run<F>(&mut self, id: u32, name: &'static str, check: F)
    where
        F: FnOnce() -> Result<(bool, String), String>,
    {
        {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "== criterion {id}: {name}");
            let _ = out.flush();
        }
        let start = Instant::now();
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let o = Outcome { id, name, passed, detail, elapsed: start.elapsed() };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(
            out,
            "criterion {} [{}] {}: {} ({:.1} s)",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        );
        let _ = out.flush();
        self.outcomes.push(o);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// Prints the closing summary, one line per criterion in order.
    pub fn summary(&self) {
        let mut sorted = self.outcomes.clone();
        sorted.sort_by_key(|o| o.id);
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "\nsummary:");
        for o in &sorted {
            let _ = writeln!(out, "  {} criterion {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name);
        }
        let passed = sorted.iter().filter(|o| o.passed).count();
        let _ = writeln!(out, "  {passed}/{} criteria passed", sorted.len());
    }
}
