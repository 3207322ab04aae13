//! Acceptance checks, one function per criterion. Each returns an
//! [`Outcome`] carrying the verdict and the numbers behind it; the
//! `acceptance` test target prints them and asserts the verdicts.

pub mod growth;
pub mod recovery;
pub mod samplers;
pub mod tooling;

use std::fmt::Write as _;
use std::time::Instant;

/// Verdict for one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub criterion: u32,
    pub title: &'static str,
    pub pass: bool,
    /// One-line summary shown next to the verdict.
    pub summary: String,
    /// Supporting measurements, one per line.
    pub details: Vec<String>,
}

impl Outcome {
    fn new(criterion: u32, title: &'static str) -> Self {
        Self { criterion, title, pass: true, summary: String::new(), details: Vec::new() }
    }

    /// Record a sub-check; the outcome passes only if every sub-check does.
    fn check(&mut self, ok: bool, detail: String) {
        self.pass &= ok;
        self.details.push(format!("[{}] {detail}", if ok { "ok" } else { "FAIL" }));
    }

    fn note(&mut self, detail: String) {
        self.details.push(format!("[info] {detail}"));
    }

    /// Verdict line followed by indented details.
    pub fn report(&self) -> String {
        let mut out = format!(
            "{} criterion {}: {} ({})\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.criterion,
            self.title,
            self.summary
        );
        for d in &self.details {
            let _ = writeln!(out, "    {d}");
        }
        out
    }
}

/// Wall-clock seconds taken by `f`.
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}
