use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Environment variable holding a comma-separated list of criteria to run.
/// Unset or empty runs all of them.
pub const SELECT_VAR: &str = "FRAGTO_ACCEPTANCE";

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
}

/// Runs criteria, prints one line per criterion and remembers failures.
#[derive(Debug, Default)]
pub struct Suite {
    selected: Option<Vec<u32>>,
    failed: Vec<u32>,
    ran: usize,
}

impl Suite {
    pub fn from_env() -> Self {
        let selected = std::env::var(SELECT_VAR)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
        Self {
            selected,
            ..Self::default()
        }
    }

    pub fn wants(&self, id: u32) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&id))
    }

    /// Runs criterion `id` if selected. Exceeding `budget` fails it, and so
    /// does a panic inside `check`.
    pub fn run(&mut self, id: u32, title: &str, budget: Duration, check: impl FnOnce() -> Verdict) {
        if !self.wants(id) {
            return;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = verdict.pass && in_time;
        println!(
            "criterion {id:>2} {} {title}: {}; {:.1} s of {} s budget{}",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " (over budget)" }
        );
        self.ran += 1;
        if !pass {
            self.failed.push(id);
        }
    }

    pub fn failed(&self) -> &[u32] {
        &self.failed
    }

    /// Prints the summary line and returns the process exit code.
    pub fn finish(&self) -> i32 {
        println!(
            "acceptance: {} of {} criteria passed{}",
            self.ran - self.failed.len(),
            self.ran,
            if self.failed.is_empty() {
                String::new()
            } else {
                format!(", failed {:?}", self.failed)
            }
        );
        i32::from(!self.failed.is_empty())
    }
}
