//! Acceptance run: every criterion once, one PASS/FAIL line each.
//!
//! Thresholds are the pinned defaults (`Thresholds::default()`), not the
//! environment override. Criteria listed in `EXPECTED_FAILURES` are still
//! evaluated and printed as FAIL, but do not fail the process.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coalescing_walks::suites::{run_suite, Suite, SuiteConfig, SuiteReport};

/// Criteria that cannot be met as stated, with the reason.
const EXPECTED_FAILURES: &[(u32, &str)] = &[(
    9,
    "at 1000 replicas the standard error (~0.02) exceeds every |mean|, so the ordering across N is noise",
)];

/// Wall-clock budget per criterion, in seconds.
const BUDGETS: &[(u32, u64)] = &[
    (1, 10),
    (2, 1),
    (3, 120),
    (4, 300),
    (5, 300),
    (6, 1200),
    (9, 900),
    (10, 60),
];

const TITLES: [&str; 12] = [
    "occupation identity on random reversible chains",
    "generator algebra at 0 and 1/n",
    "neighbour-weighted pair sum trend",
    "exponential law of tau_{n-1}/theta",
    "mean hitting scale 1/lambda(n)",
    "Kingman limit of the full coalescence time",
    "theta_N asymptote and escape estimate",
    "adjacent pair survival trend",
    "replacement statistic",
    "martingale residuals",
    "particle-count decay",
    "determinism from manifest",
];

fn main() -> ExitCode {
    let config = SuiteConfig::default();
    let mut results: BTreeMap<u32, (bool, String)> = BTreeMap::new();
    let mut reports: Vec<(SuiteReport, Duration)> = Vec::new();

    for suite in Suite::ALL {
        let start = Instant::now();
        match run_suite(suite, &config) {
            Ok(report) => {
                let elapsed = start.elapsed();
                for row in &report.rows {
                    println!(
                        "  [{}] {} = {} ({}) {}",
                        row.criterion,
                        row.check,
                        row.value,
                        row.target,
                        if row.passed { "ok" } else { "MISS" }
                    );
                }
                for &c in suite.criteria() {
                    let passed = report.criterion_passed(c).unwrap_or(false);
                    let budget = BUDGETS.iter().find(|(k, _)| *k == c).map(|(_, s)| *s);
                    // the suite runs several criteria at once; charge it all to each
                    let in_time = budget.is_none_or(|b| elapsed.as_secs_f64() <= b as f64);
                    let detail = match budget {
                        Some(b) => format!("suite {suite} took {:.1}s, budget {b}s", elapsed.as_secs_f64()),
                        None => format!("suite {suite} took {:.1}s", elapsed.as_secs_f64()),
                    };
                    results.insert(c, (passed && in_time, detail));
                }
                reports.push((report, elapsed));
            }
            Err(e) => {
                for &c in suite.criteria() {
                    results.insert(c, (false, format!("suite {suite} errored: {e}")));
                }
            }
        }
    }

    results.insert(12, determinism(&config, &reports));

    let mut unexpected = 0;
    println!();
    for (c, (passed, detail)) in &results {
        let title = TITLES[*c as usize - 1];
        if *passed {
            println!("criterion {c:>2}: PASS  {title} ({detail})");
        } else if let Some((_, why)) = EXPECTED_FAILURES.iter().find(|(k, _)| k == c) {
            println!("criterion {c:>2}: FAIL  {title} ({detail}) [expected: {why}]");
        } else {
            unexpected += 1;
            println!("criterion {c:>2}: FAIL  {title} ({detail})");
        }
    }
    let passed = results.values().filter(|(p, _)| *p).count();
    println!(
        "\n{passed}/{} criteria passed, {unexpected} unexpected failure(s)",
        results.len()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Re-runs the cheaper suites from a JSON round trip of their
/// configuration and compares CSV output byte for byte.
fn determinism(config: &SuiteConfig, first: &[(SuiteReport, Duration)]) -> (bool, String) {
    let manifest = serde_json::to_string(config).expect("config serializes");
    let replayed: SuiteConfig = serde_json::from_str(&manifest).expect("config parses");
    let mut checked = Vec::new();
    for suite in [
        Suite::Exactness,
        Suite::Exponentiality,
        Suite::KingmanLimit,
        Suite::Martingale,
    ] {
        let Some((original, _)) = first.iter().find(|(r, _)| r.suite == suite) else {
            return (false, format!("no first run of {suite}"));
        };
        let again = match run_suite(suite, &replayed) {
            Ok(r) => r,
            Err(e) => return (false, format!("re-run of {suite} errored: {e}")),
        };
        if original.to_csv().ok() != again.to_csv().ok() {
            return (false, format!("{suite} output differs on re-run"));
        }
        checked.push(suite.name());
    }
    (true, format!("byte-identical re-runs of {}", checked.join(", ")))
}
