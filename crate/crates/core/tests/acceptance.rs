//! Full-size acceptance run: every criterion at its stated tolerance.
//!
//! Lines are written to the raw handles so they show up without `--nocapture`.

use rlangevin::verify::{run_with_progress, VerifyConfig, CRITERIA};
use std::io::Write;

#[test]
fn acceptance_criteria() {
    let cfg = VerifyConfig::new(1);
    let mut err = std::io::stderr();
    let report = run_with_progress(&cfg, |k, checks, t| {
        let pass = checks.iter().all(|c| c.pass);
        let _ = writeln!(err, "criterion {k:>2} finished in {:.1}s: {}", t.as_secs_f64(), if pass { "pass" } else { "FAIL" });
        for c in checks.iter().filter(|c| !c.pass) {
            let _ = writeln!(err, "    {} statistic {:e} threshold {:e} details {}", c.id, c.statistic, c.threshold, c.details);
        }
    });
    let mut out = std::io::stdout().lock();
    for line in report.summary_lines() {
        let _ = writeln!(out, "{line}");
    }
    let _ = out.flush();
    let failed: Vec<u8> = CRITERIA.filter(|k| report.criterion_passed(*k) != Some(true)).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
