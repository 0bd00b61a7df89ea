use lwbc_core::gradcheck::{run_battery, Fault, Report, DEFAULT_CONFIGS, DEFAULT_SEED};
use lwbc_core::datagen::format_float;

use crate::error::{CliError, CliResult};

/// Text printed by the `gradcheck` subcommand, one line per loss.
pub fn render(report: &Report) -> String {
    let mut out = format!(
        "gradient check: {} configurations, step {}, tolerance {}\n",
        report.configs,
        format_float(report.step),
        format_float(report.tolerance)
    );
    for r in &report.results {
        out.push_str(&format!(
            "{} {:<12} max_rel_error={} worst={}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.loss,
            format_float(r.max_rel_error),
            r.worst_description
        ));
    }
    out
}

/// Runs the battery, prints the report and fails with the offending losses.
pub fn execute(fault: Fault) -> CliResult<Report> {
    let report = run_battery(DEFAULT_SEED, DEFAULT_CONFIGS, fault)?;
    print!("{}", render(&report));
    if report.passed() {
        Ok(report)
    } else {
        let failing: Vec<String> = report
            .results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("{} on {}", r.loss, r.worst_description))
            .collect();
        Err(CliError::Check(failing.join("; ")))
    }
}
