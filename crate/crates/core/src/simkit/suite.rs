//! Built-in workflow fixtures and the validation scenario suite.

use std::time::Instant;

use serde::Serialize;

use super::runner::{parse_scenario, run_scenario_blocking, RunOptions, ScenarioReport};
use super::script::TimerProfile;

const WORKFLOWS: &[(&str, &str)] = &[
    ("press", include_str!("../../scenarios/workflows/press.json")),
    ("twovar", include_str!("../../scenarios/workflows/twovar.json")),
];

/// The suite in execution order: (file stem, document).
pub const SUITE: &[(&str, &str)] = &[
    ("01-catalog", include_str!("../../scenarios/suite/01-catalog.json")),
    ("02-link", include_str!("../../scenarios/suite/02-link.json")),
    ("03-reconnect", include_str!("../../scenarios/suite/03-reconnect.json")),
    ("04-sync", include_str!("../../scenarios/suite/04-sync.json")),
    ("05-sync-ignore", include_str!("../../scenarios/suite/05-sync-ignore.json")),
    ("06-snapshot-stack", include_str!("../../scenarios/suite/06-snapshot-stack.json")),
    ("07-snapshot-context", include_str!("../../scenarios/suite/07-snapshot-context.json")),
    ("08-profiler-replay", include_str!("../../scenarios/suite/08-profiler-replay.json")),
    ("09-sync-exclusive", include_str!("../../scenarios/suite/09-sync-exclusive.json")),
    ("10-snapshot-blocks-sync", include_str!("../../scenarios/suite/10-snapshot-blocks-sync.json")),
    ("11-sync-breakpoints", include_str!("../../scenarios/suite/11-sync-breakpoints.json")),
    ("12-frozen-breakpoints", include_str!("../../scenarios/suite/12-frozen-breakpoints.json")),
];

/// Document of a built-in workflow fixture.
pub fn builtin_workflow(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    WORKFLOWS.iter().find(|(n, _)| *n == stem).map(|(_, doc)| *doc)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SuiteEntry {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ScenarioReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SuiteReport {
    pub profile: TimerProfile,
    pub passed: bool,
    pub wall_ms: u64,
    pub scenarios: Vec<SuiteEntry>,
}

/// Run every scenario, each on its own paused runtime.
pub fn run_suite(profile: TimerProfile) -> SuiteReport {
    let started = Instant::now();
    let opts = RunOptions {
        profile,
        base_dir: None,
    };
    let scenarios: Vec<SuiteEntry> = SUITE
        .iter()
        .map(|(file, doc)| {
            let result = parse_scenario(doc).and_then(|s| run_scenario_blocking(&s, &opts));
            match result {
                Ok(report) => SuiteEntry {
                    file: file.to_string(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => SuiteEntry {
                    file: file.to_string(),
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let passed = scenarios.iter().all(|s| s.report.as_ref().is_some_and(|r| r.passed));
    SuiteReport {
        profile,
        passed,
        wall_ms: started.elapsed().as_millis() as u64,
        scenarios,
    }
}
