//! Device simulator and scenario harness.

mod device;
mod runner;
mod script;
mod suite;

pub use device::{run_device, DeviceError, DeviceScript, DeviceStep, InjectionRecord};
pub use runner::{
    json_subset, load_workflows, parse_scenario, run_scenario, run_scenario_blocking, AssertOutcome, LeakReport,
    RunOptions, ScenarioError, ScenarioReport, TranscriptLine, SCENARIO_EPOCH_MS,
};
pub use script::{
    Action, AgentLogExpectation, AgentSpec, ClientSpec, CountCheck, EventExpectation, Expectation, ScenarioScript,
    TimerOverrides, TimerProfile, Timers, ValueCheck, WorkflowRef,
};
pub use suite::{builtin_workflow, run_suite, SuiteEntry, SuiteReport, SUITE};
