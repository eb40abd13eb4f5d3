//! Scenario documents: topology, timer overrides and an ordered action list.
//!
//! Every duration in the action list is written in fast-profile
//! milliseconds and stretched by the profile's scale when run.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::device::DeviceStep;
use crate::client::FrontendCommand;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub summary: String,
    /// Built-in fixture names, paths relative to the scenario file, or
    /// inline workflow documents.
    pub workflows: Vec<WorkflowRef>,
    pub agents: Vec<AgentSpec>,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub timers: TimerOverrides,
    #[serde(default)]
    pub seed: Option<u64>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkflowRef {
    Named(String),
    Inline(Value),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    /// Defaults to the agent name; kept across restarts.
    #[serde(default)]
    pub aci_id: Option<String>,
    pub workflows: Vec<String>,
    #[serde(default = "yes")]
    pub autostart: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ClientSpec {
    pub name: String,
    /// Defaults to the client name.
    #[serde(default)]
    pub mes_id: Option<String>,
}

fn yes() -> bool {
    true
}

/// Timer set for a scenario run: `paper` uses production values, `fast` divides them by 50.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TimerProfile {
    Fast,
    Paper,
}

impl TimerProfile {
    /// Factor applied to scenario durations.
    pub fn scale(self) -> u64 {
        match self {
            TimerProfile::Fast => 1,
            TimerProfile::Paper => 50,
        }
    }

    pub fn timers(self) -> Timers {
        let paper = Timers {
            comm_attempt_ms: 10_000,
            aci_request_ms: 30_000,
            auto_select_window_ms: 5_000,
            aci_expiry_ms: 30_000,
            request_timeout_ms: 3_000,
            sweep_interval_ms: 30_000,
            session_expiry_ms: 35_000,
            sync_reply_timeout_ms: 300_000,
        };
        match self {
            TimerProfile::Paper => paper,
            TimerProfile::Fast => paper.divided(50),
        }
    }
}

impl std::str::FromStr for TimerProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(TimerProfile::Fast),
            "paper" => Ok(TimerProfile::Paper),
            other => Err(format!("unknown timer profile {other:?} (fast|paper)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Timers {
    pub comm_attempt_ms: u64,
    pub aci_request_ms: u64,
    pub auto_select_window_ms: u64,
    pub aci_expiry_ms: u64,
    pub request_timeout_ms: u64,
    pub sweep_interval_ms: u64,
    pub session_expiry_ms: u64,
    pub sync_reply_timeout_ms: u64,
}

impl Timers {
    fn divided(self, k: u64) -> Timers {
        Timers {
            comm_attempt_ms: self.comm_attempt_ms / k,
            aci_request_ms: self.aci_request_ms / k,
            auto_select_window_ms: self.auto_select_window_ms / k,
            aci_expiry_ms: self.aci_expiry_ms / k,
            request_timeout_ms: self.request_timeout_ms / k,
            sweep_interval_ms: self.sweep_interval_ms / k,
            session_expiry_ms: self.session_expiry_ms / k,
            sync_reply_timeout_ms: self.sync_reply_timeout_ms / k,
        }
    }

    pub fn apply(mut self, o: &TimerOverrides) -> Timers {
        let pick = |slot: &mut u64, v: Option<u64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        pick(&mut self.comm_attempt_ms, o.comm_attempt_ms);
        pick(&mut self.aci_request_ms, o.aci_request_ms);
        pick(&mut self.auto_select_window_ms, o.auto_select_window_ms);
        pick(&mut self.aci_expiry_ms, o.aci_expiry_ms);
        pick(&mut self.request_timeout_ms, o.request_timeout_ms);
        pick(&mut self.sweep_interval_ms, o.sweep_interval_ms);
        pick(&mut self.session_expiry_ms, o.session_expiry_ms);
        pick(&mut self.sync_reply_timeout_ms, o.sync_reply_timeout_ms);
        self
    }

    pub fn dur(ms: u64) -> Duration {
        Duration::from_millis(ms)
    }
}

/// Absolute values that replace the profile's, unscaled.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TimerOverrides {
    pub comm_attempt_ms: Option<u64>,
    pub aci_request_ms: Option<u64>,
    pub auto_select_window_ms: Option<u64>,
    pub aci_expiry_ms: Option<u64>,
    pub request_timeout_ms: Option<u64>,
    pub sweep_interval_ms: Option<u64>,
    pub session_expiry_ms: Option<u64>,
    pub sync_reply_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "camelCase", deny_unknown_fields)]
pub enum Action {
    StartAgent { agent: String },
    KillAgent { agent: String },
    Command {
        client: String,
        command: FrontendCommand,
        /// `"ok"` or an error name such as `"refusedInMode"`; checked as an assert.
        #[serde(default)]
        expect: Option<String>,
        #[serde(default)]
        describe: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    Device {
        agent: String,
        workflow: String,
        steps: Vec<DeviceStep>,
    },
    Wait { ms: u64 },
    Mark { label: String },
    Expect(Expectation),
    ExpectEvents(EventExpectation),
    ExpectAgentLog(AgentLogExpectation),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Expectation {
    pub describe: String,
    #[serde(default)]
    pub client: Option<String>,
    #[serde(default)]
    pub agent: Option<String>,
    /// JSON pointer into the observable.
    pub path: String,
    #[serde(flatten)]
    pub check: ValueCheck,
    /// Poll up to this long for the check to pass.
    #[serde(default)]
    pub within: Option<u64>,
    /// Then require it to keep passing this long.
    #[serde(default)]
    pub hold_for: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueCheck {
    #[serde(default)]
    pub equals: Option<Value>,
    #[serde(default)]
    pub not_equals: Option<Value>,
    #[serde(default)]
    pub len: Option<usize>,
    #[serde(default)]
    pub contains: Option<Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CountCheck {
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub min: Option<usize>,
    #[serde(default)]
    pub max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventExpectation {
    pub describe: String,
    pub client: String,
    /// Only events after this mark; the whole log otherwise.
    #[serde(default)]
    pub since: Option<String>,
    #[serde(rename = "type")]
    pub kind: String,
    /// Pointer → value pairs every counted event must match.
    #[serde(default, rename = "where")]
    pub filter: serde_json::Map<String, Value>,
    #[serde(flatten)]
    pub counts: CountCheck,
    /// Pointer extracted from each counted event and compared with `values`.
    #[serde(default)]
    pub field: Option<String>,
    #[serde(default)]
    pub values: Option<Vec<Value>>,
    /// Counted events carry entries in timestamp, then entrySeq, order.
    #[serde(default)]
    pub chronological: bool,
    #[serde(default)]
    pub within: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentLogExpectation {
    pub describe: String,
    pub agent: String,
    #[serde(default)]
    pub since: Option<String>,
    pub event: String,
    #[serde(default, rename = "where")]
    pub filter: serde_json::Map<String, Value>,
    #[serde(flatten)]
    pub counts: CountCheck,
    #[serde(default)]
    pub within: Option<u64>,
}
