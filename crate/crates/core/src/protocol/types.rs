use serde::{Deserialize, Serialize};

use crate::workflow::{HookSide, PortDirection, VariableValue};

/// Maximum registry entries kept per session; the oldest go first.
pub const REGISTRY_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebugMode {
    /// Local engine only; never sent to an agent.
    Mock,
    Synchronous,
    Snapshot,
    Profiler,
}

impl DebugMode {
    pub const REMOTE: [DebugMode; 3] = [DebugMode::Synchronous, DebugMode::Snapshot, DebugMode::Profiler];

    pub fn is_remote(self) -> bool {
        self != DebugMode::Mock
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakpointSide {
    Input,
    Output,
}

impl BreakpointSide {
    pub fn of_hook(side: HookSide) -> Self {
        match side {
            HookSide::AfterSetInputs => BreakpointSide::Input,
            HookSide::BeforeSetOutputs => BreakpointSide::Output,
        }
    }

    pub fn direction(self) -> PortDirection {
        match self {
            BreakpointSide::Input => PortDirection::Input,
            BreakpointSide::Output => PortDirection::Output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakpointDefinition {
    pub task_id: String,
    pub port_id: String,
    pub side: BreakpointSide,
    pub enabled: bool,
}

impl BreakpointDefinition {
    pub fn new(task_id: impl Into<String>, port_id: impl Into<String>, side: BreakpointSide) -> Self {
        BreakpointDefinition {
            task_id: task_id.into(),
            port_id: port_id.into(),
            side,
            enabled: true,
        }
    }

    /// Identity used for add/remove/toggle; `enabled` is not part of it.
    pub fn key(&self) -> (&str, &str, BreakpointSide) {
        (&self.task_id, &self.port_id, self.side)
    }

    pub fn same_point(&self, other: &BreakpointDefinition) -> bool {
        self.key() == other.key()
    }

    pub fn matches(&self, task_id: &str, port_id: &str, side: BreakpointSide) -> bool {
        self.task_id == task_id && self.port_id == port_id && self.side == side
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DebugSessionInfo {
    pub session_id: String,
    pub mode: DebugMode,
    pub mes_id: String,
    pub workflow_id: String,
    /// Milliseconds on the agent's monotonic clock.
    pub last_renewal: u64,
    pub breakpoints: Vec<BreakpointDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_context: Option<String>,
}

/// One recorded variable change at a breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DebugSessionInfoEntry {
    pub entry_seq: u64,
    /// Wall-clock milliseconds.
    pub timestamp: u64,
    pub context_id: String,
    pub task_id: String,
    pub port_id: String,
    pub side: BreakpointSide,
    pub value: VariableValue,
    pub breakpoint: BreakpointDefinition,
}

/// Chronological order used for stopped registries: timestamp, then entrySeq.
pub fn sort_registry(entries: &mut [DebugSessionInfoEntry]) {
    entries.sort_by_key(|e| (e.timestamp, e.entry_seq));
}

/// Drop the oldest entries beyond [`REGISTRY_CAP`]. Expects sorted input.
pub fn cap_registry(entries: &mut Vec<DebugSessionInfoEntry>) {
    if entries.len() > REGISTRY_CAP {
        let excess = entries.len() - REGISTRY_CAP;
        entries.drain(..excess);
    }
}
