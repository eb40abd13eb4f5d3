//! Frontend API: the commands a debugger page sends and the events it gets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{BreakpointDefinition, BreakpointSide, DebugMode, DebugSessionInfo, DebugSessionInfoEntry};
use crate::workflow::{EngineError, VariableValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Phase {
    Idle,
    Discovering,
    Linked,
    Debugging,
    Replaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LinkStatus {
    /// No controller selected yet.
    None,
    Connected,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BreakpointAction {
    Add,
    Remove,
    Toggle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ReplayDirection {
    Next,
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "camelCase")]
pub enum FrontendCommand {
    #[serde(rename_all = "camelCase")]
    SelectWorkflow { workflow_id: String },
    #[serde(rename_all = "camelCase")]
    SelectAci { aci_id: String },
    SetMode { mode: DebugMode },
    Start,
    Stop,
    Resume,
    EditBreakpoint { action: BreakpointAction, breakpoint: BreakpointDefinition },
    ReplayStep { direction: ReplayDirection },
    DiscardReplay,
    #[serde(rename_all = "camelCase")]
    MockInject { task_id: String, port_id: String, value: VariableValue },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", content = "detail", rename_all = "camelCase")]
pub enum ClientError {
    #[error("not allowed in the current mode")]
    RefusedInMode,
    #[error("the selected controller cannot start this mode now")]
    Unavailable,
    #[error("no DebugStarted before the request timeout")]
    StartTimeout,
    #[error("no workflow selected")]
    NoWorkflow,
    #[error("workflow {0} is not known to this client")]
    UnknownWorkflow(String),
    #[error("controller {0} is not selectable")]
    NotSelectable(String),
    #[error("invalid in the current state: {0}")]
    InvalidState(String),
    #[error("engine: {0}")]
    Engine(String),
    #[error("client stopped")]
    Stopped,
}

impl From<EngineError> for ClientError {
    fn from(e: EngineError) -> Self {
        ClientError::Engine(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AciCatalogEntry {
    pub aci_id: String,
    pub running: bool,
    /// Client monotonic milliseconds.
    pub last_seen: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BreakpointState {
    Set,
    Disabled,
    Triggered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakpointView {
    pub breakpoint: BreakpointDefinition,
    pub state: BreakpointState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PortValue {
    pub task_id: String,
    pub port_id: String,
    pub side: BreakpointSide,
    pub value: VariableValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkflowView {
    /// Last value seen per port, sorted by (taskId, portId, side).
    pub values: Vec<PortValue>,
    pub breakpoints: Vec<BreakpointView>,
    pub active_context: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Availability {
    pub synchronous: bool,
    pub snapshot: bool,
    pub profiler: bool,
}

impl Availability {
    pub fn get(&self, mode: DebugMode) -> bool {
        match mode {
            DebugMode::Synchronous => self.synchronous,
            DebugMode::Snapshot => self.snapshot,
            DebugMode::Profiler => self.profiler,
            DebugMode::Mock => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplayCursor {
    pub cursor: usize,
    pub total: usize,
}

/// Everything a page needs to render; carried by `stateChanged`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientSnapshot {
    pub mes_id: String,
    pub phase: Phase,
    pub link: LinkStatus,
    pub workflow_id: Option<String>,
    pub selected_aci: Option<String>,
    pub mode: DebugMode,
    pub session_id: Option<String>,
    /// Whether the workflow runs on the selected controller.
    pub workflow_running: bool,
    pub availability: Availability,
    /// Availability for the selected mode; drives the Start button.
    pub workflow_available: bool,
    pub start_enabled: bool,
    pub breakpoints_editable: bool,
    pub breakpoints: Vec<BreakpointDefinition>,
    /// Snapshot entries waiting to be displayed, including the current one.
    pub pending_breakpoints: usize,
    pub chosen_context: Option<String>,
    pub triggered: Option<DebugSessionInfoEntry>,
    pub replay: Option<ReplayCursor>,
    pub protocol_violation: bool,
    pub agent_sessions: Vec<DebugSessionInfo>,
    pub view: WorkflowView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum FrontendEvent {
    StateChanged { state: Box<ClientSnapshot> },
    CatalogChanged { entries: Vec<AciCatalogEntry> },
    BreakpointTriggered { mode: DebugMode, entry: DebugSessionInfoEntry },
    ReplayPosition { cursor: usize, total: usize, entry: Option<DebugSessionInfoEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrontendEventRecord {
    /// Client monotonic milliseconds.
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: FrontendEvent,
}

/// Answer to one command on the frontend socket.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandResult {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ClientError>,
}

impl CommandResult {
    pub fn of(result: Result<(), ClientError>) -> Self {
        CommandResult {
            kind: "commandResult",
            ok: result.is_ok(),
            error: result.err(),
        }
    }
}
