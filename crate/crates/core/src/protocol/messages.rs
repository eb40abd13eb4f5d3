use serde::{Deserialize, Serialize};

use super::types::{BreakpointDefinition, DebugMode, DebugSessionInfo, DebugSessionInfoEntry};
use super::ProtocolError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommunicationStarted {
    pub aci_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommunicationAttempt {
    pub aci_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckWorkflowRunning {
    pub aci_id: String,
    pub workflow_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckWorkflowRunningResponse {
    pub aci_id: String,
    pub workflow_id: String,
    pub running: bool,
    pub sessions: Vec<DebugSessionInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakpointChange {
    pub aci_id: String,
    pub workflow_id: String,
    pub session_id: String,
    pub breakpoint: BreakpointDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakpointToggle {
    pub aci_id: String,
    pub workflow_id: String,
    pub session_id: String,
    pub breakpoint: BreakpointDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StartDebug {
    pub aci_id: String,
    pub mes_id: String,
    pub workflow_id: String,
    pub debug_mode: DebugMode,
    pub breakpoints: Vec<BreakpointDefinition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DebugStarted {
    pub mes_id: String,
    pub aci_id: String,
    pub workflow_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StopDebug {
    pub aci_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DebugStopped {
    pub aci_id: String,
    pub session_id: String,
    pub registry: Vec<DebugSessionInfoEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionRenewal {
    pub aci_id: String,
    pub session_id: String,
}

/// Payload shared by the two breakpoint notifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BreakpointNotification {
    pub aci_id: String,
    pub session_id: String,
    pub workflow_id: String,
    pub registry_entry: DebugSessionInfoEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReceivedExecutionContext {
    pub aci_id: String,
    pub workflow_id: String,
    pub session_id: String,
    pub execution_context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AvailableAciRequest {
    pub workflow_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AvailableAciRequestResponse {
    pub workflow_id: String,
    pub aci_id: String,
    pub running: bool,
}

/// Reply to `onCommunicationAttempt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationAttemptReply {
    pub connected: bool,
}

/// Reply that releases a synchronous breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResumeReply {}

#[derive(Debug, Clone, PartialEq)]
pub enum DebugMessage {
    CommunicationStarted(CommunicationStarted),
    CommunicationAttempt(CommunicationAttempt),
    CheckWorkflowRunning(CheckWorkflowRunning),
    CheckWorkflowRunningResponse(CheckWorkflowRunningResponse),
    BreakpointChange(BreakpointChange),
    BreakpointToggle(BreakpointToggle),
    StartDebug(StartDebug),
    DebugStarted(DebugStarted),
    StopDebug(StopDebug),
    DebugStopped(DebugStopped),
    SessionRenewal(SessionRenewal),
    BeforeSetOutputs(BreakpointNotification),
    AfterSetInputs(BreakpointNotification),
    ReceivedExecutionContext(ReceivedExecutionContext),
    AvailableAciRequest(AvailableAciRequest),
    AvailableAciRequestResponse(AvailableAciRequestResponse),
}

/// Message names as they appear at the start of a subject.
pub const MESSAGE_NAMES: [&str; 16] = [
    "onCommunicationStarted",
    "onCommunicationAttempt",
    "onCheckWorkflowRunning",
    "onCheckWorkflowRunningResponse",
    "onBreakpointChange",
    "onBreakpointToggle",
    "onStartDebug",
    "onDebugStarted",
    "onStopDebug",
    "onDebugStopped",
    "onSessionRenewal",
    "onBeforeSetOutputs",
    "onAfterSetInputs",
    "onReceivedExecutionContext",
    "onAvailableACIRequest",
    "onAvailableACIRequestResponse",
];

impl DebugMessage {
    pub fn name(&self) -> &'static str {
        use DebugMessage::*;
        let i = match self {
            CommunicationStarted(_) => 0,
            CommunicationAttempt(_) => 1,
            CheckWorkflowRunning(_) => 2,
            CheckWorkflowRunningResponse(_) => 3,
            BreakpointChange(_) => 4,
            BreakpointToggle(_) => 5,
            StartDebug(_) => 6,
            DebugStarted(_) => 7,
            StopDebug(_) => 8,
            DebugStopped(_) => 9,
            SessionRenewal(_) => 10,
            BeforeSetOutputs(_) => 11,
            AfterSetInputs(_) => 12,
            ReceivedExecutionContext(_) => 13,
            AvailableAciRequest(_) => 14,
            AvailableAciRequestResponse(_) => 15,
        };
        MESSAGE_NAMES[i]
    }

    /// Ids appended to the subject, in subject order.
    pub fn attachments(&self) -> Vec<&str> {
        use DebugMessage::*;
        match self {
            CommunicationStarted(_) | AvailableAciRequest(_) => vec![],
            CommunicationAttempt(m) => vec![&m.aci_id],
            CheckWorkflowRunning(m) => vec![&m.aci_id],
            CheckWorkflowRunningResponse(m) => vec![&m.aci_id, &m.workflow_id],
            BreakpointChange(m) => vec![&m.aci_id, &m.workflow_id],
            BreakpointToggle(m) => vec![&m.aci_id, &m.workflow_id],
            StartDebug(m) => vec![&m.aci_id],
            DebugStarted(m) => vec![&m.mes_id, &m.aci_id, &m.workflow_id],
            StopDebug(m) => vec![&m.aci_id],
            DebugStopped(m) => vec![&m.aci_id, &m.session_id],
            SessionRenewal(m) => vec![&m.aci_id],
            BeforeSetOutputs(m) | AfterSetInputs(m) => vec![&m.aci_id, &m.session_id],
            ReceivedExecutionContext(m) => vec![&m.aci_id, &m.workflow_id],
            AvailableAciRequestResponse(m) => vec![&m.workflow_id],
        }
    }

    /// Bus subject: the message name followed by its attachment ids, `_`-separated.
    pub fn subject(&self) -> String {
        join_subject(self.name(), &self.attachments())
    }

    /// Every identifier field of the message, for validation.
    fn identifiers(&self) -> Vec<(&'static str, &str)> {
        use DebugMessage::*;
        let mut ids: Vec<(&'static str, &str)> = Vec::new();
        match self {
            CommunicationStarted(m) => ids.push(("aciId", &m.aci_id)),
            CommunicationAttempt(m) => ids.push(("aciId", &m.aci_id)),
            CheckWorkflowRunning(m) => {
                ids.extend([("aciId", m.aci_id.as_str()), ("workflowId", &m.workflow_id)]);
                if let Some(s) = &m.session_id {
                    ids.push(("sessionId", s));
                }
            }
            CheckWorkflowRunningResponse(m) => {
                ids.extend([("aciId", m.aci_id.as_str()), ("workflowId", &m.workflow_id)]);
                for s in &m.sessions {
                    ids.extend([
                        ("sessionId", s.session_id.as_str()),
                        ("mesId", &s.mes_id),
                        ("workflowId", &s.workflow_id),
                    ]);
                }
            }
            BreakpointChange(m) => ids.extend([
                ("aciId", m.aci_id.as_str()),
                ("workflowId", &m.workflow_id),
                ("sessionId", &m.session_id),
            ]),
            BreakpointToggle(m) => ids.extend([
                ("aciId", m.aci_id.as_str()),
                ("workflowId", &m.workflow_id),
                ("sessionId", &m.session_id),
            ]),
            StartDebug(m) => ids.extend([
                ("aciId", m.aci_id.as_str()),
                ("mesId", &m.mes_id),
                ("workflowId", &m.workflow_id),
            ]),
            DebugStarted(m) => ids.extend([
                ("mesId", m.mes_id.as_str()),
                ("aciId", &m.aci_id),
                ("workflowId", &m.workflow_id),
                ("sessionId", &m.session_id),
            ]),
            StopDebug(m) => ids.extend([("aciId", m.aci_id.as_str()), ("sessionId", &m.session_id)]),
            DebugStopped(m) => ids.extend([("aciId", m.aci_id.as_str()), ("sessionId", &m.session_id)]),
            SessionRenewal(m) => ids.extend([("aciId", m.aci_id.as_str()), ("sessionId", &m.session_id)]),
            BeforeSetOutputs(m) | AfterSetInputs(m) => ids.extend([
                ("aciId", m.aci_id.as_str()),
                ("sessionId", &m.session_id),
                ("workflowId", &m.workflow_id),
            ]),
            ReceivedExecutionContext(m) => ids.extend([
                ("aciId", m.aci_id.as_str()),
                ("workflowId", &m.workflow_id),
                ("sessionId", &m.session_id),
                ("executionContext", &m.execution_context),
            ]),
            AvailableAciRequest(m) => ids.push(("workflowId", &m.workflow_id)),
            AvailableAciRequestResponse(m) => {
                ids.extend([("workflowId", m.workflow_id.as_str()), ("aciId", &m.aci_id)])
            }
        }
        ids
    }

    /// Check the message-level invariants: identifiers are non-empty and
    /// `_`-free, mock mode stays local, registries are in entrySeq order.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        for (field, value) in self.identifiers() {
            validate_id(field, value)?;
        }
        use DebugMessage::*;
        match self {
            StartDebug(m) if m.debug_mode == DebugMode::Mock => {
                Err(ProtocolError::Invalid("mock sessions never cross the wire".into()))
            }
            CheckWorkflowRunningResponse(m) => m.sessions.iter().try_for_each(|s| {
                if s.mode == DebugMode::Mock {
                    return Err(ProtocolError::Invalid("mock session in session list".into()));
                }
                if s.chosen_context.is_some() && s.mode != DebugMode::Snapshot {
                    return Err(ProtocolError::Invalid("chosenContext outside a snapshot session".into()));
                }
                Ok(())
            }),
            DebugStopped(m) => {
                if m.registry.windows(2).any(|w| w[0].entry_seq >= w[1].entry_seq) {
                    return Err(ProtocolError::Invalid("registry not in entrySeq order".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

pub fn validate_id(field: &'static str, value: &str) -> Result<(), ProtocolError> {
    if value.is_empty() {
        Err(ProtocolError::InvalidId { field, reason: "empty" })
    } else if value.contains('_') {
        Err(ProtocolError::InvalidId { field, reason: "contains the subject separator `_`" })
    } else {
        Ok(())
    }
}

pub(crate) fn join_subject(name: &str, ids: &[&str]) -> String {
    let mut s = String::from(name);
    for id in ids {
        s.push('_');
        s.push_str(id);
    }
    s
}

/// Subjects for subscribing before any concrete message exists.
pub mod subjects {
    use super::join_subject;

    pub fn communication_started() -> String {
        "onCommunicationStarted".into()
    }
    pub fn communication_attempt(aci: &str) -> String {
        join_subject("onCommunicationAttempt", &[aci])
    }
    pub fn check_workflow_running(aci: &str) -> String {
        join_subject("onCheckWorkflowRunning", &[aci])
    }
    pub fn check_workflow_running_response(aci: &str, workflow: &str) -> String {
        join_subject("onCheckWorkflowRunningResponse", &[aci, workflow])
    }
    pub fn breakpoint_change(aci: &str, workflow: &str) -> String {
        join_subject("onBreakpointChange", &[aci, workflow])
    }
    pub fn breakpoint_toggle(aci: &str, workflow: &str) -> String {
        join_subject("onBreakpointToggle", &[aci, workflow])
    }
    pub fn start_debug(aci: &str) -> String {
        join_subject("onStartDebug", &[aci])
    }
    pub fn debug_started(mes: &str, aci: &str, workflow: &str) -> String {
        join_subject("onDebugStarted", &[mes, aci, workflow])
    }
    pub fn stop_debug(aci: &str) -> String {
        join_subject("onStopDebug", &[aci])
    }
    pub fn debug_stopped(aci: &str, session: &str) -> String {
        join_subject("onDebugStopped", &[aci, session])
    }
    pub fn session_renewal(aci: &str) -> String {
        join_subject("onSessionRenewal", &[aci])
    }
    pub fn before_set_outputs(aci: &str, session: &str) -> String {
        join_subject("onBeforeSetOutputs", &[aci, session])
    }
    pub fn after_set_inputs(aci: &str, session: &str) -> String {
        join_subject("onAfterSetInputs", &[aci, session])
    }
    pub fn received_execution_context(aci: &str, workflow: &str) -> String {
        join_subject("onReceivedExecutionContext", &[aci, workflow])
    }
    pub fn available_aci_request() -> String {
        "onAvailableACIRequest".into()
    }
    pub fn available_aci_request_response(workflow: &str) -> String {
        join_subject("onAvailableACIRequestResponse", &[workflow])
    }
}
