//! The sixteen remote-debugging messages, their subjects and wire codec.

mod availability;
mod codec;
mod messages;
mod types;

use thiserror::Error;

pub use availability::{compute_availability, is_legal_session_set};
pub use codec::{decode, encode, DecodeError, Envelope, EnvelopeKind};
pub use messages::{
    subjects, validate_id, AvailableAciRequest, AvailableAciRequestResponse, BreakpointChange,
    BreakpointNotification, BreakpointToggle, CheckWorkflowRunning, CheckWorkflowRunningResponse,
    CommunicationAttempt, CommunicationAttemptReply, CommunicationStarted, DebugMessage, DebugStarted,
    DebugStopped, ReceivedExecutionContext, ResumeReply, SessionRenewal, StartDebug, StopDebug,
    MESSAGE_NAMES,
};
pub use types::{
    cap_registry, sort_registry, BreakpointDefinition, BreakpointSide, DebugMode, DebugSessionInfo,
    DebugSessionInfoEntry, REGISTRY_CAP,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid {field}: {reason}")]
    InvalidId { field: &'static str, reason: &'static str },
    #[error("invalid message: {0}")]
    Invalid(String),
}

/// Subject of a message: its name plus attachment ids.
pub fn subject_of(message: &DebugMessage) -> String {
    message.subject()
}
