//! JSON wire format.
//!
//! Every frame is an envelope
//! `{"subject": .., "kind": "publish"|"request"|"reply", "correlationId"?: .., "payload": {..}}`
//! whose payload holds the message parameters under their camelCase names.
//! The message variant is named by the subject prefix, so the payload
//! carries no type tag of its own.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{Map, Value};
use thiserror::Error;

use super::messages::*;
use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Publish,
    Request,
    Reply,
}

/// A routed bus message. `payload` holds UTF-8 JSON.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub subject: String,
    pub kind: EnvelopeKind,
    pub correlation_id: Option<String>,
    pub payload: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireEnvelope<'a> {
    subject: String,
    kind: EnvelopeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correlation_id: Option<String>,
    #[serde(borrow)]
    payload: &'a RawValue,
}

impl Envelope {
    pub fn publish(subject: impl Into<String>, payload: Vec<u8>) -> Self {
        Envelope {
            subject: subject.into(),
            kind: EnvelopeKind::Publish,
            correlation_id: None,
            payload,
        }
    }

    /// Serialize as one JSON text frame. Fails if the payload is not JSON.
    pub fn to_frame(&self) -> Result<String, DecodeError> {
        let text = std::str::from_utf8(&self.payload).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let raw: &RawValue = serde_json::from_str(text).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let wire = WireEnvelope {
            subject: self.subject.clone(),
            kind: self.kind,
            correlation_id: self.correlation_id.clone(),
            payload: raw,
        };
        Ok(serde_json::to_string(&wire).expect("envelope serializes"))
    }

    pub fn from_frame(frame: &str) -> Result<Self, DecodeError> {
        let wire: WireEnvelope<'_> = serde_json::from_str(frame).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        if matches!(wire.kind, EnvelopeKind::Request | EnvelopeKind::Reply) && wire.correlation_id.is_none() {
            return Err(DecodeError::MissingField("correlationId".into()));
        }
        Ok(Envelope {
            subject: wire.subject,
            kind: wire.kind,
            correlation_id: wire.correlation_id,
            payload: wire.payload.get().as_bytes().to_vec(),
        })
    }

    /// Message name: the subject up to the first `_`.
    pub fn message_name(&self) -> &str {
        self.subject.split('_').next().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message name `{0}`")]
    UnknownMessage(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("wrong field type: {0}")]
    WrongType(String),
    #[error("subject `{subject}` does not match payload (expected `{expected}`)")]
    SubjectMismatch { subject: String, expected: String },
    #[error(transparent)]
    Invalid(#[from] ProtocolError),
}

impl DebugMessage {
    /// Payload bytes: the message parameters as a JSON object.
    pub fn payload(&self) -> Vec<u8> {
        use DebugMessage::*;
        let r = match self {
            CommunicationStarted(m) => serde_json::to_vec(m),
            CommunicationAttempt(m) => serde_json::to_vec(m),
            CheckWorkflowRunning(m) => serde_json::to_vec(m),
            CheckWorkflowRunningResponse(m) => serde_json::to_vec(m),
            BreakpointChange(m) => serde_json::to_vec(m),
            BreakpointToggle(m) => serde_json::to_vec(m),
            StartDebug(m) => serde_json::to_vec(m),
            DebugStarted(m) => serde_json::to_vec(m),
            StopDebug(m) => serde_json::to_vec(m),
            DebugStopped(m) => serde_json::to_vec(m),
            SessionRenewal(m) => serde_json::to_vec(m),
            BeforeSetOutputs(m) | AfterSetInputs(m) => serde_json::to_vec(m),
            ReceivedExecutionContext(m) => serde_json::to_vec(m),
            AvailableAciRequest(m) => serde_json::to_vec(m),
            AvailableAciRequestResponse(m) => serde_json::to_vec(m),
        };
        r.expect("message serializes")
    }

    pub fn to_envelope(&self, kind: EnvelopeKind, correlation_id: Option<String>) -> Result<Envelope, ProtocolError> {
        self.validate()?;
        Ok(Envelope {
            subject: self.subject(),
            kind,
            correlation_id,
            payload: self.payload(),
        })
    }

    /// Rebuild a message from a subject and its payload, checking that the
    /// subject attachments agree with the payload fields.
    pub fn from_parts(subject: &str, payload: &[u8]) -> Result<Self, DecodeError> {
        let name = subject.split('_').next().unwrap_or("");
        let value: Value = serde_json::from_slice(payload).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(DecodeError::WrongType("payload must be an object".into()));
        };
        use DebugMessage as M;
        let msg = match name {
            "onCommunicationStarted" => M::CommunicationStarted(fields(map, &["aciId"])?),
            "onCommunicationAttempt" => M::CommunicationAttempt(fields(map, &["aciId"])?),
            "onCheckWorkflowRunning" => M::CheckWorkflowRunning(fields(map, &["aciId", "workflowId"])?),
            "onCheckWorkflowRunningResponse" => M::CheckWorkflowRunningResponse(fields(
                map,
                &["aciId", "workflowId", "running", "sessions"],
            )?),
            "onBreakpointChange" => {
                M::BreakpointChange(fields(map, &["aciId", "workflowId", "sessionId", "breakpoint"])?)
            }
            "onBreakpointToggle" => {
                M::BreakpointToggle(fields(map, &["aciId", "workflowId", "sessionId", "breakpoint"])?)
            }
            "onStartDebug" => M::StartDebug(fields(
                map,
                &["aciId", "mesId", "workflowId", "debugMode", "breakpoints"],
            )?),
            "onDebugStarted" => M::DebugStarted(fields(map, &["mesId", "aciId", "workflowId", "sessionId"])?),
            "onStopDebug" => M::StopDebug(fields(map, &["aciId", "sessionId"])?),
            "onDebugStopped" => M::DebugStopped(fields(map, &["aciId", "sessionId", "registry"])?),
            "onSessionRenewal" => M::SessionRenewal(fields(map, &["aciId", "sessionId"])?),
            "onBeforeSetOutputs" => M::BeforeSetOutputs(fields(
                map,
                &["aciId", "sessionId", "workflowId", "registryEntry"],
            )?),
            "onAfterSetInputs" => M::AfterSetInputs(fields(
                map,
                &["aciId", "sessionId", "workflowId", "registryEntry"],
            )?),
            "onReceivedExecutionContext" => M::ReceivedExecutionContext(fields(
                map,
                &["aciId", "workflowId", "sessionId", "executionContext"],
            )?),
            "onAvailableACIRequest" => M::AvailableAciRequest(fields(map, &["workflowId"])?),
            "onAvailableACIRequestResponse" => {
                M::AvailableAciRequestResponse(fields(map, &["workflowId", "aciId", "running"])?)
            }
            other => return Err(DecodeError::UnknownMessage(other.to_string())),
        };
        msg.validate()?;
        let expected = msg.subject();
        if expected != subject {
            return Err(DecodeError::SubjectMismatch {
                subject: subject.to_string(),
                expected,
            });
        }
        Ok(msg)
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, DecodeError> {
        Self::from_parts(&env.subject, &env.payload)
    }
}

fn fields<T: DeserializeOwned>(map: Map<String, Value>, required: &[&str]) -> Result<T, DecodeError> {
    if let Some(missing) = required.iter().find(|f| !map.contains_key(**f)) {
        return Err(DecodeError::MissingField(missing.to_string()));
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| DecodeError::WrongType(e.to_string()))
}

/// Encode a message as a published envelope frame.
pub fn encode(message: &DebugMessage) -> Result<Vec<u8>, ProtocolError> {
    let env = message.to_envelope(EnvelopeKind::Publish, None)?;
    Ok(env.to_frame().expect("message payload is JSON").into_bytes())
}

pub fn decode(bytes: &[u8]) -> Result<DebugMessage, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let env = Envelope::from_frame(text)?;
    DebugMessage::from_envelope(&env)
}
