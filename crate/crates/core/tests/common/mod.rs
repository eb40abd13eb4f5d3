//! Message generators and golden fixtures shared by the protocol tests.
#![allow(dead_code)]

use flowdbg_core::protocol::*;
use flowdbg_core::workflow::VariableValue;
use proptest::prelude::*;

pub fn id() -> impl Strategy<Value = String> {
    // Anything non-empty without the subject separator, unicode included.
    "[^_\\x00-\\x1f]{1,12}"
}

pub fn remote_mode() -> impl Strategy<Value = DebugMode> {
    prop_oneof![Just(DebugMode::Synchronous), Just(DebugMode::Snapshot), Just(DebugMode::Profiler)]
}

pub fn side() -> impl Strategy<Value = BreakpointSide> {
    prop_oneof![Just(BreakpointSide::Input), Just(BreakpointSide::Output)]
}

pub fn value() -> impl Strategy<Value = VariableValue> {
    prop_oneof![
        any::<bool>().prop_map(VariableValue::Bool),
        any::<i64>().prop_map(VariableValue::Int64),
        (prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO).prop_map(VariableValue::Float64),
        ".{0,16}".prop_map(VariableValue::Text),
    ]
}

pub fn breakpoint() -> impl Strategy<Value = BreakpointDefinition> {
    (id(), id(), side(), any::<bool>()).prop_map(|(task_id, port_id, side, enabled)| BreakpointDefinition {
        task_id,
        port_id,
        side,
        enabled,
    })
}

pub fn entry() -> impl Strategy<Value = DebugSessionInfoEntry> {
    (any::<u64>(), any::<u64>(), id(), breakpoint(), value()).prop_map(|(entry_seq, timestamp, context_id, bp, value)| {
        DebugSessionInfoEntry {
            entry_seq,
            timestamp,
            context_id,
            task_id: bp.task_id.clone(),
            port_id: bp.port_id.clone(),
            side: bp.side,
            value,
            breakpoint: bp,
        }
    })
}

pub fn session() -> impl Strategy<Value = DebugSessionInfo> {
    (id(), remote_mode(), id(), id(), any::<u64>(), prop::collection::vec(breakpoint(), 0..4), prop::option::of(id()))
        .prop_map(|(session_id, mode, mes_id, workflow_id, last_renewal, breakpoints, ctx)| DebugSessionInfo {
            session_id,
            mode,
            mes_id,
            workflow_id,
            last_renewal,
            breakpoints,
            chosen_context: if mode == DebugMode::Snapshot { ctx } else { None },
        })
}

pub fn notification() -> impl Strategy<Value = BreakpointNotification> {
    (id(), id(), id(), entry()).prop_map(|(aci_id, session_id, workflow_id, registry_entry)| BreakpointNotification {
        aci_id,
        session_id,
        workflow_id,
        registry_entry,
    })
}

pub fn registry() -> impl Strategy<Value = Vec<DebugSessionInfoEntry>> {
    prop::collection::vec(entry(), 0..6).prop_map(|mut v| {
        for (i, e) in v.iter_mut().enumerate() {
            e.entry_seq = i as u64 + 1;
        }
        v
    })
}

/// One generator per message variant, keyed by a snake_case label.
pub fn message_strategies() -> Vec<(&'static str, BoxedStrategy<DebugMessage>)> {
    vec![
        ("communication_started", id().prop_map(|aci_id| DebugMessage::CommunicationStarted(CommunicationStarted { aci_id })).boxed()),
        ("communication_attempt", id().prop_map(|aci_id| DebugMessage::CommunicationAttempt(CommunicationAttempt { aci_id })).boxed()),
        ("check_workflow_running", (id(), id(), prop::option::of(id())).prop_map(|(aci_id, workflow_id, session_id)| {
        DebugMessage::CheckWorkflowRunning(CheckWorkflowRunning { aci_id, workflow_id, session_id })
    }).boxed()),
        ("check_workflow_running_response", (id(), id(), any::<bool>(), prop::collection::vec(session(), 0..4)).prop_map(|(aci_id, workflow_id, running, sessions)| {
        DebugMessage::CheckWorkflowRunningResponse(CheckWorkflowRunningResponse { aci_id, workflow_id, running, sessions })
    }).boxed()),
        ("breakpoint_change", (id(), id(), id(), breakpoint()).prop_map(|(aci_id, workflow_id, session_id, breakpoint)| {
        DebugMessage::BreakpointChange(BreakpointChange { aci_id, workflow_id, session_id, breakpoint })
    }).boxed()),
        ("breakpoint_toggle", (id(), id(), id(), breakpoint()).prop_map(|(aci_id, workflow_id, session_id, breakpoint)| {
        DebugMessage::BreakpointToggle(BreakpointToggle { aci_id, workflow_id, session_id, breakpoint })
    }).boxed()),
        ("start_debug", (id(), id(), id(), remote_mode(), prop::collection::vec(breakpoint(), 0..5)).prop_map(
        |(aci_id, mes_id, workflow_id, debug_mode, breakpoints)| {
            DebugMessage::StartDebug(StartDebug { aci_id, mes_id, workflow_id, debug_mode, breakpoints })
        }
    ).boxed()),
        ("debug_started", (id(), id(), id(), id()).prop_map(|(mes_id, aci_id, workflow_id, session_id)| {
        DebugMessage::DebugStarted(DebugStarted { mes_id, aci_id, workflow_id, session_id })
    }).boxed()),
        ("stop_debug", (id(), id()).prop_map(|(aci_id, session_id)| DebugMessage::StopDebug(StopDebug { aci_id, session_id })).boxed()),
        ("debug_stopped", (id(), id(), registry()).prop_map(|(aci_id, session_id, registry)| {
        DebugMessage::DebugStopped(DebugStopped { aci_id, session_id, registry })
    }).boxed()),
        ("session_renewal", (id(), id()).prop_map(|(aci_id, session_id)| DebugMessage::SessionRenewal(SessionRenewal { aci_id, session_id })).boxed()),
        ("before_set_outputs", notification().prop_map(DebugMessage::BeforeSetOutputs).boxed()),
        ("after_set_inputs", notification().prop_map(DebugMessage::AfterSetInputs).boxed()),
        ("received_execution_context", (id(), id(), id(), id()).prop_map(|(aci_id, workflow_id, session_id, execution_context)| {
        DebugMessage::ReceivedExecutionContext(ReceivedExecutionContext { aci_id, workflow_id, session_id, execution_context })
    }).boxed()),
        ("available_aci_request", id().prop_map(|workflow_id| DebugMessage::AvailableAciRequest(AvailableAciRequest { workflow_id })).boxed()),
        ("available_aci_request_response", (id(), id(), any::<bool>()).prop_map(|(workflow_id, aci_id, running)| {
        DebugMessage::AvailableAciRequestResponse(AvailableAciRequestResponse { workflow_id, aci_id, running })
    }).boxed()),
    ]
}

pub fn sample_entry() -> DebugSessionInfoEntry {
    let bp = BreakpointDefinition::new("calib", "out", BreakpointSide::Output);
    DebugSessionInfoEntry {
        entry_seq: 1,
        timestamp: 1_700_000_000_000,
        context_id: "ctx9".into(),
        task_id: "calib".into(),
        port_id: "out".into(),
        side: BreakpointSide::Output,
        value: VariableValue::Float64(88.0),
        breakpoint: bp,
    }
}

/// One message per variant with the subject it must travel on.
pub fn golden() -> Vec<(DebugMessage, &'static str)> {
    let bp = BreakpointDefinition::new("calib", "out", BreakpointSide::Output);
    let note = BreakpointNotification {
        aci_id: "AC1".into(),
        session_id: "s42".into(),
        workflow_id: "press".into(),
        registry_entry: sample_entry(),
    };
    vec![
        (DebugMessage::CommunicationStarted(CommunicationStarted { aci_id: "AC1".into() }), "onCommunicationStarted"),
        (DebugMessage::CommunicationAttempt(CommunicationAttempt { aci_id: "AC1".into() }), "onCommunicationAttempt_AC1"),
        (
            DebugMessage::CheckWorkflowRunning(CheckWorkflowRunning {
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                session_id: Some("s42".into()),
            }),
            "onCheckWorkflowRunning_AC1",
        ),
        (
            DebugMessage::CheckWorkflowRunningResponse(CheckWorkflowRunningResponse {
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                running: true,
                sessions: vec![],
            }),
            "onCheckWorkflowRunningResponse_AC1_press",
        ),
        (
            DebugMessage::BreakpointChange(BreakpointChange {
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                session_id: "s42".into(),
                breakpoint: bp.clone(),
            }),
            "onBreakpointChange_AC1_press",
        ),
        (
            DebugMessage::BreakpointToggle(BreakpointToggle {
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                session_id: "s42".into(),
                breakpoint: bp.clone(),
            }),
            "onBreakpointToggle_AC1_press",
        ),
        (
            DebugMessage::StartDebug(StartDebug {
                aci_id: "AC1".into(),
                mes_id: "MES7".into(),
                workflow_id: "press".into(),
                debug_mode: DebugMode::Snapshot,
                breakpoints: vec![bp],
            }),
            "onStartDebug_AC1",
        ),
        (
            DebugMessage::DebugStarted(DebugStarted {
                mes_id: "MES7".into(),
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                session_id: "s42".into(),
            }),
            "onDebugStarted_MES7_AC1_press",
        ),
        (
            DebugMessage::StopDebug(StopDebug {
                aci_id: "AC1".into(),
                session_id: "s42".into(),
            }),
            "onStopDebug_AC1",
        ),
        (
            DebugMessage::DebugStopped(DebugStopped {
                aci_id: "AC1".into(),
                session_id: "s42".into(),
                registry: vec![sample_entry()],
            }),
            "onDebugStopped_AC1_s42",
        ),
        (
            DebugMessage::SessionRenewal(SessionRenewal {
                aci_id: "AC1".into(),
                session_id: "s42".into(),
            }),
            "onSessionRenewal_AC1",
        ),
        (DebugMessage::BeforeSetOutputs(note.clone()), "onBeforeSetOutputs_AC1_s42"),
        (DebugMessage::AfterSetInputs(note), "onAfterSetInputs_AC1_s42"),
        (
            DebugMessage::ReceivedExecutionContext(ReceivedExecutionContext {
                aci_id: "AC1".into(),
                workflow_id: "press".into(),
                session_id: "s42".into(),
                execution_context: "ctx9".into(),
            }),
            "onReceivedExecutionContext_AC1_press",
        ),
        (
            DebugMessage::AvailableAciRequest(AvailableAciRequest {
                workflow_id: "press".into(),
            }),
            "onAvailableACIRequest",
        ),
        (
            DebugMessage::AvailableAciRequestResponse(AvailableAciRequestResponse {
                workflow_id: "press".into(),
                aci_id: "AC1".into(),
                running: true,
            }),
            "onAvailableACIRequestResponse_press",
        ),
    ]
}

