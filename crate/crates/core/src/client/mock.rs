//! Mock mode: the workflow runs in-process, fed by manual inputs.

use std::sync::{Arc, Mutex};

use tokio::sync::mpsc;

use crate::clock::Clock;
use crate::protocol::{BreakpointDefinition, BreakpointSide, DebugSessionInfoEntry};
use crate::workflow::{Engine, EngineError, HookDelegate, HookEvent, HookVerdict, TraceRecord, VariableValue, WorkflowDefinition};

/// One manual input: an event-source output and its new value.
#[derive(Debug, Clone, PartialEq)]
pub struct ManualInput {
    pub task_id: String,
    pub port_id: String,
    pub value: VariableValue,
}

impl ManualInput {
    pub fn new(task_id: impl Into<String>, port_id: impl Into<String>, value: VariableValue) -> Self {
        ManualInput {
            task_id: task_id.into(),
            port_id: port_id.into(),
            value,
        }
    }
}

fn matching<'a>(breakpoints: &'a [BreakpointDefinition], ev: &HookEvent) -> Option<&'a BreakpointDefinition> {
    let side = BreakpointSide::of_hook(ev.side);
    breakpoints.iter().find(|b| b.enabled && b.matches(&ev.task_id, &ev.port_id, side))
}

/// Run `inputs` through a local engine one at a time, letting each settle
/// before the next. Every breakpoint hit suspends the engine and is resumed
/// straight away. Returns the full hook trace.
pub fn run_mock_debug(
    workflow: Arc<WorkflowDefinition>,
    breakpoints: &[BreakpointDefinition],
    inputs: &[ManualInput],
) -> Result<Vec<TraceRecord>, EngineError> {
    let bps = breakpoints.to_vec();
    let hooks = move |ev: &HookEvent| match matching(&bps, ev) {
        Some(_) => HookVerdict::SuspendUntilResume,
        None => HookVerdict::Proceed,
    };
    let mut engine = Engine::new(workflow).with_trace();
    let mut now = 0;
    for input in inputs {
        engine.inject(&input.task_id, &input.port_id, input.value.clone(), now, &hooks)?;
        loop {
            engine.run_due(now, &hooks);
            if engine.is_suspended() {
                engine.resume(now);
                continue;
            }
            match engine.next_due() {
                Some(due) => now = now.max(due),
                None => break,
            }
        }
    }
    Ok(engine.trace().to_vec())
}

pub(crate) enum MockEvent {
    Value(HookEvent),
    Triggered(DebugSessionInfoEntry),
}

#[derive(Default)]
pub(crate) struct MockGate {
    pub breakpoints: Vec<BreakpointDefinition>,
    pub suspended: bool,
    pub next_seq: u64,
}

/// Hook delegate of an interactive mock session: same pause-and-ignore
/// behavior as a synchronous remote session, reported to the client loop.
pub(crate) struct MockHooks {
    pub gate: Arc<Mutex<MockGate>>,
    pub events: mpsc::UnboundedSender<MockEvent>,
    pub clock: Clock,
}

impl HookDelegate for MockHooks {
    fn on_hook(&self, ev: &HookEvent) -> HookVerdict {
        let mut gate = self.gate.lock().unwrap_or_else(|e| e.into_inner());
        if gate.suspended {
            return HookVerdict::DropEvent;
        }
        let _ = self.events.send(MockEvent::Value(ev.clone()));
        let Some(bp) = matching(&gate.breakpoints, ev).cloned() else {
            return HookVerdict::Proceed;
        };
        gate.next_seq += 1;
        gate.suspended = true;
        let _ = self.events.send(MockEvent::Triggered(DebugSessionInfoEntry {
            entry_seq: gate.next_seq,
            timestamp: self.clock.now_ms(),
            context_id: ev.context.context_id.clone(),
            task_id: ev.task_id.clone(),
            port_id: ev.port_id.clone(),
            side: BreakpointSide::of_hook(ev.side),
            value: ev.value.clone(),
            breakpoint: bp,
        }));
        HookVerdict::SuspendUntilResume
    }
}
