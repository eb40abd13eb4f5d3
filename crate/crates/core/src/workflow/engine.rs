//! Deterministic workflow execution core.
//!
//! [`Engine`] owns port values and a time-ordered agenda of propagation
//! steps. It never sleeps: callers feed it the current time (milliseconds on
//! some monotonic clock) and a [`HookDelegate`]. The async driver in
//! [`super::handle`] wraps it in a task.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::definition::{PortDirection, TaskKind, TransformFn, WorkflowDefinition};
use super::value::{ConversionError, VariableValue};

/// Trace lineage of one equipment event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionContext {
    pub context_id: String,
    pub origin_task: String,
    pub origin_port: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HookSide {
    BeforeSetOutputs,
    AfterSetInputs,
}

impl HookSide {
    pub fn direction(self) -> PortDirection {
        match self {
            HookSide::BeforeSetOutputs => PortDirection::Output,
            HookSide::AfterSetInputs => PortDirection::Input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HookEvent {
    pub side: HookSide,
    pub task_id: String,
    pub port_id: String,
    pub value: VariableValue,
    pub context: Arc<ExecutionContext>,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HookVerdict {
    Proceed,
    SuspendUntilResume,
    /// Discard this value: it is not exposed (outputs) or does not trigger
    /// its task (inputs).
    DropEvent,
}

/// Decides what the engine does at each port write.
pub trait HookDelegate: Send + Sync {
    fn on_hook(&self, event: &HookEvent) -> HookVerdict;
}

impl<F> HookDelegate for F
where
    F: Fn(&HookEvent) -> HookVerdict + Send + Sync,
{
    fn on_hook(&self, event: &HookEvent) -> HookVerdict {
        self(event)
    }
}

/// Delegate that lets everything through.
pub struct ProceedAlways;

impl HookDelegate for ProceedAlways {
    fn on_hook(&self, _: &HookEvent) -> HookVerdict {
        HookVerdict::Proceed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "camelCase")]
pub enum TraceRecord {
    Hook {
        event: HookEvent,
        verdict: HookVerdict,
    },
    #[serde(rename_all = "camelCase")]
    Write {
        task_id: String,
        port_id: String,
        direction: PortDirection,
        value: VariableValue,
        context_id: String,
    },
    Resumed,
    #[serde(rename_all = "camelCase")]
    Failed {
        task_id: String,
        port_id: String,
        reason: String,
        context_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{task_id}.{port_id} is not an event-source output of this workflow")]
    UnknownPort { task_id: String, port_id: String },
    #[error("{task_id}.{port_id} expects a different value tag")]
    TagMismatch { task_id: String, port_id: String },
    #[error("engine stopped")]
    EngineStopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineStatus {
    pub suspended: bool,
    pub pending_steps: usize,
    pub contexts_created: u64,
    pub hooks_fired: u64,
}

impl EngineStatus {
    pub fn is_quiescent(&self) -> bool {
        !self.suspended && self.pending_steps == 0
    }
}

#[derive(Debug, Clone)]
struct Step {
    side: HookSide,
    task: usize,
    port: usize,
    value: VariableValue,
    context: Arc<ExecutionContext>,
    /// Verdict already obtained from the delegate (events judged while the
    /// engine was suspended).
    preset: Option<HookVerdict>,
}

#[derive(Debug)]
struct LinkTarget {
    task: usize,
    port: usize,
    converter: Option<super::value::ValueConverter>,
}

pub struct Engine {
    def: Arc<WorkflowDefinition>,
    /// out_links[task][output port] -> link targets in declaration order
    out_links: Vec<Vec<Vec<LinkTarget>>>,
    inputs: Vec<Vec<VariableValue>>,
    outputs: Vec<Vec<VariableValue>>,
    agenda: BTreeMap<(u64, u64), Step>,
    step_seq: u64,
    hook_seq: u64,
    suspended: Option<Step>,
    context_counter: Arc<AtomicU64>,
    contexts_created: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl Engine {
    pub fn new(def: Arc<WorkflowDefinition>) -> Self {
        let index: HashMap<&str, usize> = def
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.as_str(), i))
            .collect();
        let mut out_links: Vec<Vec<Vec<LinkTarget>>> = def
            .tasks
            .iter()
            .map(|t| t.outputs.iter().map(|_| Vec::new()).collect())
            .collect();
        for l in &def.links {
            let from = index[l.from_task.as_str()];
            let to = index[l.to_task.as_str()];
            let from_port = port_index(&def, from, PortDirection::Output, &l.from_port);
            let to_port = port_index(&def, to, PortDirection::Input, &l.to_port);
            out_links[from][from_port].push(LinkTarget {
                task: to,
                port: to_port,
                converter: l.converter.clone(),
            });
        }
        let defaults = |dir: PortDirection| {
            def.tasks
                .iter()
                .map(|t| {
                    let ports = match dir {
                        PortDirection::Input => &t.inputs,
                        PortDirection::Output => &t.outputs,
                    };
                    ports.iter().map(|p| p.value_tag.default_value()).collect()
                })
                .collect()
        };
        Engine {
            inputs: defaults(PortDirection::Input),
            outputs: defaults(PortDirection::Output),
            def,
            out_links,
            agenda: BTreeMap::new(),
            step_seq: 0,
            hook_seq: 0,
            suspended: None,
            context_counter: Arc::new(AtomicU64::new(0)),
            contexts_created: 0,
            trace: None,
        }
    }

    /// Share a context-id counter with other engines (ids stay unique across
    /// all of them).
    pub fn with_context_counter(mut self, counter: Arc<AtomicU64>) -> Self {
        self.context_counter = counter;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn definition(&self) -> &Arc<WorkflowDefinition> {
        &self.def
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn status(&self) -> EngineStatus {
        EngineStatus {
            suspended: self.suspended.is_some(),
            pending_steps: self.agenda.len(),
            contexts_created: self.contexts_created,
            hooks_fired: self.hook_seq,
        }
    }

    pub fn is_suspended(&self) -> bool {
        self.suspended.is_some()
    }

    /// Time of the next runnable step; `None` when idle or suspended.
    pub fn next_due(&self) -> Option<u64> {
        if self.suspended.is_some() {
            return None;
        }
        self.agenda.keys().next().map(|(due, _)| *due)
    }

    pub fn port_value(&self, task_id: &str, direction: PortDirection, port_id: &str) -> Option<&VariableValue> {
        let t = self.def.tasks.iter().position(|t| t.task_id == task_id)?;
        let ports = match direction {
            PortDirection::Input => &self.def.tasks[t].inputs,
            PortDirection::Output => &self.def.tasks[t].outputs,
        };
        let p = ports.iter().position(|p| p.port_id == port_id)?;
        match direction {
            PortDirection::Input => self.inputs[t].get(p),
            PortDirection::Output => self.outputs[t].get(p),
        }
    }

    /// Start a new execution context from an equipment variable change.
    ///
    /// The change is queued at `now`; while the engine is suspended its
    /// first hook is judged immediately and a dropped change never enters
    /// the agenda.
    pub fn inject(
        &mut self,
        task_id: &str,
        port_id: &str,
        value: VariableValue,
        now: u64,
        delegate: &dyn HookDelegate,
    ) -> Result<Arc<ExecutionContext>, EngineError> {
        let unknown = || EngineError::UnknownPort {
            task_id: task_id.to_string(),
            port_id: port_id.to_string(),
        };
        let task = self
            .def
            .tasks
            .iter()
            .position(|t| t.task_id == task_id && t.kind == TaskKind::EventSource)
            .ok_or_else(unknown)?;
        let port = self.def.tasks[task]
            .outputs
            .iter()
            .position(|p| p.port_id == port_id)
            .ok_or_else(unknown)?;
        if self.def.tasks[task].outputs[port].value_tag != value.tag() || !value.is_valid() {
            return Err(EngineError::TagMismatch {
                task_id: task_id.to_string(),
                port_id: port_id.to_string(),
            });
        }
        let n = self.context_counter.fetch_add(1, Ordering::Relaxed) + 1;
        self.contexts_created += 1;
        let context = Arc::new(ExecutionContext {
            context_id: n.to_string(),
            origin_task: task_id.to_string(),
            origin_port: port_id.to_string(),
            created_at: now,
        });
        let mut step = Step {
            side: HookSide::BeforeSetOutputs,
            task,
            port,
            value,
            context: context.clone(),
            preset: None,
        };
        if self.suspended.is_some() {
            let verdict = self.fire_hook(&step, delegate);
            if verdict == HookVerdict::DropEvent {
                return Ok(context);
            }
            step.preset = Some(verdict);
        }
        self.schedule(now, step);
        Ok(context)
    }

    /// Process every step due at or before `now`, stopping early on suspension.
    pub fn run_due(&mut self, now: u64, delegate: &dyn HookDelegate) {
        while self.suspended.is_none() {
            let Some(entry) = self.agenda.first_entry() else { break };
            if entry.key().0 > now {
                break;
            }
            let step = entry.remove();
            self.process(step, now, delegate);
        }
    }

    /// Continue the suspended step, if any. Returns whether one was resumed.
    pub fn resume(&mut self, now: u64) -> bool {
        match self.suspended.take() {
            Some(step) => {
                self.record(|| TraceRecord::Resumed);
                self.complete(step, now);
                true
            }
            None => false,
        }
    }

    fn schedule(&mut self, due: u64, step: Step) {
        self.step_seq += 1;
        self.agenda.insert((due, self.step_seq), step);
    }

    fn record(&mut self, f: impl FnOnce() -> TraceRecord) {
        if let Some(trace) = &mut self.trace {
            trace.push(f());
        }
    }

    fn port_id(&self, step: &Step) -> &str {
        let t = &self.def.tasks[step.task];
        match step.side {
            HookSide::BeforeSetOutputs => &t.outputs[step.port].port_id,
            HookSide::AfterSetInputs => &t.inputs[step.port].port_id,
        }
    }

    fn fire_hook(&mut self, step: &Step, delegate: &dyn HookDelegate) -> HookVerdict {
        self.hook_seq += 1;
        let event = HookEvent {
            side: step.side,
            task_id: self.def.tasks[step.task].task_id.clone(),
            port_id: self.port_id(step).to_string(),
            value: step.value.clone(),
            context: step.context.clone(),
            seq: self.hook_seq,
        };
        let verdict = delegate.on_hook(&event);
        self.record(|| TraceRecord::Hook { event, verdict });
        verdict
    }

    fn write(&mut self, step: &Step) {
        let direction = step.side.direction();
        let slot = match direction {
            PortDirection::Input => &mut self.inputs[step.task][step.port],
            PortDirection::Output => &mut self.outputs[step.task][step.port],
        };
        *slot = step.value.clone();
        if self.trace.is_some() {
            let record = TraceRecord::Write {
                task_id: self.def.tasks[step.task].task_id.clone(),
                port_id: self.port_id(step).to_string(),
                direction,
                value: step.value.clone(),
                context_id: step.context.context_id.clone(),
            };
            self.record(|| record);
        }
    }

    fn process(&mut self, mut step: Step, now: u64, delegate: &dyn HookDelegate) {
        if step.side == HookSide::AfterSetInputs {
            self.write(&step);
        }
        let verdict = match step.preset.take() {
            Some(v) => v,
            None => self.fire_hook(&step, delegate),
        };
        match verdict {
            HookVerdict::Proceed => self.complete(step, now),
            HookVerdict::DropEvent => {}
            HookVerdict::SuspendUntilResume => self.suspended = Some(step),
        }
    }

    fn complete(&mut self, step: Step, now: u64) {
        match step.side {
            HookSide::BeforeSetOutputs => {
                self.write(&step);
                let mut next = Vec::new();
                for target in &self.out_links[step.task][step.port] {
                    let converted = match &target.converter {
                        Some(c) => c.apply(&step.value),
                        None => Ok(step.value.clone()),
                    };
                    next.push((target.task, target.port, converted));
                }
                for (task, port, converted) in next {
                    match converted {
                        Ok(value) => self.schedule(
                            now,
                            Step {
                                side: HookSide::AfterSetInputs,
                                task,
                                port,
                                value,
                                context: step.context.clone(),
                                preset: None,
                            },
                        ),
                        Err(e) => self.fail(task, port, PortDirection::Input, &e.to_string(), &step.context),
                    }
                }
            }
            HookSide::AfterSetInputs => self.trigger(step.task, &step.context, now),
        }
    }

    /// A task input changed and was accepted: run the task body.
    fn trigger(&mut self, task: usize, context: &Arc<ExecutionContext>, now: u64) {
        let def = self.def.clone();
        let t = &def.tasks[task];
        if t.kind != TaskKind::Transform {
            // Sinks end the branch.
            return;
        }
        let spec = t.transform_spec.as_ref().expect("validated transform");
        match compute(spec.name, spec.threshold, &self.inputs[task]) {
            Ok(value) => {
                for port in 0..t.outputs.len() {
                    self.schedule(
                        now + spec.delay_ms,
                        Step {
                            side: HookSide::BeforeSetOutputs,
                            task,
                            port,
                            value: value.clone(),
                            context: context.clone(),
                            preset: None,
                        },
                    );
                }
            }
            Err(e) => self.fail(task, 0, PortDirection::Output, &e.to_string(), context),
        }
    }

    fn fail(&mut self, task: usize, port: usize, dir: PortDirection, reason: &str, ctx: &ExecutionContext) {
        tracing::warn!(task = %self.def.tasks[task].task_id, %reason, "propagation failed");
        if self.trace.is_some() {
            let t = &self.def.tasks[task];
            let port_id = match dir {
                PortDirection::Input => t.inputs.get(port),
                PortDirection::Output => t.outputs.get(port),
            }
            .map(|p| p.port_id.clone())
            .unwrap_or_default();
            let record = TraceRecord::Failed {
                task_id: t.task_id.clone(),
                port_id,
                reason: reason.to_string(),
                context_id: ctx.context_id.clone(),
            };
            self.record(|| record);
        }
    }
}

fn port_index(def: &WorkflowDefinition, task: usize, dir: PortDirection, port_id: &str) -> usize {
    let ports = match dir {
        PortDirection::Input => &def.tasks[task].inputs,
        PortDirection::Output => &def.tasks[task].outputs,
    };
    ports
        .iter()
        .position(|p| p.port_id == port_id)
        .expect("validated link endpoint")
}

/// Evaluate a built-in transform over the current input values.
pub fn compute(
    function: TransformFn,
    threshold: Option<f64>,
    inputs: &[VariableValue],
) -> Result<VariableValue, ConversionError> {
    match function {
        TransformFn::PassThrough => Ok(inputs[0].clone()),
        TransformFn::Sum => match inputs[0] {
            VariableValue::Int64(_) => inputs
                .iter()
                .try_fold(0i64, |acc, v| match v {
                    VariableValue::Int64(x) => acc.checked_add(*x).ok_or(ConversionError::OutOfRange),
                    other => Err(ConversionError::IllegalTag { converter: "sum", tag: other.tag() }),
                })
                .map(VariableValue::Int64),
            _ => {
                let total = inputs
                    .iter()
                    .map(|v| v.as_f64().ok_or(ConversionError::IllegalTag { converter: "sum", tag: v.tag() }))
                    .sum::<Result<f64, _>>()?;
                VariableValue::float(total)
            }
        },
        TransformFn::Threshold => {
            let v = inputs[0].as_f64().ok_or(ConversionError::IllegalTag {
                converter: "threshold",
                tag: inputs[0].tag(),
            })?;
            Ok(VariableValue::Bool(v >= threshold.unwrap_or(0.0)))
        }
        TransformFn::Concat => {
            let mut out = String::new();
            for v in inputs {
                match v {
                    VariableValue::Text(s) => out.push_str(s),
                    other => {
                        return Err(ConversionError::IllegalTag { converter: "concat", tag: other.tag() })
                    }
                }
            }
            Ok(VariableValue::Text(out))
        }
    }
}
