//! Workflow graph types and the JSON workflow file format.
//!
//! A workflow file looks like
//!
//! ```json
//! {
//!   "workflowId": "W1",
//!   "name": "press line",
//!   "tasks": [
//!     {"taskId": "src", "kind": "eventSource", "inputs": [],
//!      "outputs": [{"portId": "out", "valueTag": "int64"}]},
//!     {"taskId": "sink", "kind": "sink",
//!      "inputs": [{"portId": "in", "valueTag": "float64"}], "outputs": []}
//!   ],
//!   "links": [
//!     {"fromTask": "src", "fromPort": "out", "toTask": "sink", "toPort": "in",
//!      "converter": {"kind": "cast", "params": [], "target": "float64"}}
//!   ]
//! }
//! ```
//!
//! A `cast` converter without `target` casts to the destination port's tag.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::{ValueConverter, ValueTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TaskKind {
    #[serde(alias = "event-source")]
    EventSource,
    Transform,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PortDefinition {
    pub port_id: String,
    pub value_tag: ValueTag,
}

/// Built-in transform bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TransformFn {
    /// One input, copied to every output.
    PassThrough,
    /// Sum of all inputs (one numeric tag throughout).
    Sum,
    /// One numeric input; outputs `input >= threshold`.
    Threshold,
    /// Text inputs joined in declaration order.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransformSpec {
    pub name: TransformFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Processing latency before outputs are produced.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskDefinition {
    pub task_id: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub inputs: Vec<PortDefinition>,
    #[serde(default)]
    pub outputs: Vec<PortDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_spec: Option<TransformSpec>,
}

impl TaskDefinition {
    pub fn port(&self, direction: PortDirection, port_id: &str) -> Option<&PortDefinition> {
        let ports = match direction {
            PortDirection::Input => &self.inputs,
            PortDirection::Output => &self.outputs,
        };
        ports.iter().find(|p| p.port_id == port_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDefinition {
    pub from_task: String,
    pub from_port: String,
    pub to_task: String,
    pub to_port: String,
    pub converter: Option<ValueConverter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowDefinition {
    pub workflow_id: String,
    pub name: String,
    pub tasks: Vec<TaskDefinition>,
    pub links: Vec<LinkDefinition>,
}

impl WorkflowDefinition {
    pub fn task(&self, task_id: &str) -> Option<&TaskDefinition> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn event_sources(&self) -> impl Iterator<Item = &TaskDefinition> {
        self.tasks.iter().filter(|t| t.kind == TaskKind::EventSource)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WorkflowDocument::from(self)).expect("workflow serializes")
    }
}

impl Serialize for WorkflowDefinition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WorkflowDocument::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for WorkflowDefinition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = WorkflowDocument::deserialize(d)?;
        doc.validate().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invalid workflow element `{element}`: {reason}")]
    Validation {
        element: String,
        reason: ValidationReason,
    },
}

impl WorkflowError {
    fn invalid(element: impl Into<String>, reason: ValidationReason) -> Self {
        WorkflowError::Validation {
            element: element.into(),
            reason,
        }
    }

    /// Offending element id for validation errors.
    pub fn element(&self) -> Option<&str> {
        match self {
            WorkflowError::Validation { element, .. } => Some(element),
            WorkflowError::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationReason {
    EmptyId,
    DuplicateTask,
    DuplicatePort,
    PortShape(&'static str),
    UnknownTask,
    UnknownPort,
    TagMismatch { expected: ValueTag, found: ValueTag },
    IllegalConverter { converter: &'static str, input: ValueTag },
    BadConverterParams(&'static str),
    BadTransform(String),
    Cycle(Vec<String>),
    Unreachable,
}

impl fmt::Display for ValidationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationReason::EmptyId => f.write_str("empty identifier"),
            ValidationReason::DuplicateTask => f.write_str("duplicate task id"),
            ValidationReason::DuplicatePort => f.write_str("duplicate port id"),
            ValidationReason::PortShape(msg) => f.write_str(msg),
            ValidationReason::UnknownTask => f.write_str("link references an unknown task"),
            ValidationReason::UnknownPort => f.write_str("link references an unknown port"),
            ValidationReason::TagMismatch { expected, found } => {
                write!(f, "tag mismatch: destination expects {expected}, link delivers {found}")
            }
            ValidationReason::IllegalConverter { converter, input } => {
                write!(f, "converter {converter} cannot take {input}")
            }
            ValidationReason::BadConverterParams(msg) => f.write_str(msg),
            ValidationReason::BadTransform(msg) => f.write_str(msg),
            ValidationReason::Cycle(path) => write!(f, "cycle {}", path.join(" -> ")),
            ValidationReason::Unreachable => {
                f.write_str("input is not reachable from any event source")
            }
        }
    }
}

pub fn parse_workflow(document: &str) -> Result<WorkflowDefinition, WorkflowError> {
    let doc: WorkflowDocument =
        serde_json::from_str(document).map_err(|e| WorkflowError::Syntax(e.to_string()))?;
    doc.validate()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WorkflowDocument {
    workflow_id: String,
    #[serde(default)]
    name: String,
    tasks: Vec<TaskDefinition>,
    #[serde(default)]
    links: Vec<LinkDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct LinkDocument {
    from_task: String,
    from_port: String,
    to_task: String,
    to_port: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    converter: Option<ConverterDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ConverterDocument {
    kind: String,
    #[serde(default)]
    params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<ValueTag>,
}

impl From<&ValueConverter> for ConverterDocument {
    fn from(c: &ValueConverter) -> Self {
        let (params, target) = match *c {
            ValueConverter::Scale { factor } => (vec![factor], None),
            ValueConverter::Offset { delta } => (vec![delta], None),
            ValueConverter::Cast { target } => (vec![], Some(target)),
            ValueConverter::Identity | ValueConverter::BoolNegate => (vec![], None),
        };
        ConverterDocument {
            kind: c.kind_name().to_string(),
            params,
            target,
        }
    }
}

impl From<&WorkflowDefinition> for WorkflowDocument {
    fn from(def: &WorkflowDefinition) -> Self {
        WorkflowDocument {
            workflow_id: def.workflow_id.clone(),
            name: def.name.clone(),
            tasks: def.tasks.clone(),
            links: def
                .links
                .iter()
                .map(|l| LinkDocument {
                    from_task: l.from_task.clone(),
                    from_port: l.from_port.clone(),
                    to_task: l.to_task.clone(),
                    to_port: l.to_port.clone(),
                    converter: l.converter.as_ref().map(ConverterDocument::from),
                })
                .collect(),
        }
    }
}

fn link_label(l: &LinkDocument) -> String {
    format!("{}.{}->{}.{}", l.from_task, l.from_port, l.to_task, l.to_port)
}

impl ConverterDocument {
    fn resolve(&self, destination: ValueTag, element: &str) -> Result<ValueConverter, WorkflowError> {
        let bad = |msg| WorkflowError::invalid(element, ValidationReason::BadConverterParams(msg));
        let single = |params: &[f64]| match params {
            [p] if p.is_finite() => Ok(*p),
            _ => Err(bad("expects exactly one finite parameter")),
        };
        match self.kind.as_str() {
            "identity" => Ok(ValueConverter::Identity),
            "boolNegate" => Ok(ValueConverter::BoolNegate),
            "cast" => Ok(ValueConverter::Cast {
                target: self.target.unwrap_or(destination),
            }),
            "scale" => Ok(ValueConverter::Scale {
                factor: single(&self.params)?,
            }),
            "offset" => Ok(ValueConverter::Offset {
                delta: single(&self.params)?,
            }),
            _ => Err(bad("unknown converter kind")),
        }
    }
}

impl WorkflowDocument {
    fn validate(self) -> Result<WorkflowDefinition, WorkflowError> {
        if self.workflow_id.is_empty() {
            return Err(WorkflowError::invalid("workflowId", ValidationReason::EmptyId));
        }
        let mut by_id: HashMap<&str, &TaskDefinition> = HashMap::new();
        for task in &self.tasks {
            if task.task_id.is_empty() {
                return Err(WorkflowError::invalid("taskId", ValidationReason::EmptyId));
            }
            if by_id.insert(task.task_id.as_str(), task).is_some() {
                return Err(WorkflowError::invalid(&task.task_id, ValidationReason::DuplicateTask));
            }
            check_task(task)?;
        }

        let mut links = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let label = link_label(link);
            let from = by_id
                .get(link.from_task.as_str())
                .ok_or_else(|| WorkflowError::invalid(&link.from_task, ValidationReason::UnknownTask))?;
            let to = by_id
                .get(link.to_task.as_str())
                .ok_or_else(|| WorkflowError::invalid(&link.to_task, ValidationReason::UnknownTask))?;
            let src = from.port(PortDirection::Output, &link.from_port).ok_or_else(|| {
                WorkflowError::invalid(
                    format!("{}.{}", link.from_task, link.from_port),
                    ValidationReason::UnknownPort,
                )
            })?;
            let dst = to.port(PortDirection::Input, &link.to_port).ok_or_else(|| {
                WorkflowError::invalid(
                    format!("{}.{}", link.to_task, link.to_port),
                    ValidationReason::UnknownPort,
                )
            })?;
            let converter = link
                .converter
                .as_ref()
                .map(|c| c.resolve(dst.value_tag, &label))
                .transpose()?;
            let delivered = match &converter {
                None => src.value_tag,
                Some(c) => c.output_tag(src.value_tag).ok_or_else(|| {
                    WorkflowError::invalid(
                        &label,
                        ValidationReason::IllegalConverter {
                            converter: c.kind_name(),
                            input: src.value_tag,
                        },
                    )
                })?,
            };
            if delivered != dst.value_tag {
                return Err(WorkflowError::invalid(
                    &label,
                    ValidationReason::TagMismatch {
                        expected: dst.value_tag,
                        found: delivered,
                    },
                ));
            }
            links.push(LinkDefinition {
                from_task: link.from_task.clone(),
                from_port: link.from_port.clone(),
                to_task: link.to_task.clone(),
                to_port: link.to_port.clone(),
                converter,
            });
        }

        if let Some(cycle) = find_cycle(&self.tasks, &links) {
            return Err(WorkflowError::invalid(
                cycle[0].clone(),
                ValidationReason::Cycle(cycle),
            ));
        }
        check_reachability(&self.tasks, &links)?;

        Ok(WorkflowDefinition {
            workflow_id: self.workflow_id,
            name: self.name,
            tasks: self.tasks,
            links,
        })
    }
}

fn check_task(task: &TaskDefinition) -> Result<(), WorkflowError> {
    let shape = |msg| Err(WorkflowError::invalid(&task.task_id, ValidationReason::PortShape(msg)));
    let mut seen = HashSet::new();
    for p in task.inputs.iter().chain(&task.outputs) {
        if p.port_id.is_empty() {
            return Err(WorkflowError::invalid(&task.task_id, ValidationReason::EmptyId));
        }
        if !seen.insert(p.port_id.as_str()) {
            return Err(WorkflowError::invalid(
                format!("{}.{}", task.task_id, p.port_id),
                ValidationReason::DuplicatePort,
            ));
        }
    }
    match task.kind {
        TaskKind::EventSource if !task.inputs.is_empty() => shape("event source cannot have inputs"),
        TaskKind::EventSource if task.outputs.is_empty() => shape("event source needs an output"),
        TaskKind::Sink if !task.outputs.is_empty() => shape("sink cannot have outputs"),
        TaskKind::Sink if task.inputs.is_empty() => shape("sink needs an input"),
        TaskKind::Transform if task.inputs.is_empty() || task.outputs.is_empty() => {
            shape("transform needs inputs and outputs")
        }
        TaskKind::Transform => check_transform(task),
        _ if task.transform_spec.is_some() => shape("only transforms take a transformSpec"),
        _ => Ok(()),
    }
}

fn check_transform(task: &TaskDefinition) -> Result<(), WorkflowError> {
    let bad = |msg: String| Err(WorkflowError::invalid(&task.task_id, ValidationReason::BadTransform(msg)));
    let Some(spec) = &task.transform_spec else {
        return bad("transform without transformSpec".into());
    };
    let in_tags: Vec<ValueTag> = task.inputs.iter().map(|p| p.value_tag).collect();
    let out_tag = |want: ValueTag| {
        task.outputs
            .iter()
            .find(|p| p.value_tag != want)
            .map(|p| format!("output {} must be {want}", p.port_id))
    };
    let problem = match spec.name {
        TransformFn::PassThrough => {
            if in_tags.len() != 1 {
                Some("passThrough takes exactly one input".to_string())
            } else {
                out_tag(in_tags[0])
            }
        }
        TransformFn::Sum => {
            let first = in_tags[0];
            if !first.is_numeric() || in_tags.iter().any(|t| *t != first) {
                Some("sum inputs must share one numeric tag".to_string())
            } else {
                out_tag(first)
            }
        }
        TransformFn::Threshold => {
            if in_tags.len() != 1 || !in_tags[0].is_numeric() {
                Some("threshold takes one numeric input".to_string())
            } else if !spec.threshold.is_some_and(f64::is_finite) {
                Some("threshold needs a finite `threshold` parameter".to_string())
            } else {
                out_tag(ValueTag::Bool)
            }
        }
        TransformFn::Concat => {
            if in_tags.iter().any(|t| *t != ValueTag::Text) {
                Some("concat inputs must be text".to_string())
            } else {
                out_tag(ValueTag::Text)
            }
        }
    };
    match problem {
        Some(msg) => bad(msg),
        None => Ok(()),
    }
}

/// Depth-first search over the task graph; returns the task ids of one cycle.
fn find_cycle(tasks: &[TaskDefinition], links: &[LinkDefinition]) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let index: HashMap<&str, usize> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    let mut succ = vec![Vec::new(); tasks.len()];
    for l in links {
        succ[index[l.from_task.as_str()]].push(index[l.to_task.as_str()]);
    }
    let mut mark = vec![Mark::New; tasks.len()];
    for root in 0..tasks.len() {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next successor position)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&next) = succ[node].get(*pos) {
                *pos += 1;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Active;
                        stack.push((next, 0));
                    }
                    Mark::Active => {
                        let start = stack.iter().position(|(n, _)| *n == next).unwrap();
                        let mut path: Vec<String> = stack[start..]
                            .iter()
                            .map(|(n, _)| tasks[*n].task_id.clone())
                            .collect();
                        path.push(tasks[next].task_id.clone());
                        return Some(path);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

fn check_reachability(tasks: &[TaskDefinition], links: &[LinkDefinition]) -> Result<(), WorkflowError> {
    let mut reached: HashSet<(&str, &str)> = HashSet::new();
    let mut queue: VecDeque<&str> = tasks
        .iter()
        .filter(|t| t.kind == TaskKind::EventSource)
        .map(|t| t.task_id.as_str())
        .collect();
    let mut visited: HashSet<&str> = queue.iter().copied().collect();
    while let Some(task) = queue.pop_front() {
        for l in links.iter().filter(|l| l.from_task == task) {
            reached.insert((l.to_task.as_str(), l.to_port.as_str()));
            if visited.insert(l.to_task.as_str()) {
                queue.push_back(l.to_task.as_str());
            }
        }
    }
    for t in tasks.iter().filter(|t| t.kind == TaskKind::Transform) {
        for p in &t.inputs {
            if !reached.contains(&(t.task_id.as_str(), p.port_id.as_str())) {
                return Err(WorkflowError::invalid(
                    format!("{}.{}", t.task_id, p.port_id),
                    ValidationReason::Unreachable,
                ));
            }
        }
    }
    Ok(())
}
