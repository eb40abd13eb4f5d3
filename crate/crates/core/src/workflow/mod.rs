//! Event-driven workflow graphs: definitions, converters and the engine.

mod definition;
mod engine;
mod handle;
mod value;

pub use definition::{
    parse_workflow, LinkDefinition, PortDefinition, PortDirection, TaskDefinition, TaskKind,
    TransformFn, TransformSpec, ValidationReason, WorkflowDefinition, WorkflowError,
};
pub use engine::{
    compute, Engine, EngineError, EngineStatus, ExecutionContext, HookDelegate, HookEvent,
    HookSide, HookVerdict, ProceedAlways, TraceRecord,
};
pub use handle::{EngineHandle, EngineOptions};
pub use value::{apply_converter, cast_is_legal, ConversionError, ValueConverter, ValueTag, VariableValue};
