//! Remote debugging for event-driven industrial workflows.

pub mod agent;
pub mod bus;
pub mod client;
pub mod clock;
pub mod protocol;
pub mod simkit;
pub mod workflow;

pub use clock::Clock;
pub use protocol::{BreakpointDefinition, BreakpointSide, DebugMessage, DebugMode, DebugSessionInfoEntry};
pub use workflow::{EngineHandle, VariableValue, WorkflowDefinition};
