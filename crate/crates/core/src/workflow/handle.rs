use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::sleep_until;

use super::definition::{PortDirection, WorkflowDefinition};
use super::engine::{Engine, EngineError, EngineStatus, ExecutionContext, HookDelegate, TraceRecord};
use super::value::VariableValue;
use crate::clock::Clock;

enum Command {
    Inject {
        task_id: String,
        port_id: String,
        value: VariableValue,
        reply: oneshot::Sender<Result<Arc<ExecutionContext>, EngineError>>,
    },
    Resume,
    Trace(oneshot::Sender<Vec<TraceRecord>>),
    PortValue {
        task_id: String,
        direction: PortDirection,
        port_id: String,
        reply: oneshot::Sender<Option<VariableValue>>,
    },
    Stop,
}

#[derive(Default)]
pub struct EngineOptions {
    pub trace: bool,
    pub context_counter: Option<Arc<AtomicU64>>,
    pub clock: Option<Clock>,
}

/// Running engine. Cheap to clone; every clone signals the same engine task.
#[derive(Clone)]
pub struct EngineHandle {
    def: Arc<WorkflowDefinition>,
    tx: mpsc::UnboundedSender<Command>,
    status: watch::Receiver<EngineStatus>,
}

impl EngineHandle {
    /// Spawn the engine loop on the current tokio runtime.
    pub fn start(def: Arc<WorkflowDefinition>, hooks: Arc<dyn HookDelegate>) -> Self {
        Self::start_with(def, hooks, EngineOptions::default())
    }

    pub fn start_with(def: Arc<WorkflowDefinition>, hooks: Arc<dyn HookDelegate>, opts: EngineOptions) -> Self {
        let mut engine = Engine::new(def.clone());
        if let Some(counter) = opts.context_counter {
            engine = engine.with_context_counter(counter);
        }
        if opts.trace {
            engine = engine.with_trace();
        }
        let clock = opts.clock.unwrap_or_else(|| Clock::with_epoch(0));
        let (tx, rx) = mpsc::unbounded_channel();
        let (status_tx, status) = watch::channel(engine.status());
        tokio::spawn(run(engine, hooks, clock, rx, status_tx));
        EngineHandle { def, tx, status }
    }

    pub fn definition(&self) -> &Arc<WorkflowDefinition> {
        &self.def
    }

    pub fn workflow_id(&self) -> &str {
        &self.def.workflow_id
    }

    pub async fn inject(
        &self,
        task_id: &str,
        port_id: &str,
        value: VariableValue,
    ) -> Result<Arc<ExecutionContext>, EngineError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Command::Inject {
                task_id: task_id.to_string(),
                port_id: port_id.to_string(),
                value,
                reply,
            })
            .map_err(|_| EngineError::EngineStopped)?;
        rx.await.map_err(|_| EngineError::EngineStopped)?
    }

    /// Continue a suspended propagation step; no-op when nothing is suspended.
    pub fn resume(&self) {
        let _ = self.tx.send(Command::Resume);
    }

    pub fn stop(&self) {
        let _ = self.tx.send(Command::Stop);
    }

    pub fn is_stopped(&self) -> bool {
        self.tx.is_closed()
    }

    pub fn status(&self) -> EngineStatus {
        *self.status.borrow()
    }

    pub fn subscribe_status(&self) -> watch::Receiver<EngineStatus> {
        self.status.clone()
    }

    /// Wait until nothing is queued and nothing is suspended.
    pub async fn wait_quiescent(&self) -> Result<(), EngineError> {
        self.wait_for(EngineStatus::is_quiescent).await
    }

    pub async fn wait_suspended(&self) -> Result<(), EngineError> {
        self.wait_for(|s| s.suspended).await
    }

    pub async fn wait_for(&self, pred: impl Fn(&EngineStatus) -> bool) -> Result<(), EngineError> {
        let mut rx = self.status.clone();
        rx.wait_for(|s| pred(s)).await.map(|_| ()).map_err(|_| EngineError::EngineStopped)
    }

    /// Recorded trace (empty unless started with tracing on).
    pub async fn trace(&self) -> Result<Vec<TraceRecord>, EngineError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Command::Trace(reply)).map_err(|_| EngineError::EngineStopped)?;
        rx.await.map_err(|_| EngineError::EngineStopped)
    }

    pub async fn port_value(
        &self,
        task_id: &str,
        direction: PortDirection,
        port_id: &str,
    ) -> Result<Option<VariableValue>, EngineError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Command::PortValue {
                task_id: task_id.to_string(),
                direction,
                port_id: port_id.to_string(),
                reply,
            })
            .map_err(|_| EngineError::EngineStopped)?;
        rx.await.map_err(|_| EngineError::EngineStopped)
    }
}

async fn run(
    mut engine: Engine,
    hooks: Arc<dyn HookDelegate>,
    clock: Clock,
    mut rx: mpsc::UnboundedReceiver<Command>,
    status: watch::Sender<EngineStatus>,
) {
    // Runs due steps and publishes status before any reply goes out, so a
    // caller that awaited a reply never observes a stale status.
    let settle = |engine: &mut Engine| {
        engine.run_due(clock.elapsed_ms(), &*hooks);
        status.send_if_modified(|s| {
            let next = engine.status();
            let changed = *s != next;
            *s = next;
            changed
        });
    };
    loop {
        settle(&mut engine);
        let next_due = engine.next_due();
        let cmd = tokio::select! {
            biased;
            cmd = rx.recv() => cmd,
            _ = sleep_until(clock.instant_at(next_due.unwrap_or(0))), if next_due.is_some() => continue,
        };
        match cmd {
            None | Some(Command::Stop) => break,
            Some(Command::Inject { task_id, port_id, value, reply }) => {
                let res = engine.inject(&task_id, &port_id, value, clock.elapsed_ms(), &*hooks);
                settle(&mut engine);
                let _ = reply.send(res);
            }
            Some(Command::Resume) => {
                engine.resume(clock.elapsed_ms());
            }
            Some(Command::Trace(reply)) => {
                let _ = reply.send(engine.trace().to_vec());
            }
            Some(Command::PortValue { task_id, direction, port_id, reply }) => {
                let _ = reply.send(engine.port_value(&task_id, direction, &port_id).cloned());
            }
        }
    }
    // Closing the channel makes further signals report EngineStopped.
    rx.close();
}
