//! IoMT agent: hosts workflow engines and answers the debugging protocol.

mod controller;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock, Weak};
use std::time::Duration;

use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

pub use controller::{Action, AgentEvent, AgentLogRecord, Controller, IdGen, SyncOutcome, LOG_CAP};

use crate::bus::{BusClient, BusError, Subscription};
use crate::clock::Clock;
use crate::protocol::{
    subjects, validate_id, CommunicationStarted, DebugMessage, DebugSessionInfo, DebugSessionInfoEntry, Envelope,
    EnvelopeKind, ProtocolError,
};
use crate::workflow::{EngineHandle, EngineOptions, HookDelegate, HookEvent, HookVerdict, WorkflowDefinition};

#[derive(Clone)]
pub struct AgentConfig {
    /// Fixed instance id; a random one is generated when unset.
    pub aci_id: Option<String>,
    pub workflows: Vec<Arc<WorkflowDefinition>>,
    pub sweep_interval: Duration,
    pub session_expiry: Duration,
    /// How long a synchronous breakpoint waits for the MES before resuming.
    pub sync_reply_timeout: Duration,
    pub clock: Option<Clock>,
    /// Seed for instance and session ids.
    pub seed: Option<u64>,
    /// Record engine traces.
    pub trace: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            aci_id: None,
            workflows: Vec::new(),
            sweep_interval: Duration::from_secs(30),
            session_expiry: Duration::from_secs(35),
            sync_reply_timeout: Duration::from_secs(300),
            clock: None,
            seed: None,
            trace: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("bus unreachable: {0}")]
    BusUnreachable(#[from] BusError),
    #[error(transparent)]
    InvalidId(#[from] ProtocolError),
    #[error("workflow {0} loaded twice")]
    DuplicateWorkflow(String),
}

struct Shared {
    controller: Mutex<Controller>,
    bus: BusClient,
    clock: Clock,
    engines: OnceLock<HashMap<String, EngineHandle>>,
    sync_reply_timeout: Duration,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Controller> {
        self.controller.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Carry out controller actions. Runs under the controller lock so that
    /// messages leave in the order the controller decided them.
    fn execute(self: &Arc<Self>, actions: Vec<Action>, request: Option<&Envelope>) {
        for action in actions {
            match action {
                Action::Publish(message) => {
                    if let Err(e) = self.bus.publish(&message.subject(), message.payload()) {
                        tracing::warn!(subject = %message.subject(), error = %e, "publish failed");
                    }
                }
                Action::Reply(payload) => {
                    if let Some(req) = request {
                        if let Err(e) = self.bus.reply(req, payload) {
                            tracing::warn!(subject = %req.subject, error = %e, "reply failed");
                        }
                    }
                }
                Action::Resume { workflow_id } => {
                    if let Some(engine) = self.engines.get().and_then(|e| e.get(&workflow_id)) {
                        engine.resume();
                    }
                }
                Action::SyncRequest { message, workflow_id, token } => {
                    let shared = self.clone();
                    tokio::spawn(async move {
                        let sent = shared
                            .bus
                            .send_request(&message.subject(), message.payload(), shared.sync_reply_timeout)
                            .await;
                        let outcome = match sent {
                            Ok(_) => SyncOutcome::Replied,
                            Err(BusError::Timeout) => SyncOutcome::TimedOut,
                            Err(_) => SyncOutcome::Failed,
                        };
                        let now = shared.clock.elapsed_ms();
                        let mut ctl = shared.lock();
                        let actions = ctl.on_sync_outcome(&workflow_id, token, outcome, now);
                        shared.execute(actions, None);
                    });
                }
            }
        }
    }
}

struct AgentHooks {
    shared: Weak<Shared>,
    workflow_id: String,
}

impl HookDelegate for AgentHooks {
    fn on_hook(&self, event: &HookEvent) -> HookVerdict {
        let Some(shared) = self.shared.upgrade() else {
            return HookVerdict::Proceed;
        };
        let (now, wall) = (shared.clock.elapsed_ms(), shared.clock.now_ms());
        let mut ctl = shared.lock();
        let (verdict, actions) = ctl.on_hook(&self.workflow_id, event, now, wall);
        shared.execute(actions, None);
        verdict
    }
}

/// A running agent. Dropping the handle stops it.
pub struct AgentHandle {
    aci_id: String,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl AgentHandle {
    pub fn aci_id(&self) -> &str {
        &self.aci_id
    }

    pub fn engine(&self, workflow_id: &str) -> Option<EngineHandle> {
        self.shared.engines.get()?.get(workflow_id).cloned()
    }

    pub fn workflow_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.shared.engines.get().map(|e| e.keys().cloned().collect()).unwrap_or_default();
        ids.sort();
        ids
    }

    pub fn sessions(&self) -> Vec<DebugSessionInfo> {
        self.shared.lock().sessions()
    }

    pub fn registry(&self, session_id: &str) -> Option<Vec<DebugSessionInfoEntry>> {
        self.shared.lock().registry(session_id)
    }

    pub fn is_suspended(&self, workflow_id: &str) -> bool {
        self.shared.lock().is_suspended(workflow_id)
    }

    pub fn log(&self) -> Vec<AgentLogRecord> {
        self.shared.lock().log()
    }

    pub fn is_running(&self) -> bool {
        self.task.as_ref().is_some_and(|t| !t.is_finished())
    }

    /// Stop serving: engines halt and the bus connection closes.
    pub async fn shutdown(mut self) {
        self.signal_stop();
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    fn signal_stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.signal_stop();
    }
}

fn inbound_subjects(aci: &str, workflows: &[Arc<WorkflowDefinition>]) -> Vec<String> {
    let mut list = vec![
        subjects::communication_attempt(aci),
        subjects::check_workflow_running(aci),
        subjects::start_debug(aci),
        subjects::stop_debug(aci),
        subjects::session_renewal(aci),
        subjects::available_aci_request(),
    ];
    for wf in workflows {
        list.push(subjects::breakpoint_change(aci, &wf.workflow_id));
        list.push(subjects::breakpoint_toggle(aci, &wf.workflow_id));
        list.push(subjects::received_execution_context(aci, &wf.workflow_id));
    }
    list
}

/// Start an agent on `bus`: load the workflows, subscribe to every subject
/// addressed to this instance, announce it, and start the sweep timer.
pub async fn run_agent(bus: BusClient, config: AgentConfig) -> Result<AgentHandle, AgentError> {
    let mut ids = IdGen::new(config.seed);
    let aci_id = match config.aci_id.clone() {
        Some(id) => id,
        None => ids.next_id(),
    };
    validate_id("aciId", &aci_id)?;
    let mut seen = std::collections::HashSet::new();
    for wf in &config.workflows {
        if !seen.insert(wf.workflow_id.clone()) {
            return Err(AgentError::DuplicateWorkflow(wf.workflow_id.clone()));
        }
    }
    let clock = config.clock.unwrap_or_else(Clock::system);
    let controller = Controller::new(
        aci_id.clone(),
        config.workflows.iter().cloned(),
        config.session_expiry.as_millis() as u64,
        ids,
    );
    let shared = Arc::new(Shared {
        controller: Mutex::new(controller),
        bus: bus.clone(),
        clock,
        engines: OnceLock::new(),
        sync_reply_timeout: config.sync_reply_timeout,
    });
    let counter = Arc::new(std::sync::atomic::AtomicU64::new(0));
    let engines = config
        .workflows
        .iter()
        .map(|wf| {
            let hooks = Arc::new(AgentHooks {
                shared: Arc::downgrade(&shared),
                workflow_id: wf.workflow_id.clone(),
            });
            let opts = EngineOptions {
                trace: config.trace,
                context_counter: Some(counter.clone()),
                clock: Some(clock),
            };
            (wf.workflow_id.clone(), EngineHandle::start_with(wf.clone(), hooks, opts))
        })
        .collect::<HashMap<_, _>>();
    let _ = shared.engines.set(engines);

    let (tx, rx) = mpsc::channel(crate::bus::SUBSCRIPTION_QUEUE);
    let subs = inbound_subjects(&aci_id, &config.workflows)
        .iter()
        .map(|s| bus.subscribe_into(s, tx.clone()))
        .collect::<Result<Vec<_>, _>>();
    let subs = match subs {
        Ok(s) => s,
        Err(e) => {
            stop_engines(&shared);
            return Err(e.into());
        }
    };
    drop(tx);
    let started = DebugMessage::CommunicationStarted(CommunicationStarted { aci_id: aci_id.clone() });
    bus.publish(&started.subject(), started.payload())?;
    shared.lock().record(clock.elapsed_ms(), AgentEvent::Started { aci_id: aci_id.clone() });

    let (stop_tx, stop_rx) = oneshot::channel();
    let task = tokio::spawn(serve(shared.clone(), subs, rx, stop_rx, config.sweep_interval));
    Ok(AgentHandle {
        aci_id,
        shared,
        shutdown: Some(stop_tx),
        task: Some(task),
    })
}

fn stop_engines(shared: &Shared) {
    if let Some(engines) = shared.engines.get() {
        for e in engines.values() {
            e.stop();
        }
    }
}

async fn serve(
    shared: Arc<Shared>,
    subs: Vec<Subscription>,
    mut rx: mpsc::Receiver<Envelope>,
    mut stop: oneshot::Receiver<()>,
    sweep_interval: Duration,
) {
    let mut sweep = interval_at(Instant::now() + sweep_interval, sweep_interval);
    sweep.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = &mut stop => break,
            env = rx.recv() => {
                let Some(env) = env else { break };
                let message = match DebugMessage::from_envelope(&env) {
                    Ok(m) => m,
                    Err(e) => {
                        tracing::warn!(subject = %env.subject, error = %e, "undecodable message");
                        continue;
                    }
                };
                let in_band = env.kind == EnvelopeKind::Request;
                let now = shared.clock.elapsed_ms();
                let mut ctl = shared.lock();
                let actions = ctl.handle(message, in_band, now);
                shared.execute(actions, Some(&env));
            }
            _ = sweep.tick() => {
                let now = shared.clock.elapsed_ms();
                let mut ctl = shared.lock();
                let (_, actions) = ctl.sweep(now);
                shared.execute(actions, None);
            }
        }
    }
    drop(subs);
    stop_engines(&shared);
    shared.bus.disconnect();
}
