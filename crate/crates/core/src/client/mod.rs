//! MES-side debug client: discovery, link upkeep, sessions and the
//! frontend API a debugger page (or a script) drives.

mod api;
mod frontend;
mod machine;
mod mock;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;

pub use api::*;
pub use frontend::{serve_frontend, FrontendServer};
pub use mock::{run_mock_debug, ManualInput};

use crate::bus::BusClient;
use crate::clock::Clock;
use crate::protocol::validate_id;
use crate::workflow::WorkflowDefinition;

/// Frontend events kept in memory per client (older ones are discarded).
pub const EVENT_LOG_CAP: usize = 100_000;

#[derive(Clone)]
pub struct ClientConfig {
    pub mes_id: String,
    pub aci_request_interval: Duration,
    pub comm_attempt_interval: Duration,
    pub auto_select_window: Duration,
    pub aci_entry_expiry: Duration,
    /// Timeout for link probes and for start/stop answers.
    pub request_timeout: Duration,
    /// Definitions available for mock sessions.
    pub workflows: Vec<Arc<WorkflowDefinition>>,
    pub clock: Option<Clock>,
}

impl ClientConfig {
    pub fn new(mes_id: impl Into<String>) -> Self {
        ClientConfig {
            mes_id: mes_id.into(),
            aci_request_interval: Duration::from_secs(30),
            comm_attempt_interval: Duration::from_secs(10),
            auto_select_window: Duration::from_secs(5),
            aci_entry_expiry: Duration::from_secs(30),
            request_timeout: Duration::from_secs(3),
            workflows: Vec::new(),
            clock: None,
        }
    }
}

pub(crate) struct Outputs {
    events: broadcast::Sender<FrontendEventRecord>,
    log: Mutex<VecDeque<FrontendEventRecord>>,
    catalog: Mutex<Vec<AciCatalogEntry>>,
}

impl Outputs {
    fn emit(&self, at_ms: u64, event: FrontendEvent) {
        let record = FrontendEventRecord { at_ms, event };
        {
            let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
            if log.len() == EVENT_LOG_CAP {
                log.pop_front();
            }
            log.push_back(record.clone());
        }
        let _ = self.events.send(record);
    }
}

/// A running client. Cheap to clone; dropping the last clone stops it.
#[derive(Clone)]
pub struct ClientHandle {
    mes_id: String,
    cmd_tx: mpsc::Sender<(FrontendCommand, machine::Ack)>,
    state: watch::Receiver<ClientSnapshot>,
    outputs: Arc<Outputs>,
    task: Arc<Mutex<Option<JoinHandle<()>>>>,
}

impl ClientHandle {
    pub fn mes_id(&self) -> &str {
        &self.mes_id
    }

    /// Apply one frontend command. `start` returns once the agent answered.
    pub async fn command(&self, cmd: FrontendCommand) -> Result<(), ClientError> {
        let (tx, rx) = oneshot::channel();
        self.cmd_tx.send((cmd, tx)).await.map_err(|_| ClientError::Stopped)?;
        rx.await.map_err(|_| ClientError::Stopped)?
    }

    pub fn state(&self) -> ClientSnapshot {
        self.state.borrow().clone()
    }

    pub fn subscribe_state(&self) -> watch::Receiver<ClientSnapshot> {
        self.state.clone()
    }

    /// Wait until the state satisfies `pred`.
    pub async fn wait_for(&self, pred: impl Fn(&ClientSnapshot) -> bool) -> Result<ClientSnapshot, ClientError> {
        let mut rx = self.state.clone();
        let s = rx.wait_for(|s| pred(s)).await.map_err(|_| ClientError::Stopped)?;
        Ok(s.clone())
    }

    pub fn events(&self) -> broadcast::Receiver<FrontendEventRecord> {
        self.outputs.events.subscribe()
    }

    pub fn event_log(&self) -> Vec<FrontendEventRecord> {
        self.outputs.log.lock().unwrap_or_else(|e| e.into_inner()).iter().cloned().collect()
    }

    pub fn catalog(&self) -> Vec<AciCatalogEntry> {
        self.outputs.catalog.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Stop the client: subscriptions are dropped and the bus link closes.
    pub async fn shutdown(&self) {
        let task = self.task.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(task) = task {
            task.abort();
            let _ = task.await;
        }
    }
}

/// Start a client on `bus`.
pub fn run_client(bus: BusClient, config: ClientConfig) -> Result<ClientHandle, ClientError> {
    validate_id("mesId", &config.mes_id).map_err(|e| ClientError::InvalidState(e.to_string()))?;
    let clock = config.clock.unwrap_or_else(Clock::system);
    let (events, _) = broadcast::channel(4096);
    let outputs = Arc::new(Outputs {
        events,
        log: Mutex::new(VecDeque::new()),
        catalog: Mutex::new(Vec::new()),
    });
    let (cmd_tx, cmd_rx) = mpsc::channel(64);
    let mes_id = config.mes_id.clone();
    let (machine, channels, state) = machine::Machine::new(config, bus, clock, outputs.clone(), cmd_rx);
    let task = tokio::spawn(machine.run(channels));
    Ok(ClientHandle {
        mes_id,
        cmd_tx,
        state,
        outputs,
        task: Arc::new(Mutex::new(Some(task))),
    })
}
