use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::sleep_until;

use super::api::*;
use super::mock::{MockEvent, MockGate, MockHooks};
use super::{ClientConfig, Outputs};
use crate::bus::{BusClient, BusError, Subscription};
use crate::clock::Clock;
use crate::protocol::{
    compute_availability, subjects, AvailableAciRequest, BreakpointChange, BreakpointDefinition, BreakpointNotification,
    BreakpointSide, BreakpointToggle, CheckWorkflowRunning, CommunicationAttempt, CommunicationAttemptReply,
    DebugMessage, DebugMode, DebugSessionInfo, DebugSessionInfoEntry, Envelope, EnvelopeKind,
    ReceivedExecutionContext, ResumeReply, SessionRenewal, StartDebug, StopDebug,
};
use crate::workflow::{EngineHandle, EngineOptions, WorkflowDefinition};

pub(crate) type Ack = oneshot::Sender<Result<(), ClientError>>;

struct RemoteSession {
    session_id: String,
    mode: DebugMode,
    stopping: bool,
}

struct PendingStart {
    ack: Ack,
    deadline: u64,
}

struct MockSession {
    engine: EngineHandle,
    gate: Arc<Mutex<MockGate>>,
}

pub(crate) struct Machine {
    cfg: ClientConfig,
    bus: BusClient,
    clock: Clock,
    library: HashMap<String, Arc<WorkflowDefinition>>,

    workflow_id: Option<String>,
    mode: DebugMode,
    catalog: BTreeMap<String, AciCatalogEntry>,
    selected_aci: Option<String>,
    link: LinkStatus,
    running: bool,
    agent_sessions: Vec<DebugSessionInfo>,
    breakpoints: Vec<BreakpointDefinition>,

    session: Option<RemoteSession>,
    pending_start: Option<PendingStart>,
    stop_deadline: Option<u64>,
    sync_duty: Option<(Envelope, DebugSessionInfoEntry)>,
    queue: VecDeque<DebugSessionInfoEntry>,
    chosen_context: Option<String>,
    draining: bool,
    replay: Option<(Vec<DebugSessionInfoEntry>, usize)>,
    mock: Option<MockSession>,
    mock_triggered: Option<DebugSessionInfoEntry>,
    protocol_violation: bool,
    values: BTreeMap<(String, String, BreakpointSide), PortValue>,
    active_context: Option<String>,

    next_round: Option<u64>,
    window_close: Option<u64>,
    next_probe: Option<u64>,
    probe_gen: u64,

    subs: HashMap<String, Subscription>,
    env_tx: mpsc::Sender<Envelope>,
    probe_tx: mpsc::UnboundedSender<(u64, String, Result<(), BusError>)>,
    mock_tx: mpsc::UnboundedSender<MockEvent>,

    outputs: Arc<Outputs>,
    state_tx: watch::Sender<ClientSnapshot>,
    last_catalog: Vec<(String, bool)>,
    acks: Vec<(Ack, Result<(), ClientError>)>,
}

pub(crate) struct Channels {
    pub cmd_rx: mpsc::Receiver<(FrontendCommand, Ack)>,
    pub env_rx: mpsc::Receiver<Envelope>,
    pub probe_rx: mpsc::UnboundedReceiver<(u64, String, Result<(), BusError>)>,
    pub mock_rx: mpsc::UnboundedReceiver<MockEvent>,
}

impl Machine {
    pub(crate) fn new(
        cfg: ClientConfig,
        bus: BusClient,
        clock: Clock,
        outputs: Arc<Outputs>,
        cmd_rx: mpsc::Receiver<(FrontendCommand, Ack)>,
    ) -> (Self, Channels, watch::Receiver<ClientSnapshot>) {
        let (env_tx, env_rx) = mpsc::channel(crate::bus::SUBSCRIPTION_QUEUE);
        let (probe_tx, probe_rx) = mpsc::unbounded_channel();
        let (mock_tx, mock_rx) = mpsc::unbounded_channel();
        let (state_tx, state_rx) = watch::channel(placeholder());
        let library = cfg.workflows.iter().map(|w| (w.workflow_id.clone(), w.clone())).collect();
        let m = Machine {
            bus,
            clock,
            library,
            workflow_id: None,
            mode: DebugMode::Synchronous,
            catalog: BTreeMap::new(),
            selected_aci: None,
            link: LinkStatus::None,
            running: false,
            agent_sessions: Vec::new(),
            breakpoints: Vec::new(),
            session: None,
            pending_start: None,
            stop_deadline: None,
            sync_duty: None,
            queue: VecDeque::new(),
            chosen_context: None,
            draining: false,
            replay: None,
            mock: None,
            mock_triggered: None,
            protocol_violation: false,
            values: BTreeMap::new(),
            active_context: None,
            next_round: None,
            window_close: None,
            next_probe: None,
            probe_gen: 0,
            subs: HashMap::new(),
            env_tx,
            probe_tx,
            mock_tx,
            outputs,
            state_tx,
            last_catalog: Vec::new(),
            acks: Vec::new(),
            cfg,
        };
        m.state_tx.send_replace(m.snapshot());
        (m, Channels { cmd_rx, env_rx, probe_rx, mock_rx }, state_rx)
    }

    fn now(&self) -> u64 {
        self.clock.elapsed_ms()
    }

    pub(crate) async fn run(mut self, mut ch: Channels) {
        self.emit(FrontendEvent::StateChanged {
            state: Box::new(self.snapshot()),
        });
        loop {
            self.reconcile_subscriptions();
            self.publish_state();
            for (ack, result) in self.acks.drain(..) {
                let _ = ack.send(result);
            }
            let deadline = [
                self.next_round,
                self.window_close,
                self.next_probe,
                self.pending_start.as_ref().map(|p| p.deadline),
                self.stop_deadline,
            ]
            .into_iter()
            .flatten()
            .min();
            tokio::select! {
                biased;
                cmd = ch.cmd_rx.recv() => match cmd {
                    Some((cmd, ack)) => self.command(cmd, ack).await,
                    None => break,
                },
                Some(env) = ch.env_rx.recv() => self.on_envelope(env),
                Some((gen, aci, result)) = ch.probe_rx.recv() => self.on_probe(gen, &aci, result),
                Some(ev) = ch.mock_rx.recv() => self.on_mock(ev),
                _ = sleep_until(self.clock.instant_at(deadline.unwrap_or(0))), if deadline.is_some() => {
                    self.on_timers(self.now());
                }
            }
        }
    }

    // ---- outputs -------------------------------------------------------

    fn emit(&self, event: FrontendEvent) {
        self.outputs.emit(self.now(), event);
    }

    fn publish(&self, message: DebugMessage) {
        if let Err(e) = self.bus.publish(&message.subject(), message.payload()) {
            tracing::warn!(subject = %message.subject(), error = %e, "publish failed");
        }
    }

    fn publish_state(&mut self) {
        let snapshot = self.snapshot();
        if *self.state_tx.borrow() != snapshot {
            self.state_tx.send_replace(snapshot.clone());
            self.emit(FrontendEvent::StateChanged {
                state: Box::new(snapshot),
            });
        }
        let catalog: Vec<(String, bool)> = self.catalog.values().map(|e| (e.aci_id.clone(), e.running)).collect();
        if catalog != self.last_catalog {
            self.last_catalog = catalog;
            let entries: Vec<AciCatalogEntry> = self.catalog.values().cloned().collect();
            *self.outputs.catalog.lock().unwrap() = entries.clone();
            self.emit(FrontendEvent::CatalogChanged { entries });
        }
    }

    fn desired_subjects(&self) -> Vec<String> {
        let mut d = vec![subjects::communication_started()];
        let Some(wf) = &self.workflow_id else { return d };
        d.push(subjects::available_aci_request_response(wf));
        let Some(aci) = &self.selected_aci else { return d };
        d.push(subjects::check_workflow_running_response(aci, wf));
        d.push(subjects::debug_started(&self.cfg.mes_id, aci, wf));
        if let Some(s) = &self.session {
            d.push(subjects::debug_stopped(aci, &s.session_id));
            d.push(subjects::before_set_outputs(aci, &s.session_id));
            d.push(subjects::after_set_inputs(aci, &s.session_id));
        }
        d
    }

    fn reconcile_subscriptions(&mut self) {
        let desired = self.desired_subjects();
        self.subs.retain(|s, _| desired.contains(s));
        for subject in desired {
            if self.subs.contains_key(&subject) {
                continue;
            }
            match self.bus.subscribe_into(&subject, self.env_tx.clone()) {
                Ok(sub) => {
                    self.subs.insert(subject, sub);
                }
                Err(e) => tracing::warn!(%subject, error = %e, "subscribe failed"),
            }
        }
    }

    fn availability(&self) -> Availability {
        if !self.running || self.link != LinkStatus::Connected {
            return Availability::default();
        }
        let modes = || self.agent_sessions.iter().map(|s| s.mode);
        Availability {
            synchronous: compute_availability(modes(), DebugMode::Synchronous),
            snapshot: compute_availability(modes(), DebugMode::Snapshot),
            profiler: compute_availability(modes(), DebugMode::Profiler),
        }
    }

    fn phase(&self) -> Phase {
        if self.replay.is_some() {
            Phase::Replaying
        } else if self.session.is_some() || self.draining || self.mock.is_some() {
            Phase::Debugging
        } else if self.workflow_id.is_none() {
            Phase::Idle
        } else if self.selected_aci.is_some() {
            Phase::Linked
        } else {
            Phase::Discovering
        }
    }

    fn triggered(&self) -> Option<&DebugSessionInfoEntry> {
        if let Some((registry, cursor)) = &self.replay {
            return registry.get(*cursor);
        }
        self.sync_duty
            .as_ref()
            .map(|(_, e)| e)
            .or(self.queue.front())
            .or(self.mock_triggered.as_ref())
    }

    fn breakpoints_editable(&self) -> bool {
        let fixed = matches!(&self.session, Some(s) if s.mode != DebugMode::Synchronous);
        !(fixed || self.draining || self.replay.is_some())
    }

    fn snapshot(&self) -> ClientSnapshot {
        let phase = self.phase();
        let availability = self.availability();
        let mock_ready = self.workflow_id.as_ref().is_some_and(|w| self.library.contains_key(w));
        let workflow_available = match self.mode {
            DebugMode::Mock => mock_ready,
            m => availability.get(m),
        };
        let start_enabled = match self.mode {
            DebugMode::Mock => mock_ready && matches!(phase, Phase::Discovering | Phase::Linked),
            _ => phase == Phase::Linked && workflow_available && self.pending_start.is_none(),
        };
        let triggered = self.triggered().cloned();
        let breakpoints = self
            .breakpoints
            .iter()
            .map(|bp| BreakpointView {
                breakpoint: bp.clone(),
                state: if triggered.as_ref().is_some_and(|t| t.breakpoint.same_point(bp)) {
                    BreakpointState::Triggered
                } else if bp.enabled {
                    BreakpointState::Set
                } else {
                    BreakpointState::Disabled
                },
            })
            .collect();
        ClientSnapshot {
            mes_id: self.cfg.mes_id.clone(),
            phase,
            link: self.link,
            workflow_id: self.workflow_id.clone(),
            selected_aci: self.selected_aci.clone(),
            mode: self.mode,
            session_id: self.session.as_ref().map(|s| s.session_id.clone()),
            workflow_running: self.running,
            availability,
            workflow_available,
            start_enabled,
            breakpoints_editable: self.breakpoints_editable(),
            breakpoints: self.breakpoints.clone(),
            pending_breakpoints: self.queue.len(),
            chosen_context: self.chosen_context.clone(),
            triggered,
            replay: self.replay.as_ref().map(|(r, c)| ReplayCursor {
                cursor: *c,
                total: r.len(),
            }),
            protocol_violation: self.protocol_violation,
            agent_sessions: self.agent_sessions.clone(),
            view: WorkflowView {
                values: self.values.values().cloned().collect(),
                breakpoints,
                active_context: self.active_context.clone(),
            },
        }
    }

    fn show(&mut self, mode: DebugMode, entry: &DebugSessionInfoEntry) {
        self.values.insert(
            (entry.task_id.clone(), entry.port_id.clone(), entry.side),
            PortValue {
                task_id: entry.task_id.clone(),
                port_id: entry.port_id.clone(),
                side: entry.side,
                value: entry.value.clone(),
            },
        );
        self.active_context = Some(entry.context_id.clone());
        self.emit(FrontendEvent::BreakpointTriggered {
            mode,
            entry: entry.clone(),
        });
    }

    fn show_replay(&mut self) {
        let Some((registry, cursor)) = &self.replay else { return };
        let (cursor, total, entry) = (*cursor, registry.len(), registry.get(*cursor).cloned());
        if let Some(e) = &entry {
            self.show(DebugMode::Profiler, e);
        }
        self.emit(FrontendEvent::ReplayPosition { cursor, total, entry });
    }

    // ---- discovery and link --------------------------------------------

    fn discovery_round(&mut self, now: u64) {
        let Some(wf) = self.workflow_id.clone() else { return };
        self.expire_catalog(now);
        self.publish(DebugMessage::AvailableAciRequest(AvailableAciRequest { workflow_id: wf }));
        self.window_close = Some(now + self.cfg.auto_select_window.as_millis() as u64);
        self.next_round = Some(now + self.cfg.aci_request_interval.as_millis() as u64);
    }

    fn expire_catalog(&mut self, now: u64) {
        let expiry = self.cfg.aci_entry_expiry.as_millis() as u64;
        self.catalog.retain(|_, e| now.saturating_sub(e.last_seen) <= expiry);
    }

    fn close_window(&mut self, now: u64) {
        self.window_close = None;
        self.expire_catalog(now);
        if self.selected_aci.is_some() {
            return;
        }
        let mut running = self.catalog.values().filter(|e| e.running);
        if let (Some(only), None) = (running.next(), running.next()) {
            let aci = only.aci_id.clone();
            tracing::info!(%aci, "auto-selecting the only running controller");
            self.select_aci(aci, now);
        }
    }

    fn select_aci(&mut self, aci: String, now: u64) {
        self.selected_aci = Some(aci);
        self.link = LinkStatus::None;
        self.running = false;
        self.agent_sessions.clear();
        self.probe(now);
    }

    fn probe(&mut self, now: u64) {
        let Some(aci) = self.selected_aci.clone() else { return };
        self.probe_gen += 1;
        self.next_probe = Some(now + self.cfg.comm_attempt_interval.as_millis() as u64);
        let message = DebugMessage::CommunicationAttempt(CommunicationAttempt { aci_id: aci.clone() });
        let (bus, tx, gen, timeout) = (self.bus.clone(), self.probe_tx.clone(), self.probe_gen, self.cfg.request_timeout);
        tokio::spawn(async move {
            let result = bus
                .send_request(&message.subject(), message.payload(), timeout)
                .await
                .and_then(|reply| match serde_json::from_slice::<CommunicationAttemptReply>(&reply) {
                    Ok(r) if r.connected => Ok(()),
                    _ => Err(BusError::InvalidPayload("negative or malformed attempt reply".into())),
                });
            let _ = tx.send((gen, aci, result));
        });
    }

    fn on_probe(&mut self, gen: u64, aci: &str, result: Result<(), BusError>) {
        if gen != self.probe_gen || self.selected_aci.as_deref() != Some(aci) {
            return;
        }
        match result {
            Ok(()) => {
                self.link = LinkStatus::Connected;
                self.check_workflow();
                if let Some(s) = &self.session {
                    self.publish(DebugMessage::SessionRenewal(SessionRenewal {
                        aci_id: aci.to_string(),
                        session_id: s.session_id.clone(),
                    }));
                }
            }
            Err(e) => {
                if self.link != LinkStatus::Down {
                    tracing::warn!(%aci, error = %e, "controller link down");
                }
                self.link = LinkStatus::Down;
                self.running = false;
                self.agent_sessions.clear();
                self.drop_session();
            }
        }
    }

    fn check_workflow(&self) {
        let (Some(aci), Some(wf)) = (&self.selected_aci, &self.workflow_id) else { return };
        self.publish(DebugMessage::CheckWorkflowRunning(CheckWorkflowRunning {
            aci_id: aci.clone(),
            workflow_id: wf.clone(),
            session_id: self.session.as_ref().map(|s| s.session_id.clone()),
        }));
    }

    /// Forget the remote session without talking to the agent.
    fn drop_session(&mut self) {
        if let Some(p) = self.pending_start.take() {
            self.acks.push((p.ack, Err(ClientError::InvalidState("controller link lost".into()))));
        }
        self.session = None;
        self.stop_deadline = None;
        self.sync_duty = None;
        self.queue.clear();
        self.draining = false;
        self.chosen_context = None;
    }

    fn on_timers(&mut self, now: u64) {
        if self.next_round.is_some_and(|t| t <= now) {
            self.discovery_round(now);
        }
        if self.window_close.is_some_and(|t| t <= now) {
            self.close_window(now);
        }
        if self.next_probe.is_some_and(|t| t <= now) {
            self.probe(now);
        }
        if self.pending_start.as_ref().is_some_and(|p| p.deadline <= now) {
            let p = self.pending_start.take().expect("checked");
            tracing::warn!("start request timed out");
            self.acks.push((p.ack, Err(ClientError::StartTimeout)));
        }
        if self.stop_deadline.is_some_and(|t| t <= now) {
            tracing::warn!("no DebugStopped received; clearing the session locally");
            self.drop_session();
            self.check_workflow();
        }
    }

    // ---- bus messages --------------------------------------------------

    fn on_envelope(&mut self, env: Envelope) {
        let message = match DebugMessage::from_envelope(&env) {
            Ok(m) => m,
            Err(e) => {
                tracing::warn!(subject = %env.subject, error = %e, "undecodable message");
                return;
            }
        };
        let now = self.now();
        use DebugMessage as M;
        match message {
            M::CommunicationStarted(m) => {
                if self.selected_aci.as_deref() == Some(m.aci_id.as_str()) {
                    self.probe(now);
                }
            }
            M::AvailableAciRequestResponse(m) => {
                if self.workflow_id.as_deref() == Some(m.workflow_id.as_str()) {
                    self.catalog.insert(
                        m.aci_id.clone(),
                        AciCatalogEntry {
                            aci_id: m.aci_id,
                            running: m.running,
                            last_seen: now,
                        },
                    );
                }
            }
            M::CheckWorkflowRunningResponse(m) => {
                if self.selected_aci.as_deref() == Some(m.aci_id.as_str())
                    && self.workflow_id.as_deref() == Some(m.workflow_id.as_str())
                {
                    self.running = m.running;
                    // Renewal stamps are agent bookkeeping; keeping them would
                    // turn every link probe into a visible state change.
                    self.agent_sessions = m
                        .sessions
                        .into_iter()
                        .map(|mut s| {
                            s.last_renewal = 0;
                            s
                        })
                        .collect();
                }
            }
            M::DebugStarted(m) => {
                let ours = self.selected_aci.as_deref() == Some(m.aci_id.as_str())
                    && self.workflow_id.as_deref() == Some(m.workflow_id.as_str());
                match self.pending_start.take() {
                    Some(p) if ours && self.session.is_none() => {
                        self.session = Some(RemoteSession {
                            session_id: m.session_id,
                            mode: self.mode,
                            stopping: false,
                        });
                        self.queue.clear();
                        self.chosen_context = None;
                        self.acks.push((p.ack, Ok(())));
                        // Our own session changes what the agent allows next.
                        self.check_workflow();
                    }
                    pending => {
                        self.pending_start = pending;
                        // Started after we gave up waiting: release it.
                        tracing::warn!(session = %m.session_id, "stopping an unexpected session");
                        self.publish(DebugMessage::StopDebug(StopDebug {
                            aci_id: m.aci_id,
                            session_id: m.session_id,
                        }));
                    }
                }
            }
            M::DebugStopped(m) => {
                if self.session.as_ref().is_some_and(|s| s.session_id == m.session_id) {
                    self.on_stopped(m.registry);
                }
            }
            M::BeforeSetOutputs(n) | M::AfterSetInputs(n) => self.on_notification(env, n),
            _ => {}
        }
    }

    fn on_notification(&mut self, env: Envelope, n: BreakpointNotification) {
        let mode = match &self.session {
            Some(s) if s.session_id == n.session_id => s.mode,
            _ => return,
        };
        let entry = n.registry_entry;
        match mode {
            DebugMode::Synchronous if env.kind == EnvelopeKind::Request => {
                if self.sync_duty.is_some() {
                    // The agent never sends a second one before our reply.
                    tracing::error!("second synchronous notification before resume");
                    self.protocol_violation = true;
                    self.reply_resume(&env);
                    return;
                }
                self.show(mode, &entry);
                self.sync_duty = Some((env, entry));
            }
            DebugMode::Snapshot => {
                if env.kind == EnvelopeKind::Request {
                    self.reply_resume(&env);
                }
                match &self.chosen_context {
                    None => {
                        self.chosen_context = Some(entry.context_id.clone());
                        if let Some(aci) = &self.selected_aci {
                            self.publish(DebugMessage::ReceivedExecutionContext(ReceivedExecutionContext {
                                aci_id: aci.clone(),
                                workflow_id: n.workflow_id,
                                session_id: n.session_id,
                                execution_context: entry.context_id.clone(),
                            }));
                        }
                    }
                    Some(c) if *c != entry.context_id => return,
                    Some(_) => {}
                }
                self.queue.push_back(entry);
                if self.queue.len() == 1 {
                    let head = self.queue[0].clone();
                    self.show(mode, &head);
                }
            }
            _ => {
                if env.kind == EnvelopeKind::Request {
                    self.reply_resume(&env);
                }
            }
        }
    }

    fn reply_resume(&self, env: &Envelope) {
        let payload = serde_json::to_vec(&ResumeReply {}).expect("serializes");
        if let Err(e) = self.bus.reply(env, payload) {
            tracing::warn!(error = %e, "resume reply failed");
        }
    }

    fn on_stopped(&mut self, registry: Vec<DebugSessionInfoEntry>) {
        let Some(session) = self.session.take() else { return };
        self.stop_deadline = None;
        self.sync_duty = None;
        match session.mode {
            DebugMode::Snapshot if !self.queue.is_empty() => self.draining = true,
            DebugMode::Profiler => {
                self.replay = Some((registry, 0));
                self.show_replay();
            }
            _ => {
                self.queue.clear();
                self.chosen_context = None;
            }
        }
        self.check_workflow();
    }

    fn on_mock(&mut self, ev: MockEvent) {
        match ev {
            MockEvent::Value(ev) => {
                let side = BreakpointSide::of_hook(ev.side);
                self.values.insert(
                    (ev.task_id.clone(), ev.port_id.clone(), side),
                    PortValue {
                        task_id: ev.task_id,
                        port_id: ev.port_id,
                        side,
                        value: ev.value,
                    },
                );
            }
            MockEvent::Triggered(entry) => {
                self.show(DebugMode::Mock, &entry);
                self.mock_triggered = Some(entry);
            }
        }
    }

    // ---- commands ------------------------------------------------------

    async fn command(&mut self, cmd: FrontendCommand, ack: Ack) {
        let now = self.now();
        let result = match cmd {
            FrontendCommand::SelectWorkflow { workflow_id } => self.cmd_select_workflow(workflow_id, now),
            FrontendCommand::SelectAci { aci_id } => self.cmd_select_aci(aci_id, now),
            FrontendCommand::SetMode { mode } => {
                if matches!(self.phase(), Phase::Debugging | Phase::Replaying) || self.pending_start.is_some() {
                    Err(ClientError::InvalidState("a session is active".into()))
                } else {
                    self.mode = mode;
                    Ok(())
                }
            }
            FrontendCommand::Start => match self.cmd_start(now) {
                Ok(None) => Ok(()),
                // Answered once DebugStarted arrives or the deadline passes.
                Ok(Some(deadline)) => {
                    self.pending_start = Some(PendingStart { ack, deadline });
                    return;
                }
                Err(e) => Err(e),
            },
            FrontendCommand::Stop => self.cmd_stop(now),
            FrontendCommand::Resume => self.cmd_resume(),
            FrontendCommand::EditBreakpoint { action, breakpoint } => self.cmd_edit(action, breakpoint),
            FrontendCommand::ReplayStep { direction } => self.cmd_replay_step(direction),
            FrontendCommand::DiscardReplay => match self.replay.take() {
                Some(_) => {
                    self.check_workflow();
                    Ok(())
                }
                None => Err(ClientError::InvalidState("no replay to discard".into())),
            },
            FrontendCommand::MockInject { task_id, port_id, value } => match &self.mock {
                Some(m) => m.engine.inject(&task_id, &port_id, value).await.map(|_| ()).map_err(Into::into),
                None => Err(ClientError::InvalidState("no mock session".into())),
            },
        };
        self.acks.push((ack, result));
    }

    fn cmd_select_workflow(&mut self, workflow_id: String, now: u64) -> Result<(), ClientError> {
        if matches!(self.phase(), Phase::Debugging | Phase::Replaying) || self.pending_start.is_some() {
            return Err(ClientError::InvalidState("a session is active".into()));
        }
        crate::protocol::validate_id("workflowId", &workflow_id).map_err(|e| ClientError::InvalidState(e.to_string()))?;
        self.workflow_id = Some(workflow_id);
        self.catalog.clear();
        self.selected_aci = None;
        self.link = LinkStatus::None;
        self.running = false;
        self.agent_sessions.clear();
        self.breakpoints.clear();
        self.values.clear();
        self.active_context = None;
        self.next_probe = None;
        self.reconcile_subscriptions();
        self.discovery_round(now);
        Ok(())
    }

    fn cmd_select_aci(&mut self, aci_id: String, now: u64) -> Result<(), ClientError> {
        if matches!(self.phase(), Phase::Debugging | Phase::Replaying) || self.pending_start.is_some() {
            return Err(ClientError::InvalidState("a session is active".into()));
        }
        match self.catalog.get(&aci_id) {
            Some(e) if e.running => {
                self.select_aci(aci_id, now);
                Ok(())
            }
            _ => Err(ClientError::NotSelectable(aci_id)),
        }
    }

    /// `Ok(Some(deadline))` when the answer has to wait for the agent.
    fn cmd_start(&mut self, now: u64) -> Result<Option<u64>, ClientError> {
        let wf = self.workflow_id.clone().ok_or(ClientError::NoWorkflow)?;
        let snapshot = self.snapshot();
        if !snapshot.start_enabled {
            return Err(match self.phase() {
                Phase::Debugging | Phase::Replaying => ClientError::InvalidState("a session is active".into()),
                _ => ClientError::Unavailable,
            });
        }
        if self.mode == DebugMode::Mock {
            let def = self.library.get(&wf).cloned().ok_or(ClientError::UnknownWorkflow(wf))?;
            let gate = Arc::new(Mutex::new(MockGate {
                breakpoints: self.breakpoints.clone(),
                ..MockGate::default()
            }));
            let hooks = Arc::new(MockHooks {
                gate: gate.clone(),
                events: self.mock_tx.clone(),
                clock: self.clock,
            });
            let opts = EngineOptions {
                trace: true,
                context_counter: None,
                clock: Some(self.clock),
            };
            self.mock = Some(MockSession {
                engine: EngineHandle::start_with(def, hooks, opts),
                gate,
            });
            return Ok(None);
        }
        let aci = self.selected_aci.clone().expect("linked");
        self.publish(DebugMessage::StartDebug(StartDebug {
            aci_id: aci,
            mes_id: self.cfg.mes_id.clone(),
            workflow_id: wf,
            debug_mode: self.mode,
            breakpoints: self.breakpoints.clone(),
        }));
        Ok(Some(now + self.cfg.request_timeout.as_millis() as u64))
    }

    fn cmd_stop(&mut self, now: u64) -> Result<(), ClientError> {
        if let Some(m) = self.mock.take() {
            m.engine.stop();
            self.mock_triggered = None;
            return Ok(());
        }
        let aci = self.selected_aci.clone();
        match (&mut self.session, aci) {
            (Some(s), Some(aci)) if !s.stopping => {
                s.stopping = true;
                let message = DebugMessage::StopDebug(StopDebug {
                    aci_id: aci,
                    session_id: s.session_id.clone(),
                });
                self.publish(message);
                self.stop_deadline = Some(now + self.cfg.request_timeout.as_millis() as u64);
                Ok(())
            }
            (Some(_), _) => Ok(()),
            _ => Err(ClientError::InvalidState("no active session".into())),
        }
    }

    fn cmd_resume(&mut self) -> Result<(), ClientError> {
        if let Some(m) = &self.mock {
            let mut gate = m.gate.lock().unwrap_or_else(|e| e.into_inner());
            if gate.suspended {
                gate.suspended = false;
                m.engine.resume();
            }
            self.mock_triggered = None;
            return Ok(());
        }
        if let Some((env, _)) = self.sync_duty.take() {
            self.reply_resume(&env);
            return Ok(());
        }
        if self.queue.pop_front().is_some() {
            match self.queue.front().cloned() {
                Some(next) => self.show(DebugMode::Snapshot, &next),
                None if self.draining => {
                    self.draining = false;
                    self.chosen_context = None;
                }
                None => {}
            }
        }
        Ok(())
    }

    fn cmd_edit(&mut self, action: BreakpointAction, bp: BreakpointDefinition) -> Result<(), ClientError> {
        if !self.breakpoints_editable() {
            return Err(ClientError::RefusedInMode);
        }
        let existing = self.breakpoints.iter().position(|b| b.same_point(&bp));
        // What the agent has to hear: a presence flip or an enabled change.
        let mut change = None;
        let mut toggle = None;
        match (action, existing) {
            (BreakpointAction::Add, Some(i)) => {
                if self.breakpoints[i].enabled != bp.enabled {
                    toggle = Some(bp.clone());
                }
                self.breakpoints[i] = bp;
            }
            (BreakpointAction::Add, None) => {
                change = Some(bp.clone());
                self.breakpoints.push(bp);
            }
            (BreakpointAction::Remove, Some(i)) => change = Some(self.breakpoints.remove(i)),
            (BreakpointAction::Remove, None) => {}
            (BreakpointAction::Toggle, Some(i)) => {
                self.breakpoints[i].enabled = !self.breakpoints[i].enabled;
                toggle = Some(self.breakpoints[i].clone());
            }
            (BreakpointAction::Toggle, None) => {
                return Err(ClientError::InvalidState("no such breakpoint".into()));
            }
        }
        if let Some(m) = &self.mock {
            m.gate.lock().unwrap_or_else(|e| e.into_inner()).breakpoints = self.breakpoints.clone();
        }
        if let (Some(s), Some(aci), Some(wf)) = (&self.session, &self.selected_aci, &self.workflow_id) {
            if s.mode == DebugMode::Synchronous && !s.stopping {
                if let Some(breakpoint) = change {
                    self.publish(DebugMessage::BreakpointChange(BreakpointChange {
                        aci_id: aci.clone(),
                        workflow_id: wf.clone(),
                        session_id: s.session_id.clone(),
                        breakpoint,
                    }));
                }
                if let Some(breakpoint) = toggle {
                    self.publish(DebugMessage::BreakpointToggle(BreakpointToggle {
                        aci_id: aci.clone(),
                        workflow_id: wf.clone(),
                        session_id: s.session_id.clone(),
                        breakpoint,
                    }));
                }
            }
        }
        Ok(())
    }

    fn cmd_replay_step(&mut self, direction: ReplayDirection) -> Result<(), ClientError> {
        let Some((registry, cursor)) = &mut self.replay else {
            return Err(ClientError::InvalidState("not replaying".into()));
        };
        let moved = match direction {
            ReplayDirection::Next if *cursor + 1 < registry.len() => {
                *cursor += 1;
                true
            }
            ReplayDirection::Previous if *cursor > 0 => {
                *cursor -= 1;
                true
            }
            _ => false,
        };
        if moved {
            self.show_replay();
        }
        Ok(())
    }
}

impl Drop for Machine {
    fn drop(&mut self) {
        if let Some(m) = self.mock.take() {
            m.engine.stop();
        }
        self.subs.clear();
        self.bus.disconnect();
    }
}

fn placeholder() -> ClientSnapshot {
    ClientSnapshot {
        mes_id: String::new(),
        phase: Phase::Idle,
        link: LinkStatus::None,
        workflow_id: None,
        selected_aci: None,
        mode: DebugMode::Synchronous,
        session_id: None,
        workflow_running: false,
        availability: Availability::default(),
        workflow_available: false,
        start_enabled: false,
        breakpoints_editable: true,
        breakpoints: Vec::new(),
        pending_breakpoints: 0,
        chosen_context: None,
        triggered: None,
        replay: None,
        protocol_violation: false,
        agent_sessions: Vec::new(),
        view: WorkflowView::default(),
    }
}
