//! Protocol state of one Automation Controller instance, free of I/O.
//!
//! Every input (a decoded message, a hook event, a sweep tick, the outcome
//! of a synchronous notification) is applied under one lock by the async
//! shell in [`super`], and turned into [`Action`]s the shell executes.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::protocol::{
    cap_registry, compute_availability, sort_registry, AvailableAciRequestResponse, BreakpointDefinition,
    BreakpointNotification, BreakpointSide, CheckWorkflowRunningResponse, CommunicationAttemptReply, DebugMessage,
    DebugMode, DebugSessionInfo, DebugSessionInfoEntry, DebugStarted, DebugStopped, REGISTRY_CAP,
};
use crate::workflow::{HookEvent, HookVerdict, WorkflowDefinition};

/// Agent log records kept in memory (older ones are discarded).
pub const LOG_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Publish(DebugMessage),
    /// In-band answer to the request being handled.
    Reply(Vec<u8>),
    Resume { workflow_id: String },
    /// Send a breakpoint notification as a request; its outcome comes back
    /// through [`Controller::on_sync_outcome`] with the same token.
    SyncRequest { message: DebugMessage, workflow_id: String, token: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum SyncOutcome {
    Replied,
    TimedOut,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "camelCase")]
pub enum AgentEvent {
    #[serde(rename_all = "camelCase")]
    Started { aci_id: String },
    #[serde(rename_all = "camelCase")]
    SessionStarted { session_id: String, workflow_id: String, mode: DebugMode, mes_id: String },
    #[serde(rename_all = "camelCase")]
    StartRejected { workflow_id: String, mode: DebugMode, reason: String },
    #[serde(rename_all = "camelCase")]
    SessionStopped { session_id: String, mode: DebugMode, registry_len: usize },
    #[serde(rename_all = "camelCase")]
    StopIgnored { session_id: String },
    #[serde(rename_all = "camelCase")]
    SessionSwept { session_id: String, mode: DebugMode },
    #[serde(rename_all = "camelCase")]
    BreakpointEdited { session_id: String, breakpoint: BreakpointDefinition, present: bool },
    #[serde(rename_all = "camelCase")]
    BreakpointEditRejected { session_id: String, reason: String },
    #[serde(rename_all = "camelCase")]
    ContextPinned { session_id: String, context_id: String },
    #[serde(rename_all = "camelCase")]
    Suspended { session_id: String, workflow_id: String, context_id: String },
    #[serde(rename_all = "camelCase")]
    Resumed { workflow_id: String, cause: String },
    #[serde(rename_all = "camelCase")]
    EventDropped { workflow_id: String, context_id: String },
    #[serde(rename_all = "camelCase")]
    NotificationSuppressed { session_id: String, context_id: String },
    #[serde(rename_all = "camelCase")]
    Notified { session_id: String, context_id: String, entry_seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentLogRecord {
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: AgentEvent,
}

/// Random identifiers; reproducible when seeded.
pub struct IdGen(ChaCha8Rng);

impl IdGen {
    pub fn new(seed: Option<u64>) -> Self {
        IdGen(match seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_rng(&mut rand::rng()),
        })
    }

    pub fn next_id(&mut self) -> String {
        format!("{:016x}", self.0.random::<u64>())
    }
}

#[derive(Debug, Clone)]
struct Session {
    info: DebugSessionInfo,
    registry: VecDeque<DebugSessionInfoEntry>,
    next_seq: u64,
}

#[derive(Debug, Clone)]
struct Suspension {
    session_id: String,
    token: u64,
}

pub struct Controller {
    aci_id: String,
    workflows: BTreeMap<String, Arc<WorkflowDefinition>>,
    /// Creation order.
    sessions: Vec<Session>,
    suspended: HashMap<String, Suspension>,
    next_token: u64,
    session_expiry_ms: u64,
    ids: IdGen,
    log: VecDeque<AgentLogRecord>,
}

impl Controller {
    pub fn new(
        aci_id: String,
        workflows: impl IntoIterator<Item = Arc<WorkflowDefinition>>,
        session_expiry_ms: u64,
        ids: IdGen,
    ) -> Self {
        Controller {
            aci_id,
            workflows: workflows.into_iter().map(|w| (w.workflow_id.clone(), w)).collect(),
            sessions: Vec::new(),
            suspended: HashMap::new(),
            next_token: 0,
            session_expiry_ms,
            ids,
            log: VecDeque::new(),
        }
    }

    pub fn aci_id(&self) -> &str {
        &self.aci_id
    }

    pub fn is_loaded(&self, workflow_id: &str) -> bool {
        self.workflows.contains_key(workflow_id)
    }

    pub fn sessions(&self) -> Vec<DebugSessionInfo> {
        self.sessions.iter().map(|s| s.info.clone()).collect()
    }

    pub fn sessions_of(&self, workflow_id: &str) -> Vec<DebugSessionInfo> {
        self.sessions
            .iter()
            .filter(|s| s.info.workflow_id == workflow_id)
            .map(|s| s.info.clone())
            .collect()
    }

    /// Registry recorded so far, in recording order.
    pub fn registry(&self, session_id: &str) -> Option<Vec<DebugSessionInfoEntry>> {
        self.find(session_id).map(|s| s.registry.iter().cloned().collect())
    }

    pub fn is_suspended(&self, workflow_id: &str) -> bool {
        self.suspended.contains_key(workflow_id)
    }

    pub fn log(&self) -> Vec<AgentLogRecord> {
        self.log.iter().cloned().collect()
    }

    pub fn record(&mut self, at_ms: u64, event: AgentEvent) {
        tracing::info!(aci = %self.aci_id, ?event, "agent");
        if self.log.len() == LOG_CAP {
            self.log.pop_front();
        }
        self.log.push_back(AgentLogRecord { at_ms, event });
    }

    fn find(&self, session_id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.info.session_id == session_id)
    }

    fn find_mut(&mut self, session_id: &str) -> Option<&mut Session> {
        self.sessions.iter_mut().find(|s| s.info.session_id == session_id)
    }

    /// Apply one inbound protocol message. `in_band` is set when it arrived
    /// as a request that expects a reply.
    pub fn handle(&mut self, message: DebugMessage, in_band: bool, now: u64) -> Vec<Action> {
        use DebugMessage as M;
        match message {
            M::CommunicationAttempt(m) if m.aci_id == self.aci_id && in_band => {
                vec![Action::Reply(json(&CommunicationAttemptReply { connected: true }))]
            }
            M::CheckWorkflowRunning(m) if m.aci_id == self.aci_id => {
                if !self.is_loaded(&m.workflow_id) {
                    return vec![];
                }
                let response = CheckWorkflowRunningResponse {
                    aci_id: self.aci_id.clone(),
                    sessions: self.sessions_of(&m.workflow_id),
                    workflow_id: m.workflow_id,
                    running: true,
                };
                if in_band {
                    vec![Action::Reply(json(&response))]
                } else {
                    vec![Action::Publish(M::CheckWorkflowRunningResponse(response))]
                }
            }
            M::StartDebug(m) if m.aci_id == self.aci_id => {
                let reject = |this: &mut Self, reason: &str| {
                    this.record(
                        now,
                        AgentEvent::StartRejected {
                            workflow_id: m.workflow_id.clone(),
                            mode: m.debug_mode,
                            reason: reason.to_string(),
                        },
                    );
                    vec![]
                };
                if !m.debug_mode.is_remote() {
                    return reject(self, "mock sessions are local");
                }
                if !self.is_loaded(&m.workflow_id) {
                    return reject(self, "workflow not loaded");
                }
                let active = self
                    .sessions
                    .iter()
                    .filter(|s| s.info.workflow_id == m.workflow_id)
                    .map(|s| s.info.mode);
                if !compute_availability(active, m.debug_mode) {
                    return reject(self, "unavailable");
                }
                let mut breakpoints: Vec<BreakpointDefinition> = Vec::new();
                for bp in m.breakpoints {
                    match breakpoints.iter_mut().find(|b| b.same_point(&bp)) {
                        Some(existing) => *existing = bp,
                        None => breakpoints.push(bp),
                    }
                }
                let mut session_id = self.ids.next_id();
                while self.find(&session_id).is_some() {
                    session_id = self.ids.next_id();
                }
                self.sessions.push(Session {
                    info: DebugSessionInfo {
                        session_id: session_id.clone(),
                        mode: m.debug_mode,
                        mes_id: m.mes_id.clone(),
                        workflow_id: m.workflow_id.clone(),
                        last_renewal: now,
                        breakpoints,
                        chosen_context: None,
                    },
                    registry: VecDeque::new(),
                    next_seq: 0,
                });
                self.record(
                    now,
                    AgentEvent::SessionStarted {
                        session_id: session_id.clone(),
                        workflow_id: m.workflow_id.clone(),
                        mode: m.debug_mode,
                        mes_id: m.mes_id.clone(),
                    },
                );
                vec![Action::Publish(M::DebugStarted(DebugStarted {
                    mes_id: m.mes_id,
                    aci_id: self.aci_id.clone(),
                    workflow_id: m.workflow_id,
                    session_id,
                }))]
            }
            M::StopDebug(m) if m.aci_id == self.aci_id => self.stop(&m.session_id, now),
            M::SessionRenewal(m) if m.aci_id == self.aci_id => {
                if let Some(s) = self.find_mut(&m.session_id) {
                    s.info.last_renewal = now;
                }
                vec![]
            }
            M::BreakpointChange(m) if m.aci_id == self.aci_id => {
                self.edit_breakpoint(&m.session_id, &m.workflow_id, m.breakpoint, false, now)
            }
            M::BreakpointToggle(m) if m.aci_id == self.aci_id => {
                self.edit_breakpoint(&m.session_id, &m.workflow_id, m.breakpoint, true, now)
            }
            M::ReceivedExecutionContext(m) if m.aci_id == self.aci_id => {
                let pinned = match self.find_mut(&m.session_id) {
                    Some(s) if s.info.mode == DebugMode::Snapshot && s.info.workflow_id == m.workflow_id => {
                        s.info.chosen_context = Some(m.execution_context.clone());
                        true
                    }
                    _ => false,
                };
                if pinned {
                    self.record(
                        now,
                        AgentEvent::ContextPinned {
                            session_id: m.session_id,
                            context_id: m.execution_context,
                        },
                    );
                }
                vec![]
            }
            M::AvailableAciRequest(m) => vec![Action::Publish(M::AvailableAciRequestResponse(
                AvailableAciRequestResponse {
                    running: self.is_loaded(&m.workflow_id),
                    workflow_id: m.workflow_id,
                    aci_id: self.aci_id.clone(),
                },
            ))],
            _ => vec![],
        }
    }

    fn stop(&mut self, session_id: &str, now: u64) -> Vec<Action> {
        let Some(idx) = self.sessions.iter().position(|s| s.info.session_id == session_id) else {
            tracing::warn!(aci = %self.aci_id, %session_id, "stop for unknown session");
            self.record(now, AgentEvent::StopIgnored { session_id: session_id.to_string() });
            return vec![];
        };
        let session = self.sessions.remove(idx);
        let mut actions = self.release(&session, "stopped", now);
        let registry = if session.info.mode == DebugMode::Profiler {
            let mut r: Vec<_> = session.registry.into_iter().collect();
            sort_registry(&mut r);
            cap_registry(&mut r);
            r
        } else {
            Vec::new()
        };
        self.record(
            now,
            AgentEvent::SessionStopped {
                session_id: session_id.to_string(),
                mode: session.info.mode,
                registry_len: registry.len(),
            },
        );
        actions.push(Action::Publish(DebugMessage::DebugStopped(DebugStopped {
            aci_id: self.aci_id.clone(),
            session_id: session_id.to_string(),
            registry,
        })));
        actions
    }

    /// Resume the engine if `session` holds it suspended.
    fn release(&mut self, session: &Session, cause: &str, now: u64) -> Vec<Action> {
        let wf = &session.info.workflow_id;
        match self.suspended.get(wf) {
            Some(s) if s.session_id == session.info.session_id => {
                self.suspended.remove(wf);
                self.record(
                    now,
                    AgentEvent::Resumed {
                        workflow_id: wf.clone(),
                        cause: cause.to_string(),
                    },
                );
                vec![Action::Resume { workflow_id: wf.clone() }]
            }
            _ => vec![],
        }
    }

    fn edit_breakpoint(
        &mut self,
        session_id: &str,
        workflow_id: &str,
        bp: BreakpointDefinition,
        toggle: bool,
        now: u64,
    ) -> Vec<Action> {
        let outcome = match self.find_mut(session_id) {
            None => Err("unknown session"),
            Some(s) if s.info.workflow_id != workflow_id => Err("workflow mismatch"),
            Some(s) if s.info.mode != DebugMode::Synchronous => Err("breakpoints are fixed in this mode"),
            Some(s) => {
                let existing = s.info.breakpoints.iter().position(|b| b.same_point(&bp));
                match (toggle, existing) {
                    (true, Some(i)) => {
                        s.info.breakpoints[i].enabled = bp.enabled;
                        Ok(true)
                    }
                    (true, None) => Err("toggle of an unknown breakpoint"),
                    (false, Some(i)) => {
                        s.info.breakpoints.remove(i);
                        Ok(false)
                    }
                    (false, None) => {
                        s.info.breakpoints.push(bp.clone());
                        Ok(true)
                    }
                }
            }
        };
        let event = match outcome {
            Ok(present) => AgentEvent::BreakpointEdited {
                session_id: session_id.to_string(),
                breakpoint: bp,
                present,
            },
            Err(reason) => AgentEvent::BreakpointEditRejected {
                session_id: session_id.to_string(),
                reason: reason.to_string(),
            },
        };
        self.record(now, event);
        vec![]
    }

    /// Remove sessions whose last renewal is more than the expiry ago.
    pub fn sweep(&mut self, now: u64) -> (Vec<String>, Vec<Action>) {
        let expiry = self.session_expiry_ms;
        let (stale, kept): (Vec<Session>, Vec<Session>) = std::mem::take(&mut self.sessions)
            .into_iter()
            .partition(|s| now.saturating_sub(s.info.last_renewal) > expiry);
        self.sessions = kept;
        let mut actions = Vec::new();
        let mut removed = Vec::new();
        for s in stale {
            actions.extend(self.release(&s, "swept", now));
            self.record(
                now,
                AgentEvent::SessionSwept {
                    session_id: s.info.session_id.clone(),
                    mode: s.info.mode,
                },
            );
            removed.push(s.info.session_id);
        }
        (removed, actions)
    }

    /// Decide what the engine of `workflow_id` does with one hook event.
    /// `now` is the monotonic reading, `wall` the entry timestamp.
    pub fn on_hook(&mut self, workflow_id: &str, ev: &HookEvent, now: u64, wall: u64) -> (HookVerdict, Vec<Action>) {
        let context_id = &ev.context.context_id;
        if self.suspended.contains_key(workflow_id) {
            self.record(
                now,
                AgentEvent::EventDropped {
                    workflow_id: workflow_id.to_string(),
                    context_id: context_id.clone(),
                },
            );
            return (HookVerdict::DropEvent, vec![]);
        }
        let side = BreakpointSide::of_hook(ev.side);
        let mut verdict = HookVerdict::Proceed;
        let mut actions = Vec::new();
        let mut events = Vec::new();
        for s in self.sessions.iter_mut().filter(|s| s.info.workflow_id == workflow_id) {
            let Some(bp) = s
                .info
                .breakpoints
                .iter()
                .find(|b| b.enabled && b.matches(&ev.task_id, &ev.port_id, side))
                .cloned()
            else {
                continue;
            };
            s.next_seq += 1;
            let entry = DebugSessionInfoEntry {
                entry_seq: s.next_seq,
                timestamp: wall,
                context_id: context_id.clone(),
                task_id: ev.task_id.clone(),
                port_id: ev.port_id.clone(),
                side,
                value: ev.value.clone(),
                breakpoint: bp,
            };
            let notification = || BreakpointNotification {
                aci_id: self.aci_id.clone(),
                session_id: s.info.session_id.clone(),
                workflow_id: workflow_id.to_string(),
                registry_entry: entry.clone(),
            };
            let message = match side {
                BreakpointSide::Output => DebugMessage::BeforeSetOutputs(notification()),
                BreakpointSide::Input => DebugMessage::AfterSetInputs(notification()),
            };
            match s.info.mode {
                DebugMode::Synchronous => {
                    self.next_token += 1;
                    self.suspended.insert(
                        workflow_id.to_string(),
                        Suspension {
                            session_id: s.info.session_id.clone(),
                            token: self.next_token,
                        },
                    );
                    events.push(AgentEvent::Suspended {
                        session_id: s.info.session_id.clone(),
                        workflow_id: workflow_id.to_string(),
                        context_id: context_id.clone(),
                    });
                    actions.push(Action::SyncRequest {
                        message,
                        workflow_id: workflow_id.to_string(),
                        token: self.next_token,
                    });
                    verdict = HookVerdict::SuspendUntilResume;
                }
                DebugMode::Snapshot => {
                    push_capped(&mut s.registry, entry.clone());
                    // The first notification pins the context provisionally;
                    // ReceivedExecutionContext confirms or moves it.
                    let chosen = s.info.chosen_context.get_or_insert_with(|| context_id.clone());
                    if chosen == context_id {
                        events.push(AgentEvent::Notified {
                            session_id: s.info.session_id.clone(),
                            context_id: context_id.clone(),
                            entry_seq: entry.entry_seq,
                        });
                        actions.push(Action::Publish(message));
                    } else {
                        events.push(AgentEvent::NotificationSuppressed {
                            session_id: s.info.session_id.clone(),
                            context_id: context_id.clone(),
                        });
                    }
                }
                DebugMode::Profiler => push_capped(&mut s.registry, entry),
                DebugMode::Mock => {}
            }
        }
        for e in events {
            self.record(now, e);
        }
        (verdict, actions)
    }

    /// The synchronous notification identified by `token` was answered,
    /// timed out, or could not be sent: the engine continues either way.
    pub fn on_sync_outcome(&mut self, workflow_id: &str, token: u64, outcome: SyncOutcome, now: u64) -> Vec<Action> {
        match self.suspended.get(workflow_id) {
            Some(s) if s.token == token => {
                if outcome != SyncOutcome::Replied {
                    tracing::warn!(aci = %self.aci_id, workflow = %workflow_id, ?outcome, "resuming without a reply");
                }
                self.suspended.remove(workflow_id);
                let cause = match outcome {
                    SyncOutcome::Replied => "resume",
                    SyncOutcome::TimedOut => "reply timeout",
                    SyncOutcome::Failed => "request failed",
                };
                self.record(
                    now,
                    AgentEvent::Resumed {
                        workflow_id: workflow_id.to_string(),
                        cause: cause.to_string(),
                    },
                );
                vec![Action::Resume {
                    workflow_id: workflow_id.to_string(),
                }]
            }
            _ => vec![],
        }
    }
}

fn push_capped(registry: &mut VecDeque<DebugSessionInfoEntry>, entry: DebugSessionInfoEntry) {
    if registry.len() == REGISTRY_CAP {
        registry.pop_front();
    }
    registry.push_back(entry);
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("reply serializes")
}
