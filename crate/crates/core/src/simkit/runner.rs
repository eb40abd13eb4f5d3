//! Executes a scenario in-process: one local bus, one shared clock, agents
//! and headless clients driven through the frontend API.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::time::{sleep, Duration};

use super::device::{run_device, DeviceError, DeviceScript};
use super::script::{
    Action, AgentLogExpectation, AgentSpec, CountCheck, EventExpectation, Expectation, ScenarioScript, TimerProfile,
    Timers, ValueCheck, WorkflowRef,
};
use super::suite::builtin_workflow;
use crate::agent::{run_agent, AgentConfig, AgentHandle};
use crate::bus::{LocalBus, RouterStats};
use crate::client::{run_client, ClientConfig, ClientHandle};
use crate::clock::Clock;
use crate::workflow::{parse_workflow, WorkflowDefinition};

/// Wall-clock reading the scenario clock starts at, so reports are stable.
pub const SCENARIO_EPOCH_MS: u64 = 1_700_000_000_000;

const POLL_MS: u64 = 5;
const DEFAULT_WITHIN_MS: u64 = 500;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub profile: TimerProfile,
    /// Directory relative workflow paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            profile: TimerProfile::Fast,
            base_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario document: {0}")]
    Parse(String),
    #[error("workflow {name}: {reason}")]
    Workflow { name: String, reason: String },
    #[error("no agent named {0}")]
    UnknownAgent(String),
    #[error("no client named {0}")]
    UnknownClient(String),
    #[error("no mark named {0}")]
    UnknownMark(String),
    #[error("agent {agent} does not host workflow {workflow}")]
    UnknownWorkflow { agent: String, workflow: String },
    #[error("agent {0} is not running")]
    AgentDown(String),
    #[error("agent {name}: {reason}")]
    Agent { name: String, reason: String },
    #[error("client {name}: {reason}")]
    Client { name: String, reason: String },
    #[error("step {step}: device: {source}")]
    Device { step: usize, source: DeviceError },
    #[error("step {step}: {reason}")]
    Script { step: usize, reason: String },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AssertOutcome {
    pub step: usize,
    pub describe: String,
    pub passed: bool,
    pub at_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TranscriptLine {
    pub at_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LeakReport {
    pub connections: usize,
    pub subscriptions: usize,
    pub pending_requests: usize,
}

impl From<RouterStats> for LeakReport {
    fn from(s: RouterStats) -> Self {
        LeakReport {
            connections: s.connections,
            subscriptions: s.subscriptions,
            pending_requests: s.pending_requests,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub name: String,
    pub summary: String,
    pub profile: TimerProfile,
    pub passed: bool,
    pub asserts: Vec<AssertOutcome>,
    pub transcript: Vec<TranscriptLine>,
    pub leaks: LeakReport,
    /// Virtual milliseconds from setup to teardown.
    pub elapsed_ms: u64,
    /// Frontend events per client, for offline inspection.
    #[serde(skip)]
    pub event_logs: BTreeMap<String, Vec<Value>>,
}

pub fn parse_scenario(document: &str) -> Result<ScenarioScript, ScenarioError> {
    serde_json::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn load_workflows(
    script: &ScenarioScript,
    base_dir: Option<&Path>,
) -> Result<HashMap<String, Arc<WorkflowDefinition>>, ScenarioError> {
    let mut out = HashMap::new();
    for r in &script.workflows {
        let (name, text) = match r {
            WorkflowRef::Named(name) => match builtin_workflow(name) {
                Some(text) => (name.clone(), text.to_string()),
                None => {
                    let path = base_dir.map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name));
                    let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Workflow {
                        name: name.clone(),
                        reason: format!("{}: {e}", path.display()),
                    })?;
                    (name.clone(), text)
                }
            },
            WorkflowRef::Inline(v) => ("inline".to_string(), v.to_string()),
        };
        let def = parse_workflow(&text).map_err(|e| ScenarioError::Workflow {
            name,
            reason: e.to_string(),
        })?;
        out.insert(def.workflow_id.clone(), Arc::new(def));
    }
    Ok(out)
}

/// Run on a fresh current-thread runtime with a paused clock.
pub fn run_scenario_blocking(script: &ScenarioScript, opts: &RunOptions) -> Result<ScenarioReport, ScenarioError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .expect("tokio runtime");
    rt.block_on(run_scenario(script, opts))
}

/// Run on the current runtime. Deterministic when its clock is paused.
pub async fn run_scenario(script: &ScenarioScript, opts: &RunOptions) -> Result<ScenarioReport, ScenarioError> {
    let workflows = load_workflows(script, opts.base_dir.as_deref())?;
    let mut runner = Runner::new(script, opts.profile, workflows)?;
    let outcome = runner.execute(script).await;
    let leaks = runner.teardown().await;
    outcome?;
    runner.assert_at(
        script.actions.len(),
        "teardown leaves no bus connections, subscriptions or pending requests".into(),
        leaks.connections == 0 && leaks.subscriptions == 0 && leaks.pending_requests == 0,
        Some(format!("{leaks:?}")),
    );
    let passed = runner.asserts.iter().all(|a| a.passed);
    Ok(ScenarioReport {
        name: script.name.clone(),
        summary: script.summary.clone(),
        profile: opts.profile,
        passed,
        asserts: runner.asserts,
        transcript: runner.transcript,
        leaks,
        elapsed_ms: runner.clock.elapsed_ms(),
        event_logs: runner.event_logs,
    })
}

struct AgentSlot {
    spec: AgentSpec,
    aci_id: String,
    handle: Option<AgentHandle>,
}

struct Mark {
    at_ms: u64,
    client_pos: HashMap<String, usize>,
}

struct Runner {
    bus: LocalBus,
    clock: Clock,
    timers: Timers,
    scale: u64,
    seed: u64,
    starts: u64,
    workflows: HashMap<String, Arc<WorkflowDefinition>>,
    agents: BTreeMap<String, AgentSlot>,
    clients: BTreeMap<String, ClientHandle>,
    marks: HashMap<String, Mark>,
    asserts: Vec<AssertOutcome>,
    transcript: Vec<TranscriptLine>,
    event_logs: BTreeMap<String, Vec<Value>>,
}

impl Runner {
    fn new(
        script: &ScenarioScript,
        profile: TimerProfile,
        workflows: HashMap<String, Arc<WorkflowDefinition>>,
    ) -> Result<Self, ScenarioError> {
        let mut agents = BTreeMap::new();
        for spec in &script.agents {
            for wf in &spec.workflows {
                if !workflows.contains_key(wf) {
                    return Err(ScenarioError::UnknownWorkflow {
                        agent: spec.name.clone(),
                        workflow: wf.clone(),
                    });
                }
            }
            let aci_id = spec.aci_id.clone().unwrap_or_else(|| spec.name.clone());
            agents.insert(
                spec.name.clone(),
                AgentSlot {
                    spec: spec.clone(),
                    aci_id,
                    handle: None,
                },
            );
        }
        Ok(Runner {
            bus: LocalBus::new(),
            clock: Clock::with_epoch(SCENARIO_EPOCH_MS),
            timers: profile.timers().apply(&script.timers),
            scale: profile.scale(),
            seed: script.seed.unwrap_or(7),
            starts: 0,
            workflows,
            agents,
            clients: BTreeMap::new(),
            marks: HashMap::new(),
            asserts: Vec::new(),
            transcript: Vec::new(),
            event_logs: BTreeMap::new(),
        })
    }

    fn now(&self) -> u64 {
        self.clock.elapsed_ms()
    }

    fn note(&mut self, text: String) {
        tracing::debug!(at_ms = self.now(), "{text}");
        self.transcript.push(TranscriptLine { at_ms: self.now(), text });
    }

    fn assert_at(&mut self, step: usize, describe: String, passed: bool, detail: Option<String>) {
        let at_ms = self.now();
        self.note(format!("assert {}: {describe}", if passed { "PASS" } else { "FAIL" }));
        self.asserts.push(AssertOutcome {
            step,
            describe,
            passed,
            at_ms,
            detail: if passed { None } else { detail },
        });
    }

    fn scaled(&self, ms: u64) -> u64 {
        ms * self.scale
    }

    async fn execute(&mut self, script: &ScenarioScript) -> Result<(), ScenarioError> {
        let names: Vec<String> = self
            .agents
            .values()
            .filter(|a| a.spec.autostart)
            .map(|a| a.spec.name.clone())
            .collect();
        for name in names {
            self.start_agent(&name).await?;
        }
        for spec in &script.clients {
            let mes_id = spec.mes_id.clone().unwrap_or_else(|| spec.name.clone());
            let t = self.timers;
            let mut cfg = ClientConfig::new(mes_id);
            cfg.comm_attempt_interval = Timers::dur(t.comm_attempt_ms);
            cfg.aci_request_interval = Timers::dur(t.aci_request_ms);
            cfg.auto_select_window = Timers::dur(t.auto_select_window_ms);
            cfg.aci_entry_expiry = Timers::dur(t.aci_expiry_ms);
            cfg.request_timeout = Timers::dur(t.request_timeout_ms);
            cfg.workflows = self.workflows.values().cloned().collect();
            cfg.clock = Some(self.clock);
            let handle = run_client(self.bus.connect(), cfg).map_err(|e| ScenarioError::Client {
                name: spec.name.clone(),
                reason: e.to_string(),
            })?;
            self.note(format!("client {} up", spec.name));
            self.clients.insert(spec.name.clone(), handle);
        }
        for (i, action) in script.actions.iter().enumerate() {
            self.step(i, action).await?;
        }
        Ok(())
    }

    async fn start_agent(&mut self, name: &str) -> Result<(), ScenarioError> {
        let t = self.timers;
        let seed = self.seed.wrapping_add(self.starts);
        self.starts += 1;
        let slot = self.agents.get(name).ok_or_else(|| ScenarioError::UnknownAgent(name.into()))?;
        if slot.handle.is_some() {
            return Err(ScenarioError::Agent {
                name: name.into(),
                reason: "already running".into(),
            });
        }
        let config = AgentConfig {
            aci_id: Some(slot.aci_id.clone()),
            workflows: slot.spec.workflows.iter().map(|w| self.workflows[w].clone()).collect(),
            sweep_interval: Timers::dur(t.sweep_interval_ms),
            session_expiry: Timers::dur(t.session_expiry_ms),
            sync_reply_timeout: Timers::dur(t.sync_reply_timeout_ms),
            clock: Some(self.clock),
            seed: Some(seed),
            trace: false,
        };
        let handle = run_agent(self.bus.connect(), config).await.map_err(|e| ScenarioError::Agent {
            name: name.into(),
            reason: e.to_string(),
        })?;
        self.agents.get_mut(name).expect("checked").handle = Some(handle);
        self.note(format!("agent {name} up"));
        Ok(())
    }

    fn client(&self, name: &str) -> Result<ClientHandle, ScenarioError> {
        self.clients.get(name).cloned().ok_or_else(|| ScenarioError::UnknownClient(name.into()))
    }

    fn since(&self, label: &Option<String>) -> Result<Option<&Mark>, ScenarioError> {
        match label {
            None => Ok(None),
            Some(l) => self.marks.get(l).map(Some).ok_or_else(|| ScenarioError::UnknownMark(l.clone())),
        }
    }

    async fn step(&mut self, i: usize, action: &Action) -> Result<(), ScenarioError> {
        match action {
            Action::StartAgent { agent } => self.start_agent(agent).await?,
            Action::KillAgent { agent } => {
                let slot = self.agents.get_mut(agent).ok_or_else(|| ScenarioError::UnknownAgent(agent.clone()))?;
                let handle = slot.handle.take().ok_or_else(|| ScenarioError::AgentDown(agent.clone()))?;
                handle.shutdown().await;
                self.note(format!("agent {agent} killed"));
            }
            Action::Command {
                client,
                command,
                expect,
                describe,
            } => {
                let handle = self.client(client)?;
                let result = handle.command(command.clone()).await;
                let got = match &result {
                    Ok(()) => "ok".to_string(),
                    Err(e) => serde_json::to_value(e)
                        .ok()
                        .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                        .unwrap_or_else(|| e.to_string()),
                };
                let cmd = serde_json::to_string(command).unwrap_or_default();
                self.note(format!("{client} <- {cmd} => {got}"));
                if let Some(want) = expect {
                    let describe = describe.clone().unwrap_or_else(|| format!("{cmd} answers {want}"));
                    self.assert_at(i, describe, &got == want, Some(format!("answered {got}")));
                }
            }
            Action::Device { agent, workflow, steps } => {
                let slot = self.agents.get(agent).ok_or_else(|| ScenarioError::UnknownAgent(agent.clone()))?;
                let handle = slot.handle.as_ref().ok_or_else(|| ScenarioError::AgentDown(agent.clone()))?;
                let engine = handle.engine(workflow).ok_or_else(|| ScenarioError::UnknownWorkflow {
                    agent: agent.clone(),
                    workflow: workflow.clone(),
                })?;
                // Equipment timing is part of the workload, so it is not scaled.
                let script = DeviceScript::new(steps.clone());
                let log = run_device(&script, &engine)
                    .await
                    .map_err(|source| ScenarioError::Device { step: i, source })?;
                for r in log {
                    self.note(format!("device {agent}/{workflow}: {}.{} -> {}", r.task_id, r.port_id, r.context_id));
                }
            }
            Action::Wait { ms } => sleep(Duration::from_millis(self.scaled(*ms))).await,
            Action::Mark { label } => {
                let client_pos = self.clients.iter().map(|(n, h)| (n.clone(), h.event_log().len())).collect();
                let at_ms = self.now();
                self.marks.insert(label.clone(), Mark { at_ms, client_pos });
                self.note(format!("mark {label}"));
            }
            Action::Expect(e) => {
                let (ok, detail) = self.expect_value(i, e).await?;
                self.assert_at(i, e.describe.clone(), ok, detail);
            }
            Action::ExpectEvents(e) => {
                let (ok, detail) = self.expect_events(e).await?;
                self.assert_at(i, e.describe.clone(), ok, detail);
            }
            Action::ExpectAgentLog(e) => {
                let (ok, detail) = self.expect_agent_log(e).await?;
                self.assert_at(i, e.describe.clone(), ok, detail);
            }
        }
        Ok(())
    }

    fn observable(&self, step: usize, e: &Expectation) -> Result<Value, ScenarioError> {
        match (&e.client, &e.agent) {
            (Some(c), None) => {
                let h = self.client(c)?;
                let mut v = serde_json::to_value(h.state()).expect("state serializes");
                v["catalog"] = serde_json::to_value(h.catalog()).expect("catalog serializes");
                Ok(v)
            }
            (None, Some(a)) => {
                let slot = self.agents.get(a).ok_or_else(|| ScenarioError::UnknownAgent(a.clone()))?;
                Ok(match &slot.handle {
                    Some(h) => {
                        let suspended: Vec<String> =
                            h.workflow_ids().into_iter().filter(|w| h.is_suspended(w)).collect();
                        json!({
                            "aciId": h.aci_id(),
                            "running": h.is_running(),
                            "sessions": h.sessions(),
                            "suspended": suspended,
                        })
                    }
                    None => json!({"aciId": slot.aci_id, "running": false, "sessions": [], "suspended": []}),
                })
            }
            _ => Err(ScenarioError::Script {
                step,
                reason: "an expectation names exactly one of client or agent".into(),
            }),
        }
    }

    async fn expect_value(&mut self, step: usize, e: &Expectation) -> Result<(bool, Option<String>), ScenarioError> {
        let within = self.scaled(e.within.unwrap_or(DEFAULT_WITHIN_MS));
        let hold = e.hold_for.map(|h| self.scaled(h)).unwrap_or(0);
        let check = |r: &Runner| -> Result<Result<(), String>, ScenarioError> {
            let obs = r.observable(step, e)?;
            Ok(check_value(obs.pointer(&e.path), &e.check))
        };
        self.poll(within, hold, check).await
    }

    async fn expect_events(&mut self, e: &EventExpectation) -> Result<(bool, Option<String>), ScenarioError> {
        let within = self.scaled(e.within.unwrap_or(DEFAULT_WITHIN_MS));
        let h = self.client(&e.client)?;
        let start = match self.since(&e.since)? {
            Some(m) => m.client_pos.get(&e.client).copied().unwrap_or(0),
            None => 0,
        };
        let check = move |_: &Runner| -> Result<Result<(), String>, ScenarioError> {
            let events: Vec<Value> = h
                .event_log()
                .into_iter()
                .skip(start)
                .map(|r| serde_json::to_value(r).expect("event serializes"))
                .filter(|v| v.get("type").and_then(Value::as_str) == Some(e.kind.as_str()))
                .filter(|v| matches_filter(v, &e.filter))
                .collect();
            Ok(check_events(&events, e))
        };
        self.poll(within, 0, check).await
    }

    async fn expect_agent_log(&mut self, e: &AgentLogExpectation) -> Result<(bool, Option<String>), ScenarioError> {
        let within = self.scaled(e.within.unwrap_or(DEFAULT_WITHIN_MS));
        let from_ms = self.since(&e.since)?.map(|m| m.at_ms).unwrap_or(0);
        let agent = e.agent.clone();
        if !self.agents.contains_key(&agent) {
            return Err(ScenarioError::UnknownAgent(agent));
        }
        let check = move |r: &Runner| -> Result<Result<(), String>, ScenarioError> {
            let log = r.agents[&agent].handle.as_ref().map(|h| h.log()).unwrap_or_default();
            let n = log
                .into_iter()
                .filter(|rec| rec.at_ms >= from_ms)
                .map(|rec| serde_json::to_value(rec).expect("log serializes"))
                .filter(|v| v.get("event").and_then(Value::as_str) == Some(e.event.as_str()))
                .filter(|v| matches_filter(v, &e.filter))
                .count();
            Ok(check_count(n, &e.counts))
        };
        self.poll(within, 0, check).await
    }

    /// Poll until `f` passes (up to `within_ms`), then require it to keep
    /// passing for `hold_ms`.
    async fn poll<F>(&mut self, within_ms: u64, hold_ms: u64, f: F) -> Result<(bool, Option<String>), ScenarioError>
    where
        F: Fn(&Runner) -> Result<Result<(), String>, ScenarioError>,
    {
        let deadline = self.now() + within_ms;
        loop {
            match f(self)? {
                Ok(()) => break,
                Err(why) if self.now() >= deadline => return Ok((false, Some(why))),
                Err(_) => sleep(Duration::from_millis(POLL_MS)).await,
            }
        }
        let until = self.now() + hold_ms;
        while self.now() < until {
            sleep(Duration::from_millis(POLL_MS)).await;
            if let Err(why) = f(self)? {
                return Ok((false, Some(format!("stopped holding: {why}"))));
            }
        }
        Ok((true, None))
    }

    async fn teardown(&mut self) -> LeakReport {
        for (name, h) in std::mem::take(&mut self.clients) {
            let log = h.event_log().into_iter().map(|r| serde_json::to_value(r).expect("event serializes"));
            self.event_logs.insert(name, log.collect());
            h.shutdown().await;
        }
        for slot in self.agents.values_mut() {
            if let Some(h) = slot.handle.take() {
                h.shutdown().await;
            }
        }
        // Let dropped tasks unwind before counting what is left.
        for _ in 0..10 {
            tokio::task::yield_now().await;
        }
        sleep(Duration::from_millis(1)).await;
        self.bus.stats().into()
    }
}

/// `needle` matches `hay` when every field of `needle` matches recursively.
pub fn json_subset(needle: &Value, hay: &Value) -> bool {
    match (needle, hay) {
        (Value::Object(n), Value::Object(h)) => n.iter().all(|(k, v)| h.get(k).is_some_and(|hv| json_subset(v, hv))),
        _ => needle == hay,
    }
}

fn matches_filter(v: &Value, filter: &serde_json::Map<String, Value>) -> bool {
    filter
        .iter()
        .all(|(ptr, want)| json_subset(want, v.pointer(ptr).unwrap_or(&Value::Null)))
}

fn check_value(got: Option<&Value>, c: &ValueCheck) -> Result<(), String> {
    let got = got.unwrap_or(&Value::Null);
    if let Some(want) = &c.equals {
        if got != want {
            return Err(format!("expected {want}, found {got}"));
        }
    }
    if let Some(avoid) = &c.not_equals {
        if got == avoid {
            return Err(format!("expected anything but {avoid}"));
        }
    }
    if let Some(n) = c.len {
        let len = match got {
            Value::Array(a) => a.len(),
            Value::Object(o) => o.len(),
            Value::String(s) => s.len(),
            _ => return Err(format!("expected a collection of {n}, found {got}")),
        };
        if len != n {
            return Err(format!("expected {n} items, found {len}"));
        }
    }
    if let Some(item) = &c.contains {
        let found = got.as_array().is_some_and(|a| a.iter().any(|x| json_subset(item, x)));
        if !found {
            return Err(format!("{item} not found in {got}"));
        }
    }
    Ok(())
}

fn check_count(n: usize, c: &CountCheck) -> Result<(), String> {
    if c.count.is_some_and(|k| n != k) {
        return Err(format!("expected {} matching, found {n}", c.count.unwrap_or_default()));
    }
    if c.min.is_some_and(|k| n < k) {
        return Err(format!("expected at least {}, found {n}", c.min.unwrap_or_default()));
    }
    if c.max.is_some_and(|k| n > k) {
        return Err(format!("expected at most {}, found {n}", c.max.unwrap_or_default()));
    }
    Ok(())
}

fn check_events(events: &[Value], e: &EventExpectation) -> Result<(), String> {
    check_count(events.len(), &e.counts)?;
    if let (Some(field), Some(values)) = (&e.field, &e.values) {
        let got: Vec<Value> = events.iter().map(|v| v.pointer(field).cloned().unwrap_or(Value::Null)).collect();
        if &got != values {
            return Err(format!("{field}: expected {}, found {}", Value::from(values.clone()), Value::from(got)));
        }
    }
    if e.chronological {
        let keys: Vec<(u64, u64)> = events
            .iter()
            .filter_map(|v| {
                let entry = v.get("entry")?;
                Some((entry.get("timestamp")?.as_u64()?, entry.get("entrySeq")?.as_u64()?))
            })
            .collect();
        if let Some(w) = keys.windows(2).find(|w| w[1] <= w[0]) {
            return Err(format!("entries out of order: {:?} then {:?}", w[0], w[1]));
        }
    }
    Ok(())
}
