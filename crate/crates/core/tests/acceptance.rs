//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant as WallInstant};

use flowdbg_core::agent::{run_agent, Action, AgentConfig, AgentEvent, AgentHandle, Controller, IdGen};
use flowdbg_core::bus::{BusClient, LocalBus};
use flowdbg_core::client::*;
use flowdbg_core::protocol::*;
use flowdbg_core::simkit::{builtin_workflow, run_device, run_suite, DeviceScript, DeviceStep, TimerProfile};
use flowdbg_core::workflow::*;
use flowdbg_core::Clock;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn virtual_rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .expect("runtime")
}

fn builtin(name: &str) -> Arc<WorkflowDefinition> {
    Arc::new(parse_workflow(builtin_workflow(name).unwrap()).unwrap())
}

async fn start_agent(bus: &LocalBus, clock: Clock, wf: Arc<WorkflowDefinition>) -> AgentHandle {
    let config = AgentConfig {
        aci_id: Some("AC1".into()),
        workflows: vec![wf],
        clock: Some(clock),
        seed: Some(1),
        trace: true,
        ..AgentConfig::default()
    };
    run_agent(bus.connect(), config).await.expect("agent starts")
}

/// Client with paper timers, linked to AC1 with `wf` selected.
async fn linked_client(bus: &LocalBus, clock: Clock, wf: &Arc<WorkflowDefinition>) -> ClientHandle {
    let mut config = ClientConfig::new("MES1");
    config.clock = Some(clock);
    config.workflows = vec![wf.clone()];
    let c = run_client(bus.connect(), config).expect("client starts");
    c.command(FrontendCommand::SelectWorkflow { workflow_id: wf.workflow_id.clone() }).await.unwrap();
    c.wait_for(|s| s.link == LinkStatus::Connected && s.workflow_running).await.unwrap();
    c
}

async fn start_session(c: &ClientHandle, mode: DebugMode, bps: &[BreakpointDefinition]) {
    c.command(FrontendCommand::SetMode { mode }).await.unwrap();
    for b in bps {
        c.command(FrontendCommand::EditBreakpoint { action: BreakpointAction::Add, breakpoint: b.clone() })
            .await
            .unwrap();
    }
    c.command(FrontendCommand::Start).await.unwrap();
}

fn hook_events(trace: &[TraceRecord]) -> Vec<(&HookEvent, HookVerdict)> {
    trace
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Hook { event, verdict } => Some((event, *verdict)),
            _ => None,
        })
        .collect()
}

fn hits(bps: &[BreakpointDefinition], ev: &HookEvent) -> bool {
    let side = BreakpointSide::of_hook(ev.side);
    bps.iter().any(|b| b.enabled && b.matches(&ev.task_id, &ev.port_id, side))
}

/// Every breakpoint point of a workflow.
fn points(def: &WorkflowDefinition) -> Vec<BreakpointDefinition> {
    let mut v = Vec::new();
    for t in &def.tasks {
        for p in &t.inputs {
            v.push(BreakpointDefinition::new(&t.task_id, &p.port_id, BreakpointSide::Input));
        }
        for p in &t.outputs {
            v.push(BreakpointDefinition::new(&t.task_id, &p.port_id, BreakpointSide::Output));
        }
    }
    v
}

// ---- 1 -----------------------------------------------------------------

fn criterion_1() -> Outcome {
    let report = run_suite(TimerProfile::Fast);
    let mut failures = Vec::new();
    for s in &report.scenarios {
        match (&s.report, &s.error) {
            (Some(r), _) => failures.extend(
                r.asserts.iter().filter(|a| !a.passed).map(|a| format!("{}: {} ({:?})", s.file, a.describe, a.detail)),
            ),
            (None, e) => failures.push(format!("{}: {e:?}", s.file)),
        }
    }
    let asserts: usize = report.scenarios.iter().filter_map(|s| s.report.as_ref()).map(|r| r.asserts.len()).sum();
    check(failures.is_empty() && report.passed, || failures.join("; "))?;
    check(report.wall_ms < 60_000, || format!("suite took {} ms", report.wall_ms))?;
    Ok(format!("{} scenarios, {asserts} asserts, {} ms wall", report.scenarios.len(), report.wall_ms))
}

// ---- 2 -----------------------------------------------------------------

fn mode_of(c: char) -> DebugMode {
    match c {
        'S' => DebugMode::Synchronous,
        'N' => DebugMode::Snapshot,
        'P' => DebugMode::Profiler,
        _ => unreachable!(),
    }
}

/// Active session multiset → may (synchronous, snapshot, profiler) start.
const TRUTH: [(&str, &str); 20] = [
    ("", "YYY"),
    ("S", "NNN"),
    ("N", "NYY"),
    ("P", "NYY"),
    ("SS", "NNN"),
    ("SN", "NNN"),
    ("SP", "NNN"),
    ("NN", "NYY"),
    ("NP", "NYY"),
    ("PP", "NYY"),
    ("SSS", "NNN"),
    ("SSN", "NNN"),
    ("SSP", "NNN"),
    ("SNN", "NNN"),
    ("SNP", "NNN"),
    ("SPP", "NNN"),
    ("NNN", "NYY"),
    ("NNP", "NYY"),
    ("NPP", "NYY"),
    ("PPP", "NYY"),
];

fn permutations(s: &str) -> BTreeSet<String> {
    if s.len() <= 1 {
        return BTreeSet::from([s.to_string()]);
    }
    let mut out = BTreeSet::new();
    for (i, c) in s.char_indices() {
        let rest = format!("{}{}", &s[..i], &s[i + 1..]);
        for p in permutations(&rest) {
            out.insert(format!("{c}{p}"));
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let mut cells = 0;
    for (active, row) in TRUTH {
        for order in permutations(active) {
            let modes: Vec<DebugMode> = order.chars().map(mode_of).collect();
            for (req, want) in "SNP".chars().zip(row.chars()) {
                let got = compute_availability(modes.iter().copied(), mode_of(req));
                check(got == (want == 'Y'), || format!("active {order:?}, request {req}: got {got}"))?;
                cells += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let workflows = [builtin("press"), builtin("twovar")];
    let runs = 1_000;
    let mut ops = 0;
    for run in 0..runs {
        let mut ctl = Controller::new("AC1".into(), workflows.iter().cloned(), 35_000, IdGen::new(Some(run)));
        let mut now = 0u64;
        for _ in 0..rng.random_range(1..40) {
            now += rng.random_range(1..2_000);
            ops += 1;
            match rng.random_range(0..8) {
                0..=3 => {
                    let wf = ["press", "twovar"][rng.random_range(0..2)];
                    let mode = [DebugMode::Synchronous, DebugMode::Snapshot, DebugMode::Profiler][rng.random_range(0..3)];
                    let msg = DebugMessage::StartDebug(StartDebug {
                        aci_id: "AC1".into(),
                        mes_id: "MES1".into(),
                        workflow_id: wf.into(),
                        debug_mode: mode,
                        breakpoints: vec![],
                    });
                    ctl.handle(msg, false, now);
                }
                4..=6 => {
                    let sessions = ctl.sessions();
                    if let Some(s) = sessions.choose(&mut rng) {
                        let msg = DebugMessage::StopDebug(StopDebug {
                            aci_id: "AC1".into(),
                            session_id: s.session_id.clone(),
                        });
                        ctl.handle(msg, false, now);
                    }
                }
                _ => {
                    now += rng.random_range(0..60_000);
                    ctl.sweep(now);
                }
            }
            for wf in ["press", "twovar"] {
                let modes: Vec<DebugMode> = ctl.sessions_of(wf).iter().map(|s| s.mode).collect();
                check(is_legal_session_set(&modes), || format!("run {run}: illegal set {modes:?} on {wf}"))?;
            }
        }
    }
    Ok(format!("{cells} truth-table cells over all orderings; {runs} random interleavings ({ops} operations) stayed legal"))
}

// ---- 3 -----------------------------------------------------------------

type Seen = (String, String, String, BreakpointSide, VariableValue);

/// Runs twovar in snapshot mode and returns (shown to the user, oracle).
fn snapshot_run(bps: &[BreakpointDefinition], injections: &[(u64, &str, i64)]) -> (Vec<Seen>, Vec<Seen>, Vec<Seen>) {
    virtual_rt().block_on(async {
        let bus = LocalBus::new();
        let clock = Clock::with_epoch(1_700_000_000_000);
        let wf = builtin("twovar");
        let agent = start_agent(&bus, clock, wf.clone()).await;
        let c = linked_client(&bus, clock, &wf).await;
        start_session(&c, DebugMode::Snapshot, bps).await;
        let steps = injections
            .iter()
            .map(|(at, task, v)| DeviceStep {
                at_ms: *at,
                task_id: task.to_string(),
                port_id: "v".into(),
                value: VariableValue::Int64(*v),
            })
            .collect();
        let engine = agent.engine("twovar").unwrap();
        run_device(&DeviceScript::new(steps), &engine).await.unwrap();
        engine.wait_quiescent().await.unwrap();
        tokio::time::sleep(Duration::from_millis(1)).await;
        while c.state().pending_breakpoints > 0 {
            c.command(FrontendCommand::Resume).await.unwrap();
        }
        let shown: Vec<Seen> = c
            .event_log()
            .into_iter()
            .filter_map(|r| match r.event {
                FrontendEvent::BreakpointTriggered { mode: DebugMode::Snapshot, entry } => {
                    Some((entry.context_id, entry.task_id, entry.port_id, entry.side, entry.value))
                }
                _ => None,
            })
            .collect();

        // Oracle: every breakpoint hit in the engine trace, then only those in
        // the first hit's context.
        let trace = engine.trace().await.unwrap();
        let all: Vec<Seen> = hook_events(&trace)
            .into_iter()
            .filter(|(ev, _)| hits(bps, ev))
            .map(|(ev, _)| {
                let side = BreakpointSide::of_hook(ev.side);
                (ev.context.context_id.clone(), ev.task_id.clone(), ev.port_id.clone(), side, ev.value.clone())
            })
            .collect();
        let expected = match all.first() {
            Some(first) => all.iter().filter(|s| s.0 == first.0).cloned().collect(),
            None => vec![],
        };
        c.shutdown().await;
        agent.shutdown().await;
        (shown, expected, all)
    })
}

fn criterion_3() -> Outcome {
    let wf = builtin("twovar");
    let every = points(&wf);
    let (shown, expected, all) = snapshot_run(&every, &[(0, "varA", 1), (0, "varB", 2)]);
    check(shown == expected, || format!("fixed run: shown {shown:?}, oracle {expected:?}"))?;
    let pinned = &expected[0].0;
    check(expected.iter().all(|s| s.1.ends_with('A')), || "pinned context is not A's".into())?;
    let first_a_out = all.iter().position(|s| s.1 == "outA").unwrap();
    let b_before = all[..first_a_out].iter().filter(|s| &s.0 != pinned).count();
    check(b_before == 4, || format!("expected B's four hits before outA, saw {b_before}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let runs = 30;
    for run in 0..runs {
        let bps: Vec<_> = every.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
        let mut inj = vec![(0, "varA", rng.random_range(-9..10))];
        let mut at = 0;
        for _ in 0..rng.random_range(1..6) {
            at += rng.random_range(0..30);
            inj.push((at, ["varA", "varB"][rng.random_range(0..2)], rng.random_range(-9..10)));
        }
        let (shown, expected, _) = snapshot_run(&bps, &inj);
        check(shown == expected, || format!("run {run} {inj:?}: shown {shown:?}, oracle {expected:?}"))?;
    }
    Ok(format!("A-pinned run shows {} A entries with B's 4 hits first; {runs} random runs match the trace oracle", expected.len()))
}

// ---- 4 -----------------------------------------------------------------

fn criterion_4() -> Outcome {
    let cases = 1_000;
    let strategies = common::message_strategies();
    for (label, strategy) in &strategies {
        let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
        runner
            .run(strategy, |msg| {
                let bytes = encode(&msg).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let back = decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
                if back != msg {
                    return Err(TestCaseError::fail(format!("{back:?} != {msg:?}")));
                }
                Ok(())
            })
            .map_err(|e| format!("{label}: {e}"))?;
    }
    let golden = common::golden();
    let names: BTreeSet<&str> = golden.iter().map(|(m, _)| m.name()).collect();
    check(golden.len() == 16 && names.len() == 16, || "golden set must cover the 16 messages".into())?;
    for (msg, subject) in &golden {
        check(subject_of(msg) == *subject, || format!("{} travels on {}", subject, subject_of(msg)))?;
        let v: serde_json::Value = serde_json::from_slice(&encode(msg).unwrap()).unwrap();
        check(v["subject"] == *subject, || format!("frame subject for {subject}"))?;
    }
    Ok(format!("{} variants x {cases} random round-trips; 16 golden subjects", strategies.len()))
}

// ---- 5 -----------------------------------------------------------------

fn criterion_5() -> Outcome {
    virtual_rt().block_on(async {
        let bus = LocalBus::new();
        let clock = Clock::with_epoch(0);
        let wf = builtin("press");
        let mut agent = start_agent(&bus, clock, wf.clone()).await;

        // (a) auto-select when the first discovery window closes.
        let mut config = ClientConfig::new("MES1");
        config.clock = Some(clock);
        let c = run_client(bus.connect(), config).unwrap();
        c.command(FrontendCommand::SelectWorkflow { workflow_id: "press".into() }).await.unwrap();
        c.wait_for(|s| s.selected_aci.is_some()).await.unwrap();
        let selected_at = clock.elapsed_ms();
        check(selected_at == 5_000, || format!("auto-selected at {selected_at} ms"))?;
        c.wait_for(|s| s.link == LinkStatus::Connected).await.unwrap();

        // (c) restart: link goes down, and a new CommunicationStarted brings it back.
        tokio::time::sleep_until(clock.instant_at(20_000)).await;
        agent.shutdown().await;
        c.wait_for(|s| s.link == LinkStatus::Down).await.unwrap();
        let down_at = clock.elapsed_ms();
        tokio::time::sleep_until(clock.instant_at(40_000)).await;
        agent = start_agent(&bus, clock, wf.clone()).await;
        c.wait_for(|s| s.link == LinkStatus::Connected).await.unwrap();
        let relinked_at = clock.elapsed_ms();
        check(relinked_at == 40_000, || format!("re-linked at {relinked_at} ms, restarted at 40000"))?;
        check(relinked_at - 40_000 <= 10_000, || "re-link slower than one probe interval".into())?;

        // (b) a session whose client vanished is swept.
        c.wait_for(|s| s.workflow_running).await.unwrap();
        c.command(FrontendCommand::SetMode { mode: DebugMode::Profiler }).await.unwrap();
        c.command(FrontendCommand::Start).await.unwrap();
        let started_at = clock.elapsed_ms();
        c.shutdown().await;
        let swept_at = loop {
            let log = agent.log();
            if let Some(r) = log.iter().find(|r| matches!(r.event, AgentEvent::SessionSwept { .. })) {
                break r.at_ms;
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        };
        // The restarted agent's sweeps tick every 30 s from 40 s.
        check(swept_at == 100_000, || format!("swept at {swept_at} ms, session started at {started_at}"))?;
        check(swept_at - started_at <= 35_000 + 30_000, || "sweep later than expiry plus one interval".into())?;
        agent.shutdown().await;
        Ok(format!(
            "auto-select at {selected_at} ms; link down at {down_at} ms, re-linked at {relinked_at} ms (restart 40000); \
             session from {started_at} ms swept at {swept_at} ms"
        ))
    })
}

// ---- 6 -----------------------------------------------------------------

struct Dag {
    def: Arc<WorkflowDefinition>,
    sources: Vec<String>,
}

fn random_dag(rng: &mut ChaCha8Rng, id: usize) -> Dag {
    let n = rng.random_range(2..=8);
    let port = |p: &str| json!({"portId": p, "valueTag": "int64"});
    // 0 source, 1 transform, 2 sink
    let mut kinds = vec![0];
    let mut tasks = vec![json!({"taskId": "t0", "kind": "eventSource", "outputs": [port("out")]})];
    let mut links = Vec::new();
    for i in 1..n {
        let kind = match rng.random_range(0..10) {
            0..=1 if kinds.iter().filter(|k| **k == 0).count() < 3 => 0,
            0..=6 => 1,
            _ => 2,
        };
        let name = format!("t{i}");
        match kind {
            0 => tasks.push(json!({"taskId": name, "kind": "eventSource", "outputs": [port("out")]})),
            1 => {
                let delay = [0, 0, 3, 10][rng.random_range(0..4)];
                tasks.push(json!({"taskId": name, "kind": "transform", "inputs": [port("in")], "outputs": [port("out")],
                    "transformSpec": {"name": "passThrough", "delayMs": delay}}));
            }
            _ => tasks.push(json!({"taskId": name, "kind": "sink", "inputs": [port("in")]})),
        }
        if kind != 0 {
            let parents: Vec<usize> = (0..i).filter(|j| kinds[*j] != 2).collect();
            let p = *parents.choose(rng).unwrap();
            links.push(json!({"fromTask": format!("t{p}"), "fromPort": "out", "toTask": name, "toPort": "in"}));
        }
        kinds.push(kind);
    }
    let doc = json!({"workflowId": format!("dag{id}"), "tasks": tasks, "links": links});
    let def = Arc::new(parse_workflow(&doc.to_string()).expect("generated DAG is valid"));
    let sources = (0..n).filter(|i| kinds[*i] == 0).map(|i| format!("t{i}")).collect();
    Dag { def, sources }
}

type HookKey = (HookSide, String, String, VariableValue, String, HookVerdict);

fn keys(trace: &[TraceRecord]) -> Vec<HookKey> {
    hook_events(trace)
        .into_iter()
        .map(|(e, v)| (e.side, e.task_id.clone(), e.port_id.clone(), e.value.clone(), e.context.context_id.clone(), v))
        .collect()
}

fn remote_trace(def: Arc<WorkflowDefinition>, bps: &[BreakpointDefinition], inputs: &[ManualInput]) -> Vec<TraceRecord> {
    virtual_rt().block_on(async {
        let bus = LocalBus::new();
        let clock = Clock::with_epoch(0);
        let agent = start_agent(&bus, clock, def.clone()).await;
        let c = linked_client(&bus, clock, &def).await;
        start_session(&c, DebugMode::Synchronous, bps).await;
        let engine = agent.engine(&def.workflow_id).unwrap();
        let mut last_seq = 0;
        for input in inputs {
            engine.inject(&input.task_id, &input.port_id, input.value.clone()).await.unwrap();
            loop {
                tokio::select! {
                    s = c.wait_for(|s| s.triggered.as_ref().is_some_and(|e| e.entry_seq > last_seq)) => {
                        last_seq = s.unwrap().triggered.unwrap().entry_seq;
                        c.command(FrontendCommand::Resume).await.unwrap();
                    }
                    _ = engine.wait_quiescent() => break,
                }
            }
        }
        let trace = engine.trace().await.unwrap();
        c.shutdown().await;
        agent.shutdown().await;
        trace
    })
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total_hooks = 0;
    let mut total_pauses = 0;
    for i in 0..10 {
        let dag = random_dag(&mut rng, i);
        let bps: Vec<_> = points(&dag.def).into_iter().filter(|_| rng.random_bool(0.4)).collect();
        let inputs: Vec<_> = (0..rng.random_range(1..=4))
            .map(|_| {
                let src = dag.sources.choose(&mut rng).unwrap();
                ManualInput::new(src.clone(), "out", VariableValue::Int64(rng.random_range(-100..100)))
            })
            .collect();
        let mock = keys(&run_mock_debug(dag.def.clone(), &bps, &inputs).unwrap());
        let remote = keys(&remote_trace(dag.def.clone(), &bps, &inputs));
        check(mock == remote, || {
            format!("workflow {i} ({} tasks): mock {mock:?}\nremote {remote:?}", dag.def.tasks.len())
        })?;
        total_hooks += mock.len();
        total_pauses += mock.iter().filter(|k| k.5 == HookVerdict::SuspendUntilResume).count();
    }
    Ok(format!("10 random DAGs: {total_hooks} hooks ({total_pauses} pauses) identical in mock and remote runs"))
}

// ---- 7 -----------------------------------------------------------------

type EntryKey = (String, String, BreakpointSide, VariableValue, String);

fn entry_key(e: &DebugSessionInfoEntry) -> EntryKey {
    (e.task_id.clone(), e.port_id.clone(), e.side, e.value.clone(), e.context_id.clone())
}

/// Insertion sort on (timestamp, entrySeq), written out as the oracle.
fn oracle_sort(mut v: Vec<DebugSessionInfoEntry>) -> Vec<DebugSessionInfoEntry> {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && (v[j - 1].timestamp, v[j - 1].entry_seq) > (v[j].timestamp, v[j].entry_seq) {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    v
}

async fn profiler_run(rng: &mut ChaCha8Rng) -> Result<(Vec<DebugSessionInfoEntry>, Vec<EntryKey>), String> {
    let bus = LocalBus::new();
    let clock = Clock::with_epoch(1_700_000_000_000);
    let wf = builtin("twovar");
    let agent = start_agent(&bus, clock, wf.clone()).await;
    let mes: BusClient = bus.connect();
    let bps: Vec<_> = points(&wf).into_iter().filter(|_| rng.random_bool(0.7)).collect();
    let mut started = mes.subscribe(&subjects::debug_started("MES1", "AC1", "twovar")).unwrap();
    let start = DebugMessage::StartDebug(StartDebug {
        aci_id: "AC1".into(),
        mes_id: "MES1".into(),
        workflow_id: "twovar".into(),
        debug_mode: DebugMode::Profiler,
        breakpoints: bps.clone(),
    });
    mes.publish(&start.subject(), start.payload()).unwrap();
    let session_id = match DebugMessage::from_envelope(&started.recv().await.unwrap()).unwrap() {
        DebugMessage::DebugStarted(s) => s.session_id,
        other => return Err(format!("unexpected {other:?}")),
    };

    let mut at = 0;
    let steps = (0..rng.random_range(2..10))
        .map(|_| {
            at += rng.random_range(0..25);
            DeviceStep {
                at_ms: at,
                task_id: ["varA", "varB"][rng.random_range(0..2)].into(),
                port_id: "v".into(),
                value: VariableValue::Int64(rng.random_range(0..1000)),
            }
        })
        .collect();
    let engine = agent.engine("twovar").unwrap();
    run_device(&DeviceScript::new(steps), &engine).await.map_err(|e| e.to_string())?;
    engine.wait_quiescent().await.unwrap();

    let mut stopped = mes.subscribe(&subjects::debug_stopped("AC1", &session_id)).unwrap();
    let stop = DebugMessage::StopDebug(StopDebug { aci_id: "AC1".into(), session_id });
    mes.publish(&stop.subject(), stop.payload()).unwrap();
    let registry = match DebugMessage::from_envelope(&stopped.recv().await.unwrap()).unwrap() {
        DebugMessage::DebugStopped(s) => s.registry,
        other => return Err(format!("unexpected {other:?}")),
    };
    let trace = engine.trace().await.unwrap();
    let expected = hook_events(&trace)
        .into_iter()
        .filter(|(ev, _)| hits(&bps, ev))
        .map(|(ev, _)| {
            let side = BreakpointSide::of_hook(ev.side);
            (ev.task_id.clone(), ev.port_id.clone(), side, ev.value.clone(), ev.context.context_id.clone())
        })
        .collect();
    agent.shutdown().await;
    Ok((registry, expected))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let runs = 200;
    let (mut entries, mut multi) = (0, 0);
    for run in 0..runs {
        let (registry, expected) = virtual_rt().block_on(profiler_run(&mut rng))?;
        check(registry == oracle_sort(registry.clone()), || format!("run {run}: registry not in (timestamp, entrySeq) order"))?;
        let got: Vec<_> = registry.iter().map(entry_key).collect();
        check(got == expected, || format!("run {run}: registry {got:?}, trace oracle {expected:?}"))?;
        entries += registry.len();
        if registry.iter().map(|e| &e.context_id).collect::<BTreeSet<_>>().len() > 1 {
            multi += 1;
        }
    }

    // Controller runs with wall clocks that jump backwards, so the sort has work to do.
    let wf = builtin("twovar");
    let every = points(&wf);
    for run in 0..runs {
        let mut ctl = Controller::new("AC1".into(), [wf.clone()], 35_000, IdGen::new(Some(run)));
        let start = DebugMessage::StartDebug(StartDebug {
            aci_id: "AC1".into(),
            mes_id: "MES1".into(),
            workflow_id: "twovar".into(),
            debug_mode: DebugMode::Profiler,
            breakpoints: every.clone(),
        });
        ctl.handle(start, false, 0);
        let session_id = ctl.sessions()[0].session_id.clone();
        let mut recorded = Vec::new();
        for i in 0..rng.random_range(2..30) {
            let bp = every.choose(&mut rng).unwrap();
            let ev = HookEvent {
                side: match bp.side {
                    BreakpointSide::Input => HookSide::AfterSetInputs,
                    BreakpointSide::Output => HookSide::BeforeSetOutputs,
                },
                task_id: bp.task_id.clone(),
                port_id: bp.port_id.clone(),
                value: VariableValue::Int64(i),
                context: Arc::new(ExecutionContext {
                    context_id: rng.random_range(1..5u32).to_string(),
                    origin_task: "varA".into(),
                    origin_port: "v".into(),
                    created_at: 0,
                }),
                seq: i as u64 + 1,
            };
            let wall = rng.random_range(0..5);
            ctl.on_hook("twovar", &ev, i as u64, wall);
            recorded.push(ctl.registry(&session_id).unwrap().last().unwrap().clone());
        }
        let actions = ctl.handle(DebugMessage::StopDebug(StopDebug { aci_id: "AC1".into(), session_id }), false, 100);
        let registry = actions
            .into_iter()
            .find_map(|a| match a {
                Action::Publish(DebugMessage::DebugStopped(s)) => Some(s.registry),
                _ => None,
            })
            .ok_or("no DebugStopped")?;
        check(registry == oracle_sort(recorded), || format!("controller run {run}: order differs from oracle"))?;
        entries += registry.len();
    }
    Ok(format!("{runs} agent runs ({multi} multi-context) plus {runs} shuffled-clock runs; {entries} entries in oracle order"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("scenario suite, fast profile", criterion_1),
        ("availability matrix and random start/stop", criterion_2),
        ("snapshot context isolation", criterion_3),
        ("codec round-trip and golden subjects", criterion_4),
        ("virtual-time timers, paper profile", criterion_5),
        ("mock/remote trace equivalence", criterion_6),
        ("profiler registry ordering", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = WallInstant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
