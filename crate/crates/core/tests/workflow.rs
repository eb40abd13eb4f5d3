use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use flowdbg_core::workflow::*;
use proptest::prelude::*;
use serde_json::json;

#[derive(Debug, Clone, Copy)]
enum Conv {
    None,
    Identity,
    Scale(f64),
    Offset(f64),
}

impl Conv {
    fn doc(self) -> Option<serde_json::Value> {
        match self {
            Conv::None => None,
            Conv::Identity => Some(json!({"kind": "identity", "params": []})),
            Conv::Scale(f) => Some(json!({"kind": "scale", "params": [f]})),
            Conv::Offset(d) => Some(json!({"kind": "offset", "params": [d]})),
        }
    }

    fn fold(self, x: f64) -> f64 {
        match self {
            Conv::None | Conv::Identity => x,
            Conv::Scale(f) => x * f,
            Conv::Offset(d) => x + d,
        }
    }
}

fn conv() -> impl Strategy<Value = Conv> {
    prop_oneof![
        Just(Conv::None),
        Just(Conv::Identity),
        (-8i32..=8).prop_map(|f| Conv::Scale(f as f64 / 2.0)),
        (-100i32..=100).prop_map(|d| Conv::Offset(d as f64)),
    ]
}

/// src -> t1 -> ... -> tk -> sink, float64 throughout; `convs` has k+1 links.
fn chain(convs: &[Conv]) -> Arc<WorkflowDefinition> {
    let k = convs.len() - 1;
    let port = |id: &str| json!({"portId": id, "valueTag": "float64"});
    let mut tasks = vec![json!({"taskId": "src", "kind": "eventSource", "outputs": [port("out")]})];
    for i in 1..=k {
        tasks.push(json!({"taskId": format!("t{i}"), "kind": "transform",
            "inputs": [port("in")], "outputs": [port("out")], "transformSpec": {"name": "passThrough"}}));
    }
    tasks.push(json!({"taskId": "sink", "kind": "sink", "inputs": [port("in")]}));
    let name = |i: usize| match i {
        0 => "src".to_string(),
        i if i == k + 1 => "sink".to_string(),
        i => format!("t{i}"),
    };
    let links: Vec<_> = convs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut l = json!({"fromTask": name(i), "fromPort": "out", "toTask": name(i + 1), "toPort": "in"});
            if let Some(d) = c.doc() {
                l["converter"] = d;
            }
            l
        })
        .collect();
    let doc = json!({"workflowId": "chain", "tasks": tasks, "links": links});
    Arc::new(parse_workflow(&doc.to_string()).expect("chain is valid"))
}

/// Drive a sans-IO engine until nothing is due, resuming any suspension.
fn settle(engine: &mut Engine, now: &mut u64, hooks: &dyn HookDelegate) {
    loop {
        engine.run_due(*now, hooks);
        if engine.is_suspended() {
            engine.resume(*now);
            continue;
        }
        match engine.next_due() {
            Some(due) => *now = (*now).max(due),
            None => break,
        }
    }
}

fn hooks_of(trace: &[TraceRecord]) -> Vec<&HookEvent> {
    trace
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Hook { event, .. } => Some(event),
            _ => None,
        })
        .collect()
}

fn fixture(name: &str) -> Arc<WorkflowDefinition> {
    let path = format!("{}/scenarios/workflows/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Arc::new(parse_workflow(&std::fs::read_to_string(path).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chain_hooks_match_enumeration(convs in prop::collection::vec(conv(), 1..=6), x in -1000i32..1000) {
        let k = convs.len() - 1;
        let def = chain(&convs);
        let mut engine = Engine::new(def).with_trace();
        let mut now = 0;
        let ctx = engine.inject("src", "out", VariableValue::Float64(x as f64), now, &ProceedAlways).unwrap();
        settle(&mut engine, &mut now, &ProceedAlways);

        // Enumerated by hand: source output, then per link destination input
        // followed by that task's output.
        let mut expected = vec![(HookSide::BeforeSetOutputs, "src".to_string())];
        for i in 1..=k {
            expected.push((HookSide::AfterSetInputs, format!("t{i}")));
            expected.push((HookSide::BeforeSetOutputs, format!("t{i}")));
        }
        expected.push((HookSide::AfterSetInputs, "sink".to_string()));

        let hooks = hooks_of(engine.trace());
        let got: Vec<_> = hooks.iter().map(|h| (h.side, h.task_id.clone())).collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(hooks.iter().filter(|h| h.side == HookSide::BeforeSetOutputs).count(), 1 + k);
        prop_assert_eq!(hooks.iter().filter(|h| h.side == HookSide::AfterSetInputs).count(), 1 + k);
        prop_assert!(hooks.iter().all(|h| h.context.context_id == ctx.context_id));
        prop_assert!(hooks.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn sink_input_is_converter_fold(convs in prop::collection::vec(conv(), 1..=6), x in -1000i32..1000) {
        let def = chain(&convs);
        let mut engine = Engine::new(def);
        let mut now = 0;
        engine.inject("src", "out", VariableValue::Float64(x as f64), now, &ProceedAlways).unwrap();
        settle(&mut engine, &mut now, &ProceedAlways);
        let want = convs.iter().fold(x as f64, |v, c| c.fold(v));
        prop_assert_eq!(
            engine.port_value("sink", PortDirection::Input, "in"),
            Some(&VariableValue::Float64(want))
        );
    }

    #[test]
    fn contexts_never_leak_between_injections(
        steps in prop::collection::vec((0u64..200, any::<bool>(), -50i64..50), 1..12)
    ) {
        let mut steps = steps;
        steps.sort_by_key(|s| s.0);
        let mut engine = Engine::new(fixture("twovar")).with_trace();
        let mut origin = BTreeMap::new();
        let mut now = 0;
        for (at, a, v) in &steps {
            engine.run_due(*at, &ProceedAlways);
            now = now.max(*at);
            let src = if *a { "varA" } else { "varB" };
            let ctx = engine.inject(src, "v", VariableValue::Int64(*v), now, &ProceedAlways).unwrap();
            prop_assert!(origin.insert(ctx.context_id.clone(), (src, *v)).is_none(), "context ids are fresh");
        }
        settle(&mut engine, &mut now, &ProceedAlways);
        let hooks = hooks_of(engine.trace());
        prop_assert_eq!(hooks.len(), steps.len() * 4);
        for h in hooks {
            let (src, v) = origin[&h.context.context_id];
            let branch = if src == "varA" { ["varA", "slowA", "outA"] } else { ["varB", "fastB", "outB"] };
            prop_assert!(branch.contains(&h.task_id.as_str()), "{} carried into {}", src, h.task_id);
            prop_assert_eq!(&h.value, &VariableValue::Int64(v));
        }
    }

    #[test]
    fn identity_keeps_every_value(v in prop_oneof![
        any::<bool>().prop_map(VariableValue::Bool),
        any::<i64>().prop_map(VariableValue::Int64),
        prop::num::f64::NORMAL.prop_map(VariableValue::Float64),
        ".{0,8}".prop_map(VariableValue::Text),
    ]) {
        prop_assert_eq!(apply_converter(&ValueConverter::Identity, &v).unwrap(), v);
    }

    #[test]
    fn int_float_int_cast_round_trips(v in -(1i64 << 53) + 1..(1i64 << 53)) {
        let f = apply_converter(&ValueConverter::Cast { target: ValueTag::Float64 }, &VariableValue::Int64(v)).unwrap();
        let back = apply_converter(&ValueConverter::Cast { target: ValueTag::Int64 }, &f).unwrap();
        prop_assert_eq!(back, VariableValue::Int64(v));
    }

    #[test]
    fn cycles_are_rejected_exactly_when_present(n in 2usize..7, extra in prop::collection::vec((0usize..7, 1usize..7), 0..6), spine in prop::collection::vec(0usize..7, 6)) {
        // Node i>0 gets one edge from a lower node, so all are reachable;
        // extra edges may close cycles.
        let mut edges: HashSet<(usize, usize)> = (1..n).map(|j| (spine[j - 1] % j, j)).collect();
        edges.extend(extra.into_iter().filter(|(a, b)| *a < n && *b < n && *b != 0));
        let port = |id: &str| json!({"portId": id, "valueTag": "int64"});
        let mut tasks = vec![json!({"taskId": "n0", "kind": "eventSource", "outputs": [port("out")]})];
        for i in 1..n {
            tasks.push(json!({"taskId": format!("n{i}"), "kind": "transform", "inputs": [port("in")],
                "outputs": [port("out")], "transformSpec": {"name": "passThrough"}}));
        }
        let links: Vec<_> = edges.iter().map(|(a, b)| json!({"fromTask": format!("n{a}"), "fromPort": "out",
            "toTask": format!("n{b}"), "toPort": "in"})).collect();
        let doc = json!({"workflowId": "g", "tasks": tasks, "links": links}).to_string();

        // Oracle: colour DFS over the adjacency list.
        fn dfs(u: usize, adj: &[Vec<usize>], colour: &mut [u8]) -> bool {
            colour[u] = 1;
            for &v in &adj[u] {
                if colour[v] == 1 || (colour[v] == 0 && dfs(v, adj, colour)) {
                    return true;
                }
            }
            colour[u] = 2;
            false
        }
        let mut adj = vec![Vec::new(); n];
        for (a, b) in &edges {
            adj[*a].push(*b);
        }
        let mut colour = vec![0u8; n];
        let cyclic = (0..n).any(|u| colour[u] == 0 && dfs(u, &adj, &mut colour));

        match parse_workflow(&doc) {
            Ok(_) => prop_assert!(!cyclic),
            Err(WorkflowError::Validation { reason: ValidationReason::Cycle(path), .. }) => {
                prop_assert!(cyclic);
                prop_assert!(path.len() >= 2);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

#[test]
fn slow_branch_interleaves_but_keeps_contexts_apart() {
    let mut engine = Engine::new(fixture("twovar")).with_trace();
    let mut now = 0;
    let a = engine.inject("varA", "v", VariableValue::Int64(1), now, &ProceedAlways).unwrap();
    let b = engine.inject("varB", "v", VariableValue::Int64(2), now, &ProceedAlways).unwrap();
    settle(&mut engine, &mut now, &ProceedAlways);
    let got: Vec<(String, HookSide, String)> = hooks_of(engine.trace())
        .iter()
        .map(|h| (h.task_id.clone(), h.side, h.context.context_id.clone()))
        .collect();
    let (ca, cb) = (a.context_id.clone(), b.context_id.clone());
    use HookSide::*;
    let want = vec![
        ("varA".to_string(), BeforeSetOutputs, ca.clone()),
        ("varB".to_string(), BeforeSetOutputs, cb.clone()),
        ("slowA".to_string(), AfterSetInputs, ca.clone()),
        ("fastB".to_string(), AfterSetInputs, cb.clone()),
        ("fastB".to_string(), BeforeSetOutputs, cb.clone()),
        ("outB".to_string(), AfterSetInputs, cb.clone()),
        ("slowA".to_string(), BeforeSetOutputs, ca.clone()),
        ("outA".to_string(), AfterSetInputs, ca.clone()),
    ];
    assert_eq!(got, want);
    assert_ne!(ca, cb);
    assert_eq!(now, 40, "A's output waits for the slow transform");
}

#[test]
fn two_task_graph_fires_two_hooks() {
    let doc = json!({"workflowId": "w", "tasks": [
        {"taskId": "src", "kind": "eventSource", "outputs": [{"portId": "out", "valueTag": "int64"}]},
        {"taskId": "sink", "kind": "sink", "inputs": [{"portId": "in", "valueTag": "int64"}]}],
        "links": [{"fromTask": "src", "fromPort": "out", "toTask": "sink", "toPort": "in"}]});
    let mut engine = Engine::new(Arc::new(parse_workflow(&doc.to_string()).unwrap())).with_trace();
    let mut now = 0;
    engine.inject("src", "out", VariableValue::Int64(1), now, &ProceedAlways).unwrap();
    settle(&mut engine, &mut now, &ProceedAlways);
    let hooks = hooks_of(engine.trace());
    let got: Vec<_> = hooks.iter().map(|h| (h.side, h.task_id.as_str(), h.port_id.as_str(), h.seq)).collect();
    assert_eq!(
        got,
        vec![(HookSide::BeforeSetOutputs, "src", "out", 1), (HookSide::AfterSetInputs, "sink", "in", 2)]
    );
    assert_eq!(engine.status().contexts_created, 1);
}

/// Suspends at calib.out; while suspended every new event is dropped.
struct PauseAtCalib;

impl HookDelegate for PauseAtCalib {
    fn on_hook(&self, ev: &HookEvent) -> HookVerdict {
        if ev.task_id == "calib" && ev.side == HookSide::BeforeSetOutputs {
            HookVerdict::SuspendUntilResume
        } else {
            HookVerdict::Proceed
        }
    }
}

struct DropAll;

impl HookDelegate for DropAll {
    fn on_hook(&self, _: &HookEvent) -> HookVerdict {
        HookVerdict::DropEvent
    }
}

#[test]
fn injection_while_suspended_is_dropped() {
    let mut engine = Engine::new(fixture("press")).with_trace();
    let first = engine.inject("sensor", "temp", VariableValue::Float64(90.0), 0, &PauseAtCalib).unwrap();
    engine.run_due(0, &PauseAtCalib);
    assert!(engine.is_suspended());
    assert_eq!(engine.port_value("log", PortDirection::Input, "in"), Some(&VariableValue::Bool(false)));

    let second = engine.inject("sensor", "temp", VariableValue::Float64(10.0), 1, &DropAll).unwrap();
    assert_eq!(engine.status().pending_steps, 0, "the dropped change never enters the agenda");

    assert!(engine.resume(2));
    let mut now = 2;
    settle(&mut engine, &mut now, &ProceedAlways);
    // 90 - 2 = 88 > 80: only the original flow reaches the sink.
    assert_eq!(engine.port_value("log", PortDirection::Input, "in"), Some(&VariableValue::Bool(true)));
    let second_hooks: Vec<_> = hooks_of(engine.trace())
        .into_iter()
        .filter(|h| h.context.context_id == second.context_id)
        .collect();
    assert_eq!(second_hooks.len(), 1, "judged once, then discarded");
    assert_eq!(second_hooks[0].task_id, "sensor");
    let after_resume = engine
        .trace()
        .iter()
        .skip_while(|r| !matches!(r, TraceRecord::Resumed))
        .filter_map(|r| match r {
            TraceRecord::Hook { event, .. } => Some(event.task_id.as_str()),
            _ => None,
        })
        .collect::<Vec<_>>();
    assert_eq!(after_resume, vec!["alarm", "alarm", "log"]);
    assert!(hooks_of(engine.trace()).iter().all(|h| h.context.context_id == first.context_id || h.context.context_id == second.context_id));
}

#[test]
fn transform_port_is_not_injectable() {
    let mut engine = Engine::new(fixture("press"));
    let err = engine.inject("calib", "out", VariableValue::Float64(1.0), 0, &ProceedAlways).unwrap_err();
    assert!(matches!(err, EngineError::UnknownPort { .. }));
    let err = engine.inject("sensor", "temp", VariableValue::Int64(1), 0, &ProceedAlways).unwrap_err();
    assert!(matches!(err, EngineError::TagMismatch { .. }));
}

#[test]
fn scale_converter_example() {
    let v = apply_converter(&ValueConverter::Scale { factor: 2.5 }, &VariableValue::Float64(4.0)).unwrap();
    assert_eq!(v, VariableValue::Float64(4.0 * 2.5));
}

#[tokio::test(start_paused = true)]
async fn handle_resumes_suspended_flow() {
    let engine = EngineHandle::start(fixture("press"), Arc::new(PauseAtCalib));
    engine.inject("sensor", "temp", VariableValue::Float64(90.0)).await.unwrap();
    engine.wait_suspended().await.unwrap();
    assert_eq!(
        engine.port_value("log", PortDirection::Input, "in").await.unwrap(),
        Some(VariableValue::Bool(false))
    );
    engine.resume();
    engine.wait_quiescent().await.unwrap();
    assert_eq!(
        engine.port_value("log", PortDirection::Input, "in").await.unwrap(),
        Some(VariableValue::Bool(true))
    );
    engine.stop();
}
