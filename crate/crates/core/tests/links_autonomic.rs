mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use licas::autonomic::{AutonomicManager, ChangeRequest, Event, EventKind, Stage};
use licas::links::{LinkDynamics, LinkKind, LinkTable};
use licas::registry::{wrap, BehaviourSpec, Operation, ServiceSpec};
use licas::{Registry, Value};
use proptest::prelude::*;

use common::*;

#[derive(Debug, Clone)]
enum Op {
    Use(usize, usize),
    Decay,
}

const ENDS: [&str; 3] = ["A", "B", "A/C"];

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0..3usize, 0..3usize).prop_map(|(s, t)| Op::Use(s, t)),
            1 => Just(Op::Decay),
        ],
        0..80,
    )
}

fn dynamics() -> impl Strategy<Value = LinkDynamics> {
    (0.5..3.0f64, 0.5..0.99f64, 0.5..4.0f64, 0.0..1.0f64, 1.0..3.0f64).prop_map(|(r, f, exist, gap, cap)| {
        LinkDynamics {
            reinforce: r,
            decay_factor: f,
            exist_threshold: exist,
            create_threshold: exist + gap,
            weight_cap: (exist + gap) * cap,
        }
    })
}

/// Straight-line model of the accumulator rules.
#[derive(Default)]
struct Model {
    acc: BTreeMap<(String, String), f64>,
    linked: BTreeSet<(String, String)>,
}

impl Model {
    fn apply(&mut self, d: &LinkDynamics, op: &Op) {
        match op {
            Op::Use(s, t) => {
                let key = (ENDS[*s].to_string(), ENDS[*t].to_string());
                let a = self.acc.entry(key.clone()).or_insert(0.0);
                *a = (*a + d.reinforce).min(d.weight_cap);
                if *a >= d.create_threshold {
                    self.linked.insert(key);
                }
            }
            Op::Decay => {
                let mut dead = Vec::new();
                for (k, a) in self.acc.iter_mut() {
                    *a *= d.decay_factor;
                    if *a < d.exist_threshold {
                        dead.push(k.clone());
                    }
                }
                for k in dead {
                    self.acc.remove(&k);
                    self.linked.remove(&k);
                }
            }
        }
    }

    fn links(&self) -> Vec<(String, String, f64)> {
        self.linked
            .iter()
            .map(|k| (k.0.clone(), k.1.clone(), self.acc[k]))
            .collect()
    }
}

fn registry_with(d: LinkDynamics) -> Registry {
    let r = Registry::with_dynamics(d).unwrap();
    r.add_service(ServiceSpec::new("A", "x")).unwrap();
    r.add_service(ServiceSpec::new("B", "x")).unwrap();
    r.nest_service(&path("A"), ServiceSpec::new("C", "x")).unwrap();
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn link_table_follows_the_model(d in dynamics(), ops in ops()) {
        let registry = registry_with(d);
        let mut model = Model::default();
        for op in &ops {
            model.apply(&d, op);
            match op {
                Op::Use(s, t) => {
                    let w = registry.record_use(ENDS[*s], ENDS[*t]).unwrap();
                    prop_assert!(w <= d.weight_cap);
                }
                Op::Decay => {
                    registry.decay_epoch();
                }
            }
            let got: Vec<_> = registry
                .links()
                .into_iter()
                .filter(|l| l.kind == LinkKind::Dynamic)
                .map(|l| (l.source, l.target, l.weight))
                .collect();
            prop_assert_eq!(&got, &model.links());
            for (_, _, w) in &got {
                prop_assert!(*w >= d.exist_threshold && *w <= d.weight_cap);
            }
        }
    }

    #[test]
    fn fixed_links_never_decay(epochs in 0..50usize) {
        let registry = registry_with(LinkDynamics::default());
        registry.add_link(LinkKind::Permanent, "A", "B").unwrap();
        registry.add_link(LinkKind::Association, "B", "A/C").unwrap();
        for _ in 0..epochs {
            registry.decay_epoch();
        }
        prop_assert_eq!(registry.links().len(), 2);
    }

    #[test]
    fn log_is_bounded_and_ordered(capacity in 1..40usize, events in 0..120usize) {
        let m = AutonomicManager::with_capacity("S", capacity);
        for i in 0..events {
            let mut e = Event::new("S", EventKind::BehaviourResult, Value::Int(i as i64));
            e.timestamp = if i % 3 == 0 { 5 } else { 1_000 + i as u64 };
            m.submit_event(e).unwrap();
        }
        let log = m.log();
        prop_assert_eq!(log.len(), events.min(capacity));
        prop_assert!(log.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        if let Some(last) = log.last() {
            prop_assert_eq!(&last.payload, &Value::Int(events as i64 - 1));
        }
    }
}

#[test]
fn reference_dynamics() {
    let mut t = LinkTable::new(LinkDynamics::default()).unwrap();
    assert!(!t.has_dynamic("A", "B"));
    t.record_use("A", "B");
    t.record_use("A", "B");
    assert!(!t.has_dynamic("A", "B"));
    t.record_use("A", "B");
    assert!(t.has_dynamic("A", "B"));
    let mut epochs = 0;
    while t.has_dynamic("A", "B") {
        t.decay_epoch();
        epochs += 1;
    }
    assert_eq!(epochs, 11);
}

#[test]
fn removing_a_service_drops_its_links() {
    let registry = registry_with(LinkDynamics::default());
    registry.add_link(LinkKind::Permanent, "B", "A/C").unwrap();
    for _ in 0..3 {
        registry.record_use("A/C", "B").unwrap();
    }
    registry.add_link(LinkKind::Association, "A", "B").unwrap();
    registry.remove_service(&path("A/C")).unwrap();
    let left: Vec<_> = registry
        .links()
        .into_iter()
        .map(|l| (l.kind, l.source, l.target))
        .collect();
    assert_eq!(left, vec![(LinkKind::Association, "A".to_string(), "B".to_string())]);
    assert!(registry.record_use("Nope", "B").is_err());
}

fn auto_service(registry: &Registry, id: &str) {
    let n = Arc::new(AtomicI64::new(0));
    let ops = wrap([Operation::new("behaviour", 0, move |_| {
        Ok(Value::Int(n.fetch_add(1, Ordering::SeqCst) + 1))
    })])
    .unwrap();
    registry
        .add_service(
            ServiceSpec::new(id, "auto")
                .handler(ops)
                .behaviour(BehaviourSpec::new(1000).unwrap()),
        )
        .unwrap();
}

fn record_cycle_plan(v: &Value) -> Result<Value, String> {
    let n = match v {
        Value::Map(m) => m.get("payload").cloned().unwrap_or(Value::Null),
        _ => Value::Null,
    };
    Ok(ChangeRequest::list_to_value(&[ChangeRequest::new("adjust-metadata")
        .param("key", "cycle")
        .param("value", n)]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// One service's failing slots never disturb another's pipeline.
    #[test]
    fn faulty_managers_are_isolated(failures in prop::collection::vec(0..3u8, 100..130)) {
        let registry = Registry::new();
        auto_service(&registry, "Good");
        auto_service(&registry, "Bad");
        let good = registry.manager(&path("Good")).unwrap();
        good.install_slot(Stage::Plan, Arc::new(record_cycle_plan));
        good.install_slot(Stage::Execute, Arc::new(|v: &Value| Ok(v.clone())));

        let plan = Arc::new(failures.clone());
        let bad = registry.manager(&path("Bad")).unwrap();
        bad.install_slot(Stage::Analyze, Arc::new(move |v: &Value| {
            let n = match v {
                Value::Map(m) => m.get("payload").and_then(Value::as_int).unwrap_or(0),
                _ => 0,
            };
            match plan[(n as usize - 1) % plan.len()] {
                0 => Err("analysis failed".to_string()),
                1 => std::panic::panic_any("analysis panicked"),
                _ => Ok(v.clone()),
            }
        }));
        bad.install_slot(Stage::Plan, Arc::new(record_cycle_plan));
        bad.install_slot(Stage::Execute, Arc::new(|v: &Value| Ok(v.clone())));

        for i in 1..=failures.len() {
            registry.run_behaviour_cycle(&path("Bad")).unwrap();
            registry.run_behaviour_cycle(&path("Good")).unwrap();
            let meta = registry.info(&path("Good")).unwrap().metadata;
            prop_assert_eq!(meta.get("cycle").cloned(), Some(i.to_string()));
        }
        let faults = bad.log().iter().filter(|e| e.kind == EventKind::Fault).count();
        let expected = failures.iter().filter(|f| **f < 2).count();
        prop_assert_eq!(faults, expected.min(bad.capacity()));
        prop_assert!(good.log().iter().all(|e| e.kind != EventKind::Fault));
        let last_ok = failures.iter().rposition(|f| *f == 2);
        let bad_meta = registry.info(&path("Bad")).unwrap().metadata;
        prop_assert_eq!(bad_meta.get("cycle").cloned(), last_ok.map(|i| (i + 1).to_string()));
        prop_assert_eq!(registry.invoke(&call("Good", "ping")).unwrap(), Value::text("pong"));
    }
}
