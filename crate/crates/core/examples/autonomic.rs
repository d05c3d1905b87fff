//! A MAPE pipeline built from declarative slots: a threshold monitor, a
//! rule planner and a whitelist executor that tags the service when busy.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use licas::autonomic::{SlotSpec, Stage};
use licas::registry::{wrap, BehaviourSpec, Operation};
use licas::{Registry, ServicePath, ServiceSpec, Value};

fn main() {
    let registry = Registry::new();
    let load = Arc::new(AtomicI64::new(0));
    let counter = load.clone();
    let ops = wrap([Operation::new("behaviour", 0, move |_| {
        Ok(Value::Int(counter.fetch_add(2, Ordering::SeqCst) + 2))
    })])
    .unwrap();
    let path = registry
        .add_service(
            ServiceSpec::new("Worker", "worker")
                .handler(ops)
                .behaviour(BehaviourSpec::new(1000).unwrap()),
        )
        .unwrap();

    let manager = registry.manager(&path).unwrap();
    manager.install_slot(
        Stage::Monitor,
        SlotSpec::new("threshold").attr("limit", "5").build().unwrap(),
    );
    manager.install_slot(
        Stage::Plan,
        SlotSpec::new("rule")
            .attr("when", "threshold")
            .attr("action", "adjust-metadata")
            .attr("param-key", "state")
            .attr("param-value", "busy")
            .build()
            .unwrap(),
    );
    manager.install_slot(
        Stage::Execute,
        SlotSpec::new("whitelist")
            .attr("allow", "adjust-metadata")
            .build()
            .unwrap(),
    );

    for cycle in 1..=4 {
        registry.run_behaviour_cycle(&path).unwrap();
        let meta = registry.info(&ServicePath::parse("Worker").unwrap()).unwrap().metadata;
        println!(
            "cycle {cycle}: load {} state {:?}",
            load.load(Ordering::SeqCst),
            meta.get("state")
        );
    }
    for e in manager.log() {
        println!("log {:?} {}", e.kind, e.payload.to_display_string());
    }
}
