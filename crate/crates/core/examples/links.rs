//! Permanent, association and usage-driven dynamic links.

use licas::links::{LinkDynamics, LinkKind};
use licas::{Registry, ServiceSpec};

fn main() {
    let registry = Registry::with_dynamics(LinkDynamics::default()).unwrap();
    for id in ["A", "B", "C"] {
        registry.add_service(ServiceSpec::new(id, "node")).unwrap();
    }
    registry.add_link(LinkKind::Permanent, "A", "B").unwrap();
    registry.add_link(LinkKind::Association, "B", "C").unwrap();

    for use_no in 1..=3 {
        let w = registry.record_use("A", "C").unwrap();
        println!("use {use_no}: accumulator {w}, link present: {}", has_link(&registry));
    }
    let mut epoch = 0;
    while has_link(&registry) {
        let w = registry.link_weight("A", "C").unwrap();
        epoch += 1;
        registry.decay_epoch();
        println!("epoch {epoch}: weight before decay {w:.3}");
    }
    println!("dynamic link gone after {epoch} epochs");
    for l in registry.links() {
        println!("{:?} {} -> {}", l.kind, l.source, l.target);
    }
}

fn has_link(registry: &Registry) -> bool {
    registry
        .links_of("A", Some(LinkKind::Dynamic))
        .iter()
        .any(|l| l.target == "C")
}
