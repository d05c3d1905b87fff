//! Two nodes: one polls the other's metadata, calls its services and links
//! to them by full reference.

use licas::registry::{wrap, Operation, ServiceRef};
use licas::server::{Daemon, Server};
use licas::view::NetworkView;
use licas::{Registry, ServiceSpec, Value};

fn main() {
    let far = Registry::new();
    let ops = wrap([Operation::new("double", 1, |a| {
        Ok(Value::Int(a[0].as_int().unwrap_or(0) * 2))
    })])
    .unwrap();
    far.add_service(ServiceSpec::new("Maths", "maths").meta("region", "north").handler(ops))
        .unwrap();
    let daemon = Daemon::start(Server::new(far.clone()), "127.0.0.1:0", 2).unwrap();

    let near = Registry::new();
    near.add_service(ServiceSpec::new("Client", "client")).unwrap();
    let url = daemon.url();
    near.register_peer(&url).unwrap();
    let peer = near.refresh_peer(&url).unwrap();
    let view = NetworkView::parse(peer.meta.as_deref().unwrap()).unwrap();
    println!(
        "peer {} hosts {:?}",
        peer.url,
        view.find("Maths").map(|s| s.metadata.clone())
    );

    let target: ServiceRef = format!("{url}/service/Maths").parse().unwrap();
    println!(
        "remote double(21) = {:?}",
        near.call_ref(&target, "double", "", vec![Value::Int(21)]).unwrap()
    );

    for _ in 0..3 {
        near.record_use("Client", &target.to_string()).unwrap();
    }
    for l in near.links() {
        println!("{:?} {} -> {} ({})", l.kind, l.source, l.target, l.weight);
    }
    daemon.shutdown();
}
