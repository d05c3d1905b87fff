mod common;

use std::sync::Arc;

use licas::http::RemoteError;
use licas::registry::{wrap, Operation, RegistryError, ServiceRef, ServiceSpec};
use licas::resources::FileService;
use licas::server::{Daemon, Server};
use licas::view::NetworkView;
use licas::{FaultCode, Registry, Value};
use proptest::prelude::*;

use common::*;

fn calc_node() -> (Registry, Daemon) {
    let registry = Registry::new();
    let ops = wrap([
        Operation::new("add", 2, |a| match (&a[0], &a[1]) {
            (Value::Int(x), Value::Int(y)) => Ok(Value::Int(x.wrapping_add(*y))),
            _ => Ok(Value::Null),
        }),
        Operation::variadic("collect", |a| Ok(Value::List(a.to_vec()))),
    ])
    .unwrap();
    registry
        .add_service(
            ServiceSpec::new("Calc", "calc")
                .password("pw")
                .meta("owner", "a")
                .handler(ops),
        )
        .unwrap();
    registry
        .nest_service(
            &path("Calc"),
            ServiceSpec::new("Inner", "calc").handler(wrap([Operation::new("echo", 1, |a| Ok(a[0].clone()))]).unwrap()),
        )
        .unwrap();
    let daemon = Daemon::start(Server::new(registry.clone()), "127.0.0.1:0", 4).unwrap();
    (registry, daemon)
}

#[test]
fn remote_calls_match_local_dispatch() {
    let (a, daemon) = calc_node();
    let b = Registry::new();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(64));
    runner
        .run(&prop::collection::vec(value(2), 0..4), |args| {
            let c = call("Calc", "collect").password("pw").args(args);
            prop_assert_eq!(b.call_remote(&daemon.url(), &c).unwrap(), a.invoke(&c).unwrap());
            Ok(())
        })
        .unwrap();

    let c = call("Calc", "add").password("pw").arg(2i64).arg(3i64);
    assert_eq!(b.call_remote(&daemon.url(), &c).unwrap(), Value::Int(5));
    let nested = call("Calc/Inner", "echo").arg("x");
    assert_eq!(
        b.call_remote(&daemon.url(), &nested).unwrap(),
        a.invoke(&nested).unwrap()
    );

    let wrong = call("Calc", "add").password("nope").arg(1i64).arg(1i64);
    match b.call_remote(&daemon.url(), &wrong) {
        Err(RemoteError::Fault(f)) => assert_eq!(f.code, FaultCode::BadPassword),
        other => panic!("{other:?}"),
    }
    let target: ServiceRef = format!("{}/service/Calc/Inner", daemon.url()).parse().unwrap();
    assert_eq!(
        b.call_ref(&target, "echo", "", vec![Value::Int(7)]).unwrap(),
        Value::Int(7)
    );
    daemon.shutdown();
}

#[test]
fn peer_metadata_follows_the_remote_view() {
    let (a, daemon) = calc_node();
    let b = Registry::new();
    let url = daemon.url();
    b.register_peer(&url).unwrap();
    assert!(matches!(
        b.register_peer(&format!("{url}/")),
        Err(RegistryError::DuplicatePeer(_))
    ));
    assert!(b.peer(&url).unwrap().meta.is_none());

    let peer = b.refresh_peer(&url).unwrap();
    let cached = NetworkView::parse(peer.meta.as_deref().unwrap()).unwrap();
    assert_eq!(cached, a.view());
    assert!(cached.find("Calc/Inner").is_some());
    assert!(peer.last_seen.is_some());

    a.set_metadata(&path("Calc"), "owner", "b").unwrap();
    let peer = b.refresh_peer(&url).unwrap();
    assert_eq!(NetworkView::parse(peer.meta.as_deref().unwrap()).unwrap(), a.view());

    daemon.shutdown();
    assert!(matches!(b.refresh_peer(&url), Err(RegistryError::PeerUnreachable(_))));
    assert_eq!(b.peer(&url).unwrap(), peer, "stale cache is kept");
    match b.call_remote(&url, &call("Calc", "ping")) {
        Err(RemoteError::Unreachable(_)) => {}
        other => panic!("{other:?}"),
    }
    b.remove_peer(&url).unwrap();
    assert!(b.peers().is_empty());
    assert!(matches!(b.refresh_peer(&url), Err(RegistryError::NoSuchPeer(_))));
    assert!(matches!(b.register_peer("ftp://x"), Err(RegistryError::BadUrl(_))));
}

#[test]
fn files_move_between_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let payload: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
    std::fs::write(dir.path().join("data.bin"), &payload).unwrap();

    let a = Registry::new();
    a.file_roots().write().add("shared", dir.path()).unwrap();
    a.add_service(ServiceSpec::new("Files", "file").handler(Arc::new(FileService::new(a.file_roots()))))
        .unwrap();
    let daemon = Daemon::start(Server::new(a.clone()), "127.0.0.1:0", 2).unwrap();

    let b = Registry::new();
    let fetched = b
        .call_remote(&daemon.url(), &call("Files", "fetch").arg("shared/data.bin"))
        .unwrap();
    assert_eq!(fetched, Value::Binary(payload.clone()));
    let listing = b
        .call_remote(&daemon.url(), &call("Files", "list").arg("shared"))
        .unwrap();
    assert_eq!(listing, Value::List(vec![Value::text("data.bin")]));

    let http = b
        .http()
        .get(&format!("{}/files/shared/data.bin", daemon.url()))
        .unwrap();
    assert_eq!((http.status, http.body), (200, payload));

    match b.call_remote(&daemon.url(), &call("Files", "fetch").arg("shared/../../etc/passwd")) {
        Err(RemoteError::Fault(f)) => assert!(matches!(f.code, FaultCode::ForbiddenPath | FaultCode::NoSuchService)),
        other => panic!("{other:?}"),
    }
    daemon.shutdown();
}

#[test]
fn cross_node_links_use_full_refs() {
    let (_a, daemon) = calc_node();
    let b = Registry::new();
    b.add_service(ServiceSpec::new("Local", "x")).unwrap();
    let remote = format!("{}/service/Calc", daemon.url());
    for _ in 0..3 {
        b.record_use("Local", &remote).unwrap();
    }
    let links = b.links();
    assert_eq!(links.len(), 1);
    assert_eq!(links[0].target, remote);
    daemon.shutdown();
}
