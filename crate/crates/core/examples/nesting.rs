//! Services nested inside services, each with its own password.

use licas::{FaultCode, MethodCall, Registry, ServicePath, ServiceSpec};

fn main() {
    let registry = Registry::new();
    let store = registry
        .add_service(ServiceSpec::new("Store", "store").meta("city", "Belfast"))
        .unwrap();
    let dept = registry
        .nest_service(&store, ServiceSpec::new("Garden", "dept"))
        .unwrap();
    registry
        .nest_service(&dept, ServiceSpec::new("Till", "till").password("1234"))
        .unwrap();

    for p in registry.paths() {
        println!("{p} (depth {})", p.depth());
    }
    println!("children of Store: {:?}", registry.children(&store));

    let till = ServicePath::parse("Store/Garden/Till").unwrap();
    let denied = registry
        .invoke(&MethodCall::new(till.clone(), "ping").password("wrong"))
        .unwrap_err();
    assert_eq!(denied.code, FaultCode::BadPassword);
    let ok = registry
        .invoke(&MethodCall::new(till, "ping").password("1234"))
        .unwrap();
    println!("till says {ok:?}");

    println!("removed {} services", registry.remove_service(&dept).unwrap());
    println!("{}", registry.network_view());
}
