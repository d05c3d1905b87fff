//! Host a service over HTTP and call it three ways: XML, REST and through a
//! second registry acting as client.

use licas::registry::{wrap, Operation};
use licas::server::{Daemon, Server};
use licas::wire::encode_call;
use licas::{MethodCall, Registry, ServicePath, ServiceSpec, Value};

fn main() {
    let registry = Registry::new();
    let greeter = wrap([Operation::new("greet", 1, |a| {
        Ok(Value::text(format!("hello {}", a[0].to_display_string())))
    })])
    .unwrap();
    registry
        .add_service(ServiceSpec::new("Greeter", "greeter").handler(greeter))
        .unwrap();

    let daemon = Daemon::start(Server::new(registry.clone()), "127.0.0.1:0", 2).unwrap();
    let url = daemon.url();
    println!("listening on {url}");

    let call = MethodCall::new(ServicePath::parse("Greeter").unwrap(), "greet").arg("world");
    let client = Registry::new();
    println!("xml call: {:?}", client.call_remote(&url, &call).unwrap());

    let http = client.http();
    let rest = http.get(&format!("{url}/service/Greeter/greet?arg0=s:rest")).unwrap();
    println!("rest call: {}", String::from_utf8_lossy(&rest.body));
    let raw = http
        .post(&format!("{url}/service"), "text/xml", &encode_call(&call))
        .unwrap();
    println!("raw status {}", raw.status);
    println!(
        "meta:\n{}",
        String::from_utf8_lossy(&http.get(&format!("{url}/meta")).unwrap().body)
    );

    daemon.shutdown();
}
