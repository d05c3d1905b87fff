//! Encode a call as XML and as a REST path, then decode both back.

use licas::wire::{
    decode_call_xml, decode_response, encode_call, encode_response, format_rest, parse_rest, WireResponse,
};
use licas::{Fault, FaultCode, MethodCall, ServicePath, Value};

fn main() {
    let call = MethodCall::new(ServicePath::parse("Shop/Basket").unwrap(), "add")
        .password("pw")
        .arg("apple")
        .arg(3i64)
        .arg(Value::List(vec![Value::Real(1.5), Value::Bool(true)]));

    let xml = encode_call(&call);
    println!("{}", String::from_utf8_lossy(&xml));
    assert_eq!(decode_call_xml(&xml).unwrap(), call);

    let simple = MethodCall::new(ServicePath::parse("Shop/Basket").unwrap(), "add")
        .arg("apple")
        .arg(3i64);
    let rest = format_rest(&simple).unwrap();
    println!("rest form: {rest}");
    let (path, query) = rest.split_once('?').unwrap_or((&rest, ""));
    assert_eq!(parse_rest(path, query).unwrap(), simple);

    let fault = WireResponse::from(Err::<Value, _>(Fault::new(FaultCode::NoSuchMethod, "no such method")));
    let body = encode_response(&fault);
    match decode_response(&body).unwrap().into_result() {
        Err(f) => println!("fault {} ({})", f.code.code(), f.message),
        Ok(v) => println!("unexpected {v:?}"),
    }
}
