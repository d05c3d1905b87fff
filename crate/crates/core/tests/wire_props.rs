mod common;

use base64::Engine;
use licas::wire::{
    decode_call, decode_call_xml, decode_response, decode_value, encode_call, encode_response, encode_value,
    format_literal, format_rest, parse_rest, WireError, WireResponse,
};
use licas::{Fault, FaultCode, Value};
use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn value_round_trip(v in value(5)) {
        prop_assert_eq!(decode_value(&encode_value(&v)).unwrap(), v);
    }

    #[test]
    fn call_round_trip(c in method_call(3)) {
        let body = encode_call(&c);
        prop_assert_eq!(decode_call_xml(&body).unwrap(), c.clone());
        prop_assert_eq!(decode_call(&body, "/ignored", "").unwrap(), c);
    }

    #[test]
    fn encoding_is_pure(v in value(3)) {
        prop_assert_eq!(encode_value(&v), encode_value(&v.clone()));
    }

    #[test]
    fn response_round_trip(v in value(3), code in prop::sample::select(vec![400i64, 401, 403, 404, 405, 422, 500]), msg in xml_string(20)) {
        let ok = WireResponse::Ok(v);
        prop_assert_eq!(decode_response(&encode_response(&ok)).unwrap(), ok);
        let fault = WireResponse::Fault(Fault::new(FaultCode::from_code(code).unwrap(), msg));
        prop_assert_eq!(decode_response(&encode_response(&fault)).unwrap(), fault);
    }

    /// Calls whose arguments all have literal forms decode identically from
    /// both encodings.
    #[test]
    fn rest_and_xml_agree(c in method_call(0)) {
        let scalars = c.args.iter().all(|a| format_literal(a).is_some());
        prop_assume!(scalars);
        let target = format_rest(&c).expect("formattable");
        let (p, q) = target.split_once('?').unwrap_or((&target, ""));
        prop_assert_eq!(parse_rest(p, q).unwrap(), decode_call_xml(&encode_call(&c)).unwrap());
    }
}

#[test]
fn grammar_examples() {
    assert_eq!(encode_value(&Value::Int(5)), "<int>5</int>");
    assert_eq!(encode_value(&Value::List(vec![])), "<list></list>");
    let m = Value::Map([("a".to_string(), Value::Bool(true))].into());
    assert_eq!(
        encode_value(&m),
        r#"<map><entry key="a"><bool>true</bool></entry></map>"#
    );
    assert_eq!(decode_value(&encode_value(&m)).unwrap(), m);
    assert_eq!(decode_value("<real>2.5</real>").unwrap(), Value::Real(2.5));
    assert!(matches!(decode_value("<frob>1</frob>"), Err(WireError::UnknownType(_))));
    assert!(matches!(decode_value("<int>x</int>"), Err(WireError::BadLiteral(_))));
    assert_eq!(
        String::from_utf8(encode_response(&WireResponse::Ok(Value::Null))).unwrap(),
        "<response><value><null/></value></response>"
    );
    let doc = String::from_utf8(encode_response(&WireResponse::Fault(Fault::new(
        FaultCode::BadPassword,
        "bad password",
    ))))
    .unwrap();
    assert!(doc.contains("<code>401</code>"));
}

#[test]
fn base64_matches_standard_engine() {
    let bytes = vec![1u8, 2];
    let expected = base64::engine::general_purpose::STANDARD.encode(&bytes);
    assert_eq!(expected, "AQI=");
    assert_eq!(decode_value("<bin>AQI=</bin>").unwrap(), Value::Binary(bytes.clone()));
    assert_eq!(encode_value(&Value::Binary(bytes)), "<bin>AQI=</bin>");
}

#[test]
fn rest_examples() {
    let c = parse_rest("/service/A/add", "arg0=i:2&arg1=i:3").unwrap();
    assert_eq!(c, call("A", "add").arg(2i64).arg(3i64));
    let c = parse_rest("/service/A/B/echo", "password=p&arg0=s:hi").unwrap();
    assert_eq!(c.service.segments(), ["A", "B"]);
    assert_eq!(c.password, "p");
    assert_eq!(c.args, vec![Value::text("hi")]);
    assert!(matches!(
        parse_rest("/service/A/f", "arg0=i:2&arg2=i:3"),
        Err(WireError::ArgGap(_))
    ));
    assert!(matches!(
        parse_rest("/service/A/f", "arg0=q:2"),
        Err(WireError::BadArgLiteral(0))
    ));
    assert!(matches!(parse_rest("/other/A/f", ""), Err(WireError::BadPath(_))));
    let c = decode_call(b"", "/service/A/ping", "password=p").unwrap();
    assert_eq!(c, call("A", "ping").password("p"));
    assert!(matches!(
        decode_call(b"garbage", "/nowhere", ""),
        Err(WireError::Unparseable { .. })
    ));
}

#[test]
fn depth_limit() {
    let mut doc = String::new();
    for _ in 0..70 {
        doc.push_str("<list>");
    }
    for _ in 0..70 {
        doc.push_str("</list>");
    }
    assert!(matches!(decode_value(&doc), Err(WireError::MalformedXml(_))));
}
