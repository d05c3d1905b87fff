//! The message codec: values, method calls, responses and the REST form.
//!
//! Grammar (all elements written without whitespace):
//!
//! ```text
//! value    := <bool>true|false</bool> | <int>i64</int> | <real>f64</real>
//!           | <str>text</str> | <bin>base64</bin> | <null/>
//!           | <list>value*</list> | <map>(<entry key="k">value</entry>)*</map>
//! call     := <method><password>pw</password><service>A/B</service>
//!             <name>m</name><params>(<param>value</param>)*</params></method>
//! response := <response><value>value</value></response>
//!           | <fault><code>N</code><message>text</message></fault>
//! ```
//!
//! Map entries are written in key order, reals in shortest round-trip form.
//! Text containing C0 control characters other than tab, LF and CR cannot be
//! carried by XML 1.0; send such content as `bin`.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;

use crate::xml::{self, escape_attr, escape_text};

/// Container nesting accepted when decoding values.
pub const MAX_VALUE_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Binary(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
    Null,
}

impl Value {
    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Numeric view of ints and reals.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Text(_) => "str",
            Value::Binary(_) => "bin",
            Value::List(_) => "list",
            Value::Map(_) => "map",
            Value::Null => "null",
        }
    }

    /// Human-readable rendering used by the CLI.
    pub fn to_display_string(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => s.clone(),
            Value::Binary(b) => BASE64.encode(b),
            Value::Null => "null".to_string(),
            Value::List(items) => {
                let inner: Vec<String> = items.iter().map(Value::to_display_string).collect();
                format!("[{}]", inner.join(", "))
            }
            Value::Map(map) => {
                let inner: Vec<String> = map
                    .iter()
                    .map(|(k, v)| format!("{k}: {}", v.to_display_string()))
                    .collect();
                format!("{{{}}}", inner.join(", "))
            }
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// Slash-separated address of a hosted service, e.g. `A/B` for `B` nested in `A`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServicePath(Vec<String>);

impl ServicePath {
    pub fn parse(text: &str) -> Result<Self, WireError> {
        let segments: Vec<String> = text.split('/').map(str::to_string).collect();
        Self::from_segments(segments)
    }

    pub fn from_segments(segments: Vec<String>) -> Result<Self, WireError> {
        if segments.is_empty() {
            return Err(WireError::BadPath("empty service path".into()));
        }
        for s in &segments {
            if !is_valid_segment(s) {
                return Err(WireError::BadPath(format!("invalid path segment {s:?}")));
            }
        }
        Ok(ServicePath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    /// The last segment: the service's own id.
    pub fn id(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or_default()
    }

    pub fn parent(&self) -> Option<ServicePath> {
        (self.0.len() > 1).then(|| ServicePath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn join(&self, id: &str) -> Result<ServicePath, WireError> {
        let mut segments = self.0.clone();
        segments.push(id.to_string());
        Self::from_segments(segments)
    }

    /// True when `self` equals `other` or lies underneath it.
    pub fn starts_with(&self, other: &ServicePath) -> bool {
        self.0.len() >= other.0.len() && self.0[..other.0.len()] == other.0[..]
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for ServicePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl std::str::FromStr for ServicePath {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServicePath::parse(s)
    }
}

pub(crate) fn is_valid_segment(s: &str) -> bool {
    !s.is_empty() && !s.contains('/') && !s.chars().any(char::is_control) && s != "." && s != ".."
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCall {
    pub service: ServicePath,
    pub method: String,
    pub password: String,
    pub args: Vec<Value>,
}

impl MethodCall {
    pub fn new(service: ServicePath, method: impl Into<String>) -> Self {
        MethodCall {
            service,
            method: method.into(),
            password: String::new(),
            args: Vec::new(),
        }
    }

    pub fn password(mut self, password: impl Into<String>) -> Self {
        self.password = password.into();
        self
    }

    pub fn arg(mut self, value: impl Into<Value>) -> Self {
        self.args.push(value.into());
        self
    }

    pub fn args(mut self, args: Vec<Value>) -> Self {
        self.args = args;
        self
    }
}

/// Fixed fault-code table shared by the server and every client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultCode {
    Unparseable,
    BadPassword,
    ForbiddenPath,
    NoSuchService,
    NoSuchMethod,
    BadArguments,
    ServiceError,
}

impl FaultCode {
    pub fn code(self) -> u16 {
        match self {
            FaultCode::Unparseable => 400,
            FaultCode::BadPassword => 401,
            FaultCode::ForbiddenPath => 403,
            FaultCode::NoSuchService => 404,
            FaultCode::NoSuchMethod => 405,
            FaultCode::BadArguments => 422,
            FaultCode::ServiceError => 500,
        }
    }

    pub fn from_code(code: i64) -> Option<FaultCode> {
        Some(match code {
            400 => FaultCode::Unparseable,
            401 => FaultCode::BadPassword,
            403 => FaultCode::ForbiddenPath,
            404 => FaultCode::NoSuchService,
            405 => FaultCode::NoSuchMethod,
            422 => FaultCode::BadArguments,
            500 => FaultCode::ServiceError,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("fault {}: {message}", code.code())]
pub struct Fault {
    pub code: FaultCode,
    pub message: String,
}

impl Fault {
    pub fn new(code: FaultCode, message: impl Into<String>) -> Self {
        Fault {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireResponse {
    Ok(Value),
    Fault(Fault),
}

impl From<Result<Value, Fault>> for WireResponse {
    fn from(r: Result<Value, Fault>) -> Self {
        match r {
            Ok(v) => WireResponse::Ok(v),
            Err(f) => WireResponse::Fault(f),
        }
    }
}

impl WireResponse {
    pub fn into_result(self) -> Result<Value, Fault> {
        match self {
            WireResponse::Ok(v) => Ok(v),
            WireResponse::Fault(f) => Err(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unknown value type <{0}>")]
    UnknownType(String),
    #[error("bad literal: {0}")]
    BadLiteral(String),
    #[error("bad REST path: {0}")]
    BadPath(String),
    #[error("bad literal for arg{0}")]
    BadArgLiteral(usize),
    #[error("argument gap: arg{0} missing")]
    ArgGap(usize),
    #[error("unparseable request (xml: {xml}; rest: {rest})")]
    Unparseable { xml: Box<WireError>, rest: Box<WireError> },
}

impl From<xml::XmlError> for WireError {
    fn from(e: xml::XmlError) -> Self {
        WireError::MalformedXml(e.0)
    }
}

// ---------------------------------------------------------------- encoding

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_real(r: f64) -> String {
    format!("{r:?}")
}

pub fn encode_value(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Bool(b) => {
            out.push_str("<bool>");
            out.push_str(if *b { "true" } else { "false" });
            out.push_str("</bool>");
        }
        Value::Int(i) => {
            out.push_str("<int>");
            out.push_str(&i.to_string());
            out.push_str("</int>");
        }
        Value::Real(r) => {
            out.push_str("<real>");
            out.push_str(&format_real(*r));
            out.push_str("</real>");
        }
        Value::Text(s) => {
            out.push_str("<str>");
            out.push_str(&escape_text(s));
            out.push_str("</str>");
        }
        Value::Binary(b) => {
            out.push_str("<bin>");
            out.push_str(&BASE64.encode(b));
            out.push_str("</bin>");
        }
        Value::List(items) => {
            out.push_str("<list>");
            for item in items {
                write_value(out, item);
            }
            out.push_str("</list>");
        }
        Value::Map(map) => {
            out.push_str("<map>");
            for (k, item) in map {
                out.push_str("<entry key=\"");
                out.push_str(&escape_attr(k));
                out.push_str("\">");
                write_value(out, item);
                out.push_str("</entry>");
            }
            out.push_str("</map>");
        }
        Value::Null => out.push_str("<null/>"),
    }
}

pub fn encode_call(c: &MethodCall) -> Vec<u8> {
    let mut out = String::from("<method><password>");
    out.push_str(&escape_text(&c.password));
    out.push_str("</password><service>");
    out.push_str(&escape_text(&c.service.to_string()));
    out.push_str("</service><name>");
    out.push_str(&escape_text(&c.method));
    out.push_str("</name><params>");
    for arg in &c.args {
        out.push_str("<param>");
        write_value(&mut out, arg);
        out.push_str("</param>");
    }
    out.push_str("</params></method>");
    out.into_bytes()
}

pub fn encode_response(r: &WireResponse) -> Vec<u8> {
    let mut out = String::new();
    match r {
        WireResponse::Ok(v) => {
            out.push_str("<response><value>");
            write_value(&mut out, v);
            out.push_str("</value></response>");
        }
        WireResponse::Fault(f) => {
            out.push_str("<fault><code>");
            out.push_str(&f.code.code().to_string());
            out.push_str("</code><message>");
            out.push_str(&escape_text(&f.message));
            out.push_str("</message></fault>");
        }
    }
    out.into_bytes()
}

// ---------------------------------------------------------------- decoding

type XNode<'a, 'i> = roxmltree::Node<'a, 'i>;

fn parse(text: &str) -> Result<roxmltree::Document<'_>, WireError> {
    Ok(xml::parse_document(text)?)
}

fn element_children<'a, 'i>(node: XNode<'a, 'i>) -> Result<Vec<XNode<'a, 'i>>, WireError> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or_default().trim().is_empty() {
            return Err(WireError::MalformedXml(format!(
                "unexpected text inside <{}>",
                node.tag_name().name()
            )));
        }
    }
    Ok(out)
}

fn single_child<'a, 'i>(node: XNode<'a, 'i>) -> Result<XNode<'a, 'i>, WireError> {
    let children = element_children(node)?;
    match children.as_slice() {
        [only] => Ok(*only),
        _ => Err(WireError::MalformedXml(format!(
            "<{}> must hold exactly one element",
            node.tag_name().name()
        ))),
    }
}

fn node_text(node: XNode<'_, '_>) -> Result<String, WireError> {
    let mut out = String::new();
    for child in node.children() {
        if child.is_element() {
            return Err(WireError::MalformedXml(format!(
                "unexpected element inside <{}>",
                node.tag_name().name()
            )));
        }
        if let Some(t) = child.text() {
            out.push_str(t);
        }
    }
    Ok(out)
}

pub fn decode_value(fragment: &str) -> Result<Value, WireError> {
    let doc = parse(fragment)?;
    value_from_node(doc.root_element(), 1)
}

fn value_from_node(node: XNode<'_, '_>, depth: usize) -> Result<Value, WireError> {
    let tag = node.tag_name().name();
    let literal = |kind: &str| -> Result<String, WireError> {
        node_text(node).map(|t| t.trim().to_string()).and_then(|t| {
            if t.is_empty() && kind != "bin" {
                Err(WireError::BadLiteral(format!("empty <{kind}>")))
            } else {
                Ok(t)
            }
        })
    };
    match tag {
        "bool" => match literal("bool")?.as_str() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            other => Err(WireError::BadLiteral(format!("bool {other:?}"))),
        },
        "int" => {
            let t = literal("int")?;
            t.parse()
                .map(Value::Int)
                .map_err(|_| WireError::BadLiteral(format!("int {t:?}")))
        }
        "real" => {
            let t = literal("real")?;
            t.parse()
                .map(Value::Real)
                .map_err(|_| WireError::BadLiteral(format!("real {t:?}")))
        }
        "str" => Ok(Value::Text(node_text(node)?)),
        "bin" => {
            let t = literal("bin")?;
            BASE64
                .decode(t.as_bytes())
                .map(Value::Binary)
                .map_err(|e| WireError::BadLiteral(format!("bin: {e}")))
        }
        "null" => {
            if node.has_children() {
                Err(WireError::MalformedXml("<null> must be empty".into()))
            } else {
                Ok(Value::Null)
            }
        }
        "list" | "map" if depth > MAX_VALUE_DEPTH => Err(WireError::MalformedXml(format!(
            "value nesting deeper than {MAX_VALUE_DEPTH}"
        ))),
        "list" => element_children(node)?
            .into_iter()
            .map(|c| value_from_node(c, depth + 1))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::List),
        "map" => {
            let mut map = BTreeMap::new();
            for entry in element_children(node)? {
                if entry.tag_name().name() != "entry" {
                    return Err(WireError::MalformedXml(format!(
                        "<map> holds <{}>, expected <entry>",
                        entry.tag_name().name()
                    )));
                }
                let key = entry
                    .attribute("key")
                    .ok_or_else(|| WireError::MalformedXml("<entry> without key".into()))?;
                let value = value_from_node(single_child(entry)?, depth + 1)?;
                if map.insert(key.to_string(), value).is_some() {
                    return Err(WireError::MalformedXml(format!("duplicate map key {key:?}")));
                }
            }
            Ok(Value::Map(map))
        }
        other => Err(WireError::UnknownType(other.to_string())),
    }
}

/// Parses only the XML `<method>` document form.
pub fn decode_call_xml(body: &[u8]) -> Result<MethodCall, WireError> {
    let text = std::str::from_utf8(body).map_err(|_| WireError::MalformedXml("body is not UTF-8".into()))?;
    if text.trim().is_empty() {
        return Err(WireError::MalformedXml("empty body".into()));
    }
    let doc = parse(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "method" {
        return Err(WireError::MalformedXml(format!(
            "expected <method>, found <{}>",
            root.tag_name().name()
        )));
    }
    let mut password = None;
    let mut service = None;
    let mut name = None;
    let mut params = None;
    for child in element_children(root)? {
        let slot = match child.tag_name().name() {
            "password" => &mut password,
            "service" => &mut service,
            "name" => &mut name,
            "params" => {
                if params.is_some() {
                    return Err(WireError::MalformedXml("duplicate <params>".into()));
                }
                let mut args = Vec::new();
                for p in element_children(child)? {
                    if p.tag_name().name() != "param" {
                        return Err(WireError::MalformedXml(format!(
                            "<params> holds <{}>",
                            p.tag_name().name()
                        )));
                    }
                    args.push(value_from_node(single_child(p)?, 1)?);
                }
                params = Some(args);
                continue;
            }
            other => return Err(WireError::MalformedXml(format!("unexpected <{other}> in <method>"))),
        };
        if slot.is_some() {
            return Err(WireError::MalformedXml(format!(
                "duplicate <{}>",
                child.tag_name().name()
            )));
        }
        *slot = Some(node_text(child)?);
    }
    let service = service.ok_or_else(|| WireError::MalformedXml("missing <service>".into()))?;
    let name = name.ok_or_else(|| WireError::MalformedXml("missing <name>".into()))?;
    if name.is_empty() {
        return Err(WireError::MalformedXml("empty method name".into()));
    }
    Ok(MethodCall {
        service: ServicePath::parse(&service)?,
        method: name,
        password: password.unwrap_or_default(),
        args: params.unwrap_or_default(),
    })
}

/// XML first, then the REST form of the request line.
pub fn decode_call(body: &[u8], request_path: &str, query: &str) -> Result<MethodCall, WireError> {
    match decode_call_xml(body) {
        Ok(call) => Ok(call),
        Err(xml_err) => parse_rest(request_path, query).map_err(|rest_err| WireError::Unparseable {
            xml: Box::new(xml_err),
            rest: Box::new(rest_err),
        }),
    }
}

pub fn decode_response(body: &[u8]) -> Result<WireResponse, WireError> {
    let text = std::str::from_utf8(body).map_err(|_| WireError::MalformedXml("body is not UTF-8".into()))?;
    let doc = parse(text)?;
    let root = doc.root_element();
    match root.tag_name().name() {
        "response" => {
            let value = single_child(root)?;
            if value.tag_name().name() != "value" {
                return Err(WireError::MalformedXml("expected <value>".into()));
            }
            Ok(WireResponse::Ok(value_from_node(single_child(value)?, 1)?))
        }
        "fault" => {
            let mut code = None;
            let mut message = None;
            for child in element_children(root)? {
                match child.tag_name().name() {
                    "code" => code = Some(node_text(child)?),
                    "message" => message = Some(node_text(child)?),
                    other => return Err(WireError::MalformedXml(format!("unexpected <{other}> in <fault>"))),
                }
            }
            let code_text = code.ok_or_else(|| WireError::MalformedXml("missing <code>".into()))?;
            let code = code_text
                .trim()
                .parse::<i64>()
                .ok()
                .and_then(FaultCode::from_code)
                .ok_or_else(|| WireError::BadLiteral(format!("fault code {code_text:?}")))?;
            Ok(WireResponse::Fault(Fault::new(code, message.unwrap_or_default())))
        }
        other => Err(WireError::MalformedXml(format!("unexpected response root <{other}>"))),
    }
}

// ---------------------------------------------------------------- REST form

/// Parses a type-prefixed literal: `i:`, `f:`, `t:`, `s:` or `b64:`.
pub fn parse_literal(text: &str) -> Option<Value> {
    let (prefix, body) = text.split_once(':')?;
    match prefix {
        "i" => body.parse().ok().map(Value::Int),
        "f" => body.parse().ok().map(Value::Real),
        "t" => match body {
            "true" => Some(Value::Bool(true)),
            "false" => Some(Value::Bool(false)),
            _ => None,
        },
        "s" => Some(Value::Text(body.to_string())),
        "b64" => BASE64.decode(body.as_bytes()).ok().map(Value::Binary),
        _ => None,
    }
}

/// Inverse of [`parse_literal`]; `None` for values the REST form cannot carry.
pub fn format_literal(v: &Value) -> Option<String> {
    Some(match v {
        Value::Int(i) => format!("i:{i}"),
        Value::Real(r) => format!("f:{}", format_real(*r)),
        Value::Bool(b) => format!("t:{b}"),
        Value::Text(s) => format!("s:{s}"),
        Value::Binary(b) => format!("b64:{}", BASE64.encode(b)),
        Value::List(_) | Value::Map(_) | Value::Null => return None,
    })
}

const REST_PREFIX: &str = "/service/";

/// Parses `/service/<path>/<method>?password=..&arg0=..`. `path` is the raw
/// (still percent-encoded) request path.
pub fn parse_rest(path: &str, query: &str) -> Result<MethodCall, WireError> {
    let rest = path
        .strip_prefix(REST_PREFIX)
        .ok_or_else(|| WireError::BadPath(format!("{path:?} does not start with {REST_PREFIX}")))?;
    let mut segments = Vec::new();
    for raw in rest.split('/') {
        let decoded = percent_encoding::percent_decode_str(raw)
            .decode_utf8()
            .map_err(|_| WireError::BadPath("segment is not UTF-8".into()))?;
        if !is_valid_segment(&decoded) {
            return Err(WireError::BadPath(format!("invalid segment {decoded:?}")));
        }
        segments.push(decoded.into_owned());
    }
    if segments.len() < 2 {
        return Err(WireError::BadPath("expected /service/<path>/<method>".into()));
    }
    let method = segments.pop().unwrap_or_default();

    let mut password = String::new();
    let mut args: BTreeMap<usize, Value> = BTreeMap::new();
    for (key, value) in url::form_urlencoded::parse(query.as_bytes()) {
        if key == "password" {
            password = value.into_owned();
        } else if let Some(index) = key.strip_prefix("arg") {
            let Ok(index) = index.parse::<usize>() else {
                continue;
            };
            let literal = parse_literal(&value).ok_or(WireError::BadArgLiteral(index))?;
            if args.insert(index, literal).is_some() {
                return Err(WireError::BadArgLiteral(index));
            }
        }
    }
    if let Some((&max, _)) = args.iter().next_back() {
        if let Some(missing) = (0..=max).find(|i| !args.contains_key(i)) {
            return Err(WireError::ArgGap(missing));
        }
    }
    Ok(MethodCall {
        service: ServicePath::from_segments(segments)?,
        method,
        password,
        args: args.into_values().collect(),
    })
}

/// Builds the REST request target (path and query) for a call.
pub fn format_rest(call: &MethodCall) -> Option<String> {
    use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
    let mut target = String::from("/service");
    for seg in call.service.segments().iter().chain(std::iter::once(&call.method)) {
        target.push('/');
        target.push_str(&utf8_percent_encode(seg, NON_ALPHANUMERIC).to_string());
    }
    let mut query = url::form_urlencoded::Serializer::new(String::new());
    if !call.password.is_empty() {
        query.append_pair("password", &call.password);
    }
    for (i, arg) in call.args.iter().enumerate() {
        query.append_pair(&format!("arg{i}"), &format_literal(arg)?);
    }
    let query = query.finish();
    if !query.is_empty() {
        target.push('?');
        target.push_str(&query);
    }
    Some(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> ServicePath {
        ServicePath::parse(s).unwrap()
    }

    #[test]
    fn encodes_scalars_and_containers() {
        assert_eq!(encode_value(&Value::Int(5)), "<int>5</int>");
        assert_eq!(encode_value(&Value::List(vec![])), "<list></list>");
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Value::Bool(true));
        assert_eq!(
            encode_value(&Value::Map(m.clone())),
            r#"<map><entry key="a"><bool>true</bool></entry></map>"#
        );
        assert_eq!(
            decode_value(&encode_value(&Value::Map(m.clone()))).unwrap(),
            Value::Map(m)
        );
    }

    #[test]
    fn map_keys_are_sorted() {
        let mut m = BTreeMap::new();
        m.insert("z".to_string(), Value::Null);
        m.insert("a".to_string(), Value::Null);
        assert_eq!(
            encode_value(&Value::Map(m)),
            r#"<map><entry key="a"><null/></entry><entry key="z"><null/></entry></map>"#
        );
    }

    #[test]
    fn decodes_literals() {
        assert_eq!(decode_value("<real>2.5</real>").unwrap(), Value::Real(2.5));
        assert_eq!(decode_value("<bin>AQI=</bin>").unwrap(), Value::Binary(vec![1, 2]));
        assert_eq!(
            decode_value("<frob>1</frob>"),
            Err(WireError::UnknownType("frob".into()))
        );
        assert!(matches!(decode_value("<int>x</int>"), Err(WireError::BadLiteral(_))));
        assert!(matches!(decode_value("<int>1"), Err(WireError::MalformedXml(_))));
        assert!(matches!(
            decode_value(r#"<map><entry key="a"><null/></entry><entry key="a"><null/></entry></map>"#),
            Err(WireError::MalformedXml(_))
        ));
    }

    #[test]
    fn reals_use_shortest_form() {
        assert_eq!(encode_value(&Value::Real(3.0)), "<real>3.0</real>");
        assert_eq!(encode_value(&Value::Real(0.1)), "<real>0.1</real>");
        assert_eq!(decode_value("<real>1e-7</real>").unwrap(), Value::Real(1e-7));
    }

    #[test]
    fn nesting_limit() {
        let nest = |n: usize| "<list>".repeat(n) + &"</list>".repeat(n);
        assert!(decode_value(&nest(MAX_VALUE_DEPTH)).is_ok());
        assert!(matches!(
            decode_value(&nest(MAX_VALUE_DEPTH + 1)),
            Err(WireError::MalformedXml(_))
        ));
        assert!(matches!(decode_value(&nest(10_000)), Err(WireError::MalformedXml(_))));
    }

    #[test]
    fn call_envelope() {
        let c = MethodCall::new(path("A"), "ping");
        let doc = String::from_utf8(encode_call(&c)).unwrap();
        assert_eq!(
            doc,
            "<method><password></password><service>A</service><name>ping</name><params></params></method>"
        );
        assert_eq!(decode_call_xml(doc.as_bytes()).unwrap(), c);
        let c = MethodCall::new(path("A"), "f").arg(1i64).arg("x");
        let doc = String::from_utf8(encode_call(&c)).unwrap();
        assert!(doc.contains("<params><param><int>1</int></param><param><str>x</str></param></params>"));
        // the self-closing form is equally acceptable
        let short = b"<method><password/><service>A</service><name>ping</name><params/></method>";
        assert_eq!(decode_call_xml(short).unwrap(), MethodCall::new(path("A"), "ping"));
    }

    #[test]
    fn rest_grammar() {
        let c = parse_rest("/service/A/add", "arg0=i:2&arg1=i:3").unwrap();
        assert_eq!(c, MethodCall::new(path("A"), "add").arg(2i64).arg(3i64));
        let c = parse_rest("/service/A/B/echo", "password=p&arg0=s:hi").unwrap();
        assert_eq!(c.service.segments(), ["A", "B"]);
        assert_eq!(c.password, "p");
        assert_eq!(c.args, vec![Value::text("hi")]);
        assert_eq!(
            parse_rest("/service/A/f", "arg0=i:2&arg2=i:3"),
            Err(WireError::ArgGap(1))
        );
        assert_eq!(parse_rest("/service/A/f", "arg0=q:2"), Err(WireError::BadArgLiteral(0)));
        assert_eq!(parse_rest("/service/A/f", "arg0=i:x"), Err(WireError::BadArgLiteral(0)));
        assert!(matches!(parse_rest("/service/A", ""), Err(WireError::BadPath(_))));
        assert!(matches!(parse_rest("/files/A/b", ""), Err(WireError::BadPath(_))));
        assert!(matches!(parse_rest("/service/A%2FB/f", ""), Err(WireError::BadPath(_))));
        let c = parse_rest("/service/A/f", "arg0=t:true&arg1=f:2.5&arg2=b64:AQI%3D").unwrap();
        assert_eq!(
            c.args,
            vec![Value::Bool(true), Value::Real(2.5), Value::Binary(vec![1, 2])]
        );
    }

    #[test]
    fn fallback_order() {
        let c = decode_call(b"", "/service/A/ping", "password=p").unwrap();
        assert_eq!(c, MethodCall::new(path("A"), "ping").password("p"));
        let xml = encode_call(&MethodCall::new(path("X"), "m"));
        assert_eq!(decode_call(&xml, "/service/A/ping", "").unwrap().service, path("X"));
        assert!(matches!(
            decode_call(b"<<garbage", "/nope", "&&"),
            Err(WireError::Unparseable { .. })
        ));
    }

    #[test]
    fn responses() {
        let ok = encode_response(&WireResponse::Ok(Value::Null));
        assert_eq!(ok, b"<response><value><null/></value></response>");
        let fault = WireResponse::Fault(Fault::new(FaultCode::BadPassword, "bad password"));
        let doc = encode_response(&fault);
        assert_eq!(
            doc,
            b"<fault><code>401</code><message>bad password</message></fault>".to_vec()
        );
        assert_eq!(decode_response(&doc).unwrap(), fault);
        let list = WireResponse::Ok(Value::List(vec![Value::Int(1), Value::Int(2)]));
        assert_eq!(decode_response(&encode_response(&list)).unwrap(), list);
    }

    #[test]
    fn rest_formatting_inverts_parsing() {
        let c = MethodCall::new(path("A b/C"), "m x")
            .password("p&q")
            .arg("a b&c")
            .arg(Value::Binary(vec![255, 0]));
        let target = format_rest(&c).unwrap();
        let (p, q) = target.split_once('?').unwrap();
        assert_eq!(parse_rest(p, q).unwrap(), c);
    }

    #[test]
    fn service_path_rules() {
        assert!(ServicePath::parse("").is_err());
        assert!(ServicePath::parse("A//B").is_err());
        assert!(ServicePath::parse("A/..").is_err());
        let p = path("A/B/C");
        assert_eq!(p.id(), "C");
        assert_eq!(p.parent().unwrap(), path("A/B"));
        assert!(p.starts_with(&path("A")));
        assert!(!path("AB").starts_with(&path("A")));
    }
}
