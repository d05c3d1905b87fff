//! Information resources, resource containers, and the two services built
//! on them: the information service and the file service.

use std::collections::BTreeSet;
use std::sync::Arc;

use base64::Engine;
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::files::{FileError, FileRoots};
use crate::http::HttpClient;
use crate::query::{self, Query};
use crate::registry::{Handler, ServiceError};
use crate::wire::Value;
use crate::xml::{self, Element};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResourceError {
    #[error("no resource with id {0:?}")]
    NoSuchId(String),
    #[error("container is empty")]
    EmptyContainer,
    #[error("operation needs a {expected} container, this one is {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("duplicate resource id {0:?}")]
    DuplicateId(String),
    #[error("fetch of {url} failed: {reason}")]
    FetchFailed { url: String, reason: String },
    #[error("malformed content: {0}")]
    MalformedContent(String),
    #[error("bad resource declaration: {0}")]
    BadDeclaration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceKind {
    Number,
    Text,
    Xml,
    Html,
    Binary,
    Url,
}

impl ResourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Number => "number",
            ResourceKind::Text => "text",
            ResourceKind::Xml => "xml",
            ResourceKind::Html => "html",
            ResourceKind::Binary => "binary",
            ResourceKind::Url => "url",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ResourceError> {
        Ok(match s {
            "number" => ResourceKind::Number,
            "text" => ResourceKind::Text,
            "xml" => ResourceKind::Xml,
            "html" => ResourceKind::Html,
            "binary" => ResourceKind::Binary,
            "url" => ResourceKind::Url,
            other => {
                return Err(ResourceError::BadDeclaration(format!(
                    "unknown resource kind {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Content {
    Inline(Value),
    Address(String),
}

/// A single piece of information, held inline or fetched from a url.
#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    id: String,
    kind: ResourceKind,
    content: Content,
}

impl Resource {
    pub fn number(id: impl Into<String>, n: impl Into<Value>) -> Result<Self, ResourceError> {
        let v = n.into();
        if !matches!(v, Value::Int(_) | Value::Real(_)) {
            return Err(ResourceError::MalformedContent(format!(
                "number resource holds {}",
                v.type_name()
            )));
        }
        Ok(Self::inline(id, ResourceKind::Number, v))
    }

    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::inline(id, ResourceKind::Text, Value::Text(text.into()))
    }

    pub fn html(id: impl Into<String>, html: impl Into<String>) -> Self {
        Self::inline(id, ResourceKind::Html, Value::Text(html.into()))
    }

    /// Rejects payloads that are not well-formed XML.
    pub fn xml(id: impl Into<String>, document: impl Into<String>) -> Result<Self, ResourceError> {
        let document = document.into();
        xml::parse_document(&document).map_err(|e| ResourceError::MalformedContent(e.to_string()))?;
        Ok(Self::inline(id, ResourceKind::Xml, Value::Text(document)))
    }

    pub fn binary(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self::inline(id, ResourceKind::Binary, Value::Binary(bytes))
    }

    pub fn url(id: impl Into<String>, address: impl Into<String>) -> Result<Self, ResourceError> {
        let address = address.into();
        url::Url::parse(&address).map_err(|e| ResourceError::BadDeclaration(format!("{address}: {e}")))?;
        Ok(Resource {
            id: id.into(),
            kind: ResourceKind::Url,
            content: Content::Address(address),
        })
    }

    fn inline(id: impl Into<String>, kind: ResourceKind, v: Value) -> Self {
        Resource {
            id: id.into(),
            kind,
            content: Content::Inline(v),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn address(&self) -> Option<&str> {
        match &self.content {
            Content::Address(a) => Some(a),
            Content::Inline(_) => None,
        }
    }

    /// The resource's content; url resources are fetched on every call.
    pub fn get_info(&self, client: &HttpClient) -> Result<Value, ResourceError> {
        let url = match &self.content {
            Content::Inline(v) => return Ok(v.clone()),
            Content::Address(a) => a,
        };
        let failed = |reason: String| ResourceError::FetchFailed {
            url: url.clone(),
            reason,
        };
        let reply = client.get(url).map_err(|e| failed(e.to_string()))?;
        if reply.status != 200 {
            return Err(failed(format!("status {}", reply.status)));
        }
        let ct = reply.content_type.to_ascii_lowercase();
        if ct.starts_with("text/") || ct.contains("xml") || ct.contains("html") || ct.contains("json") {
            String::from_utf8(reply.body)
                .map(Value::Text)
                .map_err(|_| ResourceError::MalformedContent(format!("{url}: body is not UTF-8")))
        } else {
            Ok(Value::Binary(reply.body))
        }
    }

    /// `<resource id= kind=>payload</resource>`; binary payloads are base64.
    pub fn to_element(&self) -> Element {
        let el = Element::new("resource")
            .attr("id", &self.id)
            .attr("kind", self.kind.as_str());
        match &self.content {
            Content::Address(a) => el.attr("address", a),
            Content::Inline(Value::Binary(b)) => el.text(base64::engine::general_purpose::STANDARD.encode(b)),
            Content::Inline(v) => el.text(v.to_display_string()),
        }
    }

    pub fn from_element(el: &Element) -> Result<Self, ResourceError> {
        if el.name != "resource" {
            return Err(ResourceError::BadDeclaration(format!(
                "expected <resource>, found <{}>",
                el.name
            )));
        }
        let id = el
            .get("id")
            .ok_or_else(|| ResourceError::BadDeclaration("resource without id".into()))?;
        let kind = ResourceKind::parse(el.get("kind").unwrap_or("text"))?;
        let body = el.text_content();
        match kind {
            ResourceKind::Number => {
                let t = body.trim();
                let v = match t.parse::<i64>() {
                    Ok(i) => Value::Int(i),
                    Err(_) => Value::Real(
                        t.parse::<f64>()
                            .map_err(|_| ResourceError::BadDeclaration(format!("{id}: {t:?} is not a number")))?,
                    ),
                };
                Resource::number(id, v)
            }
            ResourceKind::Text => Ok(Resource::text(id, body)),
            ResourceKind::Html => Ok(Resource::html(id, body)),
            ResourceKind::Xml => Resource::xml(id, body),
            ResourceKind::Binary => base64::engine::general_purpose::STANDARD
                .decode(body.trim())
                .map(|b| Resource::binary(id, b))
                .map_err(|e| ResourceError::BadDeclaration(format!("{id}: {e}"))),
            ResourceKind::Url => {
                let address = el
                    .get("address")
                    .ok_or_else(|| ResourceError::BadDeclaration(format!("{id}: url resource needs address")))?;
                Resource::url(id, address)
            }
        }
    }
}

#[derive(Debug)]
enum Selector {
    Id,
    Random { seed: u64, rng: Mutex<ChaCha8Rng> },
    Query(Query),
}

/// Results of [`ResourceContainer::get_matching`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub values: Vec<Value>,
    /// Resources that could not be evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug)]
pub struct ResourceContainer {
    selector: Selector,
    resources: Vec<Resource>,
    client: HttpClient,
}

impl ResourceContainer {
    pub fn by_id(resources: Vec<Resource>) -> Result<Self, ResourceError> {
        Self::build(Selector::Id, resources)
    }

    pub fn random(resources: Vec<Resource>, seed: u64) -> Result<Self, ResourceError> {
        Self::build(
            Selector::Random {
                seed,
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            },
            resources,
        )
    }

    pub fn query(resources: Vec<Resource>, query: Query) -> Result<Self, ResourceError> {
        Self::build(Selector::Query(query), resources)
    }

    fn build(selector: Selector, resources: Vec<Resource>) -> Result<Self, ResourceError> {
        let mut seen = BTreeSet::new();
        for r in &resources {
            if !seen.insert(r.id.as_str()) {
                return Err(ResourceError::DuplicateId(r.id.clone()));
            }
        }
        Ok(ResourceContainer {
            selector,
            resources,
            client: HttpClient::default(),
        })
    }

    pub fn with_client(mut self, client: HttpClient) -> Self {
        self.client = client;
        self
    }

    pub fn kind(&self) -> &'static str {
        match self.selector {
            Selector::Id => "id",
            Selector::Random { .. } => "random",
            Selector::Query(_) => "query",
        }
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn ids(&self) -> Vec<String> {
        self.resources.iter().map(|r| r.id.clone()).collect()
    }

    fn expect(&self, expected: &'static str) -> Result<(), ResourceError> {
        if self.kind() == expected {
            Ok(())
        } else {
            Err(ResourceError::WrongKind {
                expected,
                actual: self.kind(),
            })
        }
    }

    pub fn get_by_id(&self, id: &str) -> Result<Value, ResourceError> {
        self.expect("id")?;
        self.resources
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| ResourceError::NoSuchId(id.to_string()))?
            .get_info(&self.client)
    }

    /// Uniform pick from the container's seeded generator.
    pub fn get_random(&self) -> Result<Value, ResourceError> {
        let Selector::Random { rng, .. } = &self.selector else {
            return Err(ResourceError::WrongKind {
                expected: "random",
                actual: self.kind(),
            });
        };
        if self.resources.is_empty() {
            return Err(ResourceError::EmptyContainer);
        }
        let index = rng.lock().gen_range(0..self.resources.len());
        self.resources[index].get_info(&self.client)
    }

    /// Contents of every resource whose content matches the query, in
    /// container order. Resources that fail to fetch or evaluate are skipped.
    pub fn get_matching(&self) -> Result<Matching, ResourceError> {
        self.expect("query")?;
        let Selector::Query(q) = &self.selector else {
            unreachable!()
        };
        let mut out = Matching::default();
        for r in &self.resources {
            let value = match r.get_info(&self.client) {
                Ok(v) => v,
                Err(e) => {
                    out.skipped.push((r.id.clone(), e.to_string()));
                    continue;
                }
            };
            let text = match &value {
                Value::Binary(_) => {
                    out.skipped
                        .push((r.id.clone(), "binary content cannot be queried".into()));
                    continue;
                }
                other => other.to_display_string(),
            };
            match query::eval_str(q, &text) {
                Ok(m) if !m.is_empty() => out.values.push(value),
                Ok(_) => {}
                Err(e) => out.skipped.push((r.id.clone(), e.to_string())),
            }
        }
        Ok(out)
    }

    /// Text of every resource joined by newlines; binary and unfetchable
    /// resources are left out.
    pub fn get_text(&self) -> String {
        self.resources
            .iter()
            .filter_map(|r| match r.get_info(&self.client) {
                Ok(Value::Binary(_)) | Err(_) => None,
                Ok(v) => Some(v.to_display_string()),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// `<container kind=...>` with its resources, the admin script form.
    pub fn to_element(&self) -> Element {
        let mut el = Element::new("container").attr("kind", self.kind());
        match &self.selector {
            Selector::Random { seed, .. } => el = el.attr("seed", seed.to_string()),
            Selector::Query(q) => el = el.attr("query", q.to_string()),
            Selector::Id => {}
        }
        for r in &self.resources {
            el.push(r.to_element());
        }
        el
    }

    pub fn from_element(el: &Element) -> Result<Self, ResourceError> {
        if el.name != "container" {
            return Err(ResourceError::BadDeclaration(format!(
                "expected <container>, found <{}>",
                el.name
            )));
        }
        let resources = el
            .elements_named("resource")
            .map(Resource::from_element)
            .collect::<Result<Vec<_>, _>>()?;
        match el.get("kind").unwrap_or("id") {
            "id" => Self::by_id(resources),
            "random" => {
                let seed = el
                    .get("seed")
                    .unwrap_or("0")
                    .parse()
                    .map_err(|_| ResourceError::BadDeclaration("seed must be an unsigned integer".into()))?;
                Self::random(resources, seed)
            }
            "query" => {
                let source = el
                    .get("query")
                    .ok_or_else(|| ResourceError::BadDeclaration("query container needs a query".into()))?;
                let q = query::parse_query(source).map_err(|e| ResourceError::BadDeclaration(e.to_string()))?;
                Self::query(resources, q)
            }
            other => Err(ResourceError::BadDeclaration(format!(
                "unknown container kind {other:?}"
            ))),
        }
    }
}

fn text_arg<'a>(args: &'a [Value], method: &str) -> Result<&'a str, ServiceError> {
    match args {
        [Value::Text(s)] => Ok(s),
        _ => Err(ServiceError::BadArguments(format!("{method} takes one text argument"))),
    }
}

fn no_args(args: &[Value], method: &str) -> Result<(), ServiceError> {
    if args.is_empty() {
        Ok(())
    } else {
        Err(ServiceError::BadArguments(format!("{method} takes no arguments")))
    }
}

/// Hosts a container: `getById`, `getRandom`, `getMatching`,
/// `listResources` and `getText`.
pub struct InformationService {
    container: RwLock<Arc<ResourceContainer>>,
}

impl InformationService {
    pub fn new(container: ResourceContainer) -> Self {
        InformationService {
            container: RwLock::new(Arc::new(container)),
        }
    }

    pub fn container(&self) -> Arc<ResourceContainer> {
        Arc::clone(&self.container.read())
    }

    pub fn replace(&self, container: ResourceContainer) {
        *self.container.write() = Arc::new(container);
    }
}

impl Handler for InformationService {
    fn methods(&self) -> Vec<String> {
        ["getById", "getMatching", "getRandom", "getText", "listResources"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn invoke(&self, method: &str, args: &[Value]) -> Result<Value, ServiceError> {
        let c = self.container();
        let failed = |e: ResourceError| ServiceError::Failed(e.to_string());
        match method {
            "getById" => c.get_by_id(text_arg(args, method)?).map_err(failed),
            "getRandom" => {
                no_args(args, method)?;
                c.get_random().map_err(failed)
            }
            "getMatching" => {
                no_args(args, method)?;
                Ok(Value::List(c.get_matching().map_err(failed)?.values))
            }
            "listResources" => {
                no_args(args, method)?;
                Ok(Value::List(c.ids().into_iter().map(Value::Text).collect()))
            }
            "getText" => {
                no_args(args, method)?;
                Ok(Value::Text(c.get_text()))
            }
            other => Err(ServiceError::NoSuchMethod(other.to_string())),
        }
    }
}

/// Hosts `list(dir)` and `fetch(path)` over a file-root table, using the
/// same confinement as `/files/` requests.
pub struct FileService {
    roots: Arc<RwLock<FileRoots>>,
}

impl FileService {
    pub fn new(roots: Arc<RwLock<FileRoots>>) -> Self {
        FileService { roots }
    }
}

fn file_error(e: FileError) -> ServiceError {
    match e {
        FileError::Forbidden(m) => ServiceError::Forbidden(m),
        FileError::NotFound(m) => ServiceError::NotFound(m),
        other => ServiceError::Failed(other.to_string()),
    }
}

impl Handler for FileService {
    fn methods(&self) -> Vec<String> {
        vec!["fetch".into(), "list".into()]
    }

    fn invoke(&self, method: &str, args: &[Value]) -> Result<Value, ServiceError> {
        match method {
            "list" => {
                let dir = text_arg(args, method)?;
                let names = self.roots.read().list(dir).map_err(file_error)?;
                Ok(Value::List(names.into_iter().map(Value::Text).collect()))
            }
            "fetch" => {
                let path = text_arg(args, method)?;
                let (bytes, _) = self.roots.read().read(path).map_err(file_error)?;
                Ok(Value::Binary(bytes))
            }
            other => Err(ServiceError::NoSuchMethod(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts() -> Vec<Resource> {
        vec![
            Resource::text("r1", "the cat sat"),
            Resource::text("r2", "a dog ran"),
            Resource::text("r3", "birds fly"),
        ]
    }

    #[test]
    fn inline_info() {
        let c = HttpClient::default();
        assert_eq!(
            Resource::number("n", 42i64).unwrap().get_info(&c).unwrap(),
            Value::Int(42)
        );
        assert!(Resource::number("n", "x").is_err());
        assert!(Resource::xml("x", "<a><b></a>").is_err());
    }

    #[test]
    fn by_id() {
        let c = ResourceContainer::by_id(texts()).unwrap();
        assert_eq!(c.get_by_id("r2").unwrap(), Value::text("a dog ran"));
        assert_eq!(c.get_by_id("zz"), Err(ResourceError::NoSuchId("zz".into())));
        assert!(matches!(c.get_random(), Err(ResourceError::WrongKind { .. })));
        let dup = vec![Resource::text("a", "1"), Resource::text("a", "2")];
        assert_eq!(
            ResourceContainer::by_id(dup).err(),
            Some(ResourceError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn random_is_seeded() {
        let draw = |seed| {
            let c = ResourceContainer::random(texts(), seed).unwrap();
            (0..50).map(|_| c.get_random().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        let one = ResourceContainer::random(vec![Resource::text("x", "only")], 1).unwrap();
        for _ in 0..20 {
            assert_eq!(one.get_random().unwrap(), Value::text("only"));
        }
        let empty = ResourceContainer::random(vec![], 1).unwrap();
        assert_eq!(empty.get_random(), Err(ResourceError::EmptyContainer));
    }

    #[test]
    fn matching_and_skips() {
        let q = query::parse_query(r#"LINES WHERE CONTAINS(., "cat")"#).unwrap();
        let mut rs = texts();
        rs.push(Resource::url("dead", "http://127.0.0.1:1/x").unwrap());
        let c = ResourceContainer::query(rs, q).unwrap();
        let m = c.get_matching().unwrap();
        assert_eq!(m.values, vec![Value::text("the cat sat")]);
        assert_eq!(m.skipped.len(), 1);
        assert_eq!(m.skipped[0].0, "dead");
    }

    #[test]
    fn element_round_trip() {
        let mut rs = texts();
        rs.push(Resource::binary("b", vec![0, 1, 255]));
        rs.push(Resource::number("n", 2.5).unwrap());
        rs.push(Resource::url("u", "http://example.invalid/x").unwrap());
        let c = ResourceContainer::random(rs, 9).unwrap();
        let el = c.to_element();
        let back = ResourceContainer::from_element(&xml::parse_element(&el.to_pretty_string()).unwrap()).unwrap();
        assert_eq!(back.resources(), c.resources());
        assert_eq!(back.to_element(), el);
    }

    #[test]
    fn information_service_methods() {
        let svc = InformationService::new(ResourceContainer::by_id(texts()).unwrap());
        assert_eq!(
            svc.invoke("listResources", &[]).unwrap(),
            Value::List(vec![Value::text("r1"), Value::text("r2"), Value::text("r3")])
        );
        assert_eq!(
            svc.invoke("getById", &[Value::text("r1")]).unwrap(),
            Value::text("the cat sat")
        );
        assert!(matches!(svc.invoke("getRandom", &[]), Err(ServiceError::Failed(_))));
        assert_eq!(
            svc.invoke("getText", &[]).unwrap(),
            Value::text("the cat sat\na dog ran\nbirds fly")
        );
    }

    #[test]
    fn file_service() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let mut roots = FileRoots::new();
        roots.add("pub", dir.path()).unwrap();
        let svc = FileService::new(Arc::new(RwLock::new(roots)));
        assert_eq!(
            svc.invoke("fetch", &[Value::text("pub/a.txt")]).unwrap(),
            Value::Binary(b"hello".to_vec())
        );
        assert_eq!(
            svc.invoke("list", &[Value::text("pub")]).unwrap(),
            Value::List(vec![Value::text("a.txt")])
        );
        assert!(matches!(
            svc.invoke("fetch", &[Value::text("pub/../x")]),
            Err(ServiceError::Forbidden(_))
        ));
    }
}
