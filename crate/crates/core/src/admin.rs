//! Configuration persistence, the service factory and the admin endpoint.
//!
//! A saved configuration is a directory holding two files:
//! [`NETWORK_FILE`] (services, links, peers, file roots, link dynamics) and
//! [`FACTORY_FILE`] (service kinds added through module manifests).
//!
//! ```xml
//! <licasNetwork version="1">
//!   <dynamics create="3.0" decay="0.9" exist="1.0" reinforce="1.0" cap="100.0"/>
//!   <fileRoot alias="docs" path="/srv/docs"/>
//!   <peer url="http://10.0.0.2:8080"/>
//!   <service id="A" kind="echo" password="sha256$...">
//!     <meta key="owner" value="ops"/>
//!     <service id="B" kind="counter"/>
//!   </service>
//!   <autonomic service="A"><monitor type="threshold" key="value" limit="10.0"/></autonomic>
//!   <link kind="permanent" from="A" to="A/B"/>
//! </licasNetwork>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::autonomic::{SlotSpec, Stage};
use crate::links::{LinkDynamics, LinkKind};
use crate::registry::{
    BehaviourSpec, Handler, Operation, PasswordDigest, Registry, RegistryError, ServiceError, ServiceRef, ServiceSpec,
};
use crate::resources::{FileService, InformationService, ResourceContainer};
use crate::wire::{self, format_real, ServicePath, Value};
use crate::xml::{self, Element};

pub const NETWORK_FILE: &str = "network.xml";
pub const FACTORY_FILE: &str = "factory.xml";
pub const SCHEMA_VERSION: &str = "1";

/// Kinds every factory starts with.
pub const BUILTIN_KINDS: [&str; 6] = ["behaviour", "counter", "echo", "file", "information", "table"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdminError {
    #[error("io error: {0}")]
    Io(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate kind {0:?}")]
    DuplicateKind(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("cannot build {kind:?} service: {reason}")]
    BadDeclaration { kind: String, reason: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn io_error(path: &Path, e: std::io::Error) -> AdminError {
    AdminError::Io(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- declarations

/// One service as written in a config document, without its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub id: String,
    pub kind: String,
    pub password: PasswordDigest,
    pub metadata: BTreeMap<String, String>,
    pub behaviour: Option<BehaviourSpec>,
    /// Kind-specific elements such as `<container>`.
    pub config: Vec<Element>,
}

impl Declaration {
    pub fn new(id: impl Into<String>, kind: impl Into<String>) -> Self {
        Declaration {
            id: id.into(),
            kind: kind.into(),
            password: PasswordDigest::open(),
            metadata: BTreeMap::new(),
            behaviour: None,
            config: Vec::new(),
        }
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn config(mut self, element: Element) -> Self {
        self.config.push(element);
        self
    }
}

type Constructor = Arc<dyn Fn(&Declaration, &Registry) -> Result<Arc<dyn Handler>, String> + Send + Sync>;

/// A kind the factory can build.
#[derive(Clone)]
pub struct ServiceType {
    pub kind: String,
    pub default_meta: BTreeMap<String, String>,
    /// Used when a declaration has no behaviour of its own.
    pub default_behaviour: Option<BehaviourSpec>,
    /// Used when a declaration has no config elements of its own.
    pub default_config: Vec<Element>,
    constructor: Constructor,
    /// Manifest `<kind>` element, present for kinds that persist.
    source: Option<Element>,
}

impl std::fmt::Debug for ServiceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceType")
            .field("kind", &self.kind)
            .field("default_meta", &self.default_meta)
            .finish()
    }
}

impl ServiceType {
    pub fn new(
        kind: impl Into<String>,
        constructor: impl Fn(&Declaration, &Registry) -> Result<Arc<dyn Handler>, String> + Send + Sync + 'static,
    ) -> Self {
        ServiceType {
            kind: kind.into(),
            default_meta: BTreeMap::new(),
            default_behaviour: None,
            default_config: Vec::new(),
            constructor: Arc::new(constructor),
            source: None,
        }
    }

    pub fn default_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.default_meta.insert(key.into(), value.into());
        self
    }

    pub fn default_behaviour(mut self, spec: BehaviourSpec) -> Self {
        self.default_behaviour = Some(spec);
        self
    }
}

fn echo_handler() -> Result<Arc<dyn Handler>, String> {
    crate::registry::wrap([Operation::new("echo", 1, |args| Ok(args[0].clone()))]).map_err(|e| e.to_string())
}

fn counter_handler() -> Result<Arc<dyn Handler>, String> {
    let count = Arc::new(AtomicI64::new(0));
    let faults = Arc::new(AtomicI64::new(0));
    let (c1, c2, c3, f1, f2) = (count.clone(), count.clone(), count, faults.clone(), faults);
    crate::registry::wrap([
        Operation::new("increment", 0, move |_| {
            Ok(Value::Int(c1.fetch_add(1, Ordering::SeqCst) + 1))
        }),
        Operation::new("value", 0, move |_| Ok(Value::Int(c2.load(Ordering::SeqCst)))),
        Operation::new("reset", 0, move |_| {
            c3.store(0, Ordering::SeqCst);
            Ok(Value::Int(0))
        }),
        Operation::variadic("onFault", move |_| {
            Ok(Value::Int(f1.fetch_add(1, Ordering::SeqCst) + 1))
        }),
        Operation::new("faults", 0, move |_| Ok(Value::Int(f2.load(Ordering::SeqCst)))),
    ])
    .map_err(|e| e.to_string())
}

/// Counts its own cycles; `getText` returns the `text` config element.
fn behaviour_handler(decl: &Declaration) -> Result<Arc<dyn Handler>, String> {
    let cycles = Arc::new(AtomicI64::new(0));
    let (c1, c2) = (cycles.clone(), cycles);
    let text: String = decl
        .config
        .iter()
        .filter(|e| e.name == "text")
        .map(Element::text_content)
        .collect::<Vec<_>>()
        .join("\n");
    crate::registry::wrap([
        Operation::new("behaviour", 0, move |_| {
            let n = c1.fetch_add(1, Ordering::SeqCst) + 1;
            Ok(Value::Map(BTreeMap::from([("value".to_string(), Value::Int(n))])))
        }),
        Operation::new("cycles", 0, move |_| Ok(Value::Int(c2.load(Ordering::SeqCst)))),
        Operation::new("getText", 0, move |_| Ok(Value::Text(text.clone()))),
    ])
    .map_err(|e| e.to_string())
}

fn information_handler(decl: &Declaration, registry: &Registry) -> Result<Arc<dyn Handler>, String> {
    let mut containers = decl.config.iter().filter(|e| e.name == "container");
    let container = match containers.next() {
        Some(el) => ResourceContainer::from_element(el).map_err(|e| e.to_string())?,
        None => ResourceContainer::by_id(Vec::new()).map_err(|e| e.to_string())?,
    };
    if containers.next().is_some() {
        return Err("at most one <container>".into());
    }
    Ok(Arc::new(InformationService::new(
        container.with_client(registry.http().clone()),
    )))
}

/// Constant-returning operations: `<op name="hello" returns="s:hi"/>`.
fn table_handler(decl: &Declaration) -> Result<Arc<dyn Handler>, String> {
    let mut ops = Vec::new();
    for el in decl.config.iter().filter(|e| e.name == "op") {
        let name = el.get("name").ok_or("<op> needs name")?.to_string();
        let literal = el.get("returns").unwrap_or("");
        let value = wire::parse_literal(literal).ok_or_else(|| format!("bad literal {literal:?} for {name}"))?;
        ops.push(Operation::variadic(name, move |_| Ok(value.clone())));
    }
    crate::registry::wrap(ops).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- factory

/// Table of service kinds, keyed by name.
#[derive(Debug, Clone)]
pub struct ServiceFactory {
    types: BTreeMap<String, ServiceType>,
    persist: Option<PathBuf>,
}

impl Default for ServiceFactory {
    fn default() -> Self {
        Self::new()
    }
}

impl ServiceFactory {
    /// A factory holding the built-in kinds.
    pub fn new() -> Self {
        let mut f = ServiceFactory {
            types: BTreeMap::new(),
            persist: None,
        };
        let builtins = [
            ServiceType::new("echo", |_, _| echo_handler()),
            ServiceType::new("counter", |_, _| counter_handler()),
            ServiceType::new("behaviour", |d, _| behaviour_handler(d))
                .default_behaviour(BehaviourSpec::new(1000).expect("valid period")),
            ServiceType::new("information", information_handler),
            ServiceType::new("file", |_, r| {
                Ok(Arc::new(FileService::new(r.file_roots())) as Arc<dyn Handler>)
            }),
            ServiceType::new("table", |d, _| table_handler(d)),
        ];
        for t in builtins {
            f.types.insert(t.kind.clone(), t);
        }
        f
    }

    /// Built-ins plus the kinds saved in `dir`'s factory file, which later
    /// module loads keep up to date.
    pub fn open(dir: &Path) -> Result<Self, AdminError> {
        let mut f = Self::new();
        let path = dir.join(FACTORY_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            f.load_manifest_text(&text)?;
        }
        f.persist = Some(path);
        Ok(f)
    }

    pub fn register_type(&mut self, service_type: ServiceType) -> Result<(), AdminError> {
        if self.types.contains_key(&service_type.kind) {
            return Err(AdminError::DuplicateKind(service_type.kind));
        }
        self.types.insert(service_type.kind.clone(), service_type);
        Ok(())
    }

    pub fn kinds(&self) -> Vec<String> {
        self.types.keys().cloned().collect()
    }

    pub fn get(&self, kind: &str) -> Option<&ServiceType> {
        self.types.get(kind)
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.types.contains_key(kind)
    }

    /// Builds a registrable spec, with declaration metadata overriding the
    /// kind's defaults key by key.
    pub fn instantiate(&self, decl: &Declaration, registry: &Registry) -> Result<ServiceSpec, AdminError> {
        let t = self
            .types
            .get(&decl.kind)
            .ok_or_else(|| AdminError::UnknownKind(decl.kind.clone()))?;
        let mut effective = decl.clone();
        if effective.config.is_empty() {
            effective.config = t.default_config.clone();
        }
        if effective.behaviour.is_none() {
            effective.behaviour = t.default_behaviour;
        }
        let mut metadata = t.default_meta.clone();
        metadata.extend(decl.metadata.clone());
        let handler = (t.constructor)(&effective, registry).map_err(|reason| AdminError::BadDeclaration {
            kind: decl.kind.clone(),
            reason,
        })?;
        Ok(ServiceSpec {
            id: decl.id.clone(),
            kind: decl.kind.clone(),
            password: decl.password.clone(),
            metadata,
            handler: Some(handler),
            behaviour: effective.behaviour,
            config: decl.config.clone(),
        })
    }

    /// Registers every kind in a manifest file and persists the factory
    /// when it was opened from a directory. Nothing is registered if any
    /// kind clashes.
    pub fn load_module(&mut self, path: &Path) -> Result<Vec<String>, AdminError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let kinds = self.load_manifest_text(&text)?;
        if self.persist.is_some() {
            self.save()?;
        }
        Ok(kinds)
    }

    /// `<module>` holding `<kind name= base=>` elements with `<meta>`,
    /// optional `<behaviour>` and kind-specific config children.
    pub fn load_manifest_text(&mut self, text: &str) -> Result<Vec<String>, AdminError> {
        let root = xml::parse_element(text).map_err(|e| AdminError::BadManifest(e.to_string()))?;
        if root.name != "module" && root.name != "factory" {
            return Err(AdminError::BadManifest(format!(
                "expected <module>, found <{}>",
                root.name
            )));
        }
        let mut staged = Vec::new();
        for el in root.elements() {
            if el.name != "kind" {
                return Err(AdminError::BadManifest(format!("unexpected <{}>", el.name)));
            }
            let t = self.kind_from_element(el)?;
            if self.types.contains_key(&t.kind) || staged.iter().any(|s: &ServiceType| s.kind == t.kind) {
                return Err(AdminError::DuplicateKind(t.kind));
            }
            staged.push(t);
        }
        let names = staged.iter().map(|t| t.kind.clone()).collect();
        for t in staged {
            self.types.insert(t.kind.clone(), t);
        }
        Ok(names)
    }

    fn kind_from_element(&self, el: &Element) -> Result<ServiceType, AdminError> {
        let bad = |m: String| AdminError::BadManifest(m);
        let name = el
            .get("name")
            .filter(|n| !n.is_empty())
            .ok_or_else(|| bad("<kind> needs name".into()))?;
        let base_name = el.get("base").ok_or_else(|| bad(format!("kind {name:?} needs base")))?;
        if !BUILTIN_KINDS.contains(&base_name) {
            return Err(bad(format!("kind {name:?}: base {base_name:?} is not a built-in kind")));
        }
        let base = self.types[base_name].clone();
        let mut t = ServiceType {
            kind: name.to_string(),
            source: Some(el.clone()),
            ..base
        };
        for child in el.elements() {
            match child.name.as_str() {
                "meta" => {
                    let (k, v) = meta_pair(child).map_err(bad)?;
                    t.default_meta.insert(k, v);
                }
                "behaviour" => t.default_behaviour = Some(behaviour_from(child).map_err(bad)?),
                _ => t.default_config.push(child.clone()),
            }
        }
        let probe = Declaration {
            config: t.default_config.clone(),
            behaviour: t.default_behaviour,
            ..Declaration::new("probe", name)
        };
        (t.constructor)(&probe, &Registry::new()).map_err(|e| bad(format!("kind {name:?}: {e}")))?;
        Ok(t)
    }

    /// The `<factory>` document of manifest-loaded kinds.
    pub fn to_element(&self) -> Element {
        let mut root = Element::new("factory").attr("version", SCHEMA_VERSION);
        for t in self.types.values() {
            if let Some(src) = &t.source {
                root.push(src.clone());
            }
        }
        root
    }

    fn save(&self) -> Result<(), AdminError> {
        if let Some(path) = &self.persist {
            write_file(path, &self.to_element())?;
        }
        Ok(())
    }

    /// Writes the factory file into `dir`.
    pub fn save_to(&self, dir: &Path) -> Result<(), AdminError> {
        write_file(&dir.join(FACTORY_FILE), &self.to_element())
    }
}

fn write_file(path: &Path, root: &Element) -> Result<(), AdminError> {
    let mut text = root.to_pretty_string();
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn meta_pair(el: &Element) -> Result<(String, String), String> {
    match (el.get("key"), el.get("value")) {
        (Some(k), Some(v)) => Ok((k.to_string(), v.to_string())),
        _ => Err("<meta> needs key and value".into()),
    }
}

fn behaviour_from(el: &Element) -> Result<BehaviourSpec, String> {
    let period: u64 = el
        .get("period")
        .ok_or("<behaviour> needs period")?
        .parse()
        .map_err(|_| "behaviour period is not an integer".to_string())?;
    let spec = BehaviourSpec::new(period).map_err(|e| e.to_string())?;
    match el.get("enabled") {
        None | Some("true") => Ok(spec),
        Some("false") => Ok(spec.disabled()),
        Some(other) => Err(format!("enabled={other:?} is not true/false")),
    }
}

// ---------------------------------------------------------------- config document

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceNode {
    pub decl: Declaration,
    pub children: Vec<ServiceNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDecl {
    pub kind: LinkKind,
    pub from: String,
    pub to: String,
    pub weight: Option<f64>,
}

/// Parsed form of a network file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub dynamics: LinkDynamics,
    pub file_roots: Vec<(String, PathBuf)>,
    pub peers: Vec<String>,
    pub services: Vec<ServiceNode>,
    pub slots: Vec<(String, Stage, SlotSpec)>,
    pub links: Vec<LinkDecl>,
}

impl ConfigDocument {
    /// Consistent snapshot of a registry.
    pub fn capture(registry: &Registry) -> Self {
        let snapshot = registry.snapshot();
        fn level(snaps: &[crate::registry::ServiceSnapshot], parent: Option<&ServicePath>) -> Vec<ServiceNode> {
            let mut nodes: Vec<ServiceNode> = snaps
                .iter()
                .filter(|s| s.path.parent().as_ref() == parent)
                .map(|s| ServiceNode {
                    decl: Declaration {
                        id: s.path.id().to_string(),
                        kind: s.kind.clone(),
                        password: s.password.clone(),
                        metadata: s.metadata.clone(),
                        behaviour: s.behaviour,
                        config: s.config.clone(),
                    },
                    children: level(snaps, Some(&s.path)),
                })
                .collect();
            nodes.sort_by(|a, b| a.decl.id.cmp(&b.decl.id));
            nodes
        }
        let slots = snapshot
            .iter()
            .flat_map(|s| {
                s.slots
                    .iter()
                    .map(move |(stage, spec)| (s.path.to_string(), *stage, spec.clone()))
            })
            .collect();
        ConfigDocument {
            dynamics: registry.dynamics(),
            file_roots: registry
                .file_roots()
                .read()
                .roots()
                .into_iter()
                .map(|r| (r.alias, r.directory))
                .collect(),
            peers: registry.peers().into_iter().map(|p| p.url).collect(),
            services: level(&snapshot, None),
            slots,
            links: registry
                .links()
                .into_iter()
                .map(|l| LinkDecl {
                    kind: l.kind,
                    weight: (l.kind == LinkKind::Dynamic).then_some(l.weight),
                    from: l.source,
                    to: l.target,
                })
                .collect(),
        }
    }

    pub fn to_element(&self) -> Element {
        let d = &self.dynamics;
        let mut root = Element::new("licasNetwork").attr("version", SCHEMA_VERSION).child(
            Element::new("dynamics")
                .attr("reinforce", format_real(d.reinforce))
                .attr("decay", format_real(d.decay_factor))
                .attr("create", format_real(d.create_threshold))
                .attr("exist", format_real(d.exist_threshold))
                .attr("cap", format_real(d.weight_cap)),
        );
        for (alias, path) in &self.file_roots {
            root.push(
                Element::new("fileRoot")
                    .attr("alias", alias)
                    .attr("path", path.to_string_lossy()),
            );
        }
        for url in &self.peers {
            root.push(Element::new("peer").attr("url", url));
        }
        fn service(node: &ServiceNode) -> Element {
            let d = &node.decl;
            let mut el = Element::new("service").attr("id", &d.id).attr("kind", &d.kind);
            if !d.password.is_open() {
                el = el.attr("password", d.password.as_str());
            }
            for (k, v) in &d.metadata {
                el.push(Element::new("meta").attr("key", k).attr("value", v));
            }
            if let Some(b) = d.behaviour {
                el.push(
                    Element::new("behaviour")
                        .attr("period", b.period_ms.to_string())
                        .attr("enabled", b.enabled.to_string()),
                );
            }
            for c in &d.config {
                el.push(c.clone());
            }
            for child in &node.children {
                el.push(service(child));
            }
            el
        }
        for node in &self.services {
            root.push(service(node));
        }
        let mut by_service: BTreeMap<&str, Vec<(Stage, &SlotSpec)>> = BTreeMap::new();
        for (path, stage, spec) in &self.slots {
            by_service.entry(path).or_default().push((*stage, spec));
        }
        for (path, mut slots) in by_service {
            slots.sort_by_key(|(s, _)| *s as usize);
            let mut el = Element::new("autonomic").attr("service", path);
            for (stage, spec) in slots {
                let mut s = Element::new(stage.as_str()).attr("type", &spec.kind);
                for (k, v) in &spec.attrs {
                    s = s.attr(k, v);
                }
                el.push(s);
            }
            root.push(el);
        }
        for l in &self.links {
            let mut el = Element::new("link")
                .attr("kind", l.kind.as_str())
                .attr("from", &l.from)
                .attr("to", &l.to);
            if let Some(w) = l.weight {
                el = el.attr("weight", format_real(w));
            }
            root.push(el);
        }
        root
    }

    pub fn to_xml(&self) -> String {
        let mut s = self.to_element().to_pretty_string();
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, AdminError> {
        let root = xml::parse_element(text).map_err(|e| AdminError::Schema(e.to_string()))?;
        Self::from_element(&root)
    }

    /// Validates structure, unique ids and link closure.
    pub fn from_element(root: &Element) -> Result<Self, AdminError> {
        let schema = |m: String| AdminError::Schema(m);
        if root.name != "licasNetwork" {
            return Err(schema(format!("expected <licasNetwork>, found <{}>", root.name)));
        }
        if root.get("version") != Some(SCHEMA_VERSION) {
            return Err(schema(format!("unsupported version {:?}", root.get("version"))));
        }
        let mut doc = ConfigDocument {
            dynamics: LinkDynamics::default(),
            file_roots: Vec::new(),
            peers: Vec::new(),
            services: Vec::new(),
            slots: Vec::new(),
            links: Vec::new(),
        };
        let mut declared = BTreeSet::new();
        for el in root.elements() {
            match el.name.as_str() {
                "dynamics" => doc.dynamics = dynamics_from(el).map_err(schema)?,
                "fileRoot" => match (el.get("alias"), el.get("path")) {
                    (Some(a), Some(p)) => doc.file_roots.push((a.to_string(), PathBuf::from(p))),
                    _ => return Err(schema("<fileRoot> needs alias and path".into())),
                },
                "peer" => doc.peers.push(
                    el.get("url")
                        .ok_or_else(|| schema("<peer> needs url".into()))?
                        .to_string(),
                ),
                "service" => doc
                    .services
                    .push(service_from(el, None, &mut declared).map_err(schema)?),
                "autonomic" => {
                    let path = el
                        .get("service")
                        .ok_or_else(|| schema("<autonomic> needs service".into()))?;
                    for s in el.elements() {
                        let stage: Stage = s.name.parse().map_err(|e| schema(format!("{e}")))?;
                        let mut spec = SlotSpec::new(
                            s.get("type")
                                .ok_or_else(|| schema(format!("<{}> needs type", s.name)))?,
                        );
                        for (k, v) in s.attrs.iter().filter(|(k, _)| k.as_str() != "type") {
                            spec = spec.attr(k, v);
                        }
                        doc.slots.push((path.to_string(), stage, spec));
                    }
                }
                "link" => {
                    let kind: LinkKind = el
                        .get("kind")
                        .unwrap_or_default()
                        .parse()
                        .map_err(|e| schema(format!("{e}")))?;
                    let (Some(from), Some(to)) = (el.get("from"), el.get("to")) else {
                        return Err(schema("<link> needs from and to".into()));
                    };
                    let weight = match el.get("weight") {
                        Some(w) => Some(w.parse::<f64>().map_err(|_| schema(format!("bad weight {w:?}")))?),
                        None if kind == LinkKind::Dynamic => {
                            return Err(schema(format!("dynamic link {from} -> {to} needs weight")))
                        }
                        None => None,
                    };
                    doc.links.push(LinkDecl {
                        kind,
                        from: from.to_string(),
                        to: to.to_string(),
                        weight,
                    });
                }
                other => return Err(schema(format!("unexpected <{other}>"))),
            }
        }
        for (path, _, _) in &doc.slots {
            if !declared.contains(path) {
                return Err(schema(format!("autonomic slots for undeclared service {path}")));
            }
        }
        for l in &doc.links {
            for end in [&l.from, &l.to] {
                let local = matches!(end.parse::<ServiceRef>(), Ok(ServiceRef::Local(_)));
                if local && !declared.contains(end.as_str()) {
                    return Err(schema(format!("link endpoint {end} is not declared")));
                }
            }
        }
        Ok(doc)
    }
}

fn dynamics_from(el: &Element) -> Result<LinkDynamics, String> {
    let mut d = LinkDynamics::default();
    for (key, slot) in [
        ("reinforce", &mut d.reinforce),
        ("decay", &mut d.decay_factor),
        ("create", &mut d.create_threshold),
        ("exist", &mut d.exist_threshold),
        ("cap", &mut d.weight_cap),
    ] {
        if let Some(v) = el.get(key) {
            *slot = v.parse().map_err(|_| format!("dynamics {key}={v:?} is not a number"))?;
        }
    }
    d.validate().map_err(|e| e.to_string())?;
    Ok(d)
}

fn service_from(el: &Element, parent: Option<&str>, declared: &mut BTreeSet<String>) -> Result<ServiceNode, String> {
    let id = el.get("id").ok_or("<service> needs id")?;
    let kind = el.get("kind").ok_or_else(|| format!("service {id:?} needs kind"))?;
    let path = match parent {
        Some(p) => format!("{p}/{id}"),
        None => id.to_string(),
    };
    ServicePath::parse(&path).map_err(|e| format!("service {path:?}: {e}"))?;
    if !declared.insert(path.clone()) {
        return Err(format!("duplicate service id {path}"));
    }
    let password = match el.get("password") {
        Some(p) => PasswordDigest::from_stored(p).map_err(|e| format!("service {path}: {e}"))?,
        None => PasswordDigest::open(),
    };
    let mut node = ServiceNode {
        decl: Declaration {
            password,
            ..Declaration::new(id, kind)
        },
        children: Vec::new(),
    };
    for child in el.elements() {
        match child.name.as_str() {
            "meta" => {
                let (k, v) = meta_pair(child)?;
                node.decl.metadata.insert(k, v);
            }
            "behaviour" => node.decl.behaviour = Some(behaviour_from(child)?),
            "service" => node.children.push(service_from(child, Some(&path), declared)?),
            _ => node.decl.config.push(child.clone()),
        }
    }
    Ok(node)
}

/// What [`load_config`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub services: usize,
    /// Services of unknown kinds, registered as inert placeholders.
    pub placeholders: Vec<(String, String)>,
    pub links: usize,
    pub peers: usize,
    /// Declarations that could not be applied, with the reason.
    pub failures: Vec<(String, String)>,
}

impl LoadReport {
    pub fn to_value(&self) -> Value {
        let pairs = |v: &[(String, String)]| {
            Value::List(
                v.iter()
                    .map(|(a, b)| Value::List(vec![Value::text(a.clone()), Value::text(b.clone())]))
                    .collect(),
            )
        };
        Value::Map(BTreeMap::from([
            ("services".to_string(), Value::Int(self.services as i64)),
            ("placeholders".to_string(), pairs(&self.placeholders)),
            ("links".to_string(), Value::Int(self.links as i64)),
            ("peers".to_string(), Value::Int(self.peers as i64)),
            ("failures".to_string(), pairs(&self.failures)),
        ]))
    }
}

/// Populates `registry` from a validated document. Individual failures are
/// reported, not fatal.
pub fn apply_config(doc: &ConfigDocument, registry: &Registry, factory: &ServiceFactory) -> LoadReport {
    let mut report = LoadReport::default();
    if let Err(e) = registry.set_dynamics(doc.dynamics) {
        report.failures.push(("dynamics".into(), e.to_string()));
    }
    {
        let roots = registry.file_roots();
        let mut roots = roots.write();
        for (alias, path) in &doc.file_roots {
            if let Err(e) = roots.add(alias, path) {
                report.failures.push((format!("fileRoot {alias}"), e.to_string()));
            }
        }
    }
    for url in &doc.peers {
        match registry.register_peer(url) {
            Ok(_) => report.peers += 1,
            Err(e) => report.failures.push((format!("peer {url}"), e.to_string())),
        }
    }
    fn add(
        node: &ServiceNode,
        parent: Option<&ServicePath>,
        registry: &Registry,
        factory: &ServiceFactory,
        report: &mut LoadReport,
    ) {
        let d = &node.decl;
        let label = match parent {
            Some(p) => format!("{p}/{}", d.id),
            None => d.id.clone(),
        };
        let spec = match factory.instantiate(d, registry) {
            Ok(spec) => spec,
            Err(e) => {
                if !matches!(e, AdminError::UnknownKind(_)) {
                    report.failures.push((label.clone(), e.to_string()));
                }
                report.placeholders.push((label.clone(), d.kind.clone()));
                ServiceSpec {
                    id: d.id.clone(),
                    kind: d.kind.clone(),
                    password: d.password.clone(),
                    metadata: d.metadata.clone(),
                    handler: None,
                    behaviour: d.behaviour,
                    config: d.config.clone(),
                }
            }
        };
        let added = match parent {
            Some(p) => registry.nest_service(p, spec),
            None => registry.add_service(spec),
        };
        match added {
            Ok(path) => {
                report.services += 1;
                for child in &node.children {
                    add(child, Some(&path), registry, factory, report);
                }
            }
            Err(e) => report.failures.push((label, e.to_string())),
        }
    }
    for node in &doc.services {
        add(node, None, registry, factory, &mut report);
    }
    for (path, stage, spec) in &doc.slots {
        let manager = ServicePath::parse(path).ok().and_then(|p| registry.manager(&p));
        let result = match (manager, spec.build()) {
            (Some(m), Ok(slot)) => {
                m.install_slot(*stage, slot);
                Ok(())
            }
            (None, _) => Err(format!("no such service {path}")),
            (_, Err(e)) => Err(e.to_string()),
        };
        if let Err(e) = result {
            report
                .failures
                .push((format!("autonomic {path}/{}", stage.as_str()), e));
        }
    }
    for l in &doc.links {
        let result = match l.weight {
            Some(w) if l.kind == LinkKind::Dynamic => registry.restore_dynamic_link(&l.from, &l.to, w),
            _ => registry.add_link(l.kind, &l.from, &l.to),
        };
        match result {
            Ok(_) => report.links += 1,
            Err(e) => report.failures.push((
                format!("{} link {} -> {}", l.kind.as_str(), l.from, l.to),
                e.to_string(),
            )),
        }
    }
    report
}

/// Writes the network file and the factory file into `dir`.
pub fn save_config(registry: &Registry, factory: &ServiceFactory, dir: &Path) -> Result<ConfigDocument, AdminError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let doc = ConfigDocument::capture(registry);
    let path = dir.join(NETWORK_FILE);
    std::fs::write(&path, doc.to_xml()).map_err(|e| io_error(&path, e))?;
    factory.save_to(dir)?;
    Ok(doc)
}

/// Reads the network file in `dir` into `registry`. Kinds from the
/// directory's factory file are added to `factory` first.
pub fn load_config(registry: &Registry, factory: &mut ServiceFactory, dir: &Path) -> Result<LoadReport, AdminError> {
    let factory_path = dir.join(FACTORY_FILE);
    if factory_path.exists() {
        let text = std::fs::read_to_string(&factory_path).map_err(|e| io_error(&factory_path, e))?;
        let root = xml::parse_element(&text).map_err(|e| AdminError::BadManifest(e.to_string()))?;
        for kind in root.elements() {
            let known = kind.get("name").is_some_and(|n| factory.contains(n));
            if !known {
                let mut single = Element::new("module");
                single.push(kind.clone());
                factory.load_manifest_text(&single.to_pretty_string())?;
            }
        }
    }
    let path = dir.join(NETWORK_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let doc = ConfigDocument::parse(&text)?;
    Ok(apply_config(&doc, registry, factory))
}

// ---------------------------------------------------------------- admin endpoint

/// Operations served under `/admin`.
pub struct AdminService {
    registry: Registry,
    factory: Arc<RwLock<ServiceFactory>>,
    config_dir: Option<PathBuf>,
}

impl AdminService {
    pub fn new(registry: Registry, factory: Arc<RwLock<ServiceFactory>>, config_dir: Option<PathBuf>) -> Self {
        AdminService {
            registry,
            factory,
            config_dir,
        }
    }

    fn dir(&self, args: &[Value]) -> Result<PathBuf, ServiceError> {
        match args.first() {
            Some(Value::Text(d)) => Ok(PathBuf::from(d)),
            Some(other) => Err(ServiceError::BadArguments(format!(
                "directory must be text, got {}",
                other.type_name()
            ))),
            None => self
                .config_dir
                .clone()
                .ok_or_else(|| ServiceError::BadArguments("no config directory configured".into())),
        }
    }

    fn instantiate(&self, args: &[Value]) -> Result<Value, ServiceError> {
        let (kind, id) = match args {
            [Value::Text(k), Value::Text(i), ..] => (k.clone(), i.clone()),
            _ => {
                return Err(ServiceError::BadArguments(
                    "instantiate(kind, id[, meta[, parent]])".into(),
                ))
            }
        };
        let mut decl = Declaration::new(id, kind);
        match args.get(2) {
            Some(Value::Map(m)) => {
                for (k, v) in m {
                    decl.metadata.insert(k.clone(), v.to_display_string());
                }
            }
            None => {}
            Some(_) => return Err(ServiceError::BadArguments("meta must be a map".into())),
        }
        let spec = self
            .factory
            .read()
            .instantiate(&decl, &self.registry)
            .map_err(admin_fault)?;
        let path = match args.get(3) {
            Some(Value::Text(parent)) => {
                let parent = ServicePath::parse(parent).map_err(|e| ServiceError::BadArguments(e.to_string()))?;
                self.registry.nest_service(&parent, spec)
            }
            None => self.registry.add_service(spec),
            Some(_) => return Err(ServiceError::BadArguments("parent must be text".into())),
        }
        .map_err(|e| admin_fault(e.into()))?;
        Ok(Value::Text(path.to_string()))
    }
}

fn admin_fault(e: AdminError) -> ServiceError {
    match e {
        AdminError::Registry(RegistryError::NoSuchService(s)) => ServiceError::NotFound(s),
        AdminError::Io(m) => ServiceError::Failed(m),
        other => ServiceError::BadArguments(other.to_string()),
    }
}

fn text_arg<'a>(args: &'a [Value], what: &str) -> Result<&'a str, ServiceError> {
    match args.first() {
        Some(Value::Text(t)) => Ok(t),
        _ => Err(ServiceError::BadArguments(format!("{what} must be text"))),
    }
}

fn peer_value(p: &crate::registry::PeerServer) -> Value {
    let mut m = BTreeMap::from([("url".to_string(), Value::text(p.url.clone()))]);
    if let Some(t) = p.last_seen {
        m.insert("lastSeen".into(), Value::Int(t as i64));
    }
    Value::Map(m)
}

impl Handler for AdminService {
    fn methods(&self) -> Vec<String> {
        [
            "configXml",
            "instantiate",
            "listKinds",
            "listPeers",
            "loadConfig",
            "loadModule",
            "peerMeta",
            "refreshPeer",
            "registerPeer",
            "removePeer",
            "removeService",
            "saveConfig",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn invoke(&self, method: &str, args: &[Value]) -> Result<Value, ServiceError> {
        let reg = |e: RegistryError| admin_fault(e.into());
        match method {
            "listKinds" => {
                let f = self.factory.read();
                Ok(Value::List(
                    f.kinds()
                        .into_iter()
                        .map(|k| {
                            let meta = f.get(&k).map(|t| t.default_meta.clone()).unwrap_or_default();
                            Value::Map(BTreeMap::from([
                                ("kind".to_string(), Value::text(k)),
                                (
                                    "meta".to_string(),
                                    Value::Map(meta.into_iter().map(|(k, v)| (k, Value::Text(v))).collect()),
                                ),
                            ]))
                        })
                        .collect(),
                ))
            }
            "instantiate" => self.instantiate(args),
            "configXml" => Ok(Value::Text(ConfigDocument::capture(&self.registry).to_xml())),
            "saveConfig" => {
                let dir = self.dir(args)?;
                save_config(&self.registry, &self.factory.read(), &dir).map_err(admin_fault)?;
                Ok(Value::Text(dir.display().to_string()))
            }
            "loadConfig" => {
                let dir = self.dir(args)?;
                let report = load_config(&self.registry, &mut self.factory.write(), &dir).map_err(admin_fault)?;
                Ok(report.to_value())
            }
            "loadModule" => {
                let path = text_arg(args, "module path")?;
                let kinds = self.factory.write().load_module(Path::new(path)).map_err(admin_fault)?;
                Ok(Value::List(kinds.into_iter().map(Value::Text).collect()))
            }
            "listPeers" => Ok(Value::List(self.registry.peers().iter().map(peer_value).collect())),
            "registerPeer" => Ok(peer_value(
                &self.registry.register_peer(text_arg(args, "url")?).map_err(reg)?,
            )),
            "refreshPeer" => Ok(peer_value(
                &self.registry.refresh_peer(text_arg(args, "url")?).map_err(reg)?,
            )),
            "removePeer" => {
                self.registry.remove_peer(text_arg(args, "url")?).map_err(reg)?;
                Ok(Value::Bool(true))
            }
            "peerMeta" => {
                let url = text_arg(args, "url")?;
                let peer = self
                    .registry
                    .peer(url)
                    .ok_or_else(|| ServiceError::NotFound(url.to_string()))?;
                peer.meta
                    .map(Value::Text)
                    .ok_or_else(|| ServiceError::NotFound(format!("no cached view for {url}")))
            }
            "removeService" => {
                let path = ServicePath::parse(text_arg(args, "path")?)
                    .map_err(|e| ServiceError::BadArguments(e.to_string()))?;
                Ok(Value::Int(self.registry.remove_service(&path).map_err(reg)? as i64))
            }
            other => Err(ServiceError::NoSuchMethod(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::MethodCall;

    fn call(r: &Registry, path: &str, method: &str, args: Vec<Value>) -> Result<Value, crate::Fault> {
        r.invoke(&MethodCall::new(ServicePath::parse(path).unwrap(), method).args(args))
    }

    #[test]
    fn builtin_kinds_work() {
        let f = ServiceFactory::new();
        assert_eq!(f.kinds(), BUILTIN_KINDS);
        let r = Registry::new();
        r.add_service(f.instantiate(&Declaration::new("E", "echo"), &r).unwrap())
            .unwrap();
        assert_eq!(call(&r, "E", "echo", vec![Value::Int(4)]).unwrap(), Value::Int(4));
        assert_eq!(
            f.instantiate(&Declaration::new("X", "nope"), &r).unwrap_err(),
            AdminError::UnknownKind("nope".into())
        );
        let mut f2 = ServiceFactory::new();
        assert!(matches!(
            f2.register_type(ServiceType::new("echo", |_, _| echo_handler())),
            Err(AdminError::DuplicateKind(_))
        ));
    }

    #[test]
    fn meta_merge() {
        let mut f = ServiceFactory::new();
        f.register_type(
            ServiceType::new("greeter", |_, _| echo_handler())
                .default_meta("lang", "en")
                .default_meta("tone", "warm"),
        )
        .unwrap();
        let spec = f
            .instantiate(&Declaration::new("G", "greeter").meta("lang", "fr"), &Registry::new())
            .unwrap();
        assert_eq!(spec.metadata["lang"], "fr");
        assert_eq!(spec.metadata["tone"], "warm");
    }

    #[test]
    fn manifest_kinds() {
        let manifest = r#"<module>
            <kind name="catalogue" base="information">
              <meta key="topic" value="pets"/>
              <container kind="id"><resource id="r1" kind="text">cat</resource></container>
            </kind>
            <kind name="hello" base="table"><op name="greet" returns="s:hi"/></kind>
          </module>"#;
        let mut f = ServiceFactory::new();
        assert_eq!(f.load_manifest_text(manifest).unwrap(), ["catalogue", "hello"]);
        assert!(matches!(
            f.load_manifest_text(manifest),
            Err(AdminError::DuplicateKind(_))
        ));
        let r = Registry::new();
        r.add_service(f.instantiate(&Declaration::new("C", "catalogue"), &r).unwrap())
            .unwrap();
        r.add_service(f.instantiate(&Declaration::new("H", "hello"), &r).unwrap())
            .unwrap();
        assert_eq!(call(&r, "C", "getText", vec![]).unwrap(), Value::text("cat"));
        assert_eq!(call(&r, "H", "greet", vec![]).unwrap(), Value::text("hi"));
        assert!(matches!(
            f.load_manifest_text(r#"<module><kind name="z" base="nothing"/></module>"#),
            Err(AdminError::BadManifest(_))
        ));
    }

    #[test]
    fn schema_errors() {
        let dup =
            r#"<licasNetwork version="1"><service id="A" kind="echo"/><service id="A" kind="echo"/></licasNetwork>"#;
        assert!(matches!(ConfigDocument::parse(dup), Err(AdminError::Schema(_))));
        let dangling = r#"<licasNetwork version="1"><service id="A" kind="echo"/><link kind="permanent" from="A" to="B"/></licasNetwork>"#;
        assert!(matches!(ConfigDocument::parse(dangling), Err(AdminError::Schema(_))));
        assert!(ConfigDocument::parse(r#"<licasNetwork version="2"/>"#).is_err());
    }

    #[test]
    fn empty_registry_document() {
        let doc = ConfigDocument::capture(&Registry::new());
        let reparsed = ConfigDocument::parse(&doc.to_xml()).unwrap();
        assert_eq!(reparsed, doc);
    }
}
