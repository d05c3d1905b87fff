//! Service hosting: creation, nesting, wrapped handlers, Auto behaviour
//! loops, contracts, links and the peer list.
//!
//! All registry state sits behind one mutex. Handlers, managers and network
//! calls always run with the lock released, so a slow service never blocks
//! registration and a manager action may call back into the registry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::autonomic::{self, AutonomicManager, ChangeRequest, Event, EventKind, ManagerHost, SlotSpec, Stage};
use crate::files::FileRoots;
use crate::http::{HttpClient, RemoteError};
use crate::links::{Link, LinkDynamics, LinkError, LinkKind, LinkTable};
use crate::view::{NetworkView, ServiceView};
use crate::wire::{Fault, FaultCode, MethodCall, ServicePath, Value};
use crate::xml::Element;

pub const BUILTIN_METHODS: [&str; 4] = ["getMeta", "listMethods", "ping", "recordUse"];

/// Shortest allowed behaviour period.
pub const MIN_PERIOD_MS: u64 = 10;

const FAULT_LEDGER_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid service id {0:?}")]
    InvalidId(String),
    #[error("no such service {0:?}")]
    NoSuchService(String),
    #[error("duplicate method name {0:?}")]
    DuplicateMethodName(String),
    #[error("{0} is not an Auto service")]
    NotAutoService(String),
    #[error("behaviour period must be at least {MIN_PERIOD_MS} ms, got {0}")]
    BadPeriod(u64),
    #[error("bad password digest {0:?}")]
    BadDigest(String),
    #[error("no such contract {0:?}")]
    NoSuchContract(String),
    #[error("contract {0:?} already decided")]
    AlreadyDecided(String),
    #[error("bad peer url {0:?}")]
    BadUrl(String),
    #[error("peer {0:?} already registered")]
    DuplicatePeer(String),
    #[error("no such peer {0:?}")]
    NoSuchPeer(String),
    #[error("peer {0} unreachable")]
    PeerUnreachable(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Service(#[from] Fault),
}

// ---------------------------------------------------------------- handlers

/// Failure raised by a service operation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error("no such method {0:?}")]
    NoSuchMethod(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Failed(String),
}

impl From<ServiceError> for Fault {
    fn from(e: ServiceError) -> Fault {
        match e {
            ServiceError::NoSuchMethod(m) => Fault::new(FaultCode::NoSuchMethod, format!("no such method {m:?}")),
            ServiceError::BadArguments(m) => Fault::new(FaultCode::BadArguments, m),
            ServiceError::Forbidden(m) => Fault::new(FaultCode::ForbiddenPath, m),
            ServiceError::NotFound(m) => Fault::new(FaultCode::NoSuchService, format!("not found: {m}")),
            ServiceError::Failed(m) => Fault::new(FaultCode::ServiceError, m),
        }
    }
}

/// Anything exposing named `Value` operations can be hosted.
pub trait Handler: Send + Sync {
    fn methods(&self) -> Vec<String>;
    fn invoke(&self, method: &str, args: &[Value]) -> Result<Value, ServiceError>;
}

type OpFn = dyn Fn(&[Value]) -> Result<Value, ServiceError> + Send + Sync;

#[derive(Clone)]
pub struct Operation {
    pub name: String,
    /// Exact argument count, or `None` for variadic operations.
    pub arity: Option<usize>,
    f: Arc<OpFn>,
}

impl Operation {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        f: impl Fn(&[Value]) -> Result<Value, ServiceError> + Send + Sync + 'static,
    ) -> Self {
        Operation {
            name: name.into(),
            arity: Some(arity),
            f: Arc::new(f),
        }
    }

    pub fn variadic(
        name: impl Into<String>,
        f: impl Fn(&[Value]) -> Result<Value, ServiceError> + Send + Sync + 'static,
    ) -> Self {
        Operation {
            name: name.into(),
            arity: None,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operation")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

/// Operation table produced by [`wrap`].
#[derive(Debug, Clone)]
pub struct OperationTable {
    ops: BTreeMap<String, Operation>,
}

impl Handler for OperationTable {
    fn methods(&self) -> Vec<String> {
        self.ops.keys().cloned().collect()
    }

    fn invoke(&self, method: &str, args: &[Value]) -> Result<Value, ServiceError> {
        let op = self
            .ops
            .get(method)
            .ok_or_else(|| ServiceError::NoSuchMethod(method.to_string()))?;
        if let Some(n) = op.arity {
            if args.len() != n {
                return Err(ServiceError::BadArguments(format!(
                    "{method} takes {n} argument(s), got {}",
                    args.len()
                )));
            }
        }
        (op.f)(args)
    }
}

/// Turns a table of named operations into a hostable handler.
pub fn wrap(ops: impl IntoIterator<Item = Operation>) -> Result<Arc<dyn Handler>, RegistryError> {
    let mut table = BTreeMap::new();
    for op in ops {
        if table.contains_key(&op.name) {
            return Err(RegistryError::DuplicateMethodName(op.name));
        }
        table.insert(op.name.clone(), op);
    }
    Ok(Arc::new(OperationTable { ops: table }))
}

// ---------------------------------------------------------------- passwords

/// Salted SHA-256 digest, stored as `sha256$<salt>$<digest>` in hex. The
/// empty digest marks an open service.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct PasswordDigest(String);

impl fmt::Debug for PasswordDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_open() {
            f.write_str("PasswordDigest(open)")
        } else {
            f.write_str("PasswordDigest(..)")
        }
    }
}

impl PasswordDigest {
    pub fn open() -> Self {
        PasswordDigest(String::new())
    }

    /// Hashes a plaintext password; the empty password gives an open service.
    pub fn from_plain(password: &str) -> Self {
        if password.is_empty() {
            return Self::open();
        }
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        PasswordDigest(format!(
            "sha256${}${}",
            hex::encode(salt),
            hex::encode(hash(&salt, password))
        ))
    }

    pub fn from_stored(stored: &str) -> Result<Self, RegistryError> {
        if stored.is_empty() {
            return Ok(Self::open());
        }
        let bad = || RegistryError::BadDigest(stored.to_string());
        let mut parts = stored.split('$');
        let (Some("sha256"), Some(salt), Some(digest), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let digest = hex::decode(digest).map_err(|_| bad())?;
        hex::decode(salt).map_err(|_| bad())?;
        if digest.len() != 32 {
            return Err(bad());
        }
        Ok(PasswordDigest(stored.to_string()))
    }

    pub fn is_open(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn verify(&self, password: &str) -> bool {
        if self.is_open() {
            return true;
        }
        let mut parts = self.0.split('$').skip(1);
        let (Some(salt), Some(digest)) = (parts.next(), parts.next()) else {
            return false;
        };
        let (Ok(salt), Ok(expected)) = (hex::decode(salt), hex::decode(digest)) else {
            return false;
        };
        let actual = hash(&salt, password);
        expected.len() == actual.len()
            && expected
                .iter()
                .zip(actual.iter())
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
    }
}

fn hash(salt: &[u8], password: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    h.finalize().to_vec()
}

// ---------------------------------------------------------------- specs

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehaviourSpec {
    pub period_ms: u64,
    pub enabled: bool,
}

impl BehaviourSpec {
    pub fn new(period_ms: u64) -> Result<Self, RegistryError> {
        if period_ms < MIN_PERIOD_MS {
            return Err(RegistryError::BadPeriod(period_ms));
        }
        Ok(BehaviourSpec {
            period_ms,
            enabled: true,
        })
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }
}

/// Everything needed to register a service.
#[derive(Clone)]
pub struct ServiceSpec {
    pub id: String,
    pub kind: String,
    pub password: PasswordDigest,
    pub metadata: BTreeMap<String, String>,
    /// `None` registers an inert placeholder that only answers built-ins.
    pub handler: Option<Arc<dyn Handler>>,
    pub behaviour: Option<BehaviourSpec>,
    /// Kind-specific configuration kept verbatim for saving.
    pub config: Vec<Element>,
}

impl fmt::Debug for ServiceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceSpec")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("metadata", &self.metadata)
            .field("handler", &self.handler.as_ref().map(|h| h.methods()))
            .field("behaviour", &self.behaviour)
            .finish()
    }
}

impl ServiceSpec {
    pub fn new(id: impl Into<String>, kind: impl Into<String>) -> Self {
        ServiceSpec {
            id: id.into(),
            kind: kind.into(),
            password: PasswordDigest::open(),
            metadata: BTreeMap::new(),
            handler: None,
            behaviour: None,
            config: Vec::new(),
        }
    }

    pub fn password(mut self, plain: &str) -> Self {
        self.password = PasswordDigest::from_plain(plain);
        self
    }

    pub fn digest(mut self, digest: PasswordDigest) -> Self {
        self.password = digest;
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn handler(mut self, handler: Arc<dyn Handler>) -> Self {
        self.handler = Some(handler);
        self
    }

    pub fn behaviour(mut self, spec: BehaviourSpec) -> Self {
        self.behaviour = Some(spec);
        self
    }

    pub fn config(mut self, element: Element) -> Self {
        self.config.push(element);
        self
    }
}

/// Read-only summary of a hosted service.
#[derive(Debug, Clone)]
pub struct ServiceInfo {
    pub path: ServicePath,
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub methods: Vec<String>,
    pub invocations: u64,
    pub behaviour: Option<BehaviourSpec>,
    pub placeholder: bool,
    pub open: bool,
}

/// Everything config saving needs about one service.
#[derive(Debug, Clone)]
pub struct ServiceSnapshot {
    pub path: ServicePath,
    pub kind: String,
    pub password: PasswordDigest,
    pub metadata: BTreeMap<String, String>,
    pub behaviour: Option<BehaviourSpec>,
    pub config: Vec<Element>,
    pub slots: Vec<(Stage, SlotSpec)>,
    pub placeholder: bool,
}

// ---------------------------------------------------------------- refs

/// A link endpoint or call target: a local path or a service on a peer,
/// written `http://host:port/service/A/B`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceRef {
    Local(ServicePath),
    Remote { peer: String, path: ServicePath },
}

impl ServiceRef {
    pub fn remote(peer: &str, path: ServicePath) -> Self {
        ServiceRef::Remote {
            peer: peer.trim_end_matches('/').to_string(),
            path,
        }
    }
}

impl FromStr for ServiceRef {
    type Err = RegistryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.starts_with("http://") || s.starts_with("https://") {
            let bad = || RegistryError::BadUrl(s.to_string());
            let scheme_end = s.find("://").ok_or_else(bad)? + 3;
            let at = s[scheme_end..].find("/service/").ok_or_else(bad)? + scheme_end;
            let peer = normalize_url(&s[..at])?;
            let path = ServicePath::parse(&s[at + "/service/".len()..]).map_err(|_| bad())?;
            Ok(ServiceRef::Remote { peer, path })
        } else {
            ServicePath::parse(s)
                .map(ServiceRef::Local)
                .map_err(|_| RegistryError::InvalidId(s.to_string()))
        }
    }
}

impl fmt::Display for ServiceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceRef::Local(p) => write!(f, "{p}"),
            ServiceRef::Remote { peer, path } => write!(f, "{peer}/service/{path}"),
        }
    }
}

fn normalize_url(url: &str) -> Result<String, RegistryError> {
    let trimmed = url.trim().trim_end_matches('/');
    let parsed = url::Url::parse(trimmed).map_err(|_| RegistryError::BadUrl(url.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
        return Err(RegistryError::BadUrl(url.to_string()));
    }
    Ok(trimmed.to_string())
}

// ---------------------------------------------------------------- contracts

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractState {
    Proposed,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    pub id: String,
    /// The service the contract was proposed to.
    pub target: ServicePath,
    pub terms: BTreeMap<String, Value>,
    pub state: ContractState,
}

/// Decides proposed contracts for [`Registry::reason_contract`].
pub trait ContractPolicy: Send + Sync {
    fn decide(&self, contract: &Contract, metadata: &BTreeMap<String, String>) -> Verdict;
}

/// Accepts when the integer term `cost` is at most the service's `maxCost`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostPolicy;

impl ContractPolicy for CostPolicy {
    fn decide(&self, contract: &Contract, metadata: &BTreeMap<String, String>) -> Verdict {
        let cost = match contract.terms.get("cost") {
            Some(Value::Int(c)) => *c,
            _ => return Verdict::Reject,
        };
        match metadata.get("maxCost").and_then(|m| m.trim().parse::<i64>().ok()) {
            Some(max) if cost <= max => Verdict::Accept,
            _ => Verdict::Reject,
        }
    }
}

// ---------------------------------------------------------------- peers

#[derive(Debug, Clone, PartialEq)]
pub struct PeerServer {
    pub url: String,
    /// Milliseconds since the Unix epoch of the last successful refresh.
    pub last_seen: Option<u64>,
    /// Cached `/meta` document.
    pub meta: Option<String>,
}

// ---------------------------------------------------------------- registry

struct ServiceRecord {
    kind: String,
    password: PasswordDigest,
    metadata: BTreeMap<String, String>,
    handler: Option<Arc<dyn Handler>>,
    manager: Arc<AutonomicManager>,
    invocations: Arc<AtomicU64>,
    behaviour: Option<BehaviourSpec>,
    config: Vec<Element>,
    cycle: Arc<Mutex<()>>,
}

impl ServiceRecord {
    fn methods(&self) -> Vec<String> {
        let mut names: BTreeSet<String> = BUILTIN_METHODS.iter().map(|s| s.to_string()).collect();
        if let Some(h) = &self.handler {
            names.extend(h.methods());
        }
        names.into_iter().collect()
    }

    fn target(&self, path: &ServicePath) -> Target {
        Target {
            path: path.clone(),
            handler: self.handler.clone(),
            metadata: self.metadata.clone(),
            methods: self.methods(),
            invocations: Arc::clone(&self.invocations),
        }
    }
}

struct Target {
    path: ServicePath,
    handler: Option<Arc<dyn Handler>>,
    metadata: BTreeMap<String, String>,
    methods: Vec<String>,
    invocations: Arc<AtomicU64>,
}

struct State {
    services: BTreeMap<ServicePath, ServiceRecord>,
    links: LinkTable,
    contracts: BTreeMap<String, Contract>,
    next_contract: u64,
    peers: BTreeMap<String, PeerServer>,
}

struct Inner {
    state: Mutex<State>,
    faults: Mutex<VecDeque<Event>>,
    fault_total: AtomicU64,
    file_roots: Arc<RwLock<FileRoots>>,
    policy: RwLock<Arc<dyn ContractPolicy>>,
    http: HttpClient,
}

/// Whether a call passed the password gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authorization {
    Accept,
    Reject,
}

/// Cheaply cloneable handle to one node's services.
#[derive(Clone)]
pub struct Registry {
    inner: Arc<Inner>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("services", &self.paths()).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry {
            inner: Arc::new(Inner {
                state: Mutex::new(State {
                    services: BTreeMap::new(),
                    links: LinkTable::default(),
                    contracts: BTreeMap::new(),
                    next_contract: 1,
                    peers: BTreeMap::new(),
                }),
                faults: Mutex::new(VecDeque::new()),
                fault_total: AtomicU64::new(0),
                file_roots: Arc::new(RwLock::new(FileRoots::new())),
                policy: RwLock::new(Arc::new(CostPolicy)),
                http: HttpClient::default(),
            }),
        }
    }

    pub fn with_dynamics(dynamics: LinkDynamics) -> Result<Self, RegistryError> {
        let r = Self::new();
        r.set_dynamics(dynamics)?;
        Ok(r)
    }

    fn downgrade(&self) -> Weak<Inner> {
        Arc::downgrade(&self.inner)
    }

    fn upgrade(inner: &Weak<Inner>) -> Option<Registry> {
        inner.upgrade().map(|inner| Registry { inner })
    }

    // ------------------------------------------------------------ services

    pub fn add_service(&self, spec: ServiceSpec) -> Result<ServicePath, RegistryError> {
        let path =
            ServicePath::from_segments(vec![spec.id.clone()]).map_err(|_| RegistryError::InvalidId(spec.id.clone()))?;
        self.insert(path, spec)
    }

    pub fn nest_service(&self, parent: &ServicePath, spec: ServiceSpec) -> Result<ServicePath, RegistryError> {
        let path = parent
            .join(&spec.id)
            .map_err(|_| RegistryError::InvalidId(spec.id.clone()))?;
        self.insert(path, spec)
    }

    fn insert(&self, path: ServicePath, spec: ServiceSpec) -> Result<ServicePath, RegistryError> {
        let mut state = self.inner.state.lock();
        if let Some(parent) = path.parent() {
            if !state.services.contains_key(&parent) {
                return Err(RegistryError::NoSuchService(parent.to_string()));
            }
        }
        if state.services.contains_key(&path) {
            return Err(RegistryError::DuplicateId(path.to_string()));
        }
        let manager = Arc::new(AutonomicManager::new(path.to_string()));
        manager.set_host(Arc::new(RecordHost {
            registry: self.downgrade(),
            path: path.clone(),
        }));
        let mut metadata = spec.metadata;
        metadata.insert("id".into(), spec.id);
        metadata.insert("kind".into(), spec.kind.clone());
        state.services.insert(
            path.clone(),
            ServiceRecord {
                kind: spec.kind,
                password: spec.password,
                metadata,
                handler: spec.handler,
                manager,
                invocations: Arc::new(AtomicU64::new(0)),
                behaviour: spec.behaviour,
                config: spec.config,
                cycle: Arc::new(Mutex::new(())),
            },
        );
        Ok(path)
    }

    /// Removes a service, its descendants and every incident link; returns
    /// the number of services removed.
    pub fn remove_service(&self, path: &ServicePath) -> Result<usize, RegistryError> {
        let mut state = self.inner.state.lock();
        if !state.services.contains_key(path) {
            return Err(RegistryError::NoSuchService(path.to_string()));
        }
        let doomed: Vec<ServicePath> = state.services.keys().filter(|p| p.starts_with(path)).cloned().collect();
        for p in &doomed {
            state.services.remove(p);
        }
        let prefix = format!("{path}/");
        let whole = path.to_string();
        state
            .links
            .remove_incident(|endpoint| endpoint == whole || endpoint.starts_with(&prefix));
        Ok(doomed.len())
    }

    pub fn contains(&self, path: &ServicePath) -> bool {
        self.inner.state.lock().services.contains_key(path)
    }

    /// Every service path, parents before children.
    pub fn paths(&self) -> Vec<ServicePath> {
        let mut paths: Vec<ServicePath> = self.inner.state.lock().services.keys().cloned().collect();
        paths.sort_by(|a, b| a.segments().cmp(b.segments()));
        paths
    }

    pub fn children(&self, path: &ServicePath) -> Vec<ServicePath> {
        self.paths()
            .into_iter()
            .filter(|p| p.parent().as_ref() == Some(path))
            .collect()
    }

    pub fn info(&self, path: &ServicePath) -> Option<ServiceInfo> {
        let state = self.inner.state.lock();
        let r = state.services.get(path)?;
        Some(ServiceInfo {
            path: path.clone(),
            kind: r.kind.clone(),
            metadata: r.metadata.clone(),
            methods: r.methods(),
            invocations: r.invocations.load(Ordering::SeqCst),
            behaviour: r.behaviour,
            placeholder: r.handler.is_none(),
            open: r.password.is_open(),
        })
    }

    pub fn manager(&self, path: &ServicePath) -> Option<Arc<AutonomicManager>> {
        self.inner
            .state
            .lock()
            .services
            .get(path)
            .map(|r| Arc::clone(&r.manager))
    }

    pub fn invocation_count(&self, path: &ServicePath) -> Option<u64> {
        self.inner
            .state
            .lock()
            .services
            .get(path)
            .map(|r| r.invocations.load(Ordering::SeqCst))
    }

    pub fn set_metadata(&self, path: &ServicePath, key: &str, value: &str) -> Result<(), RegistryError> {
        let mut state = self.inner.state.lock();
        let r = state
            .services
            .get_mut(path)
            .ok_or_else(|| RegistryError::NoSuchService(path.to_string()))?;
        r.metadata.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_behaviour(&self, path: &ServicePath, spec: Option<BehaviourSpec>) -> Result<(), RegistryError> {
        if let Some(s) = spec {
            BehaviourSpec::new(s.period_ms)?;
        }
        let mut state = self.inner.state.lock();
        let r = state
            .services
            .get_mut(path)
            .ok_or_else(|| RegistryError::NoSuchService(path.to_string()))?;
        r.behaviour = spec;
        Ok(())
    }

    pub fn set_behaviour_enabled(&self, path: &ServicePath, enabled: bool) -> Result<(), RegistryError> {
        let mut state = self.inner.state.lock();
        let r = state
            .services
            .get_mut(path)
            .ok_or_else(|| RegistryError::NoSuchService(path.to_string()))?;
        match r.behaviour.as_mut() {
            Some(b) => {
                b.enabled = enabled;
                Ok(())
            }
            None => Err(RegistryError::NotAutoService(path.to_string())),
        }
    }

    pub fn snapshot(&self) -> Vec<ServiceSnapshot> {
        let state = self.inner.state.lock();
        let mut out: Vec<ServiceSnapshot> = state
            .services
            .iter()
            .map(|(path, r)| ServiceSnapshot {
                path: path.clone(),
                kind: r.kind.clone(),
                password: r.password.clone(),
                metadata: r.metadata.clone(),
                behaviour: r.behaviour,
                config: r.config.clone(),
                slots: r.manager.slot_specs(),
                placeholder: r.handler.is_none(),
            })
            .collect();
        out.sort_by(|a, b| a.path.segments().cmp(b.path.segments()));
        out
    }

    // ------------------------------------------------------------ calls

    /// Password check, delegated to the service record.
    pub fn authorize(&self, call: &MethodCall) -> Result<Authorization, Fault> {
        let state = self.inner.state.lock();
        let r = state
            .services
            .get(&call.service)
            .ok_or_else(|| no_such_service(&call.service))?;
        Ok(if r.password.verify(&call.password) {
            Authorization::Accept
        } else {
            Authorization::Reject
        })
    }

    /// Gate then dispatch: the service is only touched if the password holds.
    pub fn invoke(&self, call: &MethodCall) -> Result<Value, Fault> {
        let target = {
            let state = self.inner.state.lock();
            let r = state
                .services
                .get(&call.service)
                .ok_or_else(|| no_such_service(&call.service))?;
            if !r.password.verify(&call.password) {
                return Err(Fault::new(
                    FaultCode::BadPassword,
                    format!("bad password for {}", call.service),
                ));
            }
            r.target(&call.service)
        };
        self.run(target, &call.method, &call.args)
    }

    /// Runs an already-authorized call.
    pub fn dispatch(&self, call: &MethodCall) -> Result<Value, Fault> {
        let target = {
            let state = self.inner.state.lock();
            let r = state
                .services
                .get(&call.service)
                .ok_or_else(|| no_such_service(&call.service))?;
            r.target(&call.service)
        };
        self.run(target, &call.method, &call.args)
    }

    fn run(&self, target: Target, method: &str, args: &[Value]) -> Result<Value, Fault> {
        let builtin = BUILTIN_METHODS.contains(&method);
        if !builtin && target.handler.is_none() {
            return Err(Fault::new(
                FaultCode::NoSuchMethod,
                format!("{} is a placeholder with no operations", target.path),
            ));
        }
        target.invocations.fetch_add(1, Ordering::SeqCst);
        match method {
            "ping" => Ok(Value::text("pong")),
            "getMeta" => Ok(Value::Map(
                target.metadata.into_iter().map(|(k, v)| (k, Value::Text(v))).collect(),
            )),
            "listMethods" => Ok(Value::List(target.methods.into_iter().map(Value::Text).collect())),
            "recordUse" => {
                let [Value::Text(to)] = args else {
                    return Err(Fault::new(FaultCode::BadArguments, "recordUse takes one text argument"));
                };
                let weight = self.record_use(&target.path.to_string(), to).map_err(registry_fault)?;
                Ok(Value::Real(weight))
            }
            _ => {
                let handler = target.handler.expect("checked above");
                match catch_unwind(AssertUnwindSafe(|| handler.invoke(method, args))) {
                    Ok(result) => result.map_err(Fault::from),
                    Err(_) => Err(Fault::new(
                        FaultCode::ServiceError,
                        format!("{}.{method} panicked", target.path),
                    )),
                }
            }
        }
    }

    /// Sends a call to another node's `/service` endpoint.
    pub fn call_remote(&self, peer_url: &str, call: &MethodCall) -> Result<Value, RemoteError> {
        self.inner.http.call(peer_url, call)
    }

    /// Calls a local or remote service.
    pub fn call_ref(
        &self,
        target: &ServiceRef,
        method: &str,
        password: &str,
        args: Vec<Value>,
    ) -> Result<Value, RemoteError> {
        match target {
            ServiceRef::Local(path) => {
                let call = MethodCall::new(path.clone(), method).password(password).args(args);
                self.invoke(&call).map_err(RemoteError::Fault)
            }
            ServiceRef::Remote { peer, path } => {
                let call = MethodCall::new(path.clone(), method).password(password).args(args);
                self.call_remote(peer, &call)
            }
        }
    }

    // ------------------------------------------------------------ behaviour

    /// Runs the `behaviour` operation once and hands the result to the
    /// service's manager, waiting for the pipeline to finish.
    pub fn run_behaviour_cycle(&self, path: &ServicePath) -> Result<Value, RegistryError> {
        self.cycle(path, false)
    }

    fn cycle(&self, path: &ServicePath, post: bool) -> Result<Value, RegistryError> {
        let (handler, manager, invocations, lock) = {
            let state = self.inner.state.lock();
            let r = state
                .services
                .get(path)
                .ok_or_else(|| RegistryError::NoSuchService(path.to_string()))?;
            let handler = match (&r.behaviour, &r.handler) {
                (Some(_), Some(h)) if h.methods().iter().any(|m| m == "behaviour") => Arc::clone(h),
                _ => return Err(RegistryError::NotAutoService(path.to_string())),
            };
            (
                handler,
                Arc::clone(&r.manager),
                Arc::clone(&r.invocations),
                Arc::clone(&r.cycle),
            )
        };
        let _serial = lock.lock();
        invocations.fetch_add(1, Ordering::SeqCst);
        let result = catch_unwind(AssertUnwindSafe(|| handler.invoke("behaviour", &[])))
            .unwrap_or_else(|_| Err(ServiceError::Failed("behaviour panicked".into())));
        match result {
            Ok(value) => {
                let event = Event::new(path.to_string(), EventKind::BehaviourResult, value.clone());
                if post {
                    manager.post(event);
                } else if let Err(e) = manager.submit_event(event) {
                    log::debug!("{path}: {e}");
                }
                Ok(value)
            }
            Err(e) => {
                manager.report_fault(Event::fault(path.to_string(), format!("behaviour failed: {e}")));
                Err(RegistryError::Service(e.into()))
            }
        }
    }

    /// Starts fixed-period loops for every enabled Auto service, including
    /// ones added later. Dropping the handle stops them.
    pub fn start_behaviours(&self) -> BehaviourScheduler {
        BehaviourScheduler::start(self.clone())
    }

    fn auto_paths(&self) -> Vec<ServicePath> {
        self.inner
            .state
            .lock()
            .services
            .iter()
            .filter(|(_, r)| r.behaviour.is_some())
            .map(|(p, _)| p.clone())
            .collect()
    }

    fn behaviour_of(&self, path: &ServicePath) -> Option<Option<BehaviourSpec>> {
        self.inner.state.lock().services.get(path).map(|r| r.behaviour)
    }

    // ------------------------------------------------------------ faults

    /// Sends a fault through the service's manager, reaching its `onFault`
    /// operation and the server-level ledger.
    pub fn report_fault(&self, path: &ServicePath, message: &str) -> Result<(), RegistryError> {
        let manager = self
            .manager(path)
            .ok_or_else(|| RegistryError::NoSuchService(path.to_string()))?;
        manager.report_fault(Event::fault(path.to_string(), message));
        Ok(())
    }

    fn deliver_fault(&self, path: &ServicePath, event: &Event) {
        {
            let mut ledger = self.inner.faults.lock();
            if ledger.len() >= FAULT_LEDGER_CAPACITY {
                ledger.pop_front();
            }
            ledger.push_back(event.clone());
            self.inner.fault_total.fetch_add(1, Ordering::SeqCst);
        }
        let target = {
            let state = self.inner.state.lock();
            state.services.get(path).map(|r| r.target(path))
        };
        if let Some(target) = target {
            if target.methods.iter().any(|m| m == "onFault") {
                if let Err(f) = self.run(target, "onFault", &[event.to_value()]) {
                    log::warn!("{path}.onFault: {f}");
                }
            }
        }
    }

    /// Most recent faults seen by this node, oldest first.
    pub fn fault_ledger(&self) -> Vec<Event> {
        self.inner.faults.lock().iter().cloned().collect()
    }

    pub fn fault_count(&self) -> u64 {
        self.inner.fault_total.load(Ordering::SeqCst)
    }

    // ------------------------------------------------------------ links

    fn endpoint(state: &State, endpoint: &str) -> Result<String, RegistryError> {
        match endpoint.parse::<ServiceRef>()? {
            ServiceRef::Local(p) if state.services.contains_key(&p) => Ok(p.to_string()),
            ServiceRef::Local(p) => Err(LinkError::NoSuchService(p.to_string()).into()),
            remote => Ok(remote.to_string()),
        }
    }

    fn local_endpoint(state: &State, endpoint: &str) -> Result<String, RegistryError> {
        let path = ServicePath::parse(endpoint).map_err(|_| RegistryError::InvalidId(endpoint.to_string()))?;
        if !state.services.contains_key(&path) {
            return Err(LinkError::NoSuchService(endpoint.to_string()).into());
        }
        Ok(path.to_string())
    }

    /// Adds a permanent or association link. The source must be local; the
    /// target may be a remote reference.
    pub fn add_link(&self, kind: LinkKind, source: &str, target: &str) -> Result<Link, RegistryError> {
        let mut state = self.inner.state.lock();
        let s = Self::local_endpoint(&state, source)?;
        let t = Self::endpoint(&state, target)?;
        Ok(state.links.add(kind, &s, &t)?)
    }

    /// Reinforces source→target and returns the accumulated weight.
    pub fn record_use(&self, source: &str, target: &str) -> Result<f64, RegistryError> {
        let mut state = self.inner.state.lock();
        let s = Self::local_endpoint(&state, source)?;
        let t = Self::endpoint(&state, target)?;
        Ok(state.links.record_use(&s, &t))
    }

    /// Restores a saved dynamic link at its saved weight.
    pub fn restore_dynamic_link(&self, source: &str, target: &str, weight: f64) -> Result<Link, RegistryError> {
        let mut state = self.inner.state.lock();
        let s = Self::local_endpoint(&state, source)?;
        let t = Self::endpoint(&state, target)?;
        Ok(state.links.restore_dynamic(&s, &t, weight)?)
    }

    pub fn decay_epoch(&self) -> usize {
        self.inner.state.lock().links.decay_epoch()
    }

    pub fn links(&self) -> Vec<Link> {
        self.inner.state.lock().links.all()
    }

    pub fn links_of(&self, endpoint: &str, kind: Option<LinkKind>) -> Vec<Link> {
        self.inner.state.lock().links.links_of(endpoint, kind)
    }

    pub fn link_weight(&self, source: &str, target: &str) -> Option<f64> {
        self.inner.state.lock().links.weight(source, target)
    }

    pub fn dynamics(&self) -> LinkDynamics {
        self.inner.state.lock().links.dynamics()
    }

    pub fn set_dynamics(&self, dynamics: LinkDynamics) -> Result<(), RegistryError> {
        Ok(self.inner.state.lock().links.set_dynamics(dynamics)?)
    }

    // ------------------------------------------------------------ view

    pub fn view(&self) -> NetworkView {
        let state = self.inner.state.lock();
        fn build(state: &State, parent: Option<&ServicePath>) -> Vec<ServiceView> {
            let mut level: Vec<(&ServicePath, &ServiceRecord)> = state
                .services
                .iter()
                .filter(|(p, _)| p.parent().as_ref() == parent)
                .collect();
            level.sort_by(|a, b| a.0.id().cmp(b.0.id()));
            level
                .into_iter()
                .map(|(p, r)| ServiceView {
                    id: p.id().to_string(),
                    kind: r.kind.clone(),
                    metadata: r.metadata.clone(),
                    children: build(state, Some(p)),
                })
                .collect()
        }
        NetworkView {
            services: build(&state, None),
            links: state.links.all(),
        }
    }

    /// The `<network>` document served at `/meta`.
    pub fn network_view(&self) -> String {
        self.view().to_xml()
    }

    // ------------------------------------------------------------ contracts

    pub fn propose_contract(
        &self,
        target: &ServicePath,
        terms: BTreeMap<String, Value>,
    ) -> Result<Contract, RegistryError> {
        let mut state = self.inner.state.lock();
        if !state.services.contains_key(target) {
            return Err(RegistryError::NoSuchService(target.to_string()));
        }
        let id = format!("c{}", state.next_contract);
        state.next_contract += 1;
        let contract = Contract {
            id: id.clone(),
            target: target.clone(),
            terms,
            state: ContractState::Proposed,
        };
        state.contracts.insert(id, contract.clone());
        Ok(contract)
    }

    pub fn decide_contract(&self, id: &str, verdict: Verdict) -> Result<Contract, RegistryError> {
        let mut state = self.inner.state.lock();
        let c = state
            .contracts
            .get_mut(id)
            .ok_or_else(|| RegistryError::NoSuchContract(id.to_string()))?;
        if c.state != ContractState::Proposed {
            return Err(RegistryError::AlreadyDecided(id.to_string()));
        }
        c.state = match verdict {
            Verdict::Accept => ContractState::Accepted,
            Verdict::Reject => ContractState::Rejected,
        };
        Ok(c.clone())
    }

    /// Decides a proposed contract with the installed policy.
    pub fn reason_contract(&self, id: &str) -> Result<Contract, RegistryError> {
        let (contract, metadata) = {
            let state = self.inner.state.lock();
            let c = state
                .contracts
                .get(id)
                .ok_or_else(|| RegistryError::NoSuchContract(id.to_string()))?;
            if c.state != ContractState::Proposed {
                return Err(RegistryError::AlreadyDecided(id.to_string()));
            }
            let metadata = state
                .services
                .get(&c.target)
                .map(|r| r.metadata.clone())
                .unwrap_or_default();
            (c.clone(), metadata)
        };
        let policy = self.inner.policy.read().clone();
        let verdict = policy.decide(&contract, &metadata);
        self.decide_contract(id, verdict)
    }

    pub fn contract(&self, id: &str) -> Option<Contract> {
        self.inner.state.lock().contracts.get(id).cloned()
    }

    pub fn set_contract_policy(&self, policy: Arc<dyn ContractPolicy>) {
        *self.inner.policy.write() = policy;
    }

    // ------------------------------------------------------------ peers

    pub fn register_peer(&self, url: &str) -> Result<PeerServer, RegistryError> {
        let url = normalize_url(url)?;
        let mut state = self.inner.state.lock();
        if state.peers.contains_key(&url) {
            return Err(RegistryError::DuplicatePeer(url));
        }
        let peer = PeerServer {
            url: url.clone(),
            last_seen: None,
            meta: None,
        };
        state.peers.insert(url, peer.clone());
        Ok(peer)
    }

    /// Pulls the peer's `/meta`. On failure the stale cache is kept.
    pub fn refresh_peer(&self, url: &str) -> Result<PeerServer, RegistryError> {
        let url = normalize_url(url)?;
        if !self.inner.state.lock().peers.contains_key(&url) {
            return Err(RegistryError::NoSuchPeer(url));
        }
        let fetched = self
            .inner
            .http
            .get(&format!("{url}/meta"))
            .ok()
            .filter(|r| r.status == 200)
            .and_then(|r| String::from_utf8(r.body).ok())
            .filter(|text| NetworkView::parse(text).is_ok());
        let mut state = self.inner.state.lock();
        let peer = state
            .peers
            .get_mut(&url)
            .ok_or_else(|| RegistryError::NoSuchPeer(url.clone()))?;
        match fetched {
            Some(meta) => {
                peer.meta = Some(meta);
                peer.last_seen = Some(autonomic::now_millis());
                Ok(peer.clone())
            }
            None => Err(RegistryError::PeerUnreachable(url)),
        }
    }

    pub fn remove_peer(&self, url: &str) -> Result<(), RegistryError> {
        let url = normalize_url(url)?;
        self.inner
            .state
            .lock()
            .peers
            .remove(&url)
            .map(|_| ())
            .ok_or(RegistryError::NoSuchPeer(url))
    }

    pub fn peers(&self) -> Vec<PeerServer> {
        self.inner.state.lock().peers.values().cloned().collect()
    }

    pub fn peer(&self, url: &str) -> Option<PeerServer> {
        let url = normalize_url(url).ok()?;
        self.inner.state.lock().peers.get(&url).cloned()
    }

    // ------------------------------------------------------------ files

    /// Shared file-root table used by the server and file services.
    pub fn file_roots(&self) -> Arc<RwLock<FileRoots>> {
        Arc::clone(&self.inner.file_roots)
    }

    pub fn http(&self) -> &HttpClient {
        &self.inner.http
    }
}

fn no_such_service(path: &ServicePath) -> Fault {
    Fault::new(FaultCode::NoSuchService, format!("no such service {path}"))
}

fn registry_fault(e: RegistryError) -> Fault {
    match e {
        RegistryError::Service(f) => f,
        RegistryError::NoSuchService(_) | RegistryError::Link(LinkError::NoSuchService(_)) => {
            Fault::new(FaultCode::NoSuchService, e.to_string())
        }
        RegistryError::InvalidId(_) | RegistryError::BadUrl(_) => Fault::new(FaultCode::BadArguments, e.to_string()),
        other => Fault::new(FaultCode::ServiceError, other.to_string()),
    }
}

/// Applies manager actions to the owning record.
struct RecordHost {
    registry: Weak<Inner>,
    path: ServicePath,
}

impl ManagerHost for RecordHost {
    fn apply(&self, request: &ChangeRequest) -> Result<(), String> {
        let registry = Registry::upgrade(&self.registry).ok_or("registry dropped")?;
        let text = |key: &str| request.params.get(key).map(Value::to_display_string);
        match request.action.as_str() {
            "adjust-metadata" => {
                let key = text("key").ok_or("adjust-metadata needs a key")?;
                if key == "id" || key == "kind" {
                    return Err(format!("metadata key {key:?} is fixed"));
                }
                let value = text("value").unwrap_or_default();
                registry
                    .set_metadata(&self.path, &key, &value)
                    .map_err(|e| e.to_string())
            }
            "disable-behaviour" => registry
                .set_behaviour_enabled(&self.path, false)
                .map_err(|e| e.to_string()),
            "emit-fault" => {
                let message = text("message").unwrap_or_else(|| "fault emitted by manager".into());
                registry.report_fault(&self.path, &message).map_err(|e| e.to_string())
            }
            other => Err(format!("unsupported action {other:?}")),
        }
    }

    fn fault(&self, event: &Event) {
        if let Some(registry) = Registry::upgrade(&self.registry) {
            registry.deliver_fault(&self.path, event);
        }
    }
}

// ---------------------------------------------------------------- scheduler

/// Handle to the running behaviour loops.
pub struct BehaviourScheduler {
    stop: Arc<AtomicBool>,
    supervisor: Option<JoinHandle<()>>,
}

impl BehaviourScheduler {
    fn start(registry: Registry) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let weak = registry.downgrade();
        drop(registry);
        let flag = Arc::clone(&stop);
        let supervisor = std::thread::Builder::new()
            .name("behaviour-scheduler".into())
            .spawn(move || supervise(weak, flag))
            .expect("spawn behaviour scheduler");
        BehaviourScheduler {
            stop,
            supervisor: Some(supervisor),
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.supervisor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BehaviourScheduler {
    fn drop(&mut self) {
        self.shutdown();
    }
}

const TICK: Duration = Duration::from_millis(5);

fn supervise(registry: Weak<Inner>, stop: Arc<AtomicBool>) {
    let mut workers: BTreeMap<ServicePath, JoinHandle<()>> = BTreeMap::new();
    while !stop.load(Ordering::SeqCst) {
        let Some(reg) = Registry::upgrade(&registry) else {
            break;
        };
        for path in reg.auto_paths() {
            let finished = workers.get(&path).map_or(true, JoinHandle::is_finished);
            if finished {
                let (weak, flag, p) = (registry.clone(), Arc::clone(&stop), path.clone());
                match std::thread::Builder::new()
                    .name(format!("behaviour-{path}"))
                    .spawn(move || behaviour_loop(weak, flag, p))
                {
                    Ok(h) => {
                        workers.insert(path, h);
                    }
                    Err(e) => log::error!("cannot start behaviour loop for {path}: {e}"),
                }
            }
        }
        drop(reg);
        std::thread::sleep(TICK * 2);
    }
    stop.store(true, Ordering::SeqCst);
    for (_, h) in workers {
        let _ = h.join();
    }
}

fn behaviour_loop(registry: Weak<Inner>, stop: Arc<AtomicBool>, path: ServicePath) {
    let mut next = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        let Some(reg) = Registry::upgrade(&registry) else {
            return;
        };
        let spec = match reg.behaviour_of(&path) {
            Some(Some(spec)) => spec,
            _ => return,
        };
        let now = Instant::now();
        if spec.enabled && now >= next {
            if let Err(e) = reg.cycle(&path, true) {
                log::debug!("behaviour {path}: {e}");
            }
            let period = Duration::from_millis(spec.period_ms);
            next += period;
            if next <= Instant::now() {
                // missed ticks are skipped, not replayed
                next = Instant::now() + period;
            }
        } else if !spec.enabled {
            next = now;
        }
        drop(reg);
        let wait = next.saturating_duration_since(Instant::now()).min(TICK);
        std::thread::sleep(wait.max(Duration::from_millis(1)));
    }
}
