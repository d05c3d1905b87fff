//! Per-service autonomic manager.
//!
//! Events arrive through the message interface ([`AutonomicManager::submit_event`]
//! synchronously, or [`AutonomicManager::post`] through the manager's queue)
//! and flow Monitor -> Analyze -> Plan -> Execute. Every slot starts empty and
//! an empty slot forwards its input unchanged. The datum passed between
//! stages is a plain [`Value`]; a stage that yields `null` ends the pipeline
//! with no action.
//!
//! Plan must yield change requests (`{action, params}` maps). Without a Plan
//! or an Execute slot nothing is ever applied. Execute output is filtered
//! against [`ALLOWED_ACTIONS`] and handed to the manager's host.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};

use crate::wire::Value;

pub const DEFAULT_LOG_CAPACITY: usize = 1024;

/// Actions the Execute stage may apply.
pub const ALLOWED_ACTIONS: [&str; 3] = ["adjust-metadata", "disable-behaviour", "emit-fault"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Monitor,
    Analyze,
    Plan,
    Execute,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Monitor, Stage::Analyze, Stage::Plan, Stage::Execute];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Monitor => "monitor",
            Stage::Analyze => "analyze",
            Stage::Plan => "plan",
            Stage::Execute => "execute",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = AutonomicError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monitor" => Ok(Stage::Monitor),
            "analyze" | "analyse" => Ok(Stage::Analyze),
            "plan" => Ok(Stage::Plan),
            "execute" => Ok(Stage::Execute),
            other => Err(AutonomicError::BadStage(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    BehaviourResult,
    Fault,
    Custom(String),
}

impl EventKind {
    pub fn as_str(&self) -> &str {
        match self {
            EventKind::BehaviourResult => "behaviourResult",
            EventKind::Fault => "fault",
            EventKind::Custom(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub source: String,
    pub kind: EventKind,
    pub payload: Value,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl Event {
    pub fn new(source: impl Into<String>, kind: EventKind, payload: Value) -> Self {
        Event {
            source: source.into(),
            kind,
            payload,
            timestamp: now_millis(),
        }
    }

    pub fn fault(source: impl Into<String>, message: impl Into<String>) -> Self {
        Event::new(source, EventKind::Fault, Value::Text(message.into()))
    }

    pub fn to_value(&self) -> Value {
        let mut m = BTreeMap::new();
        m.insert("source".to_string(), Value::Text(self.source.clone()));
        m.insert("kind".to_string(), Value::Text(self.kind.as_str().to_string()));
        m.insert("payload".to_string(), self.payload.clone());
        m.insert("timestamp".to_string(), Value::Int(self.timestamp as i64));
        Value::Map(m)
    }
}

pub(crate) fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRequest {
    pub action: String,
    pub params: BTreeMap<String, Value>,
}

impl ChangeRequest {
    pub fn new(action: impl Into<String>) -> Self {
        ChangeRequest {
            action: action.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn to_value(&self) -> Value {
        let mut m = BTreeMap::new();
        m.insert("action".to_string(), Value::Text(self.action.clone()));
        m.insert("params".to_string(), Value::Map(self.params.clone()));
        Value::Map(m)
    }

    pub fn from_value(v: &Value) -> Option<ChangeRequest> {
        let Value::Map(m) = v else { return None };
        let action = m.get("action")?.as_str()?;
        if action.is_empty() {
            return None;
        }
        let params = match m.get("params") {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(Value::Map(p)) => p.clone(),
            Some(_) => return None,
        };
        Some(ChangeRequest {
            action: action.to_string(),
            params,
        })
    }

    /// Accepts a single request map or a list of them.
    pub fn list_from_value(v: &Value) -> Option<Vec<ChangeRequest>> {
        match v {
            Value::List(items) => items.iter().map(ChangeRequest::from_value).collect(),
            single => ChangeRequest::from_value(single).map(|r| vec![r]),
        }
    }

    pub fn list_to_value(reqs: &[ChangeRequest]) -> Value {
        Value::List(reqs.iter().map(ChangeRequest::to_value).collect())
    }
}

/// One MAPE stage implementation.
pub trait Slot: Send + Sync {
    fn process(&self, input: &Value) -> Result<Value, String>;

    /// Declarative description for config persistence; `None` for slots
    /// that only exist in code.
    fn describe(&self) -> Option<SlotSpec> {
        None
    }
}

impl<F> Slot for F
where
    F: Fn(&Value) -> Result<Value, String> + Send + Sync,
{
    fn process(&self, input: &Value) -> Result<Value, String> {
        self(input)
    }
}

/// Receives the effects of a manager: applied actions and faults.
pub trait ManagerHost: Send + Sync {
    fn apply(&self, request: &ChangeRequest) -> Result<(), String>;
    fn fault(&self, event: &Event);
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutonomicError {
    #[error("slot {stage} failed: {message}")]
    SlotError { stage: Stage, message: String },
    #[error("unknown stage {0:?}")]
    BadStage(String),
    #[error("bad slot configuration: {0}")]
    BadSlot(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutcome {
    /// Output of each slot that ran, in stage order.
    pub trace: Vec<(Stage, Value)>,
    pub planned: Vec<ChangeRequest>,
    pub applied: Vec<ChangeRequest>,
    /// Requests outside the action vocabulary or refused by the host.
    pub rejected: Vec<ChangeRequest>,
}

impl PipelineOutcome {
    pub fn is_no_action(&self) -> bool {
        self.applied.is_empty()
    }
}

struct Core {
    slots: RwLock<[Option<Arc<dyn Slot>>; 4]>,
    log: Mutex<VecDeque<Event>>,
    capacity: usize,
    last_timestamp: Mutex<u64>,
    host: RwLock<Option<Arc<dyn ManagerHost>>>,
    pipeline: Mutex<()>,
    pending: AtomicUsize,
}

pub struct AutonomicManager {
    owner: String,
    core: Arc<Core>,
    queue: Mutex<Option<mpsc::Sender<Event>>>,
}

impl fmt::Debug for AutonomicManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AutonomicManager")
            .field("owner", &self.owner)
            .field("slots", &self.installed())
            .field("log_len", &self.log_len())
            .finish()
    }
}

impl AutonomicManager {
    pub fn new(owner: impl Into<String>) -> Self {
        Self::with_capacity(owner, DEFAULT_LOG_CAPACITY)
    }

    pub fn with_capacity(owner: impl Into<String>, capacity: usize) -> Self {
        AutonomicManager {
            owner: owner.into(),
            core: Arc::new(Core {
                slots: RwLock::new([None, None, None, None]),
                log: Mutex::new(VecDeque::new()),
                capacity: capacity.max(1),
                last_timestamp: Mutex::new(0),
                host: RwLock::new(None),
                pipeline: Mutex::new(()),
                pending: AtomicUsize::new(0),
            }),
            queue: Mutex::new(None),
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn set_host(&self, host: Arc<dyn ManagerHost>) {
        *self.core.host.write() = Some(host);
    }

    pub fn install_slot(&self, stage: Stage, slot: Arc<dyn Slot>) {
        self.core.slots.write()[stage.index()] = Some(slot);
    }

    /// Stage given by name, as config scripts do.
    pub fn install_slot_named(&self, stage: &str, slot: Arc<dyn Slot>) -> Result<(), AutonomicError> {
        self.install_slot(stage.parse()?, slot);
        Ok(())
    }

    pub fn clear_slot(&self, stage: Stage) {
        self.core.slots.write()[stage.index()] = None;
    }

    pub fn clear_slot_named(&self, stage: &str) -> Result<(), AutonomicError> {
        self.clear_slot(stage.parse()?);
        Ok(())
    }

    pub fn installed(&self) -> Vec<Stage> {
        let slots = self.core.slots.read();
        Stage::ALL.into_iter().filter(|s| slots[s.index()].is_some()).collect()
    }

    pub fn slot_specs(&self) -> Vec<(Stage, SlotSpec)> {
        let slots = self.core.slots.read();
        Stage::ALL
            .into_iter()
            .filter_map(|s| {
                slots[s.index()]
                    .as_ref()
                    .and_then(|slot| slot.describe())
                    .map(|spec| (s, spec))
            })
            .collect()
    }

    pub fn log(&self) -> Vec<Event> {
        self.core.log.lock().iter().cloned().collect()
    }

    pub fn log_len(&self) -> usize {
        self.core.log.lock().len()
    }

    pub fn capacity(&self) -> usize {
        self.core.capacity
    }

    /// Runs one event through the pipeline on the calling thread.
    pub fn submit_event(&self, event: Event) -> Result<PipelineOutcome, AutonomicError> {
        self.core.submit(event)
    }

    /// Enqueues an event for the manager's own worker thread.
    pub fn post(&self, event: Event) {
        let mut queue = self.queue.lock();
        if queue.is_none() {
            let (tx, rx) = mpsc::channel::<Event>();
            let core = Arc::clone(&self.core);
            let spawned = std::thread::Builder::new()
                .name(format!("autonomic-{}", self.owner))
                .spawn(move || {
                    for event in rx {
                        if let Err(e) = core.submit(event) {
                            log::debug!("autonomic pipeline: {e}");
                        }
                        core.pending.fetch_sub(1, Ordering::SeqCst);
                    }
                });
            if let Err(e) = spawned {
                log::error!("cannot start autonomic worker: {e}");
                drop(queue);
                let _ = self.core.submit(event);
                return;
            }
            *queue = Some(tx);
        }
        self.core.pending.fetch_add(1, Ordering::SeqCst);
        if let Some(tx) = queue.as_ref() {
            if let Err(mpsc::SendError(event)) = tx.send(event) {
                self.core.pending.fetch_sub(1, Ordering::SeqCst);
                *queue = None;
                drop(queue);
                let _ = self.core.submit(event);
            }
        }
    }

    /// Number of posted events not yet processed.
    pub fn pending(&self) -> usize {
        self.core.pending.load(Ordering::SeqCst)
    }

    /// Blocks until the queue drains or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.pending() > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    /// Logs a fault and forwards it to the host (service and server).
    pub fn report_fault(&self, mut fault: Event) {
        fault.kind = EventKind::Fault;
        let fault = self.core.append(fault);
        let host = self.core.host.read().clone();
        if let Some(host) = host {
            host.fault(&fault);
        }
    }
}

impl Core {
    fn append(&self, mut event: Event) -> Event {
        {
            let mut last = self.last_timestamp.lock();
            event.timestamp = event.timestamp.max(*last);
            *last = event.timestamp;
        }
        let mut log = self.log.lock();
        if log.len() >= self.capacity {
            log.pop_front();
        }
        log.push_back(event.clone());
        event
    }

    fn submit(&self, event: Event) -> Result<PipelineOutcome, AutonomicError> {
        let _serial = self.pipeline.lock();
        let event = self.append(event);
        let slots = self.slots.read().clone();
        let mut outcome = PipelineOutcome::default();
        let mut datum = event.to_value();

        for stage in [Stage::Monitor, Stage::Analyze] {
            if let Some(slot) = &slots[stage.index()] {
                datum = self.run_slot(stage, slot.as_ref(), &datum, &event)?;
                outcome.trace.push((stage, datum.clone()));
                if datum == Value::Null {
                    return Ok(outcome);
                }
            }
        }

        let Some(plan) = &slots[Stage::Plan.index()] else {
            return Ok(outcome);
        };
        let planned = self.run_slot(Stage::Plan, plan.as_ref(), &datum, &event)?;
        outcome.trace.push((Stage::Plan, planned.clone()));
        if planned == Value::Null {
            return Ok(outcome);
        }
        outcome.planned = ChangeRequest::list_from_value(&planned)
            .ok_or_else(|| self.slot_failed(Stage::Plan, "plan output is not a list of change requests", &event))?;

        let Some(execute) = &slots[Stage::Execute.index()] else {
            return Ok(outcome);
        };
        let input = ChangeRequest::list_to_value(&outcome.planned);
        let chosen = self.run_slot(Stage::Execute, execute.as_ref(), &input, &event)?;
        outcome.trace.push((Stage::Execute, chosen.clone()));
        let chosen = match chosen {
            Value::Null => Vec::new(),
            other => ChangeRequest::list_from_value(&other).ok_or_else(|| {
                self.slot_failed(
                    Stage::Execute,
                    "execute output is not a list of change requests",
                    &event,
                )
            })?,
        };
        let host = self.host.read().clone();
        for request in chosen {
            if !ALLOWED_ACTIONS.contains(&request.action.as_str()) {
                outcome.rejected.push(request);
                continue;
            }
            match &host {
                Some(h) => match h.apply(&request) {
                    Ok(()) => outcome.applied.push(request),
                    Err(e) => {
                        self.append(Event::fault(
                            &event.source,
                            format!("action {} refused: {e}", request.action),
                        ));
                        outcome.rejected.push(request);
                    }
                },
                None => outcome.applied.push(request),
            }
        }
        Ok(outcome)
    }

    fn run_slot(&self, stage: Stage, slot: &dyn Slot, input: &Value, event: &Event) -> Result<Value, AutonomicError> {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| slot.process(input)));
        match result {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(message)) => Err(self.slot_failed(stage, &message, event)),
            Err(_) => Err(self.slot_failed(stage, "slot panicked", event)),
        }
    }

    fn slot_failed(&self, stage: Stage, message: &str, event: &Event) -> AutonomicError {
        self.append(Event::fault(&event.source, format!("{stage} slot failed: {message}")));
        AutonomicError::SlotError {
            stage,
            message: message.to_string(),
        }
    }
}

// ---------------------------------------------------------------- built-in slots

/// Declarative slot: `<monitor type="threshold" key="value" limit="10"/>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub kind: String,
    pub attrs: BTreeMap<String, String>,
}

impl SlotSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        SlotSpec {
            kind: kind.into(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    fn number(&self, key: &str) -> Result<f64, AutonomicError> {
        let raw = self
            .get(key)
            .ok_or_else(|| AutonomicError::BadSlot(format!("{} needs {key}", self.kind)))?;
        raw.parse()
            .map_err(|_| AutonomicError::BadSlot(format!("{key}={raw:?} is not a number")))
    }

    /// Builds the slot this spec describes.
    pub fn build(&self) -> Result<Arc<dyn Slot>, AutonomicError> {
        let key = self.get("key").unwrap_or("value").to_string();
        Ok(match self.kind.as_str() {
            "threshold" => Arc::new(ThresholdMonitor {
                key,
                limit: self.number("limit")?,
            }),
            "mean-drift" => {
                let window = self.number("window")?;
                if window < 1.0 || window.fract() != 0.0 {
                    return Err(AutonomicError::BadSlot("window must be a positive integer".into()));
                }
                Arc::new(MeanDriftAnalyzer::new(key, window as usize, self.number("tolerance")?))
            }
            "rule" => {
                let action = self
                    .get("action")
                    .filter(|a| !a.is_empty())
                    .ok_or_else(|| AutonomicError::BadSlot("rule needs action".into()))?;
                let params = self
                    .attrs
                    .iter()
                    .filter_map(|(k, v)| {
                        k.strip_prefix("param-")
                            .map(|p| (p.to_string(), Value::Text(v.clone())))
                    })
                    .collect();
                Arc::new(RulePlan {
                    when: self.get("when").map(str::to_string),
                    request: ChangeRequest {
                        action: action.to_string(),
                        params,
                    },
                })
            }
            "whitelist" => {
                let allow = match self.get("allow") {
                    Some(list) => list
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                    None => ALLOWED_ACTIONS.iter().map(|s| s.to_string()).collect(),
                };
                Arc::new(WhitelistExecutor { allow })
            }
            other => return Err(AutonomicError::BadSlot(format!("unknown slot type {other:?}"))),
        })
    }
}

/// Pulls a number out of an event, an observation or a bare value.
fn extract_number(v: &Value, key: &str) -> Option<f64> {
    match v {
        Value::Int(_) | Value::Real(_) => v.as_f64(),
        Value::Text(t) => t.trim().parse().ok(),
        Value::Map(m) => [key, "value", "payload"]
            .iter()
            .find_map(|k| m.get(*k).and_then(|inner| extract_number(inner, key))),
        _ => None,
    }
}

/// Emits a `threshold` symptom when the observed number exceeds `limit`.
#[derive(Debug, Clone)]
pub struct ThresholdMonitor {
    pub key: String,
    pub limit: f64,
}

impl Slot for ThresholdMonitor {
    fn process(&self, input: &Value) -> Result<Value, String> {
        match extract_number(input, &self.key) {
            Some(value) if value > self.limit => {
                let mut m = BTreeMap::new();
                m.insert("symptom".to_string(), Value::text("threshold"));
                m.insert("key".to_string(), Value::Text(self.key.clone()));
                m.insert("value".to_string(), Value::Real(value));
                m.insert("limit".to_string(), Value::Real(self.limit));
                Ok(Value::Map(m))
            }
            _ => Ok(Value::Null),
        }
    }

    fn describe(&self) -> Option<SlotSpec> {
        Some(
            SlotSpec::new("threshold")
                .attr("key", &self.key)
                .attr("limit", crate::wire::format_real(self.limit)),
        )
    }
}

/// Compares the mean of the latest `window` values against the mean of the
/// first `window` values seen and reports a `drift` symptom past `tolerance`.
pub struct MeanDriftAnalyzer {
    key: String,
    window: usize,
    tolerance: f64,
    state: Mutex<DriftState>,
}

#[derive(Default)]
struct DriftState {
    baseline: Vec<f64>,
    recent: VecDeque<f64>,
}

impl MeanDriftAnalyzer {
    pub fn new(key: impl Into<String>, window: usize, tolerance: f64) -> Self {
        MeanDriftAnalyzer {
            key: key.into(),
            window: window.max(1),
            tolerance,
            state: Mutex::new(DriftState::default()),
        }
    }
}

impl Slot for MeanDriftAnalyzer {
    fn process(&self, input: &Value) -> Result<Value, String> {
        let Some(value) = extract_number(input, &self.key) else {
            return Ok(Value::Null);
        };
        let mut state = self.state.lock();
        if state.baseline.len() < self.window {
            state.baseline.push(value);
            return Ok(Value::Null);
        }
        state.recent.push_back(value);
        if state.recent.len() > self.window {
            state.recent.pop_front();
        }
        if state.recent.len() < self.window {
            return Ok(Value::Null);
        }
        let baseline = state.baseline.iter().sum::<f64>() / self.window as f64;
        let mean = state.recent.iter().sum::<f64>() / self.window as f64;
        if (mean - baseline).abs() > self.tolerance {
            let mut m = BTreeMap::new();
            m.insert("symptom".to_string(), Value::text("drift"));
            m.insert("baseline".to_string(), Value::Real(baseline));
            m.insert("value".to_string(), Value::Real(mean));
            Ok(Value::Map(m))
        } else {
            Ok(Value::Null)
        }
    }

    fn describe(&self) -> Option<SlotSpec> {
        Some(
            SlotSpec::new("mean-drift")
                .attr("key", &self.key)
                .attr("window", self.window.to_string())
                .attr("tolerance", crate::wire::format_real(self.tolerance)),
        )
    }
}

/// Turns a matching symptom into one fixed change request.
#[derive(Debug, Clone)]
pub struct RulePlan {
    pub when: Option<String>,
    pub request: ChangeRequest,
}

impl Slot for RulePlan {
    fn process(&self, input: &Value) -> Result<Value, String> {
        let symptom = match input {
            Value::Map(m) => m.get("symptom").and_then(Value::as_str),
            _ => None,
        };
        let fires = match &self.when {
            None => true,
            Some(w) => symptom == Some(w.as_str()),
        };
        Ok(if fires {
            ChangeRequest::list_to_value(std::slice::from_ref(&self.request))
        } else {
            Value::Null
        })
    }

    fn describe(&self) -> Option<SlotSpec> {
        let mut spec = SlotSpec::new("rule").attr("action", &self.request.action);
        if let Some(w) = &self.when {
            spec = spec.attr("when", w);
        }
        for (k, v) in &self.request.params {
            let text = match v {
                Value::Text(t) => t.clone(),
                other => other.to_display_string(),
            };
            spec = spec.attr(format!("param-{k}"), text);
        }
        Some(spec)
    }
}

/// Passes through only the listed actions.
#[derive(Debug, Clone)]
pub struct WhitelistExecutor {
    pub allow: BTreeSet<String>,
}

impl Slot for WhitelistExecutor {
    fn process(&self, input: &Value) -> Result<Value, String> {
        let requests = ChangeRequest::list_from_value(input).ok_or("expected change requests")?;
        let kept: Vec<ChangeRequest> = requests
            .into_iter()
            .filter(|r| self.allow.contains(&r.action))
            .collect();
        Ok(ChangeRequest::list_to_value(&kept))
    }

    fn describe(&self) -> Option<SlotSpec> {
        let allow: Vec<&str> = self.allow.iter().map(String::as_str).collect();
        Some(SlotSpec::new("whitelist").attr("allow", allow.join(",")))
    }
}
