//! Intent matching, the emulated device controller and feedback events.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::Checkpoint;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const BUNDLED_REGISTRY: &str = include_str!("../data/registry.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("registry has no intents")]
    Empty,
    #[error("empty device id for intent `{0}`")]
    EmptyDevice(String),
    #[error("device kinds listed for unreferenced device `{0}`")]
    UnknownDevice(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Power {
    On,
    Off,
}

impl Power {
    pub fn as_str(self) -> &'static str {
        match self {
            Power::On => "on",
            Power::Off => "off",
        }
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub device: String,
    pub action: Power,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default)]
    devices: BTreeMap<String, String>,
    intents: BTreeMap<String, CommandSpec>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Intent label to command mapping plus the confidence threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentRegistry {
    threshold: f64,
    intents: BTreeMap<String, CommandSpec>,
    kinds: BTreeMap<String, String>,
}

impl IntentRegistry {
    pub fn parse(json: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_str(json)?;
        if !(0.0..=1.0).contains(&file.threshold) {
            return Err(RegistryError::Threshold(file.threshold));
        }
        if file.intents.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut kinds = BTreeMap::new();
        for (label, cmd) in &file.intents {
            if cmd.device.trim().is_empty() {
                return Err(RegistryError::EmptyDevice(label.clone()));
            }
            let kind = file
                .devices
                .get(&cmd.device)
                .cloned()
                .unwrap_or_else(|| cmd.device.clone());
            kinds.insert(cmd.device.clone(), kind);
        }
        if let Some(extra) = file.devices.keys().find(|d| !kinds.contains_key(*d)) {
            return Err(RegistryError::UnknownDevice(extra.clone()));
        }
        Ok(Self {
            threshold: file.threshold,
            intents: file.intents,
            kinds,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// The registry shipped with the bundled corpus: 14 on/off intents over
    /// seven devices.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_REGISTRY).expect("bundled registry is valid")
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, RegistryError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(RegistryError::Threshold(threshold));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn get(&self, label: &str) -> Option<&CommandSpec> {
        self.intents.get(label)
    }

    pub fn intents(&self) -> impl Iterator<Item = (&str, &CommandSpec)> {
        self.intents.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Device id to kind for every device the registry references.
    pub fn devices(&self) -> impl Iterator<Item = (&str, &str)> {
        self.kinds.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub device_id: String,
    pub kind: String,
    pub state: Power,
    /// Milliseconds since the Unix epoch; `None` until the first change.
    pub last_changed: Option<u64>,
}

/// Simulated appliances, all off initially.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceStore {
    devices: BTreeMap<String, Device>,
}

impl DeviceStore {
    pub fn from_registry(reg: &IntentRegistry) -> Self {
        let devices = reg
            .devices()
            .map(|(id, kind)| {
                let dev = Device {
                    device_id: id.to_owned(),
                    kind: kind.to_owned(),
                    state: Power::Off,
                    last_changed: None,
                };
                (id.to_owned(), dev)
            })
            .collect();
        Self { devices }
    }

    pub fn get(&self, id: &str) -> Option<&Device> {
        self.devices.get(id)
    }

    pub fn state(&self, id: &str) -> Option<Power> {
        self.get(id).map(|d| d.state)
    }

    /// Devices ordered by id.
    pub fn snapshot(&self) -> Vec<Device> {
        self.devices.values().cloned().collect()
    }

    pub fn remove_device(&mut self, id: &str) -> Option<Device> {
        self.devices.remove(id)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Executed,
    Unrecognized,
    RejectedLowConfidence,
    Error,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Executed => "executed",
            Outcome::Unrecognized => "unrecognized",
            Outcome::RejectedLowConfidence => "rejected_low_confidence",
            Outcome::Error => "error",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub sequence_no: u64,
    pub instruction: String,
    /// Classified label; `None` when nothing could be classified.
    pub intent: Option<String>,
    pub confidence: f64,
    pub outcome: Outcome,
    pub device_id: Option<String>,
    /// State after execution, present only for executed events.
    pub device_state: Option<Power>,
    pub message: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchResult {
    Matched(CommandSpec),
    RejectedLowConfidence,
    Unrecognized,
}

/// Threshold first, then exact label lookup.
pub fn match_intent(label: &str, confidence: f64, reg: &IntentRegistry) -> MatchResult {
    if confidence < reg.threshold() {
        return MatchResult::RejectedLowConfidence;
    }
    match reg.get(label) {
        Some(cmd) => MatchResult::Matched(cmd.clone()),
        None => MatchResult::Unrecognized,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outcome: Outcome,
    pub device_id: String,
    pub device_state: Option<Power>,
    pub message: String,
}

/// Drives a device to `cmd.action`. Repeating a command succeeds without a
/// state change. An unknown device yields an `Error` outcome.
pub fn execute(cmd: &CommandSpec, store: &mut DeviceStore, now_ms: u64) -> Execution {
    let Some(dev) = store.devices.get_mut(&cmd.device) else {
        return Execution {
            outcome: Outcome::Error,
            device_id: cmd.device.clone(),
            device_state: None,
            message: format!("unknown device `{}`", cmd.device),
        };
    };
    let message = if dev.state == cmd.action {
        format!("{} already {}", dev.device_id, cmd.action)
    } else {
        dev.state = cmd.action;
        dev.last_changed = Some(now_ms);
        format!("{} turned {}", dev.device_id, cmd.action)
    };
    Execution {
        outcome: Outcome::Executed,
        device_id: dev.device_id.clone(),
        device_state: Some(dev.state),
        message,
    }
}

/// Event fields other than sequence number and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub intent: Option<String>,
    pub confidence: f64,
    pub outcome: Outcome,
    pub device_id: Option<String>,
    pub device_state: Option<Power>,
    pub message: String,
    /// The classifier itself failed, as opposed to a dispatch-level outcome.
    pub classification_failed: bool,
}

/// What the classifier made of an instruction.
#[derive(Debug, Clone, PartialEq)]
pub enum Classified {
    Label {
        label: String,
        confidence: f64,
    },
    /// No in-vocabulary token survived preprocessing.
    NoKnownWords {
        empty: bool,
    },
    Failed(String),
}

/// Inference only; never touches device state.
pub fn classify_instruction(text: &str, checkpoint: &Checkpoint) -> Classified {
    match checkpoint.classify(text) {
        Err(e) => Classified::Failed(e.to_string()),
        Ok(c) if c.known_tokens == 0 => Classified::NoKnownWords {
            empty: crate::textprep::tokenize(text).is_empty(),
        },
        Ok(c) => Classified::Label {
            label: c.label,
            confidence: c.confidence,
        },
    }
}

/// Applies a classification to `store`. The store changes only for
/// `Executed`.
pub fn decide(
    classified: &Classified,
    reg: &IntentRegistry,
    store: &mut DeviceStore,
    now_ms: u64,
) -> Decision {
    let blank = |outcome, message: String| Decision {
        intent: None,
        confidence: 0.0,
        outcome,
        device_id: None,
        device_state: None,
        message,
        classification_failed: false,
    };
    let (label, confidence) = match classified {
        Classified::Failed(e) => {
            return Decision {
                classification_failed: true,
                ..blank(Outcome::Error, format!("classification failed: {e}"))
            }
        }
        Classified::NoKnownWords { empty: true } => {
            return blank(
                Outcome::Unrecognized,
                "no instruction words left after preprocessing".into(),
            )
        }
        Classified::NoKnownWords { empty: false } => {
            return blank(
                Outcome::Unrecognized,
                "none of the words are known to the model".into(),
            )
        }
        Classified::Label { label, confidence } => (label, *confidence),
    };
    let base = Decision {
        intent: Some(label.clone()),
        confidence,
        ..blank(Outcome::Unrecognized, String::new())
    };
    match match_intent(label, confidence, reg) {
        MatchResult::RejectedLowConfidence => Decision {
            outcome: Outcome::RejectedLowConfidence,
            message: format!(
                "confidence {:.2} for {} is below the threshold {:.2}",
                confidence,
                label,
                reg.threshold()
            ),
            ..base
        },
        MatchResult::Unrecognized => Decision {
            message: format!("intent {label} has no registered command"),
            ..base
        },
        MatchResult::Matched(cmd) => {
            let ex = execute(&cmd, store, now_ms);
            Decision {
                outcome: ex.outcome,
                device_id: Some(ex.device_id),
                device_state: ex.device_state,
                message: ex.message,
                ..base
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event log line {line}: sequence number {found} does not follow {previous}")]
    Sequence {
        line: usize,
        previous: u64,
        found: u64,
    },
}

/// Append-only JSON Lines file of feedback events.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EventLogError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &FeedbackEvent) -> Result<(), EventLogError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads a log, checking that sequence numbers increase by one.
pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<FeedbackEvent>, EventLogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events: Vec<FeedbackEvent> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: FeedbackEvent = serde_json::from_str(&line).map_err(|e| EventLogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = events.last() {
            if ev.sequence_no != prev.sequence_no + 1 {
                return Err(EventLogError::Sequence {
                    line: i + 1,
                    previous: prev.sequence_no,
                    found: ev.sequence_no,
                });
            }
        }
        events.push(ev);
    }
    Ok(events)
}

/// Applies the executed events to `store`. Devices missing from the store
/// are skipped, matching what `execute` would have reported.
pub fn replay<'a>(events: impl IntoIterator<Item = &'a FeedbackEvent>, store: &mut DeviceStore) {
    for ev in events {
        if ev.outcome != Outcome::Executed {
            continue;
        }
        let (Some(id), Some(state)) = (&ev.device_id, ev.device_state) else {
            continue;
        };
        if let Some(dev) = store.devices.get_mut(id) {
            if dev.state != state {
                dev.state = state;
                dev.last_changed = Some(ev.timestamp);
            }
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub type Clock = Box<dyn FnMut() -> u64 + Send>;

/// Serialized owner of the device store: numbers events, writes them to the
/// log, then commits them.
pub struct Controller {
    registry: IntentRegistry,
    store: DeviceStore,
    events: Vec<FeedbackEvent>,
    log: Option<EventLog>,
    clock: Clock,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("registry", &self.registry)
            .field("store", &self.store)
            .field("events", &self.events.len())
            .field("log", &self.log)
            .finish()
    }
}

/// Result of handling one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Handled {
    pub event: FeedbackEvent,
    pub classification_failed: bool,
}

impl Controller {
    pub fn new(registry: IntentRegistry) -> Self {
        let store = DeviceStore::from_registry(&registry);
        Self {
            registry,
            store,
            events: Vec::new(),
            log: None,
            clock: Box::new(now_ms),
        }
    }

    /// Attaches an event log. Events already in the file are replayed so the
    /// store and the sequence numbering continue where the log left off.
    pub fn with_log(mut self, path: impl AsRef<Path>) -> Result<Self, EventLogError> {
        let path = path.as_ref();
        if path.exists() {
            let previous = read_event_log(path)?;
            replay(&previous, &mut self.store);
            self.events = previous;
        }
        self.log = Some(EventLog::open(path)?);
        Ok(self)
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn registry(&self) -> &IntentRegistry {
        &self.registry
    }

    pub fn store(&self) -> &DeviceStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut DeviceStore {
        &mut self.store
    }

    pub fn events(&self) -> &[FeedbackEvent] {
        &self.events
    }

    pub fn last_sequence_no(&self) -> u64 {
        self.events.last().map_or(0, |e| e.sequence_no)
    }

    /// Events with `sequence_no > since`, in order.
    pub fn events_since(&self, since: u64) -> &[FeedbackEvent] {
        let start = self.events.partition_point(|e| e.sequence_no <= since);
        &self.events[start..]
    }

    /// Runs the full pipeline for one instruction. If the log write fails,
    /// nothing is committed and the error is returned.
    pub fn handle_instruction(
        &mut self,
        text: &str,
        checkpoint: &Checkpoint,
    ) -> Result<Handled, EventLogError> {
        let classified = classify_instruction(text, checkpoint);
        self.apply(text, &classified)
    }

    /// The serialized half of [`Controller::handle_instruction`], for callers
    /// that classify outside the controller.
    pub fn apply(&mut self, text: &str, classified: &Classified) -> Result<Handled, EventLogError> {
        let now = (self.clock)();
        let mut next_store = self.store.clone();
        let d = decide(classified, &self.registry, &mut next_store, now);
        let event = FeedbackEvent {
            sequence_no: self.last_sequence_no() + 1,
            instruction: text.to_owned(),
            intent: d.intent,
            confidence: d.confidence,
            outcome: d.outcome,
            device_id: d.device_id,
            device_state: d.device_state,
            message: d.message,
            timestamp: now,
        };
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.store = next_store;
        self.events.push(event.clone());
        Ok(Handled {
            event,
            classification_failed: d.classification_failed,
        })
    }
}
