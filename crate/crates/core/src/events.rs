//! Events shared by the runtime (monitoring) and the field.

use std::collections::BTreeMap;
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    /// Sensors, partner reports and other observations of the real world.
    Field,
    /// Emitted by the workflow engine.
    Monitoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub source: EventSource,
    #[serde(rename = "type")]
    pub kind: String,
    pub subject: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
    pub timestamp: u64,
}

impl Event {
    pub fn new(id: impl Into<String>, source: EventSource, kind: impl Into<String>, subject: impl Into<String>, timestamp: u64) -> Self {
        Self { id: id.into(), source, kind: kind.into(), subject: subject.into(), attributes: BTreeMap::new(), timestamp }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).and_then(Value::as_str)
    }
}

/// Reads newline-delimited JSON events; blank lines and `#` comments are
/// skipped.
pub fn parse_event_log(text: &str) -> Result<Vec<Event>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_event_log(events: &[Event]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}

/// Receiver of emitted events.
pub trait EventSink: Send + Sync {
    fn emit(&self, e: Event);
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: Event) {}
}

impl EventSink for Mutex<Vec<Event>> {
    fn emit(&self, e: Event) {
        self.lock().expect("sink poisoned").push(e);
    }
}

impl EventSink for mpsc::Sender<Event> {
    fn emit(&self, e: Event) {
        // a dropped receiver only means nobody is listening
        let _ = self.send(e);
    }
}
