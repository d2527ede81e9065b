//! In-process service bus: mock, HTTP and human-task endpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::matching::{Endpoint, MockValue, ServiceDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub seq: u64,
    pub instance: String,
    pub node: String,
    pub service: String,
    /// Digest of the input payload.
    pub payload_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Output(Map<String, Value>),
    /// Waits for a person; carries the input to show them.
    Human(Map<String, Value>),
}

pub struct ServiceBus {
    services: BTreeMap<String, ServiceDescriptor>,
    faults: RwLock<BTreeSet<String>>,
    log: Mutex<Vec<Invocation>>,
}

pub fn payload_hash(v: &Map<String, Value>) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(v).expect("payload serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ServiceBus {
    pub fn new(services: impl IntoIterator<Item = ServiceDescriptor>) -> Self {
        Self {
            services: services.into_iter().map(|s| (s.id.clone(), s)).collect(),
            faults: RwLock::new(BTreeSet::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn service(&self, id: &str) -> Option<&ServiceDescriptor> {
        self.services.get(id)
    }

    pub fn is_registered(&self, id: &str) -> bool {
        self.services.contains_key(id)
    }

    /// Makes a service fail from now on (or recover).
    pub fn set_fault(&self, id: &str, faulty: bool) {
        let mut f = self.faults.write().expect("fault set poisoned");
        if faulty {
            f.insert(id.to_string());
        } else {
            f.remove(id);
        }
    }

    pub fn invocations(&self) -> Vec<Invocation> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("log poisoned").clear();
    }

    /// Calls a service. Human endpoints return immediately with
    /// [`Outcome::Human`]; they are not logged as invocations.
    pub fn invoke(&self, instance: &str, node: &str, service: &str, input: &Map<String, Value>) -> Result<Outcome, String> {
        let svc = self.services.get(service).ok_or_else(|| format!("service `{service}` is not registered"))?;
        if matches!(svc.endpoint, Endpoint::Human) {
            return Ok(Outcome::Human(input.clone()));
        }
        {
            let mut log = self.log.lock().expect("log poisoned");
            let seq = log.len() as u64;
            log.push(Invocation {
                seq,
                instance: instance.to_string(),
                node: node.to_string(),
                service: service.to_string(),
                payload_hash: payload_hash(input),
            });
        }
        if self.faults.read().expect("fault set poisoned").contains(service) {
            return Err(format!("service `{service}` is unavailable"));
        }
        match &svc.endpoint {
            Endpoint::Mock(m) => {
                if m.delay_ms > 0 {
                    std::thread::sleep(Duration::from_millis(m.delay_ms));
                }
                if m.fault {
                    return Err(format!("service `{service}` faulted"));
                }
                let mut out = Map::new();
                for f in &svc.outputs {
                    let v = match m.outputs.get(&f.name) {
                        Some(MockValue::Const(v)) => v.clone(),
                        Some(MockValue::From { from }) => {
                            input.get(from).cloned().ok_or_else(|| format!("mock `{service}`: input `{from}` missing"))?
                        }
                        None => Value::String(format!("{service}:{}", f.name)),
                    };
                    out.insert(f.name.clone(), v);
                }
                Ok(Outcome::Output(out))
            }
            Endpoint::Http { url } => http_call(url, input).map(Outcome::Output),
            Endpoint::External => Err(format!("service `{service}` has no concrete endpoint")),
            Endpoint::Human => unreachable!("handled above"),
        }
    }
}

#[cfg(feature = "http")]
fn http_call(url: &str, input: &Map<String, Value>) -> Result<Map<String, Value>, String> {
    let mut resp = ureq::post(url).send_json(input).map_err(|e| format!("{url}: {e}"))?;
    let v: Value = resp.body_mut().read_json().map_err(|e| format!("{url}: {e}"))?;
    match v {
        Value::Object(m) => Ok(m),
        other => Err(format!("{url}: expected an object, got {other}")),
    }
}

#[cfg(not(feature = "http"))]
fn http_call(url: &str, _: &Map<String, Value>) -> Result<Map<String, Value>, String> {
    Err(format!("{url}: built without HTTP support"))
}
