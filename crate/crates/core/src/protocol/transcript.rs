use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::sha256_hex;

/// One backend round trip, with image payloads replaced by their digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub seq: usize,
    pub route: String,
    pub attempts: usize,
    pub request: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Shared, append-only log of backend exchanges for one job.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<Exchange>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record(
        &self,
        route: &str,
        attempts: usize,
        request: Value,
        response: Option<Value>,
        error: Option<String>,
    ) {
        let mut log = self.0.lock().expect("transcript lock poisoned");
        let seq = log.len() + 1;
        log.push(Exchange {
            seq,
            route: route.to_string(),
            attempts,
            request: redact(request),
            response: response.map(redact),
            error,
        });
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.0.lock().expect("transcript lock poisoned").clone()
    }

    pub fn count_route(&self, route: &str) -> usize {
        self.0
            .lock()
            .expect("transcript lock poisoned")
            .iter()
            .filter(|e| e.route == route)
            .count()
    }
}

const PAYLOAD_KEYS: [&str; 2] = ["image", "mask"];

fn redact(value: Value) -> Value {
    match value {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let v = match v {
                        Value::String(s) if PAYLOAD_KEYS.contains(&k.as_str()) => {
                            Value::String(format!("sha256:{}", sha256_hex(s.as_bytes())))
                        }
                        other => redact(other),
                    };
                    (k, v)
                })
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(redact).collect()),
        other => other,
    }
}
