//! Minimal JSON-over-HTTP client shared by the remote backends.

use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HttpError {
    Transport(String),
    Status(u16),
    Protocol(String),
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl JsonClient {
    pub(crate) fn new(timeout: Duration, api_key: Option<String>) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        JsonClient { agent, api_key }
    }

    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(HttpError::Status(status));
        }
        resp.body_mut().read_json::<Value>().map_err(|e| HttpError::Protocol(e.to_string()))
    }
}
