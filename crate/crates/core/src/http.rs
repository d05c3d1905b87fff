//! Blocking HTTP client used for peer calls, `/meta` polling and url
//! resources.

use std::io::Read;
use std::time::Duration;

use crate::wire::{self, MethodCall, Value, WireResponse};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Upper bound for request and response bodies.
pub const MAX_BODY: u64 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HttpError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("response body exceeds {MAX_BODY} bytes")]
    TooLarge,
}

#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RemoteError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Fault(#[from] wire::Fault),
    #[error("bad response: {0}")]
    BadResponse(String),
}

#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::with_timeout(DEFAULT_TIMEOUT)
    }
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("HttpClient")
    }
}

impl HttpClient {
    pub fn with_timeout(timeout: Duration) -> Self {
        HttpClient {
            agent: ureq::AgentBuilder::new()
                .timeout(timeout)
                .max_idle_connections(0)
                .build(),
        }
    }

    pub fn get(&self, url: &str) -> Result<HttpReply, HttpError> {
        Self::finish(self.agent.get(url).call())
    }

    pub fn post(&self, url: &str, content_type: &str, body: &[u8]) -> Result<HttpReply, HttpError> {
        Self::finish(self.agent.post(url).set("Content-Type", content_type).send_bytes(body))
    }

    fn finish(result: Result<ureq::Response, ureq::Error>) -> Result<HttpReply, HttpError> {
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(HttpError::Unreachable(t.to_string())),
        };
        let status = response.status();
        let content_type = response.content_type().to_string();
        let mut body = Vec::new();
        response
            .into_reader()
            .take(MAX_BODY + 1)
            .read_to_end(&mut body)
            .map_err(|e| HttpError::Unreachable(e.to_string()))?;
        if body.len() as u64 > MAX_BODY {
            return Err(HttpError::TooLarge);
        }
        Ok(HttpReply {
            status,
            content_type,
            body,
        })
    }

    /// Posts an encoded call to `<peer>/service` and decodes the reply.
    pub fn call(&self, peer_url: &str, call: &MethodCall) -> Result<Value, RemoteError> {
        self.post_call(&format!("{}/service", peer_url.trim_end_matches('/')), call)
    }

    /// Same as [`HttpClient::call`] against the node's `/admin` endpoint.
    pub fn call_admin(&self, node_url: &str, call: &MethodCall) -> Result<Value, RemoteError> {
        self.post_call(&format!("{}/admin", node_url.trim_end_matches('/')), call)
    }

    fn post_call(&self, url: &str, call: &MethodCall) -> Result<Value, RemoteError> {
        let reply = self
            .post(url, "text/xml", &wire::encode_call(call))
            .map_err(|e| RemoteError::Unreachable(e.to_string()))?;
        match wire::decode_response(&reply.body) {
            Ok(WireResponse::Ok(v)) => Ok(v),
            Ok(WireResponse::Fault(f)) => Err(RemoteError::Fault(f)),
            Err(e) => Err(RemoteError::BadResponse(format!("status {}: {e}", reply.status))),
        }
    }
}
