//! A thin HTTP client for the service API.

use redress_core::audit::{from_ndjson, AuditEvent};
use redress_service::CLOCK_HEADER;
use reqwest::{Client, Method};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("audit export failed with status {status}: {body}")]
    AuditExport { status: u16, body: String },
    #[error("audit export is not ndjson: {0}")]
    AuditParse(String),
}

/// Bearer token for a fixture account id such as `acct-alice`.
pub fn token_for(account: &str) -> String {
    format!("token-{}", account.trim_start_matches("acct-"))
}

#[derive(Debug, Clone)]
pub struct Api {
    client: Client,
    base: String,
}

impl Api {
    /// `base` is the service root, with or without the `/api/v1` suffix.
    pub fn new(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        let base = if base.ends_with("/api/v1") {
            base.to_owned()
        } else {
            format!("{base}/api/v1")
        };
        Self {
            client: Client::new(),
            base,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Sends one request. Non-JSON bodies come back as a JSON string.
    pub async fn call(
        &self,
        account: &str,
        method: Method,
        path: &str,
        body: Option<&Value>,
        at: u64,
    ) -> Result<(u16, Value), ClientError> {
        let url = format!("{}{path}", self.base);
        let mut req = self
            .client
            .request(method, &url)
            .bearer_auth(token_for(account))
            .header(CLOCK_HEADER, at.to_string());
        if let Some(b) = body {
            req = req.json(b);
        }
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(transport)?;
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok((status, value))
    }

    /// The full audit log, read with the platform moderator's session.
    pub async fn audit(&self, at: u64) -> Result<Vec<AuditEvent>, ClientError> {
        let (status, body) = self
            .call(redress_core::fixtures::PLATFORM, Method::GET, "/audit/export", None, at)
            .await?;
        let text = match (status, body) {
            (200, Value::String(s)) => s,
            (200, other) => other.to_string(),
            (status, body) => {
                return Err(ClientError::AuditExport {
                    status,
                    body: body.to_string(),
                })
            }
        };
        from_ndjson(&text).map_err(|e| ClientError::AuditParse(e.to_string()))
    }
}
