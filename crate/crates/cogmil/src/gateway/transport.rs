//! Transport layer: the [`ChatTransport`] trait plus the two built-in
//! implementations (an OpenAI-style HTTP client and a deterministic offline
//! mock). The gateway owns retries and caching; transports only perform a
//! single request/response exchange.

use std::env;

use serde_json::json;

use super::{DecodingParams, ProviderConfig, ProviderKind};

/// Outcome classification for a single transport attempt. Retryable errors
/// participate in the gateway's backoff loop; fatal ones surface immediately.
#[derive(Debug)]
pub enum TransportError {
    Retryable(String),
    Fatal(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Retryable(msg) => write!(f, "retryable: {msg}"),
            TransportError::Fatal(msg) => write!(f, "fatal: {msg}"),
        }
    }
}

/// One prompt in, one completion text out.
pub trait ChatTransport: Send + Sync {
    fn send(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, TransportError>;
}

/// OpenAI-compatible chat completions client (works against any endpoint
/// speaking that dialect, including local inference servers).
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .expect("default TLS backend is available");
        Self { client }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatTransport for HttpTransport {
    fn send(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, TransportError> {
        let base = provider
            .base_url
            .as_deref()
            .ok_or_else(|| TransportError::Fatal("provider has no base_url".to_string()))?;
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let model = provider.model.as_deref().unwrap_or(&provider.id);
        let body = json!({
            "model": model,
            "messages": [{ "role": "user", "content": prompt }],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        });

        let mut req = self.client.post(&url).json(&body);
        if let Some(env_name) = &provider.api_key_env {
            // The gateway validates presence before dispatch; a hole here
            // means the config changed mid-flight, which is not retryable.
            let key = env::var(env_name)
                .map_err(|_| TransportError::Fatal(format!("env var {env_name} is not set")))?;
            req = req.bearer_auth(key);
        }

        let resp = req
            .send()
            .map_err(|e| TransportError::Retryable(format!("request to {url} failed: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Retryable(format!("{url} returned {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("{url} returned {status}")));
        }

        let payload: serde_json::Value = resp
            .json()
            .map_err(|e| TransportError::Retryable(format!("bad response body: {e}")))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                TransportError::Fatal("response has no choices[0].message.content".to_string())
            })
    }
}

/// Dispatches to [`HttpTransport`] or [`super::mock::MockTransport`] based on
/// the provider kind. This is the transport the CLI uses.
pub struct RoutingTransport {
    http: HttpTransport,
    mock: super::mock::MockTransport,
}

impl RoutingTransport {
    pub fn new() -> Self {
        Self {
            http: HttpTransport::new(),
            mock: super::mock::MockTransport,
        }
    }
}

impl Default for RoutingTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatTransport for RoutingTransport {
    fn send(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, TransportError> {
        match provider.kind {
            ProviderKind::OpenaiChat => self.http.send(provider, prompt, params),
            ProviderKind::Mock => self.mock.send(provider, prompt, params),
        }
    }
}
