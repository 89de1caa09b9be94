//! LLM access layer: provider config, a content-addressed response cache,
//! bounded retries with jittered exponential backoff, and a per-provider
//! in-flight limit.
//!
//! The cache is the unit of reproducibility. Every completed exchange is
//! persisted under sha256(provider, model, params, prompt), so a finished
//! experiment can be replayed byte for byte with no network and no API keys.

pub mod mock;
pub mod transport;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use transport::{ChatTransport, HttpTransport, RoutingTransport, TransportError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider {provider}: API key env var {env} is not set")]
    AuthMissing { provider: String, env: String },
    #[error("provider {provider}: giving up after {attempts} attempts: {msg}")]
    Exhausted {
        provider: String,
        attempts: u32,
        msg: String,
    },
    #[error("provider {provider}: {msg}")]
    Fatal { provider: String, msg: String },
    #[error("cache record {path}: {msg}")]
    BadCacheRecord { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    OpenaiChat,
    Mock,
}

fn default_max_in_flight() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_initial_backoff_ms() -> u64 {
    1000
}

/// One LLM endpoint as named in experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Model name sent over the wire; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key. Checked lazily:
    /// cached responses replay without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Retries after the first attempt, for retryable failures only.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    /// Behavior switches for the mock transport; ignored elsewhere.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mock_quirks: Vec<String>,
}

impl ProviderConfig {
    /// An offline mock provider with default limits.
    pub fn mock(id: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: ProviderKind::Mock,
            base_url: None,
            model: None,
            api_key_env: None,
            max_in_flight: default_max_in_flight(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_initial_backoff_ms(),
            mock_quirks: Vec::new(),
        }
    }
}

/// Decoding parameters sent with every request and mixed into the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 0.7,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

/// A completed exchange, as persisted in the cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub provider: String,
    pub prompt: String,
    pub params: DecodingParams,
    pub response_text: String,
    pub attempts: u32,
    #[serde(skip)]
    pub from_cache: bool,
}

// ---------------------------------------------------------------------------
// In-flight limiting
// ---------------------------------------------------------------------------

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

pub struct LlmGateway {
    cache_dir: PathBuf,
    transport: Arc<dyn ChatTransport>,
    limiters: Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl LlmGateway {
    pub fn new(cache_dir: &Path, transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            cache_dir: cache_dir.to_path_buf(),
            transport,
            limiters: Mutex::new(HashMap::new()),
        }
    }

    /// Gateway with the standard kind-based transport routing.
    pub fn with_default_transport(cache_dir: &Path) -> Self {
        Self::new(cache_dir, Arc::new(RoutingTransport::new()))
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    /// Content address of one exchange.
    pub fn cache_key(provider: &ProviderConfig, prompt: &str, params: &DecodingParams) -> String {
        let keyed = serde_json::json!({
            "provider": provider.id,
            "model": provider.model.as_deref().unwrap_or(&provider.id),
            "params": params,
            "prompt": prompt,
        });
        let mut hasher = Sha256::new();
        hasher.update(keyed.to_string().as_bytes());
        hex::encode(hasher.finalize())
    }

    fn cache_path(&self, key: &str) -> PathBuf {
        self.cache_dir.join(format!("{key}.json"))
    }

    /// Complete `prompt`, replaying from cache when possible.
    pub fn complete(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<CompletionRecord, GatewayError> {
        let key = Self::cache_key(provider, prompt, params);
        let path = self.cache_path(&key);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let mut record: CompletionRecord =
                serde_json::from_str(&text).map_err(|e| GatewayError::BadCacheRecord {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
            record.from_cache = true;
            return Ok(record);
        }
        self.fetch_and_store(provider, prompt, params, &path)
    }

    /// Complete `prompt` without consulting the cache, then overwrite the
    /// cached record. Used to re-ask after an unparseable response: reading
    /// the cache would just replay the same bad text, while storing the
    /// fresh answer keeps later replays consistent.
    pub fn complete_uncached(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<CompletionRecord, GatewayError> {
        let key = Self::cache_key(provider, prompt, params);
        let path = self.cache_path(&key);
        self.fetch_and_store(provider, prompt, params, &path)
    }

    fn limiter(&self, provider: &ProviderConfig) -> Arc<Semaphore> {
        let mut map = self.limiters.lock().unwrap();
        map.entry(provider.id.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(provider.max_in_flight)))
            .clone()
    }

    fn fetch_and_store(
        &self,
        provider: &ProviderConfig,
        prompt: &str,
        params: &DecodingParams,
        path: &Path,
    ) -> Result<CompletionRecord, GatewayError> {
        if let Some(env_name) = &provider.api_key_env {
            if std::env::var(env_name).is_err() {
                return Err(GatewayError::AuthMissing {
                    provider: provider.id.clone(),
                    env: env_name.clone(),
                });
            }
        }

        let limiter = self.limiter(provider);
        let _permit = limiter.acquire();

        let max_attempts = provider.max_retries + 1;
        let mut attempt = 0u32;
        let response_text = loop {
            attempt += 1;
            match self.transport.send(provider, prompt, params) {
                Ok(text) => break text,
                Err(TransportError::Fatal(msg)) => {
                    return Err(GatewayError::Fatal {
                        provider: provider.id.clone(),
                        msg,
                    });
                }
                Err(TransportError::Retryable(msg)) => {
                    if attempt >= max_attempts {
                        return Err(GatewayError::Exhausted {
                            provider: provider.id.clone(),
                            attempts: attempt,
                            msg,
                        });
                    }
                    let base = provider.initial_backoff_ms.saturating_mul(1 << (attempt - 1));
                    let jitter = 0.8 + 0.4 * rand::random::<f64>();
                    let wait = (base as f64 * jitter) as u64;
                    log::warn!(
                        "provider {}: attempt {attempt} failed ({msg}); retrying in {wait}ms",
                        provider.id
                    );
                    std::thread::sleep(std::time::Duration::from_millis(wait));
                }
            }
        };

        let record = CompletionRecord {
            provider: provider.id.clone(),
            prompt: prompt.to_string(),
            params: params.clone(),
            response_text,
            attempts: attempt,
            from_cache: false,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        // Write-then-rename so concurrent writers of the same key can't
        // interleave partial content.
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        fs::write(&tmp, serde_json::to_string_pretty(&record).unwrap())?;
        fs::rename(&tmp, path)?;
        Ok(record)
    }
}

// ---------------------------------------------------------------------------
// Response payload extraction
// ---------------------------------------------------------------------------

/// Pull the first complete top-level JSON value (object or array) out of an
/// LLM response, ignoring markdown fences and surrounding prose. Bracket
/// matching respects string literals and escapes. Returns `None` when no
/// balanced value is present.
pub fn extract_json_payload(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == b'{' || b == b'[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}
