//! Uniform access to chat-completion models.
//!
//! A [`Gateway`] routes message lists to a [`ChatBackend`] (live HTTP or a
//! recorded transcript), applies the profile's retry policy, meters token
//! usage into a [`CostLedger`], and surfaces refusals as typed errors instead
//! of letting them masquerade as instructions.

mod http;
mod ledger;
pub mod scripted;

pub use http::HttpBackend;
pub use ledger::{CostLedger, LedgerEntry, LedgerReport, Money, ProfileTotals};
pub use scripted::{fingerprint, write_transcript, ScriptedBackend, TranscriptEntry};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Endpoint and sampling configuration for one model, keyed by name in the
/// profiles file. `api_key_ref` names an environment variable; the secret
/// itself is never stored or logged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub endpoint_url: String,
    pub api_key_ref: String,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub price_in: Money,
    pub price_out: Money,
    pub currency: String,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
}

impl ModelProfile {
    /// Minimal profile for scripted-backend fixtures: no endpoint, zero
    /// prices, no sampling parameters.
    pub fn test_profile(name: &str) -> ModelProfile {
        ModelProfile {
            name: name.into(),
            endpoint_url: String::new(),
            api_key_ref: String::new(),
            temperature: None,
            top_p: None,
            price_in: Money::zero(),
            price_out: Money::zero(),
            currency: "USD".into(),
            request_timeout_secs: 30,
            max_retries: 0,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.price_in.is_negative() || self.price_out.is_negative() {
            return Err(GatewayError::Config(format!(
                "profile {}: prices must be non-negative",
                self.name
            )));
        }
        if self.temperature.is_none() && self.top_p.is_some() {
            return Err(GatewayError::Config(format!(
                "profile {}: top_p given without temperature",
                self.name
            )));
        }
        if let Some(t) = self.temperature {
            if !(0.0..=1.0).contains(&t) {
                return Err(GatewayError::Config(format!(
                    "profile {}: temperature {t} outside [0, 1]",
                    self.name
                )));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GatewayError::Config(format!(
                    "profile {}: top_p {p} outside (0, 1]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// One completed model call, as it went over the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub sequence_index: u64,
    pub profile_name: String,
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub latency_secs: f64,
}

#[derive(Debug)]
pub struct BackendResponse {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
    #[error("auth: {0}")]
    Auth(String),
    #[error("transcript miss: {0}")]
    Miss(String),
}

pub trait ChatBackend {
    fn send(
        &mut self,
        profile: &ModelProfile,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, BackendError>;
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot complete an empty message list")]
    EmptyMessages,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transcript miss: {0}")]
    TranscriptMiss(String),
    #[error("model refused the request")]
    Refusal(Box<ChatExchange>),
    #[error("configuration: {0}")]
    Config(String),
}

/// Default refusal phrase list; override via run config. Matching is
/// case-insensitive substring.
pub fn default_refusal_patterns() -> Vec<String> {
    [
        "i can't assist",
        "i cannot assist",
        "i can't help with",
        "i cannot help with",
        "i'm unable to assist",
        "i am unable to assist",
        "i won't assist",
        "i will not assist",
        "i'm sorry, but i can't",
        "i cannot comply with",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    refusal_patterns: Vec<String>,
    retry_base: Duration,
    sequence: u64,
    pub ledger: CostLedger,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            refusal_patterns: default_refusal_patterns(),
            retry_base: Duration::from_secs(1),
            sequence: 0,
            ledger: CostLedger::new(),
        }
    }

    pub fn with_refusal_patterns(mut self, patterns: Vec<String>) -> Self {
        self.refusal_patterns = patterns;
        self
    }

    /// First-retry backoff; doubles on each further retry. Tests shrink it.
    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn calls_made(&self) -> u64 {
        self.sequence
    }

    /// `complete` plus audit bookkeeping: pushes a full-content call event on
    /// success, a refusal or failure marker otherwise.
    pub fn complete_logged(
        &mut self,
        profile: &ModelProfile,
        messages: &[ChatMessage],
        purpose: &str,
        events: &mut Vec<crate::events::Event>,
    ) -> Result<ChatExchange, GatewayError> {
        use crate::events::Event;
        match self.complete(profile, messages) {
            Ok(ex) => {
                events.push(Event::GatewayCall {
                    call_index: ex.sequence_index,
                    profile: ex.profile_name.clone(),
                    purpose: purpose.to_string(),
                    messages: ex.messages.clone(),
                    response_text: ex.response_text.clone(),
                    tokens_in: ex.tokens_in,
                    tokens_out: ex.tokens_out,
                });
                Ok(ex)
            }
            Err(GatewayError::Refusal(ex)) => {
                events.push(Event::GatewayRefusal {
                    call_index: ex.sequence_index,
                    purpose: purpose.to_string(),
                    tokens_in: ex.tokens_in,
                    tokens_out: ex.tokens_out,
                });
                Err(GatewayError::Refusal(ex))
            }
            Err(e) => {
                events.push(Event::GatewayFailure {
                    purpose: purpose.to_string(),
                    error: e.to_string(),
                });
                Err(e)
            }
        }
    }

    /// Sends the messages through the backend, retrying transport failures
    /// with exponential backoff, and meters the result into the ledger. The
    /// exchange is metered even when it turns out to be a refusal: the tokens
    /// were spent.
    pub fn complete(
        &mut self,
        profile: &ModelProfile,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        profile.validate()?;
        let started = Instant::now();
        let mut attempt = 0u32;
        let response = loop {
            match self.backend.send(profile, messages) {
                Ok(r) => break r,
                Err(BackendError::Retryable(m)) => {
                    if attempt >= profile.max_retries {
                        return Err(GatewayError::Transport {
                            attempts: attempt + 1,
                            message: m,
                        });
                    }
                    std::thread::sleep(self.retry_base * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(BackendError::Fatal(m)) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message: m,
                    })
                }
                Err(BackendError::Auth(m)) => return Err(GatewayError::Auth(m)),
                Err(BackendError::Miss(m)) => return Err(GatewayError::TranscriptMiss(m)),
            }
        };
        let exchange = ChatExchange {
            sequence_index: self.sequence,
            profile_name: profile.name.clone(),
            messages: messages.to_vec(),
            response_text: response.text,
            tokens_in: response.tokens_in,
            tokens_out: response.tokens_out,
            latency_secs: started.elapsed().as_secs_f64(),
        };
        self.sequence += 1;
        self.ledger.record(LedgerEntry {
            sequence_index: exchange.sequence_index,
            profile_name: profile.name.clone(),
            tokens_in: exchange.tokens_in,
            tokens_out: exchange.tokens_out,
            cost: CostLedger::exchange_cost(
                profile.price_in,
                profile.price_out,
                exchange.tokens_in,
                exchange.tokens_out,
            ),
            currency: profile.currency.clone(),
        });
        let lower = exchange.response_text.to_lowercase();
        if self.refusal_patterns.iter().any(|p| lower.contains(p.as_str())) {
            return Err(GatewayError::Refusal(Box::new(exchange)));
        }
        Ok(exchange)
    }
}

// ---- profile config file ----

#[derive(Deserialize)]
struct ProfilesFile {
    profiles: BTreeMap<String, ProfileEntry>,
}

#[derive(Deserialize)]
struct ProfileEntry {
    #[serde(default)]
    endpoint_url: String,
    #[serde(default)]
    api_key_ref: String,
    temperature: Option<f64>,
    top_p: Option<f64>,
    #[serde(deserialize_with = "money_from_toml")]
    price_in: Money,
    #[serde(deserialize_with = "money_from_toml")]
    price_out: Money,
    currency: String,
    #[serde(default = "default_timeout")]
    request_timeout_secs: u64,
    #[serde(default = "default_retries")]
    max_retries: u32,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

/// Prices must stay exact, so the config accepts integers and quoted decimal
/// strings but rejects float literals.
fn money_from_toml<'de, D: serde::Deserializer<'de>>(de: D) -> Result<Money, D::Error> {
    use serde::de::Error;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
        Float(f64),
    }
    match Raw::deserialize(de)? {
        Raw::Int(n) => Ok(Money::from_integer(n as i128)),
        Raw::Str(s) => s.parse().map_err(D::Error::custom),
        Raw::Float(f) => Err(D::Error::custom(format!(
            "price {f} written as a float; quote it as a string to keep cost arithmetic exact"
        ))),
    }
}

/// Loads model profiles from a TOML file of `[profiles.<name>]` tables.
pub fn load_profiles(path: &Path) -> Result<BTreeMap<String, ModelProfile>, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("profiles {}: {e}", path.display())))?;
    let file: ProfilesFile = toml::from_str(&text)
        .map_err(|e| GatewayError::Config(format!("profiles {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (name, entry) in file.profiles {
        let profile = ModelProfile {
            name: name.clone(),
            endpoint_url: entry.endpoint_url,
            api_key_ref: entry.api_key_ref,
            temperature: entry.temperature,
            top_p: entry.top_p,
            price_in: entry.price_in,
            price_out: entry.price_out,
            currency: entry.currency,
            request_timeout_secs: entry.request_timeout_secs,
            max_retries: entry.max_retries,
        };
        profile.validate()?;
        out.insert(name, profile);
    }
    Ok(out)
}
