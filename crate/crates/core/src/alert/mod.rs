//! Alert text, SMS delivery over a Twilio-compatible HTTP API, and dispatch.

mod dispatch;
pub mod mock;
mod sms;

pub use dispatch::{load_delivery_log, spawn_dispatcher, Dispatcher, RETRY_QUEUE_CAPACITY};
pub use sms::{basic_auth_header, form_body, messages_url, send_sms, DeliveryOutcome, DeliveryResult, SmsRequest, MAX_BODY_CHARS};

use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::stream::ActivityEvent;

#[derive(Debug, Error, PartialEq)]
pub enum AlertError {
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// A credential that never prints. Debug, Display and serialization all
/// render a fixed placeholder.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

impl Serialize for Secret {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("<redacted>")
    }
}

impl<'de> Deserialize<'de> for Secret {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(Secret)
    }
}

fn e164() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\+[1-9][0-9]{6,14}$").expect("valid pattern"))
}

pub fn is_e164(number: &str) -> bool {
    e164().is_match(number)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub account_sid: String,
    pub auth_token: Secret,
    pub from_number: String,
    pub recipients: Vec<String>,
    pub max_retries: u32,
    pub backoff_base_seconds: f64,
    pub timeout_seconds: f64,
    /// Name of the monitored person or room in alert text.
    pub patient_label: String,
    /// Offset used to render alert timestamps, e.g. `+09:00`.
    pub utc_offset: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.twilio.com".into(),
            account_sid: String::new(),
            auth_token: Secret::default(),
            from_number: String::new(),
            recipients: Vec::new(),
            max_retries: 3,
            backoff_base_seconds: 1.0,
            timeout_seconds: 10.0,
            patient_label: "Patient".into(),
            utc_offset: "+00:00".into(),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), AlertError> {
        let bad = |m: String| Err(AlertError::Config(m));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url must start with http:// or https://, got '{}'", self.base_url));
        }
        if self.account_sid.is_empty() || !self.account_sid.chars().all(|c| c.is_ascii_alphanumeric()) {
            return bad("account_sid must be nonempty and alphanumeric".into());
        }
        if self.auth_token.is_empty() {
            return bad("auth_token is empty".into());
        }
        if !is_e164(&self.from_number) {
            return bad(format!("from_number '{}' is not E.164", self.from_number));
        }
        if let Some(r) = self.recipients.iter().find(|r| !is_e164(r)) {
            return bad(format!("recipient '{r}' is not E.164"));
        }
        if self.max_retries > 10 {
            return bad(format!("max_retries {} exceeds 10", self.max_retries));
        }
        if !(self.backoff_base_seconds.is_finite() && self.backoff_base_seconds >= 0.0) {
            return bad("backoff_base_seconds must be non-negative".into());
        }
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return bad("timeout_seconds must be positive".into());
        }
        self.offset()?;
        Ok(())
    }

    pub fn offset(&self) -> Result<FixedOffset, AlertError> {
        self.utc_offset
            .parse::<FixedOffset>()
            .map_err(|_| AlertError::Config(format!("utc_offset '{}' is not of the form +HH:MM", self.utc_offset)))
    }
}

/// Alert text for a critical event:
/// `ALERT [CRITICAL] <patient>: <activity> detected at <time> (confidence <pct>%)`.
/// The event's `window_end` is read as seconds since the Unix epoch.
pub fn format_alert(event: &ActivityEvent, patient_label: &str, offset: FixedOffset) -> Result<String, AlertError> {
    if !event.label.critical {
        return Err(AlertError::Contract(format!(
            "{} is not flagged critical; only critical events are alerted",
            event.label.display_name()
        )));
    }
    let secs = event.window_end.floor();
    let nanos = ((event.window_end - secs) * 1e9).round().min(999_999_999.0) as u32;
    let utc = DateTime::from_timestamp(secs as i64, nanos)
        .ok_or_else(|| AlertError::Contract(format!("event time {} out of range", event.window_end)))?;
    let when = utc.with_timezone(&offset).format("%Y-%m-%dT%H:%M:%S%:z");
    Ok(format!(
        "ALERT [CRITICAL] {patient_label}: {} detected at {when} (confidence {:.1}%)",
        event.label.display_name(),
        event.confidence * 100.0
    ))
}
