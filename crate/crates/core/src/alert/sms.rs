use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{is_e164, GatewayConfig};

pub const MAX_BODY_CHARS: usize = 1600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmsRequest {
    pub to: String,
    pub from: String,
    pub body: String,
}

impl SmsRequest {
    pub fn validate(&self) -> Result<(), String> {
        if !is_e164(&self.to) {
            return Err(format!("recipient '{}' is not E.164", self.to));
        }
        if !is_e164(&self.from) {
            return Err(format!("sender '{}' is not E.164", self.from));
        }
        let n = self.body.chars().count();
        if n == 0 || n > MAX_BODY_CHARS {
            return Err(format!("body must have 1..={MAX_BODY_CHARS} characters, got {n}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Accepted,
    /// The gateway refused the request (4xx or unexpected status); not retried.
    PermanentFailure,
    /// Server errors or transport failures on every allowed attempt.
    RetriesExhausted,
    /// The request or configuration failed validation; nothing was sent.
    InvalidConfig,
}

/// One line of the delivery log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<u64>,
    /// End of the event's window, seconds since the Unix epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_time: Option<f64>,
    pub to: String,
    pub accepted: bool,
    pub outcome: DeliveryOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_sid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub latency_ms: f64,
}

impl DeliveryResult {
    fn new(to: &str, outcome: DeliveryOutcome, attempts: u32, started: Instant) -> Self {
        Self {
            event_id: None,
            event_time: None,
            to: to.to_string(),
            accepted: outcome == DeliveryOutcome::Accepted,
            outcome,
            message_sid: None,
            status: None,
            error: None,
            attempts,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }
}

pub fn messages_url(config: &GatewayConfig) -> String {
    format!(
        "{}/2010-04-01/Accounts/{}/Messages.json",
        config.base_url.trim_end_matches('/'),
        config.account_sid
    )
}

/// `Basic base64(account_sid:auth_token)`.
pub fn basic_auth_header(config: &GatewayConfig) -> String {
    let raw = format!("{}:{}", config.account_sid, config.auth_token.expose());
    format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(raw))
}

/// `To`, `From`, `Body`, form-urlencoded in that order.
pub fn form_body(request: &SmsRequest) -> String {
    form_urlencoded::Serializer::new(String::new())
        .append_pair("To", &request.to)
        .append_pair("From", &request.from)
        .append_pair("Body", &request.body)
        .finish()
}

enum Attempt {
    Status(u16, String),
    Transport(String),
}

fn post_once(agent: &ureq::Agent, url: &str, auth: &str, body: &str) -> Attempt {
    let result = agent
        .post(url)
        .header("Authorization", auth)
        .content_type("application/x-www-form-urlencoded")
        .send(body);
    match result {
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            Attempt::Status(status, text)
        }
        // transport errors carry the URL at most; credentials travel only in a header
        Err(e) => Attempt::Transport(e.to_string()),
    }
}

/// Delay before retry number `retry` (1-based): `base * 2^(retry-1)` plus up
/// to 10% jitter.
pub(crate) fn backoff_delay(base: f64, retry: u32) -> Duration {
    let nominal = base * 2f64.powi(retry as i32 - 1);
    let jitter = if nominal > 0.0 { rand::rng().random_range(0.0..0.1) } else { 0.0 };
    Duration::from_secs_f64(nominal * (1.0 + jitter))
}

/// Posts one message. 201 is success; other 4xx and non-5xx statuses are
/// permanent; 5xx and transport errors are retried up to `max_retries` times
/// with exponential backoff.
pub fn send_sms(request: &SmsRequest, config: &GatewayConfig) -> DeliveryResult {
    let started = Instant::now();
    if let Err(e) = config.validate().map_err(|e| e.to_string()).and_then(|_| request.validate()) {
        let mut r = DeliveryResult::new(&request.to, DeliveryOutcome::InvalidConfig, 0, started);
        r.error = Some(e);
        return r;
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_seconds)))
        .http_status_as_error(false)
        .build()
        .into();
    let url = messages_url(config);
    let auth = basic_auth_header(config);
    let body = form_body(request);
    let mut attempts = 0;
    loop {
        if attempts > 0 {
            std::thread::sleep(backoff_delay(config.backoff_base_seconds, attempts));
        }
        attempts += 1;
        let (retryable, status, detail) = match post_once(&agent, &url, &auth, &body) {
            Attempt::Status(201, text) => {
                let sid = serde_json::from_str::<serde_json::Value>(&text)
                    .ok()
                    .and_then(|v| v.get("sid").and_then(|s| s.as_str()).map(String::from));
                if sid.is_none() {
                    log::warn!("gateway accepted the message but returned no sid");
                }
                let mut r = DeliveryResult::new(&request.to, DeliveryOutcome::Accepted, attempts, started);
                r.status = Some(201);
                r.message_sid = sid;
                return r;
            }
            Attempt::Status(s, text) => ((500..600).contains(&s), Some(s), provider_error(s, &text)),
            Attempt::Transport(e) => (true, None, e),
        };
        if !retryable || attempts > config.max_retries {
            let outcome = if retryable {
                DeliveryOutcome::RetriesExhausted
            } else {
                DeliveryOutcome::PermanentFailure
            };
            log::warn!("SMS to {} failed after {attempts} attempt(s): {detail}", request.to);
            let mut r = DeliveryResult::new(&request.to, outcome, attempts, started);
            r.status = status;
            r.error = Some(detail);
            return r;
        }
        log::info!("SMS attempt {attempts} to {} failed ({detail}); retrying", request.to);
    }
}

/// `HTTP <status>` plus the provider's error code and message when present.
fn provider_error(status: u16, text: &str) -> String {
    let v: Option<serde_json::Value> = serde_json::from_str(text).ok();
    let code = v.as_ref().and_then(|v| v.get("code")).map(|c| c.to_string());
    let msg = v.as_ref().and_then(|v| v.get("message")).and_then(|m| m.as_str()).map(String::from);
    match (code, msg) {
        (Some(c), Some(m)) => format!("HTTP {status}, code {c}: {m}"),
        (Some(c), None) => format!("HTTP {status}, code {c}"),
        _ => format!("HTTP {status}"),
    }
}
