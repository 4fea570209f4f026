use std::collections::{HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use chrono::FixedOffset;
use crossbeam_channel::{bounded, Sender};

use super::sms::{send_sms, DeliveryOutcome, DeliveryResult, SmsRequest};
use super::{format_alert, AlertError, GatewayConfig};
use crate::stream::ActivityEvent;

pub const RETRY_QUEUE_CAPACITY: usize = 100;

/// An event whose delivery is waiting for the gateway to come back.
#[derive(Debug, Clone)]
struct Parked {
    event: ActivityEvent,
    body: String,
    /// Recipients not yet accepted, in configured order.
    remaining: Vec<String>,
}

type DeliveryKey = (u64, u64, String);

fn key(event_id: u64, event_time: f64, to: &str) -> DeliveryKey {
    (event_id, event_time.to_bits(), to.to_string())
}

/// Sends critical events to every recipient and keeps an append-only JSONL
/// delivery log.
///
/// A message counts as delivered once per (event id, event time, recipient);
/// accepted entries in an existing log are never resent. When the gateway is
/// unreachable the event is parked in a bounded queue and retried, oldest
/// first, before any newer event is attempted.
pub struct Dispatcher {
    config: GatewayConfig,
    offset: FixedOffset,
    log: Option<BufWriter<File>>,
    log_path: Option<PathBuf>,
    delivered: HashSet<DeliveryKey>,
    queue: VecDeque<Parked>,
    capacity: usize,
    dropped: usize,
    results: Vec<DeliveryResult>,
}

impl Dispatcher {
    /// `log_path`, when given, is read for already-accepted deliveries and
    /// then appended to.
    pub fn new(config: GatewayConfig, log_path: Option<&Path>) -> Result<Self, AlertError> {
        config.validate()?;
        let offset = config.offset()?;
        let mut delivered = HashSet::new();
        let log = match log_path {
            Some(path) => {
                if path.exists() {
                    for r in load_delivery_log(path)? {
                        if let (true, Some(id), Some(t)) = (r.accepted, r.event_id, r.event_time) {
                            delivered.insert(key(id, t, &r.to));
                        }
                    }
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| AlertError::Config(format!("delivery log {}: {e}", path.display())))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self {
            config,
            offset,
            log,
            log_path: log_path.map(Path::to_path_buf),
            delivered,
            queue: VecDeque::new(),
            capacity: RETRY_QUEUE_CAPACITY,
            dropped: 0,
            results: Vec::new(),
        })
    }

    pub fn with_queue_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Ids of parked events, oldest first.
    pub fn queued_event_ids(&self) -> Vec<u64> {
        self.queue.iter().map(|p| p.event.id).collect()
    }

    /// Events discarded because the retry queue was full.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Every delivery attempted by this dispatcher, in order.
    pub fn results(&self) -> &[DeliveryResult] {
        &self.results
    }

    /// Handles one event. Non-critical events are only logged.
    pub fn dispatch(&mut self, event: &ActivityEvent) -> Result<Vec<DeliveryResult>, AlertError> {
        if !event.label.critical {
            log::info!(
                "event {} ({}, {:.3}) is not critical; no alert sent",
                event.id,
                event.label.display_name(),
                event.confidence
            );
            return Ok(Vec::new());
        }
        let body = format_alert(event, &self.config.patient_label, self.offset)?;
        let remaining: Vec<String> = self
            .config
            .recipients
            .iter()
            .filter(|to| !self.delivered.contains(&key(event.id, event.window_end, to)))
            .cloned()
            .collect();
        if remaining.is_empty() {
            log::info!("event {} already delivered to all recipients", event.id);
            return Ok(Vec::new());
        }
        let mut out = self.flush()?;
        let parked = Parked {
            event: event.clone(),
            body,
            remaining,
        };
        if self.queue.is_empty() {
            if let Some(rest) = self.attempt(parked, &mut out)? {
                self.park(rest);
            }
        } else {
            // gateway still down; keep per-recipient ordering
            self.park(parked);
        }
        Ok(out)
    }

    /// Retries parked events oldest first, stopping at the first one that
    /// still cannot be delivered.
    pub fn flush(&mut self) -> Result<Vec<DeliveryResult>, AlertError> {
        let mut out = Vec::new();
        while let Some(parked) = self.queue.pop_front() {
            if let Some(rest) = self.attempt(parked, &mut out)? {
                self.queue.push_front(rest);
                break;
            }
        }
        Ok(out)
    }

    /// Writes buffered log lines to disk.
    pub fn flush_log(&mut self) -> Result<(), AlertError> {
        if let Some(w) = self.log.as_mut() {
            w.flush().map_err(|e| AlertError::Config(format!("delivery log: {e}")))?;
        }
        Ok(())
    }

    /// Sends to each remaining recipient in order. Returns the event back if
    /// the gateway was unreachable for some recipient.
    fn attempt(&mut self, mut parked: Parked, out: &mut Vec<DeliveryResult>) -> Result<Option<Parked>, AlertError> {
        let mut still = Vec::new();
        for to in std::mem::take(&mut parked.remaining) {
            if !still.is_empty() {
                still.push(to);
                continue;
            }
            let request = SmsRequest {
                to: to.clone(),
                from: self.config.from_number.clone(),
                body: parked.body.clone(),
            };
            let mut result = send_sms(&request, &self.config);
            result.event_id = Some(parked.event.id);
            result.event_time = Some(parked.event.window_end);
            match result.outcome {
                DeliveryOutcome::Accepted => {
                    self.delivered.insert(key(parked.event.id, parked.event.window_end, &to));
                    log::info!("alert for event {} accepted for {to}", parked.event.id);
                }
                DeliveryOutcome::RetriesExhausted => still.push(to),
                DeliveryOutcome::PermanentFailure | DeliveryOutcome::InvalidConfig => {
                    log::error!(
                        "alert for event {} to {to} rejected: {}",
                        parked.event.id,
                        result.error.as_deref().unwrap_or("unknown")
                    );
                }
            }
            self.record(result.clone())?;
            out.push(result);
        }
        if still.is_empty() {
            Ok(None)
        } else {
            parked.remaining = still;
            Ok(Some(parked))
        }
    }

    fn park(&mut self, parked: Parked) {
        if self.queue.len() >= self.capacity {
            if let Some(old) = self.queue.pop_front() {
                self.dropped += 1;
                log::error!(
                    "ALERT DROPPED: retry queue full ({}), discarding event {} ({}) undelivered to {} recipient(s); {} dropped so far",
                    self.capacity,
                    old.event.id,
                    old.event.label.display_name(),
                    old.remaining.len(),
                    self.dropped
                );
            }
        }
        log::warn!("gateway unreachable; event {} parked ({} queued)", parked.event.id, self.queue.len() + 1);
        self.queue.push_back(parked);
    }

    fn record(&mut self, result: DeliveryResult) -> Result<(), AlertError> {
        if let Some(w) = self.log.as_mut() {
            let line = serde_json::to_string(&result).map_err(|e| AlertError::Contract(e.to_string()))?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| AlertError::Config(format!("delivery log: {e}")))?;
        }
        self.results.push(result);
        Ok(())
    }
}

/// Reads a JSONL delivery log; blank lines are skipped.
pub fn load_delivery_log(path: &Path) -> Result<Vec<DeliveryResult>, AlertError> {
    let f = File::open(path).map_err(|e| AlertError::Config(format!("delivery log {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AlertError::Config(format!("delivery log {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| AlertError::Config(format!("delivery log {} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Runs `dispatcher` on its own thread. Events sent on the returned channel
/// are dispatched in order; dropping the sender drains the channel, makes one
/// last attempt at the retry queue and returns the dispatcher.
pub fn spawn_dispatcher(mut dispatcher: Dispatcher, capacity: usize) -> (Sender<ActivityEvent>, JoinHandle<Dispatcher>) {
    let (tx, rx) = bounded::<ActivityEvent>(capacity.max(1));
    let handle = std::thread::spawn(move || {
        for event in rx.iter() {
            if let Err(e) = dispatcher.dispatch(&event) {
                log::error!("dispatch of event {} failed: {e}", event.id);
            }
        }
        if let Err(e) = dispatcher.flush().and_then(|_| dispatcher.flush_log()) {
            log::error!("final alert flush failed: {e}");
        }
        if dispatcher.queued() > 0 {
            log::error!("{} alert(s) left undelivered at shutdown", dispatcher.queued());
        }
        dispatcher
    });
    (tx, handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alert::mock::MockGateway;
    use crate::alert::Secret;
    use crate::skeleton::{ActivityClass, ActivityLabel};

    fn config(base_url: String, recipients: &[&str]) -> GatewayConfig {
        GatewayConfig {
            base_url,
            account_sid: "ACtest".into(),
            auth_token: Secret::new("s3cret"),
            from_number: "+15005550006".into(),
            recipients: recipients.iter().map(|s| s.to_string()).collect(),
            max_retries: 0,
            backoff_base_seconds: 0.0,
            timeout_seconds: 2.0,
            ..Default::default()
        }
    }

    fn event(id: u64, class: ActivityClass) -> ActivityEvent {
        ActivityEvent {
            id,
            label: ActivityLabel::with_default_policy(class),
            confidence: 0.9,
            window_start: 1000.0 + id as f64,
            window_end: 1002.0 + id as f64,
        }
    }

    #[test]
    fn non_critical_sends_nothing() {
        let mock = MockGateway::start().unwrap();
        let mut d = Dispatcher::new(config(mock.base_url(), &["+821012345678"]), None).unwrap();
        assert!(d.dispatch(&event(1, ActivityClass::A103)).unwrap().is_empty());
        assert!(mock.requests().is_empty());
    }

    #[test]
    fn one_post_per_recipient() {
        let mock = MockGateway::start().unwrap();
        let mut d = Dispatcher::new(config(mock.base_url(), &["+821012345678", "+14155550100"]), None).unwrap();
        let r = d.dispatch(&event(1, ActivityClass::A43)).unwrap();
        assert!(r.iter().all(|r| r.accepted));
        let reqs = mock.requests();
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].form_value("Body"), reqs[1].form_value("Body"));
        assert_eq!(reqs[0].form_value("To").as_deref(), Some("+821012345678"));
        assert_eq!(reqs[1].form_value("To").as_deref(), Some("+14155550100"));
    }

    #[test]
    fn replayed_log_is_not_resent() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("deliveries.jsonl");
        let mock = MockGateway::start().unwrap();
        let cfg = config(mock.base_url(), &["+821012345678"]);
        let mut d = Dispatcher::new(cfg.clone(), Some(&log)).unwrap();
        d.dispatch(&event(1, ActivityClass::A43)).unwrap();
        drop(d);
        let mut again = Dispatcher::new(cfg, Some(&log)).unwrap();
        assert!(again.dispatch(&event(1, ActivityClass::A43)).unwrap().is_empty());
        again.dispatch(&event(2, ActivityClass::A43)).unwrap();
        assert_eq!(mock.requests().len(), 2);
        let lines = load_delivery_log(&log).unwrap();
        assert_eq!(lines.iter().map(|r| r.event_id).collect::<Vec<_>>(), vec![Some(1), Some(2)]);
    }

    #[test]
    fn outage_parks_then_recovers_in_order() {
        let mock = MockGateway::with_script(vec![503, 503]).unwrap();
        let mut d = Dispatcher::new(config(mock.base_url(), &["+821012345678"]), None).unwrap();
        d.dispatch(&event(1, ActivityClass::A43)).unwrap();
        assert_eq!(d.queued(), 1);
        // flush first retries event 1 (503 again), so event 2 is parked untried
        d.dispatch(&event(2, ActivityClass::A42)).unwrap();
        assert_eq!(d.queued_event_ids(), vec![1, 2]);
        let r = d.flush().unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| r.accepted));
        assert_eq!(d.queued(), 0);
        let bodies: Vec<_> = mock.requests().iter().map(|q| q.status).collect();
        assert_eq!(bodies, vec![503, 503, 201, 201]);
    }
}
