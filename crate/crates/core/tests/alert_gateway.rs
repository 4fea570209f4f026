use std::net::TcpListener;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use base64::Engine as _;
use chrono::FixedOffset;
use mrha_core::alert::mock::MockGateway;
use mrha_core::alert::{
    format_alert, load_delivery_log, send_sms, spawn_dispatcher, DeliveryOutcome, Dispatcher, GatewayConfig, Secret,
    SmsRequest,
};
use mrha_core::skeleton::{ActivityClass, ActivityLabel};
use mrha_core::stream::ActivityEvent;

const TOKEN: &str = "tok_9f8e7d6c5b4a";

// Every log record emitted in this test binary, for the secret scan.
struct Capture;

static LINES: Mutex<Vec<String>> = Mutex::new(Vec::new());

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, record: &log::Record) {
        LINES.lock().unwrap().push(format!("{} {}", record.level(), record.args()));
    }
    fn flush(&self) {}
}

fn capture_logs() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        static LOGGER: Capture = Capture;
        log::set_logger(&LOGGER).unwrap();
        log::set_max_level(log::LevelFilter::Trace);
    });
}

fn config(base_url: String) -> GatewayConfig {
    GatewayConfig {
        base_url,
        account_sid: "AC0123456789abcdef".into(),
        auth_token: Secret::new(TOKEN),
        from_number: "+15005550006".into(),
        recipients: vec!["+821012345678".into()],
        max_retries: 3,
        backoff_base_seconds: 0.0,
        timeout_seconds: 5.0,
        ..Default::default()
    }
}

fn request(body: &str) -> SmsRequest {
    SmsRequest {
        to: "+821012345678".into(),
        from: "+15005550006".into(),
        body: body.into(),
    }
}

fn event(id: u64, class: ActivityClass) -> ActivityEvent {
    ActivityEvent {
        id,
        label: ActivityLabel::with_default_policy(class),
        confidence: 0.9,
        window_start: 1_700_000_000.0 + id as f64,
        window_end: 1_700_000_002.0 + id as f64,
    }
}

fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", l.local_addr().unwrap());
    drop(l);
    url
}

#[test]
fn post_matches_twilio_wire_format() {
    let mock = MockGateway::start().unwrap();
    let cfg = config(mock.base_url());
    let r = send_sms(&request("Fall in room 3 & hall"), &cfg);
    assert!(r.accepted);
    assert_eq!(r.attempts, 1);
    assert!(r.message_sid.as_deref().is_some_and(|s| s.starts_with("SM")));

    let reqs = mock.requests();
    assert_eq!(reqs.len(), 1);
    let q = &reqs[0];
    assert_eq!(q.method, "POST");
    assert_eq!(q.path, "/2010-04-01/Accounts/AC0123456789abcdef/Messages.json");
    let expected_auth = format!(
        "Basic {}",
        base64::engine::general_purpose::STANDARD.encode(format!("AC0123456789abcdef:{TOKEN}"))
    );
    assert_eq!(q.header("authorization"), Some(expected_auth.as_str()));
    assert_eq!(q.header("content-type"), Some("application/x-www-form-urlencoded"));
    assert_eq!(q.body, "To=%2B821012345678&From=%2B15005550006&Body=Fall+in+room+3+%26+hall");
    let keys: Vec<_> = q.form().into_iter().map(|(k, _)| k).collect();
    assert_eq!(keys, ["To", "From", "Body"]);
}

#[test]
fn retry_policy_attempt_counts() {
    let cases: [(&[u16], u32, DeliveryOutcome); 4] = [
        (&[201], 1, DeliveryOutcome::Accepted),
        (&[401], 1, DeliveryOutcome::PermanentFailure),
        (&[500, 500, 201], 3, DeliveryOutcome::Accepted),
        (&[500, 502, 503, 504], 4, DeliveryOutcome::RetriesExhausted),
    ];
    for (script, attempts, outcome) in cases {
        let mock = MockGateway::with_script(script.to_vec()).unwrap();
        let r = send_sms(&request("x"), &config(mock.base_url()));
        assert_eq!((r.attempts, r.outcome), (attempts, outcome), "{script:?}");
        assert_eq!(mock.requests().len() as u32, attempts);
    }
}

#[test]
fn backoff_gaps_in_mock_log() {
    let mock = MockGateway::with_script(vec![500, 500, 201]).unwrap();
    let mut cfg = config(mock.base_url());
    cfg.backoff_base_seconds = 1.0;
    let r = send_sms(&request("x"), &cfg);
    assert!(r.accepted);
    assert_eq!(r.attempts, 3);
    let reqs = mock.requests();
    let gap1 = reqs[1].received.duration_since(reqs[0].received).as_secs_f64();
    let gap2 = reqs[2].received.duration_since(reqs[1].received).as_secs_f64();
    assert!(gap1 >= 1.0, "{gap1}");
    assert!(gap2 >= 2.0, "{gap2}");
    // jitter is at most 10%, plus scheduling slack
    assert!(gap1 < 1.5 && gap2 < 2.7, "{gap1} {gap2}");
}

#[test]
fn timeout_counts_as_transient() {
    let mock = MockGateway::start().unwrap();
    mock.set_delay(Duration::from_millis(1500));
    let mut cfg = config(mock.base_url());
    cfg.timeout_seconds = 0.3;
    cfg.max_retries = 1;
    let r = send_sms(&request("x"), &cfg);
    assert_eq!((r.outcome, r.attempts), (DeliveryOutcome::RetriesExhausted, 2));
}

#[test]
fn body_length_limit() {
    let mock = MockGateway::start().unwrap();
    let cfg = config(mock.base_url());
    assert!(send_sms(&request(&"é".repeat(1600)), &cfg).accepted);
    let r = send_sms(&request(&"a".repeat(1601)), &cfg);
    assert_eq!(r.outcome, DeliveryOutcome::InvalidConfig);
    assert_eq!(mock.requests().len(), 1);
}

#[test]
fn critical_alert_golden_file() {
    let off = FixedOffset::east_opt(9 * 3600).unwrap();
    let got: String = ActivityClass::DEFAULT_CRITICAL
        .iter()
        .map(|&c| {
            let e = ActivityEvent {
                id: 1,
                label: ActivityLabel::with_default_policy(c),
                confidence: 0.912,
                window_start: 1_735_700_398.0,
                window_end: 1_735_700_400.0,
            };
            format_alert(&e, "Room 14", off).unwrap() + "\n"
        })
        .collect();
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/critical_alerts.txt")).unwrap();
    assert_eq!(got.as_bytes(), golden.as_bytes());
}

#[test]
fn outage_keeps_newest_hundred() {
    let mut cfg = config(dead_url());
    cfg.max_retries = 0;
    let mut d = Dispatcher::new(cfg, None).unwrap();
    for id in 1..=150 {
        d.dispatch(&event(id, ActivityClass::A43)).unwrap();
    }
    assert_eq!(d.queued(), 100);
    assert_eq!(d.dropped(), 50);
    assert_eq!(d.queued_event_ids(), (51..=150).collect::<Vec<_>>());
}

#[test]
fn worker_delivers_in_order_and_logs_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("deliveries.jsonl");
    let mock = MockGateway::start().unwrap();
    let mut cfg = config(mock.base_url());
    cfg.recipients.push("+14155550100".into());
    let (tx, worker) = spawn_dispatcher(Dispatcher::new(cfg, Some(&log_path)).unwrap(), 8);
    for (id, class) in [(1, ActivityClass::A43), (2, ActivityClass::A103), (3, ActivityClass::A48)] {
        tx.send(event(id, class)).unwrap();
    }
    drop(tx);
    let d = worker.join().unwrap();
    assert_eq!(d.results().len(), 4);
    let log = load_delivery_log(&log_path).unwrap();
    let ids: Vec<_> = log.iter().map(|r| (r.event_id.unwrap(), r.to.as_str())).collect();
    assert_eq!(ids, [(1, "+821012345678"), (1, "+14155550100"), (3, "+821012345678"), (3, "+14155550100")]);
    assert!(log.iter().all(|r| r.accepted && r.attempts == 1));
    assert_eq!(mock.requests().len(), 4);
}

#[test]
fn secret_never_logged_or_reported() {
    capture_logs();
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("deliveries.jsonl");
    let mut reported = Vec::new();

    let mock = MockGateway::with_script(vec![401, 500, 503, 400]).unwrap();
    let cfg = config(mock.base_url());
    for _ in 0..3 {
        let r = send_sms(&request("x"), &cfg);
        reported.push(format!("{r:?}"));
        reported.push(serde_json::to_string(&r).unwrap());
    }
    let mut bad = config(dead_url());
    bad.max_retries = 1;
    let r = send_sms(&request("x"), &bad);
    reported.push(format!("{r:?} {:?}", r.error));
    bad.account_sid = String::new();
    reported.push(bad.validate().unwrap_err().to_string());
    reported.push(format!("{bad:?}"));
    reported.push(serde_json::to_string(&bad).unwrap());

    let mut d = Dispatcher::new(config(dead_url()), Some(&log_path)).unwrap();
    d.dispatch(&event(1, ActivityClass::A43)).unwrap();
    d.flush_log().unwrap();
    reported.push(std::fs::read_to_string(&log_path).unwrap());

    let logs = LINES.lock().unwrap().clone();
    assert!(!logs.is_empty());
    let encoded = base64::engine::general_purpose::STANDARD.encode(format!("AC0123456789abcdef:{TOKEN}"));
    for text in logs.iter().chain(&reported) {
        assert!(!text.contains(TOKEN), "secret leaked: {text}");
        assert!(!text.contains(&encoded), "credentials leaked: {text}");
    }
}
