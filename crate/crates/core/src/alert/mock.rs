//! A minimal in-process HTTP server standing in for the SMS provider.
//!
//! Responses follow a script of status codes, one per request; once the
//! script runs out every request gets 201. Each request is recorded with its
//! arrival time, headers and body.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime};

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub received: Instant,
    pub received_at: SystemTime,
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub status: u16,
}

impl RecordedRequest {
    /// Case-insensitive header lookup.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Decoded form fields in wire order.
    pub fn form(&self) -> Vec<(String, String)> {
        form_urlencoded::parse(self.body.as_bytes()).into_owned().collect()
    }

    pub fn form_value(&self, key: &str) -> Option<String> {
        self.form().into_iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Default)]
struct State {
    script: VecDeque<u16>,
    requests: Vec<RecordedRequest>,
    delay: Duration,
}

pub struct MockGateway {
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl MockGateway {
    /// Listens on an ephemeral localhost port and accepts everything with 201.
    pub fn start() -> std::io::Result<Self> {
        Self::with_script(Vec::new())
    }

    pub fn with_script(statuses: Vec<u16>) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", statuses)
    }

    pub fn bind(addr: &str, statuses: Vec<u16>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(State {
            script: statuses.into(),
            ..Default::default()
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    match conn {
                        Ok(stream) => {
                            if let Err(e) = serve(stream, &state) {
                                log::debug!("mock gateway connection error: {e}");
                            }
                        }
                        Err(e) => log::debug!("mock gateway accept error: {e}"),
                    }
                }
            })
        };
        Ok(Self {
            addr,
            state,
            stop,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Holds every response for `delay` before writing it.
    pub fn set_delay(&self, delay: Duration) {
        self.lock().delay = delay;
    }

    pub fn push_statuses(&self, statuses: &[u16]) {
        self.lock().script.extend(statuses);
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.lock().requests.clone()
    }

    /// Blocks until the server is stopped, for the command-line mock.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Drop for MockGateway {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(w) = self.worker.take() {
            // wake the accept loop
            let _ = TcpStream::connect(self.addr);
            let _ = w.join();
        }
    }
}

fn serve(stream: TcpStream, state: &Mutex<State>) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let received = Instant::now();
    let received_at = SystemTime::now();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let l = line.trim_end_matches(['\r', '\n']);
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .find(|(k, _): &&(String, String)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
    };
    let body = if find("transfer-encoding").is_some_and(|v| v.eq_ignore_ascii_case("chunked")) {
        read_chunked(&mut reader)?
    } else {
        let n: usize = find("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
        let mut buf = vec![0u8; n];
        reader.read_exact(&mut buf)?;
        buf
    };

    let (status, delay, seq) = {
        let mut s = state.lock().unwrap_or_else(|p| p.into_inner());
        let status = s.script.pop_front().unwrap_or(201);
        s.requests.push(RecordedRequest {
            received,
            received_at,
            method,
            path,
            headers,
            body: String::from_utf8_lossy(&body).into_owned(),
            status,
        });
        (status, s.delay, s.requests.len())
    };
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    let (reason, payload) = match status {
        201 => ("Created", format!(r#"{{"sid":"SM{seq:032x}","status":"queued"}}"#)),
        401 => ("Unauthorized", r#"{"code":20003,"message":"Authenticate","status":401}"#.to_string()),
        400..=499 => ("Bad Request", format!(r#"{{"code":21211,"message":"Invalid request","status":{status}}}"#)),
        _ => ("Server Error", format!(r#"{{"message":"Service unavailable","status":{status}}}"#)),
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

fn read_chunked(reader: &mut impl BufRead) -> std::io::Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let size = usize::from_str_radix(line.trim().split(';').next().unwrap_or("0"), 16)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if size == 0 {
            line.clear();
            reader.read_line(&mut line)?;
            return Ok(body);
        }
        let start = body.len();
        body.resize(start + size, 0);
        reader.read_exact(&mut body[start..])?;
        line.clear();
        reader.read_line(&mut line)?;
    }
}
