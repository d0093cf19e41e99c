use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::sim::Scenario;

use super::replay::{record_trial, LogEntry};
use super::session::{Command, CommandError, ErrorBody, Reply, Session, DEFAULT_TICK_RATE, PROTOCOL_VERSION};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub tick_rate: f64,
    /// Outgoing messages buffered per client before the oldest is dropped.
    pub queue_capacity: usize,
    pub heartbeat: Duration,
    /// Trial records are appended here.
    pub trial_log: Option<PathBuf>,
    /// Every applied command is appended here with its tick, for replay.
    pub command_log: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 7878)),
            tick_rate: DEFAULT_TICK_RATE,
            queue_capacity: 256,
            heartbeat: Duration::from_secs(1),
            trial_log: None,
            command_log: None,
        }
    }
}

/// Message wrapper used in both directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default)]
    pub tick: u64,
    pub payload: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub tick_rate: f64,
    pub seed: u64,
    pub targets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    /// `seq` of the client message this answers.
    pub in_reply_to: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<Reply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub uptime_ms: u64,
}

/// Timing of the simulation loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LoopStats {
    pub ticks: u64,
    pub period_ms: f64,
    /// Largest |interval - period| between consecutive tick starts.
    pub max_jitter_ms: f64,
    pub mean_interval_ms: f64,
    /// Ticks whose start was rescheduled because the previous tick overran.
    pub overruns: u64,
    pub dropped_messages: u64,
    pub clients_seen: u64,
}

/// Bounded drop-oldest queue feeding one client's writer thread.
struct Outbox {
    state: Mutex<OutboxState>,
    ready: Condvar,
    capacity: usize,
}

struct OutboxState {
    lines: VecDeque<String>,
    seq: u64,
    closed: bool,
    dropped: u64,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Self {
            state: Mutex::new(OutboxState {
                lines: VecDeque::new(),
                seq: 0,
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    /// Queues a message; `payload` is already JSON.
    fn push(&self, kind: &str, tick: u64, payload: &str) {
        let mut s = self.state.lock().expect("outbox lock");
        if s.closed {
            return;
        }
        let seq = s.seq;
        s.seq += 1;
        if s.lines.len() == self.capacity {
            s.lines.pop_front();
            s.dropped += 1;
        }
        s.lines.push_back(format!(
            r#"{{"type":"{kind}","seq":{seq},"tick":{tick},"payload":{payload}}}"#
        ));
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<String> {
        let mut s = self.state.lock().expect("outbox lock");
        loop {
            if let Some(l) = s.lines.pop_front() {
                return Some(l);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("outbox lock");
        }
    }

    fn close(&self) {
        self.state.lock().expect("outbox lock").closed = true;
        self.ready.notify_all();
    }

    fn is_closed(&self) -> bool {
        self.state.lock().expect("outbox lock").closed
    }

    fn dropped(&self) -> u64 {
        self.state.lock().expect("outbox lock").dropped
    }
}

struct Client {
    id: u64,
    outbox: Arc<Outbox>,
}

struct Incoming {
    client: u64,
    seq: Option<u64>,
    command: Result<Command, String>,
}

struct Shared {
    stop: AtomicBool,
    tick: AtomicU64,
    clients: Mutex<Vec<Client>>,
    stats: Mutex<LoopStats>,
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> LoopStats {
        *self.shared.stats.lock().expect("stats lock")
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    /// Stops the loop and the acceptor and returns the final timing.
    pub fn stop(mut self) -> LoopStats {
        self.shutdown();
        self.stats()
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        for c in self.shared.clients.lock().expect("clients lock").drain(..) {
            c.outbox.close();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds the listener and starts the loop. Bind failures are the only errors.
pub fn serve(scenario: Arc<Scenario>, config: ServerConfig) -> std::io::Result<ServerHandle> {
    if !(config.tick_rate > 0.0 && config.tick_rate.is_finite()) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "tick rate must be positive",
        ));
    }
    let listener = TcpListener::bind(config.addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        tick: AtomicU64::new(0),
        clients: Mutex::new(Vec::new()),
        stats: Mutex::new(LoopStats {
            period_ms: 1000.0 / config.tick_rate,
            ..LoopStats::default()
        }),
    });
    let (tx, rx) = channel();
    let hello = serde_json::to_string(&Hello {
        version: PROTOCOL_VERSION,
        tick_rate: config.tick_rate,
        seed: scenario.seed(),
        targets: scenario.targets().iter().map(|t| t.id.clone()).collect(),
    })
    .expect("hello serializes");

    let acceptor = {
        let shared = Arc::clone(&shared);
        let capacity = config.queue_capacity;
        std::thread::spawn(move || accept_loop(listener, shared, tx, capacity, hello))
    };
    let sim = {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || run_loop(scenario, config, shared, rx))
    };
    Ok(ServerHandle {
        addr,
        shared,
        threads: vec![sim, acceptor],
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, tx: Sender<Incoming>, capacity: usize, hello: String) {
    let mut next_id = 0;
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let id = next_id;
                next_id += 1;
                let outbox = Arc::new(Outbox::new(capacity));
                outbox.push("hello", shared.tick.load(Ordering::SeqCst), &hello);
                if let Ok(read_half) = stream.try_clone() {
                    let tx = tx.clone();
                    let out = Arc::clone(&outbox);
                    std::thread::spawn(move || read_client(id, read_half, tx, out));
                    let out = Arc::clone(&outbox);
                    std::thread::spawn(move || write_client(stream, out));
                    shared.clients.lock().expect("clients lock").push(Client { id, outbox });
                    shared.stats.lock().expect("stats lock").clients_seen += 1;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(_) => std::thread::sleep(Duration::from_millis(10)),
        }
    }
}

#[derive(Deserialize)]
struct ClientMessage<'a> {
    #[serde(rename = "type")]
    kind: String,
    seq: Option<u64>,
    #[serde(borrow)]
    payload: Option<&'a RawValue>,
}

fn parse_client_line(line: &str) -> (Option<u64>, Result<Command, String>) {
    let msg: ClientMessage = match serde_json::from_str(line) {
        Ok(m) => m,
        Err(e) => return (None, Err(format!("malformed message: {e}"))),
    };
    if msg.kind != "command" {
        return (msg.seq, Err(format!("unknown message type '{}'", msg.kind)));
    }
    let Some(payload) = msg.payload else {
        return (msg.seq, Err("command without payload".into()));
    };
    (
        msg.seq,
        serde_json::from_str(payload.get()).map_err(|e| format!("bad command: {e}")),
    )
}

fn read_client(id: u64, stream: TcpStream, tx: Sender<Incoming>, outbox: Arc<Outbox>) {
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let (seq, command) = parse_client_line(&line);
        if tx
            .send(Incoming {
                client: id,
                seq,
                command,
            })
            .is_err()
        {
            break;
        }
    }
    outbox.close();
}

fn write_client(mut stream: TcpStream, outbox: Arc<Outbox>) {
    while let Some(line) = outbox.pop() {
        if stream
            .write_all(line.as_bytes())
            .and_then(|_| stream.write_all(b"\n"))
            .is_err()
        {
            outbox.close();
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn append_line(path: &Option<PathBuf>, value: &impl Serialize) {
    let Some(path) = path else { return };
    let line = serde_json::to_string(value).expect("log entries serialize");
    let res = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| writeln!(f, "{line}"));
    if let Err(e) = res {
        eprintln!("spinenav: cannot append to {}: {e}", path.display());
    }
}

/// The simulation thread: absolute-deadline ticks, commands applied in
/// arrival order, one state broadcast per tick.
fn run_loop(scenario: Arc<Scenario>, config: ServerConfig, shared: Arc<Shared>, rx: Receiver<Incoming>) {
    let period = Duration::from_secs_f64(1.0 / config.tick_rate);
    let mut session = Session::new(scenario, config.tick_rate);
    let started = Instant::now();
    let mut deadline = started;
    let mut last_start: Option<Instant> = None;
    let mut next_heartbeat = started + config.heartbeat;
    let mut interval_sum = 0.0;
    let mut intervals = 0u64;
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < deadline {
            std::thread::sleep(deadline - now);
        }
        let tick_start = Instant::now();
        let mut jitter = None;
        if let Some(prev) = last_start {
            let interval = (tick_start - prev).as_secs_f64() * 1000.0;
            interval_sum += interval;
            intervals += 1;
            jitter = Some((interval - period.as_secs_f64() * 1000.0).abs());
        }
        last_start = Some(tick_start);

        let tick = session.tick();
        let clients: Vec<(u64, Arc<Outbox>)> = {
            let mut list = shared.clients.lock().expect("clients lock");
            list.retain(|c| !c.outbox.is_closed());
            list.iter().map(|c| (c.id, Arc::clone(&c.outbox))).collect()
        };
        let reply_to = |id: u64, kind: &str, payload: &str| {
            if let Some((_, o)) = clients.iter().find(|(cid, _)| *cid == id) {
                o.push(kind, tick, payload);
            }
        };
        while let Ok(msg) = rx.try_recv() {
            let ack = match msg.command {
                Ok(cmd) => {
                    append_line(
                        &config.command_log,
                        &LogEntry {
                            tick,
                            command: cmd.clone(),
                        },
                    );
                    match session.apply(&cmd) {
                        Ok(reply) => {
                            if let Reply::TrialRecorded { record } = &reply {
                                if let Some(p) = &config.trial_log {
                                    if let Err(e) = record_trial(p, record) {
                                        eprintln!("spinenav: cannot append trial record: {e}");
                                    }
                                }
                            }
                            Ack {
                                in_reply_to: msg.seq,
                                ok: true,
                                reply: Some(reply),
                                error: None,
                            }
                        }
                        Err(e) => nack(msg.seq, &e),
                    }
                }
                Err(message) => Ack {
                    in_reply_to: msg.seq,
                    ok: false,
                    reply: None,
                    error: Some(ErrorBody {
                        code: "BadParams".into(),
                        message,
                    }),
                },
            };
            reply_to(msg.client, "ack", &serde_json::to_string(&ack).expect("acks serialize"));
        }

        session.step();
        let state = serde_json::to_string(&session.snapshot()).expect("snapshots serialize");
        let tick = session.tick();
        shared.tick.store(tick, Ordering::SeqCst);
        for (_, o) in &clients {
            o.push("state", tick, &state);
        }
        let now = Instant::now();
        if now >= next_heartbeat {
            let hb = Heartbeat {
                uptime_ms: (now - started).as_millis() as u64,
            };
            let payload = serde_json::to_string(&hb).expect("heartbeat serializes");
            for (_, o) in &clients {
                o.push("heartbeat", tick, &payload);
            }
            next_heartbeat += config.heartbeat;
        }

        {
            let mut s = shared.stats.lock().expect("stats lock");
            s.ticks = tick;
            if let Some(j) = jitter {
                s.max_jitter_ms = s.max_jitter_ms.max(j);
                s.mean_interval_ms = interval_sum / intervals as f64;
            }
            s.dropped_messages = clients.iter().map(|(_, o)| o.dropped()).sum();
        }

        deadline += period;
        // After an overrun (a registration solve, say) restart the schedule
        // instead of firing a burst of catch-up ticks.
        let now = Instant::now();
        if now > deadline + period {
            deadline = now;
            shared.stats.lock().expect("stats lock").overruns += 1;
        }
    }
}

fn nack(seq: Option<u64>, e: &CommandError) -> Ack {
    Ack {
        in_reply_to: seq,
        ok: false,
        reply: None,
        error: Some(e.body()),
    }
}
