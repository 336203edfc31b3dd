//! WebSocket service: one mission loop, one reader/writer thread per connection.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use sylva_core::mission::{
    parse_client_message, read_event_log, replay_messages, write_outputs, ClientId, MissionConfig,
    MissionRunner, ServerMessage,
};
use tungstenite::{Message, WebSocket};

pub struct ServeOptions {
    pub bind: String,
    pub speed: f64,
    pub exit_on_end: bool,
}

enum Incoming {
    Joined(ClientId, Sender<String>),
    Text(ClientId, String),
    Gone(ClientId),
}

/// How long a connection thread blocks on a read before flushing its outbox.
const POLL: Duration = Duration::from_millis(10);

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn connection(
    mut ws: WebSocket<TcpStream>,
    id: ClientId,
    tx: Sender<Incoming>,
    rx: Receiver<String>,
) {
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    'outer: loop {
        loop {
            match rx.try_recv() {
                Ok(text) => {
                    if ws.send(Message::text(text)).is_err() {
                        break 'outer;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'outer,
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if tx.send(Incoming::Text(id, t.to_string())).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(Incoming::Gone(id));
}

fn accept_loop(listener: TcpListener, tx: Sender<Incoming>) {
    let mut next_id: ClientId = 1;
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let Ok(ws) = tungstenite::accept(stream) else {
            continue;
        };
        let id = next_id;
        next_id += 1;
        let (out_tx, out_rx) = channel();
        if tx.send(Incoming::Joined(id, out_tx)).is_err() {
            return;
        }
        let tx = tx.clone();
        std::thread::spawn(move || connection(ws, id, tx, out_rx));
    }
}

fn bind(addr: &str) -> Result<TcpListener> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    println!("listening on ws://{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    Ok(listener)
}

pub fn serve(cfg: MissionConfig, opts: ServeOptions) -> Result<()> {
    anyhow::ensure!(
        opts.speed > 0.0 && opts.speed.is_finite(),
        "speed must be positive"
    );
    let out_dir = cfg.output.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut log = match &out_dir {
        Some(dir) => {
            let p = dir.join("events.jsonl");
            Some(std::io::BufWriter::new(
                std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => None,
    };
    let tick = Duration::from_secs_f64(1.0 / (cfg.tick_hz * opts.speed));
    let mut runner = MissionRunner::new(cfg)?;
    let listener = bind(&opts.bind)?;
    let (tx, rx) = channel();
    std::thread::spawn(move || accept_loop(listener, tx));

    let mut clients: BTreeMap<ClientId, Sender<String>> = BTreeMap::new();
    let mut next = Instant::now();
    let mut written = false;
    let mut last_beat = Instant::now();
    loop {
        loop {
            match rx.try_recv() {
                Ok(Incoming::Joined(id, out)) => {
                    log::info!("client {id} connected");
                    clients.insert(id, out);
                    runner.snapshot_for(id);
                }
                Ok(Incoming::Text(id, text)) => match parse_client_message(&text) {
                    Ok(msg) => runner.submit(id, msg),
                    Err((seq, reason)) => runner.reject_malformed(id, seq, reason),
                },
                Ok(Incoming::Gone(id)) => {
                    log::info!("client {id} disconnected");
                    clients.remove(&id);
                    runner.disconnect(id);
                }
                Err(_) => break,
            }
        }
        let finished_before = runner.is_finished();
        runner.step()?;
        if finished_before && last_beat.elapsed() >= Duration::from_millis(200) {
            runner.heartbeat();
            last_beat = Instant::now();
        }
        let msgs = runner.drain_outbox();
        if let Some(w) = &mut log {
            if !finished_before {
                for m in &msgs {
                    writeln!(w, "{}", m.to_json())?;
                }
            }
        }
        fan_out(&mut clients, &msgs);

        if runner.is_finished() && !written {
            written = true;
            let mut output = runner.finalize()?;
            let msgs = runner.drain_outbox();
            if let Some(w) = &mut log {
                for m in &msgs {
                    writeln!(w, "{}", m.to_json())?;
                }
                w.flush()?;
            }
            fan_out(&mut clients, &msgs);
            if let Some(dir) = &out_dir {
                write_outputs(&mut output, dir)?;
                log::info!("outputs written to {}", dir.display());
            }
            print!("{}", output.report.to_text());
            std::io::stdout().flush()?;
            if opts.exit_on_end {
                // Give connection threads a moment to deliver the last messages.
                std::thread::sleep(Duration::from_millis(200));
                return Ok(());
            }
        }
        next += tick;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

fn fan_out(clients: &mut BTreeMap<ClientId, Sender<String>>, msgs: &[ServerMessage]) {
    for m in msgs {
        let text = m.to_json();
        match m.to {
            Some(c) => {
                if let Some(tx) = clients.get(&c) {
                    let _ = tx.send(text);
                }
            }
            None => {
                for tx in clients.values() {
                    let _ = tx.send(text.clone());
                }
            }
        }
    }
}

/// Streams a recorded log to the first client that connects, then closes.
pub fn serve_replay(path: &Path, speed: f64, paced: bool, port: u16) -> Result<()> {
    let log = read_event_log(path)?;
    if let Some(w) = &log.truncated {
        eprintln!(
            "warning: log truncated ({w}); replaying {} messages",
            log.messages.len()
        );
    }
    let msgs = replay_messages(&log, speed)?;
    let listener = bind(&format!("127.0.0.1:{port}"))?;
    let (stream, _) = listener.accept()?;
    let mut ws =
        tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    let start = Instant::now();
    for m in msgs {
        if paced {
            let due = Duration::from_secs_f64(m.t.max(0.0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        ws.send(Message::text(m.to_json()))?;
    }
    ws.close(None)?;
    // Drain until the peer acknowledges the close, or give up after a while.
    ws.get_ref()
        .set_read_timeout(Some(Duration::from_secs(2)))?;
    while ws.read().is_ok() {}
    Ok(())
}
