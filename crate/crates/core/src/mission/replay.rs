//! JSON-lines event logs and their replay.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::wire::ServerMessage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub messages: Vec<ServerMessage>,
    /// Set when the log ends in a partial or unreadable line.
    pub truncated: Option<String>,
}

/// Parses a log; everything from the first bad line on is dropped and reported.
pub fn parse_event_log(reader: impl Read) -> std::io::Result<EventLog> {
    let mut messages = Vec::new();
    let mut truncated = None;
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ServerMessage>(&line) {
            Ok(m) => messages.push(m),
            Err(e) => {
                truncated = Some(format!("line {}: {e}", n + 1));
                break;
            }
        }
    }
    Ok(EventLog {
        messages,
        truncated,
    })
}

pub fn read_event_log(path: &Path) -> Result<EventLog> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_event_log(f).map_err(|e| Error::io(path, e))
}

/// Messages with timestamps divided by `speed`; payloads are untouched.
pub fn replay_messages(log: &EventLog, speed: f64) -> Result<Vec<ServerMessage>> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::Config(format!(
            "replay speed must be positive, got {speed}"
        )));
    }
    Ok(log
        .messages
        .iter()
        .map(|m| ServerMessage {
            t: m.t / speed,
            ..m.clone()
        })
        .collect())
}

/// Streams a log to `sink`, sleeping between messages when `paced`.
pub fn replay(
    path: &Path,
    speed: f64,
    paced: bool,
    mut sink: impl FnMut(&ServerMessage) -> Result<()>,
) -> Result<EventLog> {
    let log = read_event_log(path)?;
    if let Some(w) = &log.truncated {
        log::warn!(
            "{}: log truncated at {w}; replaying {} messages",
            path.display(),
            log.messages.len()
        );
    }
    let start = std::time::Instant::now();
    for m in replay_messages(&log, speed)? {
        if paced {
            let due = std::time::Duration::from_secs_f64(m.t.max(0.0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        sink(&m)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::wire::{EventMsg, ServerBody};

    fn log_text(n: usize) -> String {
        (0..n)
            .map(|i| {
                ServerMessage {
                    seq: i as u64,
                    t: i as f64 * 0.1,
                    body: ServerBody::Event(EventMsg::Warning {
                        message: format!("m{i}"),
                    }),
                    to: None,
                }
                .to_json()
                    + "\n"
            })
            .collect()
    }

    #[test]
    fn speed_one_is_identity() {
        let log = parse_event_log(log_text(5).as_bytes()).unwrap();
        assert_eq!(replay_messages(&log, 1.0).unwrap(), log.messages);
        assert!(log.truncated.is_none());
    }

    #[test]
    fn speed_ten_compresses_time_only() {
        let log = parse_event_log(log_text(5).as_bytes()).unwrap();
        let fast = replay_messages(&log, 10.0).unwrap();
        for (a, b) in log.messages.iter().zip(&fast) {
            assert_eq!(a.body, b.body);
            assert_eq!(a.seq, b.seq);
            assert!((b.t - a.t / 10.0).abs() < 1e-15);
        }
        assert!(replay_messages(&log, 0.0).is_err());
    }

    #[test]
    fn truncated_log_gives_prefix() {
        let text = log_text(5);
        let cut = &text[..text.len() - 20];
        let log = parse_event_log(cut.as_bytes()).unwrap();
        assert_eq!(log.messages.len(), 4);
        assert!(log.truncated.is_some());
        let full = parse_event_log(text.as_bytes()).unwrap();
        assert_eq!(&full.messages[..4], &log.messages[..]);
    }
}
