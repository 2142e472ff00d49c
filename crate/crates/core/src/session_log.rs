//! Line-delimited JSON session log.
//!
//! The first line is a [`LogHeader`]; every following line is one
//! [`LogRecord`]. Inbound records hold the decoded message and its arrival
//! time on the session clock, so feeding them back through a [`Session`]
//! reproduces the logged ticks.
//!
//! [`Session`]: crate::session::Session

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::forest::{save_model, ForestModel};
use crate::protocol::{Decoded, Message};
use crate::session::{Destination, EnsembleTick, SessionConfig};
use crate::{Error, Result};

pub const LOG_SCHEMA: &str = "mt-session-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub session_id: String,
    /// Wall-clock start, seconds since the Unix epoch.
    pub started_unix: f64,
    pub config: SessionConfig,
    pub model_digest: String,
    #[serde(default)]
    pub model_path: Option<String>,
    /// Session seconds per wall-clock second.
    #[serde(default = "one")]
    pub clock_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl LogHeader {
    pub fn new(
        session_id: impl Into<String>,
        started_unix: f64,
        config: SessionConfig,
        model: &ForestModel,
    ) -> Self {
        LogHeader {
            schema: LOG_SCHEMA.into(),
            version: LOG_VERSION,
            session_id: session_id.into(),
            started_unix,
            config,
            model_digest: model_digest(model),
            model_path: None,
            clock_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogRecord {
    Inbound {
        arrival: f64,
        from: Destination,
        message: Message,
    },
    Unknown {
        arrival: f64,
        from: Destination,
        address: String,
    },
    Malformed {
        arrival: f64,
        from: Destination,
        len: usize,
        error: String,
    },
    Tick(EnsembleTick),
    /// Ticks dropped because the previous one ran long.
    Overrun {
        time: f64,
        skipped: u64,
    },
}

impl LogRecord {
    pub fn from_decoded(arrival: f64, from: Destination, decoded: Decoded) -> Self {
        match decoded {
            Decoded::Message(message) => LogRecord::Inbound {
                arrival,
                from,
                message,
            },
            Decoded::Unknown(address) => LogRecord::Unknown {
                arrival,
                from,
                address,
            },
        }
    }
}

/// FNV-1a over the serialised model, as 16 hex digits.
pub fn model_digest(model: &ForestModel) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in save_model(model) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> Result<Self> {
        let mut line =
            serde_json::to_string(header).map_err(|e| Error::InvalidEvent(e.to_string()))?;
        line.push('\n');
        out.write_all(line.as_bytes())?;
        Ok(LogWriter { out })
    }

    /// Writes one record as a single `write_all`, so a record is never split.
    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let mut line =
            serde_json::to_string(record).map_err(|e| Error::InvalidEvent(e.to_string()))?;
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    /// `None` for an empty file.
    pub header: Option<LogHeader>,
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn ticks(&self) -> impl Iterator<Item = &EnsembleTick> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Tick(t) => Some(t),
            _ => None,
        })
    }

    pub fn new_idea_times(&self) -> Vec<f64> {
        self.ticks()
            .filter(|t| t.new_idea)
            .map(|t| t.time)
            .collect()
    }
}

/// Parses a whole log. Blank lines are skipped; anything else that fails to
/// parse is reported with its 1-based line number.
pub fn read_log<R: BufRead>(input: R) -> Result<SessionLog> {
    let mut log = SessionLog::default();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedLog {
            line: line_no,
            reason,
        };
        match &log.header {
            None => {
                let header: LogHeader =
                    serde_json::from_str(&line).map_err(|e| bad(format!("bad header: {e}")))?;
                if header.schema != LOG_SCHEMA {
                    return Err(bad(format!("unknown schema {:?}", header.schema)));
                }
                if header.version != LOG_VERSION {
                    return Err(bad(format!("unsupported log version {}", header.version)));
                }
                header.config.validate().map_err(|e| bad(e.to_string()))?;
                log.header = Some(header);
            }
            Some(_) => {
                let record: LogRecord =
                    serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                log.records.push(record);
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TransitionMatrix;
    use crate::forest::{train, ForestParams};
    use crate::synth::build_corpus;
    use std::collections::BTreeMap;

    fn header() -> LogHeader {
        let model = train(
            &build_corpus(10, 1).unwrap(),
            &ForestParams {
                tree_count: 3,
                ..ForestParams::with_seed(1)
            },
        )
        .unwrap();
        LogHeader::new("s1", 1_700_000_000.0, SessionConfig::default(), &model)
    }

    fn records() -> Vec<LogRecord> {
        vec![
            LogRecord::Inbound {
                arrival: 0.25,
                from: Destination::Bridge(2),
                message: Message::Touch {
                    performer_id: "a".into(),
                    time: 0.1,
                    x: 0.3,
                    y: 0.7,
                    velocity: -1.0,
                },
            },
            LogRecord::Unknown {
                arrival: 0.5,
                from: Destination::Local,
                address: "/x".into(),
            },
            LogRecord::Malformed {
                arrival: 0.75,
                from: Destination::Local,
                len: 3,
                error: "short".into(),
            },
            LogRecord::Tick(EnsembleTick {
                time: 1.0,
                per_performer: BTreeMap::new(),
                ensemble_matrix: TransitionMatrix::zero(),
                flux_now: 0.1 + 0.2,
                flux_prev: 0.0,
                new_idea: false,
                suppressed: false,
                tick_duration: 1e-5,
                lag: 0.0,
            }),
            LogRecord::Overrun {
                time: 2.0,
                skipped: 1,
            },
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let mut w = LogWriter::new(Vec::new(), &header()).unwrap();
        for r in records() {
            w.append(&r).unwrap();
        }
        let bytes = w.into_inner();
        let log = read_log(bytes.as_slice()).unwrap();
        assert_eq!(log.header, Some(header()));
        assert_eq!(log.records, records());
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 6);
    }

    #[test]
    fn empty_log_has_no_ticks() {
        let log = read_log(&b""[..]).unwrap();
        assert!(log.header.is_none());
        assert_eq!(log.ticks().count(), 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut w = LogWriter::new(Vec::new(), &header()).unwrap();
        w.append(&records()[0]).unwrap();
        let mut bytes = w.into_inner();
        bytes.extend_from_slice(b"{\"kind\":\"tick\"}\n");
        match read_log(bytes.as_slice()) {
            Err(Error::MalformedLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_log(&b"not json\n"[..]) {
            Err(Error::MalformedLog { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut h = serde_json::to_value(header()).unwrap();
        h["version"] = 99.into();
        let text = format!("{h}\n");
        let err = read_log(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }
}
