//! Re-running a recorded session through a fresh [`Session`].

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::warn;

use crate::forest::ForestModel;
use crate::gesture::GestureClass;
use crate::protocol::Decoded;
use crate::session::{EnsembleTick, Session};
use crate::session_log::{model_digest, LogRecord, SessionLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplayOptions {
    /// Playback rate relative to the recording; 0 means as fast as possible.
    pub speed: f64,
    pub threshold: Option<f64>,
    pub rate_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub ticks: Vec<EnsembleTick>,
    /// Whether the supplied model is the one the session was recorded with.
    pub model_matches: bool,
}

/// Feeds every record of `log` back through a new session built from `model`
/// and the logged configuration, calling `on_tick` as each tick completes.
pub fn replay(
    log: &SessionLog,
    model: Arc<ForestModel>,
    options: ReplayOptions,
    mut on_tick: impl FnMut(&EnsembleTick),
) -> Result<ReplayOutcome> {
    let Some(header) = &log.header else {
        return Ok(ReplayOutcome {
            ticks: Vec::new(),
            model_matches: true,
        });
    };
    if options.speed < 0.0 || !options.speed.is_finite() {
        return Err(Error::Config(format!(
            "replay speed must be >= 0, got {}",
            options.speed
        )));
    }
    let model_matches = model_digest(&model) == header.model_digest;
    if !model_matches {
        warn!("replaying with a different model than the one recorded; ticks will differ");
    }
    let mut config = header.config;
    if let Some(t) = options.threshold {
        config.flux.threshold = t;
    }
    if let Some(r) = options.rate_limit {
        config.flux.rate_limit = r;
    }
    let mut session = Session::new(model, config)?;

    let started = Instant::now();
    let first_time = log.ticks().next().map(|t| t.time).unwrap_or(0.0);
    let mut ticks = Vec::new();
    for record in &log.records {
        match record {
            LogRecord::Inbound {
                arrival,
                from,
                message,
            } => {
                session.handle_message(*from, message, *arrival);
            }
            LogRecord::Unknown {
                arrival,
                from,
                address,
            } => {
                session.apply_decoded(*from, &Decoded::Unknown(address.clone()), *arrival);
            }
            LogRecord::Malformed { .. } => session.note_malformed(),
            LogRecord::Overrun { .. } => {}
            LogRecord::Tick(logged) => {
                if options.speed > 0.0 {
                    let due = Duration::from_secs_f64(
                        ((logged.time - first_time) / options.speed).max(0.0),
                    );
                    if let Some(wait) = due.checked_sub(started.elapsed()) {
                        std::thread::sleep(wait);
                    }
                }
                let (tick, _) = session.tick(logged.time)?;
                on_tick(&tick);
                ticks.push(tick);
            }
        }
    }
    Ok(ReplayOutcome {
        ticks,
        model_matches,
    })
}

/// Per-performer `(time, gesture)` sequences, the comparison key for replays.
pub fn gesture_sequences<'a>(
    ticks: impl IntoIterator<Item = &'a EnsembleTick>,
) -> BTreeMap<String, Vec<(f64, GestureClass)>> {
    let mut out: BTreeMap<String, Vec<(f64, GestureClass)>> = BTreeMap::new();
    for t in ticks {
        for (id, g) in &t.per_performer {
            out.entry(id.clone()).or_default().push((t.time, g.gesture));
        }
    }
    out
}

pub fn new_idea_times<'a>(ticks: impl IntoIterator<Item = &'a EnsembleTick>) -> Vec<f64> {
    ticks
        .into_iter()
        .filter(|t| t.new_idea)
        .map(|t| t.time)
        .collect()
}
