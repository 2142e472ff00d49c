//! Session state and the once-per-second classify-and-analyse tick.
//!
//! A [`Session`] is a plain single-owner state machine: the network layer
//! hands it decoded messages with their arrival time, and the scheduler calls
//! [`Session::tick`]. Given the same inputs in the same order it produces the
//! same ticks, which is what makes session logs replayable.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::dynamics::{FluxConfig, FluxState, GestureSequence, TransitionMatrix};
use crate::features::extract_features;
use crate::forest::ForestModel;
use crate::gesture::GestureClass;
use crate::protocol::{self, Decoded, Message};
use crate::touch::{TouchEvent, TouchPhase, TouchWindow, DEFAULT_WINDOW_SECS};
use crate::{Error, Result};

/// Where a performer's replies go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Destination {
    Datagram(SocketAddr),
    /// A stream-bridge connection, by connection number.
    Bridge(u64),
    /// In-process callers (tests, profiling).
    Local,
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Datagram(a) => write!(f, "udp:{a}"),
            Destination::Bridge(id) => write!(f, "bridge:{id}"),
            Destination::Local => f.write_str("local"),
        }
    }
}

impl FromStr for Destination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad destination {s:?}"));
        if s == "local" {
            return Ok(Destination::Local);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "udp" => rest.parse().map(Destination::Datagram).map_err(|_| bad()),
            "bridge" => rest.parse().map(Destination::Bridge).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Destination {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Destination {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Feature window length in seconds.
    pub window_secs: f64,
    pub flux: FluxConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            window_secs: DEFAULT_WINDOW_SECS,
            flux: FluxConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_secs > 0.0) {
            return Err(Error::Config("feature window must be positive".into()));
        }
        self.flux.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformerGesture {
    pub gesture: GestureClass,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTick {
    pub time: f64,
    pub per_performer: BTreeMap<String, PerformerGesture>,
    pub ensemble_matrix: TransitionMatrix,
    pub flux_now: f64,
    pub flux_prev: f64,
    pub new_idea: bool,
    /// A jump cleared the threshold but the rate limit held it back.
    #[serde(default)]
    pub suppressed: bool,
    /// Wall-clock compute time of the tick.
    pub tick_duration: f64,
    /// How late the tick started relative to its schedule (live server only).
    #[serde(default)]
    pub lag: f64,
}

impl EnsembleTick {
    /// True if the analysis content (everything except timing) is identical.
    pub fn same_analysis(&self, other: &EnsembleTick) -> bool {
        self.time.to_bits() == other.time.to_bits()
            && self.per_performer == other.per_performer
            && self.ensemble_matrix == other.ensemble_matrix
            && self.flux_now.to_bits() == other.flux_now.to_bits()
            && self.flux_prev.to_bits() == other.flux_prev.to_bits()
            && self.new_idea == other.new_idea
            && self.suppressed == other.suppressed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Destination,
    pub message: Message,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub messages: u64,
    pub malformed_packets: u64,
    pub unknown_addresses: u64,
    pub auto_registered: u64,
    pub out_of_order: u64,
    pub invalid_events: u64,
    pub address_changes: u64,
    /// Server-to-client messages that arrived inbound.
    pub ignored_messages: u64,
}

#[derive(Debug, Clone)]
pub struct Performer {
    pub address: Destination,
    pub app_name: Option<String>,
    pub registered_at: f64,
    pub last_seen: f64,
    window: TouchWindow,
    sequence: GestureSequence,
    /// Added to client timestamps to place them on the session clock.
    clock_offset: Option<f64>,
}

impl Performer {
    pub fn window(&self) -> &TouchWindow {
        &self.window
    }

    pub fn sequence(&self) -> &GestureSequence {
        &self.sequence
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformerStatus {
    pub performer_id: String,
    pub address: Destination,
    pub app_name: Option<String>,
    pub registered_at: f64,
    pub last_seen: f64,
    pub buffered_events: usize,
    pub last_gesture: Option<GestureClass>,
}

/// Effect of applying one inbound message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Registered,
    Touch,
    Departed,
    Ignored,
    Rejected,
}

pub struct Session {
    config: SessionConfig,
    model: Arc<ForestModel>,
    performers: BTreeMap<String, Performer>,
    flux: FluxState,
    counters: Counters,
    last_tick: Option<f64>,
}

impl Session {
    pub fn new(model: Arc<ForestModel>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Session {
            config,
            model,
            performers: BTreeMap::new(),
            flux: FluxState::new(config.flux),
            counters: Counters::default(),
            last_tick: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<ForestModel> {
        &self.model
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn flux_state(&self) -> &FluxState {
        &self.flux
    }

    pub fn performers(&self) -> &BTreeMap<String, Performer> {
        &self.performers
    }

    pub fn performer_status(&self) -> Vec<PerformerStatus> {
        self.performers
            .iter()
            .map(|(id, p)| PerformerStatus {
                performer_id: id.clone(),
                address: p.address,
                app_name: p.app_name.clone(),
                registered_at: p.registered_at,
                last_seen: p.last_seen,
                buffered_events: p.window.len(),
                last_gesture: p.sequence.samples().last().map(|&(_, g)| g),
            })
            .collect()
    }

    /// Decodes and applies one datagram. Returns the messages that were in
    /// it; a malformed packet leaves the session untouched.
    pub fn handle_packet(
        &mut self,
        from: Destination,
        bytes: &[u8],
        arrival: f64,
    ) -> Result<Vec<Message>> {
        let decoded = match protocol::decode_osc(bytes) {
            Ok(d) => d,
            Err(e) => {
                self.note_malformed();
                debug!(%from, len = bytes.len(), "dropping malformed packet: {e}");
                return Err(e);
            }
        };
        let mut applied = Vec::new();
        for d in decoded {
            self.apply_decoded(from, &d, arrival);
            if let Decoded::Message(m) = d {
                applied.push(m);
            }
        }
        Ok(applied)
    }

    pub fn apply_decoded(&mut self, from: Destination, decoded: &Decoded, arrival: f64) -> Applied {
        match decoded {
            Decoded::Message(m) => self.handle_message(from, m, arrival),
            Decoded::Unknown(addr) => {
                self.counters.unknown_addresses += 1;
                debug!(%from, addr, "ignoring unknown address");
                Applied::Ignored
            }
        }
    }

    /// Records a packet that failed to decode.
    pub fn note_malformed(&mut self) {
        self.counters.malformed_packets += 1;
    }

    fn register(&mut self, id: &str, from: Destination, now: f64) -> &mut Performer {
        let window_secs = self.config.window_secs;
        let p = self
            .performers
            .entry(id.to_string())
            .or_insert_with(|| Performer {
                address: from,
                app_name: None,
                registered_at: now,
                last_seen: now,
                window: TouchWindow::with_duration(id, window_secs),
                sequence: GestureSequence::new(id),
                clock_offset: None,
            });
        if p.address != from {
            warn!(performer = id, old = %p.address, new = %from, "performer moved to a new address");
            p.address = from;
            self.counters.address_changes += 1;
        }
        p.last_seen = p.last_seen.max(now);
        p
    }

    pub fn handle_message(
        &mut self,
        from: Destination,
        message: &Message,
        arrival: f64,
    ) -> Applied {
        self.counters.messages += 1;
        match message {
            Message::Hello {
                performer_id,
                app_name,
            } => {
                let p = self.register(performer_id, from, arrival);
                p.app_name = Some(app_name.clone());
                p.clock_offset = None;
                Applied::Registered
            }
            Message::Touch {
                performer_id,
                time,
                x,
                y,
                velocity,
            } => {
                let (phase, v) = if *velocity < 0.0 {
                    (TouchPhase::Down, 0.0)
                } else {
                    (TouchPhase::Move, *velocity as f64)
                };
                self.touch(
                    from,
                    performer_id,
                    *time,
                    Some((*x as f64, *y as f64)),
                    phase,
                    v,
                    arrival,
                )
            }
            Message::TouchEnded { performer_id, time } => self.touch(
                from,
                performer_id,
                *time,
                None,
                TouchPhase::Up,
                0.0,
                arrival,
            ),
            Message::Bye { performer_id } => {
                if self.performers.remove(performer_id).is_some() {
                    Applied::Departed
                } else {
                    Applied::Ignored
                }
            }
            Message::Gesture { .. } | Message::NewIdea { .. } => {
                self.counters.ignored_messages += 1;
                Applied::Ignored
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn touch(
        &mut self,
        from: Destination,
        id: &str,
        client_time: f64,
        pos: Option<(f64, f64)>,
        phase: TouchPhase,
        velocity: f64,
        arrival: f64,
    ) -> Applied {
        if !self.performers.contains_key(id) {
            warn!(performer = id, "touch before hello; registering");
            self.counters.auto_registered += 1;
        }
        let p = self.register(id, from, arrival);
        if !client_time.is_finite() {
            self.counters.invalid_events += 1;
            return Applied::Rejected;
        }
        let offset = *p.clock_offset.get_or_insert(arrival - client_time);
        let time = client_time + offset;
        // an Up carries no position; it lifts where the touch last was
        let (x, y) = match pos.or_else(|| p.window.last_event().map(|e| (e.x, e.y))) {
            Some(xy) => xy,
            None => {
                self.counters.invalid_events += 1;
                return Applied::Rejected;
            }
        };
        let event = TouchEvent::new(id, time, x, y, phase, velocity);
        if event.validate().is_err() {
            self.counters.invalid_events += 1;
            return Applied::Rejected;
        }
        match p.window.ingest(event) {
            Ok(()) => Applied::Touch,
            Err(_) => {
                self.counters.out_of_order += 1;
                Applied::Rejected
            }
        }
    }

    /// Classifies every performer at `now`, updates the flux tracker and
    /// returns the tick plus the messages to send.
    pub fn tick(&mut self, now: f64) -> Result<(EnsembleTick, Vec<Outbound>)> {
        if let Some(last) = self.last_tick {
            if now <= last {
                return Err(Error::Config(format!(
                    "tick at {now} does not follow {last}"
                )));
            }
        }
        let started = Instant::now();
        self.last_tick = Some(now);
        let window_secs = self.config.window_secs;
        let keep_secs = 2.0 * self.config.flux.window_len + 2.0;

        let mut per_performer = BTreeMap::new();
        let mut outbound = Vec::new();
        for (id, p) in self.performers.iter_mut() {
            p.window.prune(now);
            // a window younger than its own length cannot be classified fairly yet
            if now - p.registered_at < window_secs {
                continue;
            }
            let (gesture, probability) = if p.window.in_window(now).next().is_none() {
                (GestureClass::Nothing, 1.0)
            } else {
                let pred = self.model.predict(&extract_features(&p.window, now));
                (pred.gesture, pred.probability())
            };
            p.sequence.push(now, gesture);
            p.sequence.forget_until(now - keep_secs);
            per_performer.insert(
                id.clone(),
                PerformerGesture {
                    gesture,
                    probability,
                },
            );
            outbound.push(Outbound {
                to: p.address,
                message: Message::Gesture {
                    performer_id: id.clone(),
                    gesture_id: gesture.id() as i32,
                    probability: probability as f32,
                },
            });
        }

        let sequences: Vec<&GestureSequence> =
            self.performers.values().map(|p| &p.sequence).collect();
        let check = self.flux.detect_new_idea(&sequences, now);
        if check.is_new_idea {
            for p in self.performers.values() {
                outbound.push(Outbound {
                    to: p.address,
                    message: Message::NewIdea {
                        time: now,
                        flux_now: check.flux_now as f32,
                        flux_prev: check.flux_prev as f32,
                    },
                });
            }
        }

        let tick = EnsembleTick {
            time: now,
            per_performer,
            ensemble_matrix: check.ensemble_now,
            flux_now: check.flux_now,
            flux_prev: check.flux_prev,
            new_idea: check.is_new_idea,
            suppressed: check.suppressed,
            tick_duration: started.elapsed().as_secs_f64(),
            lag: 0.0,
        };
        Ok((tick, outbound))
    }
}
