//! Touch samples and the per-performer sliding window they are buffered in.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default sliding-window length in seconds.
pub const DEFAULT_WINDOW_SECS: f64 = 5.0;

/// How far (seconds) an event may trail the newest buffered event and still be
/// accepted. Absorbs datagram reordering.
pub const REORDER_TOLERANCE_SECS: f64 = 0.050;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TouchPhase {
    Down,
    Move,
    Up,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub performer_id: String,
    /// Seconds since session start.
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub phase: TouchPhase,
    /// Screen units per second. Always zero for `Down`.
    pub velocity: f64,
}

impl TouchEvent {
    pub fn new(
        performer_id: impl Into<String>,
        time: f64,
        x: f64,
        y: f64,
        phase: TouchPhase,
        velocity: f64,
    ) -> Self {
        let velocity = if phase == TouchPhase::Down {
            0.0
        } else {
            velocity
        };
        TouchEvent {
            performer_id: performer_id.into(),
            time,
            x,
            y,
            phase,
            velocity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidEvent(format!("{what} ({self:?})")));
        if !self.time.is_finite() || self.time < 0.0 {
            return bad("time must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y) {
            return bad("position outside the unit square");
        }
        if !self.velocity.is_finite() || self.velocity < 0.0 {
            return bad("velocity must be finite and non-negative");
        }
        if self.phase == TouchPhase::Down && self.velocity != 0.0 {
            return bad("down events carry zero velocity");
        }
        Ok(())
    }
}

/// Euclidean speed between two positions `dt` seconds apart.
pub fn velocity_between(from: (f64, f64), to: (f64, f64), dt: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    (dx * dx + dy * dy).sqrt() / dt
}

/// Time-ordered buffer of one performer's recent touches.
///
/// Not internally synchronized; the owner serializes ingestion and extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchWindow {
    performer_id: String,
    duration: f64,
    events: VecDeque<TouchEvent>,
}

impl TouchWindow {
    pub fn new(performer_id: impl Into<String>) -> Self {
        Self::with_duration(performer_id, DEFAULT_WINDOW_SECS)
    }

    pub fn with_duration(performer_id: impl Into<String>, duration: f64) -> Self {
        assert!(duration > 0.0, "window duration must be positive");
        TouchWindow {
            performer_id: performer_id.into(),
            duration,
            events: VecDeque::new(),
        }
    }

    pub fn performer_id(&self) -> &str {
        &self.performer_id
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> impl ExactSizeIterator<Item = &TouchEvent> + '_ {
        self.events.iter()
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.events.back().map(|e| e.time)
    }

    pub fn last_event(&self) -> Option<&TouchEvent> {
        self.events.back()
    }

    /// Buffers `event`, keeping time order. Events trailing the newest one by
    /// at most [`REORDER_TOLERANCE_SECS`] are inserted in place.
    pub fn ingest(&mut self, event: TouchEvent) -> Result<()> {
        if event.performer_id != self.performer_id {
            return Err(Error::IdentityMismatch {
                window: self.performer_id.clone(),
                event: event.performer_id,
            });
        }
        let newest = match self.newest_time() {
            Some(t) => t,
            None => {
                self.events.push_back(event);
                return Ok(());
            }
        };
        if event.time >= newest {
            self.events.push_back(event);
            return Ok(());
        }
        if newest - event.time > REORDER_TOLERANCE_SECS {
            return Err(Error::OutOfOrderEvent {
                event_time: event.time,
                newest,
            });
        }
        // after any equal-time events, so arrival order breaks ties
        let pos = self.events.partition_point(|e| e.time <= event.time);
        self.events.insert(pos, event);
        Ok(())
    }

    /// Drops everything outside `(now - duration, now]`.
    pub fn prune(&mut self, now: f64) {
        let lo = now - self.duration;
        while self.events.front().is_some_and(|e| e.time <= lo) {
            self.events.pop_front();
        }
        while self.events.back().is_some_and(|e| e.time > now) {
            self.events.pop_back();
        }
    }

    /// Events inside `(now - duration, now]` without mutating the buffer.
    pub fn in_window(&self, now: f64) -> impl Iterator<Item = &TouchEvent> + '_ {
        let lo = now - self.duration;
        self.events
            .iter()
            .filter(move |e| e.time > lo && e.time <= now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64) -> TouchEvent {
        TouchEvent::new("p", t, 0.5, 0.5, TouchPhase::Move, 0.1)
    }

    fn times(w: &TouchWindow) -> Vec<f64> {
        w.events().map(|e| e.time).collect()
    }

    #[test]
    fn ingest_into_empty_window() {
        let mut w = TouchWindow::new("p");
        w.ingest(TouchEvent::new("p", 1.0, 0.2, 0.3, TouchPhase::Down, 0.0))
            .unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn late_event_beyond_tolerance_is_rejected() {
        let mut w = TouchWindow::new("p");
        w.ingest(ev(1.0)).unwrap();
        w.ingest(ev(2.0)).unwrap();
        let err = w.ingest(ev(1.5)).unwrap_err();
        assert!(matches!(err, Error::OutOfOrderEvent { .. }));
        assert_eq!(times(&w), vec![1.0, 2.0]);
    }

    #[test]
    fn late_event_within_tolerance_is_inserted_in_order() {
        let mut w = TouchWindow::new("p");
        w.ingest(ev(2.000)).unwrap();
        w.ingest(ev(1.980)).unwrap();
        assert_eq!(times(&w), vec![1.980, 2.000]);
    }

    #[test]
    fn identity_mismatch() {
        let mut w = TouchWindow::new("p");
        let err = w.ingest(TouchEvent::new("q", 0.0, 0.0, 0.0, TouchPhase::Down, 0.0));
        assert!(matches!(err, Err(Error::IdentityMismatch { .. })));
    }

    #[test]
    fn prune_keeps_half_open_interval() {
        let mut w = TouchWindow::new("p");
        for t in [0.5, 3.0, 6.0] {
            w.ingest(ev(t)).unwrap();
        }
        w.prune(7.0);
        assert_eq!(times(&w), vec![3.0, 6.0]);

        let mut w = TouchWindow::new("p");
        w.ingest(ev(2.0)).unwrap();
        w.prune(7.0);
        assert!(w.is_empty());

        let mut w = TouchWindow::new("p");
        w.prune(123.0);
        assert!(w.is_empty());
    }

    #[test]
    fn down_velocity_forced_to_zero() {
        let e = TouchEvent::new("p", 0.0, 0.1, 0.1, TouchPhase::Down, 3.0);
        assert_eq!(e.velocity, 0.0);
        e.validate().unwrap();
        let bad = TouchEvent { x: 1.5, ..e };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn velocity_is_distance_over_time() {
        assert!((velocity_between((0.0, 0.0), (0.3, 0.4), 0.5) - 1.0).abs() < 1e-12);
        assert_eq!(velocity_between((0.0, 0.0), (1.0, 1.0), 0.0), 0.0);
    }
}
