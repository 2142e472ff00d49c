//! Scripted bot performers and an in-process session driver.
//!
//! A [`BotScript`] is a list of gesture segments played back to back. Bots
//! speak the same wire messages as real clients, so the same scripts drive
//! the in-process runner here, the networked bots in the client crate, and
//! the profiler.

use serde::{Deserialize, Serialize};

use crate::gesture::GestureClass;
use crate::protocol::{encode_osc, Message, DOWN_SENTINEL};
use crate::rng::derive_seed;
use crate::session::{Destination, EnsembleTick, Session};
use crate::session_log::{LogRecord, LogWriter};
use crate::synth::{synthesize, GestureScript};
use crate::touch::TouchPhase;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub gesture: GestureClass,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotScript {
    pub performer_id: String,
    pub seed: u64,
    pub segments: Vec<Segment>,
}

/// A message with the bot-clock time at which it should be sent.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedMessage {
    pub time: f64,
    pub message: Message,
}

impl BotScript {
    pub fn new(performer_id: impl Into<String>, seed: u64) -> Self {
        BotScript {
            performer_id: performer_id.into(),
            seed,
            segments: Vec::new(),
        }
    }

    pub fn then(mut self, gesture: GestureClass, seconds: f64) -> Self {
        self.segments.push(Segment { gesture, seconds });
        self
    }

    /// Alternates between `a` and `b` every `every` seconds for `seconds`.
    pub fn alternate(mut self, a: GestureClass, b: GestureClass, every: f64, seconds: f64) -> Self {
        let mut left = seconds;
        let mut current = a;
        while left > 1e-9 {
            let len = every.min(left);
            self.segments.push(Segment {
                gesture: current,
                seconds: len,
            });
            current = if current == a { b } else { a };
            left -= len;
        }
        self
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.seconds).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.performer_id.is_empty() {
            return Err(Error::Config("bot needs a performer id".into()));
        }
        if let Some(s) = self
            .segments
            .iter()
            .find(|s| !(s.seconds > 0.0) || !s.seconds.is_finite())
        {
            return Err(Error::Config(format!(
                "segment length must be positive, got {}",
                s.seconds
            )));
        }
        Ok(())
    }

    /// The full message stream: hello at 0, touches, and bye at the end if asked.
    pub fn messages(&self, say_bye: bool) -> Vec<TimedMessage> {
        let id = &self.performer_id;
        let mut out = vec![TimedMessage {
            time: 0.0,
            message: Message::Hello {
                performer_id: id.clone(),
                app_name: "bot".into(),
            },
        }];
        let mut offset = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let script =
                GestureScript::new(seg.gesture, seg.seconds, derive_seed(self.seed, k as u64));
            for e in synthesize(&script) {
                let time = offset + e.time;
                let message = match e.phase {
                    TouchPhase::Down => Message::Touch {
                        performer_id: id.clone(),
                        time,
                        x: e.x as f32,
                        y: e.y as f32,
                        velocity: DOWN_SENTINEL,
                    },
                    TouchPhase::Move => Message::Touch {
                        performer_id: id.clone(),
                        time,
                        x: e.x as f32,
                        y: e.y as f32,
                        velocity: e.velocity as f32,
                    },
                    TouchPhase::Up => Message::TouchEnded {
                        performer_id: id.clone(),
                        time,
                    },
                };
                out.push(TimedMessage { time, message });
            }
            offset += seg.seconds;
        }
        if say_bye {
            out.push(TimedMessage {
                time: offset,
                message: Message::Bye {
                    performer_id: id.clone(),
                },
            });
        }
        out
    }
}

/// Named scenarios, selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Everyone holds one gesture for the whole run.
    Steady,
    /// A long hold, then sustained alternation.
    NewIdea,
    /// Two short hold-then-alternate episodes back to back.
    Repeated,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steady" => Ok(ScenarioKind::Steady),
            "new-idea" => Ok(ScenarioKind::NewIdea),
            "repeated" => Ok(ScenarioKind::Repeated),
            _ => Err(Error::Config(format!(
                "unknown scenario {s:?} (steady, new-idea, repeated)"
            ))),
        }
    }
}

/// Gestures held during the calm phases, one per bot (cycled).
pub const HOLD_GESTURES: [GestureClass; 4] = [
    GestureClass::FastTapping,
    GestureClass::SlowTapping,
    GestureClass::AcceleratingSwiping,
    GestureClass::VerySlowSwirling,
];

/// Contrasting partner for each held gesture during alternation.
pub const ALTERNATE_WITH: [GestureClass; 4] = [
    GestureClass::SlowTapping,
    GestureClass::FastTapping,
    GestureClass::FastSwiping,
    GestureClass::FastTapping,
];

/// Seconds per gesture during alternation. Shorter turns blur inside the
/// 5 s feature window and the flux trace gets too noisy to threshold.
pub const ALTERNATION_SECS: f64 = 7.0;

/// One episode of the repeated scenario: a hold, then one contrasting turn.
pub const EPISODE_HOLD_SECS: f64 = 28.0;
pub const EPISODE_BURST_SECS: f64 = 7.0;

pub fn bot_name(i: usize) -> String {
    format!("bot{i:02}")
}

/// Scripts for `performers` bots running `kind` for `seconds`.
pub fn scenario(kind: ScenarioKind, performers: usize, seconds: f64, seed: u64) -> Vec<BotScript> {
    (0..performers)
        .map(|i| {
            let bot = BotScript::new(bot_name(i), derive_seed(seed, i as u64));
            let hold = HOLD_GESTURES[i % HOLD_GESTURES.len()];
            let other = ALTERNATE_WITH[i % ALTERNATE_WITH.len()];
            match kind {
                ScenarioKind::Steady => bot.then(hold, seconds),
                ScenarioKind::NewIdea => {
                    let calm = seconds.min(60.0);
                    let bot = bot.then(hold, calm);
                    if seconds > calm {
                        bot.alternate(other, hold, ALTERNATION_SECS, seconds - calm)
                    } else {
                        bot
                    }
                }
                ScenarioKind::Repeated => {
                    let bot = bot
                        .then(hold, EPISODE_HOLD_SECS)
                        .then(other, EPISODE_BURST_SECS)
                        .then(hold, EPISODE_HOLD_SECS)
                        .then(other, EPISODE_BURST_SECS);
                    let used = bot.duration();
                    if seconds > used {
                        bot.then(hold, seconds - used)
                    } else {
                        bot
                    }
                }
            }
        })
        .collect()
}

/// Every bot's messages merged into one send order (stable by time, then bot).
pub fn merged_messages(bots: &[BotScript], say_bye: bool) -> Vec<(usize, TimedMessage)> {
    let mut all: Vec<(usize, TimedMessage)> = bots
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.messages(say_bye).into_iter().map(move |m| (i, m)))
        .collect();
    all.sort_by(|a, b| a.1.time.total_cmp(&b.1.time).then(a.0.cmp(&b.0)));
    all
}

/// Drives `session` with `bots` entirely in-process: messages are encoded to
/// OSC and decoded again, delivered when their time comes, and the session
/// ticks at every whole second up to `seconds`.
pub fn run_in_process<W: std::io::Write>(
    session: &mut Session,
    bots: &[BotScript],
    seconds: u32,
    mut log: Option<&mut LogWriter<W>>,
) -> Result<Vec<EnsembleTick>> {
    for b in bots {
        b.validate()?;
    }
    let merged = merged_messages(bots, false);
    let mut next = merged.iter().peekable();
    let mut ticks = Vec::with_capacity(seconds as usize);
    for t in 1..=seconds {
        let now = t as f64;
        while let Some((_, m)) = next.next_if(|(_, m)| m.time <= now) {
            let bytes = encode_osc(&m.message);
            let from = Destination::Local;
            for decoded in crate::protocol::decode_osc(&bytes)? {
                if let Some(w) = log.as_deref_mut() {
                    w.append(&LogRecord::from_decoded(m.time, from, decoded.clone()))?;
                }
                session.apply_decoded(from, &decoded, m.time);
            }
        }
        let (tick, _) = session.tick(now)?;
        if let Some(w) = log.as_deref_mut() {
            w.append(&LogRecord::Tick(tick.clone()))?;
        }
        ticks.push(tick);
    }
    Ok(ticks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternation_segments() {
        let b = BotScript::new("b", 1).alternate(
            GestureClass::FastTapping,
            GestureClass::BigSwirling,
            3.0,
            10.0,
        );
        let lens: Vec<f64> = b.segments.iter().map(|s| s.seconds).collect();
        assert_eq!(lens, vec![3.0, 3.0, 3.0, 1.0]);
        assert_eq!(b.segments[1].gesture, GestureClass::BigSwirling);
    }

    #[test]
    fn messages_are_time_ordered_and_start_with_hello() {
        let b = BotScript::new("b", 3)
            .then(GestureClass::FastSwiping, 4.0)
            .then(GestureClass::FastTapping, 4.0);
        let msgs = b.messages(true);
        assert!(matches!(msgs[0].message, Message::Hello { .. }));
        assert!(matches!(msgs.last().unwrap().message, Message::Bye { .. }));
        assert!(msgs.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(msgs.iter().all(|m| m.time >= 0.0 && m.time <= 8.0));
    }

    #[test]
    fn repeated_scenario_length() {
        let bots = scenario(ScenarioKind::Repeated, 4, 150.0, 1);
        assert!(bots.iter().all(|b| (b.duration() - 150.0).abs() < 1e-9));
        assert_eq!(
            scenario(ScenarioKind::NewIdea, 2, 180.0, 1)[1].duration(),
            180.0
        );
    }

    #[test]
    fn bad_scripts_are_rejected() {
        assert!(BotScript::new("", 1).validate().is_err());
        assert!(BotScript::new("a", 1)
            .then(GestureClass::FastTapping, 0.0)
            .validate()
            .is_err());
    }
}
