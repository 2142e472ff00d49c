//! Parametric touch-stream generators for the nine gesture classes.
//!
//! Streams are built from short phrases (a few seconds each); every phrase
//! redraws its kinematic parameters from the configured ranges and moves the
//! hand to a new region of the screen, so position carries no class signal.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{features_from_events, FeatureVector, FEATURE_COUNT};
use crate::forest::LabeledExample;
use crate::gesture::GestureClass;
use crate::rng::derive_seed;
use crate::touch::{velocity_between, TouchEvent, TouchPhase, DEFAULT_WINDOW_SECS};
use crate::{Error, Result};

pub const SYNTH_PERFORMER: &str = "synth";

/// Closed interval a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi >= self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwirlParams {
    pub radius: Range,
    pub period: Range,
}

/// Per-class kinematics. Every field is exposed so corpora can be tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Sampling rate of move events while a finger is dragging (Hz).
    pub move_rate_hz: f64,
    /// Phrase length; parameters and hand position are redrawn per phrase.
    pub phrase_secs: Range,
    pub fast_tap_rate: Range,
    pub slow_tap_rate: Range,
    pub tap_hold_secs: Range,
    /// Standard deviation of tap positions around the phrase centre.
    pub tap_jitter: f64,
    pub swipe_speed: Range,
    pub swipe_length: Range,
    pub swipe_gap_secs: Range,
    /// Accelerating swipes ramp linearly from a start to an end speed.
    pub accel_start_speed: Range,
    pub accel_end_speed: Range,
    pub accel_length: Range,
    pub very_slow_swirl: SwirlParams,
    /// Hard cap on very-slow-swirl speed; the period stretches to honour it.
    pub very_slow_max_speed: f64,
    pub big_swirl: SwirlParams,
    pub small_swirl: SwirlParams,
    /// Cycles drawn before the finger lifts and lands elsewhere.
    pub swirl_cycles_per_touch: Range,
    /// Length of each tap burst / swirl segment in a combination gesture.
    pub combination_segment_secs: Range,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            move_rate_hz: 30.0,
            phrase_secs: Range::new(3.0, 6.0),
            fast_tap_rate: Range::new(4.0, 8.0),
            slow_tap_rate: Range::new(0.5, 2.0),
            tap_hold_secs: Range::new(0.04, 0.09),
            tap_jitter: 0.03,
            swipe_speed: Range::new(1.0, 1.6),
            swipe_length: Range::new(0.25, 0.5),
            swipe_gap_secs: Range::new(0.08, 0.2),
            accel_start_speed: Range::new(1.6, 2.2),
            accel_end_speed: Range::new(4.0, 5.5),
            accel_length: Range::new(0.45, 0.7),
            very_slow_swirl: SwirlParams {
                radius: Range::new(0.08, 0.2),
                period: Range::new(6.0, 10.0),
            },
            very_slow_max_speed: 0.15,
            big_swirl: SwirlParams {
                radius: Range::new(0.3, 0.4),
                period: Range::new(1.5, 2.5),
            },
            small_swirl: SwirlParams {
                radius: Range::new(0.04, 0.12),
                period: Range::new(0.6, 1.2),
            },
            swirl_cycles_per_touch: Range::new(2.0, 4.0),
            combination_segment_secs: Range::new(0.8, 1.6),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("phrase_secs", self.phrase_secs),
            ("fast_tap_rate", self.fast_tap_rate),
            ("slow_tap_rate", self.slow_tap_rate),
            ("tap_hold_secs", self.tap_hold_secs),
            ("swipe_speed", self.swipe_speed),
            ("swipe_length", self.swipe_length),
            ("swipe_gap_secs", self.swipe_gap_secs),
            ("accel_start_speed", self.accel_start_speed),
            ("accel_end_speed", self.accel_end_speed),
            ("accel_length", self.accel_length),
            ("very_slow_swirl.radius", self.very_slow_swirl.radius),
            ("very_slow_swirl.period", self.very_slow_swirl.period),
            ("big_swirl.radius", self.big_swirl.radius),
            ("big_swirl.period", self.big_swirl.period),
            ("small_swirl.radius", self.small_swirl.radius),
            ("small_swirl.period", self.small_swirl.period),
            ("swirl_cycles_per_touch", self.swirl_cycles_per_touch),
            ("combination_segment_secs", self.combination_segment_secs),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(Error::Config(format!(
                    "synth range {name} is invalid: {r:?}"
                )));
            }
        }
        let radii = [
            self.very_slow_swirl.radius,
            self.big_swirl.radius,
            self.small_swirl.radius,
        ];
        if radii.iter().any(|r| r.hi >= 0.5) {
            return Err(Error::Config("swirl radius must stay below 0.5".into()));
        }
        if self.swipe_length.hi >= 1.0 || self.accel_length.hi >= 1.0 {
            return Err(Error::Config("swipe length must stay below 1".into()));
        }
        if self.accel_end_speed.lo <= self.accel_start_speed.hi {
            return Err(Error::Config(
                "accelerating swipes must end faster than they start".into(),
            ));
        }
        if !(self.move_rate_hz > 0.0)
            || !(self.very_slow_max_speed > 0.0)
            || !(self.tap_jitter >= 0.0)
        {
            return Err(Error::Config(
                "move rate, speed cap and jitter must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScript {
    pub gesture: GestureClass,
    pub duration: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub params: SynthParams,
}

impl GestureScript {
    pub fn new(gesture: GestureClass, duration: f64, rng_seed: u64) -> Self {
        GestureScript {
            gesture,
            duration,
            rng_seed,
            params: SynthParams::default(),
        }
    }
}

struct Emitter<'a> {
    events: Vec<TouchEvent>,
    end: f64,
    params: &'a SynthParams,
}

impl Emitter<'_> {
    fn dt(&self) -> f64 {
        1.0 / self.params.move_rate_hz
    }

    fn push(&mut self, t: f64, (x, y): (f64, f64), phase: TouchPhase, v: f64) {
        self.events.push(TouchEvent::new(
            SYNTH_PERFORMER,
            t,
            x.clamp(0.0, 1.0),
            y.clamp(0.0, 1.0),
            phase,
            v,
        ));
    }

    /// Drag along `path(s)` for `s` in `[0, total)` seconds starting at `t0`.
    /// Returns the time of the closing `Up`, or `None` if the stream ended.
    /// A drag cut off by the end of the stream lifts at its last sample.
    fn drag(&mut self, t0: f64, total: f64, path: impl Fn(f64) -> (f64, f64)) -> Option<f64> {
        if t0 >= self.end {
            return None;
        }
        let dt = self.dt();
        let mut last = path(0.0);
        let mut last_t = t0;
        self.push(t0, last, TouchPhase::Down, 0.0);
        let mut s = dt;
        while s < total {
            let t = t0 + s;
            if t >= self.end {
                self.push(last_t, last, TouchPhase::Up, 0.0);
                return None;
            }
            let p = path(s);
            self.push(t, p, TouchPhase::Move, velocity_between(last, p, dt));
            last = p;
            last_t = t;
            s += dt;
        }
        let t_up = t0 + s;
        if t_up >= self.end {
            self.push(last_t, last, TouchPhase::Up, 0.0);
            return None;
        }
        self.push(t_up, last, TouchPhase::Up, 0.0);
        Some(t_up)
    }

    fn tap(&mut self, t: f64, hold: f64, pos: (f64, f64)) -> bool {
        if t >= self.end {
            return false;
        }
        self.push(t, pos, TouchPhase::Down, 0.0);
        let up = if t + hold < self.end { t + hold } else { t };
        self.push(up, pos, TouchPhase::Up, 0.0);
        true
    }
}

fn centre<R: Rng>(rng: &mut R, margin: f64) -> (f64, f64) {
    let m = margin.clamp(0.0, 0.49);
    (rng.gen_range(m..=1.0 - m), rng.gen_range(m..=1.0 - m))
}

fn gaussian<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    sd * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Tap stream from `t0` until `until`; returns where it stopped.
fn taps<R: Rng>(em: &mut Emitter<'_>, rng: &mut R, t0: f64, until: f64, rate: f64) -> f64 {
    let jitter = em.params.tap_jitter;
    let c = centre(rng, 0.1);
    let mut t = t0;
    while t < until {
        let hold = em.params.tap_hold_secs.sample(rng).min(0.5 / rate);
        let pos = (c.0 + gaussian(rng, jitter), c.1 + gaussian(rng, jitter));
        if !em.tap(t, hold, pos) {
            return em.end;
        }
        t += (1.0 / rate) * rng.gen_range(0.8..1.2);
    }
    t
}

fn swirls<R: Rng>(
    em: &mut Emitter<'_>,
    rng: &mut R,
    t0: f64,
    until: f64,
    radius: f64,
    period: f64,
) -> f64 {
    let mut t = t0;
    while t < until {
        let c = centre(rng, radius + 0.02);
        let cycles = em.params.swirl_cycles_per_touch.sample(rng);
        let phase0 = rng.gen_range(0.0..TAU);
        let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let total = (cycles * period).min(until - t).max(2.0 * em.dt());
        let path = |s: f64| {
            let a = phase0 + dir * TAU * s / period;
            (c.0 + radius * a.cos(), c.1 + radius * a.sin())
        };
        match em.drag(t, total, path) {
            Some(up) => t = up + rng.gen_range(0.05..0.15),
            None => return em.end,
        }
    }
    t
}

fn swipes<R: Rng>(
    em: &mut Emitter<'_>,
    rng: &mut R,
    t0: f64,
    until: f64,
    accelerating: bool,
) -> f64 {
    let p = em.params.clone();
    let (v0, v1, length) = if accelerating {
        (
            p.accel_start_speed.sample(rng),
            p.accel_end_speed.sample(rng),
            p.accel_length,
        )
    } else {
        let v = p.swipe_speed.sample(rng);
        (v, v, p.swipe_length)
    };
    let mut t = t0;
    while t < until {
        let len = length.sample(rng);
        let a = rng.gen_range(0.0..TAU);
        let (dx, dy) = (a.cos(), a.sin());
        let c = centre(rng, len / 2.0 + 0.02);
        let start = (c.0 - dx * len / 2.0, c.1 - dy * len / 2.0);
        // constant acceleration from v0 to v1 over the stroke
        let duration = 2.0 * len / (v0 + v1);
        let acc = (v1 - v0) / duration;
        let path = |s: f64| {
            let d = (v0 * s + 0.5 * acc * s * s).min(len);
            (start.0 + dx * d, start.1 + dy * d)
        };
        match em.drag(t, duration, path) {
            Some(up) => t = up + p.swipe_gap_secs.sample(rng),
            None => return em.end,
        }
    }
    t
}

/// Generates a time-ordered touch stream on `[0, duration)` for the script's gesture.
pub fn synthesize(script: &GestureScript) -> Vec<TouchEvent> {
    let params = &script.params;
    let mut em = Emitter {
        events: Vec::new(),
        end: script.duration,
        params,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(script.rng_seed);
    let mut t = 0.0;
    if script.gesture == GestureClass::Nothing || !(script.duration > 0.0) {
        return Vec::new();
    }
    while t < script.duration {
        let until = (t + params.phrase_secs.sample(&mut rng)).min(script.duration);
        t = match script.gesture {
            GestureClass::Nothing => unreachable!(),
            GestureClass::FastTapping => {
                let rate = params.fast_tap_rate.sample(&mut rng);
                taps(&mut em, &mut rng, t, until, rate)
            }
            GestureClass::SlowTapping => {
                let rate = params.slow_tap_rate.sample(&mut rng);
                taps(&mut em, &mut rng, t, until, rate)
            }
            GestureClass::FastSwiping => swipes(&mut em, &mut rng, t, until, false),
            GestureClass::AcceleratingSwiping => swipes(&mut em, &mut rng, t, until, true),
            GestureClass::VerySlowSwirling => {
                let r = params.very_slow_swirl.radius.sample(&mut rng);
                let period = params
                    .very_slow_swirl
                    .period
                    .sample(&mut rng)
                    .max(TAU * r / params.very_slow_max_speed);
                swirls(&mut em, &mut rng, t, until, r, period)
            }
            GestureClass::BigSwirling => {
                let r = params.big_swirl.radius.sample(&mut rng);
                let period = params.big_swirl.period.sample(&mut rng);
                swirls(&mut em, &mut rng, t, until, r, period)
            }
            GestureClass::SmallSwirling => {
                let r = params.small_swirl.radius.sample(&mut rng);
                let period = params.small_swirl.period.sample(&mut rng);
                swirls(&mut em, &mut rng, t, until, r, period)
            }
            GestureClass::Combination => {
                let mut tt = t;
                let mut tapping = rng.gen_bool(0.5);
                while tt < until {
                    let seg_end =
                        (tt + params.combination_segment_secs.sample(&mut rng)).min(until);
                    tt = if tapping {
                        let rate = params.fast_tap_rate.sample(&mut rng);
                        taps(&mut em, &mut rng, tt, seg_end, rate)
                    } else {
                        let r = params.small_swirl.radius.sample(&mut rng);
                        let period = params.small_swirl.period.sample(&mut rng);
                        swirls(&mut em, &mut rng, tt, seg_end, r, period)
                    };
                    tapping = !tapping;
                }
                tt
            }
        };
    }
    em.events
}

/// Re-labels a synthesized stream for `performer_id` and shifts it by `offset` seconds.
pub fn assign(events: Vec<TouchEvent>, performer_id: &str, offset: f64) -> Vec<TouchEvent> {
    events
        .into_iter()
        .map(|mut e| {
            e.performer_id = performer_id.to_string();
            e.time += offset;
            e
        })
        .collect()
}

pub const CORPUS_TRIM_WINDOWS: usize = 2;

/// One labelled feature vector per full 5 s window at 1 s steps, with the first
/// and last two windows of every class stream dropped.
pub fn build_corpus(seconds_per_class: u32, seed: u64) -> Result<Vec<LabeledExample>> {
    build_corpus_with(seconds_per_class, seed, &SynthParams::default())
}

pub fn build_corpus_with(
    seconds_per_class: u32,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<LabeledExample>> {
    if seconds_per_class < 10 {
        return Err(Error::Config(format!(
            "need at least 10 s per class, got {seconds_per_class}"
        )));
    }
    params.validate()?;
    let mut corpus = Vec::new();
    for gesture in GestureClass::ALL {
        let script = GestureScript {
            gesture,
            duration: seconds_per_class as f64,
            rng_seed: derive_seed(seed, gesture.id() as u64),
            params: params.clone(),
        };
        let events = synthesize(&script);
        let w = DEFAULT_WINDOW_SECS as u32;
        let windows: Vec<FeatureVector> = (w..=seconds_per_class)
            .map(|now| window_features(&events, now as f64, DEFAULT_WINDOW_SECS))
            .collect();
        let keep = windows.len().saturating_sub(2 * CORPUS_TRIM_WINDOWS);
        corpus.extend(
            windows
                .into_iter()
                .skip(CORPUS_TRIM_WINDOWS)
                .take(keep)
                .map(|features| LabeledExample {
                    features,
                    label: gesture,
                }),
        );
    }
    Ok(corpus)
}

/// Features over the `(now - duration, now]` slice of a time-ordered stream.
pub fn window_features(events: &[TouchEvent], now: f64, duration: f64) -> FeatureVector {
    let lo = events.partition_point(|e| e.time <= now - duration);
    let hi = events.partition_point(|e| e.time <= now);
    features_from_events(&events[lo..hi], duration)
}

/// Writes one record per line: seven features then the class id, space separated.
/// Lines starting with `#` are comments.
pub fn export_corpus<W: Write>(examples: &[LabeledExample], mut out: W) -> Result<()> {
    writeln!(
        out,
        "# move_rate down_rate mean_x mean_y std_x std_y mean_velocity class_id"
    )?;
    for e in examples {
        let f = e.features.to_array();
        let cols: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{} {}", cols.join(" "), e.label.id())?;
    }
    Ok(())
}

pub fn import_corpus<R: BufRead>(input: R) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::MalformedLog {
            line: n + 1,
            reason,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != FEATURE_COUNT + 1 {
            return Err(bad(format!(
                "expected {} columns, got {}",
                FEATURE_COUNT + 1,
                cols.len()
            )));
        }
        let mut f = [0.0; FEATURE_COUNT];
        for (slot, c) in f.iter_mut().zip(&cols) {
            *slot = c.parse().map_err(|_| bad(format!("bad number {c:?}")))?;
        }
        let label: GestureClass = cols[FEATURE_COUNT]
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        out.push(LabeledExample {
            features: FeatureVector::from_array(f),
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_emits_nothing() {
        assert!(synthesize(&GestureScript::new(GestureClass::Nothing, 60.0, 1)).is_empty());
    }

    #[test]
    fn fast_tapping_hits_its_rate() {
        let mut script = GestureScript::new(GestureClass::FastTapping, 60.0, 9);
        script.params.fast_tap_rate = Range::new(6.0, 6.0);
        let events = synthesize(&script);
        let downs = events
            .iter()
            .filter(|e| e.phase == TouchPhase::Down)
            .count();
        assert!((324..=396).contains(&downs), "{downs} taps");
        for now in [10.0, 27.0, 44.0] {
            let f = window_features(&events, now, 5.0);
            assert!((f.down_rate - 6.0).abs() < 1.0, "{f:?}");
            assert_eq!(f.mean_velocity, 0.0);
            assert_eq!(f.move_rate, 0.0);
        }
    }

    #[test]
    fn big_swirls_spread_wider_than_small() {
        let big = synthesize(&GestureScript::new(GestureClass::BigSwirling, 30.0, 5));
        let small = synthesize(&GestureScript::new(GestureClass::SmallSwirling, 30.0, 5));
        for now in [8.0, 15.0, 22.0, 29.0] {
            let (b, s) = (
                window_features(&big, now, 5.0),
                window_features(&small, now, 5.0),
            );
            assert!(b.std_x > s.std_x, "t={now}: {} vs {}", b.std_x, s.std_x);
        }
    }

    #[test]
    fn very_slow_swirls_respect_speed_cap() {
        let ev = synthesize(&GestureScript::new(GestureClass::VerySlowSwirling, 40.0, 3));
        assert!(ev.iter().all(|e| e.velocity <= 0.15 + 1e-9));
        assert!(ev.iter().any(|e| e.phase == TouchPhase::Move));
    }

    #[test]
    fn corpus_sizes() {
        assert_eq!(build_corpus(60, 42).unwrap().len(), 468);
        assert_eq!(build_corpus(10, 1).unwrap().len(), 18);
        assert!(build_corpus(9, 1).is_err());
    }

    #[test]
    fn corpus_round_trips_through_text() {
        let corpus = build_corpus(12, 4).unwrap();
        let mut buf = Vec::new();
        export_corpus(&corpus, &mut buf).unwrap();
        let back = import_corpus(&buf[..]).unwrap();
        assert_eq!(back, corpus);
        assert!(import_corpus(&b"1 2 3\n"[..]).is_err());
    }
}
