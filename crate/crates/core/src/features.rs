//! Windowed descriptive statistics fed to the classifier.

use serde::{Deserialize, Serialize};

use crate::touch::{TouchEvent, TouchPhase, TouchWindow};

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "move_rate",
    "down_rate",
    "mean_x",
    "mean_y",
    "std_x",
    "std_y",
    "mean_velocity",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub move_rate: f64,
    pub down_rate: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub std_x: f64,
    pub std_y: f64,
    pub mean_velocity: f64,
}

impl FeatureVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.move_rate,
            self.down_rate,
            self.mean_x,
            self.mean_y,
            self.std_x,
            self.std_y,
            self.mean_velocity,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            move_rate: a[0],
            down_rate: a[1],
            mean_x: a[2],
            mean_y: a[3],
            std_x: a[4],
            std_y: a[5],
            mean_velocity: a[6],
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.to_array()[index]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&v| v == 0.0)
    }
}

/// Statistics over the events of `window` that fall inside `(now - duration, now]`.
pub fn extract_features(window: &TouchWindow, now: f64) -> FeatureVector {
    features_from_events(window.in_window(now), window.duration())
}

/// Statistics over an arbitrary batch of events. Rates are normalised by
/// `duration`, not by the span the events happen to cover.
pub fn features_from_events<'a>(
    events: impl IntoIterator<Item = &'a TouchEvent>,
    duration: f64,
) -> FeatureVector {
    let mut n = 0usize;
    let (mut moves, mut downs) = (0usize, 0usize);
    let (mut sx, mut sy, mut sv) = (0.0, 0.0, 0.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in events {
        n += 1;
        match e.phase {
            TouchPhase::Move => moves += 1,
            TouchPhase::Down => downs += 1,
            TouchPhase::Up => {}
        }
        sx += e.x;
        sy += e.y;
        sv += e.velocity;
        xs.push(e.x);
        ys.push(e.y);
    }
    if n == 0 {
        return FeatureVector::zeros();
    }
    let nf = n as f64;
    let (mean_x, mean_y) = (sx / nf, sy / nf);
    FeatureVector {
        move_rate: moves as f64 / duration,
        down_rate: downs as f64 / duration,
        mean_x,
        mean_y,
        std_x: population_std(&xs, mean_x),
        std_y: population_std(&ys, mean_y),
        mean_velocity: sv / nf,
    }
}

fn population_std(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(events: Vec<TouchEvent>) -> TouchWindow {
        let mut w = TouchWindow::new("p");
        for e in events {
            w.ingest(e).unwrap();
        }
        w
    }

    #[test]
    fn empty_window_is_zero_vector() {
        let w = TouchWindow::new("p");
        assert!(extract_features(&w, 10.0).is_zero());
    }

    #[test]
    fn five_taps_over_five_seconds() {
        let w = window(
            (0..5)
                .map(|i| TouchEvent::new("p", 5.5 + i as f64, 0.5, 0.5, TouchPhase::Down, 0.0))
                .collect(),
        );
        let f = extract_features(&w, 10.0);
        assert_eq!(f.move_rate, 0.0);
        assert_eq!(f.down_rate, 1.0);
        assert_eq!((f.mean_x, f.mean_y), (0.5, 0.5));
        assert_eq!((f.std_x, f.std_y), (0.0, 0.0));
        assert_eq!(f.mean_velocity, 0.0);
    }

    #[test]
    fn alternating_moves() {
        let w = window(
            (0..10)
                .map(|i| {
                    let x = if i % 2 == 0 { 0.4 } else { 0.6 };
                    TouchEvent::new("p", 5.25 + 0.5 * i as f64, x, 0.5, TouchPhase::Move, 0.2)
                })
                .collect(),
        );
        let f = extract_features(&w, 10.0);
        assert!((f.move_rate - 2.0).abs() < 1e-12);
        assert_eq!(f.down_rate, 0.0);
        assert!((f.mean_x - 0.5).abs() < 1e-12);
        assert!((f.std_x - 0.1).abs() < 1e-12);
        assert!(f.std_y.abs() < 1e-12);
        assert!((f.mean_velocity - 0.2).abs() < 1e-12);
    }

    #[test]
    fn up_events_count_toward_no_rate() {
        let w = window(vec![
            TouchEvent::new("p", 1.0, 0.2, 0.2, TouchPhase::Down, 0.0),
            TouchEvent::new("p", 1.1, 0.4, 0.2, TouchPhase::Up, 0.0),
        ]);
        let f = extract_features(&w, 2.0);
        assert!((f.down_rate - 0.2).abs() < 1e-12);
        assert_eq!(f.move_rate, 0.0);
        assert!((f.mean_x - 0.3).abs() < 1e-12);
    }

    #[test]
    fn events_outside_window_are_ignored() {
        let w = window(vec![
            TouchEvent::new("p", 1.0, 0.9, 0.9, TouchPhase::Down, 0.0),
            TouchEvent::new("p", 7.0, 0.1, 0.1, TouchPhase::Down, 0.0),
        ]);
        let f = extract_features(&w, 7.0);
        assert_eq!(f.mean_x, 0.1);
        assert!((f.down_rate - 0.2).abs() < 1e-12);
    }
}
