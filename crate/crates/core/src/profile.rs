//! Tick-cost measurement against the number of performers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::forest::ForestModel;
use crate::scenario::{run_in_process, scenario, ScenarioKind};
use crate::session::{Session, SessionConfig};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub performers: usize,
    pub ticks: usize,
    pub mean: f64,
    pub max: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub points: Vec<ProfilePoint>,
    /// Least-squares fit of mean tick time: `intercept + slope * performers`.
    pub slope: f64,
    pub intercept: f64,
}

impl ProfileReport {
    pub fn predicted(&self, performers: usize) -> f64 {
        self.intercept + self.slope * performers as f64
    }
}

/// The default sweep, capped at `max`.
pub fn sweep(max: usize) -> Vec<usize> {
    let mut ns: Vec<usize> = [1, 2, 4, 8, 16, 25]
        .into_iter()
        .filter(|&n| n <= max)
        .collect();
    if max > 0 && ns.last() != Some(&max) {
        ns.push(max);
    }
    ns
}

/// Ordinary least squares for `y = a + b x`. Returns `(b, a)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Runs `seconds` of steady bot traffic for each ensemble size and times the
/// ticks that classify (the first window's worth are skipped as warm-up).
pub fn profile(
    model: Arc<ForestModel>,
    performer_counts: &[usize],
    seconds: u32,
    seed: u64,
) -> Result<ProfileReport> {
    let config = SessionConfig::default();
    let warmup = config.window_secs.ceil() as usize;
    let mut points = Vec::with_capacity(performer_counts.len());
    for &n in performer_counts {
        let mut session = Session::new(model.clone(), config)?;
        let bots = scenario(ScenarioKind::Steady, n, seconds as f64, seed);
        let ticks = run_in_process::<std::io::Sink>(&mut session, &bots, seconds, None)?;
        let times: Vec<f64> = ticks.iter().skip(warmup).map(|t| t.tick_duration).collect();
        let count = times.len().max(1) as f64;
        let mean = times.iter().sum::<f64>() / count;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count;
        points.push(ProfilePoint {
            performers: n,
            ticks: times.len(),
            mean,
            max: times.iter().copied().fold(0.0, f64::max),
            std_dev: var.sqrt(),
        });
    }
    let (slope, intercept) = linear_fit(
        &points
            .iter()
            .map(|p| (p.performers as f64, p.mean))
            .collect::<Vec<_>>(),
    );
    Ok(ProfileReport {
        points,
        slope,
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|i| (i as f64, 0.0085 + 0.038 * i as f64))
            .collect();
        let (b, a) = linear_fit(&pts);
        assert!((b - 0.038).abs() < 1e-12 && (a - 0.0085).abs() < 1e-12);
        assert_eq!(linear_fit(&[(2.0, 5.0)]), (0.0, 5.0));
    }

    #[test]
    fn default_sweep() {
        assert_eq!(sweep(25), vec![1, 2, 4, 8, 16, 25]);
        assert_eq!(sweep(10), vec![1, 2, 4, 8, 10]);
        assert!(sweep(0).is_empty());
    }
}
