//! Gesture sequences, Markov transition matrices, flux and new-idea detection.

use serde::{Deserialize, Serialize};

use crate::gesture::{GestureClass, GESTURE_COUNT};
use crate::{Error, Result};

pub type CountMatrix = [[u32; GESTURE_COUNT]; GESTURE_COUNT];
pub type ProbMatrix = [[f64; GESTURE_COUNT]; GESTURE_COUNT];

pub const DEFAULT_FLUX_WINDOW_SECS: f64 = 15.0;
pub const DEFAULT_FLUX_THRESHOLD: f64 = 0.15;
pub const DEFAULT_RATE_LIMIT_SECS: f64 = 60.0;

/// One performer's classified gestures, one sample per tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GestureSequence {
    pub performer_id: String,
    samples: Vec<(f64, GestureClass)>,
}

impl GestureSequence {
    pub fn new(performer_id: impl Into<String>) -> Self {
        GestureSequence {
            performer_id: performer_id.into(),
            samples: Vec::new(),
        }
    }

    pub fn from_samples(
        performer_id: impl Into<String>,
        samples: impl IntoIterator<Item = (f64, GestureClass)>,
    ) -> Self {
        let mut seq = Self::new(performer_id);
        for (t, g) in samples {
            seq.push(t, g);
        }
        seq
    }

    /// Appends a sample. Times must strictly increase; a non-increasing time
    /// is a programming error in the tick scheduler.
    pub fn push(&mut self, time: f64, gesture: GestureClass) {
        if let Some(&(last, _)) = self.samples.last() {
            assert!(
                time > last,
                "gesture samples must be strictly increasing in time"
            );
        }
        self.samples.push((time, gesture));
    }

    pub fn samples(&self) -> &[(f64, GestureClass)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Drops samples at or before `before`.
    pub fn forget_until(&mut self, before: f64) {
        let keep_from = self.samples.partition_point(|&(t, _)| t <= before);
        self.samples.drain(..keep_from);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: CountMatrix,
    pub probs: ProbMatrix,
}

impl TransitionMatrix {
    pub fn zero() -> Self {
        TransitionMatrix {
            counts: [[0; GESTURE_COUNT]; GESTURE_COUNT],
            probs: [[0.0; GESTURE_COUNT]; GESTURE_COUNT],
        }
    }

    pub fn from_probs(probs: ProbMatrix) -> Self {
        TransitionMatrix {
            counts: [[0; GESTURE_COUNT]; GESTURE_COUNT],
            probs,
        }
    }

    pub fn total_transitions(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn has_mass(&self) -> bool {
        self.probs.iter().flatten().any(|&p| p != 0.0)
    }
}

/// Counts adjacent sample pairs whose times both lie in `(lo, hi]`.
pub fn count_transitions(seq: &GestureSequence, lo: f64, hi: f64) -> CountMatrix {
    let mut counts = [[0u32; GESTURE_COUNT]; GESTURE_COUNT];
    let inside = |t: f64| t > lo && t <= hi;
    for pair in seq.samples.windows(2) {
        let ((t0, g0), (t1, g1)) = (pair[0], pair[1]);
        if inside(t0) && inside(t1) {
            counts[g0.index()][g1.index()] += 1;
        }
    }
    counts
}

/// Row-normalised maximum-likelihood estimate. Rows without observations stay zero.
pub fn mle_matrix(counts: &CountMatrix) -> TransitionMatrix {
    let mut probs = [[0.0f64; GESTURE_COUNT]; GESTURE_COUNT];
    for (prow, crow) in probs.iter_mut().zip(counts) {
        let total: u64 = crow.iter().map(|&c| c as u64).sum();
        if total == 0 {
            continue;
        }
        for (p, &c) in prow.iter_mut().zip(crow) {
            *p = c as f64 / total as f64;
        }
    }
    TransitionMatrix {
        counts: *counts,
        probs,
    }
}

/// Element-wise mean of the probability matrices; counts are summed.
pub fn ensemble_average(matrices: &[TransitionMatrix]) -> Result<TransitionMatrix> {
    if matrices.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut out = TransitionMatrix::zero();
    for m in matrices {
        for i in 0..GESTURE_COUNT {
            for j in 0..GESTURE_COUNT {
                out.probs[i][j] += m.probs[i][j];
                out.counts[i][j] += m.counts[i][j];
            }
        }
    }
    let k = matrices.len() as f64;
    for p in out.probs.iter_mut().flatten() {
        *p /= k;
    }
    Ok(out)
}

/// Fraction of the matrix's element-wise 1-norm lying off the main diagonal.
pub fn flux(matrix: &TransitionMatrix) -> Result<f64> {
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    for (i, row) in matrix.probs.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if i == j {
                diag += p.abs();
            } else {
                off += p.abs();
            }
        }
    }
    let norm = diag + off;
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(off / norm)
}

/// Flux with the all-zero matrix mapped to 0 (nothing observed, nothing changed).
pub fn flux_or_zero(matrix: &TransitionMatrix) -> f64 {
    flux(matrix).unwrap_or(0.0)
}

/// Ensemble matrix over `(lo, hi]`: per-performer counts, MLE, then the equal-weight
/// average of performers that contributed at least one transition.
pub fn ensemble_matrix(sequences: &[&GestureSequence], lo: f64, hi: f64) -> TransitionMatrix {
    let per_performer: Vec<TransitionMatrix> = sequences
        .iter()
        .map(|s| count_transitions(s, lo, hi))
        .filter(|c| c.iter().flatten().any(|&n| n > 0))
        .map(|c| mle_matrix(&c))
        .collect();
    ensemble_average(&per_performer).unwrap_or_else(|_| TransitionMatrix::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxConfig {
    pub window_len: f64,
    pub threshold: f64,
    pub rate_limit: f64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig {
            window_len: DEFAULT_FLUX_WINDOW_SECS,
            threshold: DEFAULT_FLUX_THRESHOLD,
            rate_limit: DEFAULT_RATE_LIMIT_SECS,
        }
    }
}

impl FluxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_len > 0.0) {
            return Err(Error::Config("flux window must be positive".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("flux threshold must be positive".into()));
        }
        if !(self.rate_limit >= 0.0) {
            return Err(Error::Config("rate limit must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxState {
    pub config: FluxConfig,
    pub flux_history: Vec<(f64, f64)>,
    pub last_new_idea_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewIdeaCheck {
    pub is_new_idea: bool,
    pub flux_now: f64,
    pub flux_prev: f64,
    /// The jump exceeded the threshold but fell inside the rate limit.
    pub suppressed: bool,
    pub ensemble_now: TransitionMatrix,
}

/// How many flux readings to keep around for display.
const FLUX_HISTORY_LEN: usize = 600;

impl FluxState {
    pub fn new(config: FluxConfig) -> Self {
        FluxState {
            config,
            flux_history: Vec::new(),
            last_new_idea_time: None,
        }
    }

    /// Compares ensemble flux over `(now - w, now]` with `(now - 2w, now - w]`.
    pub fn detect_new_idea(&mut self, sequences: &[&GestureSequence], now: f64) -> NewIdeaCheck {
        let w = self.config.window_len;
        let ensemble_now = ensemble_matrix(sequences, now - w, now);
        let ensemble_prev = ensemble_matrix(sequences, now - 2.0 * w, now - w);
        let flux_now = flux_or_zero(&ensemble_now);
        let flux_prev = flux_or_zero(&ensemble_prev);
        let jumped = flux_now - flux_prev > self.config.threshold;
        let allowed = self
            .last_new_idea_time
            .is_none_or(|last| now - last >= self.config.rate_limit);
        let is_new_idea = jumped && allowed;
        if is_new_idea {
            self.last_new_idea_time = Some(now);
        }
        self.flux_history.push((now, flux_now));
        if self.flux_history.len() > FLUX_HISTORY_LEN {
            self.flux_history.remove(0);
        }
        NewIdeaCheck {
            is_new_idea,
            flux_now,
            flux_prev,
            suppressed: jumped && !allowed,
            ensemble_now,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GestureClass::*;

    fn seq(gestures: &[GestureClass]) -> GestureSequence {
        GestureSequence::from_samples(
            "p",
            gestures
                .iter()
                .enumerate()
                .map(|(i, &g)| (i as f64 + 1.0, g)),
        )
    }

    #[test]
    fn hand_counted_transitions() {
        let c = count_transitions(
            &seq(&[FastTapping, FastTapping, BigSwirling, FastTapping]),
            0.0,
            10.0,
        );
        let mut expected = [[0u32; GESTURE_COUNT]; GESTURE_COUNT];
        expected[1][1] = 1;
        expected[1][6] = 1;
        expected[6][1] = 1;
        assert_eq!(c, expected);
    }

    #[test]
    fn constant_sequence_only_self_loops() {
        let c = count_transitions(&seq(&[SmallSwirling; 8]), 0.0, 100.0);
        assert_eq!(c[7][7], 7);
        assert_eq!(c.iter().flatten().map(|&v| v as u64).sum::<u64>(), 7);
    }

    #[test]
    fn single_sample_in_window_has_no_pairs() {
        let c = count_transitions(&seq(&[FastTapping, SlowTapping, Combination]), 1.5, 2.5);
        assert!(c.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn pair_straddling_boundary_is_counted_nowhere() {
        let s = seq(&[FastTapping, SlowTapping, SlowTapping, SlowTapping]);
        // samples at t = 1..4; split at 2
        let a = count_transitions(&s, 0.0, 2.0);
        let b = count_transitions(&s, 2.0, 4.0);
        assert_eq!(a[1][2], 1);
        assert_eq!(b[2][2], 1);
        let total: u32 = a.iter().chain(b.iter()).flatten().sum();
        assert_eq!(total, 2);
    }

    #[test]
    fn mle_rows() {
        let mut c = [[0u32; GESTURE_COUNT]; GESTURE_COUNT];
        c[0][0] = 1;
        c[0][1] = 1;
        c[2][0] = 3;
        let m = mle_matrix(&c);
        assert_eq!(m.probs[0][..2], [0.5, 0.5]);
        assert_eq!(m.probs[2][0], 1.0);
        assert!(m.probs[1].iter().all(|&p| p == 0.0));
        assert!(!mle_matrix(&[[0; GESTURE_COUNT]; GESTURE_COUNT]).has_mass());
    }

    #[test]
    fn averaging() {
        let mut a = TransitionMatrix::zero();
        a.probs[0][1] = 1.0;
        let mut b = TransitionMatrix::zero();
        b.probs[3][4] = 1.0;
        assert_eq!(ensemble_average(std::slice::from_ref(&a)).unwrap(), a);
        let avg = ensemble_average(&[a, b]).unwrap();
        assert_eq!(avg.probs[0][1], 0.5);
        assert_eq!(avg.probs[3][4], 0.5);
        assert!(matches!(ensemble_average(&[]), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn flux_extremes_and_midpoint() {
        let mut ident = TransitionMatrix::zero();
        for i in 0..GESTURE_COUNT {
            ident.probs[i][i] = 1.0;
        }
        assert_eq!(flux(&ident).unwrap(), 0.0);

        let mut off = TransitionMatrix::zero();
        off.probs[0][3] = 1.0;
        off.probs[3][0] = 0.25;
        off.probs[3][5] = 0.75;
        assert_eq!(flux(&off).unwrap(), 1.0);

        let mut half = TransitionMatrix::zero();
        for i in 0..2 {
            for j in 0..2 {
                half.probs[i][j] = 0.5;
            }
        }
        assert_eq!(flux(&half).unwrap(), 0.5);
        assert!(matches!(
            flux(&TransitionMatrix::zero()),
            Err(Error::ZeroMatrix)
        ));
        assert_eq!(flux_or_zero(&TransitionMatrix::zero()), 0.0);
    }

    fn timed(gestures: impl Fn(usize) -> GestureClass, n: usize) -> GestureSequence {
        GestureSequence::from_samples("p", (1..=n).map(|t| (t as f64, gestures(t))))
    }

    #[test]
    fn constant_ensemble_never_fires() {
        let seqs: Vec<_> = (0..4).map(|_| timed(|_| BigSwirling, 40)).collect();
        let refs: Vec<&GestureSequence> = seqs.iter().collect();
        let mut st = FluxState::new(FluxConfig::default());
        let r = st.detect_new_idea(&refs, 40.0);
        assert_eq!((r.flux_now, r.flux_prev, r.is_new_idea), (0.0, 0.0, false));
    }

    fn two_spikes(t: usize) -> GestureClass {
        let alternating = (26..=40).contains(&t) || (56..=70).contains(&t);
        match (alternating, t % 2) {
            (false, _) => SmallSwirling,
            (true, 0) => FastTapping,
            (true, _) => BigSwirling,
        }
    }

    #[test]
    fn alternation_after_self_loops_fires_then_rate_limits() {
        let s = timed(two_spikes, 70);
        let refs = vec![&s, &s, &s, &s];
        let mut st = FluxState::new(FluxConfig::default());
        let r = st.detect_new_idea(&refs, 40.0);
        assert_eq!(r.flux_prev, 0.0);
        assert_eq!(r.flux_now, 1.0);
        assert!(r.is_new_idea);
        assert_eq!(st.last_new_idea_time, Some(40.0));

        // the second spike, 30 s later, clears the threshold but not the limit
        let r = st.detect_new_idea(&refs, 70.0);
        assert_eq!((r.flux_prev, r.flux_now), (0.0, 1.0));
        assert!(!r.is_new_idea && r.suppressed);
        assert_eq!(st.last_new_idea_time, Some(40.0));

        let mut lenient = FluxState::new(FluxConfig {
            rate_limit: 20.0,
            ..FluxConfig::default()
        });
        assert!(lenient.detect_new_idea(&refs, 40.0).is_new_idea);
        assert!(lenient.detect_new_idea(&refs, 70.0).is_new_idea);
    }

    #[test]
    fn repeated_spike_inside_limit_is_suppressed() {
        let s = timed(
            |t| {
                if t <= 25 {
                    SmallSwirling
                } else if t % 2 == 0 {
                    FastTapping
                } else {
                    BigSwirling
                }
            },
            40,
        );
        let refs = vec![&s];
        let mut st = FluxState::new(FluxConfig::default());
        assert!(st.detect_new_idea(&refs, 40.0).is_new_idea);
        st.last_new_idea_time = Some(30.0);
        let r = st.detect_new_idea(&refs, 40.0);
        assert!(!r.is_new_idea);
        assert!(r.suppressed);
    }
}
