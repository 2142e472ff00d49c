//! CART classification tree with Gini impurity.
//!
//! Impurity comparisons are done in exact integer arithmetic so that training
//! is bit-reproducible and ties resolve the same way everywhere: lowest
//! impurity, then lowest feature index, then lowest threshold.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::features::FEATURE_COUNT;
use crate::gesture::GESTURE_COUNT;

pub type ClassCounts = [u32; GESTURE_COUNT];

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        counts: ClassCounts,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: u8,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_features: usize,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_features: FEATURE_COUNT,
            min_samples_split: 2,
            max_depth: None,
        }
    }
}

/// Nodes in pre-order; the root is `nodes[0]` and children always follow
/// their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// Training matrix view: rows of features plus class indices.
pub struct TrainingSet<'a> {
    pub rows: &'a [[f64; FEATURE_COUNT]],
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Sum over children of (sum of squared class counts / child size).
    /// Larger is purer; weighted Gini = 1 - purity / n.
    purity_num: u128,
    purity_den: u128,
}

impl SplitCandidate {
    /// Weighted child Gini impurity for a node holding `n` samples.
    pub fn weighted_gini(&self, n: usize) -> f64 {
        1.0 - (self.purity_num as f64 / self.purity_den as f64) / n as f64
    }

    fn better_than(&self, other: &SplitCandidate) -> bool {
        // a/b > c/d  <=>  a*d > c*b
        let lhs = self.purity_num * other.purity_den;
        let rhs = other.purity_num * self.purity_den;
        match lhs.cmp(&rhs) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                (self.feature, self.threshold).partial_cmp(&(other.feature, other.threshold))
                    == Some(Ordering::Less)
            }
        }
    }
}

pub fn gini(counts: &ClassCounts) -> f64 {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return 0.0;
    }
    let ss: u64 = counts.iter().map(|&c| (c as u64) * (c as u64)).sum();
    1.0 - ss as f64 / (n * n) as f64
}

/// Midpoint strictly below `hi`, so `x <= t` separates `lo` from `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

/// Best threshold on one feature among `samples`, or `None` if the feature
/// is constant there.
pub fn best_split_on_feature(
    data: &TrainingSet<'_>,
    samples: &[usize],
    feature: usize,
) -> Option<SplitCandidate> {
    let mut order: Vec<usize> = samples.to_vec();
    order.sort_by(|&a, &b| {
        data.rows[a][feature]
            .partial_cmp(&data.rows[b][feature])
            .unwrap_or(Ordering::Equal)
    });

    let mut right = class_counts(data, samples);
    let mut left = [0u32; GESTURE_COUNT];
    let n = order.len();
    let mut best: Option<SplitCandidate> = None;

    for i in 0..n.saturating_sub(1) {
        let label = data.labels[order[i]];
        left[label] += 1;
        right[label] -= 1;
        let lo = data.rows[order[i]][feature];
        let hi = data.rows[order[i + 1]][feature];
        if lo >= hi {
            continue;
        }
        let (nl, nr) = ((i + 1) as u128, (n - i - 1) as u128);
        let sl: u128 = left.iter().map(|&c| (c as u128) * (c as u128)).sum();
        let sr: u128 = right.iter().map(|&c| (c as u128) * (c as u128)).sum();
        let cand = SplitCandidate {
            feature,
            threshold: midpoint(lo, hi),
            purity_num: sl * nr + sr * nl,
            purity_den: nl * nr,
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    best
}

pub fn class_counts(data: &TrainingSet<'_>, samples: &[usize]) -> ClassCounts {
    let mut counts = [0u32; GESTURE_COUNT];
    for &s in samples {
        counts[data.labels[s]] += 1;
    }
    counts
}

impl DecisionTree {
    /// Grows a tree over `samples` (indices into `data`, duplicates allowed).
    pub fn fit<R: Rng>(
        data: &TrainingSet<'_>,
        samples: &[usize],
        params: &TreeParams,
        rng: &mut R,
    ) -> DecisionTree {
        assert!(!samples.is_empty(), "cannot grow a tree from no samples");
        let mut tree = DecisionTree { nodes: Vec::new() };
        tree.grow(data, samples.to_vec(), 0, params, rng);
        tree
    }

    fn grow<R: Rng>(
        &mut self,
        data: &TrainingSet<'_>,
        samples: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        rng: &mut R,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = class_counts(data, &samples);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let too_small = samples.len() < params.min_samples_split.max(2);
        let too_deep = params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            self.nodes.push(Node::Leaf { counts });
            return id;
        }

        let split = match choose_split(data, &samples, params.max_features, rng) {
            Some(s) => s,
            None => {
                self.nodes.push(Node::Leaf { counts });
                return id;
            }
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| data.rows[s][split.feature] <= split.threshold);

        self.nodes.push(Node::Split {
            feature: split.feature as u8,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(data, left, depth + 1, params, rng);
        let r = self.grow(data, right, depth + 1, params, rng);
        if let Node::Split { left, right, .. } = &mut self.nodes[id as usize] {
            *left = l;
            *right = r;
        }
        id
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>) -> DecisionTree {
        DecisionTree { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_counts(&self, x: &[f64; FEATURE_COUNT]) -> &ClassCounts {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left
                    } else {
                        *right
                    } as usize;
                }
            }
        }
    }

    /// Majority class at the reached leaf, lowest id on ties.
    pub fn predict_class(&self, x: &[f64; FEATURE_COUNT]) -> usize {
        argmax_lowest(self.leaf_counts(x).iter().map(|&c| c as f64))
    }
}

/// Draws features in random order and evaluates the first `max_features`.
/// Keeps drawing past that budget only while no candidate has been found.
fn choose_split<R: Rng>(
    data: &TrainingSet<'_>,
    samples: &[usize],
    max_features: usize,
    rng: &mut R,
) -> Option<SplitCandidate> {
    let mut features: Vec<usize> = (0..FEATURE_COUNT).collect();
    features.shuffle(rng);
    let mut best: Option<SplitCandidate> = None;
    for (k, &f) in features.iter().enumerate() {
        if k >= max_features && best.is_some() {
            break;
        }
        if let Some(c) = best_split_on_feature(data, samples, f) {
            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                best = Some(c);
            }
        }
    }
    best
}

pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: f64) -> [f64; FEATURE_COUNT] {
        let mut r = [0.0; FEATURE_COUNT];
        r[0] = v;
        r
    }

    #[test]
    fn gini_values() {
        let mut c = [0u32; GESTURE_COUNT];
        c[1] = 4;
        assert_eq!(gini(&c), 0.0);
        c[2] = 4;
        assert!((gini(&c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        assert_eq!(midpoint(1.0, 3.0), 2.0);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = midpoint(a, b);
        assert!(t >= a && t < b);
    }

    #[test]
    fn single_split_separates_two_classes() {
        let rows: Vec<_> = [0.0, 0.1, 0.2, 4.0, 4.1, 4.2]
            .iter()
            .map(|&v| row(v))
            .collect();
        let labels = vec![1, 1, 1, 3, 3, 3];
        let data = TrainingSet {
            rows: &rows,
            labels: &labels,
        };
        let idx: Vec<usize> = (0..rows.len()).collect();
        let tree = DecisionTree::fit(
            &data,
            &idx,
            &TreeParams::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(tree.nodes().len(), 3);
        match &tree.nodes()[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert!((threshold - 2.1).abs() < 1e-12);
            }
            n => panic!("expected split, got {n:?}"),
        }
        for (r, &l) in rows.iter().zip(&labels) {
            assert_eq!(tree.predict_class(r), l);
        }
    }

    #[test]
    fn constant_features_yield_leaf() {
        let rows = vec![row(1.0); 4];
        let labels = vec![1, 2, 1, 2];
        let data = TrainingSet {
            rows: &rows,
            labels: &labels,
        };
        let tree = DecisionTree::fit(
            &data,
            &[0, 1, 2, 3],
            &TreeParams::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(tree.nodes().len(), 1);
        // tie between classes 1 and 2 resolves to the lower id
        assert_eq!(tree.predict_class(&row(1.0)), 1);
    }

    #[test]
    fn max_depth_limits_growth() {
        let rows: Vec<_> = (0..16).map(|i| row(i as f64)).collect();
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let data = TrainingSet {
            rows: &rows,
            labels: &labels,
        };
        let idx: Vec<usize> = (0..16).collect();
        let params = TreeParams {
            max_depth: Some(2),
            ..TreeParams::default()
        };
        let tree = DecisionTree::fit(&data, &idx, &params, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(tree.depth() <= 2);
    }
}
