//! Random forest gesture classifier, built from scratch.
//!
//! Each tree is grown on a bootstrap resample with Gini splits over a random
//! feature subset per node. Tree `i` draws from an RNG seeded with
//! `rng_seed + i`, so parallel and serial training give the same forest.

mod cv;
mod model_io;
pub mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, FEATURE_COUNT};
use crate::gesture::{GestureClass, GESTURE_COUNT};
use crate::{Error, Result};

pub use cv::{accuracy, cross_validate, shuffle_labels, CvReport};
pub use model_io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use tree::{DecisionTree, Node, TrainingSet, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: GestureClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub rng_seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree_count: 100,
            // ceil(sqrt(7))
            max_features: 3,
            min_samples_split: 2,
            max_depth: None,
            rng_seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        ForestParams {
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tree_count == 0 {
            return Err(Error::Config("tree_count must be positive".into()));
        }
        if self.max_features == 0 || self.max_features > FEATURE_COUNT {
            return Err(Error::Config(format!(
                "max_features must be in 1..={FEATURE_COUNT}, got {}",
                self.max_features
            )));
        }
        if self.min_samples_split == 0 {
            return Err(Error::Config("min_samples_split must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive when set".into()));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_features: self.max_features,
            min_samples_split: self.min_samples_split,
            max_depth: self.max_depth,
        }
    }
}

/// Trained forest. Immutable; safe to share across threads for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    params: ForestParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub gesture: GestureClass,
    pub probabilities: [f64; GESTURE_COUNT],
}

impl Prediction {
    pub fn probability(&self) -> f64 {
        self.probabilities[self.gesture.index()]
    }
}

pub fn train(examples: &[LabeledExample], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if examples.is_empty() {
        return Err(Error::InsufficientData("no examples".into()));
    }
    let first = examples[0].label;
    if examples.iter().all(|e| e.label == first) {
        return Err(Error::InsufficientData(format!(
            "need at least two classes, only {first} present"
        )));
    }
    if let Some(bad) = examples.iter().position(|e| !e.features.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "example {bad} has non-finite features"
        )));
    }

    let rows: Vec<[f64; FEATURE_COUNT]> = examples.iter().map(|e| e.features.to_array()).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label.index()).collect();
    let data = TrainingSet {
        rows: &rows,
        labels: &labels,
    };
    let tree_params = params.tree_params();
    let n = examples.len();

    let trees = (0..params.tree_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed.wrapping_add(i as u64));
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            DecisionTree::fit(&data, &bootstrap, &tree_params, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        params: *params,
    })
}

impl ForestModel {
    pub(crate) fn from_parts(trees: Vec<DecisionTree>, params: ForestParams) -> Self {
        ForestModel { trees, params }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn class_list(&self) -> [GestureClass; GESTURE_COUNT] {
        GestureClass::ALL
    }

    /// Mean of the per-tree leaf distributions; the class is the argmax with
    /// the lowest id winning ties.
    pub fn predict(&self, features: &FeatureVector) -> Prediction {
        let x = features.to_array();
        let mut probs = [0.0f64; GESTURE_COUNT];
        for tree in &self.trees {
            let counts = tree.leaf_counts(&x);
            let total: u32 = counts.iter().sum();
            let total = total as f64;
            for (p, &c) in probs.iter_mut().zip(counts) {
                *p += c as f64 / total;
            }
        }
        let k = self.trees.len() as f64;
        for p in &mut probs {
            *p /= k;
        }
        let best = tree::argmax_lowest(probs.iter().copied());
        Prediction {
            gesture: GestureClass::ALL[best],
            probabilities: probs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_cluster_examples() -> Vec<LabeledExample> {
        (0..20)
            .map(|i| {
                let (rate, label) = if i < 10 {
                    (0.0, GestureClass::SlowTapping)
                } else {
                    (4.0, GestureClass::BigSwirling)
                };
                let mut f = FeatureVector::zeros();
                f.move_rate = rate + 0.01 * (i % 10) as f64;
                f.mean_x = 0.05 * (i % 7) as f64;
                f.mean_y = 0.5;
                LabeledExample { features: f, label }
            })
            .collect()
    }

    #[test]
    fn separable_two_classes() {
        let ex = two_cluster_examples();
        let model = train(
            &ex,
            &ForestParams {
                tree_count: 5,
                ..ForestParams::with_seed(7)
            },
        )
        .unwrap();
        assert_eq!(model.trees().len(), 5);
        for e in &ex {
            assert_eq!(model.predict(&e.features).gesture, e.label);
        }
    }

    #[test]
    fn single_class_is_insufficient() {
        let mut ex = two_cluster_examples();
        ex.truncate(10);
        assert!(matches!(
            train(&ex, &ForestParams::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            train(&[], &ForestParams::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ex = two_cluster_examples();
        let p = ForestParams {
            tree_count: 8,
            ..ForestParams::with_seed(11)
        };
        assert_eq!(train(&ex, &p).unwrap(), train(&ex, &p).unwrap());
    }

    #[test]
    fn degenerate_forest_predicts_only_class() {
        // every leaf of a forest trained where one class dominates a region
        let mut ex = two_cluster_examples();
        for e in ex.iter_mut().take(10) {
            e.label = GestureClass::FastTapping;
        }
        let model = train(
            &ex,
            &ForestParams {
                tree_count: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let p = model.predict(&ex[0].features);
        assert_eq!(p.gesture, GestureClass::FastTapping);
        assert_eq!(p.probability(), 1.0);
    }

    #[test]
    fn single_label_forest_is_certain_everywhere() {
        let mut counts = [0u32; GESTURE_COUNT];
        counts[GestureClass::FastTapping.index()] = 12;
        let trees = vec![DecisionTree::from_nodes(vec![Node::Leaf { counts }]); 4];
        let model = ForestModel::from_parts(
            trees,
            ForestParams {
                tree_count: 4,
                ..Default::default()
            },
        );
        for v in [0.0, 0.3, 17.0] {
            let f = FeatureVector::from_array([v; FEATURE_COUNT]);
            let p = model.predict(&f);
            assert_eq!(p.gesture, GestureClass::FastTapping);
            assert_eq!(p.probability(), 1.0);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let ex = two_cluster_examples();
        for p in [
            ForestParams {
                tree_count: 0,
                ..Default::default()
            },
            ForestParams {
                max_features: 8,
                ..Default::default()
            },
            ForestParams {
                max_depth: Some(0),
                ..Default::default()
            },
        ] {
            assert!(matches!(train(&ex, &p), Err(Error::Config(_))));
        }
    }
}
