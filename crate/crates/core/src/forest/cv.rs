//! Repeated stratified k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forest::{train, ForestModel, ForestParams, LabeledExample};
use crate::gesture::{GestureClass, GESTURE_COUNT};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub repeats: usize,
    pub examples: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `fold_accuracies`.
    pub std_dev: f64,
    /// `confusion[truth][predicted]`, summed over every fold.
    pub confusion: [[u64; GESTURE_COUNT]; GESTURE_COUNT],
}

impl CvReport {
    /// One-line summary: vector count, mean accuracy and SD.
    pub fn table_row(&self) -> String {
        format!(
            "N={} folds={}x{} mean={:.3} sd={:.3}",
            self.examples, self.folds, self.repeats, self.mean, self.std_dev
        )
    }
}

/// Chance-level control: the same feature vectors with their labels permuted.
pub fn shuffle_labels(examples: &[LabeledExample], seed: u64) -> Vec<LabeledExample> {
    let mut labels: Vec<GestureClass> = examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    examples
        .iter()
        .zip(labels)
        .map(|(e, label)| LabeledExample {
            features: e.features,
            label,
        })
        .collect()
}

pub fn accuracy(model: &ForestModel, examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|e| model.predict(&e.features).gesture == e.label)
        .count();
    hits as f64 / examples.len() as f64
}

/// Assigns each example a fold so every class is spread as evenly as possible.
fn stratified_folds(examples: &[LabeledExample], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; examples.len()];
    // rotate the starting fold per class so fold sizes stay balanced overall
    let mut offset = 0usize;
    for class in GestureClass::ALL {
        let mut members: Vec<usize> = examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = (offset + k) % folds;
        }
        offset += members.len();
    }
    assignment
}

pub fn cross_validate(
    examples: &[LabeledExample],
    folds: usize,
    repeats: usize,
    params: &ForestParams,
) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    for class in GestureClass::ALL {
        let count = examples.iter().filter(|e| e.label == class).count();
        if count > 0 && count < folds {
            return Err(Error::StratificationImpossible {
                folds,
                class: class.code().into(),
                count,
            });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..repeats)
        .flat_map(|r| (0..folds).map(move |f| (r, f)))
        .collect();
    let assignments: Vec<Vec<usize>> = (0..repeats)
        .map(|r| stratified_folds(examples, folds, derive_seed(params.rng_seed, r as u64)))
        .collect();

    let results: Vec<Result<(f64, [[u64; GESTURE_COUNT]; GESTURE_COUNT])>> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let assign = &assignments[r];
            let (test, train_set): (Vec<_>, Vec<_>) =
                examples.iter().zip(assign).partition(|(_, &a)| a == f);
            let train_set: Vec<LabeledExample> = train_set.into_iter().map(|(e, _)| *e).collect();
            let test: Vec<LabeledExample> = test.into_iter().map(|(e, _)| *e).collect();
            let fold_params = ForestParams {
                rng_seed: derive_seed(params.rng_seed, 1_000_003 + (r * folds + f) as u64),
                ..*params
            };
            let model = train(&train_set, &fold_params)?;
            let mut confusion = [[0u64; GESTURE_COUNT]; GESTURE_COUNT];
            let mut hits = 0usize;
            for e in &test {
                let predicted = model.predict(&e.features).gesture;
                confusion[e.label.index()][predicted.index()] += 1;
                hits += usize::from(predicted == e.label);
            }
            Ok((hits as f64 / test.len() as f64, confusion))
        })
        .collect();

    let mut fold_accuracies = Vec::with_capacity(results.len());
    let mut confusion = [[0u64; GESTURE_COUNT]; GESTURE_COUNT];
    for res in results {
        let (acc, c) = res?;
        fold_accuracies.push(acc);
        for (row, crow) in confusion.iter_mut().zip(c) {
            for (v, cv) in row.iter_mut().zip(crow) {
                *v += cv;
            }
        }
    }
    let n = fold_accuracies.len() as f64;
    let mean = fold_accuracies.iter().sum::<f64>() / n;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    Ok(CvReport {
        folds,
        repeats,
        examples: examples.len(),
        fold_accuracies,
        mean,
        std_dev: var.sqrt(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    fn corpus(per_class: usize, classes: &[GestureClass]) -> Vec<LabeledExample> {
        classes
            .iter()
            .flat_map(|&c| {
                (0..per_class).map(move |i| {
                    let mut f = FeatureVector::zeros();
                    f.move_rate = c.index() as f64 * 3.0 + (i as f64) * 0.01;
                    f.mean_x = (i % 5) as f64 * 0.1;
                    LabeledExample {
                        features: f,
                        label: c,
                    }
                })
            })
            .collect()
    }

    #[test]
    fn folds_are_stratified() {
        let ex = corpus(
            23,
            &[
                GestureClass::FastTapping,
                GestureClass::BigSwirling,
                GestureClass::Combination,
            ],
        );
        let assign = stratified_folds(&ex, 10, 5);
        for class in [GestureClass::FastTapping, GestureClass::BigSwirling] {
            let mut per_fold = [0usize; 10];
            for (e, &a) in ex.iter().zip(&assign) {
                if e.label == class {
                    per_fold[a] += 1;
                }
            }
            let (lo, hi) = (
                per_fold.iter().min().unwrap(),
                per_fold.iter().max().unwrap(),
            );
            assert!(hi - lo <= 1, "{per_fold:?}");
        }
    }

    #[test]
    fn too_few_members_cannot_stratify() {
        let mut ex = corpus(20, &[GestureClass::FastTapping]);
        ex.extend(corpus(5, &[GestureClass::SlowTapping]));
        let err = cross_validate(&ex, 10, 1, &ForestParams::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::StratificationImpossible { count: 5, .. }
        ));
    }

    #[test]
    fn report_shape_and_consistency() {
        let ex = corpus(
            12,
            &[
                GestureClass::FastTapping,
                GestureClass::SlowTapping,
                GestureClass::SmallSwirling,
            ],
        );
        let params = ForestParams {
            tree_count: 5,
            ..ForestParams::with_seed(1)
        };
        let rep = cross_validate(&ex, 4, 3, &params).unwrap();
        assert_eq!(rep.fold_accuracies.len(), 12);
        let mean = rep.fold_accuracies.iter().sum::<f64>() / 12.0;
        assert!((rep.mean - mean).abs() < 1e-12);
        let total: u64 = rep.confusion.iter().flatten().sum();
        assert_eq!(total, (ex.len() * 3) as u64);
        assert!(rep.mean > 0.9);
        assert_eq!(rep, cross_validate(&ex, 4, 3, &params).unwrap());
    }
}
