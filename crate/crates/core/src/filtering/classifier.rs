//! Hashed unigram + bigram logistic regression trained with averaged SGD.
//!
//! Feature values are relative frequencies, so a document and the same
//! document repeated on a new line get identical scores (bigrams never
//! span a line break).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::stable_hash;

pub const DEFAULT_HASH_BITS: u32 = 20;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("positive class is empty")]
    EmptyPositives,
    #[error("negative class is empty")]
    EmptyNegatives,
    #[error("hash_bits must be in 1..=30")]
    InvalidHashBits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityClassifier {
    hash_bits: u32,
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean logistic loss of the averaged model after each epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredClassifier {
    hash_bits: u32,
    bias: f64,
    weights: Vec<(u32, f64)>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sparse frequency-normalised features, sorted by index.
fn features(text: &str, hash_bits: u32) -> Vec<(u32, f64)> {
    let mask = (1u64 << hash_bits) - 1;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut total = 0.0;
    for line in text.lines() {
        let toks: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        for t in &toks {
            *counts.entry((stable_hash(t.as_bytes(), 1) & mask) as u32).or_default() += 1.0;
            total += 1.0;
        }
        for pair in toks.windows(2) {
            let key = format!("{}\u{1}{}", pair[0], pair[1]);
            *counts.entry((stable_hash(key.as_bytes(), 2) & mask) as u32).or_default() += 1.0;
            total += 1.0;
        }
    }
    counts.into_iter().map(|(i, c)| (i, c / total)).collect()
}

fn log_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Trains on `positives` (label 1) and `negatives` (label 0). Sample order
/// within each epoch comes from `seed`.
pub fn train_quality_classifier(
    positives: &[String],
    negatives: &[String],
    hash_bits: u32,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(QualityClassifier, TrainingReport), ClassifierError> {
    if positives.is_empty() {
        return Err(ClassifierError::EmptyPositives);
    }
    if negatives.is_empty() {
        return Err(ClassifierError::EmptyNegatives);
    }
    if !(1..=30).contains(&hash_bits) {
        return Err(ClassifierError::InvalidHashBits);
    }
    let data: Vec<(Vec<(u32, f64)>, f64)> = positives
        .iter()
        .map(|t| (features(t, hash_bits), 1.0))
        .chain(negatives.iter().map(|t| (features(t, hash_bits), 0.0)))
        .collect();

    let dim = 1usize << hash_bits;
    // Averaging via the lazy trick: avg = w - u / c.
    let mut w = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    let (mut b, mut ub) = (0.0, 0.0);
    let mut c = 1.0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epoch_loss = Vec::with_capacity(epochs);

    let averaged = |w: &[f64], u: &[f64], b: f64, ub: f64, c: f64| {
        let weights: Vec<f64> = w.iter().zip(u).map(|(w, u)| w - u / c).collect();
        QualityClassifier { hash_bits, weights, bias: b - ub / c }
    };

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let z: f64 = b + x.iter().map(|(j, v)| w[*j as usize] * v).sum::<f64>();
            let g = sigmoid(z) - y;
            for (j, v) in x {
                let delta = -lr * g * v;
                w[*j as usize] += delta;
                u[*j as usize] += c * delta;
            }
            b -= lr * g;
            ub += c * -lr * g;
            c += 1.0;
        }
        let model = averaged(&w, &u, b, ub, c);
        let loss = data.iter().map(|(x, y)| log_loss(model.score_features(x), *y)).sum::<f64>() / data.len() as f64;
        epoch_loss.push(loss);
    }
    let model = averaged(&w, &u, b, ub, c);
    let correct = data.iter().filter(|(x, y)| (model.score_features(x) > 0.5) == (*y > 0.5)).count();
    let report = TrainingReport { epoch_loss, train_accuracy: correct as f64 / data.len() as f64 };
    Ok((model, report))
}

impl QualityClassifier {
    fn score_features(&self, x: &[(u32, f64)]) -> f64 {
        sigmoid(self.bias + x.iter().map(|(j, v)| self.weights[*j as usize] * v).sum::<f64>())
    }

    /// Probability that `text` belongs to the high-quality class.
    pub fn score(&self, text: &str) -> f64 {
        self.score_features(&features(text, self.hash_bits))
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn to_json(&self) -> String {
        let weights =
            self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, w)| (i as u32, *w)).collect();
        let stored = StoredClassifier { hash_bits: self.hash_bits, bias: self.bias, weights };
        serde_json::to_string(&stored).expect("classifier serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let stored: StoredClassifier = serde_json::from_str(s)?;
        if !(1..=30).contains(&stored.hash_bits) {
            return Err(serde::de::Error::custom("hash_bits out of range"));
        }
        let mut weights = vec![0.0; 1usize << stored.hash_bits];
        for (i, w) in stored.weights {
            if let Some(slot) = weights.get_mut(i as usize) {
                *slot = w;
            }
        }
        Ok(QualityClassifier { hash_bits: stored.hash_bits, weights, bias: stored.bias })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn separable_pair_is_learned() {
        let pos = s(&["the committee published a detailed annual report"]);
        let neg = s(&["click here buy cheap pills now now now"]);
        let (clf, report) = train_quality_classifier(&pos, &neg, 16, 30, 0.5, 1).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert!(clf.score(&pos[0]) > 0.5);
        assert!(clf.score(&neg[0]) < 0.5);
        for pair in report.epoch_loss.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose: {pair:?}");
        }
    }

    #[test]
    fn different_seed_same_accuracy() {
        let pos = s(&["well edited encyclopedic prose about rivers", "a careful history of bridges"]);
        let neg = s(&["win win win free prize click", "cheap cheap deals click now"]);
        for seed in [1, 2, 3] {
            let (_, r) = train_quality_classifier(&pos, &neg, 16, 40, 0.5, seed).unwrap();
            assert_eq!(r.train_accuracy, 1.0);
        }
    }

    #[test]
    fn identical_classes_score_near_half() {
        let docs = s(&["some ordinary text here", "another ordinary line of words"]);
        let (clf, _) = train_quality_classifier(&docs, &docs, 16, 20, 0.5, 7).unwrap();
        for d in &docs {
            assert!((clf.score(d) - 0.5).abs() <= 0.05, "score {}", clf.score(d));
        }
    }

    #[test]
    fn empty_doc_scores_bias_only() {
        let (clf, _) = train_quality_classifier(&s(&["good text"]), &s(&["bad"]), 12, 5, 0.5, 3).unwrap();
        assert_eq!(clf.score(""), sigmoid(clf.bias()));
    }

    #[test]
    fn duplication_does_not_change_score() {
        let (clf, _) =
            train_quality_classifier(&s(&["alpha beta gamma"]), &s(&["delta epsilon"]), 12, 5, 0.5, 3).unwrap();
        let doc = "alpha beta delta";
        assert_eq!(clf.score(doc), clf.score(&format!("{doc}\n{doc}")));
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(
            train_quality_classifier(&[], &s(&["x"]), 12, 1, 0.1, 0),
            Err(ClassifierError::EmptyPositives)
        ));
        assert!(matches!(
            train_quality_classifier(&s(&["x"]), &[], 12, 1, 0.1, 0),
            Err(ClassifierError::EmptyNegatives)
        ));
    }

    #[test]
    fn json_round_trip() {
        let (clf, _) = train_quality_classifier(&s(&["good text"]), &s(&["bad"]), 12, 5, 0.5, 3).unwrap();
        let back = QualityClassifier::from_json(&clf.to_json()).unwrap();
        assert_eq!(back, clf);
    }
}
