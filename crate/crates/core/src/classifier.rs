//! Small softmax classifiers built on the dense network from [`crate::nn`].
//!
//! Used both as the learned feature map for locality sweeps and as the
//! downstream model in augmentation experiments.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{shuffled_indices, Cache, Mlp, Sgd};
use crate::rng::{stream, NoiseSource, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Per-example substitution source: with probability `probability`, each
/// epoch trains on `copies[i]` instead of the original example `i`.
#[derive(Debug, Clone, Copy)]
pub struct Mixing<'a> {
    pub copies: &'a [Vec<f64>],
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    net: Mlp,
    classes: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classifier {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        (0..l.len()).fold(0, |best, k| if l[k] > l[best] { k } else { best })
    }

    /// Fraction of `xs` whose predicted class equals the label.
    pub fn accuracy(&self, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / xs.len() as f64
    }

    /// Last hidden layer activations.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.net.penultimate(x)
    }
}

fn check_labeled(xs: &[Vec<f64>], labels: &[usize]) -> Result<(usize, usize)> {
    if xs.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if xs.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} inputs but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    let dim = xs[0].len();
    for x in xs {
        check_dim(dim, x.len())?;
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::validation("need at least two classes"));
    }
    Ok((dim, classes))
}

/// Minibatch SGD on softmax cross-entropy.
pub fn train_classifier(
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    train_classifier_mixed(xs, labels, None, cfg)
}

/// As [`train_classifier`], optionally substituting augmented copies per
/// example and epoch. Substitution choices come from their own RNG stream, so
/// a zero probability reproduces the unaugmented run exactly.
pub fn train_classifier_mixed(
    xs: &[Vec<f64>],
    labels: &[usize],
    mixing: Option<Mixing<'_>>,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    let (dim, classes) = check_labeled(xs, labels)?;
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch_size must be positive"));
    }
    if let Some(m) = &mixing {
        if m.copies.len() != xs.len() {
            return Err(Error::validation("augmented copies must match the training set"));
        }
        if !(0.0..=1.0).contains(&m.probability) {
            return Err(Error::validation("mix probability must lie in [0, 1]"));
        }
        for c in m.copies {
            check_dim(dim, c.len())?;
        }
    }
    let mut widths = vec![dim];
    widths.extend(&cfg.hidden);
    widths.push(classes);
    let mut init = stream(cfg.seed, StreamTag::Init, 0, 0);
    let mut net = Mlp::random(&widths, &mut init);
    let mut order_rng = stream(cfg.seed, StreamTag::Training, 0, 0);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut grads = net.zeros_like();
    let mut cache = Cache::default();
    for epoch in 0..cfg.epochs {
        let use_copy: Vec<bool> = match &mixing {
            Some(m) => {
                let mut r = stream(cfg.seed, StreamTag::Mixing, epoch as u64, 0);
                (0..xs.len())
                    .map(|_| rand::Rng::random::<f64>(&mut r) < m.probability)
                    .collect()
            }
            None => vec![false; xs.len()],
        };
        let order = shuffled_indices(xs.len(), &mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = match (&mixing, use_copy[i]) {
                    (Some(m), true) => &m.copies[i],
                    _ => &xs[i],
                };
                let logits = net.forward_cached(x, &mut cache);
                let mut d = softmax(&logits);
                epoch_loss -= d[labels[i]].max(f64::MIN_POSITIVE).ln();
                d[labels[i]] -= 1.0;
                d.iter_mut().for_each(|v| *v *= scale);
                net.backward(&cache, &d, &mut grads);
            }
            opt.step(&mut net, &grads);
        }
        if !epoch_loss.is_finite() || !net.is_finite() {
            return Err(Error::numerical(format!(
                "classifier training diverged at epoch {epoch}"
            )));
        }
    }
    Ok(Classifier { net, classes })
}

/// Feature map given by a trained classifier's last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    classifier: Classifier,
    /// Accuracy on the held-out split used during training.
    pub held_out_accuracy: f64,
}

impl Embedding {
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.classifier.features(x)
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }
}

/// Train a classifier on a random 80% of the data and keep its penultimate
/// layer as an embedding; the remaining 20% measures accuracy.
pub fn train_embedding(
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: &ClassifierConfig,
) -> Result<Embedding> {
    check_labeled(xs, labels)?;
    if xs.len() < 5 {
        return Err(Error::validation("need at least five points to hold some out"));
    }
    let mut rng = stream(cfg.seed, StreamTag::Permutation, 0, 0);
    let order = shuffled_indices(xs.len(), &mut rng);
    let cut = xs.len() * 4 / 5;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        idx.iter().map(|&i| (xs[i].clone(), labels[i])).unzip()
    };
    let (train_x, train_y) = pick(&order[..cut]);
    let (test_x, test_y) = pick(&order[cut..]);
    let classifier = train_classifier(&train_x, &train_y, cfg)?;
    let held_out_accuracy = classifier.accuracy(&test_x, &test_y);
    Ok(Embedding {
        classifier,
        held_out_accuracy,
    })
}

/// Two isotropic blobs at `+-separation/2` along the first axis.
pub fn two_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream(seed, StreamTag::Dataset, 0, 0);
    (0..n)
        .map(|i| {
            let y = i % 2;
            let mut x = rng.standard_normal_vec(dim);
            x[0] += if y == 0 { -separation / 2.0 } else { separation / 2.0 };
            (x, y)
        })
        .unzip()
}
