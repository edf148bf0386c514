//! Builtin toy datasets.
//!
//! `gauss1`, `gmm2` and `clusters3` are Gaussian mixtures, so their oracle
//! denoisers are exact. `moons` and `bumps16` have no closed form and are
//! paired with kernel-density mixtures fitted to samples.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::GaussianMixture;
use crate::error::{Error, Result};
use crate::rng::{stream, NoiseSource, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Gauss1,
    Gmm2,
    Clusters3,
    Moons,
    Bumps16,
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss1" => Ok(Builtin::Gauss1),
            "gmm2" => Ok(Builtin::Gmm2),
            "clusters3" => Ok(Builtin::Clusters3),
            "moons" => Ok(Builtin::Moons),
            "bumps16" => Ok(Builtin::Bumps16),
            other => Err(Error::validation(format!("unknown builtin dataset '{other}'"))),
        }
    }
}

/// Points with optional class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl Builtin {
    pub fn dim(self) -> usize {
        match self {
            Builtin::Gauss1 | Builtin::Gmm2 | Builtin::Moons => 2,
            Builtin::Clusters3 => CLUSTERS3_DIM,
            Builtin::Bumps16 => BUMPS_SIDE * BUMPS_SIDE,
        }
    }

    /// The exact mixture when one exists.
    pub fn mixture(self) -> Option<LabeledMixture> {
        match self {
            Builtin::Gauss1 => Some(LabeledMixture::single(GaussianMixture::standard(2).ok()?)),
            Builtin::Gmm2 => Some(gmm2()),
            Builtin::Clusters3 => Some(clusters3()),
            Builtin::Moons | Builtin::Bumps16 => None,
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Dataset {
        match self {
            Builtin::Moons => {
                let (x, y) = moons(n, 0.1, seed);
                Dataset { x, labels: Some(y) }
            }
            Builtin::Bumps16 => Dataset {
                x: bumps16(n, seed),
                labels: None,
            },
            other => {
                let m = other.mixture().expect("mixture builtin");
                let (x, y) = m.sample(n, seed);
                let labels = (m.classes() > 1).then_some(y);
                Dataset { x, labels }
            }
        }
    }
}

/// A Gaussian mixture whose components are grouped into classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMixture {
    pub gmm: GaussianMixture,
    /// Class of each component.
    pub class_of: Vec<usize>,
}

impl LabeledMixture {
    pub fn single(gmm: GaussianMixture) -> Self {
        let k = gmm.components();
        Self {
            gmm,
            class_of: vec![0; k],
        }
    }

    pub fn classes(&self) -> usize {
        self.class_of.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sample(&self, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = stream(seed, StreamTag::Dataset, 0, 0);
        self.gmm
            .sample_labeled(n, &mut rng)
            .into_iter()
            .map(|(x, k)| (x, self.class_of[k]))
            .unzip()
    }
}

/// Means `+-3 e1`, variance 0.5, equal weights; class = component.
pub fn gmm2() -> LabeledMixture {
    let gmm = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
        vec![0.5, 0.5],
    )
    .expect("valid gmm2");
    LabeledMixture {
        gmm,
        class_of: vec![0, 1],
    }
}

pub const CLUSTERS3_DIM: usize = 64;

/// Six unit-variance clusters in `R^64` on the corners of a regular hexagon
/// of radius 6 in the first two coordinates; opposite corners share a class,
/// so each of the three classes is bimodal. The other 62 coordinates carry
/// no label information, which leaves small training sets room to overfit.
pub fn clusters3() -> LabeledMixture {
    let means = (0..6)
        .map(|k| {
            let a = PI / 3.0 * k as f64;
            let mut m = vec![0.0; CLUSTERS3_DIM];
            m[0] = 6.0 * a.cos();
            m[1] = 6.0 * a.sin();
            m
        })
        .collect();
    let gmm = GaussianMixture::new(vec![1.0 / 6.0; 6], means, vec![1.0; 6]).expect("valid clusters3");
    LabeledMixture {
        gmm,
        class_of: vec![0, 1, 2, 0, 1, 2],
    }
}

/// Two interleaved half circles with Gaussian jitter of standard deviation
/// `noise`; labels alternate between moons.
pub fn moons(n: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream(seed, StreamTag::Dataset, 0, 0);
    (0..n)
        .map(|i| {
            let y = i % 2;
            let a = PI * rng.random::<f64>();
            let (mut px, mut py) = if y == 0 {
                (a.cos(), a.sin())
            } else {
                (1.0 - a.cos(), 0.5 - a.sin())
            };
            let j = rng.standard_normal_vec(2);
            px += noise * j[0];
            py += noise * j[1];
            (vec![px, py], y)
        })
        .unzip()
}

pub const BUMPS_SIDE: usize = 16;

/// One 16x16 image: a single Gaussian bump with a random center in
/// `[3, 12]^2` and a random width in `[0.8, 1.6]` pixels, peak value 1.
pub fn bump_image(rng: &mut impl Rng) -> Vec<f64> {
    let cy = rng.random_range(3.0..12.0);
    let cx = rng.random_range(3.0..12.0);
    let w: f64 = rng.random_range(0.8..1.6);
    let mut img = Vec::with_capacity(BUMPS_SIDE * BUMPS_SIDE);
    for r in 0..BUMPS_SIDE {
        for c in 0..BUMPS_SIDE {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            img.push((-d2 / (2.0 * w * w)).exp());
        }
    }
    img
}

pub fn bumps16(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, StreamTag::Dataset, 0, 0);
    (0..n).map(|_| bump_image(&mut rng)).collect()
}

/// Equal-weight mixture with one component of variance `variance` at each
/// point; an exact-posterior stand-in for a model trained on `points`.
pub fn kde_mixture(points: &[Vec<f64>], variance: f64) -> Result<GaussianMixture> {
    GaussianMixture::empirical(points, variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("gmm2".parse::<Builtin>().unwrap(), Builtin::Gmm2);
        assert!("faces".parse::<Builtin>().is_err());
    }

    #[test]
    fn shapes_and_labels() {
        for b in [Builtin::Gauss1, Builtin::Gmm2, Builtin::Clusters3, Builtin::Moons, Builtin::Bumps16] {
            let d = b.generate(20, 1);
            assert_eq!(d.x.len(), 20);
            assert!(d.x.iter().all(|x| x.len() == b.dim()));
        }
        assert!(Builtin::Gauss1.generate(5, 0).labels.is_none());
        assert_eq!(Builtin::Clusters3.mixture().unwrap().classes(), 3);
        let d = Builtin::Gmm2.generate(1000, 2);
        let ones = d.labels.unwrap().iter().filter(|&&y| y == 1).count();
        assert!((ones as f64 / 1000.0 - 0.5).abs() < 0.06);
    }

    #[test]
    fn bumps_peak_near_one() {
        for img in bumps16(20, 3) {
            let peak = img.iter().copied().fold(0.0, f64::max);
            assert!(peak > 0.6 && peak <= 1.0);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(Builtin::Moons.generate(10, 4), Builtin::Moons.generate(10, 4));
    }
}
