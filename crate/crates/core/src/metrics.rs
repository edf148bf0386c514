//! Sample-set statistics: moments, kernel two-sample distances with a
//! permutation null, and locality sweeps of Boomerang distance against depth.
//!
//! `TwoSampleReport` is the distributional distance used throughout in place
//! of perceptual metrics such as FID.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Embedding;
use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::nn::shuffled_indices;
use crate::rng::{derive_seed, stream, StreamTag};
use crate::sampler::{boomerang_batch, BoomerangConfig};
use crate::schedule::{NoiseSchedule, StrideSchedule};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Empirical `q`-quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased covariance, row-major `d x d`.
    pub cov: Vec<Vec<f64>>,
}

pub fn moments(set: &[Vec<f64>]) -> Result<Moments> {
    let dim = check_set(set)?;
    let n = set.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in set {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; dim]; dim];
    for x in set {
        for i in 0..dim {
            let di = x[i] - mean[i];
            for j in 0..dim {
                cov[i][j] += di * (x[j] - mean[j]);
            }
        }
    }
    let denom = (set.len().max(2) - 1) as f64;
    cov.iter_mut().flatten().for_each(|c| *c /= denom);
    Ok(Moments { mean, cov })
}

fn check_set(set: &[Vec<f64>]) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::validation("sample set is empty"))?;
    let dim = first.len();
    for x in set {
        check_dim(dim, x.len())?;
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub mean_diff: f64,
    pub cov_diff: f64,
    /// Unbiased MMD^2 estimate; may be slightly negative from sampling noise.
    pub mmd2: f64,
    pub bandwidth: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn rbf(u: &[f64], v: &[f64], inv_two_h2: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 * inv_two_h2).exp()
}

/// Unbiased MMD^2 from within-a and within-b sums over unordered pairs and
/// the full cross sum. For equal sizes `diag = sum_i k(a_i, b_i)` is dropped
/// from the cross term (the paired U-statistic), which makes the estimate
/// vanish when the two sets coincide.
fn mmd2_from_sums(s_aa: f64, s_bb: f64, s_ab: f64, diag: Option<f64>, m: usize, n: usize) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    match diag {
        Some(d) if m == n => 2.0 * (s_aa + s_bb - (s_ab - d)) / (nf * (nf - 1.0)),
        _ => 2.0 * s_aa / (mf * (mf - 1.0)) + 2.0 * s_bb / (nf * (nf - 1.0)) - 2.0 * s_ab / (mf * nf),
    }
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> Result<()> {
    let da = check_set(a)?;
    let db = check_set(b)?;
    check_dim(da, db)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::validation("each sample set needs at least two points"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::validation("bandwidth must be positive"));
    }
    Ok(())
}

/// Mean-difference norm, covariance Frobenius difference and unbiased MMD^2
/// with kernel `exp(-|u - v|^2 / (2 h^2))`.
pub fn two_sample(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> Result<TwoSampleReport> {
    check_pair(a, b, bandwidth)?;
    let ma = moments(a)?;
    let mb = moments(b)?;
    let mean_diff = euclidean(&ma.mean, &mb.mean);
    let cov_diff = ma
        .cov
        .iter()
        .flatten()
        .zip(mb.cov.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let k = 1.0 / (2.0 * bandwidth * bandwidth);
    let within = |s: &[Vec<f64>]| -> f64 {
        let rows: Vec<f64> = (0..s.len())
            .into_par_iter()
            .map(|i| s[i + 1..].iter().map(|v| rbf(&s[i], v, k)).sum())
            .collect();
        rows.iter().sum()
    };
    let cross_rows: Vec<f64> = a
        .par_iter()
        .map(|u| b.iter().map(|v| rbf(u, v, k)).sum())
        .collect();
    let diag = (a.len() == b.len()).then(|| a.iter().zip(b).map(|(u, v)| rbf(u, v, k)).sum());
    let mmd2 = mmd2_from_sums(
        within(a),
        within(b),
        cross_rows.iter().sum(),
        diag,
        a.len(),
        b.len(),
    );
    Ok(TwoSampleReport {
        mean_diff,
        cov_diff,
        mmd2,
        bandwidth,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Median pairwise distance of the pooled sets (at most 1000 evenly spaced
/// points are used). Falls back to 1 when every point coincides.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let step = pooled.len().div_ceil(1000).max(1);
    let pts: Vec<&Vec<f64>> = pooled.into_iter().step_by(step).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(euclidean(pts[i], pts[j]));
        }
    }
    let m = quantile(&d, 0.5);
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Observed statistic plus its distribution under random relabelling.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub report: TwoSampleReport,
    pub null: Vec<f64>,
}

impl PermutationTest {
    pub fn null_quantile(&self, q: f64) -> f64 {
        quantile(&self.null, q)
    }

    /// Standard deviation of the null statistics.
    pub fn null_sd(&self) -> f64 {
        let (_, se) = mean_and_se(&self.null);
        se * (self.null.len() as f64).sqrt()
    }

    /// Fraction of null statistics at least as large as the observed one,
    /// with the usual +1 correction.
    pub fn p_value(&self) -> f64 {
        let hits = self.null.iter().filter(|&&v| v >= self.report.mmd2).count();
        (hits + 1) as f64 / (self.null.len() + 1) as f64
    }
}

/// MMD^2 permutation test. The pooled kernel matrix is computed once; each
/// relabelling uses its own RNG stream.
pub fn permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: f64,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationTest> {
    let report = two_sample(a, b, bandwidth)?;
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let total = pooled.len();
    let k = 1.0 / (2.0 * bandwidth * bandwidth);
    let upper: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| pooled[i + 1..].iter().map(|v| rbf(pooled[i], v, k)).collect())
        .collect();
    let null = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(seed, StreamTag::Permutation, p as u64, 0);
            let order = shuffled_indices(total, &mut rng);
            let mut in_a = vec![false; total];
            for &i in &order[..a.len()] {
                in_a[i] = true;
            }
            let (mut s_aa, mut s_bb, mut s_ab) = (0.0, 0.0, 0.0);
            for (i, row) in upper.iter().enumerate() {
                let (mut ra, mut rb) = (0.0, 0.0);
                for (off, &kv) in row.iter().enumerate() {
                    if in_a[i + 1 + off] {
                        ra += kv;
                    } else {
                        rb += kv;
                    }
                }
                if in_a[i] {
                    s_aa += ra;
                    s_ab += rb;
                } else {
                    s_bb += rb;
                    s_ab += ra;
                }
            }
            let diag = (a.len() == b.len()).then(|| {
                (0..a.len())
                    .map(|i| {
                        let (x, y) = (order[i], order[a.len() + i]);
                        let (lo, hi) = (x.min(y), x.max(y));
                        upper[lo][hi - lo - 1]
                    })
                    .sum()
            });
            mmd2_from_sums(s_aa, s_bb, s_ab, diag, a.len(), b.len())
        })
        .collect();
    Ok(PermutationTest { report, null })
}

/// How the anonymity threshold of a sweep is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Absolute(f64),
    /// The given quantile of distances observed at a reference ratio.
    QuantileAtRatio { ratio: f64, quantile: f64 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::QuantileAtRatio {
            ratio: 0.1,
            quantile: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    #[serde(rename = "ratio")]
    pub t_boom_ratio: f64,
    pub mean_distance: f64,
    pub std_error: f64,
    pub frac_over_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub threshold: ThresholdRule,
    pub seed: u64,
    pub stride: Option<StrideSchedule>,
}

/// `t_boom` closest to `ratio * T`.
pub fn ratio_to_t_boom(ratio: f64, steps: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::validation(format!("ratio {ratio} outside [0, 1]")));
    }
    Ok((ratio * steps as f64).round() as usize)
}

/// Distances between each record and its Boomerang output at one depth.
/// Each depth draws from its own seed, so repeated depths reproduce exactly.
pub fn boomerang_distances(
    data: &[Vec<f64>],
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    t_boom: usize,
    seed: u64,
    stride: Option<&StrideSchedule>,
    embed: Option<&Embedding>,
) -> Result<Vec<f64>> {
    let cfg = BoomerangConfig {
        t_boom,
        n_cascade: 1,
        seed: derive_seed(seed, StreamTag::Boomerang, t_boom as u64, 0),
        stride: stride.cloned(),
        record_trace: false,
    };
    let out = boomerang_batch(data, &cfg, den, sched)?;
    Ok(data
        .par_iter()
        .zip(&out)
        .map(|(x, y)| match embed {
            Some(e) => euclidean(&e.embed(x), &e.embed(y)),
            None => euclidean(x, y),
        })
        .collect())
}

/// One report per ratio: mean distance, its standard error and the fraction
/// of records farther than the threshold.
pub fn locality_sweep(
    data: &[Vec<f64>],
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &SweepConfig,
    embed: Option<&Embedding>,
) -> Result<Vec<LocalityReport>> {
    check_set(data)?;
    let dists = |ratio: f64| -> Result<Vec<f64>> {
        let t = ratio_to_t_boom(ratio, sched.steps())?;
        boomerang_distances(data, den, sched, t, cfg.seed, cfg.stride.as_ref(), embed)
    };
    let per_ratio: Vec<Vec<f64>> = cfg.ratios.iter().map(|&r| dists(r)).collect::<Result<_>>()?;
    let threshold = match cfg.threshold {
        ThresholdRule::Absolute(v) => v,
        ThresholdRule::QuantileAtRatio { ratio, quantile: q } => {
            let reference = match cfg.ratios.iter().position(|&r| r == ratio) {
                Some(i) => per_ratio[i].clone(),
                None => dists(ratio)?,
            };
            quantile(&reference, q)
        }
    };
    Ok(cfg
        .ratios
        .iter()
        .zip(&per_ratio)
        .map(|(&ratio, d)| summarize(ratio, d, threshold))
        .collect())
}

pub fn summarize(ratio: f64, distances: &[f64], threshold: f64) -> LocalityReport {
    let (mean_distance, std_error) = mean_and_se(distances);
    let over = distances.iter().filter(|&&d| d > threshold).count();
    LocalityReport {
        t_boom_ratio: ratio,
        mean_distance,
        std_error,
        frac_over_threshold: over as f64 / distances.len() as f64,
    }
}

/// CSV with header `ratio,mean_distance,std_error,frac_over_threshold`.
pub fn write_locality_csv(reports: &[LocalityReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMixture, OracleDenoiser};
    use crate::rng::NoiseSource;

    fn gaussian_set(n: usize, dim: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, StreamTag::Dataset, 0, 0);
        (0..n)
            .map(|_| rng.standard_normal_vec(dim).into_iter().map(|v| v + shift).collect())
            .collect()
    }

    #[test]
    fn identical_sets() {
        let a = gaussian_set(300, 3, 0.0, 1);
        let r = two_sample(&a, &a, 1.0).unwrap();
        assert_eq!(r.mean_diff, 0.0);
        assert_eq!(r.cov_diff, 0.0);
        assert!(r.mmd2.abs() < 1e-10, "{}", r.mmd2);
    }

    #[test]
    fn permutation_null_calibrates_same_distribution() {
        let a = gaussian_set(2000, 2, 0.0, 2);
        let b = gaussian_set(2000, 2, 0.0, 3);
        let h = median_bandwidth(&a, &b);
        let t = permutation_test(&a, &b, h, 100, 7).unwrap();
        assert!(t.report.mmd2.abs() < 4.0 * t.null_sd(), "{} vs {}", t.report.mmd2, t.null_sd());
    }

    #[test]
    fn shifted_distribution_is_detected() {
        let a = gaussian_set(500, 2, 0.0, 4);
        let b = gaussian_set(500, 2, 3.0, 5);
        let h = median_bandwidth(&a, &b);
        let t = permutation_test(&a, &b, h, 100, 8).unwrap();
        assert!(t.report.mmd2 > 10.0 * t.null_quantile(0.95));
        assert!(t.p_value() < 0.02);
    }

    #[test]
    fn estimator_is_symmetric() {
        for (m, n) in [(40, 30), (35, 35)] {
            let a = gaussian_set(m, 2, 0.0, 6);
            let b = gaussian_set(n, 2, 1.0, 7);
            let direct = two_sample(&a, &b, 0.8).unwrap().mmd2;
            let swapped = two_sample(&b, &a, 0.8).unwrap().mmd2;
            assert!((direct - swapped).abs() < 1e-12);
        }
    }

    #[test]
    fn null_statistics_match_direct_estimates() {
        // Rebuild each relabelled split by hand and recompute its MMD^2.
        for (m, n) in [(12, 9), (10, 10)] {
            let a = gaussian_set(m, 2, 0.0, 8);
            let b = gaussian_set(n, 2, 0.5, 9);
            let t = permutation_test(&a, &b, 0.9, 5, 11).unwrap();
            let pooled: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
            for (p, &stat) in t.null.iter().enumerate() {
                let mut rng = stream(11, StreamTag::Permutation, p as u64, 0);
                let order = shuffled_indices(m + n, &mut rng);
                let pa: Vec<Vec<f64>> = order[..m].iter().map(|&i| pooled[i].clone()).collect();
                let pb: Vec<Vec<f64>> = order[m..].iter().map(|&i| pooled[i].clone()).collect();
                let direct = two_sample(&pa, &pb, 0.9).unwrap().mmd2;
                assert!((direct - stat).abs() < 1e-12, "{direct} vs {stat}");
            }
        }
    }

    #[test]
    fn rejects_mismatched_sets() {
        let a = gaussian_set(10, 2, 0.0, 1);
        let b = gaussian_set(10, 3, 0.0, 1);
        assert!(matches!(two_sample(&a, &b, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(two_sample(&a, &a[..1], 1.0).is_err());
        assert!(two_sample(&a, &a, 0.0).is_err());
    }

    #[test]
    fn moments_of_known_set() {
        let m = moments(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(m.mean, vec![2.0, 1.0]);
        assert_eq!(m.cov, vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
    }

    fn gmm2() -> OracleDenoiser {
        OracleDenoiser::new(
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![3.0, 0.0], vec![-3.0, 0.0]], vec![0.5, 0.5])
                .unwrap(),
        )
    }

    #[test]
    fn zero_ratio_has_zero_distance() {
        let sched = NoiseSchedule::default_linear(50).unwrap();
        let den = gmm2();
        let mut rng = stream(1, StreamTag::Dataset, 0, 0);
        let data = den.mixture().sample(50, &mut rng);
        let cfg = SweepConfig {
            ratios: vec![0.0, 0.5],
            threshold: ThresholdRule::Absolute(0.1),
            seed: 3,
            stride: None,
        };
        let r = locality_sweep(&data, &den, &sched, &cfg, None).unwrap();
        assert_eq!(r[0].mean_distance, 0.0);
        assert_eq!(r[0].frac_over_threshold, 0.0);
        assert!(r[1].mean_distance > 0.0);
        assert!(locality_sweep(&data, &den, &sched, &SweepConfig { ratios: vec![1.5], ..cfg }, None).is_err());
    }

    #[test]
    fn std_error_scales_with_sample_size() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let den = gmm2();
        let mut rng = stream(2, StreamTag::Dataset, 0, 0);
        let data = den.mixture().sample(4000, &mut rng);
        let d_small = boomerang_distances(&data[..1000], &den, &sched, 40, 5, None, None).unwrap();
        let d_big = boomerang_distances(&data, &den, &sched, 40, 6, None, None).unwrap();
        let ratio = mean_and_se(&d_small).1 / mean_and_se(&d_big).1;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_locality_csv(&[summarize(0.5, &[1.0, 3.0], 2.0)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "ratio,mean_distance,std_error,frac_over_threshold");
        assert_eq!(s.lines().nth(1).unwrap(), "0.5,2.0,1.0,0.5");
    }
}
