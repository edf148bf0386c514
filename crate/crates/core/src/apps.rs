//! Applications of Boomerang local sampling: dataset anonymization,
//! classifier data augmentation, and resolution enhancement of downsampled
//! signals (single-pass and cascaded).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_classifier, train_classifier_mixed, ClassifierConfig, Mixing};
use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::forward::Sample;
use crate::io::MetricRow;
use crate::metrics::{euclidean, mean_and_se, median_bandwidth, summarize, two_sample, LocalityReport, TwoSampleReport};
use crate::nn::shuffled_indices;
use crate::rng::{derive_seed, stream, StreamTag};
use crate::sampler::{boomerang_batch, cascade, BoomerangConfig};
use crate::schedule::{NoiseSchedule, StrideSchedule};

fn boomerang_cfg(t_boom: usize, n_cascade: usize, seed: u64, stride: Option<&StrideSchedule>) -> BoomerangConfig {
    BoomerangConfig {
        t_boom,
        n_cascade,
        seed,
        stride: stride.cloned(),
        record_trace: false,
    }
}

/// Dataset with every record replaced by its Boomerang output.
#[derive(Debug, Clone)]
pub struct Anonymized {
    pub data: Vec<Vec<f64>>,
    pub report: LocalityReport,
}

/// Boomerang every record at depth `t_boom`; the report measures Euclidean
/// distance to the originals against `threshold`.
pub fn anonymize_dataset(
    data: &[Vec<f64>],
    t_boom: usize,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    seed: u64,
    threshold: f64,
    stride: Option<&StrideSchedule>,
) -> Result<Anonymized> {
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let out = boomerang_batch(data, &boomerang_cfg(t_boom, 1, seed, stride), den, sched)?;
    let d: Vec<f64> = data.iter().zip(&out).map(|(a, b)| euclidean(a, b)).collect();
    let report = summarize(t_boom as f64 / sched.steps() as f64, &d, threshold);
    Ok(Anonymized { data: out, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationProtocol {
    /// Per-example, per-epoch chance of training on the Boomerang copy.
    pub mix_probability: f64,
    pub t_boom: usize,
    /// Copies are generated once before training.
    pub pregenerated: bool,
}

impl Default for AugmentationProtocol {
    fn default() -> Self {
        Self {
            mix_probability: 0.5,
            t_boom: 0,
            pregenerated: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentationSetup {
    pub protocol: AugmentationProtocol,
    pub classifier: ClassifierConfig,
    pub n_seeds: usize,
    /// Seed `i` of a run uses `seed + i`.
    pub seed: u64,
    /// Draw this many training points per seed from the pool (all if `None`).
    pub train_size: Option<usize>,
    pub stride: Option<StrideSchedule>,
}

/// Test accuracies of the three conditions for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSeed {
    pub seed: u64,
    pub baseline: f64,
    pub augmented: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationTable {
    pub t_boom: usize,
    pub rows: Vec<AugmentationSeed>,
}

impl AugmentationTable {
    /// `(mean, standard error)` for baseline, augmented and synthetic-only.
    pub fn summary(&self) -> [(f64, f64); 3] {
        let col = |f: fn(&AugmentationSeed) -> f64| mean_and_se(&self.rows.iter().map(f).collect::<Vec<_>>());
        [col(|r| r.baseline), col(|r| r.augmented), col(|r| r.synthetic)]
    }

    pub fn metric_rows(&self) -> Vec<MetricRow> {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    MetricRow::new("baseline", r.seed, "accuracy", r.baseline),
                    MetricRow::new("boomerang", r.seed, "accuracy", r.augmented),
                    MetricRow::new("synthetic", r.seed, "accuracy", r.synthetic),
                ]
            })
            .collect()
    }
}

/// Baseline, Boomerang-augmented and synthetic-only classifiers for each
/// seed. Synthetic copies are Boomerang outputs at `t_boom = T` that keep
/// the label of the point they started from.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_eval(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    setup: &AugmentationSetup,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<AugmentationTable> {
    let p = &setup.protocol;
    if !(0.0..=1.0).contains(&p.mix_probability) {
        return Err(Error::validation("mix_probability must lie in [0, 1]"));
    }
    if !p.pregenerated {
        return Err(Error::validation("only pregenerated augmentation is supported"));
    }
    if p.t_boom > sched.steps() {
        return Err(Error::validation("t_boom exceeds T"));
    }
    if setup.n_seeds == 0 {
        return Err(Error::validation("n_seeds must be positive"));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::validation("inputs and labels differ in length"));
    }
    if let Some(n) = setup.train_size {
        if n == 0 || n > train_x.len() {
            return Err(Error::validation("train_size must be in 1..=pool size"));
        }
    }
    let rows = (0..setup.n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = setup.seed.wrapping_add(i);
            let (xs, ys): (Vec<Vec<f64>>, Vec<usize>) = match setup.train_size {
                Some(n) => {
                    let mut rng = stream(seed, StreamTag::Permutation, 0, 1);
                    shuffled_indices(train_x.len(), &mut rng)[..n]
                        .iter()
                        .map(|&j| (train_x[j].clone(), train_y[j]))
                        .unzip()
                }
                None => (train_x.to_vec(), train_y.to_vec()),
            };
            let stride = setup.stride.as_ref();
            let aug_seed = derive_seed(seed, StreamTag::Boomerang, 0, 0);
            let syn_seed = derive_seed(seed, StreamTag::Boomerang, 1, 0);
            let copies = boomerang_batch(&xs, &boomerang_cfg(p.t_boom, 1, aug_seed, stride), den, sched)?;
            let synthetic = boomerang_batch(&xs, &boomerang_cfg(sched.steps(), 1, syn_seed, stride), den, sched)?;
            let cfg = ClassifierConfig {
                seed,
                ..setup.classifier.clone()
            };
            let baseline = train_classifier(&xs, &ys, &cfg)?;
            let augmented = train_classifier_mixed(
                &xs,
                &ys,
                Some(Mixing {
                    copies: &copies,
                    probability: p.mix_probability,
                }),
                &cfg,
            )?;
            let syn = train_classifier(&synthetic, &ys, &cfg)?;
            Ok(AugmentationSeed {
                seed,
                baseline: baseline.accuracy(test_x, test_y),
                augmented: augmented.accuracy(test_x, test_y),
                synthetic: syn.accuracy(test_x, test_y),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentationTable {
        t_boom: p.t_boom,
        rows,
    })
}

/// Grid layout of a signal: `rows == 1` for plain vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn vector(len: usize) -> Self {
        Self { rows: 1, cols: len }
    }

    pub fn square(side: usize) -> Self {
        Self { rows: side, cols: side }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_image(&self) -> bool {
        self.rows > 1
    }
}

fn check_factor(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::validation(format!("resampling factor must be >= 2, got {k}")));
    }
    Ok(())
}

fn block_mean(x: &[f64], k: usize) -> Vec<f64> {
    x.chunks_exact(k).map(|c| c.iter().sum::<f64>() / k as f64).collect()
}

/// Center-aligned linear interpolation by `k`. Output sample `j` sits at
/// input coordinate `(j + 0.5) / k - 0.5`; beyond the outermost input
/// samples the nearest segment is extended linearly.
fn interp_1d(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![x[0]; k];
    }
    (0..n * k)
        .map(|j| {
            let u = (j as f64 + 0.5) / k as f64 - 0.5;
            let i = (u.floor().max(0.0) as usize).min(n - 2);
            let f = u - i as f64;
            x[i] + (x[i + 1] - x[i]) * f
        })
        .collect()
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Apply `op` to every row, then (for images) to every column.
fn separable(x: &[f64], shape: Shape, out_shape: Shape, op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let by_rows: Vec<f64> = x.chunks_exact(shape.cols).flat_map(&op).collect();
    if !shape.is_image() {
        return by_rows;
    }
    let t = transpose(&by_rows, shape.rows, out_shape.cols);
    let cols: Vec<f64> = t.chunks_exact(shape.rows).flat_map(&op).collect();
    transpose(&cols, out_shape.cols, out_shape.rows)
}

/// Block averaging by `k` along every axis longer than one. Dimensions must
/// be divisible by `k`; there is no padding.
pub fn downsample(x: &[f64], shape: Shape, k: usize) -> Result<(Vec<f64>, Shape)> {
    check_factor(k)?;
    check_dim(shape.len(), x.len())?;
    let divisible = shape.cols.is_multiple_of(k) && (!shape.is_image() || shape.rows.is_multiple_of(k));
    if !divisible || shape.is_empty() {
        return Err(Error::validation(format!(
            "shape {}x{} is not divisible by {k}",
            shape.rows, shape.cols
        )));
    }
    let out = Shape {
        rows: if shape.is_image() { shape.rows / k } else { 1 },
        cols: shape.cols / k,
    };
    Ok((separable(x, shape, out, |v| block_mean(v, k)), out))
}

/// Separable center-aligned linear interpolation by `k`, the inverse of
/// [`downsample`] for affine signals.
pub fn upsample_linear(x: &[f64], shape: Shape, k: usize) -> Result<(Vec<f64>, Shape)> {
    check_factor(k)?;
    check_dim(shape.len(), x.len())?;
    if shape.is_empty() {
        return Err(Error::validation("cannot upsample an empty signal"));
    }
    let out = Shape {
        rows: if shape.is_image() { shape.rows * k } else { 1 },
        cols: shape.cols * k,
    };
    Ok((separable(x, shape, out, |v| interp_1d(v, k)), out))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// One resolution-enhancement problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PreTask {
    pub x_true: Vec<f64>,
    pub shape: Shape,
    pub k: usize,
    pub x_ds: Vec<f64>,
    pub x_up: Vec<f64>,
    pub t_boom: usize,
    pub n_cascade: usize,
}

impl PreTask {
    /// Downsample `x_true` by `k` and interpolate back.
    pub fn new(x_true: Vec<f64>, shape: Shape, k: usize, t_boom: usize, n_cascade: usize) -> Result<Self> {
        let (x_ds, small) = downsample(&x_true, shape, k)?;
        let (x_up, _) = upsample_linear(&x_ds, small, k)?;
        Ok(Self {
            x_true,
            shape,
            k,
            x_ds,
            x_up,
            t_boom,
            n_cascade,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreResult {
    pub enhanced: Vec<f64>,
    pub mse: f64,
    pub interpolation_mse: f64,
    pub reverse_steps: usize,
}

/// Boomerang (or cascade, when `n_cascade > 1`) applied to the interpolated
/// estimate.
pub fn pre_enhance(
    task: &PreTask,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    seed: u64,
    stride: Option<&StrideSchedule>,
) -> Result<PreResult> {
    check_dim(task.x_true.len(), task.x_up.len())?;
    let cfg = boomerang_cfg(task.t_boom, task.n_cascade, seed, stride);
    let (out, trace) = cascade(&Sample::clean(task.x_up.clone()), &cfg, den, sched)?;
    Ok(PreResult {
        mse: mse(&out.x, &task.x_true),
        interpolation_mse: mse(&task.x_up, &task.x_true),
        enhanced: out.x,
        reverse_steps: trace.reverse_steps,
    })
}

/// Batch enhancement with distribution-level comparison to clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct PreBatchReport {
    pub t_boom: usize,
    pub n_cascade: usize,
    pub enhanced: Vec<Vec<f64>>,
    pub interpolated: Vec<Vec<f64>>,
    pub mse_enhanced: f64,
    pub mse_interpolated: f64,
    pub enhanced_vs_clean: TwoSampleReport,
    pub interpolated_vs_clean: TwoSampleReport,
}

impl PreBatchReport {
    pub fn metric_rows(&self, seed: u64) -> Vec<MetricRow> {
        let tag = format!("t{}_n{}", self.t_boom, self.n_cascade);
        vec![
            MetricRow::new("interpolated", seed, "mse", self.mse_interpolated),
            MetricRow::new("interpolated", seed, "mmd2", self.interpolated_vs_clean.mmd2),
            MetricRow::new(format!("boomerang_{tag}"), seed, "mse", self.mse_enhanced),
            MetricRow::new(format!("boomerang_{tag}"), seed, "mmd2", self.enhanced_vs_clean.mmd2),
        ]
    }
}

/// Enhance every image of `truths`; image `i` uses chain `i` of `seed`.
/// Both batches are compared to `clean` with the same kernel bandwidth,
/// by default the median heuristic on `clean`.
#[allow(clippy::too_many_arguments)]
pub fn pre_batch(
    truths: &[Vec<f64>],
    shape: Shape,
    k: usize,
    t_boom: usize,
    n_cascade: usize,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    seed: u64,
    clean: &[Vec<f64>],
    bandwidth: Option<f64>,
    stride: Option<&StrideSchedule>,
) -> Result<PreBatchReport> {
    if truths.is_empty() {
        return Err(Error::validation("no images to enhance"));
    }
    let tasks = truths
        .iter()
        .map(|x| PreTask::new(x.clone(), shape, k, t_boom, n_cascade))
        .collect::<Result<Vec<_>>>()?;
    let interpolated: Vec<Vec<f64>> = tasks.iter().map(|t| t.x_up.clone()).collect();
    let enhanced = boomerang_batch(&interpolated, &boomerang_cfg(t_boom, n_cascade, seed, stride), den, sched)?;
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(clean, clean));
    let avg_mse = |xs: &[Vec<f64>]| xs.iter().zip(truths).map(|(a, b)| mse(a, b)).sum::<f64>() / xs.len() as f64;
    Ok(PreBatchReport {
        t_boom,
        n_cascade,
        mse_enhanced: avg_mse(&enhanced),
        mse_interpolated: avg_mse(&interpolated),
        enhanced_vs_clean: two_sample(&enhanced, clean, h)?,
        interpolated_vs_clean: two_sample(&interpolated, clean, h)?,
        enhanced,
        interpolated,
    })
}

/// Cascade counts tried by [`select_cascade`] and the per-pass depth each
/// gets so every candidate spends `total_steps` reverse steps.
pub fn cascade_plan(total_steps: usize, candidates: &[usize]) -> Vec<(usize, usize)> {
    candidates
        .iter()
        .filter(|&&n| n >= 1 && total_steps / n >= 1)
        .map(|&n| (n, total_steps / n))
        .collect()
}

/// Runs every cascade candidate and returns all reports plus the index of
/// the one with the smallest MMD^2 to clean data.
#[allow(clippy::too_many_arguments)]
pub fn select_cascade(
    truths: &[Vec<f64>],
    shape: Shape,
    k: usize,
    total_steps: usize,
    candidates: &[usize],
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    seed: u64,
    clean: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<(Vec<PreBatchReport>, usize)> {
    let plan = cascade_plan(total_steps, candidates);
    if plan.is_empty() {
        return Err(Error::validation("no usable cascade candidates"));
    }
    let reports = plan
        .iter()
        .map(|&(n, t)| pre_batch(truths, shape, k, t, n, den, sched, seed, clean, bandwidth, None))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..reports.len())
        .min_by(|&a, &b| {
            reports[a]
                .enhanced_vs_clean
                .mmd2
                .total_cmp(&reports[b].enhanced_vs_clean.mmd2)
        })
        .unwrap();
    Ok((reports, best))
}
