//! One function per subcommand. Each writes its artifacts into `out` and
//! returns their file names relative to it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use boomerang_core::apps::{
    augmentation_eval, pre_batch, select_cascade, AugmentationProtocol, AugmentationSetup, Shape,
};
use boomerang_core::classifier::train_embedding;
use boomerang_core::denoiser::train_mlp;
use boomerang_core::io::{write_labeled_csv, write_metrics_csv, write_pgm, write_samples_csv, MetricRow};
use boomerang_core::metrics::{
    euclidean, locality_sweep, mean_and_se, write_locality_csv, SweepConfig, TwoSampleReport,
};
use boomerang_core::sampler::{boomerang_batch, sample_global, BoomerangConfig};
use boomerang_core::schedule::StepGrid;
use boomerang_core::{Error, Result};
use serde::Serialize;

use crate::config::{build_denoiser, build_schedule, draw_builtin, load_dataset, load_path, Loaded, RunConfig};

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_rows(out: &Path, name: &str, rows: &[Vec<f64>], labels: Option<&[usize]>) -> Result<()> {
    let w = create(out, name)?;
    match labels {
        Some(y) => write_labeled_csv(rows, y, w),
        None => write_samples_csv(rows, w),
    }
}

/// Writes up to `limit` records as `dir/NNNN{suffix}.pgm`.
fn write_images(
    out: &Path,
    dir: &str,
    suffix: &str,
    rows: &[Vec<f64>],
    shape: Shape,
    limit: usize,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    for (i, r) in rows.iter().take(limit).enumerate() {
        let name = format!("{dir}/{i:04}{suffix}.pgm");
        let mut w = create(out, &name)?;
        write_pgm(r, shape.cols, shape.rows, &mut w)?;
        w.flush()?;
        artifacts.push(name);
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, _) = build_schedule(cfg)?;
    let trained = train_mlp(&data.x, &sched, &cfg.train)?;
    let mut w = create(out, "model.bin")?;
    trained.model.save(&mut w)?;
    w.flush()?;
    let mut csv = csv::Writer::from_writer(create(out, "loss.csv")?);
    for (i, &loss) in trained.loss_trace.iter().enumerate() {
        csv.serialize(LossRow { epoch: i + 1, loss })?;
    }
    csv.flush()?;
    Ok(vec!["model.bin".into(), "loss.csv".into()])
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, stride) = build_schedule(cfg)?;
    let den = build_denoiser(cfg, &data, &sched)?;
    let grid: &dyn StepGrid = match &stride {
        Some(s) => s,
        None => &sched,
    };
    let g = sample_global(den.as_ref(), grid, den.dim(), cfg.n_samples, cfg.seed())?;
    let rows: Vec<Vec<f64>> = g.samples.into_iter().map(|s| s.x).collect();
    write_rows(out, "samples.csv", &rows, None)?;
    let mut artifacts = vec!["samples.csv".to_string()];
    if let Some(shape) = data.shape {
        write_images(out, "images", "", &rows, shape, cfg.pre.images, &mut artifacts)?;
    }
    Ok(artifacts)
}

#[derive(Serialize)]
struct BoomerangSummary {
    t_boom: usize,
    n_cascade: usize,
    records: usize,
    mean_distance: f64,
    std_error: f64,
}

pub fn boomerang(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, stride) = build_schedule(cfg)?;
    let den = build_denoiser(cfg, &data, &sched)?;
    let bcfg = BoomerangConfig {
        t_boom: cfg.t_boom,
        n_cascade: cfg.n_cascade,
        seed: cfg.seed(),
        stride,
        record_trace: false,
    };
    let rows = boomerang_batch(&data.x, &bcfg, den.as_ref(), &sched)?;
    write_rows(out, "boomerang.csv", &rows, data.labels.as_deref())?;
    let d: Vec<f64> = data.x.iter().zip(&rows).map(|(a, b)| euclidean(a, b)).collect();
    let (mean_distance, std_error) = mean_and_se(&d);
    write_json(
        out,
        "summary.json",
        &BoomerangSummary {
            t_boom: cfg.t_boom,
            n_cascade: cfg.n_cascade,
            records: rows.len(),
            mean_distance,
            std_error,
        },
    )?;
    let mut artifacts = vec!["boomerang.csv".to_string(), "summary.json".to_string()];
    if let Some(shape) = data.shape {
        write_images(out, "images", "", &rows, shape, cfg.pre.images, &mut artifacts)?;
    }
    Ok(artifacts)
}

fn labels_of<'a>(data: &'a Loaded, what: &str) -> Result<&'a [usize]> {
    data.labels
        .as_deref()
        .ok_or_else(|| Error::validation(format!("{what} needs labeled data")))
}

#[derive(Serialize)]
struct EmbeddingSummary {
    held_out_accuracy: f64,
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, stride) = build_schedule(cfg)?;
    let den = build_denoiser(cfg, &data, &sched)?;
    let mut artifacts = Vec::new();
    let embedding = match &cfg.embedding {
        Some(ccfg) => {
            let e = train_embedding(&data.x, labels_of(&data, "an embedding")?, ccfg)?;
            write_json(
                out,
                "embedding.json",
                &EmbeddingSummary {
                    held_out_accuracy: e.held_out_accuracy,
                },
            )?;
            artifacts.push("embedding.json".to_string());
            Some(e)
        }
        None => None,
    };
    let scfg = SweepConfig {
        ratios: cfg.ratios.clone(),
        threshold: cfg.threshold,
        seed: cfg.seed(),
        stride,
    };
    let reports = locality_sweep(&data.x, den.as_ref(), &sched, &scfg, embedding.as_ref())?;
    write_locality_csv(&reports, create(out, "sweep.csv")?)?;
    artifacts.insert(0, "sweep.csv".to_string());
    Ok(artifacts)
}

#[derive(Serialize)]
struct ConditionSummary {
    condition: &'static str,
    mean_accuracy: f64,
    std_error: f64,
}

pub fn augment_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, stride) = build_schedule(cfg)?;
    let den = build_denoiser(cfg, &data, &sched)?;
    let train_y = labels_of(&data, "augment-eval")?;
    let test = match (&cfg.augment.test_path, cfg.dataset.builtin) {
        (Some(p), _) => load_path(p)?,
        (None, Some(b)) if cfg.dataset.path.is_none() => draw_builtin(b, cfg.augment.test_size, cfg.aux_seed(2)),
        _ => return Err(Error::validation("augment-eval on a file dataset needs augment.test_path")),
    };
    let test_y = labels_of(&test, "the augmentation test set")?;
    let setup = AugmentationSetup {
        protocol: AugmentationProtocol {
            mix_probability: cfg.augment.mix_probability,
            t_boom: cfg.t_boom,
            pregenerated: true,
        },
        classifier: cfg.augment.classifier.clone(),
        n_seeds: cfg.augment.n_seeds,
        seed: cfg.seed(),
        train_size: cfg.augment.train_size,
        stride,
    };
    let table = augmentation_eval(&data.x, train_y, &test.x, test_y, &setup, den.as_ref(), &sched)?;
    write_metrics_csv(&table.metric_rows(), create(out, "augmentation.csv")?)?;
    let summary: Vec<ConditionSummary> = ["baseline", "boomerang", "synthetic"]
        .into_iter()
        .zip(table.summary())
        .map(|(condition, (mean_accuracy, std_error))| ConditionSummary {
            condition,
            mean_accuracy,
            std_error,
        })
        .collect();
    write_json(out, "summary.json", &summary)?;
    Ok(vec!["augmentation.csv".into(), "summary.json".into()])
}

#[derive(Serialize)]
struct PreSummary {
    t_boom: usize,
    n_cascade: usize,
    mse_enhanced: f64,
    mse_interpolated: f64,
    enhanced_vs_clean: TwoSampleReport,
    interpolated_vs_clean: TwoSampleReport,
    best_cascade: Option<usize>,
}

pub fn pre(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let data = load_dataset(cfg)?;
    let (sched, stride) = build_schedule(cfg)?;
    let den = build_denoiser(cfg, &data, &sched)?;
    let shape = match (cfg.pre.shape, data.shape) {
        (Some([rows, cols]), _) => Shape { rows, cols },
        (None, Some(s)) => s,
        (None, None) => Shape::vector(data.x[0].len()),
    };
    if shape.len() != data.x[0].len() {
        return Err(Error::validation(format!(
            "pre.shape {}x{} does not match records of length {}",
            shape.rows,
            shape.cols,
            data.x[0].len()
        )));
    }
    let clean = match (&cfg.pre.clean_path, cfg.dataset.builtin) {
        (Some(p), _) => load_path(p)?.x,
        (None, Some(b)) if cfg.dataset.path.is_none() => draw_builtin(b, cfg.pre.clean_size, cfg.aux_seed(3)).x,
        _ => return Err(Error::validation("pre on a file dataset needs pre.clean_path")),
    };
    let seed = cfg.seed();
    let k = cfg.pre.factor;
    let report = pre_batch(
        &data.x,
        shape,
        k,
        cfg.t_boom,
        cfg.n_cascade,
        den.as_ref(),
        &sched,
        seed,
        &clean,
        cfg.pre.bandwidth,
        stride.as_ref(),
    )?;
    let mut rows: Vec<MetricRow> = report.metric_rows(seed);
    let mut artifacts = vec!["pre.csv".to_string(), "summary.json".to_string()];
    let mut best_cascade = None;
    if !cfg.pre.cascade_candidates.is_empty() {
        let (reports, best) = select_cascade(
            &data.x,
            shape,
            k,
            cfg.t_boom,
            &cfg.pre.cascade_candidates,
            den.as_ref(),
            &sched,
            seed,
            &clean,
            cfg.pre.bandwidth,
        )?;
        best_cascade = Some(reports[best].n_cascade);
        for r in &reports {
            rows.extend(r.metric_rows(seed).into_iter().filter(|m| m.condition != "interpolated"));
        }
    }
    write_metrics_csv(&rows, create(out, "pre.csv")?)?;
    if data.shape.is_some() || cfg.pre.shape.is_some() {
        let n = cfg.pre.images;
        write_images(out, "images", "_truth", &data.x, shape, n, &mut artifacts)?;
        write_images(out, "images", "_interpolated", &report.interpolated, shape, n, &mut artifacts)?;
        write_images(out, "images", "_enhanced", &report.enhanced, shape, n, &mut artifacts)?;
    }
    write_json(
        out,
        "summary.json",
        &PreSummary {
            t_boom: report.t_boom,
            n_cascade: report.n_cascade,
            mse_enhanced: report.mse_enhanced,
            mse_interpolated: report.mse_interpolated,
            enhanced_vs_clean: report.enhanced_vs_clean,
            interpolated_vs_clean: report.interpolated_vs_clean,
            best_cascade,
        },
    )?;
    Ok(artifacts)
}
