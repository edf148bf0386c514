//! Run configuration: one JSON file plus command-line overrides, resolved
//! into the schedule, denoiser and dataset a command works on.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use boomerang_core::apps::Shape;
use boomerang_core::classifier::ClassifierConfig;
use boomerang_core::data::{Builtin, BUMPS_SIDE};
use boomerang_core::denoiser::{Denoiser, GaussianMixture, MlpDenoiser, OracleDenoiser, TrainConfig};
use boomerang_core::io::{read_pgm, read_samples_csv};
use boomerang_core::metrics::ThresholdRule;
use boomerang_core::rng::{derive_seed, StreamTag};
use boomerang_core::schedule::{NoiseSchedule, ScheduleSpec, StrideSchedule};
use boomerang_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which reverse-mean model a command uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    /// Exact denoiser for a Gaussian mixture: the builtin dataset's own
    /// mixture, or one read from a JSON file.
    Oracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mixture: Option<PathBuf>,
    },
    /// Exact denoiser for an isotropic kernel-density mixture fitted to
    /// `points` fresh draws of the builtin dataset (or the loaded rows).
    Kde { variance: f64, points: usize },
    /// Trained network checkpoint.
    Mlp { checkpoint: PathBuf },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Oracle { mixture: None }
    }
}

/// A builtin generator or a file of records. Files ending in `.csv` are
/// read as samples; `.pgm` files and directories of `.pgm` files as images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub builtin: Option<Builtin>,
    pub path: Option<PathBuf>,
    pub n: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            builtin: Some(Builtin::Gmm2),
            path: None,
            n: 2000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub mix_probability: f64,
    pub n_seeds: usize,
    pub train_size: Option<usize>,
    /// Fresh builtin draws used as the test set.
    pub test_size: usize,
    /// Labeled CSV test set, required when the dataset is a file.
    pub test_path: Option<PathBuf>,
    pub classifier: ClassifierConfig,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            mix_probability: 0.5,
            n_seeds: 5,
            train_size: Some(64),
            test_size: 2000,
            test_path: None,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreSpec {
    /// Downsampling factor.
    pub factor: usize,
    /// `[rows, cols]` of each record; inferred for images.
    pub shape: Option<[usize; 2]>,
    /// Fresh builtin draws forming the clean reference set.
    pub clean_size: usize,
    pub clean_path: Option<PathBuf>,
    /// Cascade counts compared at equal total steps `t_boom`; empty skips it.
    pub cascade_candidates: Vec<usize>,
    pub bandwidth: Option<f64>,
    /// Number of images written out as PGM triples.
    pub images: usize,
}

impl Default for PreSpec {
    fn default() -> Self {
        Self {
            factor: 2,
            shape: None,
            clean_size: 400,
            clean_path: None,
            cascade_candidates: Vec::new(),
            bandwidth: None,
            images: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub t_boom: usize,
    pub n_cascade: usize,
    pub ratios: Vec<f64>,
    /// Chains drawn by `sample`.
    pub n_samples: usize,
    pub threshold: ThresholdRule,
    /// Classifier whose penultimate layer measures `sweep` distances;
    /// Euclidean distance in data space when absent.
    pub embedding: Option<ClassifierConfig>,
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub pre: PreSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            schedule: ScheduleSpec::default(),
            model: ModelSpec::default(),
            dataset: DatasetSpec::default(),
            t_boom: 100,
            n_cascade: 1,
            ratios: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            n_samples: 1000,
            threshold: ThresholdRule::default(),
            embedding: None,
            train: TrainConfig::default(),
            augment: AugmentSpec::default(),
            pre: PreSpec::default(),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::validation(format!("{what} '{}' does not exist", path.display())));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        require_file(path, "config file")?;
        let f = File::open(path)?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::validation(format!("config '{}': {e}", path.display())))
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::validation("a seed is required (--seed or \"seed\" in the config)"));
        }
        match &self.model {
            ModelSpec::Oracle { mixture: Some(p) } => require_file(p, "mixture file")?,
            ModelSpec::Mlp { checkpoint } => require_file(checkpoint, "checkpoint")?,
            ModelSpec::Kde { variance, points } => {
                if !variance.is_finite() || *variance <= 0.0 || *points == 0 {
                    return Err(Error::validation("kde model needs variance > 0 and points >= 1"));
                }
            }
            ModelSpec::Oracle { mixture: None } => {}
        }
        match (&self.dataset.builtin, &self.dataset.path) {
            (_, Some(p)) => require_file(p, "dataset")?,
            (None, None) => return Err(Error::validation("dataset needs a builtin name or a path")),
            _ => {}
        }
        for (p, what) in [
            (&self.augment.test_path, "augmentation test set"),
            (&self.pre.clean_path, "clean reference set"),
        ] {
            if let Some(p) = p {
                require_file(p, what)?;
            }
        }
        if self.n_cascade == 0 {
            return Err(Error::validation("n_cascade must be at least 1"));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::validation("ratios must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or_else(|| self.seed())
    }

    /// Seed for auxiliary draws from the builtin generator, distinct from
    /// the main dataset draw.
    pub fn aux_seed(&self, purpose: u64) -> u64 {
        derive_seed(self.data_seed(), StreamTag::Dataset, purpose, 0)
    }
}

/// Records plus whatever the source says about labels and image shape.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub x: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub shape: Option<Shape>,
}

fn read_pgm_file(path: &Path) -> Result<(Shape, Vec<f64>)> {
    let (w, h, px) = read_pgm(BufReader::new(File::open(path)?))?;
    Ok((Shape { rows: h, cols: w }, px))
}

pub fn load_path(path: &Path) -> Result<Loaded> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::validation(format!("no .pgm files in '{}'", path.display())));
        }
        let mut shape = None;
        let mut x = Vec::with_capacity(files.len());
        for f in &files {
            let (s, px) = read_pgm_file(f)?;
            if shape.is_some_and(|prev| prev != s) {
                return Err(Error::validation(format!("'{}' differs in size from earlier images", f.display())));
            }
            shape = Some(s);
            x.push(px);
        }
        return Ok(Loaded { x, labels: None, shape });
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let (s, px) = read_pgm_file(path)?;
            Ok(Loaded {
                x: vec![px],
                labels: None,
                shape: Some(s),
            })
        }
        _ => {
            let (x, labels) = read_samples_csv(BufReader::new(File::open(path)?))?;
            Ok(Loaded { x, labels, shape: None })
        }
    }
}

fn builtin_shape(b: Builtin) -> Option<Shape> {
    (b == Builtin::Bumps16).then(|| Shape::square(BUMPS_SIDE))
}

pub fn draw_builtin(b: Builtin, n: usize, seed: u64) -> Loaded {
    let d = b.generate(n, seed);
    Loaded {
        x: d.x,
        labels: d.labels,
        shape: builtin_shape(b),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Loaded> {
    let loaded = match (&cfg.dataset.path, cfg.dataset.builtin) {
        (Some(p), _) => load_path(p)?,
        (None, Some(b)) => draw_builtin(b, cfg.dataset.n, cfg.data_seed()),
        (None, None) => return Err(Error::validation("dataset needs a builtin name or a path")),
    };
    if loaded.x.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let dim = loaded.x[0].len();
    if let Some(bad) = loaded.x.iter().position(|r| r.len() != dim) {
        return Err(Error::validation(format!("record {bad} has a different length from record 0")));
    }
    Ok(loaded)
}

pub fn build_schedule(cfg: &RunConfig) -> Result<(NoiseSchedule, Option<StrideSchedule>)> {
    cfg.schedule.build()
}

/// The configured denoiser; `data` supplies KDE points when the dataset is
/// a file.
pub fn build_denoiser(cfg: &RunConfig, data: &Loaded, sched: &NoiseSchedule) -> Result<Box<dyn Denoiser>> {
    let den: Box<dyn Denoiser> = match &cfg.model {
        ModelSpec::Oracle { mixture: Some(p) } => {
            let f = File::open(p)?;
            let gmm: GaussianMixture = serde_json::from_reader(BufReader::new(f))
                .map_err(|e| Error::validation(format!("mixture '{}': {e}", p.display())))?;
            Box::new(OracleDenoiser::new(gmm))
        }
        ModelSpec::Oracle { mixture: None } => {
            let m = cfg
                .dataset
                .builtin
                .filter(|_| cfg.dataset.path.is_none())
                .and_then(Builtin::mixture)
                .ok_or_else(|| {
                    Error::validation("this dataset has no closed-form mixture; give model.mixture or use a kde model")
                })?;
            Box::new(OracleDenoiser::new(m.gmm))
        }
        ModelSpec::Kde { variance, points } => {
            let fit = match (cfg.dataset.builtin, &cfg.dataset.path) {
                (Some(b), None) => b.generate(*points, cfg.aux_seed(1)).x,
                _ => data.x.clone(),
            };
            Box::new(OracleDenoiser::new(GaussianMixture::empirical(&fit, *variance)?))
        }
        ModelSpec::Mlp { checkpoint } => {
            let m = MlpDenoiser::load(BufReader::new(File::open(checkpoint)?))?;
            if m.horizon() != sched.steps() {
                return Err(Error::validation(format!(
                    "checkpoint was trained with T = {} but the schedule has T = {}",
                    m.horizon(),
                    sched.steps()
                )));
            }
            Box::new(m)
        }
    };
    if den.dim() != data.x[0].len() {
        return Err(Error::DimensionMismatch {
            expected: den.dim(),
            got: data.x[0].len(),
        });
    }
    Ok(den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig {
            seed: Some(3),
            ..RunConfig::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"seed": 1, "dataset": {"builtin": "bumps16", "n": 4}, "model": {"kind": "kde", "variance": 0.001, "points": 16}}"#,
        )
        .unwrap();
        assert_eq!(cfg.t_boom, 100);
        cfg.validate().unwrap();
        let data = load_dataset(&cfg).unwrap();
        assert_eq!(data.shape, Some(Shape::square(16)));
        let (sched, _) = build_schedule(&cfg).unwrap();
        assert_eq!(build_denoiser(&cfg, &data, &sched).unwrap().dim(), 256);
    }

    #[test]
    fn validation_failures() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            seed: Some(1),
            model: ModelSpec::Mlp {
                checkpoint: "/nonexistent/model.bin".into(),
            },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation(m)) if m.contains("checkpoint")));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn oracle_needs_mixture() {
        let cfg = RunConfig {
            seed: Some(1),
            dataset: DatasetSpec {
                builtin: Some(Builtin::Moons),
                n: 5,
                ..DatasetSpec::default()
            },
            ..RunConfig::default()
        };
        let data = load_dataset(&cfg).unwrap();
        let (sched, _) = build_schedule(&cfg).unwrap();
        assert!(build_denoiser(&cfg, &data, &sched).is_err());
    }
}
