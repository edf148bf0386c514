//! Reverse-process execution: single steps, global sampling from noise,
//! Boomerang local sampling and its cascaded form.
//!
//! Every chain owns an RNG sub-stream derived from the run seed, the chain
//! index and (for cascades) the pass index, so batches are reproducible no
//! matter how they are split across threads.

use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::forward::{jump_with_alpha, Sample};
use crate::rng::{stream, ChainRng, NoiseSource, StreamTag};
use crate::schedule::{NoiseSchedule, StepGrid, StrideSchedule, Transition};

/// Knobs of one Boomerang run.
#[derive(Debug, Clone)]
pub struct BoomerangConfig {
    /// Partial-diffusion depth, in base-schedule steps.
    pub t_boom: usize,
    /// Number of Boomerang passes (1 = single pass).
    pub n_cascade: usize,
    pub seed: u64,
    /// Run on a stride grid; `t_boom` then snaps down to the nearest grid step.
    pub stride: Option<StrideSchedule>,
    /// Keep every intermediate state in the trace.
    pub record_trace: bool,
}

impl BoomerangConfig {
    pub fn new(t_boom: usize, seed: u64) -> Self {
        Self {
            t_boom,
            n_cascade: 1,
            seed,
            stride: None,
            record_trace: false,
        }
    }

    pub fn cascaded(mut self, n: usize) -> Self {
        self.n_cascade = n;
        self
    }

    pub fn with_stride(mut self, stride: StrideSchedule) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }

    fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_boom > sched.steps() {
            return Err(Error::validation(format!(
                "t_boom = {} exceeds T = {}",
                self.t_boom,
                sched.steps()
            )));
        }
        if self.n_cascade == 0 {
            return Err(Error::validation("n_cascade must be >= 1"));
        }
        if let Some(st) = &self.stride {
            if st.base() != sched {
                return Err(Error::validation(
                    "stride grid was built from a different schedule",
                ));
            }
        }
        Ok(())
    }

    fn grid<'a>(&'a self, sched: &'a NoiseSchedule) -> &'a dyn StepGrid {
        match &self.stride {
            Some(st) => st,
            None => sched,
        }
    }
}

/// Reverse-step bookkeeping for one chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleTrace {
    /// Intermediate states, oldest first; empty unless recording was requested.
    pub states: Vec<Sample>,
    pub reverse_steps: usize,
}

impl SampleTrace {
    fn push(&mut self, record: bool, s: &Sample) {
        if record {
            self.states.push(s.clone());
        }
    }
}

/// `x_prev = f(x_t) + eta`, `eta ~ N(0, bar_beta I)`, with `eta = 0` on the
/// last transition into clean data.
pub fn reverse_transition(
    x: &[f64],
    den: &dyn Denoiser,
    tr: &Transition,
    rng: &mut dyn NoiseSource,
) -> Vec<f64> {
    let mut out = den.reverse_mean(x, tr);
    if tr.t_prev > 0 {
        let sd = tr.bar_beta.sqrt();
        let mut eta = vec![0.0; out.len()];
        rng.fill_standard_normal(&mut eta);
        for (o, e) in out.iter_mut().zip(&eta) {
            *o += sd * e;
        }
    }
    out
}

/// One reverse step `t -> t - 1` on the full schedule.
pub fn reverse_step(
    x_t: &Sample,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut dyn NoiseSource,
) -> Result<Sample> {
    if x_t.t == 0 {
        return Err(Error::validation("reverse step needs t >= 1"));
    }
    sched.check_step(x_t.t)?;
    check_dim(den.dim(), x_t.dim())?;
    let tr = sched.transition(x_t.t);
    Ok(Sample::at(reverse_transition(&x_t.x, den, &tr, rng), tr.t_prev))
}

/// Run the reverse chain from `x_t` (which must sit on a grid step) to `t = 0`.
pub fn run_reverse(
    x_t: Sample,
    den: &dyn Denoiser,
    grid: &dyn StepGrid,
    rng: &mut dyn NoiseSource,
    trace: &mut SampleTrace,
    record: bool,
) -> Result<Sample> {
    check_dim(den.dim(), x_t.dim())?;
    if x_t.t > grid.horizon() || grid.snap(x_t.t) != x_t.t {
        return Err(Error::validation(format!(
            "step {} is not on the reverse grid",
            x_t.t
        )));
    }
    let mut cur = x_t;
    trace.push(record, &cur);
    for tr in grid.descent(cur.t) {
        let x = reverse_transition(&cur.x, den, &tr, rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "reverse chain produced non-finite values at step {}",
                tr.t
            )));
        }
        cur = Sample::at(x, tr.t_prev);
        trace.reverse_steps += 1;
        trace.push(record, &cur);
    }
    Ok(cur)
}

/// Output of [`sample_global`].
#[derive(Debug, Clone)]
pub struct GlobalSamples {
    pub samples: Vec<Sample>,
    /// Reverse steps executed by each chain.
    pub reverse_steps: usize,
}

/// `n` chains started from `x_T ~ N(0, I)`, each run fully in reverse.
pub fn sample_global(
    den: &dyn Denoiser,
    grid: &dyn StepGrid,
    dim: usize,
    n: usize,
    seed: u64,
) -> Result<GlobalSamples> {
    if n == 0 {
        return Err(Error::validation("need at least one chain"));
    }
    check_dim(den.dim(), dim)?;
    let horizon = grid.horizon();
    let runs: Vec<(Sample, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, StreamTag::Global, i as u64, 0);
            let start = Sample::at(rng.standard_normal_vec(dim), horizon);
            let mut trace = SampleTrace::default();
            let s = run_reverse(start, den, grid, &mut rng, &mut trace, false)?;
            Ok((s, trace.reverse_steps))
        })
        .collect::<Result<_>>()?;
    let reverse_steps = runs[0].1;
    Ok(GlobalSamples {
        samples: runs.into_iter().map(|(s, _)| s).collect(),
        reverse_steps,
    })
}

fn boomerang_pass(
    x0: &Sample,
    cfg: &BoomerangConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut ChainRng,
    trace: &mut SampleTrace,
) -> Result<Sample> {
    let grid = cfg.grid(sched);
    let start = grid.snap(cfg.t_boom);
    let noisy = jump_with_alpha(x0, start, grid.alpha(start), rng)?;
    run_reverse(noisy, den, grid, rng, trace, cfg.record_trace)
}

fn check_clean(x0: &Sample, den: &dyn Denoiser) -> Result<()> {
    if x0.t != 0 {
        return Err(Error::validation(format!(
            "boomerang needs a clean sample, got step {}",
            x0.t
        )));
    }
    check_dim(den.dim(), x0.dim())
}

fn run_chain(
    x0: &Sample,
    chain: u64,
    passes: usize,
    cfg: &BoomerangConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<(Sample, SampleTrace)> {
    let mut trace = SampleTrace::default();
    let mut cur = x0.clone();
    for pass in 0..passes {
        let mut rng = stream(cfg.seed, StreamTag::Boomerang, chain, pass as u64);
        cur = boomerang_pass(&cur, cfg, den, sched, &mut rng, &mut trace)?;
    }
    Ok((cur, trace))
}

/// One Boomerang pass: a single closed-form forward jump to `t_boom`
/// followed by the reverse chain back to clean data. Ignores `n_cascade`.
pub fn boomerang(
    x0: &Sample,
    cfg: &BoomerangConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<(Sample, SampleTrace)> {
    cfg.validate(sched)?;
    check_clean(x0, den)?;
    run_chain(x0, 0, 1, cfg, den, sched)
}

/// `n_cascade` Boomerang passes, each re-noising the previous output.
pub fn cascade(
    x0: &Sample,
    cfg: &BoomerangConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<(Sample, SampleTrace)> {
    cfg.validate(sched)?;
    check_clean(x0, den)?;
    run_chain(x0, 0, cfg.n_cascade, cfg, den, sched)
}

/// Cascaded Boomerang over a batch; row `i` uses chain index `i`, so row 0
/// reproduces [`cascade`] on the same input.
pub fn boomerang_batch(
    xs: &[Vec<f64>],
    cfg: &BoomerangConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(sched)?;
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let x0 = Sample::clean(x.clone());
            check_clean(&x0, den)?;
            run_chain(&x0, i as u64, cfg.n_cascade, cfg, den, sched).map(|(s, _)| s.x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMixture, OracleDenoiser};
    use crate::rng::PinnedNoise;

    fn oracle(dim: usize) -> OracleDenoiser {
        OracleDenoiser::new(GaussianMixture::standard(dim).unwrap())
    }

    #[test]
    fn last_step_adds_no_noise() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let den = oracle(2);
        let x = Sample::at(vec![0.4, -0.3], 1);
        let want = den.eval(&x.x, 1, &sched);
        for seed in 0..5 {
            let mut rng = stream(seed, StreamTag::Probe, 0, 0);
            let out = reverse_step(&x, &den, &sched, &mut rng).unwrap();
            assert_eq!(out.x, want);
            assert_eq!(out.t, 0);
        }
    }

    #[test]
    fn worked_reverse_step() {
        let sched = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let den = oracle(1);
        let out = reverse_step(&Sample::at(vec![1.0], 2), &den, &sched, &mut PinnedNoise::zeros()).unwrap();
        assert!((out.x[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(out.t, 1);
    }

    #[test]
    fn reverse_step_rejects_clean_input() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let r = reverse_step(&Sample::clean(vec![0.0]), &oracle(1), &sched, &mut PinnedNoise::zeros());
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn zero_depth_is_identity() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let x0 = Sample::clean(vec![3.3, -1.0]);
        let cfg = BoomerangConfig::new(0, 1).cascaded(2);
        let (out, trace) = cascade(&x0, &cfg, &oracle(2), &sched).unwrap();
        assert_eq!(out, x0);
        assert_eq!(trace.reverse_steps, 0);
        let (out, _) = boomerang(&x0, &cfg, &oracle(2), &sched).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn step_counts() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let x0 = Sample::clean(vec![0.5, 0.5]);
        let den = oracle(2);
        let cfg = BoomerangConfig::new(37, 9).cascaded(3).traced();
        let (_, trace) = boomerang(&x0, &cfg, &den, &sched).unwrap();
        assert_eq!(trace.reverse_steps, 37);
        assert_eq!(trace.states.len(), 38);
        assert_eq!(trace.states[0].t, 37);
        let (_, trace) = cascade(&x0, &cfg, &den, &sched).unwrap();
        assert_eq!(trace.reverse_steps, 3 * 37);
        let g = sample_global(&den, &sched, 2, 3, 1).unwrap();
        assert_eq!(g.reverse_steps, 100);
        assert!(g.samples.iter().all(|s| s.t == 0));
    }

    #[test]
    fn stride_snaps_toward_zero() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let st = StrideSchedule::even(&sched, 10).unwrap();
        let den = oracle(1);
        let x0 = Sample::clean(vec![0.2]);
        let cfg = BoomerangConfig::new(47, 2).with_stride(st.clone());
        let (_, trace) = boomerang(&x0, &cfg, &den, &sched).unwrap();
        assert_eq!(trace.reverse_steps, 4);
        let cfg = BoomerangConfig::new(9, 2).with_stride(st.clone());
        let (out, trace) = boomerang(&x0, &cfg, &den, &sched).unwrap();
        assert_eq!((out, trace.reverse_steps), (x0.clone(), 0));
        let g = sample_global(&den, &st, 1, 2, 0).unwrap();
        assert_eq!(g.reverse_steps, 10);

        let other = NoiseSchedule::default_linear(50).unwrap();
        let bad = BoomerangConfig::new(5, 0).with_stride(StrideSchedule::even(&other, 5).unwrap());
        assert!(boomerang(&x0, &bad, &den, &sched).is_err());
    }

    #[test]
    fn identity_stride_matches_full_grid() {
        let sched = NoiseSchedule::default_linear(60).unwrap();
        let st = StrideSchedule::even(&sched, 60).unwrap();
        let den = oracle(2);
        let x0 = Sample::clean(vec![0.1, 0.9]);
        let a = boomerang(&x0, &BoomerangConfig::new(40, 5), &den, &sched).unwrap();
        let b = boomerang(&x0, &BoomerangConfig::new(40, 5).with_stride(st), &den, &sched).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let den = oracle(1);
        let x0 = Sample::clean(vec![0.0]);
        assert!(boomerang(&x0, &BoomerangConfig::new(11, 0), &den, &sched).is_err());
        assert!(cascade(&x0, &BoomerangConfig::new(5, 0).cascaded(0), &den, &sched).is_err());
        assert!(boomerang(&Sample::at(vec![0.0], 3), &BoomerangConfig::new(5, 0), &den, &sched).is_err());
        assert!(boomerang(&Sample::clean(vec![0.0, 1.0]), &BoomerangConfig::new(5, 0), &den, &sched).is_err());
        assert!(sample_global(&den, &sched, 1, 0, 0).is_err());
    }

    #[test]
    fn determinism_and_batch_consistency() {
        let sched = NoiseSchedule::default_linear(50).unwrap();
        let den = OracleDenoiser::new(
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![3.0, 0.0], vec![-3.0, 0.0]], vec![0.5, 0.5]).unwrap(),
        );
        let x0 = Sample::clean(vec![1.0, 1.0]);
        let cfg = BoomerangConfig::new(30, 77).cascaded(2);
        let a = cascade(&x0, &cfg, &den, &sched).unwrap();
        let b = cascade(&x0, &cfg, &den, &sched).unwrap();
        assert_eq!(a, b);
        let batch = boomerang_batch(&[x0.x.clone(), vec![0.0, 0.0]], &cfg, &den, &sched).unwrap();
        assert_eq!(batch[0], a.0.x);
        let single = boomerang(&x0, &cfg, &den, &sched).unwrap();
        let one = cascade(&x0, &BoomerangConfig::new(30, 77), &den, &sched).unwrap();
        assert_eq!(single, one);
        let g1 = sample_global(&den, &sched, 2, 1, 4).unwrap();
        let g2 = sample_global(&den, &sched, 2, 1, 4).unwrap();
        assert_eq!(g1.samples, g2.samples);
    }

    #[test]
    fn pinned_boomerang_is_deterministic_mean_path() {
        // With all noise pinned to zero the chain follows the mean path; for a
        // standard Gaussian prior each coefficient is sqrt(1 - beta_t), so the
        // result is sqrt(alpha_t)^2 * x0 = alpha_t * x0.
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let den = oracle(1);
        let t = 60;
        let noisy = jump_with_alpha(&Sample::clean(vec![2.0]), t, sched.alphas()[t], &mut PinnedNoise::zeros()).unwrap();
        let mut trace = SampleTrace::default();
        let out = run_reverse(noisy, &den, &sched, &mut PinnedNoise::zeros(), &mut trace, false).unwrap();
        assert!((out.x[0] - 2.0 * sched.alphas()[t]).abs() < 1e-12);
    }
}
