//! Forward diffusion: the stepwise Gaussian chain and its closed-form jump.

use crate::error::{Error, Result};
use crate::rng::NoiseSource;
use crate::schedule::NoiseSchedule;

/// A state of the diffusion chain: data vector `x` at step `t`
/// (`t = 0` is clean data).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: usize,
}

impl Sample {
    pub fn clean(x: Vec<f64>) -> Self {
        Self { x, t: 0 }
    }

    pub fn at(x: Vec<f64>, t: usize) -> Self {
        Self { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// One step of the forward chain: `x_t = sqrt(1 - beta_t) x_{t-1} + eps`,
/// `eps ~ N(0, beta_t I)`.
pub fn forward_step(
    s: &Sample,
    sched: &NoiseSchedule,
    rng: &mut impl NoiseSource,
) -> Result<Sample> {
    if s.t >= sched.steps() {
        return Err(Error::validation(format!(
            "cannot step past T = {} (sample is at step {})",
            sched.steps(),
            s.t
        )));
    }
    let t = s.t + 1;
    let beta = sched.beta(t);
    let keep = (1.0 - beta).sqrt();
    let sd = beta.sqrt();
    let mut x = rng.standard_normal_vec(s.dim());
    for (xi, &si) in x.iter_mut().zip(&s.x) {
        *xi = keep * si + sd * *xi;
    }
    Ok(Sample { x, t })
}

/// Closed-form jump from clean data to step `t_target`:
/// `x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`, `eps ~ N(0, I)`.
pub fn forward_jump(
    x0: &Sample,
    t_target: usize,
    sched: &NoiseSchedule,
    rng: &mut impl NoiseSource,
) -> Result<Sample> {
    sched.check_step(t_target)?;
    jump_with_alpha(x0, t_target, sched.alphas()[t_target], rng)
}

pub(crate) fn jump_with_alpha(
    x0: &Sample,
    t_target: usize,
    alpha: f64,
    rng: &mut impl NoiseSource,
) -> Result<Sample> {
    if x0.t != 0 {
        return Err(Error::validation(format!(
            "forward jump needs a clean sample, got step {}",
            x0.t
        )));
    }
    if t_target == 0 {
        return Ok(x0.clone());
    }
    let keep = alpha.sqrt();
    let sd = (1.0 - alpha).sqrt();
    let mut x = rng.standard_normal_vec(x0.dim());
    for (xi, &si) in x.iter_mut().zip(&x0.x) {
        *xi = keep * si + sd * *xi;
    }
    Ok(Sample { x, t: t_target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, PinnedNoise, StreamTag};

    #[test]
    fn pinned_step_is_exact() {
        // beta_2 = 0.19 on a two-step schedule
        let sched = NoiseSchedule::from_betas(vec![0.5, 0.19]).unwrap();
        let s = Sample::at(vec![2.0], 1);
        let out = forward_step(&s, &sched, &mut PinnedNoise::zeros()).unwrap();
        assert_eq!(out.t, 2);
        assert!((out.x[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn tiny_beta_keeps_signal() {
        let sched = NoiseSchedule::from_betas(vec![1e-15]).unwrap();
        let s = Sample::clean(vec![3.0, -1.0]);
        let mut rng = stream(1, StreamTag::Probe, 0, 0);
        let out = forward_step(&s, &sched, &mut rng).unwrap();
        assert!((out.x[0] - 3.0).abs() < 1e-6 && (out.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn step_past_horizon_rejected() {
        let sched = NoiseSchedule::default_linear(3).unwrap();
        let s = Sample::at(vec![0.0], 3);
        assert!(forward_step(&s, &sched, &mut PinnedNoise::zeros()).is_err());
    }

    #[test]
    fn pinned_jump_is_exact() {
        let sched = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let x0 = Sample::clean(vec![1.0]);
        let out = forward_jump(&x0, 2, &sched, &mut PinnedNoise::zeros()).unwrap();
        assert_eq!(out.x, vec![0.5]);
        let out = forward_jump(&x0, 2, &sched, &mut PinnedNoise::new(vec![1.0])).unwrap();
        assert!((out.x[0] - (0.5 + 0.75f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn jump_to_zero_is_identity() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let x0 = Sample::clean(vec![0.3, -7.0]);
        let mut rng = stream(3, StreamTag::Probe, 0, 0);
        assert_eq!(forward_jump(&x0, 0, &sched, &mut rng).unwrap(), x0);
    }

    #[test]
    fn jump_rejects_bad_input() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let mut rng = PinnedNoise::zeros();
        assert!(forward_jump(&Sample::clean(vec![0.0]), 11, &sched, &mut rng).is_err());
        assert!(forward_jump(&Sample::at(vec![0.0], 2), 5, &sched, &mut rng).is_err());
    }

    #[test]
    fn step_noise_moments() {
        let sched = NoiseSchedule::default_linear(1000).unwrap();
        let t = 500;
        let beta = sched.beta(t);
        let n = 100_000;
        let mut rng = stream(11, StreamTag::Probe, 0, 0);
        let s = Sample::at(vec![0.0], t - 1);
        let draws: Vec<f64> = (0..n)
            .map(|_| forward_step(&s, &sched, &mut rng).unwrap().x[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * (beta / n as f64).sqrt());
        assert!((var - beta).abs() < 3.0 * beta * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn full_jump_is_standard_normal() {
        let sched = NoiseSchedule::default_linear(1000).unwrap();
        let n = 100_000;
        let mut rng = stream(12, StreamTag::Probe, 0, 0);
        let x0 = Sample::clean(vec![0.0, 0.0]);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let s = forward_jump(&x0, 1000, &sched, &mut rng).unwrap();
            for j in 0..2 {
                sum[j] += s.x[j];
                sq[j] += s.x[j] * s.x[j];
            }
        }
        let nf = n as f64;
        for j in 0..2 {
            let m = sum[j] / nf;
            let v = sq[j] / nf - m * m;
            assert!(m.abs() < 3.0 / nf.sqrt());
            assert!((v - 1.0).abs() < 3.0 * (2.0 / nf).sqrt());
        }
    }
}
