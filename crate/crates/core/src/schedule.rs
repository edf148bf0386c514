//! Noise schedules.
//!
//! Steps are 1-indexed throughout the public API: step `t` runs from `1` to
//! `T`, and step `0` means clean data. Internally `betas[t - 1]` holds the
//! variance added at step `t`, while `alphas[t]` holds the cumulative
//! product `∏_{i<=t} (1 - beta_i)` with `alphas[0] = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

/// One reverse transition `t -> t_prev` on some step grid.
///
/// For the full schedule `t_prev = t - 1` and `beta` is the stored step
/// variance. On a stride grid `beta = 1 - alpha / alpha_prev` is the variance of
/// the whole jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub t_prev: usize,
    pub alpha: f64,
    pub alpha_prev: f64,
    pub beta: f64,
    pub bar_beta: f64,
}

impl Transition {
    /// Coefficients `(c_x0, c_xt)` of the forward posterior mean
    /// `c_x0 * x0 + c_xt * x_t` of `q(x_prev | x_t, x0)`.
    pub fn posterior_coefficients(&self) -> (f64, f64) {
        if self.alpha_prev == 1.0 {
            // Final step into clean data: the posterior mean is x0 itself.
            return (1.0, 0.0);
        }
        let denom = 1.0 - self.alpha;
        let c_x0 = self.alpha_prev.sqrt() * self.beta / denom;
        let c_xt = (1.0 - self.beta).sqrt() * (1.0 - self.alpha_prev) / denom;
        (c_x0, c_xt)
    }
}

/// A discrete grid of reverse steps over a base schedule.
pub trait StepGrid: Send + Sync {
    /// `T` of the underlying schedule.
    fn horizon(&self) -> usize;

    /// Cumulative product `alpha_t` of the underlying schedule.
    fn alpha(&self, t: usize) -> f64;

    /// Largest grid step `<= t`, or `0` when no grid step qualifies.
    fn snap(&self, t: usize) -> usize;

    /// Reverse transitions from `snap(t)` down to `0`, in execution order.
    fn descent(&self, t: usize) -> Vec<Transition>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    bar_betas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule: `beta_t` interpolates from `beta_min` at `t = 1` to
    /// `beta_max` at `t = T`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::validation("schedule needs T >= 1"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::validation(format!(
                "linear schedule needs 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_min]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / span)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// The reference schedule: linear over `[1e-4, 0.02]`.
    pub fn default_linear(steps: usize) -> Result<Self> {
        Self::linear(steps, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::validation("schedule needs T >= 1"));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0 && **b < 1.0))
        {
            return Err(Error::validation(format!(
                "beta_{} = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let mut alphas = Vec::with_capacity(betas.len() + 1);
        alphas.push(1.0);
        for b in &betas {
            let prev = *alphas.last().unwrap();
            alphas.push(prev * (1.0 - b));
        }
        for t in 1..alphas.len() {
            if !(alphas[t] > 0.0 && alphas[t] < alphas[t - 1]) {
                return Err(Error::validation(format!(
                    "alpha_{t} = {} is not strictly inside (0, alpha_{})",
                    alphas[t],
                    t - 1
                )));
            }
        }
        let bar_betas = betas
            .iter()
            .enumerate()
            .map(|(i, b)| (1.0 - alphas[i]) / (1.0 - alphas[i + 1]) * b)
            .collect();
        Ok(Self {
            betas,
            alphas,
            bar_betas,
        })
    }

    /// Total step count `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.steps()).contains(&t), "step {t} outside 1..=T");
        self.betas[t - 1]
    }

    /// `bar_beta_t` for `t` in `1..=T`.
    pub fn bar_beta(&self, t: usize) -> f64 {
        assert!((1..=self.steps()).contains(&t), "step {t} outside 1..=T");
        self.bar_betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_0 ..= alpha_T`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn bar_betas(&self) -> &[f64] {
        &self.bar_betas
    }

    pub fn transition(&self, t: usize) -> Transition {
        Transition {
            t,
            t_prev: t - 1,
            alpha: self.alphas[t],
            alpha_prev: self.alphas[t - 1],
            beta: self.beta(t),
            bar_beta: self.bar_beta(t),
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::validation(format!(
                "step {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

impl StepGrid for NoiseSchedule {
    fn horizon(&self) -> usize {
        self.steps()
    }

    fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    fn snap(&self, t: usize) -> usize {
        t.min(self.steps())
    }

    fn descent(&self, t: usize) -> Vec<Transition> {
        (1..=self.snap(t)).rev().map(|s| self.transition(s)).collect()
    }
}

/// Subsequence of steps of a base schedule, executed as single jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideSchedule {
    base: NoiseSchedule,
    steps: Vec<usize>,
    effective_alphas: Vec<f64>,
    effective_betas: Vec<f64>,
}

impl StrideSchedule {
    /// `count` evenly spaced steps over `1..=T`, rounded half up; the last is
    /// always `T`.
    pub fn even(base: &NoiseSchedule, count: usize) -> Result<Self> {
        let total = base.steps();
        if count == 0 || count > total {
            return Err(Error::validation(format!(
                "stride needs 1 <= S <= T = {total}, got S = {count}"
            )));
        }
        let steps = (1..=count)
            .map(|k| (2 * k * total + count) / (2 * count))
            .collect();
        Self::from_steps(base, steps)
    }

    pub fn from_steps(base: &NoiseSchedule, steps: Vec<usize>) -> Result<Self> {
        let total = base.steps();
        if steps.is_empty() || *steps.last().unwrap() != total {
            return Err(Error::validation(format!(
                "stride steps must be nonempty and end at T = {total}"
            )));
        }
        if steps[0] == 0 || steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "stride steps must be strictly increasing within 1..=T",
            ));
        }
        let effective_alphas = steps.iter().map(|&t| base.alphas[t]).collect();
        let mut effective_betas = Vec::with_capacity(steps.len());
        let mut prev = 0;
        for &t in &steps {
            effective_betas.push(if t == prev + 1 {
                base.beta(t)
            } else {
                1.0 - base.alphas[t] / base.alphas[prev]
            });
            prev = t;
        }
        Ok(Self {
            base: base.clone(),
            steps,
            effective_alphas,
            effective_betas,
        })
    }

    pub fn base(&self) -> &NoiseSchedule {
        &self.base
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn effective_alphas(&self) -> &[f64] {
        &self.effective_alphas
    }

    /// `beta'_k = 1 - alpha_{steps[k]} / alpha_{steps[k-1]}`, with
    /// `alpha_{steps[-1]} = alpha_0 = 1`.
    pub fn effective_betas(&self) -> &[f64] {
        &self.effective_betas
    }

    fn transition_at(&self, k: usize) -> Transition {
        let t = self.steps[k];
        let t_prev = if k == 0 { 0 } else { self.steps[k - 1] };
        if t == t_prev + 1 {
            return self.base.transition(t);
        }
        let alpha = self.base.alphas[t];
        let alpha_prev = self.base.alphas[t_prev];
        let beta = self.effective_betas[k];
        Transition {
            t,
            t_prev,
            alpha,
            alpha_prev,
            beta,
            bar_beta: (1.0 - alpha_prev) / (1.0 - alpha) * beta,
        }
    }
}

impl StepGrid for StrideSchedule {
    fn horizon(&self) -> usize {
        self.base.steps()
    }

    fn alpha(&self, t: usize) -> f64 {
        self.base.alphas[t]
    }

    fn snap(&self, t: usize) -> usize {
        match self.steps.partition_point(|&s| s <= t) {
            0 => 0,
            n => self.steps[n - 1],
        }
    }

    fn descent(&self, t: usize) -> Vec<Transition> {
        let n = self.steps.partition_point(|&s| s <= t);
        (0..n).rev().map(|k| self.transition_at(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Stride,
}

/// JSON form of a schedule.
///
/// `{"T": 1000, "beta_min": 1e-4, "beta_max": 0.02, "kind": "stride",
/// "stride_steps": [10, 20, ..., 1000]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default)]
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stride_steps: Vec<usize>,
}

fn default_beta_min() -> f64 {
    DEFAULT_BETA_MIN
}

fn default_beta_max() -> f64 {
    DEFAULT_BETA_MAX
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            kind: ScheduleKind::Linear,
            stride_steps: Vec::new(),
        }
    }
}

impl ScheduleSpec {
    pub fn linear(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn with_even_stride(steps: usize, count: usize) -> Result<Self> {
        let base = NoiseSchedule::default_linear(steps)?;
        let stride = StrideSchedule::even(&base, count)?;
        Ok(Self {
            steps,
            kind: ScheduleKind::Stride,
            stride_steps: stride.steps().to_vec(),
            ..Self::default()
        })
    }

    /// The base schedule plus the stride grid when `kind == "stride"`.
    pub fn build(&self) -> Result<(NoiseSchedule, Option<StrideSchedule>)> {
        let base = NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)?;
        let stride = match self.kind {
            ScheduleKind::Linear => None,
            ScheduleKind::Stride => Some(StrideSchedule::from_steps(
                &base,
                self.stride_steps.clone(),
            )?),
        };
        Ok((base, stride))
    }
}
