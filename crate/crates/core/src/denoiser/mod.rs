//! Reverse-mean maps `f(x_t, t)`.
//!
//! Two implementations: [`OracleDenoiser`] computes the exact reverse mean
//! for a Gaussian-mixture data distribution, and [`MlpDenoiser`] is a small
//! trainable network predicting the added noise.

mod gmm;
mod mlp;

pub use gmm::{oracle_reverse_mean, posterior_mean_x0, GaussianMixture, OracleDenoiser};
pub use mlp::{
    gradient_check, gradient_probe, mlp_forward, train_mlp, MlpDenoiser, TrainConfig,
    TrainedMlp, DEFAULT_EMBED_WIDTH,
};

use crate::schedule::{NoiseSchedule, Transition};

/// Mean of the reverse transition `p(x_prev | x_t)`.
///
/// Implementations must be deterministic in `(x, transition)` and callable
/// from many threads at once.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn reverse_mean(&self, x: &[f64], tr: &Transition) -> Vec<f64>;

    /// `f(x_t, t)` on the full schedule.
    fn eval(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        self.reverse_mean(x, &sched.transition(t))
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn reverse_mean(&self, x: &[f64], tr: &Transition) -> Vec<f64> {
        (**self).reverse_mean(x, tr)
    }
}
