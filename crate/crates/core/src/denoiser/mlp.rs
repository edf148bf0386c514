use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::nn::{shuffled_indices, Cache, Mlp, Sgd};
use crate::rng::{stream, NoiseSource, StreamTag};
use crate::schedule::{NoiseSchedule, Transition};

pub const DEFAULT_EMBED_WIDTH: usize = 16;
const MAGIC: &[u8; 5] = b"BMRK1";

/// Noise-predicting network `eps_hat(x_t, t)`.
///
/// The network sees `[x_t, phi(t / T)]` where `phi` is `F` sinusoidal
/// features `sin(pi 2^i tau), cos(pi 2^i tau)`. Its reverse mean is
///
/// `f(x_t, t) = (x_t - beta / sqrt(1 - alpha_t) * eps_hat) / sqrt(1 - beta)`
///
/// where `beta` is the variance of the transition being taken.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    net: Mlp,
    dim: usize,
    horizon: usize,
    embed_width: usize,
}

impl MlpDenoiser {
    fn widths(dim: usize, embed_width: usize, hidden: &[usize]) -> Vec<usize> {
        let mut w = vec![dim + embed_width];
        w.extend_from_slice(hidden);
        w.push(dim);
        w
    }

    fn validate(dim: usize, horizon: usize, embed_width: usize) -> Result<()> {
        if dim == 0 || horizon == 0 {
            return Err(Error::validation("denoiser needs dim >= 1 and T >= 1"));
        }
        if !embed_width.is_multiple_of(2) {
            return Err(Error::validation("time embedding width must be even"));
        }
        Ok(())
    }

    pub fn new(
        dim: usize,
        horizon: usize,
        hidden: &[usize],
        embed_width: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::validate(dim, horizon, embed_width)?;
        let mut rng = stream(seed, StreamTag::Init, 0, 0);
        let net = Mlp::random(&Self::widths(dim, embed_width, hidden), &mut rng);
        Ok(Self {
            net,
            dim,
            horizon,
            embed_width,
        })
    }

    pub fn zeros(dim: usize, horizon: usize, hidden: &[usize], embed_width: usize) -> Result<Self> {
        Self::validate(dim, horizon, embed_width)?;
        Ok(Self {
            net: Mlp::zeros(&Self::widths(dim, embed_width, hidden)),
            dim,
            horizon,
            embed_width,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn embed_width(&self) -> usize {
        self.embed_width
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn input(&self, x: &[f64], t: usize) -> Vec<f64> {
        let tau = t as f64 / self.horizon as f64;
        let mut v = Vec::with_capacity(self.dim + self.embed_width);
        v.extend_from_slice(x);
        for i in 0..self.embed_width / 2 {
            let w = PI * (1u64 << i) as f64 * tau;
            v.push(w.sin());
            v.push(w.cos());
        }
        v
    }

    pub fn predict_noise(&self, x: &[f64], t: usize) -> Vec<f64> {
        self.net.forward(&self.input(x, t))
    }

    fn convert(x: &[f64], eps_hat: &[f64], tr: &Transition) -> Vec<f64> {
        let c = tr.beta / (1.0 - tr.alpha).sqrt();
        let s = 1.0 / (1.0 - tr.beta).sqrt();
        x.iter().zip(eps_hat).map(|(xi, e)| s * (xi - c * e)).collect()
    }

    /// Write the checkpoint: `"BMRK1"`, then little-endian `u32` header
    /// fields `dim, T, F, n_widths, widths...`, then every parameter as a
    /// little-endian `f64`, layer by layer, weights (row-major `out x in`)
    /// before biases.
    pub fn save(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let widths = self.net.widths();
        let mut header = vec![self.dim, self.horizon, self.embed_width, widths.len()];
        header.extend(widths);
        for h in header {
            let v = u32::try_from(h).map_err(|_| Error::Format("header field exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for p in self.net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let dim = read_u32(&mut r)?;
        let horizon = read_u32(&mut r)?;
        let embed_width = read_u32(&mut r)?;
        let n_widths = read_u32(&mut r)?;
        if !(2..=64).contains(&n_widths) {
            return Err(Error::Format(format!("implausible layer count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if widths[0] != dim + embed_width || *widths.last().unwrap() != dim {
            return Err(Error::Format("layer widths disagree with dims header".into()));
        }
        Self::validate(dim, horizon, embed_width).map_err(|e| Error::Format(e.to_string()))?;
        let mut net = Mlp::zeros(&widths);
        let mut params = vec![0.0; net.param_count()];
        let mut b = [0u8; 8];
        for p in params.iter_mut() {
            r.read_exact(&mut b)?;
            *p = f64::from_le_bytes(b);
        }
        if r.read(&mut b)? != 0 {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        net.set_params(&params);
        Ok(Self {
            net,
            dim,
            horizon,
            embed_width,
        })
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn reverse_mean(&self, x: &[f64], tr: &Transition) -> Vec<f64> {
        let eps_hat = self.predict_noise(x, tr.t);
        Self::convert(x, &eps_hat, tr)
    }
}

/// `(eps_hat, f)` at step `t` of the full schedule.
pub fn mlp_forward(
    mlp: &MlpDenoiser,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(mlp.dim, x_t.len())?;
    if t == 0 || t > sched.steps() {
        return Err(Error::validation(format!("mlp query needs 1 <= t <= T, got {t}")));
    }
    let eps_hat = mlp.predict_noise(x_t, t);
    let f = MlpDenoiser::convert(x_t, &eps_hat, &sched.transition(t));
    Ok((eps_hat, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub embed_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 2e-3,
            momentum: 0.9,
            hidden: vec![128, 128],
            embed_width: DEFAULT_EMBED_WIDTH,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub model: MlpDenoiser,
    /// Mean per-example `||eps - eps_hat||^2` for each epoch.
    pub loss_trace: Vec<f64>,
}

/// Fit `eps_hat` by minimizing `E ||eps - eps_hat(sqrt(a_t) x0 + sqrt(1 - a_t) eps, t)||^2`
/// with `t` uniform on `1..=T`.
pub fn train_mlp(data: &[Vec<f64>], sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainedMlp> {
    if data.is_empty() {
        return Err(Error::validation("training data is empty"));
    }
    let model = MlpDenoiser::new(
        data[0].len(),
        sched.steps(),
        &cfg.hidden,
        cfg.embed_width,
        cfg.seed,
    )?;
    continue_training(model, data, sched, cfg)
}

/// Train an existing model further with the same objective.
pub(crate) fn continue_training(
    mut model: MlpDenoiser,
    data: &[Vec<f64>],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainedMlp> {
    let dim = model.dim;
    for x in data {
        check_dim(dim, x.len())?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch size must be >= 1"));
    }
    if model.horizon != sched.steps() {
        return Err(Error::validation("model horizon differs from schedule T"));
    }
    let mut rng = stream(cfg.seed, StreamTag::Training, 0, 0);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut grads = model.net.zeros_like();
    let mut cache = Cache::default();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let alphas = sched.alphas();
    let mut eps = vec![0.0; dim];
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let t = rng.random_range(1..=sched.steps());
                rng.fill_standard_normal(&mut eps);
                let (sa, sn) = (alphas[t].sqrt(), (1.0 - alphas[t]).sqrt());
                let xt: Vec<f64> = data[i].iter().zip(&eps).map(|(x, e)| sa * x + sn * e).collect();
                let out = model.net.forward_cached(&model.input(&xt, t), &mut cache);
                let mut d = Vec::with_capacity(dim);
                for (o, e) in out.iter().zip(&eps) {
                    epoch_loss += (o - e) * (o - e);
                    d.push(2.0 * (o - e) * inv);
                }
                model.net.backward(&cache, &d, &mut grads);
            }
            opt.step(&mut model.net, &grads);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || !model.net.is_finite() {
            return Err(Error::numerical(format!(
                "training diverged at epoch {epoch} (loss = {mean})"
            )));
        }
        trace.push(mean);
    }
    Ok(TrainedMlp {
        model,
        loss_trace: trace,
    })
}

fn probe_loss(mlp: &MlpDenoiser, input: &[f64], target: &[f64]) -> f64 {
    mlp.net
        .forward(input)
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

/// Analytic and central-difference (`h = 1e-5`) gradients of
/// `||eps_target - eps_hat(x_t, t)||^2` for the listed parameters.
pub fn gradient_probe(
    mlp: &MlpDenoiser,
    x_t: &[f64],
    t: usize,
    epsilon_target: &[f64],
    indices: &[usize],
) -> Vec<(f64, f64)> {
    let input = mlp.input(x_t, t);
    let mut cache = Cache::default();
    let out = mlp.net.forward_cached(&input, &mut cache);
    let d: Vec<f64> = out
        .iter()
        .zip(epsilon_target)
        .map(|(o, e)| 2.0 * (o - e))
        .collect();
    let mut grads = mlp.net.zeros_like();
    mlp.net.backward(&cache, &d, &mut grads);
    let analytic = grads.params();

    let h = 1e-5;
    let mut probe = mlp.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = *probe.net.param_mut(i);
            *probe.net.param_mut(i) = orig + h;
            let up = probe_loss(&probe, &input, epsilon_target);
            *probe.net.param_mut(i) = orig - h;
            let down = probe_loss(&probe, &input, epsilon_target);
            *probe.net.param_mut(i) = orig;
            (analytic[i], (up - down) / (2.0 * h))
        })
        .collect()
}

/// Max relative error `|analytic - numeric| / (|numeric| + 1e-8)` over a
/// seeded subsample of 256 parameters (all of them if fewer).
pub fn gradient_check(
    mlp: &MlpDenoiser,
    x_t: &[f64],
    t: usize,
    epsilon_target: &[f64],
    seed: u64,
) -> f64 {
    let n = mlp.net.param_count();
    let mut rng = stream(seed, StreamTag::Probe, 0, 0);
    let mut idx = index::sample(&mut rng, n, n.min(256)).into_vec();
    idx.sort_unstable();
    gradient_probe(mlp, x_t, t, epsilon_target, &idx)
        .into_iter()
        .map(|(a, num)| (a - num).abs() / (num.abs() + 1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_network_reverse_mean() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let m = MlpDenoiser::zeros(2, 100, &[8, 8], 16).unwrap();
        let x = [0.4, -1.2];
        let (eps, f) = mlp_forward(&m, &x, 37, &sched).unwrap();
        assert_eq!(eps, vec![0.0, 0.0]);
        let s = 1.0 / (1.0 - sched.beta(37)).sqrt();
        assert_eq!(f, vec![s * 0.4, s * -1.2]);
    }

    #[test]
    fn conversion_identity() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let m = MlpDenoiser::new(3, 100, &[16], 8, 4).unwrap();
        let x = [0.1, 0.2, -0.3];
        let t = 60;
        let (eps, f) = mlp_forward(&m, &x, t, &sched).unwrap();
        let (b, a) = (sched.beta(t), sched.alphas()[t]);
        for j in 0..3 {
            let want = (x[j] - b / (1.0 - a).sqrt() * eps[j]) / (1.0 - b).sqrt();
            assert!((f[j] - want).abs() <= 1e-15 * want.abs());
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let sched = NoiseSchedule::default_linear(50).unwrap();
        let m = MlpDenoiser::new(2, 50, &[32, 32], 16, 9).unwrap();
        let a = mlp_forward(&m, &[0.5, 0.5], 10, &sched).unwrap();
        let b = mlp_forward(&m, &[0.5, 0.5], 10, &sched).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_width_must_be_even() {
        assert!(MlpDenoiser::zeros(2, 10, &[4], 3).is_err());
    }

    #[test]
    fn zero_epochs_is_a_noop() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            hidden: vec![8],
            seed: 3,
            ..TrainConfig::default()
        };
        let data = vec![vec![0.0, 1.0]; 5];
        let trained = train_mlp(&data, &sched, &cfg).unwrap();
        let fresh = MlpDenoiser::new(2, 20, &[8], 16, 3).unwrap();
        assert_eq!(trained.model, fresh);
        assert!(trained.loss_trace.is_empty());
    }

    #[test]
    fn training_rejects_bad_input() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let cfg = TrainConfig::default();
        assert!(train_mlp(&[], &sched, &cfg).is_err());
        assert!(train_mlp(&[vec![0.0], vec![0.0, 1.0]], &sched, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let data = vec![vec![10.0, -10.0]; 64];
        match train_mlp(&data, &sched, &cfg) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("diverged")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn gradient_check_random_network() {
        for seed in 0..3 {
            let m = MlpDenoiser::new(2, 100, &[16, 16], 16, seed).unwrap();
            let mut rng = stream(seed, StreamTag::Probe, 1, 0);
            let x = rng.standard_normal_vec(2);
            let e = rng.standard_normal_vec(2);
            let err = gradient_check(&m, &x, 30, &e, seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
            assert_eq!(err, gradient_check(&m, &x, 30, &e, seed));
        }
    }

    #[test]
    fn zero_network_bias_gradients() {
        let m = MlpDenoiser::zeros(2, 100, &[8, 8], 16).unwrap();
        let biases = m.network().bias_indices();
        for (a, n) in gradient_probe(&m, &[0.0, 0.0], 1, &[0.3, -0.6], &biases) {
            assert!((a - n).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = MlpDenoiser::new(3, 40, &[7, 5], 4, 11).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"BMRK1");
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 3);
        let expected_len = 5 + 4 * (4 + 4) + 8 * m.network().param_count();
        assert_eq!(buf.len(), expected_len);
        // First parameter directly after the header.
        let first = f64::from_le_bytes(buf[37..45].try_into().unwrap());
        assert_eq!(first, m.network().params()[0]);
        assert_eq!(MlpDenoiser::load(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let m = MlpDenoiser::new(2, 10, &[4], 4, 1).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(MlpDenoiser::load(bad.as_slice()), Err(Error::Format(_))));
        assert!(MlpDenoiser::load(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(MlpDenoiser::load(long.as_slice()).is_err());
    }
}
