use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::rng::{ChainRng, NoiseSource};
use crate::schedule::{NoiseSchedule, Transition};
use rand::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Isotropic Gaussian mixture `sum_k w_k N(mu_k, sigma_k^2 I)`.
///
/// A component with zero variance is a point mass; it is accepted so that
/// degenerate priors can be expressed, but its density is not finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    log_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;

    fn try_from(s: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(s.weights, s.means, s.variances)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(g: GaussianMixture) -> Self {
        MixtureSpec {
            weights: g.weights,
            means: g.means,
            variances: g.variances,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::validation("mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::validation(format!(
                "mixture has {k} weights but {} means and {} variances",
                means.len(),
                variances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::validation("mixture dimension must be >= 1"));
        }
        for m in &means {
            check_dim(d, m.len())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("mixture means must be finite"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(Error::validation(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation("mixture variances must be >= 0"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            means,
            variances,
            log_weights,
        })
    }

    /// Single isotropic Gaussian `N(mean, variance I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], 1.0)
    }

    /// Equal-weight mixture centred on `points`, all with the same variance.
    pub fn empirical(points: &[Vec<f64>], variance: f64) -> Result<Self> {
        let k = points.len();
        if k == 0 {
            return Err(Error::validation("empirical mixture needs points"));
        }
        let mut weights = vec![1.0 / k as f64; k];
        // Absorb rounding so the weights sum to 1 within 1e-12.
        let drift = 1.0 - weights.iter().sum::<f64>();
        weights[0] += drift;
        Self::new(weights, points.to_vec(), vec![variance; k])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Draw `n` points together with their component indices.
    pub fn sample_labeled(&self, n: usize, rng: &mut ChainRng) -> Vec<(Vec<f64>, usize)> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = self.components() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let sd = self.variances[k].sqrt();
                let mut x = rng.standard_normal_vec(self.dim());
                for (xi, mi) in x.iter_mut().zip(&self.means[k]) {
                    *xi = mi + sd * *xi;
                }
                (x, k)
            })
            .collect()
    }

    pub fn sample(&self, n: usize, rng: &mut ChainRng) -> Vec<Vec<f64>> {
        self.sample_labeled(n, rng).into_iter().map(|(x, _)| x).collect()
    }

    /// Per-component log joint `log w_k + log N(x; sqrt(a) mu_k, (a s_k^2 + 1 - a) I)`
    /// for the mixture diffused to cumulative product `alpha`.
    fn component_log_joint(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        let d = self.dim() as f64;
        let sa = alpha.sqrt();
        self.means
            .iter()
            .zip(&self.variances)
            .zip(&self.log_weights)
            .map(|((mu, &var), &lw)| {
                if lw == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let s2 = alpha * var + (1.0 - alpha);
                let sq: f64 = x.iter().zip(mu).map(|(xi, mi)| (xi - sa * mi).powi(2)).sum();
                if s2 <= 0.0 {
                    return if sq == 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                }
                lw - 0.5 * d * (LN_2PI + s2.ln()) - 0.5 * sq / s2
            })
            .collect()
    }

    /// Posterior component probabilities given a point diffused to `alpha`,
    /// normalized in the log domain.
    pub fn responsibilities(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        let lj = self.component_log_joint(x, alpha);
        let max = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::INFINITY {
            let hits = lj.iter().filter(|v| **v == f64::INFINITY).count() as f64;
            return lj
                .iter()
                .map(|v| if *v == f64::INFINITY { 1.0 / hits } else { 0.0 })
                .collect();
        }
        if max == f64::NEG_INFINITY {
            // Only reachable through point masses off their support.
            let live = self.weights.iter().filter(|w| **w > 0.0).count() as f64;
            return self
                .weights
                .iter()
                .map(|w| if *w > 0.0 { 1.0 / live } else { 0.0 })
                .collect();
        }
        let mut r: Vec<f64> = lj.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= z);
        r
    }

    /// `log p_t(x)` of the mixture diffused to cumulative product `alpha`;
    /// `alpha = 1` gives the clean log density.
    pub fn log_density_at(&self, x: &[f64], alpha: f64) -> f64 {
        let lj = self.component_log_joint(x, alpha);
        let max = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + lj.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_at(x, 1.0)
    }

    /// `E[x0 | x_t]` when `x_t = sqrt(alpha) x0 + sqrt(1 - alpha) eps`.
    pub fn posterior_mean_at(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        let r = self.responsibilities(x, alpha);
        let sa = alpha.sqrt();
        let mut out = vec![0.0; x.len()];
        for ((mu, &var), &rk) in self.means.iter().zip(&self.variances).zip(&r) {
            if rk == 0.0 {
                continue;
            }
            let gain = sa * var / (alpha * var + 1.0 - alpha);
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu) {
                *o += rk * (mi + gain * (xi - sa * mi));
            }
        }
        out
    }

    /// Mean of `q(x_prev | x_t, x0)` with `x0` replaced by `E[x0 | x_t]`.
    pub fn reverse_mean_at(&self, x: &[f64], tr: &Transition) -> Vec<f64> {
        let x0 = self.posterior_mean_at(x, tr.alpha);
        let (c_x0, c_xt) = tr.posterior_coefficients();
        x0.iter().zip(x).map(|(m, xi)| c_x0 * m + c_xt * xi).collect()
    }
}

fn check_query(gmm: &GaussianMixture, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<()> {
    check_dim(gmm.dim(), x_t.len())?;
    if t == 0 || t > sched.steps() {
        return Err(Error::validation(format!(
            "oracle query needs 1 <= t <= {}, got {t}",
            sched.steps()
        )));
    }
    if x_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("oracle query with non-finite input"));
    }
    Ok(())
}

/// `E[x0 | x_t]` under `x0 ~ gmm`, `x_t ~ q(x_t | x0)`.
pub fn posterior_mean_x0(
    gmm: &GaussianMixture,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_query(gmm, x_t, t, sched)?;
    Ok(gmm.posterior_mean_at(x_t, sched.alphas()[t]))
}

/// Exact reverse mean `f(x_t, t)` for mixture data.
pub fn oracle_reverse_mean(
    gmm: &GaussianMixture,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_query(gmm, x_t, t, sched)?;
    Ok(gmm.reverse_mean_at(x_t, &sched.transition(t)))
}

/// The closed-form denoiser of a Gaussian mixture.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    gmm: GaussianMixture,
}

impl OracleDenoiser {
    pub fn new(gmm: GaussianMixture) -> Self {
        Self { gmm }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.gmm
    }
}

impl Denoiser for OracleDenoiser {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }

    fn reverse_mean(&self, x: &[f64], tr: &Transition) -> Vec<f64> {
        self.gmm.reverse_mean_at(x, tr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamTag};
    use proptest::prelude::*;

    fn two_modes(mu: f64) -> GaussianMixture {
        GaussianMixture::new(vec![0.5, 0.5], vec![vec![mu], vec![-mu]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_ok());
    }

    #[test]
    fn json_roundtrip_validates() {
        let g = two_modes(3.0);
        let s = serde_json::to_string(&g).unwrap();
        let back: GaussianMixture = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"weights":[0.7,0.7],"means":[[0.0],[1.0]],"variances":[1.0,1.0]}"#;
        assert!(serde_json::from_str::<GaussianMixture>(bad).is_err());
    }

    #[test]
    fn standard_prior_posterior_mean() {
        let sched = NoiseSchedule::default_linear(50).unwrap();
        let g = GaussianMixture::standard(2).unwrap();
        for t in [1, 7, 50] {
            let x = [0.7, -1.3];
            let m = posterior_mean_x0(&g, &x, t, &sched).unwrap();
            let sa = sched.alphas()[t].sqrt();
            for j in 0..2 {
                assert!((m[j] - sa * x[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn point_mass_prior() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let g = GaussianMixture::gaussian(vec![1.5, -2.0], 0.0).unwrap();
        let m = posterior_mean_x0(&g, &[10.0, 3.0], 9, &sched).unwrap();
        assert_eq!(m, vec![1.5, -2.0]);
    }

    #[test]
    fn symmetric_modes_cancel() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let m = posterior_mean_x0(&two_modes(3.0), &[0.0], 11, &sched).unwrap();
        assert_eq!(m, vec![0.0]);
    }

    #[test]
    fn last_step_collapses_to_posterior_mean() {
        let sched = NoiseSchedule::default_linear(20).unwrap();
        let g = two_modes(2.0);
        let x = [0.9];
        let f = oracle_reverse_mean(&g, &x, 1, &sched).unwrap();
        let m = posterior_mean_x0(&g, &x, 1, &sched).unwrap();
        assert!((f[0] - m[0]).abs() < 1e-15);
    }

    #[test]
    fn worked_two_step_reverse_mean() {
        let sched = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let g = GaussianMixture::standard(1).unwrap();
        let m = posterior_mean_x0(&g, &[1.0], 2, &sched).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15);
        let f = oracle_reverse_mean(&g, &[1.0], 2, &sched).unwrap();
        // (sqrt(.5) * .5 / .75) * .5 + (sqrt(.5) * .5 / .75) * 1
        let expected = 0.5f64.sqrt() * 0.5 / 0.75 * 1.5;
        assert!((f[0] - expected).abs() < 1e-15);
        assert!((f[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn single_component_geometry() {
        let sched = NoiseSchedule::default_linear(100).unwrap();
        let g = GaussianMixture::new(
            vec![0.0, 1.0],
            vec![vec![5.0, 5.0], vec![1.0, -2.0]],
            vec![0.3, 0.3],
        )
        .unwrap();
        let t = 40;
        let sa = sched.alphas()[t].sqrt();
        let x = [sa * 1.0, sa * -2.0];
        let f = oracle_reverse_mean(&g, &x, t, &sched).unwrap();
        // f = mu + lambda (x - mu) with lambda in [0, 1]
        let lam0 = (f[0] - 1.0) / (x[0] - 1.0);
        let lam1 = (f[1] + 2.0) / (x[1] + 2.0);
        assert!((lam0 - lam1).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&lam0));
    }

    #[test]
    fn coefficient_identity() {
        // Feeding x0 through q(x_t | x0) noiselessly and using x0 itself in
        // the posterior formula must return sqrt(alpha_{t-1}) x0.
        let sched = NoiseSchedule::default_linear(1000).unwrap();
        for t in [1, 2, 1000] {
            let tr = sched.transition(t);
            let (c0, ct) = tr.posterior_coefficients();
            let x0 = 0.8;
            let xt = tr.alpha.sqrt() * x0;
            let got = c0 * x0 + ct * xt;
            assert!((got - tr.alpha_prev.sqrt() * x0).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn underflow_is_handled() {
        let sched = NoiseSchedule::default_linear(1000).unwrap();
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![1.0]],
            vec![1e-6, 1e-6],
        )
        .unwrap();
        let m = posterior_mean_x0(&g, &[1e4], 1, &sched).unwrap();
        assert!(m[0].is_finite());
        // All mass on the component at 1; its conjugate update follows.
        let a = sched.alphas()[1];
        let gain = a.sqrt() * 1e-6 / (a * 1e-6 + 1.0 - a);
        assert!((m[0] - (1.0 + gain * (1e4 - a.sqrt()))).abs() < 1e-9);
        assert_eq!(g.responsibilities(&[1e4], a), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_queries() {
        let sched = NoiseSchedule::default_linear(10).unwrap();
        let g = GaussianMixture::standard(2).unwrap();
        assert!(posterior_mean_x0(&g, &[0.0, 0.0], 0, &sched).is_err());
        assert!(posterior_mean_x0(&g, &[0.0], 1, &sched).is_err());
        assert!(matches!(
            posterior_mean_x0(&g, &[f64::NAN, 0.0], 1, &sched),
            Err(Error::Numerical(_))
        ));
    }

    /// Trapezoid rule for `E[x0 | x_t]` on a 1-d mixture.
    fn brute_posterior_mean(g: &GaussianMixture, xt: f64, alpha: f64) -> f64 {
        let lo = g
            .means()
            .iter()
            .zip(g.variances())
            .map(|(m, v)| m[0] - 6.0 * v.sqrt())
            .fold(f64::INFINITY, f64::min);
        let hi = g
            .means()
            .iter()
            .zip(g.variances())
            .map(|(m, v)| m[0] + 6.0 * v.sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        let n = 10_000;
        let h = (hi - lo) / (n - 1) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let x0 = lo + h * i as f64;
            let prior: f64 = g
                .weights()
                .iter()
                .zip(g.means())
                .zip(g.variances())
                .map(|((w, m), v)| {
                    w * (-(x0 - m[0]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
                })
                .sum();
            let lik = (-(xt - alpha.sqrt() * x0).powi(2) / (2.0 * (1.0 - alpha))).exp();
            let wt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            num += wt * x0 * prior * lik;
            den += wt * prior * lik;
        }
        num / den
    }

    #[test]
    fn matches_numerical_integration() {
        let sched = NoiseSchedule::linear(5, 0.05, 0.3).unwrap();
        let mixtures = [
            GaussianMixture::gaussian(vec![0.4], 0.8).unwrap(),
            GaussianMixture::new(vec![0.3, 0.7], vec![vec![-1.5], vec![2.0]], vec![0.5, 1.2]).unwrap(),
            two_modes(3.0),
        ];
        let mut rng = stream(5, StreamTag::Probe, 0, 0);
        for g in &mixtures {
            for t in 1..=5 {
                for _ in 0..5 {
                    let xt = 4.0 * (rand::Rng::random::<f64>(&mut rng) - 0.5);
                    let got = posterior_mean_x0(g, &[xt], t, &sched).unwrap()[0];
                    let want = brute_posterior_mean(g, xt, sched.alphas()[t]);
                    assert!((got - want).abs() < 1e-6, "t={t} xt={xt} got={got} want={want}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn responsibilities_normalize(
            x in prop::collection::vec(-50.0f64..50.0, 3),
            w in 0.01f64..0.99,
            alpha in 1e-5f64..0.99999,
        ) {
            let g = GaussianMixture::new(
                vec![w, 1.0 - w],
                vec![vec![1.0, 2.0, -3.0], vec![-4.0, 0.5, 0.0]],
                vec![0.01, 2.0],
            ).unwrap();
            let r = g.responsibilities(&x, alpha);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| *v >= 0.0));
            prop_assert!(g.posterior_mean_at(&x, alpha).iter().all(|v| v.is_finite()));
        }
    }
}
