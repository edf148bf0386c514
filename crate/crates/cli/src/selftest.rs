//! Fast brute-force checks of the numerical core at small `T`.

use boomerang_core::denoiser::{posterior_mean_x0, GaussianMixture, OracleDenoiser};
use boomerang_core::forward::{forward_jump, forward_step, Sample};
use boomerang_core::metrics::mean_and_se;
use boomerang_core::rng::{stream, StreamTag};
use boomerang_core::sampler::{boomerang, boomerang_batch, BoomerangConfig};
use boomerang_core::schedule::NoiseSchedule;
use boomerang_core::{Error, Result};
use rand::Rng;

type Check = fn(u64) -> Result<(bool, String)>;

fn schedule_products(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, StreamTag::Probe, 1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let t = rng.random_range(1..=200usize);
        let betas: Vec<f64> = (0..t).map(|_| rng.random_range(1e-4..0.2)).collect();
        let sched = NoiseSchedule::from_betas(betas.clone())?;
        let mut prod = 1.0;
        for (i, b) in betas.iter().enumerate() {
            prod *= 1.0 - b;
            worst = worst.max((prod - sched.alphas()[i + 1]).abs() / prod);
        }
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.1e}")))
}

fn jump_matches_steps(seed: u64) -> Result<(bool, String)> {
    let sched = NoiseSchedule::default_linear(50)?;
    let x0 = Sample::clean(vec![2.0]);
    let n = 4000u64;
    let mut stepped = Vec::new();
    let mut jumped = Vec::new();
    for c in 0..n {
        let mut r = stream(seed, StreamTag::Probe, c, 2);
        let mut s = x0.clone();
        for _ in 0..50 {
            s = forward_step(&s, &sched, &mut r)?;
        }
        stepped.push(s.x[0]);
        let mut r = stream(seed, StreamTag::Probe, c, 3);
        jumped.push(forward_jump(&x0, 50, &sched, &mut r)?.x[0]);
    }
    let (ma, sa) = mean_and_se(&stepped);
    let (mb, sb) = mean_and_se(&jumped);
    let z = (ma - mb).abs() / sa.hypot(sb);
    Ok((z <= 4.0, format!("mean gap {z:.2} SE")))
}

/// `E[x0 | x_t]` by trapezoidal integration over a fine grid of `x0`.
fn quadrature_mean(gmm: &GaussianMixture, x_t: f64, alpha: f64) -> f64 {
    let (lo, hi, m) = (-12.0, 12.0, 48_000);
    let h = (hi - lo) / m as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=m {
        let x0 = lo + h * i as f64;
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        let lik = -(x_t - alpha.sqrt() * x0).powi(2) / (2.0 * (1.0 - alpha));
        let p = w * (gmm.log_density(&[x0]) + lik).exp();
        num += p * x0;
        den += p;
    }
    num / den
}

fn oracle_posterior(_seed: u64) -> Result<(bool, String)> {
    let gmm = GaussianMixture::new(vec![0.3, 0.7], vec![vec![-2.0], vec![1.5]], vec![0.4, 0.8])?;
    let sched = NoiseSchedule::default_linear(100)?;
    let mut worst: f64 = 0.0;
    for t in [1usize, 5, 20, 60, 100] {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let exact = posterior_mean_x0(&gmm, &[x], t, &sched)?[0];
            worst = worst.max((exact - quadrature_mean(&gmm, x, sched.alphas()[t])).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max abs gap to quadrature {worst:.1e}")))
}

fn boomerang_bookkeeping(seed: u64) -> Result<(bool, String)> {
    let sched = NoiseSchedule::default_linear(100)?;
    let den = OracleDenoiser::new(GaussianMixture::standard(2)?);
    let x = vec![vec![0.25, -1.5], vec![3.0, 0.0]];
    let same = boomerang_batch(&x, &BoomerangConfig::new(0, seed), &den, &sched)? == x;
    let (_, trace) = boomerang(&Sample::clean(x[0].clone()), &BoomerangConfig::new(37, seed).traced(), &den, &sched)?;
    let ok = same && trace.reverse_steps == 37 && trace.states.len() == 38;
    Ok((
        ok,
        format!(
            "t_boom=0 identity: {same}; reverse steps at t_boom=37: {}",
            trace.reverse_steps
        ),
    ))
}

fn conditional_mean(seed: u64) -> Result<(bool, String)> {
    let sched = NoiseSchedule::default_linear(100)?;
    let den = OracleDenoiser::new(GaussianMixture::standard(1)?);
    let x0 = vec![vec![1.2]; 4000];
    let out = boomerang_batch(&x0, &BoomerangConfig::new(40, seed), &den, &sched)?;
    let v: Vec<f64> = out.iter().map(|r| r[0]).collect();
    // Jump then exact reverse under a N(0, 1) prior keeps E[x0'] = alpha * x0.
    let target = sched.alphas()[40] * 1.2;
    let (m, se) = mean_and_se(&v);
    let z = (m - target).abs() / se;
    Ok((z <= 4.0, format!("mean {m:.4} vs {target:.4} ({z:.2} SE)")))
}

pub fn run(seed: u64) -> Result<Vec<String>> {
    let checks: [(&str, Check); 5] = [
        ("schedule products", schedule_products),
        ("jump vs iterated steps", jump_matches_steps),
        ("oracle posterior vs quadrature", oracle_posterior),
        ("boomerang bookkeeping", boomerang_bookkeeping),
        ("boomerang conditional mean", conditional_mean),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check(seed)?;
        if !ok {
            failed += 1;
        }
        println!("selftest {}: {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Error::numerical(format!("{failed} selftest check(s) failed")));
    }
    Ok(Vec::new())
}
