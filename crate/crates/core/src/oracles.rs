//! Independent ground truth: closed-form Gaussian densities and
//! Black-Scholes prices, and a full-truncation Euler Monte Carlo simulator
//! for Heston-type models.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::PiecewiseSchedule;
use crate::quad::UniformGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Prob(X_tau <= y | X_0 = x)` for `dX = -sigma^2/2 dt + sigma dW`.
pub fn gbm_cdf(x: f64, tau: f64, y: f64, sigma: f64) -> f64 {
    let st = sigma * tau.max(0.0).sqrt();
    if st == 0.0 {
        return if x <= y { 1.0 } else { 0.0 };
    }
    norm_cdf((y - x + 0.5 * sigma * sigma * tau) / st)
}

/// Gaussian transition density of the log-price over a horizon `t`; the
/// `y`-derivative of [`gbm_cdf`], peaking at `y = x - sigma^2 t / 2`.
pub fn gaussian_density(x: f64, t: f64, y: f64, sigma: f64) -> f64 {
    let var = sigma * sigma * t;
    let e = y - x + 0.5 * var;
    (-(e * e) / (2.0 * var)).exp() / (sigma * (2.0 * PI * t).sqrt())
}

/// Zero-rate Black-Scholes price.
pub fn bs_price(s0: f64, k: f64, sigma: f64, t: f64, kind: OptionKind) -> f64 {
    let st = sigma * t.sqrt();
    if st == 0.0 || k <= 0.0 {
        return match kind {
            OptionKind::Call => (s0 - k).max(0.0),
            OptionKind::Put => (k - s0).max(0.0),
        };
    }
    let d1 = ((s0 / k).ln() + 0.5 * st * st) / st;
    let d2 = d1 - st;
    match kind {
        OptionKind::Call => s0 * norm_cdf(d1) - k * norm_cdf(d2),
        OptionKind::Put => k * norm_cdf(-d2) - s0 * norm_cdf(-d1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McScheme {
    FullTruncationEuler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub scheme: McScheme,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 1_000_000,
            steps_per_year: 100,
            seed: 2021,
            scheme: McScheme::FullTruncationEuler,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.steps_per_year == 0 {
            return Err(Error::Config(
                "Monte Carlo needs at least one path and one step per year".into(),
            ));
        }
        Ok(())
    }

    /// Whether the configuration is large enough for acceptance checks.
    pub fn acceptance_grade(&self) -> bool {
        self.paths >= 10_000 && self.steps_per_year >= 100
    }

    fn steps(&self, t: f64) -> usize {
        ((t * self.steps_per_year as f64).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HestonDynamics {
    Constant {
        kappa: f64,
        theta: f64,
        xi: f64,
        rho: f64,
    },
    Piecewise {
        kappa: f64,
        schedule: PiecewiseSchedule,
    },
}

impl HestonDynamics {
    /// `(kappa, theta, xi, rho)` in force at `t`.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64, f64, f64)> {
        match self {
            HestonDynamics::Constant {
                kappa,
                theta,
                xi,
                rho,
            } => Ok((*kappa, *theta, *xi, *rho)),
            HestonDynamics::Piecewise { kappa, schedule } => {
                let (theta, xi, rho) = schedule.lookup(t)?;
                Ok((*kappa, theta, xi, rho))
            }
        }
    }

    fn feller_ok(&self) -> bool {
        match self {
            HestonDynamics::Constant {
                kappa, theta, xi, ..
            } => 2.0 * kappa * theta >= xi * xi,
            HestonDynamics::Piecewise { kappa, schedule } => schedule
                .theta
                .iter()
                .zip(&schedule.xi)
                .all(|(th, xi)| 2.0 * kappa * th >= xi * xi),
        }
    }
}

/// Terminal samples `(X_T, V_T)`, one entry per path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Full-truncation Euler simulation of
/// `dX = -V/2 dt + sqrt(V) dW_x`, `dV = kappa(theta - V) dt + xi sqrt(V) dW_v`,
/// `dW_x dW_v = rho dt`, started from `(x0, v0)` at time 0.
///
/// Every path draws from its own stream keyed by `(seed, path)`, so results
/// do not depend on the number of worker threads.
pub fn heston_mc(
    x0: f64,
    v0: f64,
    dynamics: &HestonDynamics,
    t: f64,
    cfg: &McConfig,
) -> Result<Samples> {
    cfg.validate()?;
    if !(t > 0.0) || v0 < 0.0 {
        return Err(Error::Config(format!(
            "need T > 0 and v0 >= 0, got T = {t}, v0 = {v0}"
        )));
    }
    if !dynamics.feller_ok() {
        log::warn!("Feller condition violated; variance can touch zero");
    }
    let n = cfg.steps(t);
    let dt = t / n as f64;
    let coeffs = (0..n)
        .map(|i| dynamics.coeffs((i as f64 + 0.5) * dt))
        .collect::<Result<Vec<_>>>()?;
    let sq_dt = dt.sqrt();

    let pairs: Vec<(f64, f64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let (mut x, mut v) = (x0, v0);
            for &(kappa, theta, xi, rho) in &coeffs {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let vp = v.max(0.0);
                let sv = vp.sqrt() * sq_dt;
                x += -0.5 * vp * dt + sv * z1;
                v += kappa * (theta - vp) * dt
                    + xi * sv * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            }
            (x, v)
        })
        .collect();
    let (x, v) = pairs.into_iter().unzip();
    Ok(Samples { x, v })
}

/// Log-price samples for constant-volatility GBM, stepped with the same
/// Euler scheme (exact for constant sigma).
pub fn gbm_mc(x0: f64, sigma: f64, t: f64, cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.steps(t);
    let dt = t / n as f64;
    let sq_dt = dt.sqrt();
    Ok((0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut x = x0;
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += -0.5 * sigma * sigma * dt + sigma * sq_dt * z;
            }
            x
        })
        .collect())
}

/// Sample mean of `payoff(e^x)` and its standard error.
pub fn mc_price(log_prices: &[f64], payoff: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if log_prices.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = log_prices.len() as f64;
    let vals: Vec<f64> = log_prices.iter().map(|x| payoff(x.exp())).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Exact empirical CDF `#{s <= q} / n` at each query.
pub fn empirical_cdf(samples: &[f64], queries: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(queries
        .iter()
        .map(|q| sorted.partition_point(|s| s <= q) as f64 / n)
        .collect())
}

/// Joint empirical CDF `#{x <= y, v <= z} / n` for each `(y, z)` query.
pub fn empirical_cdf_2d(samples: &Samples, queries: &[(f64, f64)]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = samples.len() as f64;
    Ok(queries
        .iter()
        .map(|&(y, z)| {
            samples
                .x
                .iter()
                .zip(&samples.v)
                .filter(|(x, v)| **x <= y && **v <= z)
                .count() as f64
                / n
        })
        .collect())
}

fn cell(grid: &UniformGrid, s: f64) -> Option<usize> {
    let h = grid.step();
    let k = ((s - grid.lo) / h + 0.5).floor();
    if k >= 0.0 && (k as usize) < grid.n {
        Some(k as usize)
    } else {
        None
    }
}

/// Histogram density on `grid`; each node owns the cell of width `h`
/// centred on it.
pub fn empirical_density(samples: &[f64], grid: &UniformGrid) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts = vec![0usize; grid.n];
    for &s in samples {
        if let Some(k) = cell(grid, s) {
            counts[k] += 1;
        }
    }
    let norm = samples.len() as f64 * grid.step();
    Ok(counts.into_iter().map(|c| c as f64 / norm).collect())
}

/// Joint histogram density of `(x, v)` on `ygrid x zgrid`, row-major in `y`.
pub fn empirical_density_2d(
    samples: &Samples,
    ygrid: &UniformGrid,
    zgrid: &UniformGrid,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts = vec![0usize; ygrid.n * zgrid.n];
    for (&x, &v) in samples.x.iter().zip(&samples.v) {
        if let (Some(i), Some(j)) = (cell(ygrid, x), cell(zgrid, v)) {
            counts[i * zgrid.n + j] += 1;
        }
    }
    let norm = samples.len() as f64 * ygrid.step() * zgrid.step();
    Ok(counts.into_iter().map(|c| c as f64 / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_density_at_mode() {
        // exponent vanishes at y = x - sigma^2 T / 2
        let (sigma, t) = (0.25, 1.0);
        let x = 0.0;
        let peak = gaussian_density(x, t, x - 0.03125, sigma);
        assert!((peak - 1.0 / (0.25 * (2.0 * PI).sqrt())).abs() < 1e-12);
        assert!((peak - 1.59577).abs() < 1e-5);
        let a = gaussian_density(x, t, x - 0.03125 + 0.2, sigma);
        let b = gaussian_density(x, t, x - 0.03125 - 0.2, sigma);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let (x, t, sigma) = (0.1, 0.8, 0.3);
        let n = 20_000;
        let h = 20.0 / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let y = x - 10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * gaussian_density(x, t, y, sigma);
        }
        assert!((sum * h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn black_scholes_reference() {
        // d1 = 0.125, d2 = -0.125: 2 Phi(0.125) - 1
        let c = bs_price(1.0, 1.0, 0.25, 1.0, OptionKind::Call);
        assert!((c - 0.0994764497).abs() < 1e-9, "{c}");
        assert!((c - 0.09947).abs() < 1e-5);
        let p = bs_price(1.0, 1.0, 0.25, 1.0, OptionKind::Put);
        assert!((c - p).abs() < 1e-15);
        let tiny = bs_price(1.0, 1e-12, 0.25, 1.0, OptionKind::Call);
        assert!((tiny - 1.0).abs() < 1e-9);
        for k in [0.7, 0.95, 1.3] {
            let c = bs_price(1.2, k, 0.3, 0.6, OptionKind::Call);
            let p = bs_price(1.2, k, 0.3, 0.6, OptionKind::Put);
            assert!((c - p - (1.2 - k)).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_cdf_tails() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(-8.0) - 6.22096057427178e-16).abs() < 1e-25);
        let q = norm_cdf(1.959963984540054);
        assert!((q - 0.975).abs() < 1e-14, "{q:e}");
    }

    #[test]
    fn deterministic_variance_reduces_to_black_scholes() {
        let (v0, kappa, theta) = (0.09, 2.0, 0.04);
        let t = 1.0;
        let dyns = HestonDynamics::Constant {
            kappa,
            theta,
            xi: 0.0,
            rho: 0.0,
        };
        let cfg = McConfig {
            paths: 100_000,
            steps_per_year: 200,
            seed: 3,
            ..Default::default()
        };
        let s = heston_mc(0.0, v0, &dyns, t, &cfg).unwrap();
        let (price, se) = mc_price(&s.x, |st| (st - 1.0).max(0.0)).unwrap();
        // integral of theta + (v0 - theta) e^{-kappa s} over [0, T]
        let avg_var = theta + (v0 - theta) * (1.0 - (-kappa * t).exp()) / (kappa * t);
        let bs = bs_price(1.0, 1.0, avg_var.sqrt(), t, OptionKind::Call);
        assert!(
            (price - bs).abs() < 3.0 * se + 5e-4,
            "{price} vs {bs} (se {se})"
        );
    }

    #[test]
    fn unit_payoff_has_unit_mass() {
        let dyns = HestonDynamics::Constant {
            kappa: 1.0,
            theta: 0.2,
            xi: 0.2,
            rho: 0.0,
        };
        let cfg = McConfig {
            paths: 10_000,
            ..Default::default()
        };
        let s = heston_mc(0.0, 0.2, &dyns, 1.0, &cfg).unwrap();
        assert_eq!(mc_price(&s.x, |_| 1.0).unwrap().0, 1.0);
    }

    #[test]
    fn mc_is_deterministic() {
        let dyns = HestonDynamics::Piecewise {
            kappa: 3.0,
            schedule: PiecewiseSchedule::benchmark(),
        };
        let cfg = McConfig {
            paths: 2_000,
            ..Default::default()
        };
        let a = heston_mc(0.0, 0.04, &dyns, 1.0, &cfg).unwrap();
        let b = heston_mc(0.0, 0.04, &dyns, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ecdf_basics() {
        let s = [0.3, -1.0, 2.0, 0.3, 5.0];
        let c = empirical_cdf(&s, &[-2.0, 0.3, 5.0, 1.0]).unwrap();
        assert_eq!(c, vec![0.0, 0.6, 1.0, 0.6]);
        assert!(matches!(
            empirical_cdf(&[], &[0.0]),
            Err(Error::EmptySamples)
        ));
    }

    #[test]
    fn gbm_samples_pass_ks() {
        let n = 100_000;
        let (sigma, t) = (0.25, 1.0);
        let cfg = McConfig {
            paths: n,
            steps_per_year: 100,
            seed: 17,
            ..Default::default()
        };
        let xs = gbm_mc(0.0, sigma, t, &cfg).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, &s) in sorted.iter().enumerate() {
            let f = gbm_cdf(0.0, t, s, sigma);
            d = d
                .max((f - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - f).abs());
        }
        let bound = 3.0 * 1.36 / (n as f64).sqrt();
        assert!(d <= bound, "KS {d} > {bound}");
    }

    #[test]
    fn histogram_density_normalises() {
        let cfg = McConfig {
            paths: 50_000,
            seed: 5,
            ..Default::default()
        };
        let xs = gbm_mc(0.0, 0.3, 1.0, &cfg).unwrap();
        let grid = UniformGrid::new(-2.0, 2.0, 81).unwrap();
        let dens = empirical_density(&xs, &grid).unwrap();
        let mass: f64 = dens.iter().sum::<f64>() * grid.step();
        assert!((mass - 1.0).abs() < 1e-3);
        let peak = gaussian_density(0.0, 1.0, -0.05, 0.3);
        assert!((dens[40] - peak).abs() < 0.1);
    }
}
