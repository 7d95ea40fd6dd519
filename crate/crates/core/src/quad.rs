//! European option pricing by Simpson quadrature of payoff times density.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{DensityConfig, DensityEvaluator};
use crate::error::{Error, Result};
use crate::net::ScalarField;
use crate::oracles::{self, bs_price, OptionKind, Samples};
use crate::pde::{ModelKind, PdeModel};

/// `n` evenly spaced nodes from `lo` to `hi` inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) {
            return Err(Error::Config(format!(
                "grid needs lo < hi and at least 2 nodes, got [{lo}, {hi}] x {n}"
            )));
        }
        Ok(UniformGrid { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Composite Simpson weights; `n` must be odd.
    pub fn simpson_weights(&self) -> Result<Vec<f64>> {
        if self.n < 3 || self.n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "Simpson's rule needs an odd node count >= 3, got {}",
                self.n
            )));
        }
        let h = self.step();
        Ok((0..self.n)
            .map(|i| {
                let c = if i == 0 || i + 1 == self.n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Call {
        strike: f64,
    },
    Put {
        strike: f64,
    },
    /// Pays 1 in every state; prices the density mass.
    Unit,
    /// Piecewise-linear in the spot through `(spots[i], values[i])`, flat
    /// beyond the ends.
    Tabulated {
        spots: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Payoff {
    pub fn vanilla(kind: OptionKind, strike: f64) -> Self {
        match kind {
            OptionKind::Call => Payoff::Call { strike },
            OptionKind::Put => Payoff::Put { strike },
        }
    }

    pub fn eval(&self, spot: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (spot - strike).max(0.0),
            Payoff::Put { strike } => (strike - spot).max(0.0),
            Payoff::Unit => 1.0,
            Payoff::Tabulated { spots, values } => {
                let k = spots.partition_point(|s| *s <= spot);
                if k == 0 {
                    values[0]
                } else if k == spots.len() {
                    values[k - 1]
                } else {
                    let w = (spot - spots[k - 1]) / (spots[k] - spots[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }

    /// Log-spot of the kink, if any.
    fn kink(&self) -> Option<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => Some(strike.ln()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } if !(*strike > 0.0) => Err(
                Error::Config(format!("strike must be positive, got {strike}")),
            ),
            Payoff::Tabulated { spots, values }
                if spots.is_empty()
                    || spots.len() != values.len()
                    || spots.windows(2).any(|w| !(w[0] < w[1])) =>
            {
                Err(Error::Config(
                    "tabulated payoff needs matching, strictly ascending spots".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truncation {
    /// `q` standard deviations of the log-price around its mean.
    StdDevs {
        q: f64,
    },
    Bounds {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub mesh_points: usize,
    pub truncation: Truncation,
    pub payoff: Payoff,
    pub spot: f64,
    pub maturity: f64,
}

impl QuadSpec {
    pub fn new(payoff: Payoff, spot: f64, maturity: f64) -> Self {
        QuadSpec {
            mesh_points: 51,
            truncation: Truncation::StdDevs { q: 6.0 },
            payoff,
            spot,
            maturity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh_points < 3 || self.mesh_points.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "mesh_points must be odd and >= 3, got {}",
                self.mesh_points
            )));
        }
        if !(self.spot > 0.0) || !(self.maturity > 0.0) {
            return Err(Error::Config("spot and maturity must be positive".into()));
        }
        if let Truncation::StdDevs { q } = self.truncation {
            if !(q > 0.0) {
                return Err(Error::Config(format!(
                    "truncation q must be positive, got {q}"
                )));
            }
        }
        self.payoff.validate()
    }

    /// Integration range in log-price for a reference volatility `vol`.
    fn y_range(&self, vol: f64) -> (f64, f64) {
        match self.truncation {
            Truncation::Bounds { lo, hi } => (lo, hi),
            Truncation::StdDevs { q } => {
                let x0 = self.spot.ln();
                let sd = vol * self.maturity.sqrt();
                let m = -0.5 * vol * vol * self.maturity;
                (x0 + m - q * sd, x0 + m + q * sd)
            }
        }
    }

    /// Simpson panels over the `y` range, split at the payoff kink when it
    /// falls strictly inside so the kink sits on a node.
    fn y_panels(&self, vol: f64) -> Result<Vec<UniformGrid>> {
        let (lo, hi) = self.y_range(vol);
        match self.payoff.kink() {
            Some(k) if k > lo && k < hi => Ok(vec![
                UniformGrid::new(lo, k, self.mesh_points)?,
                UniformGrid::new(k, hi, self.mesh_points)?,
            ]),
            _ => Ok(vec![UniformGrid::new(lo, hi, self.mesh_points)?]),
        }
    }
}

/// Source of the transition density used by the quadrature.
#[derive(Clone, Copy)]
pub enum DensityEngine<'a> {
    /// Closed-form GBM density.
    Gaussian,
    /// Differenced CDF of a trained network (or any field on the model's
    /// layout).
    Network {
        field: &'a dyn ScalarField,
        model: &'a PdeModel,
        config: DensityConfig,
    },
    /// Histogram of terminal samples simulated from the priced spot and
    /// maturity.
    Empirical { samples: &'a Samples },
}

impl DensityEngine<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            DensityEngine::Gaussian => "gaussian",
            DensityEngine::Network { .. } => "network",
            DensityEngine::Empirical { .. } => "mc",
        }
    }
}

fn simpson_sum(grid: &UniformGrid, f: &[f64]) -> Result<f64> {
    Ok(grid
        .simpson_weights()?
        .iter()
        .zip(f)
        .map(|(w, v)| w * v)
        .sum())
}

/// `t` input at which the network sees a maturity of `tau`.
///
/// With time-dependent coefficients the result is the price for the window
/// `[T - tau, T]` of the schedule, `T` being the domain's terminal time.
fn network_time(model: &PdeModel, tau: f64) -> Result<f64> {
    let t = model.terminal_time() - tau;
    if t < 0.0 {
        return Err(Error::OutOfDomain {
            coord: "maturity".into(),
            value: tau,
            lo: 0.0,
            hi: model.terminal_time(),
        });
    }
    if matches!(model.kind, ModelKind::TdHeston { .. }) && t > 0.0 {
        log::warn!(
            "time-dependent model: maturity {tau} prices the schedule window [{t}, {}], not [0, {tau}]",
            model.terminal_time()
        );
    }
    Ok(t)
}

/// Prices a one-factor payoff under GBM volatility `sigma`.
pub fn price_1d(engine: &DensityEngine, spec: &QuadSpec, sigma: f64) -> Result<f64> {
    spec.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let x0 = spec.spot.ln();
    let t = spec.maturity;
    let mut total = 0.0;
    match engine {
        DensityEngine::Gaussian => {
            for grid in spec.y_panels(sigma)? {
                let f: Vec<f64> = grid
                    .nodes()
                    .iter()
                    .map(|&y| {
                        spec.payoff.eval(y.exp()) * oracles::gaussian_density(x0, t, y, sigma)
                    })
                    .collect();
                total += simpson_sum(&grid, &f)?;
            }
        }
        DensityEngine::Network {
            field,
            model,
            config,
        } => {
            if model.is_two_factor() {
                return Err(Error::Config("price_1d needs a one-factor model".into()));
            }
            let eval = DensityEvaluator::new(*field, model, *config);
            let tn = network_time(model, t)?;
            for grid in spec.y_panels(sigma)? {
                let ys = grid.nodes();
                let points: Vec<Vec<f64>> = ys.iter().map(|&y| vec![tn, x0, y, sigma]).collect();
                let dens = eval.density_batch(&points)?;
                let f: Vec<f64> = ys
                    .iter()
                    .zip(&dens)
                    .map(|(y, p)| spec.payoff.eval(y.exp()) * p)
                    .collect();
                total += simpson_sum(&grid, &f)?;
            }
        }
        DensityEngine::Empirical { samples } => {
            let (lo, hi) = spec.y_range(sigma);
            let grid = UniformGrid::new(lo, hi, spec.mesh_points)?;
            let dens = oracles::empirical_density(&samples.x, &grid)?;
            let f: Vec<f64> = grid
                .nodes()
                .iter()
                .zip(&dens)
                .map(|(y, p)| spec.payoff.eval(y.exp()) * p)
                .collect();
            total = simpson_sum(&grid, &f)?;
        }
    }
    Ok(total)
}

/// Prices a payoff on the log-price under a two-factor model by
/// integrating the joint density over `(y, z)`.
///
/// `params` holds the model-parameter inputs that follow `z` in the
/// network layout (empty for the time-dependent model). `vol` sets the
/// width of the `y` range when truncating by standard deviations.
pub fn price_2d(
    engine: &DensityEngine,
    spec: &QuadSpec,
    v0: f64,
    params: &[f64],
    vol: f64,
) -> Result<f64> {
    spec.validate()?;
    let x0 = spec.spot.ln();
    let mut total = 0.0;
    match engine {
        DensityEngine::Gaussian => Err(Error::Config(
            "the Gaussian engine has no variance factor".into(),
        )),
        DensityEngine::Network {
            field,
            model,
            config,
        } => {
            if !model.is_two_factor() {
                return Err(Error::Config("price_2d needs a two-factor model".into()));
            }
            let extra = model.input_dim() - 5;
            if params.len() != extra {
                return Err(Error::Dimension {
                    expected: extra,
                    found: params.len(),
                });
            }
            let eval = DensityEvaluator::new(*field, model, *config);
            let tn = network_time(model, spec.maturity)?;
            let zi = model.domain.interval(4);
            let zgrid =
                UniformGrid::new(zi.lo + config.delta, zi.hi - config.delta, spec.mesh_points)?;
            let zw = zgrid.simpson_weights()?;
            let zs = zgrid.nodes();
            for ygrid in spec.y_panels(vol)? {
                let yw = ygrid.simpson_weights()?;
                let ys = ygrid.nodes();
                let mut points = Vec::with_capacity(ys.len() * zs.len());
                for &y in &ys {
                    for &z in &zs {
                        let mut p = vec![tn, x0, y, v0, z];
                        p.extend_from_slice(params);
                        points.push(p);
                    }
                }
                let dens = eval.density_batch(&points)?;
                for (i, &y) in ys.iter().enumerate() {
                    let marginal: f64 = (0..zs.len()).map(|j| zw[j] * dens[i * zs.len() + j]).sum();
                    total += yw[i] * spec.payoff.eval(y.exp()) * marginal;
                }
            }
            Ok(total)
        }
        DensityEngine::Empirical { samples } => {
            let (lo, hi) = spec.y_range(vol);
            let ygrid = UniformGrid::new(lo, hi, spec.mesh_points)?;
            let zmax = samples.v.iter().copied().fold(0.0, f64::max);
            let zgrid = UniformGrid::new(0.0, zmax.max(f64::EPSILON), spec.mesh_points)?;
            let dens = oracles::empirical_density_2d(samples, &ygrid, &zgrid)?;
            let (yw, zw) = (ygrid.simpson_weights()?, zgrid.simpson_weights()?);
            for (i, y) in ygrid.nodes().into_iter().enumerate() {
                let marginal: f64 = (0..zgrid.n).map(|j| zw[j] * dens[i * zgrid.n + j]).sum();
                total += yw[i] * spec.payoff.eval(y.exp()) * marginal;
            }
            Ok(total)
        }
    }
}

/// Model-parameter inputs following `z` for `model`, from a Heston case.
pub fn heston_params(model: &PdeModel, kappa: f64, theta: f64, xi: f64, rho: f64) -> Vec<f64> {
    match model.kind {
        ModelKind::Heston => vec![kappa, theta, xi, rho],
        _ => vec![],
    }
}

/// One vanilla pricing case under GBM, with unit spot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsCase {
    pub strike: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub kind: OptionKind,
}

/// `n` cases with `K ~ U[0.8, 1.2]`, `sigma ~ U[0.1, 0.4]`, `T ~ U[0.1, 1.1]`.
pub fn sample_cases(n: usize, kind: OptionKind, seed: u64) -> Vec<BsCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| BsCase {
            strike: rng.random_range(0.8..=1.2),
            sigma: rng.random_range(0.1..=0.4),
            maturity: rng.random_range(0.1..=1.1),
            kind,
        })
        .collect()
}

pub enum Reference<'a> {
    BlackScholes,
    Engine(DensityEngine<'a>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmseRow {
    pub case: BsCase,
    pub price: f64,
    pub reference: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
    pub rmse: f64,
}

/// Prices every case with `engine` and `reference` at unit spot.
pub fn rmse_report(
    engine: &DensityEngine,
    reference: &Reference,
    cases: &[BsCase],
    mesh_points: usize,
) -> Result<RmseReport> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let mut spec = QuadSpec::new(Payoff::vanilla(case.kind, case.strike), 1.0, case.maturity);
        spec.mesh_points = mesh_points;
        let start = Instant::now();
        let price = price_1d(engine, &spec, case.sigma)?;
        let seconds = start.elapsed().as_secs_f64();
        let reference = match reference {
            Reference::BlackScholes => {
                bs_price(1.0, case.strike, case.sigma, case.maturity, case.kind)
            }
            Reference::Engine(e) => price_1d(e, &spec, case.sigma)?,
        };
        rows.push(RmseRow {
            case: *case,
            price,
            reference,
            seconds,
        });
    }
    let sq: f64 = rows.iter().map(|r| (r.price - r.reference).powi(2)).sum();
    let rmse = if rows.is_empty() {
        0.0
    } else {
        (sq / rows.len() as f64).sqrt()
    };
    Ok(RmseReport { rows, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(k: f64, t: f64) -> QuadSpec {
        QuadSpec::new(Payoff::Call { strike: k }, 1.0, t)
    }

    #[test]
    fn grid_nodes_hit_ends() {
        let g = UniformGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let w = g.simpson_weights().unwrap();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert!(UniformGrid::new(0.0, 1.0, 4)
            .unwrap()
            .simpson_weights()
            .is_err());
        assert!(UniformGrid::new(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let g = UniformGrid::new(0.0, 2.0, 3).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| x * x * x - x).collect();
        assert!((simpson_sum(&g, &f).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn unit_payoff_prices_mass() {
        let spec = QuadSpec::new(Payoff::Unit, 1.0, 0.7);
        let p = price_1d(&DensityEngine::Gaussian, &spec, 0.3).unwrap();
        assert!((p - 1.0).abs() < 1e-6);
    }

    #[test]
    fn atm_call_matches_black_scholes() {
        let p = price_1d(&DensityEngine::Gaussian, &call(1.0, 1.0), 0.25).unwrap();
        assert!((p - 0.09947).abs() < 5e-5, "{p}");
        assert!((p - bs_price(1.0, 1.0, 0.25, 1.0, OptionKind::Call)).abs() < 1e-6);
    }

    #[test]
    fn put_call_parity() {
        for k in [0.8, 1.0, 1.15] {
            let c = price_1d(&DensityEngine::Gaussian, &call(k, 0.5), 0.2).unwrap();
            let put = QuadSpec::new(Payoff::Put { strike: k }, 1.0, 0.5);
            let p = price_1d(&DensityEngine::Gaussian, &put, 0.2).unwrap();
            assert!((c - p - (1.0 - k)).abs() < 1e-5);
        }
    }

    #[test]
    fn refinement_and_truncation_are_stable() {
        for (k, s, t) in [(0.9, 0.2, 0.5), (1.1, 0.35, 1.0), (1.0, 0.1, 0.1)] {
            let base = price_1d(&DensityEngine::Gaussian, &call(k, t), s).unwrap();
            let mut fine = call(k, t);
            fine.mesh_points = 101;
            let pf = price_1d(&DensityEngine::Gaussian, &fine, s).unwrap();
            assert!((pf - base).abs() <= 1e-6, "mesh {base} {pf}");
            // fine mesh so only the truncation differs
            let mut narrow = call(k, t);
            narrow.mesh_points = 401;
            let pn = price_1d(&DensityEngine::Gaussian, &narrow, s).unwrap();
            let mut wide = narrow.clone();
            wide.truncation = Truncation::StdDevs { q: 8.0 };
            let pw = price_1d(&DensityEngine::Gaussian, &wide, s).unwrap();
            assert!((pw - pn).abs() <= 1e-7, "trunc {pn} {pw}");
        }
    }

    #[test]
    fn call_is_non_increasing_in_strike() {
        let mut prev = f64::INFINITY;
        for i in 0..41 {
            let k = 0.8 + 0.01 * i as f64;
            let p = price_1d(&DensityEngine::Gaussian, &call(k, 0.8), 0.3).unwrap();
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn tabulated_payoff_interpolates() {
        let p = Payoff::Tabulated {
            spots: vec![0.5, 1.0, 2.0],
            values: vec![0.0, 1.0, 3.0],
        };
        assert_eq!(p.eval(0.1), 0.0);
        assert_eq!(p.eval(0.75), 0.5);
        assert_eq!(p.eval(1.5), 2.0);
        assert_eq!(p.eval(9.0), 3.0);
    }

    #[test]
    fn spec_validation() {
        let mut s = call(1.0, 1.0);
        s.mesh_points = 50;
        assert!(s.validate().is_err());
        assert!(call(0.0, 1.0).validate().is_err());
        assert!(call(1.0, 0.0).validate().is_err());
    }

    #[test]
    fn rmse_against_itself_is_zero() {
        let cases = sample_cases(10, OptionKind::Call, 1);
        let r = rmse_report(
            &DensityEngine::Gaussian,
            &Reference::Engine(DensityEngine::Gaussian),
            &cases,
            51,
        )
        .unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.rows.len(), 10);
    }

    #[test]
    fn two_factor_network_on_separable_cdf() {
        // log-price Gaussian with variance sigma^2 tau, independent of a
        // terminal-variance factor with CDF Phi((z - 0.4) / 0.08)
        let model = PdeModel::heston_default();
        let t_end = model.terminal_time();
        let sigma = 0.3;
        let field = crate::net::FnField::new(9, move |p: &[f64]| {
            oracles::gbm_cdf(p[1], t_end - p[0], p[2], sigma)
                * oracles::norm_cdf((p[4] - 0.4) / 0.08)
        });
        let engine = DensityEngine::Network {
            field: &field,
            model: &model,
            config: DensityConfig::default(),
        };
        let params = heston_params(&model, 1.0, 0.2, 0.2, 0.0);
        let spec = call(1.05, 0.8);
        let p = price_2d(&engine, &spec, 0.2, &params, sigma).unwrap();
        let want = bs_price(1.0, 1.05, sigma, 0.8, OptionKind::Call);
        assert!((p - want).abs() < 1e-3, "{p} vs {want}");
    }

    #[test]
    fn two_factor_empirical_matches_payoff_mean() {
        let dynamics = oracles::HestonDynamics::Constant {
            kappa: 1.0,
            theta: 0.2,
            xi: 0.2,
            rho: 0.2,
        };
        let cfg = oracles::McConfig {
            paths: 100_000,
            ..Default::default()
        };
        let samples = oracles::heston_mc(0.0, 0.2, &dynamics, 1.0, &cfg).unwrap();
        let (mean, se) = oracles::mc_price(&samples.x, |s| (s - 1.0).max(0.0)).unwrap();
        let mut spec = call(1.0, 1.0);
        spec.mesh_points = 201;
        let p = price_2d(
            &DensityEngine::Empirical { samples: &samples },
            &spec,
            0.2,
            &[],
            0.2f64.sqrt(),
        )
        .unwrap();
        assert!((p - mean).abs() < 0.01 + 3.0 * se, "{p} vs {mean}");
    }
}
