//! Parametric backward-Kolmogorov problems for the CDF of the log-price.
//!
//! Each model fixes an input layout for the network, a sampling domain, the
//! residual operator `dC/dt + L C` and the indicator terminal condition. The
//! network time input runs over `[0, T]` with `T` the upper time bound of the
//! domain, so a maturity `tau` is read off at `t = T - tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the strip near `v = 0` excluded from sampling; the Heston
/// operator degenerates there.
pub const VARIANCE_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// One closed interval per input coordinate, in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub coords: Vec<Coord>,
}

impl Domain {
    pub fn new(coords: &[(&str, f64, f64)]) -> Result<Self> {
        let d = Domain {
            coords: coords
                .iter()
                .map(|(n, lo, hi)| Coord {
                    name: n.to_string(),
                    lo: *lo,
                    hi: *hi,
                })
                .collect(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.coords {
            if !(c.lo < c.hi) || !c.lo.is_finite() || !c.hi.is_finite() {
                return Err(Error::Config(format!(
                    "domain interval for {} must satisfy lo < hi, got [{}, {}]",
                    c.name, c.lo, c.hi
                )));
            }
        }
        match self.coords.first() {
            Some(c) if c.name == "t" && c.lo == 0.0 => Ok(()),
            _ => Err(Error::Config(
                "first domain coordinate must be time `t` starting at 0".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval::new(self.coords[i].lo, self.coords[i].hi)
    }

    pub fn terminal_time(&self) -> f64 {
        self.coords[0].hi
    }

    /// Replaces the bounds of one coordinate.
    pub fn with(mut self, name: &str, lo: f64, hi: f64) -> Result<Self> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::Config(format!("unknown coordinate `{name}`")))?;
        self.coords[i].lo = lo;
        self.coords[i].hi = hi;
        self.validate()?;
        Ok(self)
    }

    /// Errors on the first coordinate of `point` outside its interval.
    pub fn check(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: point.len(),
            });
        }
        for (c, &v) in self.coords.iter().zip(point) {
            // one-ulp-ish slack for stencil arithmetic landing on a bound
            let slack = 1e-12 * (1.0 + c.lo.abs().max(c.hi.abs()));
            if !(v >= c.lo - slack && v <= c.hi + slack) {
                return Err(Error::OutOfDomain {
                    coord: c.name.clone(),
                    value: v,
                    lo: c.lo,
                    hi: c.hi,
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant `theta_t`, `xi_t`, `rho_t` on left-open intervals:
/// interval `i` covers `(breakpoints[i], breakpoints[i+1]]`, and the first
/// interval also includes its left end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSchedule {
    pub breakpoints: Vec<f64>,
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
    pub rho: Vec<f64>,
}

impl PiecewiseSchedule {
    pub fn new(
        breakpoints: Vec<f64>,
        theta: Vec<f64>,
        xi: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let n = breakpoints.len().saturating_sub(1);
        if n == 0 || theta.len() != n || xi.len() != n || rho.len() != n {
            return Err(Error::Config(
                "schedule needs n+1 breakpoints and n values for each of theta, xi, rho".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "schedule breakpoints must be strictly ascending".into(),
            ));
        }
        if rho.iter().any(|r| r.abs() > 1.0) || theta.iter().chain(&xi).any(|v| *v < 0.0) {
            return Err(Error::Config("schedule values out of range".into()));
        }
        Ok(PiecewiseSchedule {
            breakpoints,
            theta,
            xi,
            rho,
        })
    }

    /// `theta = 0.04 + 0.0005 i`, `xi = 0.3 + 0.005 i`, `rho = -0.2 + 0.0035 i`
    /// on `[0, 0.25], (0.25, 0.5], (0.5, 1.0], (1.0, 1.2]`.
    pub fn benchmark() -> Self {
        PiecewiseSchedule {
            breakpoints: vec![0.0, 0.25, 0.5, 1.0, 1.2],
            theta: vec![0.04, 0.0405, 0.041, 0.0415],
            xi: vec![0.3, 0.305, 0.31, 0.315],
            rho: vec![-0.2, -0.1965, -0.193, -0.1895],
        }
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn interval_index(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::OutsideSchedule {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let n = self.theta.len();
        Ok((0..n)
            .find(|&i| t <= self.breakpoints[i + 1])
            .unwrap_or(n - 1))
    }

    /// `(theta, xi, rho)` in force at time `t`.
    pub fn lookup(&self, t: f64) -> Result<(f64, f64, f64)> {
        let i = self.interval_index(t)?;
        Ok((self.theta[i], self.xi[i], self.rho[i]))
    }
}

/// Finite-difference derivatives consumed by the residual operators.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Derivs {
    pub ft: f64,
    pub fx: f64,
    pub fv: f64,
    pub fxx: f64,
    pub fvv: f64,
    pub fxv: f64,
}

/// `dC/dt - (sigma^2/2) dC/dx + (sigma^2/2) d2C/dx2`.
pub fn gbm_residual(d: &Derivs, sigma: f64) -> f64 {
    let c = 0.5 * sigma * sigma;
    d.ft - c * d.fx + c * d.fxx
}

/// `dC/dt - (v/2) dC/dx + kappa(theta - v) dC/dv + (v/2) d2C/dx2
///  + (xi^2 v / 2) d2C/dv2 + rho xi v d2C/dxdv`.
pub fn heston_residual(
    d: &Derivs,
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    v: f64,
) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::NegativeVariance(v));
    }
    Ok(d.ft - 0.5 * v * d.fx
        + kappa * (theta - v) * d.fv
        + 0.5 * v * d.fxx
        + 0.5 * xi * xi * v * d.fvv
        + rho * xi * v * d.fxv)
}

/// Heston residual with `theta`, `xi`, `rho` taken from `schedule` at `t`.
pub fn td_heston_residual(
    d: &Derivs,
    schedule: &PiecewiseSchedule,
    kappa: f64,
    t: f64,
    v: f64,
) -> Result<f64> {
    let (theta, xi, rho) = schedule.lookup(t)?;
    heston_residual(d, kappa, theta, xi, rho, v)
}

pub fn terminal_indicator_1d(x: f64, y: f64) -> f64 {
    if x <= y {
        1.0
    } else {
        0.0
    }
}

pub fn terminal_indicator_2d(x: f64, v: f64, y: f64, z: f64) -> f64 {
    if x <= y && v <= z {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Gbm,
    Heston,
    TdHeston {
        kappa: f64,
        schedule: PiecewiseSchedule,
    },
}

const GBM_LAYOUT: &[&str] = &["t", "x", "y", "sigma"];
const HESTON_LAYOUT: &[&str] = &["t", "x", "y", "v", "z", "kappa", "theta", "xi", "rho"];
const TD_HESTON_LAYOUT: &[&str] = &["t", "x", "y", "v", "z"];

const T: usize = 0;
const X: usize = 1;
const Y: usize = 2;
const V: usize = 3;
const Z: usize = 4;

type Shift = &'static [(usize, f64)];

const GBM_STENCIL: &[Shift] = &[&[], &[(T, 1.0)], &[(T, -1.0)], &[(X, 1.0)], &[(X, -1.0)]];

const HESTON_STENCIL: &[Shift] = &[
    &[],
    &[(T, 1.0)],
    &[(T, -1.0)],
    &[(X, 1.0)],
    &[(X, -1.0)],
    &[(V, 1.0)],
    &[(V, -1.0)],
    &[(X, 1.0), (V, 1.0)],
    &[(X, 1.0), (V, -1.0)],
    &[(X, -1.0), (V, 1.0)],
    &[(X, -1.0), (V, -1.0)],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeModel {
    pub kind: ModelKind,
    pub domain: Domain,
}

impl PdeModel {
    pub fn new(kind: ModelKind, domain: Domain) -> Result<Self> {
        domain.validate()?;
        let model = PdeModel { kind, domain };
        let layout: Vec<String> = model.layout().iter().map(|s| s.to_string()).collect();
        if layout != model.domain.names() {
            return Err(Error::LayoutMismatch {
                expected: layout,
                found: model.domain.names(),
            });
        }
        if let ModelKind::TdHeston { schedule, .. } = &model.kind {
            let t_hi = model.domain.terminal_time();
            if schedule.start() > 0.0 || schedule.end() < t_hi {
                return Err(Error::Config(format!(
                    "schedule covers [{}, {}] but the domain needs [0, {t_hi}]",
                    schedule.start(),
                    schedule.end()
                )));
            }
        }
        for w in model.feller_warnings() {
            log::warn!("{w}");
        }
        Ok(model)
    }

    /// `x, y in [-2.3, 2.3]`, `sigma in [0, 0.6]`, `t in [0, 1.2]`.
    pub fn gbm_default() -> Self {
        let domain = Domain::new(&[
            ("t", 0.0, 1.2),
            ("x", -2.3, 2.3),
            ("y", -2.3, 2.3),
            ("sigma", 0.0, 0.6),
        ])
        .expect("static domain");
        PdeModel::new(ModelKind::Gbm, domain).expect("static model")
    }

    /// `x, y in [-3.5, 3.5]`, `v, z in [0, 1]`, `kappa in [0.8, 1.2]`,
    /// `theta in [0.1, 0.3]`, `xi in [0, 0.3]`, `rho in [-0.5, 0.5]`,
    /// `t in [0, 1.2]`.
    pub fn heston_default() -> Self {
        let domain = Domain::new(&[
            ("t", 0.0, 1.2),
            ("x", -3.5, 3.5),
            ("y", -3.5, 3.5),
            ("v", 0.0, 1.0),
            ("z", 0.0, 1.0),
            ("kappa", 0.8, 1.2),
            ("theta", 0.1, 0.3),
            ("xi", 0.0, 0.3),
            ("rho", -0.5, 0.5),
        ])
        .expect("static domain");
        PdeModel::new(ModelKind::Heston, domain).expect("static model")
    }

    /// `kappa = 3` with the benchmark schedule; `x, y in [-2.3, 2.3]`,
    /// `v, z in [0, 0.4]`, `t in [0, 1.2]`.
    pub fn td_heston_default() -> Self {
        let domain = Domain::new(&[
            ("t", 0.0, 1.2),
            ("x", -2.3, 2.3),
            ("y", -2.3, 2.3),
            ("v", 0.0, 0.4),
            ("z", 0.0, 0.4),
        ])
        .expect("static domain");
        let kind = ModelKind::TdHeston {
            kappa: 3.0,
            schedule: PiecewiseSchedule::benchmark(),
        };
        PdeModel::new(kind, domain).expect("static model")
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Gbm => "gbm",
            ModelKind::Heston => "heston",
            ModelKind::TdHeston { .. } => "td_heston",
        }
    }

    pub fn layout(&self) -> &'static [&'static str] {
        match self.kind {
            ModelKind::Gbm => GBM_LAYOUT,
            ModelKind::Heston => HESTON_LAYOUT,
            ModelKind::TdHeston { .. } => TD_HESTON_LAYOUT,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layout().len()
    }

    pub fn terminal_time(&self) -> f64 {
        self.domain.terminal_time()
    }

    pub fn is_two_factor(&self) -> bool {
        !matches!(self.kind, ModelKind::Gbm)
    }

    /// Same model with a different domain; the layout must not change.
    pub fn with_domain(&self, domain: Domain) -> Result<Self> {
        PdeModel::new(self.kind.clone(), domain)
    }

    /// Sampling bounds of coordinate `i`; excludes the variance strip.
    pub fn sampling_interval(&self, i: usize) -> Interval {
        let mut iv = self.domain.interval(i);
        if self.is_two_factor() && i == V && iv.lo < VARIANCE_EPS {
            iv.lo = VARIANCE_EPS.min(iv.hi);
        }
        iv
    }

    pub fn feller_warnings(&self) -> Vec<String> {
        match &self.kind {
            ModelKind::Gbm => vec![],
            ModelKind::Heston => {
                let d = &self.domain;
                let (k, th, xi) = (d.interval(5), d.interval(6), d.interval(7));
                if 2.0 * k.lo * th.lo < xi.hi * xi.hi {
                    vec![format!(
                        "Feller condition 2*kappa*theta >= xi^2 fails on part of the domain (2*{}*{} < {}^2)",
                        k.lo, th.lo, xi.hi
                    )]
                } else {
                    vec![]
                }
            }
            ModelKind::TdHeston { kappa, schedule } => schedule
                .theta
                .iter()
                .zip(&schedule.xi)
                .enumerate()
                .filter(|(_, (th, xi))| 2.0 * kappa * **th < **xi * **xi)
                .map(|(i, (th, xi))| {
                    format!(
                        "Feller condition fails on schedule interval {i}: 2*{kappa}*{th} < {xi}^2"
                    )
                })
                .collect(),
        }
    }

    /// Offsets, in units of the step, of the points each residual needs.
    /// The first entry is always the centre.
    pub fn stencil(&self) -> &'static [&'static [(usize, f64)]] {
        match self.kind {
            ModelKind::Gbm => GBM_STENCIL,
            _ => HESTON_STENCIL,
        }
    }

    pub fn derivs_from_stencil(&self, vals: &[f64], h: f64) -> Derivs {
        let first = |p: usize, m: usize| (vals[p] - vals[m]) / (2.0 * h);
        let second = |p: usize, m: usize| (vals[p] - 2.0 * vals[0] + vals[m]) / (h * h);
        let mut d = Derivs {
            ft: first(1, 2),
            fx: first(3, 4),
            fxx: second(3, 4),
            ..Default::default()
        };
        if self.is_two_factor() {
            d.fv = first(5, 6);
            d.fvv = second(5, 6);
            d.fxv = (vals[7] - vals[8] - vals[9] + vals[10]) / (4.0 * h * h);
        }
        d
    }

    /// Residual operator at `point` given input derivatives there.
    pub fn residual(&self, point: &[f64], d: &Derivs) -> Result<f64> {
        match &self.kind {
            ModelKind::Gbm => Ok(gbm_residual(d, point[3])),
            ModelKind::Heston => {
                heston_residual(d, point[5], point[6], point[7], point[8], point[V])
            }
            ModelKind::TdHeston { kappa, schedule } => {
                td_heston_residual(d, schedule, *kappa, point[T], point[V])
            }
        }
    }

    /// Weights `a_j` with `residual = sum_j a_j f(point + h * stencil_j)`.
    ///
    /// The residual is linear in the stencil values, so the weights are the
    /// residual applied to each unit vector.
    pub fn stencil_weights(&self, point: &[f64], h: f64) -> Result<Vec<f64>> {
        let n = self.stencil().len();
        let mut unit = vec![0.0; n];
        (0..n)
            .map(|j| {
                unit[j] = 1.0;
                let w = self.residual(point, &self.derivs_from_stencil(&unit, h));
                unit[j] = 0.0;
                w
            })
            .collect()
    }

    pub fn terminal(&self, point: &[f64]) -> f64 {
        if self.is_two_factor() {
            terminal_indicator_2d(point[X], point[V], point[Y], point[Z])
        } else {
            terminal_indicator_1d(point[X], point[Y])
        }
    }

    /// Exact CDF for the GBM model, `Phi((y - x + s^2 tau / 2) / (s sqrt(tau)))`
    /// with `tau = T - t`. `None` for other models.
    pub fn exact_cdf(&self, point: &[f64]) -> Option<f64> {
        match self.kind {
            ModelKind::Gbm => {
                let tau = self.terminal_time() - point[T];
                Some(crate::oracles::gbm_cdf(point[X], tau, point[Y], point[3]))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(ft: f64, fx: f64, fv: f64, fxx: f64, fvv: f64, fxv: f64) -> Derivs {
        Derivs {
            ft,
            fx,
            fv,
            fxx,
            fvv,
            fxv,
        }
    }

    #[test]
    fn gbm_residual_values() {
        assert_eq!(gbm_residual(&Derivs::default(), 0.3), 0.0);
        // f = x
        let r = gbm_residual(&d(0.0, 1.0, 0.0, 0.0, 0.0, 0.0), 0.2);
        assert!((r + 0.02).abs() < 1e-15);
    }

    #[test]
    fn heston_residual_values() {
        assert_eq!(
            heston_residual(&Derivs::default(), 1.0, 0.2, 0.3, 0.1, 0.2).unwrap(),
            0.0
        );
        // f = v
        let r = heston_residual(&d(0.0, 0.0, 1.0, 0.0, 0.0, 0.0), 1.0, 0.2, 0.3, 0.1, 0.3).unwrap();
        assert!((r + 0.1).abs() < 1e-15);
        // f = x v at x = 0.7: fx = v, fv = x, fxv = 1
        // -v^2/2 + kappa(theta - v) x + rho xi v = -0.02 + 0.105 + 0.02
        let (x, v, kappa, theta, xi, rho) = (0.7, 0.2, 1.5, 0.3, 0.2, 0.5);
        let r = heston_residual(&d(0.0, v, x, 0.0, 0.0, 1.0), kappa, theta, xi, rho, v).unwrap();
        assert!((r - 0.105).abs() < 1e-10);
        assert!(matches!(
            heston_residual(&Derivs::default(), 1.0, 0.2, 0.2, 0.0, -0.1),
            Err(Error::NegativeVariance(_))
        ));
    }

    #[test]
    fn schedule_lookup() {
        let s = PiecewiseSchedule::benchmark();
        let close = |a: (f64, f64, f64), b: (f64, f64, f64)| {
            (a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15 && (a.2 - b.2).abs() < 1e-15
        };
        assert!(close(s.lookup(0.1).unwrap(), (0.04, 0.3, -0.2)));
        assert!(close(s.lookup(0.3).unwrap(), (0.0405, 0.305, -0.1965)));
        assert!(close(s.lookup(0.6).unwrap(), (0.041, 0.31, -0.193)));
        assert!(close(s.lookup(1.1).unwrap(), (0.0415, 0.315, -0.1895)));
        // left-open intervals: a breakpoint belongs to the earlier interval
        assert_eq!(s.interval_index(0.25).unwrap(), 0);
        assert_eq!(s.interval_index(0.5).unwrap(), 1);
        assert_eq!(s.interval_index(1.0).unwrap(), 2);
        assert_eq!(s.interval_index(0.0).unwrap(), 0);
        assert_eq!(s.interval_index(1.2).unwrap(), 3);
        assert!(matches!(s.lookup(1.3), Err(Error::OutsideSchedule { .. })));
        assert!(s.lookup(-0.01).is_err());
    }

    #[test]
    fn td_residual_uses_schedule() {
        let s = PiecewiseSchedule::benchmark();
        assert_eq!(
            td_heston_residual(&Derivs::default(), &s, 3.0, 0.6, 0.1).unwrap(),
            0.0
        );
        let dv = d(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let r = td_heston_residual(&dv, &s, 3.0, 0.6, 0.1).unwrap();
        assert!((r - 3.0 * (0.041 - 0.1)).abs() < 1e-15);
        assert!(td_heston_residual(&dv, &s, 3.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn indicators_are_inclusive() {
        assert_eq!(terminal_indicator_1d(0.2, 0.2), 1.0);
        assert_eq!(terminal_indicator_1d(0.1, 0.0), 0.0);
        assert_eq!(terminal_indicator_2d(0.0, 0.1, 0.5, 0.05), 0.0);
        assert_eq!(terminal_indicator_2d(0.0, 0.05, 0.5, 0.05), 1.0);
    }

    #[test]
    fn exact_gbm_cdf_annihilates_residual_analytically() {
        // analytic derivatives of Phi(u), u = (y - x + s^2 tau/2) / (s sqrt(tau))
        let (x, y, s, tau) = (0.1, 0.3, 0.25, 0.7f64);
        let st = s * tau.sqrt();
        let u = (y - x + 0.5 * s * s * tau) / st;
        let phi = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let du_dx = -1.0 / st;
        // d/dt = -d/dtau
        let du_dtau = 0.5 * s * s / st - 0.5 * (y - x + 0.5 * s * s * tau) / (st * tau);
        let ft = -phi * du_dtau;
        let fx = phi * du_dx;
        let fxx = -u * phi * du_dx * du_dx;
        let r = gbm_residual(&d(ft, fx, 0.0, fxx, 0.0, 0.0), s);
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn stencil_weights_reproduce_residual() {
        let m = PdeModel::heston_default();
        let p = [0.4, 0.1, 0.2, 0.3, 0.5, 1.0, 0.2, 0.25, -0.3];
        let h = 1e-3;
        let vals: Vec<f64> = (0..11).map(|k| (k as f64 * 0.31).sin()).collect();
        let direct = m.residual(&p, &m.derivs_from_stencil(&vals, h)).unwrap();
        let w = m.stencil_weights(&p, h).unwrap();
        let via: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!(
            (direct - via).abs() < 1e-6 * direct.abs().max(1.0),
            "{direct} vs {via}"
        );
    }

    #[test]
    fn layout_must_match_domain() {
        let d = Domain::new(&[("t", 0.0, 1.0), ("x", -1.0, 1.0)]).unwrap();
        assert!(matches!(
            PdeModel::new(ModelKind::Gbm, d),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new(&[("t", 0.0, 1.0), ("x", 1.0, -1.0)]).is_err());
        assert!(Domain::new(&[("t", 0.1, 1.0)]).is_err());
        let d = Domain::new(&[("t", 0.0, 1.0), ("x", -1.0, 1.0)]).unwrap();
        assert!(d.check(&[0.5, 0.9]).is_ok());
        assert!(matches!(
            d.check(&[0.5, 1.5]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn variance_strip_is_excluded() {
        let m = PdeModel::heston_default();
        assert_eq!(m.sampling_interval(3).lo, VARIANCE_EPS);
        assert_eq!(m.sampling_interval(4).lo, 0.0);
        assert!(m.feller_warnings().is_empty());
        assert!(PdeModel::td_heston_default().feller_warnings().is_empty());
    }

    #[test]
    fn feller_violation_is_reported() {
        let d = PdeModel::heston_default()
            .domain
            .with("xi", 0.0, 1.0)
            .unwrap();
        let m = PdeModel::new(ModelKind::Heston, d).unwrap();
        assert_eq!(m.feller_warnings().len(), 1);
    }
}
