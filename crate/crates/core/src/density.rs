//! Transition densities from a learned CDF by central differencing in the
//! terminal coordinates.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::net::ScalarField;
use crate::pde::PdeModel;

const Y: usize = 2;
const Z: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Differencing step in `y` (and `z`).
    pub delta: f64,
    /// Floor negative densities at zero.
    pub clamp_negative: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            delta: 0.005,
            clamp_negative: true,
        }
    }
}

/// Evaluates densities of a CDF field defined on a model's input layout.
///
/// Queries are checked against the model domain, including the `+-delta`
/// shifts. Negative raw values are counted, and floored when clamping is on.
pub struct DensityEvaluator<'a> {
    field: &'a dyn ScalarField,
    model: &'a PdeModel,
    config: DensityConfig,
    clamps: AtomicUsize,
}

impl<'a> DensityEvaluator<'a> {
    pub fn new(field: &'a dyn ScalarField, model: &'a PdeModel, config: DensityConfig) -> Self {
        if !(0.001..=0.01).contains(&config.delta) {
            log::warn!(
                "density step {} outside the usual range [0.001, 0.01]",
                config.delta
            );
        }
        DensityEvaluator {
            field,
            model,
            config,
            clamps: AtomicUsize::new(0),
        }
    }

    /// Number of negative raw densities seen so far.
    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn config(&self) -> DensityConfig {
        self.config
    }

    /// `dC/dy` at `(t, x, y, sigma)` of a one-factor model.
    pub fn density_1d(&self, t: f64, x: f64, y: f64, sigma: f64) -> Result<f64> {
        Ok(self.density_batch(&[vec![t, x, y, sigma]])?[0])
    }

    /// `d2C/dydz` at `(t, x, v, y, z)`; `params` are the inputs after `z`.
    pub fn density_2d(
        &self,
        t: f64,
        x: f64,
        v: f64,
        y: f64,
        z: f64,
        params: &[f64],
    ) -> Result<f64> {
        let mut p = vec![t, x, y, v, z];
        p.extend_from_slice(params);
        Ok(self.density_batch(&[p])?[0])
    }

    /// Densities at full input rows in the model layout, using one batched
    /// network evaluation.
    pub fn density_batch(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let dim = self.model.input_dim();
        if self.field.input_dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: self.field.input_dim(),
            });
        }
        let d = self.config.delta;
        let shifts: &[(f64, f64)] = if self.model.is_two_factor() {
            &[(d, d), (d, -d), (-d, d), (-d, -d)]
        } else {
            &[(d, 0.0), (-d, 0.0)]
        };
        let mut flat = Vec::with_capacity(points.len() * shifts.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: p.len(),
                });
            }
            for &(dy, dz) in shifts {
                let mut q = p.clone();
                q[Y] += dy;
                if self.model.is_two_factor() {
                    q[Z] += dz;
                }
                self.model.domain.check(&q)?;
                flat.extend_from_slice(&q);
            }
        }
        if points.is_empty() {
            return Ok(vec![]);
        }
        let vals = self
            .field
            .eval_points(&Tensor::new(vec![points.len() * shifts.len(), dim], flat)?);
        let out = vals
            .chunks(shifts.len())
            .map(|c| {
                let raw = if c.len() == 4 {
                    (c[0] - c[1] - c[2] + c[3]) / (4.0 * d * d)
                } else {
                    (c[0] - c[1]) / (2.0 * d)
                };
                if raw < 0.0 {
                    self.clamps.fetch_add(1, Ordering::Relaxed);
                    if self.config.clamp_negative {
                        return 0.0;
                    }
                }
                raw
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::net::FnField;
    use crate::oracles::{gaussian_density, gbm_cdf, norm_cdf, norm_pdf};

    fn gbm_hook(model: &PdeModel) -> FnField<impl Fn(&[f64]) -> f64> {
        let t_end = model.terminal_time();
        FnField::new(4, move |p: &[f64]| gbm_cdf(p[1], t_end - p[0], p[2], p[3]))
    }

    #[test]
    fn exact_cdf_gives_gaussian_peak() {
        let model = PdeModel::gbm_default();
        let hook = gbm_hook(&model);
        let eval = DensityEvaluator::new(&hook, &model, DensityConfig::default());
        let t = model.terminal_time() - 1.0;
        let y = 0.03125 - 0.0625;
        let p = eval.density_1d(t, 0.0, y + 0.0, 0.25).unwrap();
        let exact = gaussian_density(0.0, 1.0, y, 0.25);
        assert!((exact - 1.0 / (0.25 * (2.0 * PI).sqrt())).abs() < 1e-12);
        assert!((p - exact).abs() < 1e-3, "{p} vs {exact}");
        let tail = eval.density_1d(t, 0.0, 5.0 * 0.25, 0.25).unwrap();
        assert!(tail <= 1e-5);
        assert_eq!(eval.clamp_count(), 0);
    }

    #[test]
    fn constant_field_has_zero_density() {
        let model = PdeModel::gbm_default();
        let hook = FnField::new(4, |_: &[f64]| 0.7);
        let eval = DensityEvaluator::new(&hook, &model, DensityConfig::default());
        assert_eq!(eval.density_1d(0.5, 0.0, 0.1, 0.2).unwrap(), 0.0);
        let model2 = PdeModel::td_heston_default();
        let hook2 = FnField::new(5, |_: &[f64]| 0.7);
        let eval2 = DensityEvaluator::new(&hook2, &model2, DensityConfig::default());
        assert_eq!(eval2.density_2d(0.5, 0.0, 0.1, 0.1, 0.2, &[]).unwrap(), 0.0);
    }

    #[test]
    fn product_cdf_gives_product_density() {
        let model = PdeModel::td_heston_default();
        let hook = FnField::new(5, |p: &[f64]| norm_cdf(p[2]) * norm_cdf(p[4]));
        let eval = DensityEvaluator::new(&hook, &model, DensityConfig::default());
        let (y, z) = (0.3, 0.2);
        let p = eval.density_2d(0.1, 0.0, 0.1, y, z, &[]).unwrap();
        assert!((p - norm_pdf(y) * norm_pdf(z)).abs() < 1e-5);
    }

    #[test]
    fn decreasing_field_is_clamped_and_counted() {
        let model = PdeModel::td_heston_default();
        let hook = FnField::new(5, |p: &[f64]| -p[2] * p[4]);
        let eval = DensityEvaluator::new(&hook, &model, DensityConfig::default());
        assert_eq!(eval.density_2d(0.1, 0.0, 0.1, 0.3, 0.2, &[]).unwrap(), 0.0);
        assert_eq!(eval.clamp_count(), 1);
        let raw = DensityEvaluator::new(
            &hook,
            &model,
            DensityConfig {
                clamp_negative: false,
                ..Default::default()
            },
        );
        assert!(raw.density_2d(0.1, 0.0, 0.1, 0.3, 0.2, &[]).unwrap() < 0.0);
        assert_eq!(raw.clamp_count(), 1);
    }

    #[test]
    fn halving_delta_quarters_error() {
        let model = PdeModel::gbm_default();
        let hook = gbm_hook(&model);
        let t = model.terminal_time() - 0.5;
        let y = 0.2;
        let exact = gaussian_density(0.0, 0.5, y, 0.25);
        let err = |delta: f64| {
            let cfg = DensityConfig {
                delta,
                clamp_negative: true,
            };
            let e = DensityEvaluator::new(&hook, &model, cfg);
            (e.density_1d(t, 0.0, y, 0.25).unwrap() - exact).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn query_outside_domain_is_rejected() {
        let model = PdeModel::gbm_default();
        let hook = gbm_hook(&model);
        let eval = DensityEvaluator::new(&hook, &model, DensityConfig::default());
        match eval.density_1d(0.2, 0.0, 2.299, 0.25) {
            Err(Error::OutOfDomain { coord, .. }) => assert_eq!(coord, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
