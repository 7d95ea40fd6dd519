//! Uniform training points over the domain and the terminal slice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::pde::PdeModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchPlan {
    /// Interior points per epoch; the same number of terminal points is drawn.
    pub points_per_epoch: usize,
    pub minibatches_per_epoch: usize,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            points_per_epoch: 5000,
            minibatches_per_epoch: 5,
            seed: 0,
        }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_epoch == 0
            || self.minibatches_per_epoch == 0
            || !self
                .points_per_epoch
                .is_multiple_of(self.minibatches_per_epoch)
        {
            return Err(Error::Config(format!(
                "points_per_epoch ({}) must be a positive multiple of minibatches_per_epoch ({})",
                self.points_per_epoch, self.minibatches_per_epoch
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.points_per_epoch / self.minibatches_per_epoch
    }
}

/// Independent interior and terminal streams for one epoch.
pub struct EpochStreams {
    pub interior: ChaCha8Rng,
    pub terminal: ChaCha8Rng,
}

pub fn epoch_streams(seed: u64, epoch: u64) -> EpochStreams {
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        rng
    };
    EpochStreams {
        interior: stream(2 * epoch),
        terminal: stream(2 * epoch + 1),
    }
}

fn sample(model: &PdeModel, n: usize, rng: &mut impl Rng, pin_time: bool) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let dim = model.input_dim();
    let bounds: Vec<_> = (0..dim).map(|i| model.sampling_interval(i)).collect();
    let t_end = model.terminal_time();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for (i, iv) in bounds.iter().enumerate() {
            if i == 0 && pin_time {
                data.push(t_end);
            } else {
                data.push(iv.lo + rng.random::<f64>() * iv.width());
            }
        }
    }
    Tensor::new(vec![n, dim], data)
}

/// `n` i.i.d. uniform points over the domain, one per row.
pub fn sample_interior(model: &PdeModel, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    sample(model, n, rng, false)
}

/// `n` uniform points with the time input pinned to the terminal time.
pub fn sample_terminal(model: &PdeModel, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    sample(model, n, rng, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clt_check(pts: &Tensor, model: &PdeModel, skip_time: bool) {
        let n = pts.rows() as f64;
        for c in 0..pts.cols() {
            if skip_time && c == 0 {
                continue;
            }
            let iv = model.sampling_interval(c);
            let mean = (0..pts.rows()).map(|r| pts.get(r, c)).sum::<f64>() / n;
            let tol = 3.0 * iv.width() / (12.0 * n).sqrt();
            assert!(
                (mean - 0.5 * (iv.lo + iv.hi)).abs() <= tol,
                "coord {c}: {mean}"
            );
        }
    }

    #[test]
    fn interior_points_are_uniform_in_range() {
        let model = PdeModel::heston_default();
        let mut rng = epoch_streams(11, 0).interior;
        let pts = sample_interior(&model, 100_000, &mut rng).unwrap();
        for r in 0..pts.rows() {
            model.domain.check(pts.row(r)).unwrap();
            assert!(pts.get(r, 3) >= crate::pde::VARIANCE_EPS);
        }
        clt_check(&pts, &model, false);
    }

    #[test]
    fn terminal_points_pin_time() {
        let model = PdeModel::gbm_default();
        let mut rng = epoch_streams(11, 0).terminal;
        let pts = sample_terminal(&model, 100_000, &mut rng).unwrap();
        assert!((0..pts.rows()).all(|r| pts.get(r, 0) == model.terminal_time()));
        clt_check(&pts, &model, true);
    }

    #[test]
    fn same_seed_same_points() {
        let model = PdeModel::gbm_default();
        let a = sample_interior(&model, 50, &mut epoch_streams(3, 7).interior).unwrap();
        let b = sample_interior(&model, 50, &mut epoch_streams(3, 7).interior).unwrap();
        let c = sample_interior(&model, 50, &mut epoch_streams(3, 8).interior).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_points_rejected() {
        let model = PdeModel::gbm_default();
        let mut rng = epoch_streams(0, 0).terminal;
        assert!(sample_terminal(&model, 0, &mut rng).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(BatchPlan::default().validate().is_ok());
        assert_eq!(BatchPlan::default().batch_size(), 1000);
        let bad = BatchPlan {
            points_per_epoch: 1001,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sub_boxes_get_their_share() {
        // 10 x 10 boxes over (x, y), each 1% of the domain
        let model = PdeModel::gbm_default();
        let mut rng = epoch_streams(5, 0).interior;
        let n = 1_000_000;
        let pts = sample_interior(&model, n, &mut rng).unwrap();
        let (xi, yi) = (model.domain.interval(1), model.domain.interval(2));
        let mut counts = [0usize; 100];
        for r in 0..n {
            let bx = (((pts.get(r, 1) - xi.lo) / xi.width() * 10.0) as usize).min(9);
            let by = (((pts.get(r, 2) - yi.lo) / yi.width() * 10.0) as usize).min(9);
            counts[bx * 10 + by] += 1;
        }
        assert!(counts.iter().all(|&c| c as f64 >= 0.005 * n as f64));
    }
}
