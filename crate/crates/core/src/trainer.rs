//! The training loop: residual and terminal losses on sampled points,
//! reverse-mode gradients, ADAM with a piecewise-constant learning rate,
//! lowest-loss checkpointing and transfer onto a new domain.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::net::{build_network, NetworkParams, NetworkShape, ScalarField};
use crate::pde::{ModelKind, PdeModel};
use crate::sampler::{epoch_streams, sample_interior, sample_terminal, BatchPlan};

/// Learning rate by step: `pieces[i] = (last_step, rate)` applies while the
/// 1-based step count is at most `last_step`; `final_rate` applies beyond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub pieces: Vec<(u64, f64)>,
    pub final_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            pieces: vec![
                (5_000, 1e-4),
                (10_000, 5e-5),
                (20_000, 1e-5),
                (30_000, 5e-6),
                (40_000, 1e-6),
                (50_000, 5e-7),
                (100_000, 1e-7),
                (200_000, 5e-8),
            ],
            final_rate: 1e-8,
        }
    }
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule {
            pieces: vec![],
            final_rate: rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates: Vec<f64> = self
            .pieces
            .iter()
            .map(|p| p.1)
            .chain([self.final_rate])
            .collect();
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.pieces.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "learning-rate thresholds must be ascending".into(),
            ));
        }
        if rates.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(
                "learning rates must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }

    pub fn rate(&self, step: u64) -> f64 {
        self.pieces
            .iter()
            .find(|(last, _)| step <= *last)
            .map_or(self.final_rate, |p| p.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight on the residual loss; at least 1.
    pub lambda: f64,
    pub epochs: usize,
    pub batch: BatchPlan,
    pub lr_schedule: LrSchedule,
    pub fd_step: f64,
    /// Seeds the Xavier initialisation.
    pub seed: u64,
    pub width: usize,
    pub layers: usize,
    pub adam: AdamConfig,
    /// Stop after the first epoch whose loss falls below this.
    pub early_stop: Option<f64>,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            epochs: 100_000,
            batch: BatchPlan::default(),
            lr_schedule: LrSchedule::default(),
            fd_step: 1e-4,
            seed: 0,
            width: 50,
            layers: 3,
            adam: AdamConfig::default(),
            early_stop: None,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 1.0) {
            return Err(Error::Config(format!(
                "lambda must be at least 1, got {}",
                self.lambda
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config(format!(
                "fd_step must be positive, got {}",
                self.fd_step
            )));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        self.batch.validate()?;
        self.lr_schedule.validate()
    }

    pub fn shape(&self, model: &PdeModel) -> Result<NetworkShape> {
        NetworkShape::new(model.input_dim(), self.width, self.layers)
    }

    /// SHA-256 of the model and configuration, hex encoded.
    pub fn hash(&self, model: &PdeModel) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(model).expect("model serialises"));
        h.update(serde_json::to_vec(self).expect("config serialises"));
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: Losses,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub seconds: f64,
    pub config: TrainConfig,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,l1,l2,loss,alpha` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l1,l2,loss,alpha\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                r.epoch, r.losses.l1, r.losses.l2, r.losses.total, r.lr
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub best_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: PdeModel,
    pub params: NetworkParams,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn field(&self) -> &dyn ScalarField {
        &self.params
    }
}

/// Stencil rows, residual weights and terminal targets for one mini-batch.
pub struct BatchFeed {
    pub inputs: Tensor,
    pub weights: Vec<Tensor>,
    pub target: Tensor,
    pub interior: Tensor,
}

/// Lays out the network inputs: stencil offset `j` of every interior point
/// occupies rows `j*n .. (j+1)*n`, followed by the terminal points.
pub fn batch_feed(
    model: &PdeModel,
    interior: &Tensor,
    terminal: &Tensor,
    fd_step: f64,
) -> Result<BatchFeed> {
    let dim = model.input_dim();
    if interior.cols() != dim || terminal.cols() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: if interior.cols() != dim {
                interior.cols()
            } else {
                terminal.cols()
            },
        });
    }
    let stencil = model.stencil();
    let (n, m) = (interior.rows(), terminal.rows());
    let mut data = Vec::with_capacity((stencil.len() * n + m) * dim);
    for shifts in stencil {
        for r in 0..n {
            let start = data.len();
            data.extend_from_slice(interior.row(r));
            for &(c, s) in shifts.iter() {
                data[start + c] += s * fd_step;
            }
        }
    }
    data.extend_from_slice(terminal.data());
    let mut weights = vec![vec![0.0; n]; stencil.len()];
    for r in 0..n {
        for (j, w) in model
            .stencil_weights(interior.row(r), fd_step)?
            .into_iter()
            .enumerate()
        {
            weights[j][r] = w;
        }
    }
    let target = (0..m).map(|r| model.terminal(terminal.row(r))).collect();
    Ok(BatchFeed {
        inputs: Tensor::new(vec![stencil.len() * n + m, dim], data)?,
        weights: weights.into_iter().map(Tensor::column).collect(),
        target: Tensor::column(target),
        interior: interior.clone(),
    })
}

fn reduce_losses(field_vals: &[f64], feed: &BatchFeed, lambda: f64) -> Result<Losses> {
    let n = feed.interior.rows();
    let m = feed.target.rows();
    let mut l1 = 0.0;
    for r in 0..n {
        let res: f64 = feed
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| w.data()[r] * field_vals[j * n + r])
            .sum();
        if !res.is_finite() {
            return Err(Error::NonFiniteResidual {
                point: feed.interior.row(r).to_vec(),
            });
        }
        l1 += res * res;
    }
    let off = feed.weights.len() * n;
    let l2: f64 = (0..m)
        .map(|r| (field_vals[off + r] - feed.target.data()[r]).powi(2))
        .sum();
    let (l1, l2) = (l1 / n as f64, l2 / m as f64);
    Ok(Losses {
        l1,
        l2,
        total: lambda * l1 + l2,
    })
}

/// `L1 = mean residual^2` over `interior`, `L2 = mean (f - indicator)^2`
/// over `terminal`, `L = lambda L1 + L2`, with finite-difference input
/// derivatives of step `fd_step`.
pub fn minibatch_loss(
    model: &PdeModel,
    field: &dyn ScalarField,
    interior: &Tensor,
    terminal: &Tensor,
    lambda: f64,
    fd_step: f64,
) -> Result<Losses> {
    let feed = batch_feed(model, interior, terminal, fd_step)?;
    let vals = field.eval_points(&feed.inputs);
    reduce_losses(&vals, &feed, lambda)
}

/// The loss recorded once on a tape for a fixed batch shape.
pub(crate) struct LossGraph {
    tape: Tape,
    residual: Var,
    l1: Var,
    l2: Var,
    total: Var,
}

impl LossGraph {
    pub(crate) fn new(
        shape: NetworkShape,
        stencil_len: usize,
        n: usize,
        m: usize,
        lambda: f64,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.input(stencil_len * n + m, shape.input_dim);
        let weights: Vec<Var> = (0..stencil_len).map(|_| tape.input(n, 1)).collect();
        let target = tape.input(m, 1);
        let (_, out) = build_network(&mut tape, x, shape)?;
        let mut residual = None;
        for (j, w) in weights.iter().enumerate() {
            let vals = tape.rows(out, j * n, n)?;
            let term = tape.mul(*w, vals)?;
            residual = Some(match residual {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let residual = residual.expect("non-empty stencil");
        let sq = tape.square(residual)?;
        let l1 = tape.mean(sq)?;
        let term_vals = tape.rows(out, stencil_len * n, m)?;
        let diff = tape.sub(term_vals, target)?;
        let sq = tape.square(diff)?;
        let l2 = tape.mean(sq)?;
        let weighted = tape.scale(l1, lambda)?;
        let total = tape.add(weighted, l2)?;
        Ok(LossGraph {
            tape,
            residual,
            l1,
            l2,
            total,
        })
    }

    pub(crate) fn forward(&mut self, feed: &BatchFeed, params: &NetworkParams) -> Result<Losses> {
        let mut inputs: Vec<&Tensor> = vec![&feed.inputs];
        inputs.extend(feed.weights.iter());
        inputs.push(&feed.target);
        let blocks: Vec<&Tensor> = params.blocks().iter().collect();
        self.tape.forward(&inputs, &blocks)?;
        let res = self.tape.value(self.residual);
        if let Some(r) = res.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual {
                point: feed.interior.row(r).to_vec(),
            });
        }
        let scalar = |v: Var| self.tape.value(v).data()[0];
        Ok(Losses {
            l1: scalar(self.l1),
            l2: scalar(self.l2),
            total: scalar(self.total),
        })
    }

    pub(crate) fn gradients(&mut self) -> Result<Vec<Tensor>> {
        self.tape.backward(self.total, 1.0)
    }
}

/// Trains a freshly Xavier-initialised network.
pub fn train(model: &PdeModel, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    let params = NetworkParams::init_xavier(config.shape(model)?, config.seed);
    run(model, params, config)
}

/// Continues training `base` on `model`, whose layout must match.
///
/// For time-homogeneous models the time input is shifted so that both
/// networks agree on time to maturity when the terminal times differ.
pub fn transfer(
    model: &PdeModel,
    base: &TrainedModel,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if model.layout() != base.model.layout() {
        return Err(Error::LayoutMismatch {
            expected: base.model.layout().iter().map(|s| s.to_string()).collect(),
            found: model.domain.names(),
        });
    }
    let mut params = base.params.clone();
    let homogeneous = matches!(model.kind, ModelKind::Gbm | ModelKind::Heston);
    let shift = base.model.terminal_time() - model.terminal_time();
    if homogeneous && shift != 0.0 {
        // keep time-to-maturity aligned: new t sees the old t + shift
        params.shift_input(0, shift)?;
    }
    run(model, params, config)
}

fn run(
    model: &PdeModel,
    mut params: NetworkParams,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    if params.shape().input_dim != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            found: params.shape().input_dim,
        });
    }
    let start = Instant::now();
    let plan = config.batch;
    let bs = plan.batch_size();
    let stencil_len = model.stencil().len();
    let mut graph = LossGraph::new(params.shape(), stencil_len, bs, bs, config.lambda)?;
    let mut adam = AdamState::new(config.adam, params.blocks());
    let mut best = params.clone();
    let mut best_loss: Option<f64> = None;
    let mut records = Vec::with_capacity(config.epochs);
    let mut best_epoch = None;
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        let mut streams = epoch_streams(plan.seed, epoch as u64);
        let mut feeds = Vec::with_capacity(plan.minibatches_per_epoch);
        let mut lr = config.lr_schedule.rate(step + 1);
        for _ in 0..plan.minibatches_per_epoch {
            let interior = sample_interior(model, bs, &mut streams.interior)?;
            let terminal = sample_terminal(model, bs, &mut streams.terminal)?;
            let feed = batch_feed(model, &interior, &terminal, config.fd_step)?;
            let losses = graph.forward(&feed, &params)?;
            if !losses.total.is_finite() || losses.total > config.divergence_threshold {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: losses.total,
                });
            }
            let grads = graph.gradients()?;
            step += 1;
            lr = config.lr_schedule.rate(step);
            let names = |i: usize| params.block_name(i);
            let mut blocks = params.blocks().to_vec();
            adam_step(&mut blocks, &grads, &mut adam, lr, &names)?;
            params.blocks_mut().clone_from_slice(&blocks);
            feeds.push(feed);
        }

        let mut sum = Losses::default();
        for feed in &feeds {
            let l = graph.forward(feed, &params)?;
            sum.l1 += l.l1;
            sum.l2 += l.l2;
            sum.total += l.total;
        }
        let k = feeds.len() as f64;
        let losses = Losses {
            l1: sum.l1 / k,
            l2: sum.l2 / k,
            total: sum.total / k,
        };
        if !losses.total.is_finite() || losses.total > config.divergence_threshold {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: losses.total,
            });
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            losses,
            lr,
        });
        if best_loss.is_none_or(|b| losses.total < b) {
            best_loss = Some(losses.total);
            best_epoch = Some(epoch + 1);
            best.clone_from(&params);
        }
        if (epoch + 1) % 100 == 0 {
            log::info!(
                "epoch {}: L1 {:.3e} L2 {:.3e} L {:.3e} lr {:.1e}",
                epoch + 1,
                losses.l1,
                losses.l2,
                losses.total,
                lr
            );
        }
        if config.early_stop.is_some_and(|s| losses.total < s) {
            break;
        }
    }

    let report = TrainReport {
        epochs: records,
        best_epoch,
        steps: step,
        seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    let trained = TrainedModel {
        model: model.clone(),
        params: best,
        provenance: Provenance {
            config_hash: config.hash(model),
            best_loss,
            best_epoch,
            epochs_run: report.epochs.len(),
        },
    };
    Ok((trained, report))
}

/// Re-draws the mini-batches of `epoch` (1-based) exactly as training did.
pub fn epoch_batches(
    model: &PdeModel,
    plan: &BatchPlan,
    epoch: usize,
) -> Result<Vec<(Tensor, Tensor)>> {
    if epoch == 0 {
        return Err(Error::Config("epochs are numbered from 1".into()));
    }
    let mut streams = epoch_streams(plan.seed, epoch as u64 - 1);
    (0..plan.minibatches_per_epoch)
        .map(|_| {
            let i = sample_interior(model, plan.batch_size(), &mut streams.interior)?;
            let t = sample_terminal(model, plan.batch_size(), &mut streams.terminal)?;
            Ok((i, t))
        })
        .collect()
}
