//! Gradient-based optimisers with a common step interface.
//!
//! `Sgd` and `Adam` update the parameters directly. `LinBreg` and `AdaBreg`
//! update a dual variable `v` and map it back through the proximal operator
//! of the regulariser, `θ = prox(v)`, which is what keeps most rows at zero
//! and lets the network grow from a sparse start.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Mat};
use crate::model::{self, MlpAutoencoder, Params};
use crate::prox::{prox_params, reg_value, RegSpec};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    LinBreg,
    AdaBreg,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::LinBreg,
        OptimizerKind::AdaBreg,
    ];

    pub fn is_bregman(self) -> bool {
        matches!(self, OptimizerKind::LinBreg | OptimizerKind::AdaBreg)
    }

    pub fn uses_moments(self) -> bool {
        matches!(self, OptimizerKind::Adam | OptimizerKind::AdaBreg)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::LinBreg => "linbreg",
            OptimizerKind::AdaBreg => "adabreg",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_hat")]
    pub eps_hat: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_hat() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, eta: f64) -> Self {
        OptimizerConfig {
            kind,
            eta,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_hat: default_eps_hat(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.eta)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps_hat > 0.0) {
            return Err(Error::invalid("eps_hat must be positive"));
        }
        Ok(())
    }
}

/// Mutable optimiser state for one training run.
#[derive(Clone, Debug)]
pub struct OptState {
    pub config: OptimizerConfig,
    /// Dual variable `v` (Bregman kinds only).
    pub dual: Option<Params>,
    /// First and second moment estimates (Adam kinds only).
    pub m: Option<Params>,
    pub s: Option<Params>,
    pub step_count: u64,
}

impl OptState {
    /// Fresh state for `params`; the dual of Bregman kinds is initialised so
    /// that `prox(v₀) = params`.
    pub fn new(config: OptimizerConfig, spec: &RegSpec, params: &Params) -> Result<Self> {
        config.validate()?;
        let dual = if config.kind.is_bregman() {
            Some(init_dual(spec, params)?)
        } else {
            None
        };
        let (m, s) = if config.kind.uses_moments() {
            (Some(Params::zeros_like(params)), Some(Params::zeros_like(params)))
        } else {
            (None, None)
        };
        Ok(OptState {
            config,
            dual,
            m,
            s,
            step_count: 0,
        })
    }
}

/// A dual variable whose proximal image is exactly `params`.
pub fn init_dual(spec: &RegSpec, params: &Params) -> Result<Params> {
    if spec.lambda == 0.0 {
        return Ok(params.clone());
    }
    let mut dual = params.clone();
    for (k, w) in dual.weights.iter_mut().enumerate() {
        let layer = k + 1;
        if layer == spec.nuclear_layer {
            let mut f = svd(w)?;
            f.s.iter_mut()
                .for_each(|s| *s = if *s > 0.0 { *s + spec.lambda } else { 0.0 });
            *w = f.reconstruct(None);
        } else {
            let tau = spec.row_threshold(layer);
            for i in 0..w.rows() {
                let norm = w.row_norm(i);
                if norm > 0.0 {
                    w.scale_row(i, 1.0 + tau / norm);
                }
            }
        }
    }
    Ok(dual)
}

fn check_step(target: &Params, grads: &Params) -> Result<()> {
    target.check_same_shape(grads, "gradient")?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

fn ensure_finite(p: &Params, what: &str) -> Result<()> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} after update")))
    }
}

/// Writes the bias-corrected Adam direction `m̂ / (√ŝ + ε̂)` into `grads`.
fn adam_direction(state: &mut OptState, grads: &mut Params) -> Result<()> {
    let c = state.config;
    let t = state.step_count as i32 + 1;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let m = state.m.as_mut().ok_or_else(|| Error::invalid("Adam state without moments"))?;
    let s = state.s.as_mut().ok_or_else(|| Error::invalid("Adam state without moments"))?;
    m.check_same_shape(grads, "first moment")?;
    s.check_same_shape(grads, "second moment")?;
    for ((mb, sb), gb) in m.blocks_mut().zip(s.blocks_mut()).zip(grads.blocks_mut()) {
        for ((mv, sv), g) in mb.iter_mut().zip(sb.iter_mut()).zip(gb.iter_mut()) {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * *g;
            *sv = c.beta2 * *sv + (1.0 - c.beta2) * *g * *g;
            *g = (*mv / bc1) / ((*sv / bc2).sqrt() + c.eps_hat);
        }
    }
    Ok(())
}

/// `θ ← θ − η g`.
pub fn sgd_step(state: &mut OptState, params: &mut Params, grads: &Params) -> Result<()> {
    check_step(params, grads)?;
    params.axpy(-state.config.eta, grads)?;
    ensure_finite(params, "parameters")?;
    state.step_count += 1;
    Ok(())
}

/// `θ ← θ − η m̂ / (√ŝ + ε̂)`.
pub fn adam_step(state: &mut OptState, params: &mut Params, grads: &Params) -> Result<()> {
    check_step(params, grads)?;
    let mut dir = grads.clone();
    adam_direction(state, &mut dir)?;
    params.axpy(-state.config.eta, &dir)?;
    ensure_finite(params, "parameters")?;
    state.step_count += 1;
    Ok(())
}

fn bregman_update(
    state: &mut OptState,
    spec: &RegSpec,
    params: &mut Params,
    direction: &Params,
) -> Result<()> {
    let eta = state.config.eta;
    let dual = state
        .dual
        .as_mut()
        .ok_or_else(|| Error::invalid("Bregman step without a dual variable"))?;
    dual.axpy(-eta, direction)?;
    ensure_finite(dual, "dual variable")?;
    *params = prox_params(spec, dual)?;
    state.step_count += 1;
    Ok(())
}

/// `v ← v − η g`, `θ ← prox(v)`.
pub fn linbreg_step(
    state: &mut OptState,
    spec: &RegSpec,
    params: &mut Params,
    grads: &Params,
) -> Result<()> {
    check_step(params, grads)?;
    bregman_update(state, spec, params, grads)
}

/// `v ← v − η m̂ / (√ŝ + ε̂)`, `θ ← prox(v)`.
pub fn adabreg_step(
    state: &mut OptState,
    spec: &RegSpec,
    params: &mut Params,
    grads: &Params,
) -> Result<()> {
    check_step(params, grads)?;
    let mut dir = grads.clone();
    adam_direction(state, &mut dir)?;
    bregman_update(state, spec, params, &dir)
}

/// Dispatches on the configured optimiser kind.
pub fn step(state: &mut OptState, spec: &RegSpec, params: &mut Params, grads: &Params) -> Result<()> {
    match state.config.kind {
        OptimizerKind::Sgd => sgd_step(state, params, grads),
        OptimizerKind::Adam => adam_step(state, params, grads),
        OptimizerKind::LinBreg => linbreg_step(state, spec, params, grads),
        OptimizerKind::AdaBreg => adabreg_step(state, spec, params, grads),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fill `wall_time_s` in the metrics; off by default so that runs are
    /// bit-for-bit reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub reg_value: f64,
    pub weight_density: f64,
    pub nonzero_weights: usize,
    pub latent_dim: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Error {
        Error::Divergence {
            epoch: d.epoch,
            batch: d.batch,
            loss: d.loss,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest test loss seen (the input model when no
    /// epoch completed).
    pub best: MlpAutoencoder,
    /// Epoch the best model comes from; 0 means the initial model.
    pub best_epoch: usize,
    /// Model after the last completed step.
    pub last: MlpAutoencoder,
    pub metrics: Vec<MetricsRecord>,
    pub divergence: Option<Divergence>,
}

/// Metrics of `model` without training, used for the initial state.
pub fn evaluate(
    model: &MlpAutoencoder,
    spec: &RegSpec,
    train: &Mat,
    test: &Mat,
    epoch: usize,
) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        epoch,
        train_loss: model::mean_loss(model, train)?,
        test_loss: model::mean_loss(model, test)?,
        reg_value: reg_value(spec, &model.params)?,
        weight_density: model.density(),
        nonzero_weights: model.count_nonzero_weights(),
        latent_dim: model.effective_latent_dim(),
        wall_time_s: 0.0,
    })
}

/// Mini-batch training loop.
///
/// Snapshots are columns of `train`. Each epoch visits them in a fresh
/// seeded order; the last batch of an epoch may be smaller. The reported
/// train loss is the size-weighted mean of the batch losses, the test loss
/// is evaluated after the epoch. A non-finite loss or update stops training
/// and is reported in [`TrainOutcome::divergence`].
pub fn train(
    model: MlpAutoencoder,
    spec: &RegSpec,
    config: &TrainConfig,
    train: &Mat,
    test: &Mat,
) -> Result<TrainOutcome> {
    if train.cols() == 0 || test.cols() == 0 {
        return Err(Error::invalid("training needs nonempty train and test sets"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let dim = model.arch().input_dim();
    for (name, set) in [("train", train), ("test", test)] {
        if set.rows() != dim {
            return Err(Error::DimensionMismatch {
                op: if name == "train" { "train set" } else { "test set" },
                left: (dim, set.cols()),
                right: set.shape(),
            });
        }
    }

    let started = Instant::now();
    let mut state = OptState::new(config.optimizer, spec, &model.params)?;
    let mut rng = stream_rng(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train.cols()).collect();
    let mut current = model.clone();
    let mut best = model;
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut divergence = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_no, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = train.select_cols(idx);
            let stop = |loss: f64| Divergence {
                epoch,
                batch: batch_no,
                loss,
            };
            let (loss, grads) = match model::loss_and_grad(&current, &batch) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    let loss = model::mean_loss(&current, &batch).unwrap_or(f64::NAN);
                    divergence = Some(stop(loss));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let mut next = current.params.clone();
            match step(&mut state, spec, &mut next, &grads) {
                Ok(()) => current.params = next,
                Err(Error::NonFinite(_)) => {
                    divergence = Some(stop(loss));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss * idx.len() as f64;
        }

        let mut record = evaluate(&current, spec, train, test, epoch)?;
        record.train_loss = loss_sum / train.cols() as f64;
        if config.record_wall_time {
            record.wall_time_s = started.elapsed().as_secs_f64();
        }
        if !record.test_loss.is_finite() {
            divergence = Some(Divergence {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                loss: record.test_loss,
            });
            metrics.push(record);
            break;
        }
        if record.test_loss < best_loss {
            best_loss = record.test_loss;
            best_epoch = epoch;
            best = current.clone();
        }
        metrics.push(record);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: current,
        metrics,
        divergence,
    })
}
