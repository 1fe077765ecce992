use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::network::Model;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::metrics::{multiscale_loss, multiscale_loss_backward, LossBreakdown, LossConfig, MetricAccumulator};
use crate::tensor::Tensor;

/// One training example: the (1, 6, H, W) network input and its
/// (1, 1, H, W) ground truth in meters, 0 where unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub gt: Tensor,
}

impl Sample {
    pub fn new(input: Tensor, gt: Tensor) -> Result<Self> {
        let (n, c, h, w) = input.nchw()?;
        if n != 1 || c != super::network::INPUT_CHANNELS {
            return Err(Error::shape("sample", &[1, super::network::INPUT_CHANNELS, h, w], input.shape()));
        }
        gt.expect_shape("sample", &[1, 1, h, w])?;
        Ok(Sample { input, gt })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub shuffle: bool,
    /// Emit a checkpoint every this many epochs; the final epoch always emits one.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            max_steps: None,
            shuffle: true,
            checkpoint_every: 1,
            seed: 0,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train_config", "batch_size must be at least 1"));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    /// RMSE of the refined output on the validation set, millimeters.
    pub val_rmse_mm: Option<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub steps: u64,
}

/// Progress notifications. Returning an error from the observer aborts
/// training with that error.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { step: u64, loss: &'a LossBreakdown },
    Epoch(&'a EpochReport),
    Checkpoint { epoch: usize, model: &'a Model },
}

/// Pooled RMSE (mm) of the deterministic prediction over `samples`.
pub fn validation_rmse(model: &Model, samples: &[Sample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut acc = MetricAccumulator::default();
    for s in samples {
        let pred = model.predict(&s.input)?;
        acc.add(pred.data(), s.gt.data())?;
    }
    Ok(Some(acc.finish()?.rmse_mm))
}

fn batch(samples: &[Sample], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<&Tensor> = idx.iter().map(|&i| &samples[i].input).collect();
    let gts: Vec<&Tensor> = idx.iter().map(|&i| &samples[i].gt).collect();
    Ok((Tensor::concat_batch(&inputs)?, Tensor::concat_batch(&gts)?))
}

/// Loss and parameter update for one batch. On a non-finite loss or
/// gradient nothing is modified.
fn train_step(
    model: &mut Model,
    state: &mut AdamWState,
    input: &Tensor,
    gt: &Tensor,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let (outputs, ctx) = model.forward(input, true, rng)?;
    let loss = multiscale_loss(&outputs, gt, &cfg.loss)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite { what: "training loss".into() });
    }
    let grads_out = multiscale_loss_backward(&outputs, gt, &cfg.loss)?;
    let grads = model.backward(&ctx, &grads_out)?;
    adamw_step(model.params_mut(), &grads, state, &cfg.optimizer)?;
    if !model.params().tensors().iter().all(Tensor::all_finite) {
        return Err(Error::NonFinite { what: "parameters after update".into() });
    }
    Ok(loss)
}

/// Minibatch AdamW on the multi-scale loss. Deterministic for a fixed
/// `cfg.seed`. If the loss or an update turns non-finite, the parameters
/// are restored to the last emitted checkpoint (or the initial weights)
/// and [`Error::Diverged`] is returned.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("train", "training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamWState::new(model.params());
    let mut last_good: ParamStore = model.params().clone();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut sum, mut count) = (0.0, 0u64);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let (input, gt) = batch(train_set, chunk)?;
            let step = report.steps + 1;
            match train_step(model, &mut state, &input, &gt, cfg, &mut rng) {
                Ok(loss) => {
                    log::debug!("step {step}: {loss}");
                    report.steps = step;
                    report.step_losses.push(loss.total);
                    sum += loss.total;
                    count += 1;
                    observer(TrainEvent::Step { step, loss: &loss })?;
                }
                Err(Error::NonFinite { what }) => {
                    log::error!("step {step}: {what} is not finite; restoring last good parameters");
                    model.params_mut().copy_from(&last_good)?;
                    return Err(Error::Diverged { step });
                }
                Err(e) => return Err(e),
            }
        }
        let epoch_report = EpochReport {
            epoch,
            mean_loss: if count > 0 { sum / count as f64 } else { f64::NAN },
            val_rmse_mm: validation_rmse(model, val_set)?,
            steps: count,
        };
        log::info!(
            "epoch {epoch}: mean loss {:.6}, val rmse {}",
            epoch_report.mean_loss,
            epoch_report.val_rmse_mm.map_or("n/a".to_string(), |r| format!("{r:.2} mm"))
        );
        observer(TrainEvent::Epoch(&epoch_report))?;
        report.epochs.push(epoch_report);
        let stop = cfg.max_steps.is_some_and(|m| report.steps >= m);
        let last = epoch == cfg.epochs || stop;
        if last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            observer(TrainEvent::Checkpoint { epoch, model })?;
            last_good.copy_from(model.params())?;
        }
        if stop {
            break 'epochs;
        }
    }
    Ok(report)
}
