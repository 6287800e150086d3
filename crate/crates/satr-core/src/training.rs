//! Adam optimization of the joint objective with plateau learning-rate
//! decay and validation-based best-model selection.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::WindowedExample;
use crate::error::{Error, Result};
use crate::eval::predict_windows;
use crate::model::{self, ModelConfig, SatrParams};
use crate::tape::Gradients;
use crate::tensor::Tensor;
use crate::{derive_seed, LayerMode, SeededRng};

/// A validation loss must beat the best seen by more than this to count as
/// an improvement for the plateau scheduler.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

/// Training hyperparameters; defaults are the reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 80,
            batch_size: 64,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            plateau_factor: 5.0,
            plateau_patience: 3,
            lr_floor: 1e-6,
            seed: 42,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config(
                "need at least 1 epoch and a batch size of at least 2".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 || self.lr_floor <= 0.0 {
            return Err(Error::Config("rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if self.plateau_factor <= 1.0 || self.plateau_patience == 0 {
            return Err(Error::Config(
                "plateau factor must exceed 1 and patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter Adam accumulators plus the step counter and current rate.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &SatrParams, schedule: &TrainSchedule) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for name in params.learnable_names() {
            let shape = params.get(&name).unwrap().shape().to_vec();
            m.insert(name.clone(), Tensor::zeros(shape.clone()));
            v.insert(name, Tensor::zeros(shape));
        }
        OptimizerState {
            m,
            v,
            t: 0,
            learning_rate: schedule.learning_rate,
            beta1: schedule.beta1,
            beta2: schedule.beta2,
            epsilon: schedule.epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update on a single tensor.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adam_update_tensor(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let bias1 = 1.0 - beta1.powi(t as i32);
    let bias2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Advance every learnable parameter by one Adam step.
pub fn adam_step(params: &mut SatrParams, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    state.t += 1;
    let names = params.learnable_names();
    for name in names {
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let m = state.m.get_mut(&name).expect("state mirrors parameters");
        let v = state.v.get_mut(&name).expect("state mirrors parameters");
        let param = params.get_mut(&name).unwrap();
        adam_update_tensor(
            param.data_mut(),
            grad.data(),
            m.data_mut(),
            v.data_mut(),
            state.t,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
        );
    }
    Ok(())
}

/// New learning rate after observing the latest validation loss.
///
/// Replays the whole loss history: a decay fires when the best loss has not
/// improved (by more than [`IMPROVEMENT_THRESHOLD`]) for `patience`
/// consecutive epochs, and the patience counter resets after each decay.
pub fn plateau_update(
    history: &[f64],
    current_lr: f64,
    patience: usize,
    factor: f64,
    floor: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut since = 0usize;
    let mut fired_now = false;
    for &loss in history {
        fired_now = false;
        if loss < best - IMPROVEMENT_THRESHOLD {
            best = loss;
            since = 0;
        } else {
            since += 1;
            if since >= patience {
                fired_now = true;
                since = 0;
            }
        }
    }
    if fired_now {
        (current_lr / factor).max(floor)
    } else {
        current_lr
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_skill_accuracy: f64,
    pub val_task_accuracy: f64,
    pub learning_rate: f64,
    pub batches: usize,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was returned.
    pub best_epoch: usize,
}

impl TrainLog {
    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.epochs {
            out.push_str(&serde_json::to_string(record).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// The shuffled visit order for one epoch; a permutation of `0..n`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = SeededRng::seed_from_u64(derive_seed(seed, 0x0051_0000 + epoch as u64));
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// Stack windows into an `[N x T x C]` batch plus (skill, task) label pairs.
pub fn batch_of(windows: &[&WindowedExample]) -> (Tensor, Vec<(usize, usize)>) {
    let t = windows[0].frame.shape()[0];
    let c = windows[0].frame.shape()[1];
    let mut data = Vec::with_capacity(windows.len() * t * c);
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        data.extend_from_slice(w.frame.data());
        labels.push((w.skill.index(), w.task.index()));
    }
    (
        Tensor::from_vec(vec![windows.len(), t, c], data).expect("windows share extents"),
        labels,
    )
}

/// Inference-mode loss and per-head accuracy over a window set.
pub struct ValidationScore {
    pub loss: f64,
    pub skill_accuracy: f64,
    pub task_accuracy: f64,
}

pub fn evaluate_windows(params: &SatrParams, windows: &[WindowedExample]) -> Result<ValidationScore> {
    let predictions = predict_windows(params, windows)?;
    let labels: Vec<(usize, usize)> = windows
        .iter()
        .map(|w| (w.skill.index(), w.task.index()))
        .collect();
    let loss = model::joint_loss(&predictions, &labels)?;
    let mut skill_hits = 0usize;
    let mut task_hits = 0usize;
    for (pred, &(skill, task)) in predictions.iter().zip(&labels) {
        if pred.skill_label() == skill {
            skill_hits += 1;
        }
        if pred.task_label() == task {
            task_hits += 1;
        }
    }
    Ok(ValidationScore {
        loss,
        skill_accuracy: skill_hits as f64 / windows.len() as f64,
        task_accuracy: task_hits as f64 / windows.len() as f64,
    })
}

/// Run the full schedule and return the snapshot with the best combined
/// validation accuracy (mean of the two heads; ties keep the earlier epoch).
pub fn train(
    config: &ModelConfig,
    schedule: &TrainSchedule,
    train_windows: &[WindowedExample],
    val_windows: &[WindowedExample],
) -> Result<(SatrParams, TrainLog)> {
    schedule.validate()?;
    config.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if train_windows.len() < 2 {
        return Err(Error::Config(
            "training needs at least 2 windows (batch normalization)".into(),
        ));
    }

    let mut params = model::init_params(config, schedule.seed)?;
    let mut state = OptimizerState::new(&params, schedule);
    let mut dropout_rng = SeededRng::seed_from_u64(derive_seed(schedule.seed, 0xd0));

    let mut log = TrainLog::default();
    let mut best: Option<(f64, SatrParams)> = None;
    let mut val_losses = Vec::with_capacity(schedule.epochs);

    for epoch in 1..=schedule.epochs {
        let lr_this_epoch = state.learning_rate;
        let order = epoch_permutation(train_windows.len(), schedule.seed, epoch);
        let mut batches: Vec<&[usize]> = order.chunks(schedule.batch_size).collect();
        // a trailing single window cannot be batch-normalized; fold it into
        // the previous batch
        let mut merged_tail: Vec<usize> = Vec::new();
        if batches.len() >= 2 && batches[batches.len() - 1].len() == 1 {
            let tail = batches.pop().unwrap();
            let prev = batches.pop().unwrap();
            merged_tail.extend_from_slice(prev);
            merged_tail.extend_from_slice(tail);
            batches.push(&merged_tail);
        }

        let mut loss_sum = 0.0;
        let batch_count = batches.len();
        for (batch_idx, batch_indices) in batches.iter().enumerate() {
            let windows: Vec<&WindowedExample> =
                batch_indices.iter().map(|&i| &train_windows[i]).collect();
            let (batch, labels) = batch_of(&windows);
            let mut pass = model::forward(&params, &batch, LayerMode::Training, &mut dropout_rng)?;
            let loss_node = model::joint_loss_node(&mut pass, &labels)?;
            let loss = pass.tape.value(loss_node).item();
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx + 1,
                    loss,
                });
            }
            loss_sum += loss * windows.len() as f64;
            let grads = pass.tape.backward(loss_node)?;
            adam_step(&mut params, &grads, &mut state)?;
            params.apply_bn_updates(&pass.bn_updates);
        }
        let train_loss = loss_sum / train_windows.len() as f64;

        let score = evaluate_windows(&params, val_windows)?;
        val_losses.push(score.loss);
        state.learning_rate = plateau_update(
            &val_losses,
            state.learning_rate,
            schedule.plateau_patience,
            schedule.plateau_factor,
            schedule.lr_floor,
        );

        let combined = 0.5 * (score.skill_accuracy + score.task_accuracy);
        let is_best = best.as_ref().map(|(acc, _)| combined > *acc).unwrap_or(true);
        if is_best {
            best = Some((combined, params.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: score.loss,
            val_skill_accuracy: score.skill_accuracy,
            val_task_accuracy: score.task_accuracy,
            learning_rate: lr_this_epoch,
            batches: batch_count,
            is_best,
        });
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, log))
}
