//! Behavior cloning: window batches, cross-entropy on action logits,
//! AdamW with an epoch-wise geometric learning-rate decay.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{sample_training_window, Trajectory, Window, WorldCache};
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::model::{forward, greedy_action, ModelInput, ModelVars, ModelWeights};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::seed::derive_rng;
use crate::tensor::Tape;

/// Target id marking padded positions.
pub const IGNORE: usize = usize::MAX;

const SHUFFLE_STREAM: u64 = 11;
const BATCH_STREAM: u64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub grad_clip: f64,
    /// Windows drawn from every trajectory per epoch.
    pub windows_per_trajectory: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 20,
            lr0: 1e-4,
            weight_decay: 0.01,
            lr_decay: 0.9,
            grad_clip: 1.0,
            windows_per_trajectory: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay {} outside (0, 1]",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 || self.windows_per_trajectory == 0 {
            return Err(Error::Config(
                "batch_size and windows_per_trajectory must be at least 1".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Config(
                "weight_decay must be >= 0 and grad_clip > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// `lr0 · decay^epoch`.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }
}

/// Model input padded to the context length plus per-position targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: ModelInput,
    /// `[batch, T]`; [`IGNORE`] at padded positions.
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn mask(&self) -> Vec<bool> {
        self.targets.iter().map(|&t| t != IGNORE).collect()
    }

    pub fn real_steps(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE).count()
    }
}

/// Stacks windows, padding each to `t` steps with blank observations,
/// STOP inputs and ignored targets. Targets are the unshifted actions.
pub fn batch_from_windows(windows: &[Window], t: usize) -> Result<Batch> {
    let l = Observation::LEN;
    let b = windows.len();
    let mut input = ModelInput {
        batch: b,
        steps: t,
        goals: Vec::with_capacity(b * l),
        observations: vec![0.0; b * t * l],
        actions: vec![Action::Stop.id(); b * t],
    };
    let mut targets = vec![IGNORE; b * t];
    for (i, w) in windows.iter().enumerate() {
        if w.len() > t {
            return Err(Error::ContextOverflow {
                got: w.len(),
                max: t,
            });
        }
        input.goals.extend_from_slice(w.goal.data());
        for (s, (o, a)) in w.observations.iter().zip(&w.actions).enumerate() {
            let at = (i * t + s) * l;
            input.observations[at..at + l].copy_from_slice(o.data());
            input.actions[i * t + s] = a.id();
            targets[i * t + s] = a.id();
        }
    }
    Ok(Batch { input, targets })
}

/// `batch_size` windows from uniformly chosen trajectories.
pub fn make_batch<R: Rng + ?Sized>(
    worlds: &WorldCache,
    dataset: &[&Trajectory],
    t: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    let windows = (0..batch_size)
        .map(|_| {
            let traj = dataset[rng.random_range(0..dataset.len())];
            sample_training_window(worlds.world(&traj.spec.world), traj, t, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    batch_from_windows(&windows, t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub grad_norm: f64,
}

/// Loss and parameter gradients for one batch, without updating.
pub fn loss_and_gradients(
    weights: &ModelWeights,
    batch: &Batch,
) -> Result<(StepStats, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let vars = ModelVars::leaves(&tape, weights);
    let logits = forward(&tape, weights, &vars, &batch.input)?;
    let loss = logits.cross_entropy(&batch.targets, IGNORE)?;
    let a = weights.config.num_actions;
    let mut stats = StepStats {
        loss: loss.item(),
        ..StepStats::default()
    };
    logits.with_data(|d| {
        for (row, &target) in d.chunks(a).zip(&batch.targets) {
            if target != IGNORE {
                stats.count += 1;
                stats.correct += (greedy_action(row) == target) as usize;
            }
        }
    });
    let grads = tape.backward(loss)?;
    let grads = vars
        .vars
        .iter()
        .zip(&weights.params)
        .map(|(v, p)| {
            grads
                .get(*v)
                .map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec)
        })
        .collect();
    Ok((stats, grads))
}

/// Forward, backward, clip, AdamW update. The frozen projection is never
/// touched. A non-finite loss aborts before any parameter changes.
pub fn train_step(
    weights: &mut ModelWeights,
    optimizer: &mut AdamW,
    batch: &Batch,
    lr: f64,
    grad_clip: f64,
    batch_id: usize,
) -> Result<StepStats> {
    let (mut stats, mut grads) = loss_and_gradients(weights, batch)?;
    if !stats.loss.is_finite() {
        return Err(Error::NonFinite {
            loss: stats.loss,
            lr,
            batch: batch_id,
        });
    }
    stats.grad_norm = clip_global_norm(&mut grads, grad_clip);
    optimizer.update(&mut weights.params, &grads, lr)?;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,step,lr,loss,accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:.6},{:.6}",
            r.epoch, r.step, r.lr, r.loss, r.accuracy
        );
    }
    out
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-epoch-{epoch:03}.ckpt"))
}

/// Runs epochs `start.meta.epoch .. config.epochs`. Each epoch visits
/// every trajectory `windows_per_trajectory` times in an order shuffled by
/// `(seed, epoch)`; window sampling per batch is seeded by `(seed, step)`,
/// so a resumed run matches an uninterrupted one bit for bit.
///
/// With `out_dir`, writes a checkpoint per epoch and `metrics.csv`.
pub fn train(
    start: Checkpoint,
    dataset: &[&Trajectory],
    worlds: &WorldCache,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let Checkpoint {
        mut weights,
        optimizer,
        mut meta,
    } = start;
    let mut optimizer = optimizer.unwrap_or_else(|| AdamW::new(config.adamw(), &weights.params));
    let t = weights.config.context;
    let mut history = Vec::new();

    for epoch in meta.epoch..config.epochs {
        let lr = config.lr_schedule(epoch);
        let mut order: Vec<usize> = (0..dataset.len())
            .flat_map(|i| std::iter::repeat_n(i, config.windows_per_trajectory))
            .collect();
        order.shuffle(&mut derive_rng(config.seed, SHUFFLE_STREAM, epoch as u64));

        let (mut loss_sum, mut correct, mut count, mut batches) = (0.0, 0, 0, 0);
        for chunk in order.chunks(config.batch_size) {
            let mut rng = derive_rng(config.seed, BATCH_STREAM, meta.step);
            let windows = chunk
                .iter()
                .map(|&i| {
                    let traj = dataset[i];
                    sample_training_window(worlds.world(&traj.spec.world), traj, t, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = batch_from_windows(&windows, t)?;
            let stats = train_step(
                &mut weights,
                &mut optimizer,
                &batch,
                lr,
                config.grad_clip,
                meta.step as usize,
            )?;
            meta.step += 1;
            loss_sum += stats.loss;
            correct += stats.correct;
            count += stats.count;
            batches += 1;
        }
        meta.epoch = epoch + 1;
        meta.is_final = meta.epoch == config.epochs;
        let row = EpochMetrics {
            epoch,
            step: meta.step,
            lr,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / count.max(1) as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4} lr {lr:e}",
            row.loss,
            row.accuracy
        );
        history.push(row);
        if let Some(dir) = out_dir {
            let ck = Checkpoint {
                weights: weights.clone(),
                optimizer: Some(optimizer.clone()),
                meta: meta.clone(),
            };
            ck.save(&checkpoint_path(dir, epoch))?;
            append_metrics(dir, history.last().expect("just pushed"))?;
        }
    }
    Ok((
        Checkpoint {
            weights,
            optimizer: Some(optimizer),
            meta,
        },
        history,
    ))
}

fn append_metrics(dir: &Path, row: &EpochMetrics) -> Result<()> {
    use std::io::Write;
    let path = dir.join("metrics.csv");
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let text = metrics_csv(std::slice::from_ref(row));
    let text = if fresh {
        text
    } else {
        text.lines().skip(1).map(|l| format!("{l}\n")).collect()
    };
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_starts_at_lr0_and_decays() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_schedule(0), 1e-4);
        assert!((c.lr_schedule(1) - 9e-5).abs() < 1e-20);
        for e in 0..30 {
            assert!(c.lr_schedule(e + 1) <= c.lr_schedule(e));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr0: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr_decay: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
