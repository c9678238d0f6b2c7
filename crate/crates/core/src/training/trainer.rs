use std::time::Instant;

use lgt_autodiff::{grad_check_with, Bindings, GradCheckOptions, Graph, InputReport, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, SceneInputs};
use crate::nn::Ctx;
use crate::training::losses::{scene_loss, LossConfig, LossValues};
use crate::training::optimizer::{Adam, StepSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decayed: f64,
    pub decay_epoch: usize,
    /// Seeds the per-epoch shuffle.
    pub shuffle_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Evaluate the scenes of a batch on the rayon pool.
    pub parallel: bool,
    /// Stop after this many optimizer steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            lr: 5e-4,
            lr_decayed: 1e-4,
            decay_epoch: 45,
            shuffle_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            parallel: false,
            max_steps: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr,
            decayed: self.lr_decayed,
            decay_epoch: self.decay_epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr_decayed >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Optimizer steps taken so far, over all epochs.
    pub steps: usize,
    pub lr: f64,
    /// Scene-averaged loss terms before each update.
    pub loss: LossValues,
    pub wall_seconds: f64,
}

impl EpochReport {
    /// Equality on everything except wall time.
    pub fn same_numbers(&self, other: &EpochReport) -> bool {
        (self.epoch, self.steps, self.lr.to_bits(), self.loss) == (other.epoch, other.steps, other.lr.to_bits(), other.loss)
    }
}

/// Loss terms and parameter gradients (store order) for one scene.
pub fn scene_gradients(model: &Model, inputs: &SceneInputs, loss: &LossConfig) -> Result<(LossValues, Vec<Tensor>)> {
    let gt = inputs
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth("training scene".into()))?;
    let g = Graph::new();
    let params = model.params.bind(&g);
    let decoded = model.forward(&Ctx::new(&g, &params), inputs)?;
    let parts = scene_loss(&decoded, gt, loss)?;
    let grads = g.backward(parts.total)?;
    Ok((parts.values(), params.collect(&grads)))
}

/// Scene-averaged loss without updating anything.
pub fn evaluate_losses(model: &Model, data: &[SceneInputs], loss: &LossConfig) -> Result<LossValues> {
    let mut sum = LossValues::default();
    for inputs in data {
        let gt = inputs
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth("evaluation scene".into()))?;
        let g = Graph::new();
        let params = model.params.bind(&g);
        let decoded = model.forward(&Ctx::new(&g, &params), inputs)?;
        accumulate(&mut sum, &scene_loss(&decoded, gt, loss)?.values());
    }
    Ok(scaled(sum, 1.0 / data.len().max(1) as f64))
}

fn accumulate(acc: &mut LossValues, v: &LossValues) {
    acc.total += v.total;
    acc.reg += v.reg;
    acc.cls += v.cls;
    acc.goal += v.goal;
}

fn scaled(v: LossValues, s: f64) -> LossValues {
    LossValues {
        total: v.total * s,
        reg: v.reg * s,
        cls: v.cls * s,
        goal: v.goal * s,
    }
}

/// Finite-difference check of the total loss with respect to every
/// parameter tensor, reported by parameter name.
pub fn model_gradient_check(
    model: &Model,
    inputs: &SceneInputs,
    loss: &LossConfig,
    opts: GradCheckOptions,
) -> Result<Vec<(String, InputReport)>> {
    let gt = inputs
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth("gradient check scene".into()))?;
    let values: Vec<Tensor> = model.params.iter().map(|(_, p)| p.value.clone()).collect();
    let report = grad_check_with(
        |g, vars| {
            let params = Bindings::from_vars(vars.to_vec());
            let decoded = model
                .forward(&Ctx::new(g, &params), inputs)
                .map_err(|e| lgt_autodiff::Error::Argument(e.to_string()))?;
            let parts = scene_loss(&decoded, gt, loss).map_err(|e| lgt_autodiff::Error::Argument(e.to_string()))?;
            Ok(parts.total)
        },
        &values,
        opts,
    )?;
    Ok(model
        .params
        .iter()
        .map(|(_, p)| p.name.clone())
        .zip(report.inputs)
        .collect())
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    pub epoch: usize,
    pub steps: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, loss: LossConfig) -> Self {
        let adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.adam_eps);
        let rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        Self {
            model,
            adam,
            cfg,
            loss,
            epoch: 0,
            steps: 0,
            rng,
        }
    }

    pub fn finished(&self) -> bool {
        self.cfg.max_steps.is_some_and(|m| self.steps >= m)
    }

    fn parameter_norms(&self) -> String {
        let mut norms: Vec<(String, f64)> = self
            .model
            .params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.l2_norm()))
            .collect();
        norms.sort_by(|a, b| b.1.is_nan().cmp(&a.1.is_nan()).then(b.1.total_cmp(&a.1)));
        norms
            .iter()
            .take(6)
            .map(|(n, v)| format!("{n}={v:.4e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn train_epoch(&mut self, data: &[SceneInputs]) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(Error::Argument("training dataset is empty".into()));
        }
        let started = Instant::now();
        let lr = self.cfg.schedule().at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);

        let mut sum = LossValues::default();
        let mut seen = 0usize;
        for (batch_index, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            if self.finished() {
                break;
            }
            let model = &self.model;
            let loss_cfg = &self.loss;
            let results: Vec<Result<(LossValues, Vec<Tensor>)>> = if self.cfg.parallel {
                batch.par_iter().map(|&i| scene_gradients(model, &data[i], loss_cfg)).collect()
            } else {
                batch.iter().map(|&i| scene_gradients(model, &data[i], loss_cfg)).collect()
            };

            let mut batch_loss = LossValues::default();
            let mut grads = self.model.params.zeros_like();
            for r in results {
                let (values, g) = r?;
                accumulate(&mut batch_loss, &values);
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let grads_finite = grads.iter().all(Tensor::all_finite);
            if !batch_loss.total.is_finite() || !grads_finite {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    batch: batch_index,
                    loss: batch_loss.total * inv,
                    norms: self.parameter_norms(),
                });
            }
            if let Some(clip) = self.cfg.grad_clip {
                let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
                }
            }
            self.adam.update(&mut self.model.params, &grads, lr);
            self.steps += 1;
            accumulate(&mut sum, &batch_loss);
            seen += batch.len();
        }
        let report = EpochReport {
            epoch: self.epoch,
            steps: self.steps,
            lr,
            loss: scaled(sum, 1.0 / seen.max(1) as f64),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(report)
    }

    /// Runs up to `cfg.epochs` epochs, or until `max_steps` is reached.
    pub fn fit(&mut self, data: &[SceneInputs], mut on_epoch: impl FnMut(&Trainer, &EpochReport) -> Result<()>) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::new();
        while self.epoch < self.cfg.epochs && !self.finished() {
            let r = self.train_epoch(data)?;
            on_epoch(self, &r)?;
            reports.push(r);
        }
        Ok(reports)
    }
}

/// Convenience wrapper matching a single-epoch call.
pub fn train_epoch(trainer: &mut Trainer, data: &[SceneInputs]) -> Result<EpochReport> {
    trainer.train_epoch(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{tiny_config, tiny_scene};
    use crate::model::{prepare_scene, ModelConfig};

    fn data(cfg: &ModelConfig, n: u64) -> Vec<SceneInputs> {
        (0..n).map(|s| prepare_scene(&tiny_scene(s, cfg), cfg).unwrap()).collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let before = model.params.clone();
        let tc = TrainConfig {
            lr: 0.0,
            lr_decayed: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, tc, LossConfig::default());
        t.train_epoch(&data(&cfg, 4)).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(t.model.params.iter()) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn same_seed_same_reports_serial_and_parallel() {
        let cfg = tiny_config();
        let d = data(&cfg, 4);
        let run = |parallel| {
            let tc = TrainConfig {
                batch_size: 2,
                lr: 1e-3,
                parallel,
                shuffle_seed: 9,
                ..TrainConfig::default()
            };
            let mut t = Trainer::new(Model::new(cfg.clone(), 2).unwrap(), tc, LossConfig::default());
            (0..3).map(|_| t.train_epoch(&d).unwrap()).collect::<Vec<_>>()
        };
        let (a, b, c) = (run(false), run(false), run(true));
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert!(x.same_numbers(y) && x.same_numbers(z), "{x:?} {y:?} {z:?}");
        }
    }

    #[test]
    fn overfitting_four_scenes_halves_the_loss() {
        let cfg = tiny_config();
        let d = data(&cfg, 4);
        let tc = TrainConfig {
            batch_size: 4,
            lr: 3e-3,
            max_steps: Some(200),
            epochs: 200,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(Model::new(cfg.clone(), 3).unwrap(), tc, LossConfig::default());
        let reports = t.fit(&d, |_, _| Ok(())).unwrap();
        let first = reports[0].loss.total;
        let last = evaluate_losses(&t.model, &d, &t.loss).unwrap().total;
        assert_eq!(t.steps, 200);
        assert!(last <= 0.5 * first, "loss {first} -> {last}");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let cfg = tiny_config();
        let mut model = Model::new(cfg.clone(), 4).unwrap();
        let id = model.params.ids().last().unwrap();
        model.params.value_mut(id).data_mut().fill(f64::NAN);
        let mut t = Trainer::new(model, TrainConfig::default(), LossConfig::default());
        match t.train_epoch(&data(&cfg, 1)) {
            Err(Error::NonFinite { batch, norms, .. }) => {
                assert_eq!(batch, 0);
                assert!(norms.contains("NaN"), "{norms}");
            }
            other => panic!("{other:?}"),
        }
    }
}
