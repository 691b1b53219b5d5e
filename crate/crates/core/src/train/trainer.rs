use std::path::PathBuf;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, DEFAULT_PER_CLASS};
use super::methods::{method_loss, Coefficients, DroState, Method};
use super::sampler::BalancedSampler;
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, to_matrix};
use crate::eval::record::{metric, RunRecord, Split};
use crate::nn::{Architecture, Dense, HeadKind, ModelParams, Sgd};
use crate::rng::{rng_for, stream, LabRng};
use crate::scenario::{Sample, Scenario, TaskData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub method: Method,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// IRM / Spectral Decoupling strength.
    pub lambda_penalty: f64,
    /// Epochs over which penalties ramp linearly from 0 at the start of a task.
    pub penalty_warmup_epochs: usize,
    pub eta_dro: f64,
    pub lambda_ib: f64,
    pub n_per_class: usize,
    /// Checkpoint whose trunk is loaded and frozen.
    pub pretrained_trunk: Option<PathBuf>,
    pub dropout_rate: f64,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            method: Method::Finetune,
            epochs_per_task: 20,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            lambda_penalty: 1.0,
            penalty_warmup_epochs: 1,
            eta_dro: 0.01,
            lambda_ib: 1.0,
            n_per_class: DEFAULT_PER_CLASS,
            pretrained_trunk: None,
            dropout_rate: 0.0,
            hidden: vec![128, 128],
            head: HeadKind::Linear,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::config("trainer.epochs_per_task", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size", "must be at least 1"));
        }
        for (path, v) in [
            ("trainer.lambda_penalty", self.lambda_penalty),
            ("trainer.eta_dro", self.eta_dro),
            ("trainer.lambda_ib", self.lambda_ib),
            ("trainer.lr", self.lr),
            ("trainer.momentum", self.momentum),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(path, format!("{v} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("trainer.dropout_rate", "must be in [0, 1)"));
        }
        if self.head == HeadKind::MeanLayer {
            return Err(Error::config("trainer.head", "a MeanLayer head cannot be trained"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub penalty: f64,
}

/// Progress notifications from [`ContinualTrainer::train_task`].
pub enum TrainEvent<'a> {
    Step { model: &'a ModelParams },
    Epoch { epoch: usize, log: &'a EpochLog, model: &'a ModelParams },
}

/// Owns the model and the continual state (buffer, GroupDRO weights, RNG) of
/// one run.
#[derive(Debug, Clone)]
pub struct ContinualTrainer {
    pub config: TrainerConfig,
    pub model: ModelParams,
    pub buffer: ReplayBuffer,
    pub dro: DroState,
    rng: LabRng,
    tasks_seen: usize,
}

impl ContinualTrainer {
    pub fn new(config: TrainerConfig, input_dim: usize, n_classes: usize, pretrained: Option<Vec<Dense>>) -> Result<Self> {
        config.validate()?;
        let mut arch = Architecture::single_head(input_dim, config.hidden.clone(), config.head, n_classes);
        arch.dropout_rate = config.dropout_rate;
        let mut model = ModelParams::new(&arch, config.seed)?;
        if let Some(trunk) = pretrained {
            let head = model.heads.remove(0);
            let fresh_head = if trunk.last().map(Dense::fan_out) != Some(head.latent_dim()) {
                let h = trunk.last().map_or(input_dim, Dense::fan_out);
                let mut rng = rng_for(config.seed, stream::INIT, 1);
                crate::nn::Head::new(config.head, head.classes.clone(), h, &mut rng)?
            } else {
                head
            };
            model = ModelParams::from_parts(trunk, vec![fresh_head], config.dropout_rate, config.seed)?;
            if model.input_dim() != input_dim {
                return Err(Error::shape(format!(
                    "pretrained trunk expects {} inputs, scenario has {input_dim}",
                    model.input_dim()
                )));
            }
            model.trunk_frozen = true;
        }
        Ok(ContinualTrainer {
            buffer: ReplayBuffer::new(config.n_per_class),
            rng: rng_for(config.seed, stream::TRAIN, 0),
            config,
            model,
            dro: DroState::default(),
            tasks_seen: 0,
        })
    }

    /// Trains on one task: each epoch draws `|current ∪ buffer|` samples with
    /// the class-balanced sampler, in minibatches. The buffer absorbs the task
    /// afterwards (except for finetuning).
    pub fn train_task(&mut self, task: &TaskData, on_event: &mut dyn FnMut(TrainEvent<'_>)) -> Result<Vec<EpochLog>> {
        if task.train.is_empty() {
            return Err(Error::invalid(format!("task {} has no training samples", task.task_id)));
        }
        let mut data: Vec<&Sample> = task.train.iter().collect();
        if self.config.method.uses_buffer() {
            data.extend(self.buffer.samples());
        }
        let owned: Vec<Sample> = data.iter().map(|s| (*s).clone()).collect();
        let x_all = to_matrix(&owned)?;
        let labels: Vec<usize> = owned.iter().map(|s| s.y).collect();
        let envs: Vec<usize> = owned.iter().map(|s| s.task_id).collect();
        let sampler = BalancedSampler::new(&labels)?;

        let cfg = &self.config;
        let n = owned.len();
        let steps_per_epoch = n.div_ceil(cfg.batch_size);
        let warm_steps = cfg.penalty_warmup_epochs * steps_per_epoch;
        let mut opt = Sgd::new(cfg.lr, cfg.momentum);
        let mut logs = Vec::with_capacity(cfg.epochs_per_task);
        let mut step = 0usize;
        for epoch in 0..cfg.epochs_per_task {
            let order = sampler.draw(n, &mut self.rng);
            let (mut loss_sum, mut pen_sum) = (0.0, 0.0);
            for batch in order.chunks(cfg.batch_size) {
                let x = x_all.select(Axis(0), batch);
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let e: Vec<usize> = batch.iter().map(|&i| envs[i]).collect();
                let ramp = if warm_steps == 0 {
                    1.0
                } else {
                    ((step + 1) as f64 / warm_steps as f64).min(1.0)
                };
                let coef = Coefficients {
                    lambda: cfg.lambda_penalty * ramp,
                    lambda_ib: cfg.lambda_ib * ramp,
                    eta: cfg.eta_dro,
                };
                let fwd = self.model.forward(x.view(), true, &mut self.rng)?;
                let out = method_loss(cfg.method, &self.model, &fwd, &y, &e, coef, &mut self.dro)?;
                let grads = self.model.backward(&fwd, &out.dlogits, out.dlatent.as_ref())?;
                opt.step(&mut self.model, &grads);
                loss_sum += out.loss * batch.len() as f64;
                pen_sum += out.penalty * batch.len() as f64;
                step += 1;
                on_event(TrainEvent::Step { model: &self.model });
            }
            let log = EpochLog { epoch, loss: loss_sum / n as f64, penalty: pen_sum / n as f64 };
            on_event(TrainEvent::Epoch { epoch, log: &log, model: &self.model });
            logs.push(log);
        }
        if self.config.method.uses_buffer() {
            let mut rng = rng_for(self.config.seed, stream::BUFFER, self.tasks_seen as u64);
            self.buffer.update(task, &mut rng);
        }
        self.tasks_seen += 1;
        Ok(logs)
    }
}

/// Options of [`run_scenario`] that are not part of the trainer config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub run_id: String,
    /// Also evaluate the clean test set after every epoch.
    pub per_epoch: bool,
    /// Frozen trunk to use instead of `config.pretrained_trunk`.
    pub pretrained_trunk: Option<Vec<Dense>>,
}

fn eval_post_task(record: &mut RunRecord, model: &ModelParams, scenario: &Scenario, t: usize, epoch: usize) -> Result<()> {
    record.push(t, epoch, Split::CleanTest, metric::ACCURACY, accuracy(model, &scenario.clean_test, None)?);
    for (k, other) in scenario.tasks.iter().enumerate() {
        if !other.eval_spurious.is_empty() {
            record.push(t, epoch, Split::EvalSpurious(k), metric::ACCURACY, accuracy(model, &other.eval_spurious, None)?);
        }
    }
    record.push(t, epoch, Split::Train, metric::ACCURACY, accuracy(model, &scenario.tasks[t].train, None)?);
    Ok(())
}

/// Trains the scenario's tasks in order and logs losses and accuracies.
pub fn run_scenario(scenario: &Scenario, config: &TrainerConfig, options: &RunOptions) -> Result<RunRecord> {
    let pretrained = match (&options.pretrained_trunk, &config.pretrained_trunk) {
        (Some(trunk), _) => Some(trunk.clone()),
        (None, Some(path)) => Some(crate::io::checkpoint::load(path)?.trunk),
        (None, None) => None,
    };
    let snapshot = serde_json::to_value(config).map_err(|e| Error::invalid(e.to_string()))?;
    let mut record = RunRecord::new(options.run_id.clone(), config.seed, snapshot);
    let mut trainer = ContinualTrainer::new(config.clone(), scenario.input_dim, scenario.n_classes, pretrained)?;
    for (t, task) in scenario.tasks.iter().enumerate() {
        let mut epoch_rows: Vec<(usize, f64, f64, Option<f64>)> = Vec::new();
        let mut failure: Option<Error> = None;
        trainer.train_task(task, &mut |ev| {
            if let TrainEvent::Epoch { epoch, log, model } = ev {
                let acc = if options.per_epoch {
                    match accuracy(model, &scenario.clean_test, None) {
                        Ok(a) => Some(a),
                        Err(e) => {
                            failure.get_or_insert(e);
                            None
                        }
                    }
                } else {
                    None
                };
                epoch_rows.push((epoch, log.loss, log.penalty, acc));
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        for (epoch, loss, _, acc) in epoch_rows {
            record.push(t, epoch, Split::Train, metric::LOSS, loss);
            if let Some(a) = acc {
                record.push(t, epoch, Split::CleanTest, metric::EPOCH_ACCURACY, a);
            }
        }
        eval_post_task(&mut record, &trainer.model, scenario, t, config.epochs_per_task - 1)?;
    }
    Ok(record)
}

/// Flattened trainable parameters, for trajectory comparisons.
pub fn flat_params(model: &ModelParams) -> Vec<f64> {
    model
        .param_ids()
        .into_iter()
        .flat_map(|id| model.param(id).to_vec())
        .collect()
}
