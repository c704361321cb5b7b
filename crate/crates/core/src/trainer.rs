//! Curriculum-driven training, evaluation and the bucket-count sweep.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::RngState;
use crate::curriculum::{build_schedule, difficulties, SchedulePlan};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{forward_with, init_params, ModalitySet, Mode, ModelConfig, ModelParams, Weights};
use crate::nn::{adam_step, clip_grad_norm};

/// Named hyperparameter bundles for the two benchmark corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Iemocap,
    Meld,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "iemocap" => Ok(Preset::Iemocap),
            "meld" => Ok(Preset::Meld),
            _ => Err(Error::config(format!("unknown preset `{name}` (iemocap, meld)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Iemocap => "iemocap",
            Preset::Meld => "meld",
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        let (lr, dropout, epochs, layers, buckets) = match self {
            Preset::Iemocap => (0.0005, 0.4, 30, 4, 5),
            Preset::Meld => (0.00001, 0.1, 60, 2, 12),
        };
        config.lr = lr;
        config.dropout = dropout;
        config.epochs = epochs;
        config.layers = layers;
        config.buckets = buckets;
        config.preset = Some(self);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub layers: usize,
    pub buckets: usize,
    pub window: usize,
    pub hidden: usize,
    pub seed: u64,
    pub curriculum: bool,
    pub preset: Option<Preset>,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Defaults to every modality present in the data.
    pub modalities: Option<ModalitySet>,
    /// Worker threads for evaluation.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            dropout: 0.0,
            epochs: 40,
            layers: 2,
            buckets: 5,
            window: 1,
            hidden: 16,
            seed: 0,
            curriculum: true,
            preset: None,
            clip_norm: None,
            modalities: None,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.curriculum {
            if self.buckets < 1 {
                return Err(Error::config("buckets must be >= 1"));
            }
            if self.epochs < self.buckets {
                return Err(Error::config(format!(
                    "epochs ({}) must be >= buckets ({}) when the curriculum is on",
                    self.epochs, self.buckets
                )));
            }
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config("clip norm must be positive"));
            }
        }
        if self.jobs < 1 {
            return Err(Error::config("jobs must be >= 1"));
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        let mut mc = ModelConfig::new(dataset.dims, dataset.num_labels(), self.hidden, self.layers);
        if let Some(m) = self.modalities {
            mc.modalities = m;
        }
        mc.dropout = self.dropout;
        mc.window = self.window;
        mc.validate()?;
        Ok(mc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_size: usize,
    pub train_loss: f64,
    pub valid_acc: f64,
    pub valid_wf1: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_size,train_loss,valid_acc,valid_wf1\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_size, r.train_loss, r.valid_acc, r.valid_wf1
            )
            .unwrap();
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Training RNG state after the last epoch.
    pub rng: RngState,
    pub plan: Option<SchedulePlan>,
    pub optimizer_steps: u64,
}

fn check_compatible(train: &Dataset, valid: &Dataset) -> Result<()> {
    if train.labels != valid.labels {
        return Err(Error::data("training and validation label sets differ"));
    }
    if train.dims != valid.dims {
        return Err(Error::data("training and validation feature dims differ"));
    }
    Ok(())
}

/// Trains one model and keeps the parameters of the best validation w-F1 epoch
/// (earliest on ties).
pub fn train(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.conversations.is_empty() {
        return Err(Error::data("empty training set"));
    }
    check_compatible(train, valid)?;
    let model_config = config.model_config(train)?;
    let mut params = init_params(&model_config, config.seed)?;
    let weights = Weights::lookup(&params.store, &params.config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let plan = if config.curriculum {
        let scores = difficulties(&train.conversations)?;
        Some(build_schedule(&scores, config.buckets, config.epochs)?)
    } else {
        None
    };
    let index_of: HashMap<&str, usize> = train
        .conversations
        .iter()
        .enumerate()
        .map(|(i, c)| (c.conv_id.as_str(), i))
        .collect();

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = match &plan {
            Some(plan) => {
                let mut ids: Vec<usize> = plan.epoch_set(epoch).iter().map(|id| index_of[id]).collect();
                ids.sort_unstable();
                ids
            }
            None => (0..train.conversations.len()).collect(),
        };
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for &idx in &order {
            let conv = &train.conversations[idx];
            let out = forward_with(conv, &params, &weights, Mode::Train(&mut rng))?;
            let loss = out.loss.expect("training forward always has a loss");
            let value = out.tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {value} at epoch {epoch}, conversation `{}`",
                    conv.conv_id
                )));
            }
            loss_sum += value;
            out.tape.backward_into(loss, &mut params.store)?;
            if let Some(max) = config.clip_norm {
                clip_grad_norm(&mut params.store, max);
            }
            step += 1;
            adam_step(&mut params.store, config.lr, step);
        }

        let metrics = evaluate(&params, valid, config.jobs)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_size: order.len(),
            train_loss: loss_sum / order.len() as f64,
            valid_acc: metrics.accuracy,
            valid_wf1: metrics.weighted_f1,
        });
        if best.as_ref().is_none_or(|(score, _)| metrics.weighted_f1 > *score) {
            best = Some((metrics.weighted_f1, params.clone()));
            history.best_epoch = epoch;
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        history,
        rng: RngState::capture(&rng),
        plan,
        optimizer_steps: step,
    })
}

/// Predictions for every conversation, in dataset order.
pub fn predict_all(params: &ModelParams, dataset: &Dataset, jobs: usize) -> Result<Vec<Vec<usize>>> {
    let weights = Weights::lookup(&params.store, &params.config)?;
    let run = |conv| forward_with(conv, params, &weights, Mode::Eval).map(|o| o.predictions());
    if jobs <= 1 {
        return dataset.conversations.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| dataset.conversations.par_iter().map(run).collect())
}

/// Metrics over every labeled utterance, with dropout off.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, jobs: usize) -> Result<Metrics> {
    let predictions = predict_all(params, dataset, jobs)?;
    let r = dataset.num_labels();
    let mut confusion = vec![vec![0usize; r]; r];
    for (conv, preds) in dataset.conversations.iter().zip(&predictions) {
        for (u, &p) in conv.utterances.iter().zip(preds) {
            if let Some(t) = u.label {
                confusion[t][p] += 1;
            }
        }
    }
    Ok(Metrics::from_confusion(confusion))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub buckets: usize,
    pub best_wf1: f64,
    pub best_epoch: usize,
}

/// Trains once per bucket count with the curriculum on and identical seeds.
pub fn bucket_sweep(
    train_set: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
    bucket_counts: &[usize],
) -> Result<Vec<SweepRow>> {
    bucket_counts
        .iter()
        .map(|&k| {
            let cfg = TrainConfig {
                buckets: k,
                curriculum: true,
                ..config.clone()
            };
            let outcome = train(train_set, valid, &cfg)?;
            let best = outcome.history.best().expect("history is non-empty");
            Ok(SweepRow {
                buckets: k,
                best_wf1: best.valid_wf1,
                best_epoch: best.epoch,
            })
        })
        .collect()
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("buckets\tbest_valid_wf1\tbest_epoch\n");
    for r in rows {
        writeln!(out, "{}\t{:.6}\t{}", r.buckets, r.best_wf1, r.best_epoch).unwrap();
    }
    out
}
