//! Joint loss, learning-rate schedule, AdamW, bucketed batching, early
//! stopping, and the training loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Checkpoint, Classifier};
use crate::params::{Grads, Graph, ParamGroup, ParamStore};
use crate::sample::{Augmentation, BuildingSample, InputSpec, PreparedSample, StreetCount};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const ELEMENT_LOSS_WEIGHT: f64 = 0.5;
pub const MATERIAL_LOSS_WEIGHT: f64 = 0.5;

/// `0.5·le + 0.5·lm` on the tape.
pub fn joint_loss<T: Scalar>(tape: &mut Tape<T>, le: Var, lm: Var) -> Result<Var> {
    let a = tape.scale(le, T::from_f64_lossy(ELEMENT_LOSS_WEIGHT))?;
    let b = tape.scale(lm, T::from_f64_lossy(MATERIAL_LOSS_WEIGHT))?;
    tape.add(a, b)
}

/// Per-sample training loss of any classifier.
pub fn sample_loss<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    g: &mut Graph<'_, T>,
    x: &PreparedSample<T>,
) -> Result<Var> {
    let logits = model.forward(g, x)?;
    let le = g.tape.bce_with_logits(logits.elements, &x.element_targets())?;
    let lm = g.tape.bce_with_logits(logits.materials, &x.material_targets())?;
    joint_loss(&mut g.tape, le, lm)
}

/// Linear warmup then cosine decay, both per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub warmup_iters: usize,
    pub t_max: usize,
    pub base_backbone: f64,
    pub base_heads: f64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self { warmup_iters: 5, t_max: 50, base_backbone: 5e-5, base_heads: 5e-4 }
    }
}

impl ScheduleState {
    pub fn base(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.base_backbone,
            ParamGroup::Heads => self.base_heads,
        }
    }
}

pub fn lr_at(step: usize, sched: &ScheduleState, group: ParamGroup) -> f64 {
    let base = sched.base(group);
    if step < sched.warmup_iters {
        return base * (step + 1) as f64 / sched.warmup_iters as f64;
    }
    let t = (step - sched.warmup_iters).min(sched.t_max) as f64;
    (base * 0.5 * (1.0 + (PI * t / sched.t_max as f64).cos())).max(0.0)
}

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. Parameters without a gradient in `grads` are left alone,
    /// moments included. A non-finite gradient aborts before anything moves.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &Grads<T>,
        rate: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        for (id, p) in store.iter() {
            if let Some(g) = grads.get(id) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence(format!("non-finite gradient in `{}` at step {}", p.name, self.step + 1)));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let eps = c(self.eps);
        for (id, p) in store.iter_mut() {
            let Some(g) = grads.get(id) else { continue };
            let lr = c(rate(p.group));
            let decay = T::one() - lr * c(self.weight_decay);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w = *w * decay;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Index batches that never mix street-view counts. Each count's samples
/// are shuffled and chunked, then the batch order is shuffled.
pub fn bucket_batches<S: StreetCount>(samples: &[S], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.street_count()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Early stopping on a metric where larger is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
}

pub const MIN_IMPROVEMENT: f64 = 1e-6;

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self { best_metric: f64::NEG_INFINITY, best_epoch: None, epochs_since_improvement: 0, patience }
    }

    /// Records one epoch. Training stops once `patience` consecutive epochs
    /// have failed to beat the best by at least [`MIN_IMPROVEMENT`]; with
    /// patience 0 that is the first non-improving epoch.
    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best_epoch.is_none() || metric - self.best_metric >= MIN_IMPROVEMENT {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
            return StopDecision::Improved;
        }
        if self.epochs_since_improvement < self.patience {
            self.epochs_since_improvement += 1;
        }
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    /// Cosine length in iterations; `None` spans the whole run.
    pub t_max: Option<usize>,
    pub seed: u64,
    pub augment: Option<Augmentation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 8,
            batch_size: 16,
            lr_backbone: 5e-5,
            lr_heads: 5e-4,
            weight_decay: 0.05,
            warmup_iters: 5,
            t_max: None,
            seed: 0,
            augment: Some(Augmentation::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map_elements: Option<f64>,
    pub val_map_materials: Option<f64>,
    pub lr_backbone: f64,
    pub lr_heads: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub best: Checkpoint,
    pub stopped_early: bool,
}

pub fn history_json(history: &[EpochRecord]) -> String {
    let mut s = serde_json::to_string_pretty(history).expect("history serializes");
    s.push('\n');
    s
}

/// Trains `model` and leaves it holding the parameters of its best
/// validation epoch, which are also returned as a checkpoint.
///
/// On divergence the model is restored to the best epoch seen so far (or
/// to its initial state) before the error is returned.
pub fn fit<T: Scalar, M: Classifier<T>>(
    model: &mut M,
    train: &[BuildingSample],
    val: &[BuildingSample],
    input: &InputSpec,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("training needs non-empty train and validation sets"));
    }
    let val: Vec<PreparedSample<T>> = val.iter().map(|s| input.prepare(s)).collect::<Result<_>>()?;
    let plain: Option<Vec<PreparedSample<T>>> = match cfg.augment {
        Some(_) => None,
        None => Some(train.iter().map(|s| input.prepare(s)).collect::<Result<_>>()?),
    };
    for x in plain.iter().flatten().chain(&val) {
        model.check_input(x)?;
    }

    let iters_per_epoch = bucket_batches(train, cfg.batch_size, 0)?.len();
    let sched = ScheduleState {
        warmup_iters: cfg.warmup_iters,
        t_max: cfg.t_max.unwrap_or((cfg.epochs * iters_per_epoch).saturating_sub(cfg.warmup_iters).max(1)),
        base_backbone: cfg.lr_backbone,
        base_heads: cfg.lr_heads,
    };
    let mut opt = AdamW::new(model.params(), cfg.weight_decay);
    let mut stop = EarlyStopState::new(cfg.patience);
    let mut best_values = model.params().flatten();
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut iteration = 0usize;

    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let augmented;
        let prepared: &[PreparedSample<T>] = match (&plain, cfg.augment) {
            (Some(p), _) => p,
            (None, Some(aug)) => {
                let mut rng = SplitMix64::seed_from_u64(epoch_seed ^ 0xA5A5);
                augmented = train
                    .iter()
                    .map(|s| input.prepare_augmented(s, &aug, &mut rng))
                    .collect::<Result<Vec<PreparedSample<T>>>>()?;
                for x in &augmented {
                    model.check_input(x)?;
                }
                &augmented
            }
            (None, None) => unreachable!(),
        };

        let batches = bucket_batches(prepared, cfg.batch_size, epoch_seed)?;
        let mut loss_sum = 0.0;
        let (mut lr_b, mut lr_h) = (0.0, 0.0);
        for batch in &batches {
            let step = iteration;
            let result = train_batch(model, prepared, batch, &mut opt, |grp| lr_at(step, &sched, grp));
            let loss = match result {
                Ok(l) => l,
                Err(e) => {
                    model.params_mut().load_flat(&best_values)?;
                    return Err(match e {
                        Error::NonFinite { op } => Error::Divergence(format!("non-finite value in `{op}` at epoch {epoch}")),
                        other => other,
                    });
                }
            };
            loss_sum += loss * batch.len() as f64;
            lr_b = lr_at(step, &sched, ParamGroup::Backbone);
            lr_h = lr_at(step, &sched, ParamGroup::Heads);
            iteration += 1;
        }
        let train_loss = loss_sum / prepared.len() as f64;
        if !train_loss.is_finite() {
            model.params_mut().load_flat(&best_values)?;
            return Err(Error::Divergence(format!("training loss is {train_loss} at epoch {epoch}")));
        }

        let report = evaluate(&*model, &val)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_map_elements: report.map_elements,
            val_map_materials: report.map_materials,
            lr_backbone: lr_b,
            lr_heads: lr_h,
        });
        match stop.update(epoch, report.mean_map()) {
            StopDecision::Improved => best_values = model.params().flatten(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    model.params_mut().load_flat(&best_values)?;
    Ok(FitOutcome {
        history,
        best_epoch: stop.best_epoch.unwrap_or(0),
        best_metric: stop.best_metric,
        best: Checkpoint::of(&*model),
        stopped_early,
    })
}

/// Mean loss over one batch; gradients are summed in batch order and
/// averaged before a single optimizer step.
fn train_batch<T: Scalar, M: Classifier<T>>(
    model: &mut M,
    samples: &[PreparedSample<T>],
    batch: &[usize],
    opt: &mut AdamW<T>,
    rate: impl Fn(ParamGroup) -> f64,
) -> Result<f64> {
    let mut total = Grads::empty(model.params().len());
    let mut loss_sum = 0.0;
    for &i in batch {
        let mut g = Graph::new(model.params());
        let loss = sample_loss(&*model, &mut g, &samples[i])?;
        loss_sum += g.value(loss).item()?.to_f64_lossy();
        total.add_assign(&g.backward(loss)?);
    }
    total.scale(T::one() / T::from_usize(batch.len()).expect("batch size fits"));
    opt.step(model.params_mut(), &total, rate)?;
    Ok(loss_sum / batch.len() as f64)
}

/// Evaluates a model on raw samples.
pub fn evaluate_samples<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    samples: &[BuildingSample],
    input: &InputSpec,
) -> Result<EvalReport> {
    let prepared: Vec<PreparedSample<T>> = samples.iter().map(|s| input.prepare(s)).collect::<Result<_>>()?;
    for x in &prepared {
        model.check_input(x)?;
    }
    evaluate(model, &prepared)
}
