//! Fine-tuning loop: summed per-dimension MSE, AdamW with linear warmup and
//! decay, global-norm clipping, and early stopping on validation RMSE_VA.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::AspectInstance;
use crate::error::{Error, Result};
use crate::metrics::rmse_va;
use crate::model::{DimAsrModel, Encoder};
use crate::nn::zero_grads;
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig};
use crate::seed::{stream_rng, DROPOUT, SHUFFLE};
use crate::va::VaPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// When false, training always runs `max_epochs` epochs.
    pub early_stopping: bool,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 2e-5,
            warmup_ratio: 0.1,
            dropout: 0.1,
            max_epochs: 10,
            patience: 3,
            early_stopping: true,
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            seed: 42,
            max_len: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.max_len == 0 {
            return fail("batch_size, max_epochs, patience and max_len must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return fail(format!("warmup_ratio {} must lie in [0, 1)", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.patience > self.max_epochs {
            return fail(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return fail(format!("grad_clip_norm {} must be positive", self.grad_clip_norm));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_ratio * total_steps as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse_va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse_va: f64,
    pub stopped_early: bool,
    pub total_steps: usize,
}

/// `MSE(V) + MSE(A)` over paired predictions and gold labels.
pub fn compute_loss(preds: &[VaPair], golds: &[VaPair]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    let n = preds.len() as f64;
    let (sv, sa) = preds.iter().zip(golds).fold((0.0, 0.0), |(sv, sa), (p, g)| {
        let dv = p.valence() - g.valence();
        let da = p.arousal() - g.arousal();
        (sv + dv * dv, sa + da * da)
    });
    Ok(sv / n + sa / n)
}

/// Learning rate before optimizer step `step` (0-based): a linear ramp to
/// the peak over the warmup steps, then linear decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let peak = config.learning_rate;
    let total = total_steps.max(1);
    let step = step.min(total);
    let warmup = config.warmup_steps(total);
    if step < warmup {
        peak * (step as f64 / warmup as f64)
    } else if warmup == total {
        peak
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    }
}

/// Patience counter with strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        let improved = match self.best {
            None => !value.is_nan(),
            Some((_, best)) => value < best,
        };
        if improved {
            self.best = Some((epoch, value));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let stop = self.patience.is_some_and(|p| self.since_best >= p);
        Verdict { improved, stop }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Scores the model after each epoch; lower is better.
pub trait Validator<E: Encoder> {
    fn validate(&mut self, model: &DimAsrModel<E>, epoch: usize) -> Result<f64>;
}

/// RMSE_VA on a labelled validation set.
pub struct RmseValidator<'a> {
    instances: &'a [AspectInstance],
    golds: Vec<VaPair>,
}

impl<'a> RmseValidator<'a> {
    pub fn new(instances: &'a [AspectInstance]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Data("validation set required".into()));
        }
        let golds = instances.iter().map(AspectInstance::require_gold).collect::<Result<_>>()?;
        Ok(Self { instances, golds })
    }
}

impl<E: Encoder> Validator<E> for RmseValidator<'_> {
    fn validate(&mut self, model: &DimAsrModel<E>, _epoch: usize) -> Result<f64> {
        rmse_va(&model.predict(self.instances)?, &self.golds)
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

pub fn fit<E: Encoder>(
    model: &mut DimAsrModel<E>,
    fit_set: &[AspectInstance],
    val_set: &[AspectInstance],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    let mut validator = RmseValidator::new(val_set)?;
    fit_with(model, fit_set, &mut validator, config, |_, _| Ok(()))
}

/// Full training loop. `on_epoch` sees every epoch record together with the
/// model as it stands at the end of that epoch. On return the model holds
/// the parameters of the best epoch.
pub fn fit_with<E, V, F>(
    model: &mut DimAsrModel<E>,
    fit_set: &[AspectInstance],
    validator: &mut V,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory>
where
    E: Encoder,
    V: Validator<E>,
    F: FnMut(&EpochRecord, &DimAsrModel<E>) -> Result<()>,
{
    config.validate()?;
    if fit_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for inst in fit_set {
        inst.require_gold()?;
    }
    let per_epoch = steps_per_epoch(fit_set.len(), config.batch_size);
    let total_steps = per_epoch * config.max_epochs;
    let mut optimizer = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE);
    let mut dropout_rng = stream_rng(config.seed, DROPOUT);
    let mut order: Vec<usize> = (0..fit_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.early_stopping.then_some(config.patience));
    let mut best_params = model.snapshot();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&AspectInstance> = chunk.iter().map(|&i| &fit_set[i]).collect();
            zero_grads(&mut model.params_mut());
            let pairs = model.accumulate_gradients(&batch, &mut dropout_rng)?;
            let (preds, golds): (Vec<VaPair>, Vec<VaPair>) = pairs.into_iter().unzip();
            let loss = compute_loss(&preds, &golds)?;
            let mut params = model.params_mut();
            let norm = clip_grad_norm(&mut params, config.grad_clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                let first = batch.first().map(|i| i.key().to_string()).unwrap_or_default();
                return Err(Error::Training(format!(
                    "non-finite loss {loss} (gradient norm {norm}) at epoch {epoch}, step {step}, batch starting at {first}"
                )));
            }
            optimizer.step(&mut params, lr_at(step, total_steps, config));
            step += 1;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / fit_set.len() as f64;
        let val = validator.validate(model, epoch)?;
        if !val.is_finite() {
            return Err(Error::Training(format!("non-finite validation score {val} at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_rmse_va: val,
        };
        log::info!("epoch {epoch}: train_loss {train_loss:.4} val_rmse_va {val:.4}");
        on_epoch(&record, model)?;
        epochs.push(record);
        let verdict = stopper.observe(epoch, val);
        if verdict.improved {
            best_params = model.snapshot();
        }
        if verdict.stop && epoch < config.max_epochs {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val) = stopper.best().expect("at least one finite epoch");
    if best_epoch != epochs.len() {
        model.restore(&best_params);
    }
    Ok(TrainHistory {
        epochs,
        best_epoch,
        best_val_rmse_va: best_val,
        stopped_early,
        total_steps,
    })
}

#[derive(Debug)]
pub struct TrainAllSummary<T> {
    pub succeeded: Vec<(String, T)>,
    pub failed: Vec<(String, Error)>,
}

/// Runs independent jobs, each isolated from the others' failures. Results
/// keep the input order; jobs run concurrently when `parallel` is set.
pub fn train_all<T, F>(jobs: Vec<(String, F)>, parallel: bool) -> TrainAllSummary<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    let results: Vec<(String, Result<T>)> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(name, job)| (name, scope.spawn(job)))
                .collect();
            handles
                .into_iter()
                .map(|(name, h)| {
                    let r = h
                        .join()
                        .unwrap_or_else(|_| Err(Error::Training(format!("job {name} panicked"))));
                    (name, r)
                })
                .collect()
        })
    } else {
        jobs.into_iter().map(|(name, job)| (name, job())).collect()
    };
    let mut summary = TrainAllSummary {
        succeeded: Vec::new(),
        failed: Vec::new(),
    };
    for (name, r) in results {
        match r {
            Ok(v) => summary.succeeded.push((name, v)),
            Err(e) => {
                log::error!("{name}: {e}");
                summary.failed.push((name, e));
            }
        }
    }
    summary
}

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_rmse_va").expect("write to vec");
    for r in &history.epochs {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_rmse_va).expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
