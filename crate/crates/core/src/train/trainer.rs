use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{smoothed_ce_graph, Adam, LrSchedule};
use crate::data::vocab::{Padded, BOS, EOS};
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::model::{length_sorted_chunks, Flavor, Forward, ModelParams, EMBED, INFERENCE_BATCH};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on padded positions per batch (`sentences × longest side`).
    pub batch_tokens: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub label_smoothing: f64,
    pub patience_epochs: usize,
    pub average_last_k: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Rescales the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Fills `wall_seconds` in the loss curve. Off by default so reruns
    /// produce byte-identical curve files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_tokens: 512,
            warmup_steps: 400,
            peak_lr: 1e-3,
            label_smoothing: 0.1,
            patience_epochs: 5,
            average_last_k: 5,
            max_epochs: 30,
            seed: 1,
            clip_norm: None,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Reference settings at full scale; not runnable on a desk machine.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_tokens: 65536,
            warmup_steps: 4000,
            peak_lr: 0.0014,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_tokens == 0 || self.warmup_steps == 0 || self.average_last_k == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "batch_tokens, warmup_steps, average_last_k and max_epochs must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::invalid("peak_lr must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self, model_dim: usize) -> LrSchedule {
        LrSchedule::with_peak(model_dim, self.warmup_steps, self.peak_lr)
    }
}

/// One line of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub lr: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub adam: Adam,
    /// End-of-epoch snapshots, oldest first, at most `average_last_k`.
    pub recent: VecDeque<ModelParams>,
    pub best_valid: Option<f64>,
    pub best_epoch: usize,
}

/// Decoder inputs, per-position targets and target lengths for a batch.
fn batch_targets(flavor: Flavor, pairs: &[&Pair]) -> Result<(Padded, Vec<usize>, Vec<usize>)> {
    let src = Padded::new(&pairs.iter().map(|p| p.src.as_slice()).collect::<Vec<_>>());
    let gold: Vec<Vec<usize>> = match flavor {
        Flavor::Ar => pairs.iter().map(|p| p.tgt.iter().copied().chain([EOS]).collect()).collect(),
        Flavor::Nar => {
            if pairs.iter().any(|p| p.tgt.is_empty()) {
                return Err(Error::Empty("student target"));
            }
            pairs.iter().map(|p| p.tgt.clone()).collect()
        }
    };
    let lens: Vec<usize> = gold.iter().map(Vec::len).collect();
    let gold = Padded::new(&gold);
    Ok((src, gold.ids, lens))
}

/// Smoothed cross-entropy of a batch under `fw`: teacher forcing for the
/// autoregressive flavor, gold target lengths for the parallel one.
pub fn batch_loss(fw: &mut Forward<'_>, pairs: &[&Pair], epsilon: f64) -> Result<(Var, usize)> {
    if pairs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let flavor = fw.params().config().flavor;
    let (src, targets, lens) = batch_targets(flavor, pairs)?;
    let enc = fw.encoder(&src)?;
    let logits = match flavor {
        Flavor::Ar => {
            let dec_in: Vec<Vec<usize>> = pairs
                .iter()
                .map(|p| std::iter::once(BOS).chain(p.tgt.iter().copied()).collect())
                .collect();
            fw.ar_logits(enc, &src.lens, &Padded::new(&dec_in))?
        }
        Flavor::Nar => fw.nar_logits(enc, &src.lens, &lens)?,
    };
    smoothed_ce_graph(&mut fw.g, logits, &targets, epsilon)
}

/// Token-weighted mean loss over a corpus, without dropout.
pub fn corpus_loss(params: &ModelParams, pairs: &[Pair], epsilon: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let tgts: Vec<&[usize]> = pairs.iter().map(|p| p.tgt.as_slice()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in length_sorted_chunks(&tgts, INFERENCE_BATCH) {
        let batch: Vec<&Pair> = chunk.iter().map(|&i| &pairs[i]).collect();
        let mut fw = Forward::inference(params);
        let (loss, n) = batch_loss(&mut fw, &batch, epsilon)?;
        total += fw.g.value(loss).item() * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

/// Splits a shuffled corpus into batches of similar length that respect the
/// token budget, then shuffles the batch order.
pub fn make_batches(pairs: &[Pair], batch_tokens: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let width = |p: &Pair| p.src.len().max(p.tgt.len() + 1).max(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    // stable sort keeps the shuffled order among equal widths
    order.sort_by_key(|&i| width(&pairs[i]));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut cur_w = 0;
    for i in order {
        let w = cur_w.max(width(&pairs[i]));
        if !cur.is_empty() && w * (cur.len() + 1) > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            cur_w = 0;
        }
        cur_w = cur_w.max(width(&pairs[i]));
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}

/// Optimizer plus bookkeeping; usable step by step or through [`train`].
pub struct Trainer {
    params: ModelParams,
    config: TrainConfig,
    schedule: LrSchedule,
    pub(crate) state: TrainState,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule(params.config().model_dim);
        Ok(Trainer {
            params,
            config,
            schedule,
            state: TrainState {
                step: 0,
                epoch: 0,
                adam: Adam::default(),
                recent: VecDeque::new(),
                best_valid: None,
                best_epoch: 0,
            },
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One Adam update on `batch`; returns the batch loss before the update
    /// and the number of scored positions.
    pub fn step(&mut self, batch: &[&Pair]) -> Result<(f64, usize)> {
        let step = self.state.step + 1;
        let dropout_seed = self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step as u64;
        let mut fw = Forward::training(&self.params, Some(dropout_seed));
        let (loss, count) = batch_loss(&mut fw, batch, self.config.label_smoothing)?;
        let value = fw.g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        fw.g.backward(loss)?;
        let handles: Vec<(String, Var)> = fw.bound().map(|(n, v)| (n.to_string(), v)).collect();
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, var) in handles {
            if let Some(g) = fw.g.take_grad(var) {
                grads.insert(name, g);
            }
        }
        drop(fw);
        if let Some(max) = self.config.clip_norm {
            let norm = grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
            if norm > max {
                for g in grads.values_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= max / norm);
                }
            }
        }
        let lr = self.schedule.lr(step);
        self.state.adam.update(&mut self.params, &grads, lr)?;
        self.state.step = step;
        Ok((value, count))
    }

    /// Runs one pass over `train`, snapshots the parameters and returns the
    /// token-weighted mean training loss.
    pub fn epoch(&mut self, train: &[Pair], rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for batch in make_batches(train, self.config.batch_tokens, rng) {
            let refs: Vec<&Pair> = batch.iter().map(|&i| &train[i]).collect();
            let (loss, n) = self.step(&refs)?;
            total += loss * n as f64;
            count += n;
        }
        self.state.epoch += 1;
        self.state.recent.push_back(self.params.clone());
        while self.state.recent.len() > self.config.average_last_k {
            self.state.recent.pop_front();
        }
        Ok(total / count.max(1) as f64)
    }

    /// Mean of the retained snapshots (the current parameters if none).
    pub fn averaged(&self) -> Result<ModelParams> {
        if self.state.recent.is_empty() {
            return Ok(self.params.clone());
        }
        let refs: Vec<&ModelParams> = self.state.recent.iter().collect();
        ModelParams::average(&refs)
    }

    /// Records a validation loss; returns true once `patience_epochs` epochs
    /// have passed without improving on the best value.
    pub fn observe_validation(&mut self, loss: f64) -> bool {
        if self.state.best_valid.is_none_or(|b| loss < b) {
            self.state.best_valid = Some(loss);
            self.state.best_epoch = self.state.epoch;
        }
        self.state.epoch - self.state.best_epoch >= self.config.patience_epochs
    }
}

pub struct TrainOutcome {
    /// Mean of the last `average_last_k` epoch snapshots.
    pub params: ModelParams,
    pub curve: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub steps: usize,
    pub best_epoch: usize,
}

/// Full training run. `on_epoch` sees each curve record as it is produced.
pub fn train(
    init: ModelParams,
    train_pairs: &[Pair],
    valid_pairs: &[Pair],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_pairs.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(init, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::new();
    let mut stopped_early = false;
    for _ in 0..config.max_epochs {
        let train_loss = trainer.epoch(train_pairs, &mut rng)?;
        let valid_loss = if valid_pairs.is_empty() {
            None
        } else {
            Some(corpus_loss(trainer.params(), valid_pairs, config.label_smoothing)?)
        };
        let record = EpochRecord {
            epoch: trainer.state().epoch,
            train_loss,
            valid_loss,
            lr: trainer.schedule.lr(trainer.state().step),
            wall_seconds: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&record);
        curve.push(record);
        if let Some(v) = valid_loss {
            if trainer.observe_validation(v) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: trainer.averaged()?,
        curve,
        stopped_early,
        steps: trainer.state().step,
        best_epoch: trainer.state().best_epoch,
    })
}

/// Copies the embedding table and every encoder parameter of `teacher` into
/// `student`; everything else in `student` is left as initialized.
pub fn init_student_from_teacher(teacher: &ModelParams, mut student: ModelParams) -> Result<ModelParams> {
    if !teacher.config().encoder_compatible(student.config()) {
        return Err(Error::invalid(
            "teacher and student differ in encoder dimensions or vocabulary",
        ));
    }
    for (name, t) in teacher.iter() {
        if name == EMBED || name.starts_with("encoder.") {
            let dst = student
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("student lacks parameter {name}")))?;
            if dst.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "init_student_from_teacher",
                    lhs: t.shape().to_vec(),
                    rhs: dst.shape().to_vec(),
                });
            }
            *dst = t.clone();
        }
    }
    Ok(student)
}
