//! Adam training loop with KL annealing and early stopping.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::checkpoint::{Checkpoint, ScheduleState};
use super::config::ModelConfig;
use super::model::{batch_loss, batch_loss_and_grad, Example, Grads, LossBreakdown, TermWeights};
use super::params::ModelParams;
use crate::corpus::dataset::FragmentDataset;
use crate::error::{Error, Result};

pub const MIN_FRAGMENTS: usize = 10;

// Independent random streams derived from the run seed.
const SPLIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Grads = params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.step_clipped(params, grads, None)
    }

    /// Rescales the gradient to global norm `clip` first when it is larger.
    pub fn step_clipped(&mut self, params: &mut ModelParams, grads: &Grads, clip: Option<f64>) {
        let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params.tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seeded shuffle of `0..n` cut into train / validation / test.
///
/// Validation and test sizes are rounded down; the remainder trains.
pub fn split_indices(n: usize, split: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, SPLIT_STREAM));
    let n_val = (n as f64 * split[1]).floor() as usize;
    let n_test = ((n as f64 * split[2]).floor() as usize).min(n - n_val);
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(idx.len() - n_val);
    [idx, val, test]
}

/// `n` latent codes with i.i.d. standard normal entries.
pub fn sample_latent(n: usize, latent_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub epoch: usize,
    pub split: String,
    pub loss: LossBreakdown,
}

pub const LEDGER_HEADER: &str = "epoch,split,melody_pitch,melody_rhythm,bass_pitch,bass_rhythm,tensile,diameter,kl,beta,total";

pub fn ledger_csv(rows: &[LedgerRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for r in rows {
        let l = &r.loss;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.split,
            l.melody_pitch,
            l.melody_rhythm,
            l.bass_pitch,
            l.bass_rhythm,
            opt(l.tensile),
            opt(l.diameter),
            l.kl,
            l.beta,
            l.total
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    NumericFailure,
}

pub struct TrainOutcome {
    /// Weights of the best monitored epoch (or the last good ones after a failure).
    pub checkpoint: Checkpoint,
    pub ledger: Vec<LedgerRow>,
    pub stop: StopReason,
    pub diagnostic: Option<String>,
    pub splits: [Vec<usize>; 3],
}

/// Loss of `ids` under a fixed noise stream, in batches of `batch_size`.
pub fn evaluate_loss(
    params: &ModelParams,
    data: &FragmentDataset,
    ids: &[usize],
    weights: &TermWeights,
    seed: u64,
) -> Result<Option<LossBreakdown>> {
    let mut rng = stream(seed, EVAL_STREAM);
    let mut parts = Vec::new();
    for chunk in ids.chunks(params.config.batch_size) {
        let examples: Vec<Example> = chunk.iter().map(|&i| Example::from(&data.fragments[i])).collect();
        let eps = noise(&mut rng, chunk.len(), params.config.latent_dim);
        parts.push((batch_loss(params, &examples, &eps, weights)?, chunk.len()));
    }
    Ok(LossBreakdown::weighted_mean(&parts))
}

pub fn train(data: &FragmentDataset, cfg: &ModelConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, |_| {})
}

/// Trains from a fresh initialization, calling `on_row` for each ledger row.
pub fn train_with(data: &FragmentDataset, cfg: &ModelConfig, mut on_row: impl FnMut(&LedgerRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < MIN_FRAGMENTS {
        return Err(Error::InvalidInput(format!("training needs at least {MIN_FRAGMENTS} fragments, got {}", data.len())));
    }
    let splits = split_indices(data.len(), cfg.split, cfg.rng_seed);
    let [train_ids, val_ids, test_ids] = &splits;
    if train_ids.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let mut params = ModelParams::init(cfg, cfg.rng_seed);
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut rng = stream(cfg.rng_seed, EPOCH_STREAM);
    let mut order = train_ids.clone();
    let mut schedule = ScheduleState::default();
    let mut best: Option<(f64, ModelParams, ScheduleState)> = None;
    let mut since_best = 0;
    let mut ledger = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut diagnostic = None;
    let weights_at = |beta: f64| TermWeights::standard(beta, cfg.predict_tensile, cfg.predict_diameter);

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let examples: Vec<Example> = chunk.iter().map(|&i| Example::from(&data.fragments[i])).collect();
            let eps = noise(&mut rng, chunk.len(), cfg.latent_dim);
            let weights = weights_at(cfg.beta_at(schedule.global_batch));
            let step = batch_loss_and_grad(&params, &examples, &eps, &weights).and_then(|(loss, grads)| {
                if grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
                    Ok((loss, grads))
                } else {
                    Err(Error::NumericFailure { layer: "gradients".into(), detail: "non-finite gradient".into() })
                }
            });
            let (loss, grads) = match step {
                Ok(ok) => ok,
                Err(e @ Error::NumericFailure { .. }) => {
                    diagnostic = Some(format!("epoch {epoch}, optimizer step {}: {e}", schedule.global_batch));
                    stop = StopReason::NumericFailure;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            adam.step_clipped(&mut params, &grads, cfg.grad_clip);
            if !params.all_finite() {
                diagnostic = Some(format!("epoch {epoch}, optimizer step {}: weights became non-finite", schedule.global_batch));
                stop = StopReason::NumericFailure;
                break 'epochs;
            }
            schedule.global_batch += 1;
            parts.push((loss, chunk.len()));
        }
        schedule.epochs_run = epoch;
        let train_loss = LossBreakdown::weighted_mean(&parts).expect("non-empty training split");
        let mut rows = vec![LedgerRow { epoch, split: "train".into(), loss: train_loss }];
        let mut monitored = train_loss.total;
        if !val_ids.is_empty() {
            let beta = cfg.beta_at(schedule.global_batch);
            let val = evaluate_loss(&params, data, val_ids, &weights_at(beta), cfg.rng_seed)?.expect("non-empty");
            monitored = val.total;
            rows.push(LedgerRow { epoch, split: "validation".into(), loss: val });
        }
        for r in rows {
            on_row(&r);
            ledger.push(r);
        }
        if !monitored.is_finite() {
            diagnostic = Some(format!("epoch {epoch}: monitored loss is {monitored}"));
            stop = StopReason::NumericFailure;
            break;
        }
        if best.as_ref().map_or(true, |(b, _, _)| monitored < *b) {
            let mut snapshot = schedule.clone();
            snapshot.best_epoch = epoch;
            snapshot.trained = true;
            best = Some((monitored, params.clone(), snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }

    let (params, mut schedule) = match best {
        Some((_, p, s)) => (p, s),
        // Failed during the first epoch: the initialization is the last good state.
        None => (ModelParams::init(cfg, cfg.rng_seed), ScheduleState::default()),
    };
    schedule.epochs_run = ledger.last().map_or(0, |r| r.epoch);
    if !test_ids.is_empty() && stop != StopReason::NumericFailure {
        let beta = cfg.beta_at(schedule.global_batch);
        let test = evaluate_loss(&params, data, test_ids, &weights_at(beta), cfg.rng_seed)?.expect("non-empty");
        let row = LedgerRow { epoch: schedule.best_epoch, split: "test".into(), loss: test };
        on_row(&row);
        ledger.push(row);
    }
    Ok(TrainOutcome { checkpoint: Checkpoint { params, schedule }, ledger, stop, diagnostic, splits })
}
