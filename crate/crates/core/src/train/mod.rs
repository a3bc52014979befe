//! Initialization, optimization, checkpoints and the training loop.

mod adadelta;
mod checkpoint;
mod init;

use std::io::Write;
use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adadelta::AdaDelta;
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use init::{gaussian, init_param, init_param_with_std, init_params, init_params_with_std, orthogonal, INIT_STD};

use crate::data::{EncodedPair, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::eval::bleu4;
use crate::memory::{FORGET_NAME, UPDATE_NAME};
use crate::model::{ModelParams, Variant};
use crate::nn::Dropout;
use crate::params::ParamKind;
use crate::search::greedy_decode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Pairs with a longer side (in words) are dropped before training.
    pub max_sentence_length: usize,
    pub dropout_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a dev improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub rho: f64,
    pub eps: f64,
    /// Record wall-clock seconds in the log. Off by default so that logs of
    /// identical runs are byte-identical.
    pub log_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 80,
            max_sentence_length: 50,
            dropout_rate: 0.5,
            max_epochs: 10,
            patience: 3,
            seed: 1234,
            clip_norm: Some(1.0),
            rho: AdaDelta::DEFAULT_RHO,
            eps: AdaDelta::DEFAULT_EPS,
            log_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_sentence_length == 0 {
            return Err(Error::Config("max_sentence_length must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Dev sentences with their surface references and the target vocabulary
/// used to render hypotheses.
#[derive(Clone, Debug)]
pub struct DevSet {
    pub sources: Vec<Vec<usize>>,
    pub references: Vec<Vec<String>>,
    pub vocab: Vocabulary,
}

/// Greedy-decode length limit for a source of `n` ids.
pub fn default_max_len(n: usize) -> usize {
    2 * n + 10
}

#[derive(Clone, Debug, PartialEq)]
pub struct DevScore {
    pub bleu: f64,
    /// Fraction of hypotheses identical to their reference.
    pub accuracy: f64,
}

/// Greedy-decodes every dev source and scores the result.
pub fn evaluate(params: &ModelParams, dev: &DevSet) -> Result<DevScore> {
    let hyps = dev
        .sources
        .par_iter()
        .map(|src| greedy_decode(params, src, default_max_len(src.len())).map(|h| dev.vocab.decode(&h.tokens)))
        .collect::<Result<Vec<_>>>()?;
    let exact = hyps.iter().zip(&dev.references).filter(|(h, r)| h == r).count();
    Ok(DevScore {
        bleu: bleu4(&hyps, &dev.references)?,
        accuracy: exact as f64 / hyps.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub dev_bleu: f64,
    pub dev_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epoch,mean_train_loss,dev_bleu,seconds")?;
        for r in &self.records {
            writeln!(out, "{},{:.6},{:.4},{:.3}", r.epoch, r.mean_train_loss, r.dev_bleu, r.seconds)?;
        }
        Ok(())
    }

    /// First epoch whose dev BLEU reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.dev_bleu >= target).map(|r| r.epoch)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best dev BLEU seen.
    pub best: Checkpoint,
    /// Parameters after the final epoch.
    pub last: ModelParams,
    pub log: TrainLog,
    pub stopped_by_observer: bool,
}

/// Drops pairs with a side longer than `max_len` words (EOS excluded).
pub fn filter_pairs(pairs: &[EncodedPair], max_len: usize) -> Vec<EncodedPair> {
    let words = |s: &[usize]| s.iter().filter(|&&t| t != EOS).count();
    pairs
        .iter()
        .filter(|p| words(&p.src) <= max_len && words(&p.tgt) <= max_len)
        .cloned()
        .collect()
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Per-sentence dropout stream, a function of (seed, epoch, position).
fn dropout_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

/// Summed per-sentence losses and mean gradient of one mini-batch.
fn batch_gradients(
    params: &ModelParams,
    batch: &[(usize, &EncodedPair)],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_sentence = batch
        .par_iter()
        .map(|&(pos, pair)| {
            let mut rng = dropout_rng(cfg.seed, epoch, pos);
            let dropout = (cfg.dropout_rate > 0.0).then(|| Dropout {
                rate: cfg.dropout_rate,
                rng: &mut rng,
            });
            params.loss_and_gradients(&pair.src, &pair.tgt, dropout)
        })
        .collect::<Result<Vec<_>>>()?;
    // Fixed reduction order keeps the sum independent of thread scheduling.
    let mut total_loss = 0.0;
    let mut sum: Vec<Vec<f64>> = params.store.tensors().map(|t| vec![0.0; t.len()]).collect();
    for (loss, grads) in per_sentence {
        total_loss += loss;
        for (acc, g) in sum.iter_mut().zip(grads) {
            acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    sum.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((total_loss, sum))
}

/// Mini-batch AdaDelta training with per-epoch greedy dev evaluation.
///
/// `observe` runs after every epoch with that epoch's record and the current
/// parameters; returning `ControlFlow::Break` ends training early.
pub fn train<F>(
    init: ModelParams,
    pairs: &[EncodedPair],
    dev: &DevSet,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &ModelParams) -> ControlFlow<()>,
{
    cfg.validate()?;
    let data = filter_pairs(pairs, cfg.max_sentence_length);
    if data.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no training pairs left after length filtering ({} of {} dropped at max_sentence_length {})",
            pairs.len(),
            pairs.len(),
            cfg.max_sentence_length
        )));
    }
    if dev.sources.is_empty() {
        return Err(Error::EmptyInput("dev set".into()));
    }

    let mut params = init;
    let mut opt = AdaDelta::new(params.store.tensors().map(|t| t.data()), cfg.rho, cfg.eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut stopped_by_observer = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(usize, &EncodedPair)> = chunk
                .iter()
                .enumerate()
                .map(|(i, &k)| (b * cfg.batch_size + i, &data[k]))
                .collect();
            let (loss, mut grads) = batch_gradients(&params, &batch, cfg, epoch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    index: b,
                    context: format!("training loss of batch {b} in epoch {epoch}"),
                });
            }
            loss_sum += loss;
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let deltas = opt.step(&grads)?;
            for (p, d) in params.store.iter_mut().zip(deltas) {
                p.tensor.data_mut().iter_mut().zip(d).for_each(|(v, d)| *v += d);
            }
        }
        let score = evaluate(&params, dev)?;
        let record = EpochRecord {
            epoch,
            mean_train_loss: loss_sum / data.len() as f64,
            dev_bleu: score.bleu,
            dev_accuracy: score.accuracy,
            seconds: if cfg.log_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log.records.push(record.clone());

        if best.as_ref().is_none_or(|b| score.bleu > b.dev_bleu) {
            let mut ck = Checkpoint::new(params.clone());
            ck.epoch = epoch;
            ck.dev_bleu = score.bleu;
            best = Some(ck);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if observe(&record, &params).is_break() {
            stopped_by_observer = true;
            break;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        last: params,
        log,
        stopped_by_observer,
    })
}

/// Which tensors a transfer copied and which it initialized afresh.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub fresh: Vec<String>,
}

/// Builds interactive-variant parameters from a trained improved model:
/// every shared tensor is copied bit-exactly and the write projections are
/// drawn from `N(0, 0.01²)`.
pub fn transfer_init<R: Rng + ?Sized>(base: &ModelParams, rng: &mut R) -> Result<(ModelParams, TransferReport)> {
    if base.config.variant != Variant::Improved {
        return Err(Error::Param(format!(
            "transfer requires an improved-variant base, got {}",
            base.config.variant
        )));
    }
    let mut target = ModelParams::zeros(base.config.with_variant(Variant::Interactive))?;
    let mut report = TransferReport {
        copied: Vec::new(),
        fresh: Vec::new(),
    };
    for p in target.store.iter_mut() {
        match base.store.get(&p.name) {
            Some(src) => {
                if src.shape() != p.tensor.shape() {
                    return Err(Error::Param(format!(
                        "shared tensor {} has shape {:?} in the base but {:?} in the target",
                        p.name,
                        src.shape(),
                        p.tensor.shape()
                    )));
                }
                p.tensor.data_mut().copy_from_slice(src.data());
                report.copied.push(p.name.clone());
            }
            None if p.name == FORGET_NAME || p.name == UPDATE_NAME => {
                debug_assert_eq!(p.kind, ParamKind::Weight);
                init_param(p, rng)?;
                report.fresh.push(p.name.clone());
            }
            None => return Err(Error::Param(format!("base model lacks shared tensor {}", p.name))),
        }
    }
    if let Some(extra) = base.store.names().find(|n| !target.store.contains(n)) {
        return Err(Error::Param(format!("base tensor {extra} has no counterpart in the target")));
    }
    Ok((target, report))
}
