//! Per-sentence SGD with global-norm clipping and early stopping on dev
//! BLEU.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{SequencePair, TokenId};
use crate::error::{Error, Result};
use crate::evaluation::bleu_tokens;
use crate::inference::greedy_decode;
use crate::model::{Model, ModelParams};
use crate::numerics::{axpy, ParamSet};
use crate::rng::XorShift64Star;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Global L2 norm threshold.
    pub clip: f64,
    pub max_epochs: usize,
    /// Epochs without a dev BLEU improvement before stopping.
    pub patience: usize,
    /// Pairs with a longer source or target are skipped.
    pub max_len: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            clip: 5.0,
            max_epochs: 10,
            patience: 2,
            max_len: 80,
            shuffle_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip threshold must be > 0, got {}", self.clip)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rescales every gradient by `threshold / norm` when the global norm
/// exceeds `threshold`. Returns the factor applied.
pub fn clip_gradients<P: ParamSet + ?Sized>(params: &mut P, threshold: f64) -> f64 {
    let norm = params.grad_norm();
    if norm <= threshold {
        return 1.0;
    }
    let factor = threshold / norm;
    for p in params.params_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
    }
    factor
}

/// `θ ← θ − lr·grad` for every parameter.
pub fn sgd_update<P: ParamSet + ?Sized>(params: &mut P, lr: f64) {
    for p in params.params_mut() {
        let g = p.grad.data().to_vec();
        axpy(-lr, &g, p.value.data_mut());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss_per_token: f64,
    pub dev_bleu: f64,
    /// Share of trained sentences whose gradient was clipped.
    pub clipped_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss_per_token,dev_bleu,clipped_fraction\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss_per_token, e.dev_bleu, e.clipped_fraction
            )
            .unwrap();
        }
        out
    }

    pub fn best_dev_bleu(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(0.0, |e| e.dev_bleu)
    }
}

/// Corpus BLEU of greedy translations against the pair targets.
pub fn greedy_bleu(model: &Model, pairs: &[SequencePair]) -> Result<f64> {
    let mut hyps: Vec<Vec<TokenId>> = Vec::with_capacity(pairs.len());
    for p in pairs {
        hyps.push(greedy_decode(model, &p.source)?.0.surface().to_vec());
    }
    let refs: Vec<Vec<TokenId>> = pairs.iter().map(|p| p.target_words().to_vec()).collect();
    bleu_tokens(&hyps, &refs)
}

/// One pass over `order`; returns `(loss per token, clipped fraction)`.
fn run_epoch(
    model: &mut Model,
    pairs: &[SequencePair],
    order: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut tokens, mut clipped, mut trained) = (0.0, 0usize, 0usize, 0usize);
    for &k in order {
        let pair = &pairs[k];
        if pair.source.len() > cfg.max_len || pair.target_words().len() > cfg.max_len {
            continue;
        }
        model.zero_grads();
        let l = model.accumulate_gradients(pair)?;
        if !l.is_finite() {
            return Err(Error::Divergence {
                epoch,
                sentence: k,
                loss: l,
            });
        }
        if clip_gradients(model, cfg.clip) < 1.0 {
            clipped += 1;
        }
        sgd_update(model, cfg.lr);
        loss += l;
        tokens += pair.target.len();
        trained += 1;
    }
    if trained == 0 {
        return Err(Error::Input(format!(
            "no training pair fits max_len = {}",
            cfg.max_len
        )));
    }
    Ok((loss / tokens as f64, clipped as f64 / trained as f64))
}

pub fn train(model: &mut Model, pairs: &[SequencePair], dev: &[SequencePair], cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, pairs, dev, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's dev evaluation.
/// On return `model` holds the parameters of the best dev epoch.
pub fn train_with(
    model: &mut Model,
    pairs: &[SequencePair],
    dev: &[SequencePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() || dev.is_empty() {
        return Err(Error::Input("training and dev corpora must be nonempty".into()));
    }
    for p in pairs.iter().chain(dev) {
        p.validate()?;
    }
    let mut rng = XorShift64Star::new(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let (loss, clipped) = run_epoch(model, pairs, &order, cfg, epoch)?;
        let dev_bleu = greedy_bleu(model, dev)?;
        let rec = EpochRecord {
            epoch,
            train_loss_per_token: loss,
            dev_bleu,
            clipped_fraction: clipped,
        };
        on_epoch(&rec);
        log.epochs.push(rec);
        log.stop_epoch = epoch;
        if best.as_ref().is_none_or(|(b, _)| dev_bleu > *b) {
            best = Some((dev_bleu, model.params.clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(log)
}
