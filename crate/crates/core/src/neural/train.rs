use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use log::info;
use serde::{Deserialize, Serialize};

use super::lstm::{clip_gradients, forward_backward, Segment, StepMasks};
use super::NeuralLm;
use crate::error::{Error, Result};
use crate::text::BOS_ID;

/// Hyperparameters for truncated-BPTT SGD training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub bptt_len: usize,
    pub dropout_p: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Learning-rate multiplier applied when the monitored perplexity does
    /// not improve.
    pub lr_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            clip_norm: 5.0,
            bptt_len: 32,
            dropout_p: 0.2,
            epochs: 20,
            seed: 1,
            lr_decay: 0.5,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        if self.bptt_len == 0 {
            return bad("bptt_len must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Running training perplexity (with dropout) over the epoch.
    pub train_ppl: f64,
    pub valid_ppl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NeuralLm,
    pub log: Vec<EpochLog>,
}

/// Parallel token streams cut from the shuffled, concatenated corpus.
struct Streams {
    inputs: Vec<Vec<usize>>,
    targets: Vec<Vec<Option<usize>>>,
    resets: Vec<Vec<bool>>,
}

fn build_streams(corpus: &[Vec<usize>], order: &[usize], batch: usize) -> Streams {
    let stream: Vec<usize> = order.iter().flat_map(|&i| corpus[i].iter().copied()).collect();
    let usable = stream.len().saturating_sub(1);
    let batch = batch.min(usable).max(1);
    let len = usable / batch;
    let mut inputs = vec![vec![0; batch]; len];
    let mut targets = vec![vec![None; batch]; len];
    let mut resets = vec![vec![false; batch]; len];
    for b in 0..batch {
        for t in 0..len {
            let pos = b * len + t;
            let x = stream[pos];
            let y = stream[pos + 1];
            inputs[t][b] = x;
            resets[t][b] = x == BOS_ID;
            targets[t][b] = (y != BOS_ID).then_some(y);
        }
    }
    Streams { inputs, targets, resets }
}

fn dropout_masks(rng: &mut ChaCha8Rng, p: f64, d_s: usize, d_h: usize, batch: usize, steps: usize) -> Vec<StepMasks> {
    let unit = Uniform::new(0.0f64, 1.0);
    let keep = 1.0 / (1.0 - p);
    let mut draw = |rows: usize| {
        Array2::from_shape_simple_fn((rows, batch), || if unit.sample(rng) < p { 0.0 } else { keep })
    };
    (0..steps)
        .map(|_| {
            let x = draw(d_s);
            let h = draw(d_h);
            StepMasks { x, h }
        })
        .collect()
}

/// Trains with truncated BPTT and plain SGD. Sentences are shuffled each
/// epoch, concatenated, and split into `batch_size` parallel streams; the
/// state is carried across segments and zeroed at every `<s>`.
/// `<s>` is never a prediction target.
///
/// The learning rate is multiplied by `lr_decay` after any epoch whose
/// perplexity (validation if given, otherwise running training) fails to
/// improve on the best so far. The returned parameters are rounded to `f32`.
pub fn train(
    mut model: NeuralLm,
    corpus: &[Vec<usize>],
    valid: Option<&[Vec<usize>]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.iter().all(|s| s.len() < 2) {
        return Err(Error::EmptyCorpus);
    }
    let d_s = model.embed_dim();
    let d_h = model.hidden_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let streams = build_streams(corpus, &order, cfg.batch_size);
        let batch = streams.inputs.first().map_or(1, Vec::len);
        let mut h = Array2::zeros((d_h, batch));
        let mut c = Array2::zeros((d_h, batch));
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;

        for (seg_idx, start) in (0..streams.inputs.len()).step_by(cfg.bptt_len).enumerate() {
            let end = (start + cfg.bptt_len).min(streams.inputs.len());
            let seg = Segment {
                inputs: &streams.inputs[start..end],
                targets: &streams.targets[start..end],
                resets: &streams.resets[start..end],
            };
            let count = seg.targets.iter().flatten().filter(|t| t.is_some()).count();
            let masks = (cfg.dropout_p > 0.0)
                .then(|| dropout_masks(&mut rng, cfg.dropout_p, d_s, d_h, batch, end - start));
            let scale = if count > 0 { 1.0 / count as f64 } else { 0.0 };
            let mut out = forward_backward(&model, &seg, &h, &c, masks.as_deref(), scale)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: seg_idx });
            }
            h = out.h;
            c = out.c;
            if count == 0 {
                continue;
            }
            epoch_loss += out.loss;
            epoch_count += out.count;
            clip_gradients(&mut out.grads, cfg.clip_norm);
            model.s.scaled_add(-lr, &out.grads.s);
            model.w.scaled_add(-lr, &out.grads.w);
            model.b.scaled_add(-lr, &out.grads.b);
            model.u.scaled_add(-lr, &out.grads.u);
            if !model.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: seg_idx });
            }
        }

        let train_ppl = if epoch_count > 0 { (epoch_loss / epoch_count as f64).exp() } else { f64::NAN };
        let valid_ppl = valid.map(|v| model.perplexity(v)).transpose()?;
        info!(
            "epoch {} lr {:.4} train ppl {:.2}{}",
            epoch + 1,
            lr,
            train_ppl,
            valid_ppl.map(|p| format!(" valid ppl {p:.2}")).unwrap_or_default()
        );
        log.push(EpochLog { epoch: epoch + 1, learning_rate: lr, train_ppl, valid_ppl });
        let monitored = valid_ppl.unwrap_or(train_ppl);
        if monitored < best {
            best = monitored;
        } else {
            lr *= cfg.lr_decay;
        }
    }
    model.round_to_f32();
    Ok(TrainOutcome { model, log })
}
