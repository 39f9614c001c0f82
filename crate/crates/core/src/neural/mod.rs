//! Word-level recurrent LSTM language model.
//!
//! A word id selects a column of the input embedding matrix `S` (`d_s x |V|`),
//! a single LSTM layer folds it into the context vector `h_t`, and the
//! output scores are `y_t = U^T h_t` with `U` of shape `d_h x |V|` and no
//! output bias, normalized by softmax. Gate parameters are stacked in the
//! order input, forget, cell, output: `W` is `4 d_h x (d_s + d_h)` acting on
//! `[s_t; h_{t-1}]`, `b` has length `4 d_h`.
//!
//! Parameters are held as `f64`. Initialization, training and checkpoint
//! loading all yield `f32`-representable values (the checkpoint storage
//! precision), so such models survive a save/load cycle unchanged.

mod checkpoint;
mod lstm;
mod train;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ngram::perplexity_with;
use crate::text::Vocabulary;

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::{clip_gradients, sequence_loss_and_gradients, Gradients};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

/// Paper-scale dimensions, for reference: `d_s = 300`, `d_h = 1000`.
pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_HIDDEN_DIM: usize = 64;

const INIT_RANGE: f32 = 0.05;

/// LSTM language model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLm {
    vocab: Vocabulary,
    s: Array2<f64>,
    w: Array2<f64>,
    b: Array1<f64>,
    u: Array2<f64>,
}

/// Recurrent state threaded explicitly between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LmState {
    pub fn zeros(hidden: usize) -> Self {
        LmState { h: Array1::zeros(hidden), c: Array1::zeros(hidden) }
    }
}

/// Dropout setting for a single forward step. Masks use inverted scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    Off,
    On { p: f64, seed: u64 },
}

fn round_f32(a: &mut [f64]) {
    for v in a {
        *v = *v as f32 as f64;
    }
}

impl NeuralLm {
    /// Random initialization: `S`, `W`, `U` uniform in `(-0.05, 0.05)`, gate
    /// bias zero except the forget-gate slice, which is 1.
    pub fn init(vocab: &Vocabulary, d_s: usize, d_h: usize, seed: u64) -> Result<Self> {
        if d_s == 0 || d_h == 0 {
            return Err(Error::Config("embedding and hidden sizes must be at least 1".into()));
        }
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-INIT_RANGE, INIT_RANGE);
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng) as f64)
        };
        let s = draw(d_s, v);
        let w = draw(4 * d_h, d_s + d_h);
        let u = draw(d_h, v);
        let mut b = Array1::zeros(4 * d_h);
        b.slice_mut(s![d_h..2 * d_h]).fill(1.0);
        Ok(NeuralLm { vocab: vocab.clone(), s, w, b, u })
    }

    /// Assembles a model from explicit parameters. Shapes must agree with
    /// the vocabulary and each other; values must be finite. Values are
    /// kept at full `f64` precision.
    pub fn from_parts(
        vocab: Vocabulary,
        s: Array2<f64>,
        w: Array2<f64>,
        b: Array1<f64>,
        u: Array2<f64>,
    ) -> Result<Self> {
        let v = vocab.len();
        let (d_s, d_h) = (s.nrows(), u.nrows());
        let bad = |what: &str| Err(Error::Config(format!("inconsistent parameter shapes: {what}")));
        if s.ncols() != v || u.ncols() != v {
            return bad("embedding columns must equal vocabulary size");
        }
        if w.dim() != (4 * d_h, d_s + d_h) {
            return bad("gate weights must be 4*d_h x (d_s + d_h)");
        }
        if b.len() != 4 * d_h {
            return bad("gate bias must have length 4*d_h");
        }
        let m = NeuralLm {
            vocab,
            s: s.as_standard_layout().into_owned(),
            w: w.as_standard_layout().into_owned(),
            b,
            u: u.as_standard_layout().into_owned(),
        };
        if !m.all_finite() {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(m)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Input embedding matrix `S` (`d_s x |V|`).
    pub fn input_embeddings(&self) -> ArrayView2<'_, f64> {
        self.s.view()
    }

    /// Output embedding matrix `U` (`d_h x |V|`).
    pub fn output_embeddings(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn gate_weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn gate_bias(&self) -> ArrayView1<'_, f64> {
        self.b.view()
    }

    pub(crate) fn embeddings_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.s, &mut self.u)
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.s.as_slice_mut().expect("standard layout"),
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            round_f32(p);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.s.iter().chain(&self.w).chain(&self.b).chain(&self.u).all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian bits of every parameter, in the
    /// order `S`, `W`, `b`, `U`.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.s.iter().chain(&self.w).chain(&self.b).chain(&self.u) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_word(&self, word: usize) -> Result<()> {
        if word >= self.vocab.len() {
            return Err(Error::Index { id: word, size: self.vocab.len() });
        }
        Ok(())
    }

    /// Recurrent update for one word; returns the new state and the hidden
    /// vector fed to the output layer (after dropout, if any).
    fn cell(&self, word: usize, st: &LmState, dropout: Dropout) -> (LmState, Array1<f64>) {
        let d_s = self.embed_dim();
        let d_h = self.hidden_dim();
        let mut x = self.s.column(word).to_owned();
        let mut masks = match dropout {
            Dropout::On { p, seed } if p > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let unit = Uniform::new(0.0f64, 1.0);
                let keep = 1.0 / (1.0 - p);
                let mx: Array1<f64> = (0..d_s)
                    .map(|_| if unit.sample(&mut rng) < p { 0.0 } else { keep })
                    .collect();
                let mh: Array1<f64> = (0..d_h)
                    .map(|_| if unit.sample(&mut rng) < p { 0.0 } else { keep })
                    .collect();
                Some((mx, mh))
            }
            _ => None,
        };
        if let Some((mx, _)) = &masks {
            x *= mx;
        }
        let z = self.w.slice(s![.., ..d_s]).dot(&x) + self.w.slice(s![.., d_s..]).dot(&st.h) + &self.b;
        let i = z.slice(s![..d_h]).mapv(lstm::sigmoid);
        let f = z.slice(s![d_h..2 * d_h]).mapv(lstm::sigmoid);
        let g = z.slice(s![2 * d_h..3 * d_h]).mapv(f64::tanh);
        let o = z.slice(s![3 * d_h..]).mapv(lstm::sigmoid);
        let c = &f * &st.c + &i * &g;
        let h = &o * &c.mapv(f64::tanh);
        let mut hd = h.clone();
        if let Some((_, mh)) = masks.take() {
            hd *= &mh;
        }
        (LmState { h, c }, hd)
    }

    fn log_softmax_scores(&self, hd: &Array1<f64>) -> Array1<f64> {
        let y = self.u.t().dot(hd);
        lstm::log_softmax(y.view())
    }

    /// One step: embed `word`, update the LSTM state, and return the
    /// next-word distribution together with the new state. The input state
    /// is not modified.
    pub fn forward_step(&self, word: usize, st: &LmState, dropout: Dropout) -> Result<(Array1<f64>, LmState)> {
        self.check_word(word)?;
        let (next, hd) = self.cell(word, st, dropout);
        let probs = self.log_softmax_scores(&hd).mapv(f64::exp);
        Ok((probs, next))
    }

    /// Natural-log next-word distribution after consuming `word`.
    pub fn step_log_probs(&self, word: usize, st: &LmState) -> Result<(Array1<f64>, LmState)> {
        self.check_word(word)?;
        let (next, hd) = self.cell(word, st, Dropout::Off);
        Ok((self.log_softmax_scores(&hd), next))
    }

    /// Natural-log probability of each predicted position of a framed
    /// sentence (`ids[1..]`), starting from a zero state.
    pub fn position_log_probs(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut st = LmState::zeros(self.hidden_dim());
        let mut out = Vec::with_capacity(ids.len().saturating_sub(1));
        for t in 0..ids.len().saturating_sub(1) {
            self.check_word(ids[t + 1])?;
            let (lp, next) = self.step_log_probs(ids[t], &st)?;
            out.push(lp[ids[t + 1]]);
            st = next;
        }
        Ok(out)
    }

    /// log10 probability of a `<s>`/`</s>`-framed sentence; `<s>` is only
    /// consumed, `</s>` is predicted.
    pub fn sentence_log10prob(&self, ids: &[usize]) -> Result<f64> {
        Ok(self.position_log_probs(ids)?.iter().sum::<f64>() / std::f64::consts::LN_10)
    }

    /// Perplexity under the same convention as the n-gram model.
    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let mut err = None;
        let ppl = perplexity_with(corpus, |ids| match self.sentence_log10prob(ids) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(ppl),
        }
    }

    /// L2 norms of column `id` in `S` and `U`.
    pub fn embedding_norms(&self, id: usize) -> (f64, f64) {
        let n = |m: &Array2<f64>| m.column(id).dot(&m.column(id)).sqrt();
        (n(&self.s), n(&self.u))
    }
}
