//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.

#![allow(dead_code)]

use std::collections::HashSet;

use rarelm::neural::NeuralLm;

pub const BOS: usize = 0;

/// Direct evaluation of interpolated modified Kneser-Ney probabilities by
/// rescanning the raw sentences for every count it needs.
pub struct KnOracle {
    sents: Vec<Vec<usize>>,
    order: usize,
    vocab_size: usize,
    discounts: Vec<[f64; 3]>,
}

impl KnOracle {
    pub fn new(sents: &[Vec<usize>], order: usize, vocab_size: usize) -> Self {
        let mut o = KnOracle { sents: sents.to_vec(), order, vocab_size, discounts: Vec::new() };
        o.discounts = (1..=order).map(|n| o.estimate_discounts(n)).collect();
        o
    }

    /// Occurrences of `g` whose final token is a predicted (non-`<s>`) word.
    fn raw(&self, g: &[usize]) -> u64 {
        let n = g.len();
        let mut c = 0;
        for s in &self.sents {
            for end in 0..s.len() {
                if end + 1 >= n && s[end] != BOS && &s[end + 1 - n..=end] == g {
                    c += 1;
                }
            }
        }
        c
    }

    fn left_extensions(&self, g: &[usize]) -> u64 {
        let n = g.len();
        let mut seen = HashSet::new();
        for s in &self.sents {
            for end in 0..s.len() {
                if end >= n && s[end] != BOS && &s[end + 1 - n..=end] == g {
                    seen.insert(s[end - n]);
                }
            }
        }
        seen.len() as u64
    }

    /// The count used at order `g.len()`.
    fn count(&self, g: &[usize]) -> u64 {
        if g.len() == self.order || g[0] == BOS {
            self.raw(g)
        } else {
            self.left_extensions(g)
        }
    }

    fn all_ngrams(&self, n: usize) -> HashSet<Vec<usize>> {
        let mut out = HashSet::new();
        for s in &self.sents {
            for end in 0..s.len() {
                if end + 1 >= n && s[end] != BOS {
                    out.insert(s[end + 1 - n..=end].to_vec());
                }
            }
        }
        out
    }

    fn estimate_discounts(&self, n: usize) -> [f64; 3] {
        let mut coc = [0f64; 4];
        for g in self.all_ngrams(n) {
            let c = self.count(&g);
            if (1..=4).contains(&c) {
                coc[c as usize - 1] += 1.0;
            }
        }
        let fallback = [0.75; 3];
        if coc.iter().any(|&x| x == 0.0) {
            return fallback;
        }
        let y = coc[0] / (coc[0] + 2.0 * coc[1]);
        let d = [
            1.0 - 2.0 * y * coc[1] / coc[0],
            2.0 - 3.0 * y * coc[2] / coc[1],
            3.0 - 4.0 * y * coc[3] / coc[2],
        ];
        let ok = d.iter().enumerate().all(|(k, &v)| v.is_finite() && v > 0.0 && v <= (k + 1) as f64);
        if ok {
            d
        } else {
            fallback
        }
    }

    fn discount(&self, n: usize, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.discounts[n - 1][0],
            2 => self.discounts[n - 1][1],
            _ => self.discounts[n - 1][2],
        }
    }

    /// `P(w | history)` with the history truncated to `order - 1` tokens.
    pub fn prob(&self, w: usize, history: &[usize]) -> f64 {
        if w == BOS {
            return 0.0;
        }
        let start = history.len().saturating_sub(self.order - 1);
        self.interp(w, &history[start..])
    }

    fn interp(&self, w: usize, h: &[usize]) -> f64 {
        let n = h.len() + 1;
        let mut total = 0u64;
        let mut nk = [0f64; 3];
        let mut cw = 0u64;
        for u in 0..self.vocab_size {
            if u == BOS {
                continue;
            }
            let mut g = h.to_vec();
            g.push(u);
            let c = self.count(&g);
            total += c;
            match c {
                0 => {}
                1 => nk[0] += 1.0,
                2 => nk[1] += 1.0,
                _ => nk[2] += 1.0,
            }
            if u == w {
                cw = c;
            }
        }
        let lower = if n == 1 { 1.0 / (self.vocab_size - 1) as f64 } else { self.interp(w, &h[1..]) };
        if total == 0 {
            return lower;
        }
        let d = &self.discounts[n - 1];
        let gamma = (d[0] * nk[0] + d[1] * nk[1] + d[2] * nk[2]) / total as f64;
        (cw as f64 - self.discount(n, cw)).max(0.0) / total as f64 + gamma * lower
    }
}

/// Exponential-time recursive edit distance.
pub fn brute_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edit_distance(ra, rb) + usize::from(x != y);
            let del = brute_edit_distance(ra, b) + 1;
            let ins = brute_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Straightforward evaluation of the centroid update for one column.
pub fn centroid(own: &[f64], candidates: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut out = own.to_vec();
    for (vec, weight) in candidates {
        for (o, v) in out.iter_mut().zip(vec) {
            *o += weight * v;
        }
    }
    let denom = (candidates.len() + 1) as f64;
    out.iter().map(|v| v / denom).collect()
}

/// Total negative natural-log likelihood via the single-step scoring path.
pub fn nll(m: &NeuralLm, ids: &[usize]) -> f64 {
    -m.position_log_probs(ids).unwrap().iter().sum::<f64>()
}

/// Worst relative error between the analytic gradients and central
/// differences, per parameter group `S`, `W`, `b`, `U`.
pub fn gradient_check(m: &NeuralLm, ids: &[usize], eps: f64) -> [f64; 4] {
    use ndarray::{Array1, Array2};
    let (_, grads) = rarelm::neural::sequence_loss_and_gradients(m, ids).unwrap();
    let analytic: [Vec<f64>; 4] = [
        grads.s.iter().copied().collect(),
        grads.w.iter().copied().collect(),
        grads.b.iter().copied().collect(),
        grads.u.iter().copied().collect(),
    ];
    let parts = || {
        (
            m.input_embeddings().to_owned(),
            m.gate_weights().to_owned(),
            m.gate_bias().to_owned(),
            m.output_embeddings().to_owned(),
        )
    };
    let rebuild = |s: Array2<f64>, w: Array2<f64>, b: Array1<f64>, u: Array2<f64>| {
        NeuralLm::from_parts(m.vocab().clone(), s, w, b, u).unwrap()
    };
    let mut worst = [0.0f64; 4];
    for group in 0..4 {
        let len = analytic[group].len();
        for k in 0..len {
            let loss_at = |delta: f64| {
                let (mut s, mut w, mut b, mut u) = parts();
                match group {
                    0 => s.as_slice_mut().unwrap()[k] += delta,
                    1 => w.as_slice_mut().unwrap()[k] += delta,
                    2 => b.as_slice_mut().unwrap()[k] += delta,
                    _ => u.as_slice_mut().unwrap()[k] += delta,
                }
                nll(&rebuild(s, w, b, u), ids)
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let a = analytic[group][k];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / denom };
            worst[group] = worst[group].max(rel);
        }
    }
    worst
}
