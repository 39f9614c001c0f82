//! Batched forward and backward passes over a truncated-BPTT segment.
//!
//! Matrices hold one column per stream in the batch.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::NeuralLm;
use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_softmax(y: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = y.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + y.fold(0.0, |acc, &v| acc + (v - max).exp()).ln();
    y.mapv(|v| v - lse)
}

/// Gradients for every parameter group, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub s: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub u: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(m: &NeuralLm) -> Self {
        Gradients {
            s: Array2::zeros(m.s.dim()),
            w: Array2::zeros(m.w.dim()),
            b: Array1::zeros(m.b.dim()),
            u: Array2::zeros(m.u.dim()),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.s.iter().chain(&self.w).chain(&self.b).chain(&self.u)
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.s *= factor;
        self.w *= factor;
        self.b *= factor;
        self.u *= factor;
    }
}

/// Rescales `g` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if norm > max_norm && norm > 0.0 {
        g.scale(max_norm / norm);
    }
    norm
}

/// One truncated-BPTT segment over `B` parallel streams. All slices are
/// indexed `[t][b]`. A `reset` entry zeroes that stream's state before the
/// step; a `None` target contributes no loss.
pub(crate) struct Segment<'a> {
    pub inputs: &'a [Vec<usize>],
    pub targets: &'a [Vec<Option<usize>>],
    pub resets: &'a [Vec<bool>],
}

/// Inverted-dropout masks for one step: embedding (`d_s x B`) and hidden
/// output (`d_h x B`).
pub(crate) struct StepMasks {
    pub x: Array2<f64>,
    pub h: Array2<f64>,
}

pub(crate) struct SegmentOutput {
    /// Summed negative natural-log likelihood.
    pub loss: f64,
    pub count: usize,
    pub grads: Gradients,
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

struct StepCache {
    x: Array2<f64>,
    hp: Array2<f64>,
    cp: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tc: Array2<f64>,
    hd: Array2<f64>,
    probs: Array2<f64>,
}

fn zero_columns(m: &mut Array2<f64>, resets: &[bool]) {
    for (b, &r) in resets.iter().enumerate() {
        if r {
            m.column_mut(b).fill(0.0);
        }
    }
}

/// Forward and backward pass over one segment. Gradients are of
/// `loss_scale * summed loss`; the returned state is the state after the
/// last step, for carrying into the next segment.
pub(crate) fn forward_backward(
    m: &NeuralLm,
    seg: &Segment<'_>,
    h0: &Array2<f64>,
    c0: &Array2<f64>,
    masks: Option<&[StepMasks]>,
    loss_scale: f64,
) -> Result<SegmentOutput> {
    let d_s = m.embed_dim();
    let d_h = m.hidden_dim();
    let v = m.vocab_size();
    let steps = seg.inputs.len();
    let batch = h0.ncols();
    let wx = m.w.slice(s![.., ..d_s]);
    let wh = m.w.slice(s![.., d_s..]);
    let bias = m.b.view().insert_axis(Axis(1));

    let mut caches = Vec::with_capacity(steps);
    let mut h = h0.clone();
    let mut c = c0.clone();
    let mut loss = 0.0;
    let mut count = 0usize;
    for t in 0..steps {
        let mut x = Array2::zeros((d_s, batch));
        for (b, &tok) in seg.inputs[t].iter().enumerate() {
            if tok >= v {
                return Err(Error::Index { id: tok, size: v });
            }
            x.column_mut(b).assign(&m.s.column(tok));
        }
        if let Some(mk) = masks {
            x *= &mk[t].x;
        }
        let mut hp = h;
        let mut cp = c;
        zero_columns(&mut hp, &seg.resets[t]);
        zero_columns(&mut cp, &seg.resets[t]);

        let z = wx.dot(&x) + wh.dot(&hp) + &bias;
        let i = z.slice(s![..d_h, ..]).mapv(sigmoid);
        let f = z.slice(s![d_h..2 * d_h, ..]).mapv(sigmoid);
        let g = z.slice(s![2 * d_h..3 * d_h, ..]).mapv(f64::tanh);
        let o = z.slice(s![3 * d_h.., ..]).mapv(sigmoid);
        let c_new = &f * &cp + &i * &g;
        let tc = c_new.mapv(f64::tanh);
        let h_new = &o * &tc;
        let mut hd = h_new.clone();
        if let Some(mk) = masks {
            hd *= &mk[t].h;
        }
        let y = m.u.t().dot(&hd);
        let mut probs = Array2::zeros((v, batch));
        for b in 0..batch {
            let lp = log_softmax(y.column(b));
            if let Some(target) = seg.targets[t][b] {
                if target >= v {
                    return Err(Error::Index { id: target, size: v });
                }
                loss -= lp[target];
                count += 1;
            }
            probs.column_mut(b).assign(&lp.mapv(f64::exp));
        }
        caches.push(StepCache { x, hp, cp, i, f, g, o, tc, hd, probs });
        h = h_new;
        c = c_new;
    }

    let mut grads = Gradients::zeros_like(m);
    let mut dh_next: Array2<f64> = Array2::zeros((d_h, batch));
    let mut dc_next: Array2<f64> = Array2::zeros((d_h, batch));
    for t in (0..steps).rev() {
        let k = &caches[t];
        let mut dy = k.probs.clone();
        for b in 0..batch {
            match seg.targets[t][b] {
                Some(target) => dy[[target, b]] -= 1.0,
                None => dy.column_mut(b).fill(0.0),
            }
        }
        dy *= loss_scale;
        grads.u += &k.hd.dot(&dy.t());
        let mut dh = m.u.dot(&dy);
        if let Some(mk) = masks {
            dh *= &mk[t].h;
        }
        dh += &dh_next;

        let d_o = &dh * &k.tc;
        let mut dc = &dh * &k.o * &k.tc.mapv(|v| 1.0 - v * v);
        dc += &dc_next;
        let mut dz = Array2::zeros((4 * d_h, batch));
        Zip::from(dz.slice_mut(s![..d_h, ..]))
            .and(&dc)
            .and(&k.g)
            .and(&k.i)
            .for_each(|z, &dc, &g, &i| *z = dc * g * i * (1.0 - i));
        Zip::from(dz.slice_mut(s![d_h..2 * d_h, ..]))
            .and(&dc)
            .and(&k.cp)
            .and(&k.f)
            .for_each(|z, &dc, &cp, &f| *z = dc * cp * f * (1.0 - f));
        Zip::from(dz.slice_mut(s![2 * d_h..3 * d_h, ..]))
            .and(&dc)
            .and(&k.i)
            .and(&k.g)
            .for_each(|z, &dc, &i, &g| *z = dc * i * (1.0 - g * g));
        Zip::from(dz.slice_mut(s![3 * d_h.., ..]))
            .and(&d_o)
            .and(&k.o)
            .for_each(|z, &d, &o| *z = d * o * (1.0 - o));

        {
            let mut gw = grads.w.slice_mut(s![.., ..d_s]);
            gw += &dz.dot(&k.x.t());
        }
        {
            let mut gw = grads.w.slice_mut(s![.., d_s..]);
            gw += &dz.dot(&k.hp.t());
        }
        grads.b += &dz.sum_axis(Axis(1));

        let mut dx = wx.t().dot(&dz);
        if let Some(mk) = masks {
            dx *= &mk[t].x;
        }
        for (b, &tok) in seg.inputs[t].iter().enumerate() {
            let mut col = grads.s.column_mut(tok);
            col += &dx.column(b);
        }
        dh_next = wh.t().dot(&dz);
        dc_next = &dc * &k.f;
        zero_columns(&mut dh_next, &seg.resets[t]);
        zero_columns(&mut dc_next, &seg.resets[t]);
    }
    Ok(SegmentOutput { loss, count, grads, h, c })
}

/// Total negative natural-log likelihood of a framed sentence and its exact
/// gradient, without dropout, from a zero state.
pub fn sequence_loss_and_gradients(m: &NeuralLm, ids: &[usize]) -> Result<(f64, Gradients)> {
    let n = ids.len().saturating_sub(1);
    let inputs: Vec<Vec<usize>> = ids[..n].iter().map(|&w| vec![w]).collect();
    let targets: Vec<Vec<Option<usize>>> = ids[1..].iter().map(|&w| vec![Some(w)]).collect();
    let resets = vec![vec![false]; n];
    let seg = Segment { inputs: &inputs, targets: &targets, resets: &resets };
    let zeros = Array2::zeros((m.hidden_dim(), 1));
    let out = forward_backward(m, &seg, &zeros, &zeros, None, 1.0)?;
    Ok((out.loss, out.grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;

    #[test]
    fn clipping_bounds_global_norm() {
        let v = Vocabulary::from_entries([("a", 1u64)]).unwrap();
        let m = NeuralLm::init(&v, 2, 2, 1).unwrap();
        let (_, mut g) = sequence_loss_and_gradients(&m, &[0, 3, 1]).unwrap();
        let before = g.global_norm();
        assert!(before > 1e-3);
        for eps in [1e-6, 1e-3, 0.5 * before] {
            let mut gc = g.clone();
            clip_gradients(&mut gc, eps);
            assert!((gc.global_norm() - eps).abs() <= 1e-9);
        }
        let pre = clip_gradients(&mut g, 10.0 * before);
        assert_eq!(pre, before);
        assert!((g.global_norm() - before).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_stepwise_scoring() {
        let v = Vocabulary::from_entries([("a", 1u64), ("b", 1)]).unwrap();
        let m = NeuralLm::init(&v, 3, 4, 5).unwrap();
        let ids = [0, 3, 4, 3, 1];
        let (loss, _) = sequence_loss_and_gradients(&m, &ids).unwrap();
        let direct: f64 = -m.position_log_probs(&ids).unwrap().iter().sum::<f64>();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn batched_resets_match_independent_sentences() {
        let v = Vocabulary::from_entries([("a", 1u64), ("b", 1)]).unwrap();
        let m = NeuralLm::init(&v, 3, 4, 8).unwrap();
        // stream 0: "<s> a </s> <s> b", stream 1: "<s> b a </s> <s>"
        let inputs = vec![vec![0, 0], vec![3, 4], vec![1, 3], vec![0, 1], vec![4, 0]];
        let targets = vec![
            vec![Some(3), Some(4)],
            vec![Some(1), Some(3)],
            vec![None, Some(1)],
            vec![Some(4), None],
            vec![Some(1), Some(1)],
        ];
        let resets: Vec<Vec<bool>> = inputs.iter().map(|r| r.iter().map(|&x| x == 0).collect()).collect();
        let seg = Segment { inputs: &inputs, targets: &targets, resets: &resets };
        let h0 = Array2::from_elem((4, 2), 0.3);
        let out = forward_backward(&m, &seg, &h0, &h0, None, 1.0).unwrap();

        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(&m);
        for sent in [&[0, 3, 1][..], &[0, 4, 1], &[0, 4, 3, 1], &[0, 1]] {
            let (l, g) = sequence_loss_and_gradients(&m, sent).unwrap();
            loss += l;
            grads.s += &g.s;
            grads.w += &g.w;
            grads.b += &g.b;
            grads.u += &g.u;
        }
        assert_eq!(out.count, 8);
        assert!((out.loss - loss).abs() < 1e-10);
        let diff = |a: &Array2<f64>, b: &Array2<f64>| (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff(&out.grads.s, &grads.s) < 1e-10);
        assert!(diff(&out.grads.w, &grads.w) < 1e-10);
        assert!(diff(&out.grads.u, &grads.u) < 1e-10);
        assert!((&out.grads.b - &grads.b).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn log_softmax_is_stable() {
        let y = Array1::from(vec![1000.0, 1000.0, -1000.0]);
        let lp = log_softmax(y.view());
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
        assert!(lp.iter().all(|v| v.is_finite()));
    }
}
