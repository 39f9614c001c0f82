//! Interpolated modified Kneser-Ney n-gram models stored in backoff form,
//! with ARPA import/export.
//!
//! Training counts raw occurrences at the highest order and continuation
//! counts (number of distinct left extensions) at lower orders, except for
//! n-grams that start with `<s>`, which keep their raw counts. The
//! interpolated estimate
//!
//! ```text
//! P(w|h) = max(c(hw) - D(c(hw)), 0) / c(h.) + gamma(h) * P(w|h')
//! gamma(h) = (D1 N1(h.) + D2 N2(h.) + D3+ N3+(h.)) / c(h.)
//! ```
//!
//! is folded into stored probabilities and backoff weights, so lookups use
//! the ordinary backoff recursion. The unigram level interpolates with the
//! uniform distribution over every word except `<s>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;

use crate::error::{Error, Result};
use crate::text::{Vocabulary, BOS_ID, UNK_ID};

/// log10 value used for impossible events (`<s>` as a predicted word).
pub const LOG10_ZERO: f64 = -99.0;

/// Discounts for counts of 1, 2 and 3 or more.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnDiscounts {
    pub d1: f64,
    pub d2: f64,
    pub d3plus: f64,
}

impl KnDiscounts {
    pub const FALLBACK: KnDiscounts = KnDiscounts { d1: 0.75, d2: 0.75, d3plus: 0.75 };

    pub fn for_count(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }

    /// Chen-Goodman estimate from counts-of-counts `n[k-1] = n_k`, k=1..4.
    /// Returns `None` when any `n_k` is zero or an estimate falls outside
    /// `(0, k]`.
    pub fn estimate(n: [u64; 4]) -> Option<KnDiscounts> {
        if n.iter().any(|&c| c == 0) {
            return None;
        }
        let [n1, n2, n3, n4] = n.map(|c| c as f64);
        let y = n1 / (n1 + 2.0 * n2);
        let d = KnDiscounts {
            d1: 1.0 - 2.0 * y * n2 / n1,
            d2: 2.0 - 3.0 * y * n3 / n2,
            d3plus: 3.0 - 4.0 * y * n4 / n3,
        };
        let ok = |v: f64, k: f64| v.is_finite() && v > 0.0 && v <= k;
        (ok(d.d1, 1.0) && ok(d.d2, 2.0) && ok(d.d3plus, 3.0)).then_some(d)
    }
}

/// How discounts are chosen during training.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscountSpec {
    /// Estimate per order from counts-of-counts.
    Estimate,
    /// Fixed discounts, one entry per order (index 0 is unigrams).
    Fixed(Vec<KnDiscounts>),
}

#[derive(Debug, Clone)]
pub struct KnConfig {
    pub order: usize,
    pub discounts: DiscountSpec,
    /// Drop n-grams of order >= 2 whose (adjusted) count is below this value.
    pub count_cutoff: Option<u64>,
}

impl Default for KnConfig {
    fn default() -> Self {
        KnConfig { order: 4, discounts: DiscountSpec::Estimate, count_cutoff: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log10_prob: f64,
    log10_backoff: f64,
}

/// A backoff n-gram model over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vocabulary,
    tables: Vec<HashMap<Vec<usize>, Entry>>,
    discounts: Vec<KnDiscounts>,
    warnings: Vec<String>,
}

type Counts = HashMap<Vec<usize>, u64>;

/// Raw n-gram counts for every order over `<s>`-framed sentences. `<s>` is
/// never counted as a predicted word.
fn raw_counts(corpus: &[Vec<usize>], order: usize) -> Vec<Counts> {
    let mut counts = vec![Counts::new(); order];
    for sent in corpus {
        for j in 0..sent.len() {
            if sent[j] == BOS_ID {
                continue;
            }
            for n in 1..=order.min(j + 1) {
                *counts[n - 1].entry(sent[j + 1 - n..=j].to_vec()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Counts used for estimation at each order: raw at the top order and for
/// n-grams starting with `<s>`, continuation counts elsewhere.
fn adjusted_counts(raw: &[Counts]) -> Vec<Counts> {
    let order = raw.len();
    let mut adjusted = vec![Counts::new(); order];
    adjusted[order - 1] = raw[order - 1].clone();
    for n in 1..order {
        let mut cont = Counts::new();
        for g in raw[n].keys() {
            *cont.entry(g[1..].to_vec()).or_insert(0) += 1;
        }
        for (g, &c) in &raw[n - 1] {
            let v = if g[0] == BOS_ID { c } else { cont.get(g).copied().unwrap_or(0) };
            adjusted[n - 1].insert(g.clone(), v);
        }
    }
    adjusted
}

fn counts_of_counts(counts: &Counts) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts.values() {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

#[derive(Default, Clone, Copy)]
struct ContextStats {
    total: u64,
    n: [u64; 3],
}

impl ContextStats {
    fn add(&mut self, count: u64) {
        self.total += count;
        match count {
            0 => {}
            1 => self.n[0] += 1,
            2 => self.n[1] += 1,
            _ => self.n[2] += 1,
        }
    }

    fn gamma(&self, d: &KnDiscounts) -> f64 {
        (d.d1 * self.n[0] as f64 + d.d2 * self.n[1] as f64 + d.d3plus * self.n[2] as f64)
            / self.total as f64
    }
}

/// Trains an interpolated modified Kneser-Ney model on `<s>`/`</s>`-framed
/// id sequences.
pub fn train_kn(corpus: &[Vec<usize>], vocab: &Vocabulary, cfg: &KnConfig) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if let Some(&bad) = corpus.iter().flatten().find(|&&id| id >= vocab.len()) {
        return Err(Error::Index { id: bad, size: vocab.len() });
    }
    let order = cfg.order;
    let raw = raw_counts(corpus, order);
    let mut adjusted = adjusted_counts(&raw);

    let mut warnings = Vec::new();
    let discounts: Vec<KnDiscounts> = match &cfg.discounts {
        DiscountSpec::Fixed(d) => {
            if d.len() != order {
                return Err(Error::Config(format!(
                    "expected {order} discount triples, got {}",
                    d.len()
                )));
            }
            d.clone()
        }
        DiscountSpec::Estimate => (0..order)
            .map(|n| {
                let coc = counts_of_counts(&adjusted[n]);
                KnDiscounts::estimate(coc).unwrap_or_else(|| {
                    let msg = format!(
                        "order {}: degenerate counts-of-counts {:?}, using fixed discount 0.75",
                        n + 1,
                        coc
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                    KnDiscounts::FALLBACK
                })
            })
            .collect(),
    };

    if let Some(cutoff) = cfg.count_cutoff {
        // Histories of retained n-grams are kept so their backoff weights
        // stay reachable.
        let mut histories: Vec<Vec<usize>> = Vec::new();
        for n in (1..order).rev() {
            let full = adjusted[n].clone();
            adjusted[n].retain(|_, c| *c >= cutoff);
            for h in histories.drain(..) {
                if let Some(&c) = full.get(&h) {
                    adjusted[n].entry(h).or_insert(c);
                }
            }
            histories = adjusted[n].keys().map(|g| g[..n].to_vec()).collect();
        }
    }

    let mut model = NGramModel {
        order,
        vocab: vocab.clone(),
        tables: vec![HashMap::new(); order],
        discounts: discounts.clone(),
        warnings,
    };

    // Unigrams: interpolate with the uniform distribution over predictable words.
    let mut root = ContextStats::default();
    for (g, &c) in &adjusted[0] {
        if g[0] != BOS_ID {
            root.add(c);
        }
    }
    let predictable = (vocab.len() - 1) as f64;
    let gamma_root = root.gamma(&discounts[0]);
    for id in 0..vocab.len() {
        let log10_prob = if id == BOS_ID {
            LOG10_ZERO
        } else {
            let c = adjusted[0].get(&vec![id]).copied().unwrap_or(0);
            let p = (c as f64 - discounts[0].for_count(c)).max(0.0) / root.total as f64
                + gamma_root / predictable;
            p.log10()
        };
        model.tables[0].insert(vec![id], Entry { log10_prob, log10_backoff: 0.0 });
    }

    for n in 1..order {
        let d = discounts[n];
        let mut stats: HashMap<&[usize], ContextStats> = HashMap::new();
        for (g, &c) in &adjusted[n] {
            stats.entry(&g[..n]).or_default().add(c);
        }
        let mut entries = Vec::with_capacity(adjusted[n].len());
        for (g, &c) in &adjusted[n] {
            let ctx = &stats[&g[..n]];
            let lower = model.log10_prob_ids(g[n], &g[1..n]);
            let p = (c as f64 - d.for_count(c)).max(0.0) / ctx.total as f64
                + ctx.gamma(&d) * 10f64.powf(lower);
            entries.push((g.clone(), p.log10()));
        }
        for (h, s) in &stats {
            let gamma = s.gamma(&d);
            match model.tables[n - 1].get_mut(*h) {
                Some(e) => e.log10_backoff = gamma.log10(),
                None => {
                    // Context that only occurs as a history; store it so its
                    // backoff weight is reachable.
                    let lp = model.log10_prob_ids(h[n - 1], &h[..n - 1]);
                    model.tables[n - 1]
                        .insert(h.to_vec(), Entry { log10_prob: lp, log10_backoff: gamma.log10() });
                }
            }
        }
        for (g, lp) in entries {
            model.tables[n].insert(g, Entry { log10_prob: lp, log10_backoff: 0.0 });
        }
    }
    Ok(model)
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn discounts(&self) -> &[KnDiscounts] {
        &self.discounts
    }

    /// Messages recorded during training (e.g. discount fallbacks).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of stored n-grams per order.
    pub fn ngram_counts(&self) -> Vec<usize> {
        self.tables.iter().map(HashMap::len).collect()
    }

    /// Stored `(log10 prob, log10 backoff)` for an explicit n-gram.
    pub fn entry(&self, ngram: &[usize]) -> Option<(f64, f64)> {
        let n = ngram.len();
        if n == 0 || n > self.order {
            return None;
        }
        self.tables[n - 1].get(ngram).map(|e| (e.log10_prob, e.log10_backoff))
    }

    fn log10_prob_ids(&self, word: usize, history: &[usize]) -> f64 {
        let word = if word < self.vocab.len() { word } else { UNK_ID };
        let start = history.len().saturating_sub(self.order - 1);
        let ctx = &history[start..];
        let mut key: Vec<usize> = Vec::with_capacity(ctx.len() + 1);
        let mut acc = 0.0;
        for s in 0..=ctx.len() {
            key.clear();
            key.extend_from_slice(&ctx[s..]);
            key.push(word);
            if let Some(e) = self.tables[key.len() - 1].get(key.as_slice()) {
                return acc + e.log10_prob;
            }
            if s < ctx.len() {
                if let Some(e) = self.tables[ctx.len() - s - 1].get(&ctx[s..]) {
                    acc += e.log10_backoff;
                }
            }
        }
        acc + LOG10_ZERO
    }

    /// `log10 P(word | history)`; histories longer than `order - 1` are
    /// truncated to their most recent ids.
    pub fn log10_prob(&self, word: usize, history: &[usize]) -> f64 {
        self.log10_prob_ids(word, history)
    }

    pub fn prob(&self, word: usize, history: &[usize]) -> f64 {
        10f64.powf(self.log10_prob(word, history))
    }

    /// Sum of log10 probabilities of every position after the leading `<s>`.
    pub fn sentence_log10prob(&self, ids: &[usize]) -> f64 {
        (1..ids.len()).map(|j| self.log10_prob(ids[j], &ids[..j])).sum()
    }

    /// Perplexity over framed sentences, counting `</s>` and excluding `<s>`.
    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        perplexity_with(corpus, |ids| self.sentence_log10prob(ids))
    }

    /// Serializes in ARPA format. Unigrams appear in id order, higher orders
    /// sorted by id sequence.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (n, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", n + 1, t.len());
        }
        for (n, table) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", n + 1);
            let mut keys: Vec<&Vec<usize>> = table.keys().collect();
            keys.sort();
            for k in keys {
                let e = &table[k];
                let words: Vec<&str> = k.iter().map(|&id| self.vocab.word(id).unwrap_or("<unk>")).collect();
                let _ = write!(out, "{}\t{}", e.log10_prob, words.join(" "));
                if n + 1 < self.order {
                    let _ = write!(out, "\t{}", e.log10_backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    /// Parses an ARPA model. The vocabulary is taken from the unigram
    /// section in file order, with the special tokens at their reserved ids.
    pub fn from_arpa<R: BufRead>(reader: R) -> Result<NGramModel> {
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        let err = |line: usize, msg: String| Error::Arpa { line, msg };

        let mut i = 0;
        let skip_blank = |i: &mut usize| {
            while *i < lines.len() && lines[*i].trim().is_empty() {
                *i += 1;
            }
        };
        skip_blank(&mut i);
        if i >= lines.len() || lines[i].trim() != "\\data\\" {
            return Err(err(i + 1, "expected \\data\\ header".into()));
        }
        i += 1;
        let mut declared: Vec<usize> = Vec::new();
        while i < lines.len() && lines[i].trim_start().starts_with("ngram ") {
            let spec = lines[i].trim()["ngram ".len()..].to_string();
            let (n, c) = spec
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("malformed count line {:?}", lines[i])))?;
            let n: usize = n.trim().parse().map_err(|_| err(i + 1, format!("bad order {n:?}")))?;
            let c: usize = c.trim().parse().map_err(|_| err(i + 1, format!("bad count {c:?}")))?;
            if n != declared.len() + 1 {
                return Err(err(i + 1, format!("ngram orders out of sequence at order {n}")));
            }
            declared.push(c);
            i += 1;
        }
        if declared.is_empty() {
            return Err(err(i + 1, "no ngram counts in \\data\\ section".into()));
        }
        let order = declared.len();

        let mut raw_tables: Vec<Vec<(Vec<String>, f64, f64)>> = Vec::with_capacity(order);
        for (idx, &expected) in declared.iter().enumerate() {
            let n = idx + 1;
            skip_blank(&mut i);
            let header = format!("\\{n}-grams:");
            if i >= lines.len() || lines[i].trim() != header {
                return Err(err(i + 1, format!("expected section header {header}")));
            }
            i += 1;
            let mut entries = Vec::new();
            while i < lines.len() {
                let line = lines[i].trim();
                if line.is_empty() || line.starts_with('\\') {
                    break;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != n + 1 && fields.len() != n + 2 {
                    return Err(err(i + 1, format!("expected {} or {} fields in {header} entry", n + 1, n + 2)));
                }
                let lp: f64 = fields[0]
                    .parse()
                    .map_err(|_| err(i + 1, format!("bad probability {:?}", fields[0])))?;
                let bow: f64 = match fields.get(n + 1) {
                    Some(b) => b.parse().map_err(|_| err(i + 1, format!("bad backoff {b:?}")))?,
                    None => 0.0,
                };
                entries.push((fields[1..=n].iter().map(|s| s.to_string()).collect(), lp, bow));
                i += 1;
            }
            if entries.len() != expected {
                return Err(err(
                    i + 1,
                    format!("section {header} declares {expected} entries but contains {}", entries.len()),
                ));
            }
            raw_tables.push(entries);
        }
        skip_blank(&mut i);
        if i >= lines.len() || lines[i].trim() != "\\end\\" {
            return Err(err(i + 1, "expected \\end\\".into()));
        }

        let vocab = Vocabulary::from_entries(raw_tables[0].iter().map(|(w, _, _)| (w[0].clone(), 0u64)))
            .map_err(|e| err(0, e.to_string()))?;
        let mut tables = vec![HashMap::new(); order];
        for (n, entries) in raw_tables.into_iter().enumerate() {
            for (words, lp, bow) in entries {
                let mut ids = Vec::with_capacity(words.len());
                for w in &words {
                    ids.push(vocab.id(w).ok_or_else(|| {
                        err(0, format!("{}-gram uses word {w:?} missing from unigrams", n + 1))
                    })?);
                }
                tables[n].insert(ids, Entry { log10_prob: lp, log10_backoff: bow });
            }
        }
        Ok(NGramModel { order, vocab, tables, discounts: Vec::new(), warnings: Vec::new() })
    }
}

/// Shared perplexity convention: `10^(-total / predicted)`, where every
/// sentence contributes `len - 1` predicted positions.
pub(crate) fn perplexity_with<F>(corpus: &[Vec<usize>], mut score: F) -> Result<f64>
where
    F: FnMut(&[usize]) -> f64,
{
    let mut total = 0.0;
    let mut words = 0usize;
    for ids in corpus {
        total += score(ids);
        words += ids.len().saturating_sub(1);
    }
    if words == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(10f64.powf(-total / words as f64))
}
