//! Rare-word embedding enrichment.
//!
//! Words in a lexical scope are split by training frequency into frequent
//! and rare sets. Each rare word `r` gets a candidate list `C_r` of frequent
//! words with weights `m_c`, and both its input column `s_r` and output
//! column `u_r` are replaced by
//!
//! ```text
//! s_r' = (s_r + sum_c m_c s_c) / (|C_r| + 1)
//! ```
//!
//! (likewise for `u_r`). The recurrent layer and every other column are left
//! untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::io::BufRead;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::NeuralLm;
use crate::rescore::NBestList;
use crate::text::{Vocabulary, WordCounts, NUM_SPECIALS};

/// Which words are eligible for the frequent/rare split.
#[derive(Debug, Clone)]
pub enum Scope {
    /// An explicit word set, e.g. a street-name lexicon.
    Words(BTreeSet<String>),
    /// Every non-special vocabulary word.
    FullVocabulary,
}

impl Scope {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Scope::Words(words.into_iter().map(Into::into).collect())
    }

    /// Reads one entry per line; multiword entries are joined with `_`.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut words = BTreeSet::new();
        for line in reader.lines() {
            let line = line?;
            let toks = crate::text::tokenize(&line).into_tokens();
            if !toks.is_empty() {
                words.insert(toks.join("_"));
            }
        }
        Ok(Scope::Words(words))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPartition {
    pub threshold: u64,
    pub frequent: BTreeSet<String>,
    pub rare: BTreeSet<String>,
    /// Training counts of every word in `frequent` and `rare`.
    pub counts: BTreeMap<String, u64>,
}

/// Splits `scope ∩ vocabulary` by `count < threshold` (rare) versus
/// `count >= threshold` (frequent). Missing counts are zero.
pub fn partition_by_frequency(
    counts: &WordCounts,
    scope: &Scope,
    vocab: &Vocabulary,
    threshold: u64,
) -> FrequencyPartition {
    let words: Vec<&str> = match scope {
        Scope::Words(ws) => ws.iter().map(String::as_str).filter(|w| vocab.contains(w)).collect(),
        Scope::FullVocabulary => vocab.words()[NUM_SPECIALS..].iter().map(String::as_str).collect(),
    };
    let mut p = FrequencyPartition {
        threshold,
        frequent: BTreeSet::new(),
        rare: BTreeSet::new(),
        counts: BTreeMap::new(),
    };
    for w in words {
        let c = counts.get(w).copied().unwrap_or(0);
        p.counts.insert(w.to_string(), c);
        if c < threshold {
            p.rare.insert(w.to_string());
        } else {
            p.frequent.insert(w.to_string());
        }
    }
    p
}

/// Keeps only rare words that occur in some hypothesis of `lists`.
pub fn restrict_to_nbest(p: &FrequencyPartition, lists: &[NBestList]) -> FrequencyPartition {
    let mentioned: HashSet<&str> = lists
        .iter()
        .flat_map(|l| l.hypotheses.iter())
        .flat_map(|h| h.words.iter())
        .collect();
    FrequencyPartition {
        rare: p.rare.iter().filter(|w| mentioned.contains(w.as_str())).cloned().collect(),
        ..p.clone()
    }
}

/// Word vectors from an external model, used for similarity weighting.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Reads `word v1 v2 ...` lines. A leading `count dim` header line is
    /// skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: format!("bad vector component: {e}") })?;
            if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
                continue;
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Parse { line: i + 1, msg: format!("expected {d} components") })
                }
                _ => {}
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(EmbeddingTable { vectors })
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) {
        self.vectors.insert(word.into(), v);
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.vectors.get(a)?, self.vectors.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        (nx > 0.0 && ny > 0.0).then(|| dot / (nx * ny))
    }
}

/// How candidate weights `m_c` are assigned.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Every `m_c = 1`.
    Equal,
    /// Proportional to training count, normalized to mean 1.
    Frequency,
    /// Proportional to cosine similarity with the rare word under an
    /// external embedding table (floored at a small positive value),
    /// normalized to mean 1. Words missing from the table get weight 1.
    Similarity(&'a EmbeddingTable),
}

/// Whether all rare words share one candidate sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    #[default]
    Shared,
    PerWord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub word: String,
    pub weight: f64,
}

/// Candidate lists keyed by rare word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichmentPlan {
    pub entries: BTreeMap<String, Vec<Candidate>>,
}

const MIN_SIMILARITY: f64 = 1e-3;

fn mean_one(weights: &mut [f64]) {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if mean > 0.0 {
        for w in weights.iter_mut() {
            *w /= mean;
        }
    }
}

fn weigh(rare: &str, chosen: &[String], p: &FrequencyPartition, weighting: Weighting<'_>) -> Vec<Candidate> {
    let mut weights: Vec<f64> = match weighting {
        Weighting::Equal => vec![1.0; chosen.len()],
        Weighting::Frequency => chosen.iter().map(|c| p.counts.get(c).copied().unwrap_or(0) as f64).collect(),
        Weighting::Similarity(table) => {
            if table.vectors.contains_key(rare) {
                chosen
                    .iter()
                    .map(|c| table.cosine(rare, c).unwrap_or(MIN_SIMILARITY).max(MIN_SIMILARITY))
                    .collect()
            } else {
                vec![1.0; chosen.len()]
            }
        }
    };
    if !matches!(weighting, Weighting::Equal) {
        mean_one(&mut weights);
    }
    chosen
        .iter()
        .zip(weights)
        .map(|(w, weight)| Candidate { word: w.clone(), weight })
        .collect()
}

/// Draws `min(k, |frequent|)` frequent words with a seeded generator and
/// assigns them to every rare word. With [`Sharing::Shared`] one sample is
/// reused for all rare words; with [`Sharing::PerWord`] each rare word (in
/// lexicographic order) gets its own draw.
pub fn select_candidates(
    p: &FrequencyPartition,
    k: usize,
    seed: u64,
    weighting: Weighting<'_>,
    sharing: Sharing,
) -> Result<EnrichmentPlan> {
    if p.frequent.is_empty() {
        return Err(Error::NoCandidates);
    }
    if k == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    let pool: Vec<String> = p.frequent.iter().cloned().collect();
    let take = k.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut chosen: Vec<String> = pool.choose_multiple(rng, take).cloned().collect();
        chosen.sort();
        chosen
    };
    let shared = draw(&mut rng);
    let mut plan = EnrichmentPlan::default();
    for r in &p.rare {
        let chosen = match sharing {
            Sharing::Shared => shared.clone(),
            Sharing::PerWord => draw(&mut rng),
        };
        plan.entries.insert(r.clone(), weigh(r, &chosen, p, weighting));
    }
    Ok(plan)
}

impl EnrichmentPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `rare<TAB>candidate:weight,candidate:weight,...`, one line per rare word.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (r, cands) in &self.entries {
            let list: Vec<String> = cands.iter().map(|c| format!("{}:{}", c.word, c.weight)).collect();
            let _ = writeln!(out, "{r}\t{}", list.join(","));
        }
        out
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut plan = EnrichmentPlan::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let (rare, list) = line.split_once('\t').ok_or_else(|| perr("expected rare<TAB>candidates".into()))?;
            let mut cands = Vec::new();
            for item in list.split(',') {
                let (w, m) = item.rsplit_once(':').ok_or_else(|| perr(format!("bad candidate {item:?}")))?;
                let weight = m.parse().map_err(|_| perr(format!("bad weight {m:?}")))?;
                cands.push(Candidate { word: w.to_string(), weight });
            }
            plan.entries.insert(rare.to_string(), cands);
        }
        Ok(plan)
    }

    fn validate(&self, vocab: &Vocabulary) -> Result<Vec<(usize, Vec<(usize, f64)>)>> {
        let id = |w: &str| vocab.id(w).ok_or_else(|| Error::OutOfVocabulary(w.to_string()));
        let mut resolved = Vec::with_capacity(self.entries.len());
        for (r, cands) in &self.entries {
            let rid = id(r)?;
            if cands.is_empty() {
                return Err(Error::Config(format!("empty candidate list for {r:?}")));
            }
            let mut list = Vec::with_capacity(cands.len());
            for c in cands {
                let cid = id(&c.word)?;
                if cid == rid {
                    return Err(Error::Config(format!("{r:?} lists itself as a candidate")));
                }
                if !(c.weight.is_finite() && c.weight > 0.0) {
                    return Err(Error::Config(format!("non-positive weight for candidate {:?}", c.word)));
                }
                list.push((cid, c.weight));
            }
            resolved.push((rid, list));
        }
        Ok(resolved)
    }
}

impl fmt::Display for EnrichmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordReport {
    pub word: String,
    pub input_norm_before: f64,
    pub input_norm_after: f64,
    pub output_norm_before: f64,
    pub output_norm_after: f64,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentReport {
    pub words: Vec<WordReport>,
    pub modified_columns: usize,
    pub untouched_checksum_before: String,
    pub untouched_checksum_after: String,
}

impl EnrichmentReport {
    pub fn untouched_preserved(&self) -> bool {
        self.untouched_checksum_before == self.untouched_checksum_after
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.words.iter().map(|w| w.word.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  candidates", "word", "|s| old", "|s| new", "|u| old", "|u| new");
        for w in &self.words {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {}",
                w.word,
                w.input_norm_before,
                w.input_norm_after,
                w.output_norm_before,
                w.output_norm_after,
                w.candidates.join(",")
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "modified_columns\t{}", self.modified_columns);
        let _ = writeln!(out, "untouched_checksum_before\t{}", self.untouched_checksum_before);
        let _ = writeln!(out, "untouched_checksum_after\t{}", self.untouched_checksum_after);
        out
    }
}

/// SHA-256 over `W`, `b` and every embedding column not in `skip`.
fn untouched_checksum(m: &NeuralLm, skip: &HashSet<usize>) -> String {
    let mut h = Sha256::new();
    for v in m.gate_weights().iter().chain(m.gate_bias().iter()) {
        h.update(v.to_le_bytes());
    }
    for mat in [m.input_embeddings(), m.output_embeddings()] {
        for col in 0..mat.ncols() {
            if !skip.contains(&col) {
                for v in mat.column(col) {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}

fn centroid_column(orig: &Array2<f64>, r: usize, cands: &[(usize, f64)]) -> Vec<f64> {
    let denom = (cands.len() + 1) as f64;
    (0..orig.nrows())
        .map(|i| {
            let mut acc = orig[[i, r]];
            for &(c, m) in cands {
                acc += m * orig[[i, c]];
            }
            (acc / denom) as f32 as f64
        })
        .collect()
}

/// Applies the plan to a copy of `m`. Candidate vectors are always read
/// from the original matrices, so the order of updates does not matter.
/// Every word is validated before anything changes.
pub fn enrich_embeddings(m: &NeuralLm, plan: &EnrichmentPlan) -> Result<(NeuralLm, EnrichmentReport)> {
    let resolved = plan.validate(m.vocab())?;
    let skip: HashSet<usize> = resolved.iter().map(|(r, _)| *r).collect();
    let before = untouched_checksum(m, &skip);
    let orig_s = m.input_embeddings().to_owned();
    let orig_u = m.output_embeddings().to_owned();

    let mut out = m.clone();
    let mut words = Vec::with_capacity(resolved.len());
    {
        let (s, u) = out.embeddings_mut();
        for (r, cands) in &resolved {
            let new_s = centroid_column(&orig_s, *r, cands);
            let new_u = centroid_column(&orig_u, *r, cands);
            for (i, v) in new_s.into_iter().enumerate() {
                s[[i, *r]] = v;
            }
            for (i, v) in new_u.into_iter().enumerate() {
                u[[i, *r]] = v;
            }
        }
    }
    for ((r, cands), (word, _)) in resolved.iter().zip(&plan.entries) {
        let (sb, ub) = m.embedding_norms(*r);
        let (sa, ua) = out.embedding_norms(*r);
        words.push(WordReport {
            word: word.clone(),
            input_norm_before: sb,
            input_norm_after: sa,
            output_norm_before: ub,
            output_norm_after: ua,
            candidates: cands.iter().map(|(c, _)| m.vocab().word(*c).unwrap_or_default().to_string()).collect(),
        });
    }
    let after = untouched_checksum(&out, &skip);
    let report = EnrichmentReport {
        words,
        modified_columns: 2 * resolved.len(),
        untouched_checksum_before: before,
        untouched_checksum_after: after,
    };
    Ok((out, report))
}
