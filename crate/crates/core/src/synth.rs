//! Synthetic street-name benchmark: a training corpus in which a chosen
//! fraction of streets is rare, evaluation references that oversample those
//! rare streets, and n-best lists whose acoustic scores favour a confusable
//! corruption of the street name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rescore::{write_nbest, write_transcripts, Hypothesis, NBestList};
use crate::text::Sentence;

const STREET_NAMES: &[&str] = &[
    "boon lay", "toa payoh", "ang mo kio", "bukit timah", "pasir ris", "tampines", "bedok", "yishun",
    "woodlands", "clementi", "serangoon", "hougang", "punggol", "sengkang", "bishan", "queenstown",
    "novena", "orchard", "geylang", "kallang", "marine parade", "tanjong pagar", "telok blangah",
    "choa chu kang", "bukit batok", "bukit panjang", "jalan besar", "lorong chuan", "upper thomson",
    "paya lebar", "kembangan", "eunos", "changi", "simei", "tai seng", "ubi", "aljunied", "dover",
    "holland village", "buona vista", "commonwealth", "redhill", "tiong bahru", "outram", "lavender",
    "farrer park", "little india", "bugis", "raffles place", "jurong west",
];

const SYLLABLES: &[&str] = &["ka", "lo", "ma", "si", "tu", "ba", "re", "no", "pe", "da"];

const DEFAULT_CONFUSIONS: &[(&str, &str)] = &[
    ("boon_lay", "bully plays"),
    ("toa_payoh", "tower pale"),
    ("ang_mo_kio", "and more key"),
    ("bukit_timah", "book it team"),
    ("pasir_ris", "passer rice"),
    ("tampines", "tam pines"),
    ("bedok", "bed dock"),
    ("yishun", "ye shun"),
    ("woodlands", "wood lands"),
    ("clementi", "clam enty"),
];

/// Confusion words for streets without an explicit entry, used in pairs.
const CONFUSION_POOL: &[&str] = &[
    "bully", "plays", "tower", "pale", "book", "team", "passer", "rice", "bed", "dock", "wood", "lands",
    "sea", "gone", "hug", "gang", "punk", "goal", "sing", "kong", "big", "shan", "queen", "town", "no",
    "vena", "or", "chard", "gay", "long", "call", "lung", "tell", "lock", "chew", "can", "pie", "ya",
    "lay", "bar",
];

const STREET_TEMPLATES: &[&str] = &[
    "the market at {} opened early",
    "please take me to {}",
    "i live near {} station",
    "how do i get to {} from here",
    "the bus to {} is late again",
    "we met at {} yesterday",
    "there is a new mall in {}",
    "turn left at {} road",
    "my office is in {}",
    "traffic is heavy along {} today",
    "is there a clinic near {}",
    "drop me at {} please",
];

const CONFUSION_PREFIXES: &[&str] = &["look at", "i saw", "they said", "we heard", "she likes", "the kids shouted", "go to"];
const CONFUSION_SUFFIXES: &[&str] = &["today", "again", "last night", "in the morning", "every day", "for fun"];

const GENERAL_FILLER: &[&str] = &[
    "the weather is nice today",
    "i would like a cup of coffee",
    "can you call me later",
    "the meeting starts at ten",
    "my phone battery is low",
    "we should leave now",
    "the food here is good",
    "please speak more slowly",
    "it is going to rain",
    "the train was very crowded",
];

/// Words used for random single-token substitutions in the n-best lists.
const SUBSTITUTES: &[&str] = &[
    "the", "a", "to", "at", "in", "near", "market", "bus", "mall", "office", "road", "clinic", "me", "is",
    "today", "please", "station", "late", "new", "from", "here", "we", "i", "train", "food",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub streets: usize,
    /// Fraction of streets that occur fewer than `threshold` times.
    pub rare_fraction: f64,
    pub threshold: u64,
    /// Upper bound on a rare street's training count.
    pub rare_max_count: u64,
    pub train_sentences: usize,
    /// Fraction of training sentences that mention a street.
    pub street_share: f64,
    pub valid_sentences: usize,
    pub eval_utterances: usize,
    /// Probability that an evaluation utterance uses a rare street.
    pub rare_eval_share: f64,
    pub nbest_size: usize,
    /// Range of the acoustic advantage given to the confusion hypothesis.
    pub margin_min: f64,
    pub margin_max: f64,
    /// Joined street name to confusable words; overrides the built-in table.
    pub confusions: BTreeMap<String, String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            streets: 40,
            rare_fraction: 0.5,
            threshold: 10,
            rare_max_count: 3,
            train_sentences: 2000,
            street_share: 0.5,
            valid_sentences: 200,
            eval_utterances: 200,
            rare_eval_share: 0.6,
            nbest_size: 10,
            margin_min: 0.5,
            margin_max: 2.5,
            confusions: BTreeMap::new(),
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.streets < 2 {
            return bad("need at least 2 streets");
        }
        if !(0.0..=1.0).contains(&self.rare_fraction) || !(0.0..=1.0).contains(&self.rare_eval_share) {
            return bad("fractions must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.street_share) {
            return bad("street share must lie in [0, 1]");
        }
        if self.rare_count() > 0 && self.threshold < 2 {
            return bad("rare streets need a threshold of at least 2");
        }
        if self.rare_max_count == 0 || self.train_sentences == 0 || self.eval_utterances == 0 {
            return bad("counts must be at least 1");
        }
        if self.nbest_size < 2 {
            return bad("n-best size must be at least 2");
        }
        if !(self.margin_min.is_finite() && self.margin_max.is_finite() && self.margin_min <= self.margin_max) {
            return bad("margin range must be finite with min <= max");
        }
        Ok(())
    }

    fn rare_count(&self) -> usize {
        ((self.streets as f64 * self.rare_fraction).round() as usize).min(self.streets)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    /// Raw training lines; multiword streets are written with spaces.
    pub train: Vec<String>,
    pub valid: Vec<String>,
    /// Street names with spaces, one per entry.
    pub lexicon: Vec<String>,
    /// References with underscore-joined street names.
    pub refs: Vec<(String, Sentence)>,
    pub nbest: Vec<NBestList>,
    /// Joined street name and its confusable word sequence.
    pub confusions: BTreeMap<String, String>,
    pub rare_streets: BTreeSet<String>,
    pub frequent_streets: BTreeSet<String>,
    /// Training count of every street, keyed by joined name.
    pub street_counts: BTreeMap<String, u64>,
}

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const REFS_FILE: &str = "refs.txt";
pub const NBEST_FILE: &str = "nbest.txt";
pub const CONFUSIONS_FILE: &str = "confusions.txt";
pub const RARE_FILE: &str = "rare_streets.txt";

impl SyntheticBundle {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let lines = |items: &mut dyn Iterator<Item = String>| items.map(|l| l + "\n").collect::<String>();
        fs::write(dir.join(TRAIN_FILE), lines(&mut self.train.iter().cloned()))?;
        fs::write(dir.join(VALID_FILE), lines(&mut self.valid.iter().cloned()))?;
        fs::write(dir.join(LEXICON_FILE), lines(&mut self.lexicon.iter().cloned()))?;
        fs::write(dir.join(RARE_FILE), lines(&mut self.rare_streets.iter().cloned()))?;
        fs::write(
            dir.join(CONFUSIONS_FILE),
            lines(&mut self.confusions.iter().map(|(k, v)| format!("{k}\t{v}"))),
        )?;
        let mut refs = fs::File::create(dir.join(REFS_FILE))?;
        write_transcripts(&self.refs, &mut refs)?;
        refs.flush()?;
        let mut nb = fs::File::create(dir.join(NBEST_FILE))?;
        write_nbest(&self.nbest, &mut nb)?;
        nb.flush()?;
        Ok(())
    }
}

fn street_names(n: usize) -> Vec<String> {
    let mut out: Vec<String> = STREET_NAMES.iter().take(n).map(|s| s.to_string()).collect();
    let mut i = 0;
    while out.len() < n {
        let (a, b) = (SYLLABLES[(i / SYLLABLES.len()) % SYLLABLES.len()], SYLLABLES[i % SYLLABLES.len()]);
        let suffix = i / (SYLLABLES.len() * SYLLABLES.len());
        out.push(if suffix == 0 { format!("jalan {a}{b}") } else { format!("jalan {a}{b}{suffix}") });
        i += 1;
    }
    out
}

fn joined(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join("_")
}

fn fill(template: &str, slot: &str) -> String {
    template.replace("{}", slot)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

struct Streets {
    spaced: Vec<String>,
    joined: Vec<String>,
    rare: Vec<usize>,
    /// Frequent street indices in Zipf rank order.
    frequent: Vec<usize>,
    counts: Vec<u64>,
}

fn allot_streets(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Streets {
    let spaced = street_names(cfg.streets);
    let joined_names: Vec<String> = spaced.iter().map(|s| joined(s)).collect();
    let mut order: Vec<usize> = (0..cfg.streets).collect();
    order.shuffle(rng);
    let n_rare = cfg.rare_count();
    let (rare, frequent) = (order[..n_rare].to_vec(), order[n_rare..].to_vec());

    let mut counts = vec![0u64; cfg.streets];
    let rare_cap = cfg.rare_max_count.min(cfg.threshold.saturating_sub(1)).max(1);
    for &r in &rare {
        counts[r] = rng.gen_range(1..=rare_cap);
    }
    let rare_total: u64 = rare.iter().map(|&r| counts[r]).sum();
    let budget = (cfg.train_sentences as f64 * cfg.street_share).round() as u64;
    let floor = cfg.threshold.max(1);
    let spare = budget.saturating_sub(rare_total + floor * frequent.len() as u64);
    let weights: Vec<f64> = (0..frequent.len()).map(|i| 1.0 / (i + 1) as f64).collect();
    let total_w: f64 = weights.iter().sum();
    for (&f, w) in frequent.iter().zip(&weights) {
        counts[f] = floor + (spare as f64 * w / total_w).floor() as u64;
    }
    Streets { spaced, joined: joined_names, rare, frequent, counts }
}

fn confusion_table(cfg: &SynthConfig, streets: &Streets) -> BTreeMap<String, String> {
    let defaults: BTreeMap<&str, &str> = DEFAULT_CONFUSIONS.iter().copied().collect();
    streets
        .joined
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let pair = cfg.confusions.get(name).cloned().unwrap_or_else(|| match defaults.get(name.as_str()) {
                Some(p) => p.to_string(),
                None => {
                    let p = CONFUSION_POOL.len();
                    format!("{} {}", CONFUSION_POOL[(2 * i) % p], CONFUSION_POOL[(2 * i + 1) % p])
                }
            });
            (name.clone(), pair)
        })
        .collect()
}

fn filler_sentence(rng: &mut ChaCha8Rng, confusion_phrases: &[&String]) -> String {
    if rng.gen_bool(0.3) || confusion_phrases.is_empty() {
        return GENERAL_FILLER.choose(rng).expect("non-empty").to_string();
    }
    let phrase = confusion_phrases.choose(rng).expect("non-empty");
    let pre = CONFUSION_PREFIXES.choose(rng).expect("non-empty");
    let post = CONFUSION_SUFFIXES.choose(rng).expect("non-empty");
    format!("{pre} {phrase} {post}")
}

fn zipf_pick(rng: &mut ChaCha8Rng, items: &[usize]) -> usize {
    let total: f64 = (0..items.len()).map(|i| 1.0 / (i + 1) as f64).sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, &it) in items.iter().enumerate() {
        x -= 1.0 / (i + 1) as f64;
        if x < 0.0 {
            return it;
        }
    }
    *items.last().expect("non-empty")
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn build_nbest(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    utt: &str,
    template: &str,
    street: usize,
    streets: &Streets,
    confusions: &BTreeMap<String, String>,
) -> NBestList {
    let name = &streets.joined[street];
    let reference = words(&fill(template, name));
    let slot = reference.iter().position(|w| w == name).expect("template has a slot");
    let am_ref = -uniform(rng, 0.8, 1.2) * 4.0 * reference.len() as f64;

    let with_street = |replacement: &[String]| -> Vec<String> {
        let mut out = reference[..slot].to_vec();
        out.extend_from_slice(replacement);
        out.extend_from_slice(&reference[slot + 1..]);
        out
    };
    let substitute = |base: &[String], skip: (usize, usize), rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut out = base.to_vec();
        let free: Vec<usize> = (0..out.len()).filter(|i| !(skip.0..skip.1).contains(i)).collect();
        if let Some(&pos) = free.choose(rng) {
            out[pos] = SUBSTITUTES.choose(rng).expect("non-empty").to_string();
        }
        out
    };

    let confused = words(&confusions[name]);
    let corrupted = with_street(&confused);
    let margin = uniform(rng, cfg.margin_min, cfg.margin_max);
    let mut hyps: Vec<(Vec<String>, f64)> = vec![(reference.clone(), am_ref), (corrupted.clone(), am_ref + margin)];

    let others: Vec<usize> = streets.frequent.iter().copied().filter(|&f| f != street).collect();
    if !others.is_empty() {
        let other = zipf_pick(rng, &others);
        hyps.push((with_street(&[streets.joined[other].clone()]), am_ref - uniform(rng, 0.5, 2.5)));
    }
    let mut attempts = 0;
    while hyps.len() < cfg.nbest_size && attempts < 20 * cfg.nbest_size {
        attempts += 1;
        let (candidate, am) = if rng.gen_bool(0.5) {
            (substitute(&reference, (slot, slot + 1), rng), am_ref - uniform(rng, -0.3, 2.5))
        } else {
            (substitute(&corrupted, (slot, slot + confused.len()), rng), am_ref + margin - uniform(rng, 0.0, 2.5))
        };
        if hyps.iter().all(|(h, _)| *h != candidate) {
            hyps.push((candidate, am));
        }
    }
    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| hyps[b].1.total_cmp(&hyps[a].1).then(a.cmp(&b)));
    NBestList {
        utt_id: utt.to_string(),
        hypotheses: order
            .iter()
            .enumerate()
            .map(|(rank, &i)| Hypothesis {
                rank: rank + 1,
                am_score: round6(hyps[i].1),
                words: Sentence::from_tokens(hyps[i].0.iter()),
            })
            .collect(),
    }
}

/// Rounds to six decimals so the n-best file is short and round-trips.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Generates the whole benchmark from `cfg.seed`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let streets = allot_streets(cfg, &mut rng);
    let confusions = confusion_table(cfg, &streets);
    let confusion_phrases: Vec<&String> = confusions.values().collect::<BTreeSet<_>>().into_iter().collect();

    let mut train = Vec::with_capacity(cfg.train_sentences);
    for (i, &c) in streets.counts.iter().enumerate() {
        for _ in 0..c {
            train.push(fill(STREET_TEMPLATES.choose(&mut rng).expect("non-empty"), &streets.spaced[i]));
        }
    }
    while train.len() < cfg.train_sentences {
        train.push(filler_sentence(&mut rng, &confusion_phrases));
    }
    train.shuffle(&mut rng);

    // Validation text follows the training street distribution without
    // adding new occurrences of rare streets.
    let mut valid = Vec::with_capacity(cfg.valid_sentences);
    for _ in 0..cfg.valid_sentences {
        if !streets.frequent.is_empty() && rng.gen_bool(cfg.street_share) {
            let s = zipf_pick(&mut rng, &streets.frequent);
            valid.push(fill(STREET_TEMPLATES.choose(&mut rng).expect("non-empty"), &streets.spaced[s]));
        } else {
            valid.push(filler_sentence(&mut rng, &confusion_phrases));
        }
    }

    let mut refs = Vec::with_capacity(cfg.eval_utterances);
    let mut nbest = Vec::with_capacity(cfg.eval_utterances);
    for u in 0..cfg.eval_utterances {
        let use_rare = !streets.rare.is_empty() && (streets.frequent.is_empty() || rng.gen_bool(cfg.rare_eval_share));
        let street = if use_rare {
            *streets.rare.choose(&mut rng).expect("non-empty")
        } else {
            zipf_pick(&mut rng, &streets.frequent)
        };
        let template = STREET_TEMPLATES.choose(&mut rng).expect("non-empty");
        let utt = format!("utt{u:04}");
        refs.push((utt.clone(), Sentence::from_tokens(words(&fill(template, &streets.joined[street])))));
        nbest.push(build_nbest(cfg, &mut rng, &utt, template, street, &streets, &confusions));
    }

    let street_counts: BTreeMap<String, u64> =
        streets.joined.iter().cloned().zip(streets.counts.iter().copied()).collect();
    let pick = |ids: &[usize]| ids.iter().map(|&i| streets.joined[i].clone()).collect::<BTreeSet<_>>();
    Ok(SyntheticBundle {
        train,
        valid,
        lexicon: streets.spaced.clone(),
        refs,
        nbest,
        confusions,
        rare_streets: pick(&streets.rare),
        frequent_streets: pick(&streets.frequent),
        street_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use crate::text::{join_phrases, tokenize, word_counts, PhraseList};

    fn small() -> SynthConfig {
        SynthConfig { streets: 12, train_sentences: 300, eval_utterances: 30, valid_sentences: 20, ..Default::default() }
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = gen_synthetic(&small()).unwrap();
        assert_eq!(a, gen_synthetic(&small()).unwrap());
        let b = gen_synthetic(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn every_nbest_contains_its_reference() {
        let b = gen_synthetic(&small()).unwrap();
        for ((utt, r), nb) in b.refs.iter().zip(&b.nbest) {
            assert_eq!(utt, &nb.utt_id);
            assert!(nb.hypotheses.iter().any(|h| &h.words == r));
            assert!(nb.hypotheses.len() <= 10);
            let ranks: Vec<usize> = nb.hypotheses.iter().map(|h| h.rank).collect();
            assert_eq!(ranks, (1..=ranks.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn recounted_streets_reproduce_the_split() {
        let cfg = small();
        let b = gen_synthetic(&cfg).unwrap();
        let mut phrases = PhraseList::new();
        for s in &b.lexicon {
            phrases.insert(s);
        }
        let corpus: Vec<Sentence> = b.train.iter().map(|l| join_phrases(&tokenize(l), &phrases)).collect();
        let counts = word_counts(&corpus);
        for (street, &c) in &b.street_counts {
            assert_eq!(counts.get(street).copied().unwrap_or(0), c, "{street}");
            assert_eq!(b.rare_streets.contains(street), c < cfg.threshold);
            assert!(c >= 1);
        }
        assert_eq!(b.rare_streets.len(), 6);
        assert_eq!(b.train.len(), cfg.train_sentences);
    }

    #[test]
    fn confusion_hypothesis_outranks_reference() {
        let b = gen_synthetic(&small()).unwrap();
        for ((_, r), nb) in b.refs.iter().zip(&b.nbest) {
            let reference = nb.hypotheses.iter().find(|h| &h.words == r).unwrap();
            let street = r.iter().find(|w| b.street_counts.contains_key(*w)).unwrap();
            let confused = tokenize(&b.confusions[street]);
            let corrupted = nb
                .hypotheses
                .iter()
                .find(|h| h.words.tokens().windows(confused.len()).any(|w| w == confused.tokens()) && h.am_score > reference.am_score)
                .expect("corrupted hypothesis");
            assert!(corrupted.am_score - reference.am_score <= 2.5 + 1e-9);
        }
    }

    #[test]
    fn user_confusions_override_defaults() {
        let mut cfg = small();
        cfg.confusions.insert("boon_lay".into(), "balloon lake".into());
        let b = gen_synthetic(&cfg).unwrap();
        assert_eq!(b.confusions["boon_lay"], "balloon lake");
    }

    #[test]
    fn extra_streets_get_generated_names() {
        let names = street_names(60);
        assert_eq!(names.len(), 60);
        assert_eq!(names.iter().collect::<HashSet<_>>().len(), 60);
    }

    #[test]
    fn files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_synthetic(&small()).unwrap();
        b.write_to(dir.path()).unwrap();
        for f in [TRAIN_FILE, VALID_FILE, LEXICON_FILE, REFS_FILE, NBEST_FILE, CONFUSIONS_FILE, RARE_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let nb = crate::rescore::read_nbest(fs::read_to_string(dir.path().join(NBEST_FILE)).unwrap().as_bytes()).unwrap();
        assert_eq!(nb, b.nbest);
    }
}
