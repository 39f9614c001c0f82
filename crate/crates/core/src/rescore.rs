//! N-best rescoring with the neural LM, optionally mixed with a KN model.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::NeuralLm;
use crate::ngram::NGramModel;
use crate::text::{encode, tokenize, Sentence};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub rank: usize,
    /// Log-domain acoustic score; higher is better.
    pub am_score: f64,
    pub words: Sentence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utt_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub lm_weight: f64,
    /// Probability mass given to the KN model.
    pub interp_weight: f64,
    pub word_insertion_penalty: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig { lm_weight: 1.0, interp_weight: 0.0, word_insertion_penalty: 0.0 }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lm_weight.is_finite() && self.lm_weight >= 0.0) {
            return Err(Error::Config(format!("lm weight must be finite and >= 0, got {}", self.lm_weight)));
        }
        if !(0.0..=1.0).contains(&self.interp_weight) {
            return Err(Error::Config(format!("interpolation weight must be in [0, 1], got {}", self.interp_weight)));
        }
        if !self.word_insertion_penalty.is_finite() {
            return Err(Error::Config("word insertion penalty must be finite".into()));
        }
        Ok(())
    }
}

/// log10 probability of `words` under `(1 - mu) * P_nlm + mu * P_kn`, mixed
/// per predicted position in the probability domain. The endpoints return
/// the single model's score unchanged. Each model encodes the words with its
/// own vocabulary.
pub fn lm_score_hypothesis(nlm: &NeuralLm, kn: Option<&NGramModel>, words: &Sentence, mu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Config(format!("interpolation weight must be in [0, 1], got {mu}")));
    }
    let kn_model = || kn.ok_or_else(|| Error::Config("a KN model is required when the interpolation weight is positive".into()));
    if mu == 0.0 {
        return nlm.sentence_log10prob(&encode(words, nlm.vocab()));
    }
    let kn = kn_model()?;
    let kn_ids = encode(words, kn.vocab());
    if mu == 1.0 {
        return Ok(kn.sentence_log10prob(&kn_ids));
    }
    let neural = nlm.position_log_probs(&encode(words, nlm.vocab()))?;
    let mut total = 0.0;
    for (j, ln_p) in neural.into_iter().enumerate() {
        let p_kn = kn.prob(kn_ids[j + 1], &kn_ids[..=j]);
        total += ((1.0 - mu) * ln_p.exp() + mu * p_kn).log10();
    }
    Ok(total)
}

/// Perplexity of plain sentences under the same mixture, counting `</s>`.
pub fn mixed_perplexity(nlm: &NeuralLm, kn: Option<&NGramModel>, corpus: &[Sentence], mu: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut predicted = 0usize;
    for s in corpus {
        total += lm_score_hypothesis(nlm, kn, s, mu)?;
        predicted += s.len() + 1;
    }
    if predicted == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(10f64.powf(-total / predicted as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub lm_score: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoredList {
    pub utt_id: String,
    /// Best first.
    pub ranked: Vec<ScoredHypothesis>,
}

impl RescoredList {
    pub fn best(&self) -> &Hypothesis {
        &self.ranked[0].hypothesis
    }
}

/// Ranks by `am + lm_weight * lm + penalty * |words|`, descending, with the
/// original rank breaking ties.
pub fn rescore_nbest(nb: &NBestList, nlm: &NeuralLm, kn: Option<&NGramModel>, cfg: &RescoreConfig) -> Result<RescoredList> {
    cfg.validate()?;
    if nb.hypotheses.is_empty() {
        return Err(Error::EmptyNBest(nb.utt_id.clone()));
    }
    let mut ranked = nb
        .hypotheses
        .iter()
        .map(|h| {
            let lm = lm_score_hypothesis(nlm, kn, &h.words, cfg.interp_weight)?;
            let total = h.am_score + cfg.lm_weight * lm + cfg.word_insertion_penalty * h.words.len() as f64;
            Ok(ScoredHypothesis { hypothesis: h.clone(), lm_score: lm, total })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.total
            .partial_cmp(&a.total)
            .unwrap_or(Ordering::Equal)
            .then(a.hypothesis.rank.cmp(&b.hypothesis.rank))
    });
    Ok(RescoredList { utt_id: nb.utt_id.clone(), ranked })
}

/// Rescores every list on up to `jobs` worker threads (0 means all cores).
/// Results keep the input order.
pub fn rescore_all(
    lists: &[NBestList],
    nlm: &NeuralLm,
    kn: Option<&NGramModel>,
    cfg: &RescoreConfig,
    jobs: usize,
) -> Result<Vec<RescoredList>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| lists.par_iter().map(|nb| rescore_nbest(nb, nlm, kn, cfg)).collect())
}

fn parse_line(line: &str, lineno: usize) -> Result<(String, Hypothesis)> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let fields: Vec<&str> = line.splitn(4, '\t').collect();
    if fields.len() < 4 {
        return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
    }
    let rank: usize = fields[1].trim().parse().map_err(|_| err(format!("bad rank {:?}", fields[1])))?;
    if rank == 0 {
        return Err(err("ranks start at 1".into()));
    }
    let am_score: f64 = fields[2].trim().parse().map_err(|_| err(format!("bad am_score {:?}", fields[2])))?;
    if !am_score.is_finite() {
        return Err(err(format!("am_score must be finite, got {:?}", fields[2])));
    }
    Ok((fields[0].to_string(), Hypothesis { rank, am_score, words: tokenize(fields[3]) }))
}

/// Reads `utt_id<TAB>rank<TAB>am_score<TAB>words` lines. Each utterance must
/// be contiguous with ranks 1, 2, 3, ...
pub fn read_nbest<R: BufRead>(reader: R) -> Result<Vec<NBestList>> {
    let mut lists: Vec<NBestList> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (utt, hyp) = parse_line(&line, lineno)?;
        let continuing = lists.last().is_some_and(|l| l.utt_id == utt);
        if !continuing {
            if !seen.insert(utt.clone()) {
                return Err(Error::Parse { line: lineno, msg: format!("utterance {utt:?} is not contiguous") });
            }
            lists.push(NBestList { utt_id: utt, hypotheses: Vec::new() });
        }
        let list = lists.last_mut().expect("pushed above");
        let expected = list.hypotheses.len() + 1;
        if hyp.rank != expected {
            return Err(Error::Parse { line: lineno, msg: format!("expected rank {expected}, found {}", hyp.rank) });
        }
        list.hypotheses.push(hyp);
    }
    Ok(lists)
}

pub fn write_nbest<W: Write>(lists: &[NBestList], mut w: W) -> Result<()> {
    for l in lists {
        for h in &l.hypotheses {
            writeln!(w, "{}\t{}\t{}\t{}", l.utt_id, h.rank, h.am_score, h.words)?;
        }
    }
    Ok(())
}

/// `utt_id<TAB>new_rank<TAB>am_score<TAB>total_score<TAB>words`.
pub fn format_rescored(lists: &[RescoredList]) -> String {
    let mut out = String::new();
    for l in lists {
        for (i, s) in l.ranked.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}\t{}", l.utt_id, i + 1, s.hypothesis.am_score, s.total, s.hypothesis.words);
        }
    }
    out
}

/// One-best transcripts, `utt_id<TAB>words`.
pub fn format_one_best(lists: &[RescoredList]) -> String {
    let mut out = String::new();
    for l in lists {
        let _ = writeln!(out, "{}\t{}", l.utt_id, l.best().words);
    }
    out
}

/// Reads `utt_id<TAB>transcript` lines (references or one-best output).
pub fn read_transcripts<R: BufRead>(reader: R) -> Result<Vec<(String, Sentence)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (utt, text) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        let utt = utt.trim();
        if utt.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "missing utterance id".into() });
        }
        if !seen.insert(utt.to_string()) {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate utterance {utt:?}") });
        }
        out.push((utt.to_string(), tokenize(text)));
    }
    Ok(out)
}

pub fn write_transcripts<W: Write>(items: &[(String, Sentence)], mut w: W) -> Result<()> {
    for (utt, s) in items {
        writeln!(w, "{utt}\t{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{train_kn, KnConfig};
    use crate::text::build_vocab;

    fn models() -> (NeuralLm, NGramModel) {
        let sents: Vec<Sentence> = ["go to bedok", "go to boon_lay", "bully plays here"].iter().map(|l| tokenize(l)).collect();
        let vocab = build_vocab(&sents, 1, None).unwrap();
        let ids: Vec<Vec<usize>> = sents.iter().map(|s| encode(s, &vocab)).collect();
        let kn = train_kn(&ids, &vocab, &KnConfig { order: 3, ..Default::default() }).unwrap();
        (NeuralLm::init(&vocab, 4, 5, 3).unwrap(), kn)
    }

    fn list(hyps: &[(f64, &str)]) -> NBestList {
        NBestList {
            utt_id: "u1".into(),
            hypotheses: hyps
                .iter()
                .enumerate()
                .map(|(i, (am, w))| Hypothesis { rank: i + 1, am_score: *am, words: tokenize(w) })
                .collect(),
        }
    }

    #[test]
    fn mixing_endpoints_are_exact() {
        let (nlm, kn) = models();
        let s = tokenize("go to boon_lay");
        let n = nlm.sentence_log10prob(&encode(&s, nlm.vocab())).unwrap();
        let k = kn.sentence_log10prob(&encode(&s, kn.vocab()));
        assert_eq!(lm_score_hypothesis(&nlm, Some(&kn), &s, 0.0).unwrap(), n);
        assert_eq!(lm_score_hypothesis(&nlm, None, &s, 0.0).unwrap(), n);
        assert_eq!(lm_score_hypothesis(&nlm, Some(&kn), &s, 1.0).unwrap(), k);
        assert!(lm_score_hypothesis(&nlm, None, &s, 0.3).is_err());
    }

    #[test]
    fn mixing_matches_direct_arithmetic() {
        let (nlm, kn) = models();
        let s = tokenize("bully plays");
        let ids = encode(&s, nlm.vocab());
        let pn: Vec<f64> = nlm.position_log_probs(&ids).unwrap().iter().map(|v| v.exp()).collect();
        let pk: Vec<f64> = (1..ids.len()).map(|j| kn.prob(ids[j], &ids[..j])).collect();
        let want: f64 = pn.iter().zip(&pk).map(|(a, b)| (0.7 * a + 0.3 * b).log10()).sum();
        let got = lm_score_hypothesis(&nlm, Some(&kn), &s, 0.3).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zero_lm_weight_keeps_acoustic_best() {
        let (nlm, kn) = models();
        let nb = list(&[(-5.0, "bully plays here"), (-5.0, "go to boon_lay"), (-7.0, "go to bedok")]);
        let cfg = RescoreConfig { lm_weight: 0.0, interp_weight: 0.3, ..Default::default() };
        let r = rescore_nbest(&nb, &nlm, Some(&kn), &cfg).unwrap();
        assert_eq!(r.best().rank, 1);
        assert_eq!(r.ranked.iter().map(|s| s.hypothesis.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn ranking_matches_enumerated_totals() {
        let (nlm, kn) = models();
        let nb = list(&[(-3.0, "bully plays here"), (-3.5, "go to boon_lay"), (-4.0, "go to bedok")]);
        let cfg = RescoreConfig { lm_weight: 0.8, interp_weight: 0.5, word_insertion_penalty: -0.2 };
        let r = rescore_nbest(&nb, &nlm, Some(&kn), &cfg).unwrap();
        let mut want: Vec<(f64, usize)> = nb
            .hypotheses
            .iter()
            .map(|h| {
                let lm = lm_score_hypothesis(&nlm, Some(&kn), &h.words, 0.5).unwrap();
                (h.am_score + 0.8 * lm - 0.2 * h.words.len() as f64, h.rank)
            })
            .collect();
        want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        assert_eq!(r.ranked.iter().map(|s| s.hypothesis.rank).collect::<Vec<_>>(), want.iter().map(|w| w.1).collect::<Vec<_>>());
    }

    #[test]
    fn huge_lm_weight_follows_lm_alone() {
        let (nlm, kn) = models();
        let nb = list(&[(0.0, "bully plays here"), (-100.0, "go to boon_lay"), (-50.0, "go to bedok")]);
        let cfg = RescoreConfig { lm_weight: 1e9, interp_weight: 1.0, ..Default::default() };
        let r = rescore_nbest(&nb, &nlm, Some(&kn), &cfg).unwrap();
        let best_lm = r.ranked.iter().map(|s| s.lm_score).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.ranked[0].lm_score, best_lm);
    }

    #[test]
    fn input_order_does_not_matter() {
        let (nlm, kn) = models();
        let nb = list(&[(-3.0, "bully plays here"), (-3.5, "go to boon_lay"), (-4.0, "go to bedok")]);
        let mut shuffled = nb.clone();
        shuffled.hypotheses.reverse();
        let cfg = RescoreConfig { interp_weight: 0.3, ..Default::default() };
        let a = rescore_nbest(&nb, &nlm, Some(&kn), &cfg).unwrap();
        let b = rescore_nbest(&shuffled, &nlm, Some(&kn), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_list_is_rejected() {
        let (nlm, _) = models();
        let nb = NBestList { utt_id: "x".into(), hypotheses: vec![] };
        assert!(matches!(rescore_nbest(&nb, &nlm, None, &RescoreConfig::default()), Err(Error::EmptyNBest(_))));
    }

    #[test]
    fn parallel_rescoring_keeps_input_order() {
        let (nlm, kn) = models();
        let lists: Vec<NBestList> = (0..9)
            .map(|i| NBestList { utt_id: format!("u{i}"), ..list(&[(-1.0, "go to bedok"), (-1.1, "bully plays")]) })
            .collect();
        let cfg = RescoreConfig::default();
        let par = rescore_all(&lists, &nlm, Some(&kn), &cfg, 3).unwrap();
        let seq: Vec<_> = lists.iter().map(|l| rescore_nbest(l, &nlm, Some(&kn), &cfg).unwrap()).collect();
        assert_eq!(par, seq);
    }

    #[test]
    fn nbest_file_round_trips() {
        let text = "u1\t1\t-12.5\tgo to boon_lay\nu1\t2\t-12.25\tbully plays\nu2\t1\t0\t\n";
        let lists = read_nbest(text.as_bytes()).unwrap();
        assert_eq!(lists.len(), 2);
        assert!(lists[1].hypotheses[0].words.is_empty());
        let mut out = Vec::new();
        write_nbest(&lists, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn malformed_nbest_lines_are_reported() {
        let e = read_nbest("u1\t1\t-1\ta\nu1\t2\tb\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = read_nbest("u1\t1\tNaN\ta\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = read_nbest("u1\t1\t0\ta\nu1\t3\t0\tb\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("expected rank 2"));
        let e = read_nbest("u1\t1\t0\ta\nu2\t1\t0\tb\nu1\t2\t0\tc\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("not contiguous"));
    }

    #[test]
    fn mixed_perplexity_endpoints() {
        let (nlm, kn) = models();
        let corpus: Vec<Sentence> = ["go to bedok", "bully plays"].iter().map(|l| tokenize(l)).collect();
        let ids: Vec<Vec<usize>> = corpus.iter().map(|s| encode(s, nlm.vocab())).collect();
        let p0 = mixed_perplexity(&nlm, Some(&kn), &corpus, 0.0).unwrap();
        assert!((p0 - nlm.perplexity(&ids).unwrap()).abs() < 1e-9);
        let p1 = mixed_perplexity(&nlm, Some(&kn), &corpus, 1.0).unwrap();
        assert!((p1 - kn.perplexity(&ids).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn scoring_is_stateless() {
        let (nlm, kn) = models();
        let s = tokenize("go to boon_lay");
        let a = lm_score_hypothesis(&nlm, Some(&kn), &s, 0.3).unwrap();
        let _ = lm_score_hypothesis(&nlm, Some(&kn), &tokenize("bully plays here"), 0.3).unwrap();
        assert_eq!(a, lm_score_hypothesis(&nlm, Some(&kn), &s, 0.3).unwrap());
    }

    #[test]
    fn transcripts_round_trip() {
        let text = "u1\tgo to boon_lay\nu2\t\n";
        let t = read_transcripts(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_transcripts(&t, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(read_transcripts("u1\ta\nu1\tb\n".as_bytes()).is_err());
    }
}
