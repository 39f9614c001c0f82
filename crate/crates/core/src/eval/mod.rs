//! Word error rate, rare-word accuracy and the enrichment sweeps.

mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::text::Sentence;

pub use sweep::{
    run_enrichment, sweep_candidates, sweep_threshold, CandidateConfig, EnrichMode, ExperimentBundle, RunResult,
    SweepRow, SweepTable, WeightingKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditOp {
    Match,
    Sub,
    Ins,
    Del,
}

impl EditOp {
    fn tag(self) -> &'static str {
        match self {
            EditOp::Match => "match",
            EditOp::Sub => "sub",
            EditOp::Ins => "ins",
            EditOp::Del => "del",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub op: EditOp,
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub ops: Vec<AlignedPair>,
}

impl Alignment {
    pub fn count(&self, op: EditOp) -> usize {
        self.ops.iter().filter(|p| p.op == op).count()
    }

    pub fn cost(&self) -> usize {
        self.ops.len() - self.count(EditOp::Match)
    }

    pub fn reference_tokens(&self) -> Vec<&str> {
        self.ops.iter().filter_map(|p| p.reference.as_deref()).collect()
    }

    pub fn hypothesis_tokens(&self) -> Vec<&str> {
        self.ops.iter().filter_map(|p| p.hypothesis.as_deref()).collect()
    }

    /// Three aligned rows: reference, hypothesis and op tags.
    pub fn to_text(&self) -> String {
        let cells: Vec<[&str; 3]> = self
            .ops
            .iter()
            .map(|p| [p.reference.as_deref().unwrap_or("*"), p.hypothesis.as_deref().unwrap_or("*"), p.op.tag()])
            .collect();
        let mut rows = [String::from("REF:"), String::from("HYP:"), String::from("OP: ")];
        for c in &cells {
            let w = c.iter().map(|s| s.chars().count()).max().unwrap_or(0);
            for (row, s) in rows.iter_mut().zip(c) {
                let _ = write!(row, " {s:<w$}");
            }
        }
        rows.iter().map(|r| r.trim_end()).collect::<Vec<_>>().join("\n") + "\n"
    }
}

/// Minimal unit-cost alignment. The backtrace prefers match, then
/// substitution, deletion and insertion.
pub fn align(reference: &Sentence, hypothesis: &Sentence) -> Alignment {
    let (r, h) = (reference.tokens(), hypothesis.tokens());
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![0u32; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i as u32;
    }
    for j in 0..=m {
        d[0][j] = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + u32::from(r[i - 1] != h[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        let here = d[i][j];
        if i > 0 && j > 0 && r[i - 1] == h[j - 1] && here == d[i - 1][j - 1] {
            ops.push(AlignedPair { op: EditOp::Match, reference: Some(r[i - 1].clone()), hypothesis: Some(h[j - 1].clone()) });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && here == d[i - 1][j - 1] + 1 {
            ops.push(AlignedPair { op: EditOp::Sub, reference: Some(r[i - 1].clone()), hypothesis: Some(h[j - 1].clone()) });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[i - 1][j] + 1 {
            ops.push(AlignedPair { op: EditOp::Del, reference: Some(r[i - 1].clone()), hypothesis: None });
            i -= 1;
        } else {
            ops.push(AlignedPair { op: EditOp::Ins, reference: None, hypothesis: Some(h[j - 1].clone()) });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_word_count: usize,
    pub utterances: usize,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Errors per reference word. An empty reference set gives 0 with no
    /// errors and infinity otherwise.
    pub fn wer(&self) -> f64 {
        match (self.errors(), self.ref_word_count) {
            (0, _) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, n) => e as f64 / n as f64,
        }
    }

    fn add(&mut self, a: &Alignment) {
        self.substitutions += a.count(EditOp::Sub);
        self.insertions += a.count(EditOp::Ins);
        self.deletions += a.count(EditOp::Del);
        self.ref_word_count += a.reference_tokens().len();
        self.utterances += 1;
    }
}

pub type References = BTreeMap<String, Sentence>;

fn aligned<'a>(refs: &'a References, hyps: &'a [(String, Sentence)]) -> impl Iterator<Item = Result<Alignment>> + 'a {
    hyps.iter().map(move |(utt, hyp)| {
        let r = refs.get(utt).ok_or_else(|| Error::MissingReference(utt.clone()))?;
        Ok(align(r, hyp))
    })
}

/// Totals over the hypothesised utterances; references without a
/// hypothesis are ignored.
pub fn corpus_wer(refs: &References, hyps: &[(String, Sentence)]) -> Result<WerReport> {
    let mut report = WerReport::default();
    for a in aligned(refs, hyps) {
        report.add(&a?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RareAccuracyReport {
    pub tracked: BTreeSet<String>,
    pub occurrences: usize,
    pub correct: usize,
}

impl RareAccuracyReport {
    /// `None` when no tracked word occurs in the references.
    pub fn accuracy(&self) -> Option<f64> {
        (self.occurrences > 0).then(|| self.correct as f64 / self.occurrences as f64)
    }
}

/// Each reference occurrence of a tracked word counts as correct when its
/// alignment op is a match.
pub fn rare_word_accuracy(refs: &References, hyps: &[(String, Sentence)], tracked: &BTreeSet<String>) -> Result<RareAccuracyReport> {
    let mut report = RareAccuracyReport { tracked: tracked.clone(), occurrences: 0, correct: 0 };
    for a in aligned(refs, hyps) {
        for p in a?.ops {
            if let Some(w) = &p.reference {
                if tracked.contains(w) {
                    report.occurrences += 1;
                    report.correct += usize::from(p.op == EditOp::Match);
                }
            }
        }
    }
    Ok(report)
}

/// Human-readable summary followed by a `key<TAB>value` block.
pub fn format_report(wer: &WerReport, rare: Option<&RareAccuracyReport>) -> String {
    let mut rows: Vec<(&str, String)> = vec![
        ("utterances", wer.utterances.to_string()),
        ("ref_words", wer.ref_word_count.to_string()),
        ("substitutions", wer.substitutions.to_string()),
        ("insertions", wer.insertions.to_string()),
        ("deletions", wer.deletions.to_string()),
        ("wer", format!("{:.4}", wer.wer())),
    ];
    if let Some(r) = rare {
        rows.push(("rare_tracked", r.tracked.len().to_string()));
        rows.push(("rare_occurrences", r.occurrences.to_string()));
        rows.push(("rare_correct", r.correct.to_string()));
        rows.push(("rare_accuracy", r.accuracy().map_or("undefined".into(), |a| format!("{a:.4}"))));
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in &rows {
        let _ = writeln!(out, "{k:<width$}  {v:>10}");
    }
    out.push('\n');
    for (k, v) in &rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    if rare.is_some_and(|r| r.occurrences == 0) {
        out.push_str("warning\tno tracked word occurs in the references\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn refs(items: &[(&str, &str)]) -> References {
        items.iter().map(|(u, t)| (u.to_string(), tokenize(t))).collect()
    }

    fn hyps(items: &[(&str, &str)]) -> Vec<(String, Sentence)> {
        items.iter().map(|(u, t)| (u.to_string(), tokenize(t))).collect()
    }

    #[test]
    fn identity_and_deletion() {
        let a = align(&tokenize("a b c"), &tokenize("a b c"));
        assert_eq!(a.cost(), 0);
        assert!(a.ops.iter().all(|p| p.op == EditOp::Match));
        let a = align(&tokenize("a b"), &tokenize("a"));
        assert_eq!(a.cost(), 1);
        assert_eq!(a.count(EditOp::Del), 1);
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" vs "c d": two substitutions or del + ins both cost 2
        let a = align(&tokenize("a b"), &tokenize("c d"));
        assert_eq!(a.ops.iter().map(|p| p.op).collect::<Vec<_>>(), vec![EditOp::Sub, EditOp::Sub]);
        let a = align(&tokenize(""), &tokenize("x y"));
        assert_eq!(a.count(EditOp::Ins), 2);
    }

    #[test]
    fn projections_reproduce_inputs() {
        let r = tokenize("the market at boon_lay opened");
        let h = tokenize("the market at bully plays opened");
        let a = align(&r, &h);
        assert_eq!(a.reference_tokens(), r.iter().collect::<Vec<_>>());
        assert_eq!(a.hypothesis_tokens(), h.iter().collect::<Vec<_>>());
        assert_eq!(a.cost(), 2);
    }

    #[test]
    fn wer_arithmetic_and_additivity() {
        let r = refs(&[("u1", "a b c d"), ("u2", "x y")]);
        let one = corpus_wer(&r, &hyps(&[("u1", "a b z d")])).unwrap();
        assert_eq!(one.wer(), 0.25);
        let two = corpus_wer(&r, &hyps(&[("u2", "x")])).unwrap();
        let both = corpus_wer(&r, &hyps(&[("u1", "a b z d"), ("u2", "x")])).unwrap();
        assert_eq!(both.errors(), one.errors() + two.errors());
        assert_eq!(both.ref_word_count, 6);
        let reversed = corpus_wer(&r, &hyps(&[("u2", "x"), ("u1", "a b z d")])).unwrap();
        assert_eq!(both, reversed);
        assert_eq!(corpus_wer(&r, &hyps(&[("u1", "a b c d")])).unwrap().wer(), 0.0);
    }

    #[test]
    fn missing_reference_names_the_utterance() {
        let e = corpus_wer(&refs(&[("u1", "a")]), &hyps(&[("u9", "a")])).unwrap_err();
        assert!(e.to_string().contains("u9"));
    }

    #[test]
    fn rare_accuracy_counts_occurrences() {
        let tracked: BTreeSet<String> = ["boon_lay".to_string()].into();
        let r = refs(&[("u1", "go to boon_lay place"), ("u2", "boon_lay and boon_lay")]);
        let h = hyps(&[("u1", "go to bully plays place"), ("u2", "boon_lay and boon_lay")]);
        let rep = rare_word_accuracy(&r, &h, &tracked).unwrap();
        assert_eq!((rep.occurrences, rep.correct), (3, 2));
        let none = rare_word_accuracy(&refs(&[("u1", "a")]), &hyps(&[("u1", "a")]), &tracked).unwrap();
        assert_eq!(none.occurrences, 0);
        assert_eq!(none.accuracy(), None);
        assert!(format_report(&corpus_wer(&r, &h).unwrap(), Some(&none)).contains("warning"));
    }

    #[test]
    fn report_has_key_value_block() {
        let r = refs(&[("u1", "a b c d")]);
        let w = corpus_wer(&r, &hyps(&[("u1", "a b z d")])).unwrap();
        let text = format_report(&w, None);
        assert!(text.contains("wer\t0.2500\n"));
        assert!(text.contains("substitutions\t1\n"));
    }

    #[test]
    fn alignment_text_columns_line_up() {
        let a = align(&tokenize("go to boon_lay"), &tokenize("go bully plays"));
        let text = a.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("REF: go"));
    }
}
