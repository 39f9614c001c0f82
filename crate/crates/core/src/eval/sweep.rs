use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{corpus_wer, rare_word_accuracy, References, WerReport, RareAccuracyReport};
use crate::enrich::{
    enrich_embeddings, partition_by_frequency, restrict_to_nbest, select_candidates, EmbeddingTable, EnrichmentPlan,
    Scope, Sharing, Weighting,
};
use crate::error::{Error, Result};
use crate::neural::NeuralLm;
use crate::ngram::NGramModel;
use crate::rescore::{rescore_all, NBestList, RescoreConfig, RescoredList};
use crate::text::{Sentence, WordCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingKind {
    #[default]
    Equal,
    Frequency,
    Similarity,
}

impl FromStr for WeightingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(WeightingKind::Equal),
            "frequency" => Ok(WeightingKind::Frequency),
            "similarity" => Ok(WeightingKind::Similarity),
            _ => Err(Error::Config(format!("unknown weighting {s:?} (expected equal, frequency or similarity)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateConfig {
    pub k: usize,
    pub seed: u64,
    pub weighting: WeightingKind,
    pub sharing: Sharing,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig { k: 5, seed: 1, weighting: WeightingKind::Equal, sharing: Sharing::Shared }
    }
}

/// Enrich every rare scope word, or only those the n-best lists mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EnrichMode {
    #[default]
    #[serde(rename = "allStreets")]
    AllStreets,
    #[serde(rename = "fromNbest")]
    FromNbest,
}

impl FromStr for EnrichMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allStreets" => Ok(EnrichMode::AllStreets),
            "fromNbest" => Ok(EnrichMode::FromNbest),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected allStreets or fromNbest)"))),
        }
    }
}

impl fmt::Display for EnrichMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnrichMode::AllStreets => "allStreets",
            EnrichMode::FromNbest => "fromNbest",
        })
    }
}

/// Everything a single enrichment run reads. All inputs are borrowed
/// immutably, so no run can alter the base model.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentBundle<'a> {
    pub counts: &'a WordCounts,
    pub scope: &'a Scope,
    pub model: &'a NeuralLm,
    pub kn: Option<&'a NGramModel>,
    pub nbest: &'a [NBestList],
    pub refs: &'a References,
    /// Words whose recognition accuracy is reported.
    pub tracked: &'a BTreeSet<String>,
    pub rescore: RescoreConfig,
    pub candidates: CandidateConfig,
    pub mode: EnrichMode,
    pub similarity: Option<&'a EmbeddingTable>,
    /// Worker threads for rescoring; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub plan: EnrichmentPlan,
    pub rescored: Vec<RescoredList>,
    pub wer: WerReport,
    pub rare: RareAccuracyReport,
}

impl ExperimentBundle<'_> {
    /// Builds the plan for `threshold` and `k`. An empty rare or frequent
    /// set yields an empty plan.
    pub fn plan(&self, threshold: u64, k: usize) -> Result<EnrichmentPlan> {
        let mut p = partition_by_frequency(self.counts, self.scope, self.model.vocab(), threshold);
        if self.mode == EnrichMode::FromNbest {
            p = restrict_to_nbest(&p, self.nbest);
        }
        if p.rare.is_empty() || p.frequent.is_empty() {
            return Ok(EnrichmentPlan::default());
        }
        let weighting = match self.candidates.weighting {
            WeightingKind::Equal => Weighting::Equal,
            WeightingKind::Frequency => Weighting::Frequency,
            WeightingKind::Similarity => Weighting::Similarity(
                self.similarity.ok_or_else(|| Error::Config("similarity weighting needs an embedding table".into()))?,
            ),
        };
        select_candidates(&p, k, self.candidates.seed, weighting, self.candidates.sharing)
    }

    /// Rescores with `model` and scores the one-best output.
    pub fn evaluate(&self, model: &NeuralLm) -> Result<(Vec<RescoredList>, WerReport, RareAccuracyReport)> {
        let rescored = rescore_all(self.nbest, model, self.kn, &self.rescore, self.jobs)?;
        let one_best: Vec<(String, Sentence)> = rescored.iter().map(|l| (l.utt_id.clone(), l.best().words.clone())).collect();
        let wer = corpus_wer(self.refs, &one_best)?;
        let rare = rare_word_accuracy(self.refs, &one_best, self.tracked)?;
        Ok((rescored, wer, rare))
    }
}

/// partition, plan, enrich a copy, rescore, score.
pub fn run_enrichment(bundle: &ExperimentBundle<'_>, threshold: u64, k: usize) -> Result<RunResult> {
    let plan = bundle.plan(threshold, k)?;
    let (rescored, wer, rare) = if plan.is_empty() {
        bundle.evaluate(bundle.model)?
    } else {
        let (enriched, _) = enrich_embeddings(bundle.model, &plan)?;
        bundle.evaluate(&enriched)?
    };
    Ok(RunResult { plan, rescored, wer, rare })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: u64,
    pub rare_words: usize,
    pub wer: WerReport,
    pub rare_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

const COLUMNS: [&str; 6] = ["rare_words", "wer", "substitutions", "insertions", "deletions", "rare_accuracy"];

impl SweepTable {
    fn cells(row: &SweepRow) -> [String; 7] {
        [
            row.value.to_string(),
            row.rare_words.to_string(),
            format!("{:.4}", row.wer.wer()),
            row.wer.substitutions.to_string(),
            row.wer.insertions.to_string(),
            row.wer.deletions.to_string(),
            row.rare_accuracy.map_or("undefined".into(), |a| format!("{a:.4}")),
        ]
    }

    fn header(&self) -> Vec<&str> {
        std::iter::once(self.parameter.as_str()).chain(COLUMNS).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t") + "\n";
        for r in &self.rows {
            out += &(Self::cells(r).join("\t") + "\n");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let body: Vec<[String; 7]> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..7)
            .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let row: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", row.join("  "));
        };
        line(header.clone(), &mut out);
        for r in &body {
            line(r.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }
}

fn row(value: u64, r: RunResult) -> SweepRow {
    SweepRow { value, rare_words: r.plan.len(), wer: r.wer, rare_accuracy: r.rare.accuracy() }
}

/// One run per threshold at the bundle's candidate count.
pub fn sweep_threshold(bundle: &ExperimentBundle<'_>, thresholds: &[u64]) -> Result<SweepTable> {
    let rows = thresholds
        .iter()
        .map(|&t| Ok(row(t, run_enrichment(bundle, t, bundle.candidates.k)?)))
        .collect::<Result<_>>()?;
    Ok(SweepTable { parameter: "threshold".into(), rows })
}

/// One run per candidate count at a fixed threshold.
pub fn sweep_candidates(bundle: &ExperimentBundle<'_>, threshold: u64, ks: &[usize]) -> Result<SweepTable> {
    let rows = ks
        .iter()
        .map(|&k| Ok(row(k as u64, run_enrichment(bundle, threshold, k)?)))
        .collect::<Result<_>>()?;
    Ok(SweepTable { parameter: "k".into(), rows })
}
