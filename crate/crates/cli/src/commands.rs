use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde_json::json;

use rarelm::enrich::{
    enrich_embeddings, partition_by_frequency, restrict_to_nbest, select_candidates, EmbeddingTable, Scope, Sharing,
    Weighting,
};
use rarelm::eval::{
    corpus_wer, format_report, rare_word_accuracy, sweep_candidates, sweep_threshold, EnrichMode, ExperimentBundle,
    References, WeightingKind,
};
use rarelm::neural::{load_model, save_model, train, NeuralLm, TrainConfig, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM};
use rarelm::ngram::{train_kn, KnConfig, NGramModel};
use rarelm::rescore::{
    format_one_best, format_rescored, mixed_perplexity, read_nbest, read_transcripts, rescore_all, NBestList,
};
use rarelm::synth::gen_synthetic;
use rarelm::text::{build_vocab, encode, join_phrases, read_corpus, word_counts, PhraseList, Sentence, Vocabulary, WordCounts};

use crate::config::{digest, RunConfig};
use crate::{Cli, Command, CorpusArgs, UsageError};

const DEFAULT_THRESHOLDS: [u64; 5] = [0, 2, 10, 50, 1_000_000];
const DEFAULT_THRESHOLD: u64 = 10;

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    jobs: usize,
}

impl Ctx {
    fn stamp(&self, command: &str, settings: serde_json::Value) {
        let all = json!({ "command": command, "seed": self.seed, "jobs": self.jobs, "settings": settings });
        eprintln!("rarelm {} seed={} config={}", env!("CARGO_PKG_VERSION"), self.seed, digest(&all));
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        Ok(self.cfg.path(flag, key)?)
    }

    fn optional(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        self.cfg.optional_path(flag, key)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx { seed: cli.seed.or(cfg.seed).unwrap_or(1), jobs: cli.jobs.or(cfg.jobs).unwrap_or(1), cfg };
    match cli.command {
        c @ Command::BuildVocab { .. } => build_vocab_cmd(&ctx, c),
        c @ Command::TrainLstm { .. } => train_lstm(&ctx, c),
        c @ Command::TrainNgram { .. } => train_ngram(&ctx, c),
        c @ Command::Enrich { .. } => enrich(&ctx, c),
        c @ Command::Rescore { .. } => rescore(&ctx, c),
        c @ Command::Ppl { .. } => ppl(&ctx, c),
        c @ Command::Wer { .. } => wer(&ctx, c),
        c @ Command::Sweep { .. } => sweep(&ctx, c),
        c @ Command::GenSynthetic { .. } => gen(&ctx, c),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn phrases(lexicon: Option<&Path>) -> Result<PhraseList> {
    match lexicon {
        Some(p) => PhraseList::read(open(p)?).with_context(|| format!("reading {}", p.display())),
        None => Ok(PhraseList::new()),
    }
}

fn sentences(path: &Path, phrases: &PhraseList) -> Result<Vec<Sentence>> {
    read_corpus(open(path)?, phrases).with_context(|| format!("reading {}", path.display()))
}

fn corpus_input(ctx: &Ctx, input: &CorpusArgs) -> Result<(PathBuf, Option<PathBuf>, Vec<Sentence>)> {
    let corpus = ctx.path(&input.corpus, "corpus")?;
    let lexicon = ctx.optional(&input.lexicon, "lexicon");
    let sents = sentences(&corpus, &phrases(lexicon.as_deref())?)?;
    Ok((corpus, lexicon, sents))
}

fn vocab_for(ctx: &Ctx, file: Option<PathBuf>, sents: &[Sentence]) -> Result<Vocabulary> {
    match file {
        Some(p) => Vocabulary::read(open(&p)?).with_context(|| format!("reading {}", p.display())),
        None => Ok(build_vocab(sents, ctx.cfg.vocab.min_count.unwrap_or(1), ctx.cfg.vocab.max_size)?),
    }
}

fn load_kn(path: &Path) -> Result<NGramModel> {
    NGramModel::from_arpa(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_nlm(path: &Path) -> Result<NeuralLm> {
    load_model(path).with_context(|| format!("reading {}", path.display()))
}

fn scope(path: &Path) -> Result<Scope> {
    Scope::read(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn word_set(path: &Path) -> Result<BTreeSet<String>> {
    match scope(path)? {
        Scope::Words(w) => Ok(w),
        Scope::FullVocabulary => unreachable!("files always list words"),
    }
}

fn nbest_lists(path: &Path, phrases: &PhraseList) -> Result<Vec<NBestList>> {
    let mut lists = read_nbest(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if !phrases.is_empty() {
        for h in lists.iter_mut().flat_map(|l| l.hypotheses.iter_mut()) {
            h.words = join_phrases(&h.words, phrases);
        }
    }
    Ok(lists)
}

fn transcripts(path: &Path, phrases: &PhraseList) -> Result<Vec<(String, Sentence)>> {
    let items = read_transcripts(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(items.into_iter().map(|(u, s)| (u, join_phrases(&s, phrases))).collect())
}

/// Training counts from a corpus, or the counts stored with the model.
fn counts_for(corpus: Option<&Path>, phrases: &PhraseList, model: &NeuralLm) -> Result<WordCounts> {
    match corpus {
        Some(p) => Ok(word_counts(&sentences(p, phrases)?)),
        None => {
            let v = model.vocab();
            Ok(v.words().iter().cloned().zip(v.counts().iter().copied()).collect())
        }
    }
}

fn parse_mode(flag: &Option<String>, ctx: &Ctx) -> Result<EnrichMode> {
    Ok(match flag {
        Some(m) => m.parse()?,
        None => ctx.cfg.enrich.mode.unwrap_or_default(),
    })
}

fn display(p: &Option<PathBuf>) -> serde_json::Value {
    p.as_ref().map_or(serde_json::Value::Null, |p| json!(p.display().to_string()))
}

fn build_vocab_cmd(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::BuildVocab { input, min_count, max_size, out } = c else { unreachable!() };
    let out = ctx.path(&out, "vocab")?;
    let min_count = min_count.or(ctx.cfg.vocab.min_count).unwrap_or(1);
    let max_size = max_size.or(ctx.cfg.vocab.max_size);
    let (corpus, lexicon, sents) = corpus_input(ctx, &input)?;
    ctx.stamp(
        "build-vocab",
        json!({ "corpus": corpus.display().to_string(), "lexicon": display(&lexicon), "min_count": min_count, "max_size": max_size }),
    );
    let vocab = build_vocab(&sents, min_count, max_size)?;
    let mut buf = Vec::new();
    vocab.write(&mut buf)?;
    fs::write(&out, buf).with_context(|| format!("cannot write {}", out.display()))?;
    info!("{} words written to {}", vocab.len(), out.display());
    Ok(())
}

fn train_lstm(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::TrainLstm {
        input,
        vocab,
        valid,
        embed_dim,
        hidden_dim,
        epochs,
        learning_rate,
        lr_decay,
        batch_size,
        bptt_len,
        dropout,
        clip_norm,
        out,
        log,
    } = c
    else {
        unreachable!()
    };
    let out = ctx.path(&out, "model")?;
    let base = ctx.cfg.train.clone();
    let tc = TrainConfig {
        learning_rate: learning_rate.unwrap_or(base.learning_rate),
        clip_norm: clip_norm.unwrap_or(base.clip_norm),
        bptt_len: bptt_len.unwrap_or(base.bptt_len),
        dropout_p: dropout.unwrap_or(base.dropout_p),
        epochs: epochs.unwrap_or(base.epochs),
        seed: ctx.seed,
        lr_decay: lr_decay.unwrap_or(base.lr_decay),
        batch_size: batch_size.unwrap_or(base.batch_size),
    };
    let d_s = embed_dim.or(ctx.cfg.model.embed_dim).unwrap_or(DEFAULT_EMBED_DIM);
    let d_h = hidden_dim.or(ctx.cfg.model.hidden_dim).unwrap_or(DEFAULT_HIDDEN_DIM);
    let (corpus, lexicon, sents) = corpus_input(ctx, &input)?;
    let vocab_path = ctx.optional(&vocab, "vocab");
    let valid_path = ctx.optional(&valid, "valid");
    ctx.stamp(
        "train-lstm",
        json!({
            "corpus": corpus.display().to_string(), "lexicon": display(&lexicon), "vocab": display(&vocab_path),
            "valid": display(&valid_path), "embed_dim": d_s, "hidden_dim": d_h, "train": tc,
        }),
    );
    let vocab = vocab_for(ctx, vocab_path, &sents)?;
    let ids: Vec<Vec<usize>> = sents.iter().map(|s| encode(s, &vocab)).collect();
    let valid_ids = match &valid_path {
        Some(p) => {
            let v = sentences(p, &phrases(lexicon.as_deref())?)?;
            Some(v.iter().map(|s| encode(s, &vocab)).collect::<Vec<_>>())
        }
        None => None,
    };
    let model = NeuralLm::init(&vocab, d_s, d_h, ctx.seed)?;
    let outcome = train(model, &ids, valid_ids.as_deref(), &tc)?;
    save_model(&outcome.model, &out).with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(p) = ctx.optional(&log, "log") {
        let mut text = String::from("epoch\tlearning_rate\ttrain_ppl\tvalid_ppl\n");
        for e in &outcome.log {
            let v = e.valid_ppl.map_or("-".to_string(), |v| format!("{v:.4}"));
            text += &format!("{}\t{}\t{:.4}\t{v}\n", e.epoch, e.learning_rate, e.train_ppl);
        }
        write_text(&p, &text)?;
    }
    info!("checkpoint written to {}", out.display());
    Ok(())
}

fn train_ngram(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::TrainNgram { input, vocab, order, cutoff, out } = c else { unreachable!() };
    let out = ctx.path(&out, "kn")?;
    let order = order.or(ctx.cfg.ngram.order).unwrap_or(4);
    let cutoff = cutoff.or(ctx.cfg.ngram.cutoff);
    let (corpus, lexicon, sents) = corpus_input(ctx, &input)?;
    let vocab_path = ctx.optional(&vocab, "vocab");
    ctx.stamp(
        "train-ngram",
        json!({ "corpus": corpus.display().to_string(), "lexicon": display(&lexicon), "vocab": display(&vocab_path), "order": order, "cutoff": cutoff }),
    );
    let vocab = vocab_for(ctx, vocab_path, &sents)?;
    let ids: Vec<Vec<usize>> = sents.iter().map(|s| encode(s, &vocab)).collect();
    let model = train_kn(&ids, &vocab, &KnConfig { order, count_cutoff: cutoff, ..Default::default() })?;
    write_text(&out, &model.to_arpa())
}

fn enrich(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::Enrich { model, lexicon, corpus, threshold, k, weighting, sharing, mode, nbest, similarity, out, plan_out, report } = c
    else {
        unreachable!()
    };
    let model_path = ctx.path(&model, "model")?;
    let lexicon = ctx.path(&lexicon, "lexicon")?;
    let out = ctx.path(&out, "out")?;
    let threshold = threshold.or(ctx.cfg.enrich.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let mut cand = ctx.cfg.candidates;
    cand.seed = ctx.seed;
    if let Some(k) = k {
        cand.k = k;
    }
    if let Some(w) = &weighting {
        cand.weighting = w.parse()?;
    }
    if let Some(s) = &sharing {
        cand.sharing = if s == "perword" { Sharing::PerWord } else { Sharing::Shared };
    }
    let mode = parse_mode(&mode, ctx)?;
    let nbest_path = ctx.optional(&nbest, "nbest");
    if mode == EnrichMode::FromNbest && nbest_path.is_none() {
        return Err(UsageError("--mode fromNbest needs --nbest".into()).into());
    }
    let sim_path = ctx.optional(&similarity, "similarity");
    if cand.weighting == WeightingKind::Similarity && sim_path.is_none() {
        return Err(UsageError("--weighting similarity needs --similarity".into()).into());
    }
    let corpus = ctx.optional(&corpus, "corpus");
    ctx.stamp(
        "enrich",
        json!({
            "model": model_path.display().to_string(), "lexicon": lexicon.display().to_string(), "corpus": display(&corpus),
            "threshold": threshold, "candidates": cand, "mode": mode, "nbest": display(&nbest_path), "similarity": display(&sim_path),
        }),
    );

    let nlm = load_nlm(&model_path)?;
    let lex_phrases = phrases(Some(&lexicon))?;
    let counts = counts_for(corpus.as_deref(), &lex_phrases, &nlm)?;
    let mut partition = partition_by_frequency(&counts, &scope(&lexicon)?, nlm.vocab(), threshold);
    if let Some(p) = &nbest_path {
        if mode == EnrichMode::FromNbest {
            partition = restrict_to_nbest(&partition, &nbest_lists(p, &lex_phrases)?);
        }
    }
    info!("{} frequent and {} rare words at threshold {threshold}", partition.frequent.len(), partition.rare.len());
    let table = match &sim_path {
        Some(p) => Some(EmbeddingTable::read(open(p)?).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let weighting = match cand.weighting {
        WeightingKind::Equal => Weighting::Equal,
        WeightingKind::Frequency => Weighting::Frequency,
        WeightingKind::Similarity => Weighting::Similarity(table.as_ref().expect("checked above")),
    };
    let plan = select_candidates(&partition, cand.k, cand.seed, weighting, cand.sharing)?;
    if plan.is_empty() {
        warn!("no rare words to enrich; the model is written unchanged");
    }
    let (enriched, rep) = enrich_embeddings(&nlm, &plan)?;
    if !rep.untouched_preserved() {
        anyhow::bail!("internal error: parameters outside the rare columns changed");
    }
    save_model(&enriched, &out).with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(p) = ctx.optional(&plan_out, "plan") {
        write_text(&p, &plan.to_text())?;
    }
    if let Some(p) = ctx.optional(&report, "report") {
        write_text(&p, &rep.to_text())?;
    }
    info!("{} columns modified", rep.modified_columns);
    Ok(())
}

fn rescore_config(ctx: &Ctx, interp: Option<f64>, lm: Option<f64>, wip: Option<f64>) -> rarelm::rescore::RescoreConfig {
    let mut rc = ctx.cfg.rescore;
    rc.interp_weight = interp.unwrap_or(rc.interp_weight);
    rc.lm_weight = lm.unwrap_or(rc.lm_weight);
    rc.word_insertion_penalty = wip.unwrap_or(rc.word_insertion_penalty);
    rc
}

fn rescore(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::Rescore { model, kn, nbest, lexicon, interp_weight, lm_weight, word_insertion_penalty, out, one_best } = c
    else {
        unreachable!()
    };
    let model_path = ctx.path(&model, "model")?;
    let nbest_path = ctx.path(&nbest, "nbest")?;
    let kn_path = ctx.optional(&kn, "kn");
    let lexicon = ctx.optional(&lexicon, "lexicon");
    let rc = rescore_config(ctx, interp_weight, lm_weight, word_insertion_penalty);
    if rc.interp_weight > 0.0 && kn_path.is_none() {
        return Err(UsageError("a positive --interp-weight needs --kn".into()).into());
    }
    ctx.stamp(
        "rescore",
        json!({ "model": model_path.display().to_string(), "kn": display(&kn_path), "nbest": nbest_path.display().to_string(), "lexicon": display(&lexicon), "rescore": rc }),
    );
    rc.validate()?;
    let nlm = load_nlm(&model_path)?;
    let kn = kn_path.as_deref().map(load_kn).transpose()?;
    let lists = nbest_lists(&nbest_path, &phrases(lexicon.as_deref())?)?;
    let rescored = rescore_all(&lists, &nlm, kn.as_ref(), &rc, ctx.jobs)?;
    emit(ctx.optional(&out, "out").as_deref(), &format_rescored(&rescored))?;
    if let Some(p) = ctx.optional(&one_best, "one_best") {
        write_text(&p, &format_one_best(&rescored))?;
    }
    Ok(())
}

fn ppl(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::Ppl { input, refs, model, kn, interp_weight } = c else { unreachable!() };
    let model_path = ctx.optional(&model, "model");
    let kn_path = ctx.optional(&kn, "kn");
    let mu = interp_weight.unwrap_or(if model_path.is_none() { 1.0 } else { ctx.cfg.rescore.interp_weight });
    if model_path.is_none() && kn_path.is_none() {
        return Err(UsageError("ppl needs --model, --kn or both".into()).into());
    }
    if mu > 0.0 && kn_path.is_none() {
        return Err(UsageError("a positive --interp-weight needs --kn".into()).into());
    }
    if mu < 1.0 && model_path.is_none() {
        return Err(UsageError("an --interp-weight below 1 needs --model".into()).into());
    }
    let refs = ctx.optional(&refs, "refs");
    let (corpus, lexicon, sents) = match &refs {
        Some(r) if input.corpus.is_none() => {
            let lexicon = ctx.optional(&input.lexicon, "lexicon");
            let items = transcripts(r, &phrases(lexicon.as_deref())?)?;
            (r.clone(), lexicon, items.into_iter().map(|(_, s)| s).collect())
        }
        Some(_) => return Err(UsageError("give either --corpus or --refs, not both".into()).into()),
        None => corpus_input(ctx, &input)?,
    };
    ctx.stamp(
        "ppl",
        json!({ "corpus": corpus.display().to_string(), "lexicon": display(&lexicon), "model": display(&model_path), "kn": display(&kn_path), "interp_weight": mu }),
    );
    let kn = kn_path.as_deref().map(load_kn).transpose()?;
    let value = match (&model_path, &kn) {
        (None, Some(kn)) => kn.perplexity(&sents.iter().map(|s| encode(s, kn.vocab())).collect::<Vec<_>>())?,
        (Some(p), kn) => mixed_perplexity(&load_nlm(p)?, kn.as_ref(), &sents, mu)?,
        (None, None) => unreachable!("checked above"),
    };
    let predicted: usize = sents.iter().map(|s| s.len() + 1).sum();
    println!("ppl\t{value:.4}\nsentences\t{}\npredicted\t{predicted}", sents.len());
    Ok(())
}

fn wer(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::Wer { refs, hyp, tracked, lexicon, out } = c else { unreachable!() };
    let refs_path = ctx.path(&refs, "refs")?;
    let hyp_path = ctx.path(&hyp, "hyp")?;
    let tracked_path = ctx.optional(&tracked, "tracked");
    let lexicon = ctx.optional(&lexicon, "lexicon");
    ctx.stamp(
        "wer",
        json!({ "refs": refs_path.display().to_string(), "hyp": hyp_path.display().to_string(), "tracked": display(&tracked_path), "lexicon": display(&lexicon) }),
    );
    let ph = phrases(lexicon.as_deref())?;
    let refs: References = transcripts(&refs_path, &ph)?.into_iter().collect();
    let hyps = transcripts(&hyp_path, &ph)?;
    let report = corpus_wer(&refs, &hyps)?;
    let rare = match &tracked_path {
        Some(p) => Some(rare_word_accuracy(&refs, &hyps, &word_set(p)?)?),
        None => None,
    };
    emit(ctx.optional(&out, "report").as_deref(), &format_report(&report, rare.as_ref()))
}

fn sweep(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::Sweep { model, kn, lexicon, corpus, nbest, refs, tracked, thresholds, ks, threshold, k, mode, interp_weight, lm_weight, out } = c
    else {
        unreachable!()
    };
    let model_path = ctx.path(&model, "model")?;
    let lexicon = ctx.path(&lexicon, "lexicon")?;
    let nbest_path = ctx.path(&nbest, "nbest")?;
    let refs_path = ctx.path(&refs, "refs")?;
    let kn_path = ctx.optional(&kn, "kn");
    let corpus = ctx.optional(&corpus, "corpus");
    let tracked_path = ctx.optional(&tracked, "tracked");
    let threshold = threshold.or(ctx.cfg.enrich.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let mut cand = ctx.cfg.candidates;
    cand.seed = ctx.seed;
    if let Some(k) = k {
        cand.k = k;
    }
    let mode = parse_mode(&mode, ctx)?;
    let rc = rescore_config(ctx, interp_weight, lm_weight, None);
    if rc.interp_weight > 0.0 && kn_path.is_none() {
        return Err(UsageError("a positive --interp-weight needs --kn".into()).into());
    }
    if cand.weighting == WeightingKind::Similarity {
        return Err(UsageError("sweeps support equal and frequency weighting only".into()).into());
    }
    let ks = ks.or_else(|| ctx.cfg.sweep.ks.clone());
    let thresholds = if ks.is_some() {
        None
    } else {
        Some(thresholds.or_else(|| ctx.cfg.sweep.thresholds.clone()).unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()))
    };
    ctx.stamp(
        "sweep",
        json!({
            "model": model_path.display().to_string(), "kn": display(&kn_path), "lexicon": lexicon.display().to_string(),
            "corpus": display(&corpus), "nbest": nbest_path.display().to_string(), "refs": refs_path.display().to_string(),
            "tracked": display(&tracked_path), "thresholds": thresholds, "ks": ks, "threshold": threshold,
            "candidates": cand, "mode": mode, "rescore": rc,
        }),
    );
    let nlm = load_nlm(&model_path)?;
    let kn = kn_path.as_deref().map(load_kn).transpose()?;
    let ph = phrases(Some(&lexicon))?;
    let counts = counts_for(corpus.as_deref(), &ph, &nlm)?;
    let scope = scope(&lexicon)?;
    let lists = nbest_lists(&nbest_path, &ph)?;
    let refs: References = transcripts(&refs_path, &ph)?.into_iter().collect();
    let tracked = match &tracked_path {
        Some(p) => word_set(p)?,
        None => partition_by_frequency(&counts, &scope, nlm.vocab(), threshold).rare,
    };
    let bundle = ExperimentBundle {
        counts: &counts,
        scope: &scope,
        model: &nlm,
        kn: kn.as_ref(),
        nbest: &lists,
        refs: &refs,
        tracked: &tracked,
        rescore: rc,
        candidates: cand,
        mode,
        similarity: None,
        jobs: ctx.jobs,
    };
    let table = match (&thresholds, &ks) {
        (Some(ts), _) => sweep_threshold(&bundle, ts)?,
        (None, Some(ks)) => sweep_candidates(&bundle, threshold, ks)?,
        (None, None) => unreachable!("thresholds default above"),
    };
    print!("{}", table.to_text());
    if let Some(p) = ctx.optional(&out, "out") {
        write_text(&p, &table.to_tsv())?;
    }
    Ok(())
}

fn gen(ctx: &Ctx, c: Command) -> Result<()> {
    let Command::GenSynthetic { out, streets, rare_fraction, threshold, train_sentences, eval_utterances, nbest_size, confusions } = c
    else {
        unreachable!()
    };
    let out = ctx.path(&out, "out")?;
    let mut sc = ctx.cfg.synth.clone();
    sc.seed = ctx.seed;
    sc.streets = streets.unwrap_or(sc.streets);
    sc.rare_fraction = rare_fraction.unwrap_or(sc.rare_fraction);
    sc.threshold = threshold.unwrap_or(sc.threshold);
    sc.train_sentences = train_sentences.unwrap_or(sc.train_sentences);
    sc.eval_utterances = eval_utterances.unwrap_or(sc.eval_utterances);
    sc.nbest_size = nbest_size.unwrap_or(sc.nbest_size);
    if let Some(p) = ctx.optional(&confusions, "confusions") {
        for (i, line) in fs::read_to_string(&p).with_context(|| format!("cannot open {}", p.display()))?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (street, words) = line
                .split_once('\t')
                .with_context(|| format!("{}:{}: expected street<TAB>words", p.display(), i + 1))?;
            sc.confusions.insert(street.split_whitespace().collect::<Vec<_>>().join("_"), words.trim().to_string());
        }
    }
    ctx.stamp("gen-synthetic", json!({ "out": out.display().to_string(), "synth": sc }));
    let bundle = gen_synthetic(&sc)?;
    bundle.write_to(&out).with_context(|| format!("cannot write {}", out.display()))?;
    info!(
        "{} training sentences, {} rare and {} frequent streets, {} evaluation utterances",
        bundle.train.len(),
        bundle.rare_streets.len(),
        bundle.frequent_streets.len(),
        bundle.refs.len()
    );
    Ok(())
}
