//! Corpus ingestion: tokenization, multiword-name joining, vocabulary
//! construction and integer encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Number of reserved ids at the front of every vocabulary.
pub const NUM_SPECIALS: usize = 3;

fn is_special(tok: &str) -> bool {
    tok == BOS || tok == EOS || tok == UNK
}

/// A tokenized sentence. Tokens are non-empty, contain no whitespace and
/// never equal one of the reserved special literals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Sentence(Vec<String>);

impl Sentence {
    /// Builds a sentence from already-normalized tokens, dropping anything
    /// that would violate the token invariants.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Sentence(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty() && !is_special(t))
                .flat_map(|t| {
                    if t.chars().any(char::is_whitespace) {
                        t.split_whitespace().map(str::to_string).collect::<Vec<_>>()
                    } else {
                        vec![t]
                    }
                })
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Lowercases and splits on any run of whitespace. Reserved special
/// literals appearing in raw text are dropped.
pub fn tokenize(line: &str) -> Sentence {
    Sentence(
        line.split_whitespace()
            .map(str::to_lowercase)
            .filter(|t| !is_special(t))
            .collect(),
    )
}

/// A set of multiword names (each at least two lowercase tokens).
#[derive(Debug, Clone, Default)]
pub struct PhraseList {
    phrases: Vec<Vec<String>>,
    max_len: usize,
}

impl PhraseList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a phrase given as whitespace-separated text. Single-token and
    /// duplicate phrases are ignored; returns whether the phrase was added.
    pub fn insert(&mut self, phrase: &str) -> bool {
        let toks = tokenize(phrase).into_tokens();
        if toks.len() < 2 || self.phrases.contains(&toks) {
            return false;
        }
        self.max_len = self.max_len.max(toks.len());
        self.phrases.push(toks);
        true
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &[String]> {
        self.phrases.iter().map(Vec::as_slice)
    }

    /// Reads one phrase per line; blank lines are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut list = PhraseList::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                list.insert(&line);
            }
        }
        Ok(list)
    }

    fn index(&self) -> HashSet<&[String]> {
        self.phrases.iter().map(Vec::as_slice).collect()
    }
}

/// Replaces phrase occurrences by their underscore-joined form. Greedy,
/// single left-to-right pass, longest match first, non-overlapping.
pub fn join_phrases(s: &Sentence, phrases: &PhraseList) -> Sentence {
    if phrases.is_empty() {
        return s.clone();
    }
    let index = phrases.index();
    let toks = s.tokens();
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let longest = phrases.max_len.min(toks.len() - i);
        let matched = (2..=longest)
            .rev()
            .find(|&n| index.contains(&toks[i..i + n]));
        match matched {
            Some(n) => {
                out.push(toks[i..i + n].join("_"));
                i += n;
            }
            None => {
                out.push(toks[i].clone());
                i += 1;
            }
        }
    }
    Sentence(out)
}

/// Exact multiset counts of word tokens. Ordered for deterministic output.
pub type WordCounts = BTreeMap<String, u64>;

pub fn word_counts<'a, I>(corpus: I) -> WordCounts
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut counts = WordCounts::new();
    for s in corpus {
        for tok in s.iter() {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Bidirectional word/id map. Ids are dense; `<s>`, `</s>` and `<unk>`
/// always occupy ids 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary holding only the special tokens.
    pub fn specials() -> Self {
        let words: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        let ids = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        Vocabulary {
            words,
            counts: vec![0; NUM_SPECIALS],
            ids,
        }
    }

    /// Builds a vocabulary from `(word, count)` pairs in id order. Special
    /// tokens may appear at their reserved positions (their counts are
    /// kept) but nowhere else.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::specials();
        for (word, count) in entries {
            let word = word.into();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid word {word:?}")));
            }
            if let Some(&id) = vocab.ids.get(&word) {
                if id < NUM_SPECIALS {
                    vocab.counts[id] = count;
                    continue;
                }
                return Err(Error::Vocab(format!("duplicate word {word:?}")));
            }
            vocab.ids.insert(word.clone(), vocab.words.len());
            vocab.words.push(word);
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Id of `word`, or the unknown-word id.
    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Writes `word<TAB>count` lines in id order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{count}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let (word, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected word<TAB>count".into(),
            })?;
            let count = count.trim().parse::<u64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad count: {e}"),
            })?;
            if lineno < NUM_SPECIALS && word != [BOS, EOS, UNK][lineno] {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected special token {}", [BOS, EOS, UNK][lineno]),
                });
            }
            entries.push((word.to_string(), count));
        }
        if entries.len() < NUM_SPECIALS {
            return Err(Error::Vocab("vocabulary file lacks special tokens".into()));
        }
        Vocabulary::from_entries(entries)
    }
}

/// Builds a vocabulary from a phrase-joined corpus. Words with
/// `count >= min_count` are kept; with `max_size` (which includes the
/// specials) the list is truncated by descending count, ties broken
/// lexicographically.
pub fn build_vocab<'a, I>(corpus: I, min_count: u64, max_size: Option<usize>) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut n_sentences = 0usize;
    let mut counts = WordCounts::new();
    for s in corpus {
        n_sentences += 1;
        for tok in s.iter() {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    if n_sentences == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(max) = max_size {
        kept.truncate(max.saturating_sub(NUM_SPECIALS));
    }
    Vocabulary::from_entries(kept)
}

/// `[bos] + ids + [eos]`; unknown words map to `<unk>`.
pub fn encode(s: &Sentence, vocab: &Vocabulary) -> Vec<usize> {
    let mut ids = Vec::with_capacity(s.len() + 2);
    ids.push(BOS_ID);
    ids.extend(s.iter().map(|w| vocab.id_or_unk(w)));
    ids.push(EOS_ID);
    ids
}

/// Inverse of [`encode`]: strips the sentence markers.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Sentence {
    Sentence(
        ids.iter()
            .filter(|&&id| id != BOS_ID && id != EOS_ID)
            .map(|&id| vocab.word(id).unwrap_or(UNK).to_string())
            .collect(),
    )
}

/// Reads a corpus file: one sentence per line, tokenized and phrase-joined.
pub fn read_corpus<R: BufRead>(reader: R, phrases: &PhraseList) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        out.push(join_phrases(&tokenize(&line?), phrases));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(s: &str) -> Sentence {
        tokenize(s)
    }

    fn phrases(list: &[&str]) -> PhraseList {
        let mut p = PhraseList::new();
        for s in list {
            p.insert(s);
        }
        p
    }

    #[test]
    fn tokenize_normalizes() {
        assert_eq!(tokenize("Boon Lay Place").tokens(), ["boon", "lay", "place"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b\tc").tokens(), ["a", "b", "c"]);
        assert_eq!(tokenize("x <s> y </S>").tokens(), ["x", "y"]);
    }

    #[test]
    fn join_underscores_names() {
        let p = phrases(&["boon lay"]);
        assert_eq!(join_phrases(&sent("boon lay place"), &p).tokens(), ["boon_lay", "place"]);
    }

    #[test]
    fn join_prefers_longest_then_falls_back() {
        let p = phrases(&["boon lay", "boon lay place"]);
        assert_eq!(join_phrases(&sent("boon lay"), &p).tokens(), ["boon_lay"]);
        assert_eq!(join_phrases(&sent("at boon lay place"), &p).tokens(), ["at", "boon_lay_place"]);
    }

    #[test]
    fn join_with_empty_list_is_identity() {
        let s = sent("ang mo kio");
        assert_eq!(join_phrases(&s, &PhraseList::new()), s);
    }

    #[test]
    fn phrase_list_rejects_short_and_duplicates() {
        let mut p = PhraseList::new();
        assert!(p.insert("Ang Mo Kio"));
        assert!(!p.insert("ang mo kio"));
        assert!(!p.insert("bedok"));
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn vocab_counts_and_threshold() {
        let corpus = vec![sent("a a b")];
        let v = build_vocab(&corpus, 1, None).unwrap();
        assert_eq!(v.words(), ["<s>", "</s>", "<unk>", "a", "b"]);
        assert_eq!(v.count(3), Some(2));
        assert_eq!(v.count(4), Some(1));

        let v = build_vocab(&corpus, 2, None).unwrap();
        assert!(!v.contains("b"));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn vocab_tie_break_is_lexicographic() {
        let corpus = vec![sent("y x y x y x")];
        let v = build_vocab(&corpus, 1, Some(NUM_SPECIALS + 1)).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus: Vec<Sentence> = vec![];
        assert!(matches!(build_vocab(&corpus, 1, None), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_frames_and_maps_unk() {
        let v = build_vocab(&[sent("a")], 1, None).unwrap();
        assert_eq!(encode(&Sentence::default(), &v), vec![BOS_ID, EOS_ID]);
        assert_eq!(encode(&sent("a"), &v), vec![0, v.id("a").unwrap(), 1]);
        assert_eq!(encode(&sent("zzz"), &v), vec![0, 2, 1]);
    }

    #[test]
    fn counts_treat_joined_names_as_tokens() {
        let c = word_counts(&[sent("a a b")]);
        assert_eq!(c.get("a"), Some(&2));
        assert_eq!(c.get("b"), Some(&1));
        assert!(word_counts(&[]).is_empty());
        let c = word_counts(&[sent("boon_lay boon_lay")]);
        assert_eq!(c.len(), 1);
        assert_eq!(c["boon_lay"], 2);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&[sent("b a a c")], 1, None).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("<s>\t0\n</s>\t0\n<unk>\t0\na\t2\n"));
        let back = Vocabulary::read(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn vocab_file_requires_specials_first() {
        let err = Vocabulary::read("a\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    fn word_strategy() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "boon", "lay", "place", "kio"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn join_is_idempotent(words in prop::collection::vec(word_strategy(), 0..12)) {
            let p = phrases(&["boon lay", "boon lay place", "a b", "b c a"]);
            let s = Sentence::from_tokens(words);
            let once = join_phrases(&s, &p);
            prop_assert_eq!(join_phrases(&once, &p), once);
        }

        #[test]
        fn encode_decode_round_trips(words in prop::collection::vec(word_strategy(), 0..12)) {
            let s = Sentence::from_tokens(words);
            let v = build_vocab(&[tokenize("a b c boon lay place kio")], 1, None).unwrap();
            prop_assert_eq!(decode(&encode(&s, &v), &v), s);
        }

        #[test]
        fn vocab_is_bijective_and_counts_agree(
            lines in prop::collection::vec(prop::collection::vec(word_strategy(), 0..8), 1..6),
            min_count in 1u64..3,
        ) {
            let corpus: Vec<Sentence> = lines.into_iter().map(Sentence::from_tokens).collect();
            let v = build_vocab(&corpus, min_count, None).unwrap();
            let counts = word_counts(&corpus);
            for (id, w) in v.words().iter().enumerate() {
                prop_assert_eq!(v.id(w), Some(id));
                if id >= NUM_SPECIALS {
                    prop_assert_eq!(v.count(id), counts.get(w).copied());
                }
            }
        }
    }
}
