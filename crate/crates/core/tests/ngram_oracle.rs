mod common;

use common::KnOracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarelm::ngram::{train_kn, KnConfig, NGramModel};
use rarelm::text::{build_vocab, encode, Sentence, Vocabulary};

const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn random_corpus(rng: &mut ChaCha8Rng, max_tokens: usize) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut used = 0;
    while used < max_tokens {
        let len = rng.gen_range(0..6).min(max_tokens - used);
        let n_words = rng.gen_range(2..=WORDS.len());
        out.push(Sentence::from_tokens((0..len).map(|_| WORDS[rng.gen_range(0..n_words)])));
        used += len + 1;
    }
    out
}

fn train(sents: &[Sentence], order: usize) -> (Vocabulary, Vec<Vec<usize>>, NGramModel) {
    let vocab = build_vocab(sents, 1, None).unwrap();
    let ids: Vec<Vec<usize>> = sents.iter().map(|s| encode(s, &vocab)).collect();
    let model = train_kn(&ids, &vocab, &KnConfig { order, ..Default::default() }).unwrap();
    (vocab, ids, model)
}

fn histories(ids: &[Vec<usize>], order: usize, vocab_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut hs = vec![vec![]];
    for s in ids {
        for j in 1..s.len() {
            let start = j.saturating_sub(order - 1);
            hs.push(s[start..j].to_vec());
        }
    }
    for _ in 0..20 {
        let len = rng.gen_range(0..order);
        hs.push((0..len).map(|_| rng.gen_range(0..vocab_size)).collect());
    }
    hs
}

#[test]
fn matches_direct_kneser_ney_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..12 {
        let sents = random_corpus(&mut rng, 50);
        for order in 1..=4 {
            let (vocab, ids, model) = train(&sents, order);
            let oracle = KnOracle::new(&ids, order, vocab.len());
            for h in histories(&ids, order, vocab.len(), &mut rng) {
                for w in 1..vocab.len() {
                    let got = model.prob(w, &h);
                    let want = oracle.prob(w, &h);
                    assert!(
                        (got - want).abs() < 1e-9,
                        "trial {trial} order {order} P({w}|{h:?}): {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn tiny_unigram_corpus_matches_oracle() {
    let sents = vec![rarelm::text::tokenize("a a b")];
    let (vocab, ids, model) = train(&sents, 1);
    let oracle = KnOracle::new(&ids, 1, vocab.len());
    for w in 1..vocab.len() {
        assert!((model.prob(w, &[]) - oracle.prob(w, &[])).abs() < 1e-12);
    }
    // counts a:2, b:1, </s>:1 with the fallback discount 0.75 and 4 predictable
    // words: P(a) = (2 - 0.75)/4 + (3 * 0.75 / 4) / 4
    let a = vocab.id("a").unwrap();
    assert!((model.prob(a, &[]) - (1.25 / 4.0 + 2.25 / 16.0)).abs() < 1e-12);
}

#[test]
fn unseen_history_backs_off_to_lower_orders() {
    let sents: Vec<Sentence> = ["a b c", "b c d", "c d a b"].iter().map(|l| rarelm::text::tokenize(l)).collect();
    let (vocab, ids, model) = train(&sents, 3);
    let oracle = KnOracle::new(&ids, 3, vocab.len());
    let d = vocab.id("d").unwrap();
    let a = vocab.id("a").unwrap();
    // "d a" never occurs followed by anything but b; "a d" never occurs at all
    for w in 1..vocab.len() {
        assert!((model.prob(w, &[a, d]) - oracle.prob(w, &[a, d])).abs() < 1e-12);
        assert!((model.prob(w, &[a, d]) - model.prob(w, &[d])).abs() < 1e-15);
    }
}

#[test]
fn perplexity_cross_checks_with_oracle() {
    let sents: Vec<Sentence> = ["a b a", "b b", "a"].iter().map(|l| rarelm::text::tokenize(l)).collect();
    let (vocab, ids, model) = train(&sents, 2);
    let oracle = KnOracle::new(&ids, 2, vocab.len());
    let mut total = 0.0;
    let mut n = 0;
    for s in &ids {
        for j in 1..s.len() {
            total += oracle.prob(s[j], &s[..j]).log10();
            n += 1;
        }
    }
    let want = 10f64.powf(-total / n as f64);
    assert!((model.perplexity(&ids).unwrap() - want).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_history_is_normalized(seed in 0u64..10_000, order in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sents = random_corpus(&mut rng, 40);
        let (vocab, ids, model) = train(&sents, order);
        for h in histories(&ids, order, vocab.len(), &mut rng) {
            let total: f64 = (0..vocab.len()).map(|w| model.prob(w, &h)).sum();
            prop_assert!((total - 1.0).abs() < 1e-6, "history {:?} sums to {}", h, total);
            for w in 1..vocab.len() {
                prop_assert!(model.prob(w, &h) > 0.0);
            }
        }
        let back = NGramModel::from_arpa(model.to_arpa().as_bytes()).unwrap();
        for h in histories(&ids, order, vocab.len(), &mut rng).iter().take(10) {
            for w in 1..vocab.len() {
                prop_assert!((back.log10_prob(w, h) - model.log10_prob(w, h)).abs() < 1e-6);
            }
        }
    }
}
