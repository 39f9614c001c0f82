mod common;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarelm::neural::NeuralLm;
use rarelm::text::Vocabulary;

fn random_model(d_s: usize, d_h: usize, extra_words: usize, seed: u64) -> NeuralLm {
    let vocab = Vocabulary::from_entries((0..extra_words).map(|i| (format!("w{i}"), 1u64))).unwrap();
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| rng.gen_range(-0.8..0.8));
    let s = r((d_s, v));
    let w = r((4 * d_h, d_s + d_h));
    let u = r((d_h, v));
    let b = Array1::from_iter((0..4 * d_h).map(|k| 0.1 * k as f64 - 0.3));
    NeuralLm::from_parts(vocab, s, w, b, u).unwrap()
}

#[test]
fn analytic_gradients_match_central_differences() {
    // |V| = 4: the three specials plus one word.
    let m = random_model(2, 2, 1, 42);
    let worst = common::gradient_check(&m, &[0, 3, 2, 1], 1e-5);
    for (name, err) in ["S", "W", "b", "U"].iter().zip(worst) {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn gradients_hold_on_longer_sequences_and_wider_layers() {
    for seed in 0..3 {
        let m = random_model(3, 4, 4, seed);
        let worst = common::gradient_check(&m, &[0, 3, 5, 6, 3, 4, 1], 1e-5);
        assert!(worst.iter().all(|&e| e < 1e-4), "seed {seed}: {worst:?}");
    }
}
