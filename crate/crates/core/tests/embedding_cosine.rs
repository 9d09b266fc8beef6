use narrative_core::backend::{hash_embedding, ChatBackend, EmbeddingVector, RuleBackend};
use narrative_core::exemplars::{cosine, cosine_slices, CosineError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Independent model of the mock embedder: FNV-1a 64 over seed bytes then the
// token, splitmix64 finisher, signed bucket counts, L2 normalization.
fn oracle_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 14695981039346656037u64;
    for b in seed.to_le_bytes().into_iter().chain(bytes.iter().copied()) {
        h = (h ^ b as u64).wrapping_mul(1099511628211);
    }
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn oracle_embedding(seed: u64, text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let mut tokens: Vec<String> = Vec::new();
    let mut token = String::new();
    for c in text.chars().chain([' ']) {
        if c.is_alphanumeric() {
            token.push(c);
        } else if !token.is_empty() {
            tokens.push(token.to_lowercase());
            token.clear();
        }
    }
    for t in &tokens {
        let h = oracle_hash(seed, t.as_bytes());
        let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        let key = if tokens.is_empty() {
            text.trim().to_string()
        } else {
            tokens.join(" ")
        };
        let h = oracle_hash(seed, key.as_bytes());
        v[(h % dim as u64) as usize] = 1.0;
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn embedding_matches_oracle_on_fixed_texts() {
    for text in [
        "I feel stuck at work",
        "Trust Building | Exploration of Problem Event | hello",
        "Ünïcode wörds, and-hyphens 42",
        "...",
        "a a a",
    ] {
        for (seed, dim) in [(0, 256), (7, 64), (u64::MAX, 3)] {
            let got = hash_embedding(seed, text, dim);
            let want = oracle_embedding(seed, text, dim);
            for (g, w) in got.values().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{text:?} seed {seed}");
            }
        }
    }
}

#[test]
fn rule_backend_embeds_with_its_seed() {
    let b = RuleBackend::new(11).with_dim(32);
    let got = b.embed("the shadow of worry").unwrap();
    let want = oracle_embedding(11, "the shadow of worry", 32);
    assert_eq!(got.dim(), 32);
    for (g, w) in got.values().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!(b.embed("   ").is_err());
}

#[test]
fn cosine_properties_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10_000 {
        let dim = rng.random_range(1..=48);
        let scale = 10f64.powi(rng.random_range(-3..=3));
        let a: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let b: Vec<f64> = if i % 50 == 0 {
            a.iter().map(|x| -x).collect()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        if a.iter().all(|x| *x == 0.0) || b.iter().all(|x| *x == 0.0) {
            continue;
        }
        let ab = cosine_slices(&a, &b).unwrap();
        let ba = cosine_slices(&b, &a).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits(), "symmetry at pair {i}");
        assert!((-1.0..=1.0).contains(&ab), "bounds at pair {i}: {ab}");
        assert!((ab - naive_cosine(&a, &b)).abs() < 1e-9);
        let aa = cosine_slices(&a, &a).unwrap();
        assert!((aa - 1.0).abs() <= 1e-9, "self similarity {aa}");
    }
}

#[test]
fn cancelling_tokens_fall_back_to_normalized_text() {
    let plain = hash_embedding(3, "uhn hhzwipmy", 64);
    assert_eq!(plain, hash_embedding(3, "UHN!,  HHZWIPMY!", 64));
    assert_eq!(
        plain.values(),
        oracle_embedding(3, "uhn hhzwipmy", 64).as_slice()
    );
}

#[test]
fn cosine_errors() {
    let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
    let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        cosine(&a, &b),
        Err(CosineError::DimensionMismatch(..))
    ));
    assert!(matches!(
        cosine_slices(&[0.0, 0.0], &[1.0, 0.0]),
        Err(CosineError::ZeroVector)
    ));
}

proptest! {
    #[test]
    fn embeddings_are_unit_and_deterministic(seed in any::<u64>(), text in "[a-zA-Z0-9 ,.!?']{1,80}", dim in 1usize..300) {
        let a = hash_embedding(seed, &text, dim);
        let b = hash_embedding(seed, &text, dim);
        prop_assert_eq!(&a, &b);
        prop_assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_do_not_change_embedding(words in prop::collection::vec("[a-z]{1,8}", 1..10)) {
        let plain = words.join(" ");
        let noisy = words.iter().map(|w| format!("{}!", w.to_uppercase())).collect::<Vec<_>>().join(",  ");
        prop_assert_eq!(hash_embedding(3, &plain, 64), hash_embedding(3, &noisy, 64));
    }
}
