//! Second implementation of the hash backend, written from its documented
//! recipe, checked against published FNV-1a and SplitMix64 vectors and then
//! against the library.

use pte_core::embedder::hash::{embed, token_vector, tokenize, START_TOKEN};

const M: u128 = 1 << 64;

fn fnv1a(s: &str) -> u64 {
    let mut h: u128 = 14_695_981_039_346_656_037;
    for b in s.bytes() {
        h = ((h ^ b as u128) * 1_099_511_628_211) % M;
    }
    h as u64
}

fn splitmix_finalize(z: u64) -> u64 {
    let z = ((z ^ (z >> 30)) as u128 * 0xBF58476D1CE4E5B9 % M) as u64;
    let z = ((z ^ (z >> 27)) as u128 * 0x94D049BB133111EB % M) as u64;
    z ^ (z >> 31)
}

const GAMMA: u128 = 0x9E3779B97F4A7C15;

fn reference_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let start = fnv1a(token) as u128 ^ (seed as u128 * GAMMA % M);
    (1..=dim as u128)
        .map(|j| {
            let z = splitmix_finalize(((start + j * GAMMA) % M) as u64);
            let unit = (z >> 11) as f64 / 9_007_199_254_740_992.0;
            (2.0 * unit - 1.0) as f32
        })
        .collect()
}

fn reference_tokens(text: &str) -> Vec<String> {
    let mut out = vec![START_TOKEN.to_string()];
    let mut cur = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() || c == '_' {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[test]
fn reference_primitives_match_published_vectors() {
    assert_eq!(fnv1a(""), 0xcbf29ce484222325);
    assert_eq!(fnv1a("a"), 0xaf63dc4c8601ec8c);
    assert_eq!(fnv1a("foobar"), 0x85944171f73967e8);
    // SplitMix64 seeded with 0: first two outputs.
    assert_eq!(splitmix_finalize(GAMMA as u64), 0xe220a8397b1dcdaf);
    assert_eq!(splitmix_finalize((2 * GAMMA % M) as u64), 0x6e789e6aa1b965f4);
}

#[test]
fn token_vectors_match_reference() {
    for token in ["icu", "[CLS]", "not_reported", "7", "hémorragie", ""] {
        for (dim, seed) in [(8, 0), (8, 1), (33, 12345), (768, u64::MAX)] {
            assert_eq!(token_vector(token, dim, seed), reference_vector(token, dim, seed), "{token:?} d={dim} s={seed}");
        }
    }
}

#[test]
fn tokenization_and_matrices_match_reference() {
    let text = "Hospital Course: ICU stay 7.2 days. Time to surgery NOT_REPORTED. Crâne fracturé!";
    let tokens = reference_tokens(text);
    assert_eq!(tokenize(text), tokens);
    let m = embed(text, 16, 9);
    assert_eq!(m.tokens(), tokens.as_slice());
    for (row, t) in m.rows().zip(&tokens) {
        assert_eq!(row, reference_vector(t, 16, 9).as_slice());
    }
}
