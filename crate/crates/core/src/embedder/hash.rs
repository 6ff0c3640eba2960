//! Deterministic local embedding backend.
//!
//! Text is lowercased and split into maximal runs of alphanumeric characters
//! or `_`; a [`START_TOKEN`] is prepended. Each token maps to `dim` values in
//! `[-1, 1]`:
//!
//! ```text
//! state  = fnv1a64(token) ^ (seed * 0x9E3779B97F4A7C15)
//! for j in 0..dim:
//!     state += 0x9E3779B97F4A7C15
//!     z      = splitmix64_mix(state)
//!     v[j]   = f32((z >> 11) * 2^-53 * 2 - 1)
//! ```

use super::TokenEmbeddingMatrix;

pub const START_TOKEN: &str = "[CLS]";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = vec![START_TOKEN.to_string()];
    let lower = text.to_lowercase();
    tokens.extend(
        lower
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
            .map(str::to_string),
    );
    tokens
}

pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut state = fnv1a64(token.as_bytes()) ^ seed.wrapping_mul(GOLDEN_GAMMA);
    (0..dim)
        .map(|_| {
            state = state.wrapping_add(GOLDEN_GAMMA);
            let unit = (mix(state) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            (unit * 2.0 - 1.0) as f32
        })
        .collect()
}

pub fn embed(text: &str, dim: usize, seed: u64) -> TokenEmbeddingMatrix {
    let tokens = tokenize(text);
    let mut values = Vec::with_capacity(tokens.len() * dim);
    for t in &tokens {
        values.extend(token_vector(t, dim, seed));
    }
    TokenEmbeddingMatrix::new(tokens, dim, values).expect("hash expansion is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("a b"), vec!["[CLS]", "a", "b"]);
        assert_eq!(
            tokenize("ICU stay 7.2 days. NOT_REPORTED"),
            vec!["[CLS]", "icu", "stay", "7", "2", "days", "not_reported"]
        );
        assert_eq!(tokenize("").len(), 1);
    }

    #[test]
    fn values_in_range_and_deterministic() {
        let a = token_vector("icu", 64, 3);
        assert_eq!(a, token_vector("icu", 64, 3));
        assert_ne!(a, token_vector("icu", 64, 4));
        assert_ne!(a, token_vector("icv", 64, 3));
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
