//! Span-text encoders. The engine only needs `encode_text`; real audio-text
//! towers plug in behind the same trait.

use ndarray::Array1;

/// Maps span text to a fixed-dimension vector. Implementations must be
/// deterministic per version and always return finite values.
pub trait TextEncoder: Send + Sync {
    /// Name/version tag recorded in traces.
    fn version(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_text(&self, span: &str) -> Array1<f64>;
}

/// FNV-1a 64-bit; stable across processes and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Reference encoder: signed hashed bag of character 2- and 3-grams,
/// unit-normalized. Empty spans map to the zero vector.
pub struct HashedNgramEncoder {
    dim: usize,
}

impl HashedNgramEncoder {
    pub fn new(dim: usize) -> HashedNgramEncoder {
        assert!(dim > 0, "encoder dimension must be positive");
        HashedNgramEncoder { dim }
    }
}

impl TextEncoder for HashedNgramEncoder {
    fn version(&self) -> &str {
        "hashed-ngram-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, span: &str) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        let normalized = span.trim().to_lowercase();
        if normalized.is_empty() {
            return acc;
        }
        // pad with boundary markers so short spans still produce 3-grams
        let padded: Vec<char> = std::iter::once('^')
            .chain(normalized.chars())
            .chain(std::iter::once('$'))
            .collect();
        for n in [2usize, 3] {
            if padded.len() < n {
                continue;
            }
            for window in padded.windows(n) {
                let gram: String = window.iter().collect();
                let h = fnv1a64(gram.as_bytes());
                let idx = (h % self.dim as u64) as usize;
                let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
                acc[idx] += sign;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.mapv_inplace(|x| x / norm);
        }
        acc
    }
}

/// Hex fingerprint of an encoder output, recorded in traces.
pub fn vector_fingerprint(v: &Array1<f64>) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    format!("{:016x}", fnv1a64(&bytes))
}
