//! Tokenizer abstraction used by packing, mixing, and validation.
//!
//! The pipeline never depends on a specific vocabulary: every stage that
//! needs token counts or token ids goes through [`TokenizerAdapter`], so a
//! production tokenizer can be swapped in without touching stage logic. The
//! default adapter is deliberately simple — lowercase whitespace tokens
//! hashed to stable 32-bit ids — which keeps tests deterministic and makes
//! packed output independent of any external model file.

/// Maps text to a deterministic sequence of token ids.
///
/// Implementations must be pure: the same text always yields the same ids,
/// and `count` must equal `encode(text).len()`.
pub trait TokenizerAdapter: Send + Sync {
    /// Encodes `text` into token ids.
    fn encode(&self, text: &str) -> Vec<u32>;

    /// Number of tokens `encode` would produce. Override when counting is
    /// cheaper than encoding.
    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }

    /// Stable adapter name, recorded in stage logs.
    fn name(&self) -> &'static str;
}

/// Default adapter: lowercased whitespace tokens, ids via FNV-1a.
///
/// Splitting on Unicode whitespace means token counts survive the whitespace
/// normalization applied elsewhere in the pipeline, and hashing the lowercased
/// word keeps ids stable across case variants.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenizerAdapter for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|word| fnv1a32(word.to_lowercase().as_bytes()))
            .collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn name(&self) -> &'static str {
        "whitespace"
    }
}

/// 32-bit FNV-1a over raw bytes.
pub(crate) fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// 64-bit FNV-1a over raw bytes, used where collision space matters more
/// (n-gram indexing, seed derivation).
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
