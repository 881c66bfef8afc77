//! Keyed seed derivation and the deterministic uniform stream.
//!
//! The embedding and detection sides share randomness through per-step seeds:
//! each seed is the truncated SHA-256 of the secret key and the recent
//! semantic-cluster window, so the detector can recover every seed from the
//! observed text alone. All seeded sampling in the crate expands seeds with
//! SplitMix64, which is bit-exact across platforms.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;

/// Domain-separation byte between the key and the window payload.
const SEED_DOMAIN: u8 = 0x01;
/// Domain-separation byte for hashing language-model context rows.
const CONTEXT_DOMAIN: u8 = 0x02;

/// 32-byte shared secret driving seed derivation.
#[derive(Clone, PartialEq, Eq)]
pub struct WatermarkKey([u8; KEY_LEN]);

impl WatermarkKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        WatermarkKey(bytes)
    }

    /// Expand a 64-bit seed into key bytes with SplitMix64. Used by keygen so
    /// every key in the toolkit is reproducible from a flag.
    pub fn from_seed(seed: u64) -> Self {
        let mut stream = SplitMix64::new(seed);
        let mut bytes = [0u8; KEY_LEN];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&stream.next_u64().to_be_bytes());
        }
        WatermarkKey(bytes)
    }

    /// Parse the key-file format: 64 hex characters on a single line.
    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if hex.len() != KEY_LEN * 2 {
            return Err(Error::ParseError(format!(
                "key must be {} hex characters, got {}",
                KEY_LEN * 2,
                hex.len()
            )));
        }
        let mut bytes = [0u8; KEY_LEN];
        for (i, byte) in bytes.iter_mut().enumerate() {
            let pair = &hex[2 * i..2 * i + 2];
            *byte = u8::from_str_radix(pair, 16)
                .map_err(|_| Error::ParseError(format!("invalid hex byte {pair:?} in key")))?;
        }
        Ok(WatermarkKey(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for WatermarkKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print the full secret
        write!(f, "WatermarkKey({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

impl Serialize for WatermarkKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for WatermarkKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        WatermarkKey::from_hex(&s).map_err(de::Error::custom)
    }
}

/// The semantic history driving seed derivation: the cluster indices of the
/// last `w` observed tokens (fewer near the start of a text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowState {
    w: usize,
    window: Vec<u32>,
}

impl WindowState {
    pub fn new(w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::InvalidConfig("window size must be positive".into()));
        }
        Ok(WindowState {
            w,
            window: Vec::new(),
        })
    }

    /// Build from a full cluster history, keeping only the trailing `w`.
    pub fn from_history(w: usize, clusters: &[u32]) -> Result<Self> {
        let mut state = Self::new(w)?;
        let start = clusters.len().saturating_sub(w);
        state.window.extend_from_slice(&clusters[start..]);
        Ok(state)
    }

    /// Append the newest cluster index, evicting the oldest beyond `w`.
    pub fn push(&mut self, cluster: u32) {
        self.window.push(cluster);
        if self.window.len() > self.w {
            self.window.remove(0);
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn clusters(&self) -> &[u32] {
        &self.window
    }
}

/// Derive the per-step seed from the key and the cluster window.
///
/// The seed is the first 8 bytes, big-endian, of SHA-256 over
/// `key || 0x01 || w as u32 BE || window clusters as u32 BE` in chronological
/// order. Identical on every platform, so the detector replays it exactly.
pub fn derive_seed(key: &WatermarkKey, window: &WindowState) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(key.bytes());
    hasher.update([SEED_DOMAIN]);
    hasher.update((window.w() as u32).to_be_bytes());
    for &c in window.clusters() {
        hasher.update(c.to_be_bytes());
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Hash an unkeyed context (used to realize language-model rows lazily).
/// Domain-separated from `derive_seed` so LM rows can never collide with
/// watermark seeds.
pub fn context_hash(seed: u64, tag: u8, items: &[u32]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    hasher.update([CONTEXT_DOMAIN, tag]);
    for &item in items {
        hasher.update(item.to_be_bytes());
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Expand a seed into a uniform in [0, 1) with a single SplitMix64 step,
/// keeping the top 53 bits so the result is exactly representable and
/// strictly below 1.
pub fn seed_to_uniform(seed: u64) -> f64 {
    SplitMix64::new(seed).next_f64()
}

/// SplitMix64 stream (Steele, Lea & Flood), the crate's only PRNG.
///
/// Every stochastic component takes an explicit seed and owns its stream, so
/// runs are reproducible regardless of scheduling.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1): the top 53 bits of the next output over 2^53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform integer in [0, n), via the multiply-shift bounded draw.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires a positive bound");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}
