//! Shared probability vocabulary: token ids, dense distributions over tokens
//! or clusters, sequence-level distributions for the brute-force oracles, and
//! the false-alarm budget.
//!
//! All probability arithmetic is plain `f64`. Constructors either normalize
//! (dividing by the sum and pinning the total to exactly 1.0) or validate an
//! already-normalized vector, so downstream code can rely on the sum
//! invariants without re-checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a token within a vocabulary of known size.
///
/// The wrapper does not know the vocabulary size; every consumer validates
/// against its own `|V|` and returns [`Error::InvalidToken`] on overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// `max(x, 0)`, the positive-part operator used throughout the overflow and
/// miss-detection formulas.
pub fn positive_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Dense probability vector over a finite support (tokens or clusters).
///
/// Invariants: every entry is non-negative and the entries sum to 1 within
/// 1e-9 (normalizing constructors pin the sum to exactly 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Normalize non-negative weights into a probability vector.
    ///
    /// The result is proportional to the input and its left-to-right sum is
    /// pinned to exactly 1.0, which makes normalization idempotent.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidDistribution("empty weight vector".into()));
        }
        if raw.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("all weights are zero".into()));
        }
        let mut probs: Vec<f64> = raw.iter().map(|&x| x / sum).collect();
        pin_sum_to_one(&mut probs);
        Ok(Distribution { probs })
    }

    /// Wrap a vector that already sums to 1 within 1e-9, without rescaling.
    ///
    /// Used where entries carry exact arithmetic meaning (per-cluster sums,
    /// renormalized conditionals) that division would perturb.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if probs.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite probability".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Distribution { probs })
    }

    /// Uniform distribution over `n` outcomes.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::normalize(&vec![1.0; n.max(1)])
    }

    /// Point mass on outcome `i`.
    pub fn point_mass(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::InvalidInput(format!(
                "point mass index {i} outside support of size {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Ok(Distribution { probs })
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

/// Nudge the left-to-right sum of a near-normalized vector to exactly 1.0 by
/// absorbing the residual into the last positive entry, which keeps zero
/// entries (the support boundary) untouched.
///
/// With `partial` the left-to-right sum before that entry, setting it to
/// `1 - partial` makes the full sum evaluate to exactly 1.0: the subtraction
/// residual is at most 2^-54, inside the rounding slack of the final
/// addition, and the trailing zeros add bitwise-identically. Normalization
/// is therefore idempotent.
fn pin_sum_to_one(probs: &mut [f64]) {
    let sum: f64 = probs.iter().sum();
    if sum == 1.0 {
        return;
    }
    let Some(idx) = probs.iter().rposition(|&p| p > 0.0) else {
        return;
    };
    let partial: f64 = probs[..idx].iter().sum();
    let pinned = 1.0 - partial;
    if pinned >= 0.0 {
        probs[idx] = pinned;
    }
}

/// Probability budget for the worst-case false-alarm error, a real in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaBudget(f64);

impl FaBudget {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "false-alarm budget must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(FaBudget(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Distribution over length-`len` token sequences from a vocabulary of size
/// `vocab_size`, stored densely over all `|V|^len` sequences.
///
/// Only used by the oracle module on tiny instances, where exhaustive
/// enumeration is the point. Sequences are indexed by their big-endian
/// base-`|V|` rank: rank = sum of `seq[i] * |V|^(len-1-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution {
    vocab_size: usize,
    len: usize,
    probs: Vec<f64>,
}

impl SequenceDistribution {
    /// Normalize non-negative weights over all `|V|^len` sequences.
    pub fn normalize(vocab_size: usize, len: usize, raw: &[f64]) -> Result<Self> {
        let expected = vocab_size
            .checked_pow(len as u32)
            .ok_or_else(|| Error::InvalidInput("sequence space overflows".into()))?;
        if raw.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} sequence weights, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("all weights are zero".into()));
        }
        let mut probs: Vec<f64> = raw.iter().map(|&x| x / sum).collect();
        pin_sum_to_one(&mut probs);
        Ok(SequenceDistribution {
            vocab_size,
            len,
            probs,
        })
    }

    /// Wrap probabilities that already sum to 1 within 1e-12.
    pub fn from_probs(vocab_size: usize, len: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = vocab_size
            .checked_pow(len as u32)
            .ok_or_else(|| Error::InvalidInput("sequence space overflows".into()))?;
        if probs.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} sequence probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite probability".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "sequence probabilities sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(SequenceDistribution {
            vocab_size,
            len,
            probs,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn num_sequences(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, rank: usize) -> f64 {
        self.probs[rank]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Decode a sequence rank into its token ids.
    pub fn decode(&self, rank: usize) -> Vec<TokenId> {
        decode_rank(rank, self.vocab_size, self.len)
    }
}

/// Decode a big-endian base-`vocab_size` rank into a length-`len` sequence.
pub fn decode_rank(rank: usize, vocab_size: usize, len: usize) -> Vec<TokenId> {
    let mut out = vec![TokenId(0); len];
    let mut r = rank;
    for i in (0..len).rev() {
        out[i] = TokenId((r % vocab_size) as u32);
        r /= vocab_size;
    }
    out
}
