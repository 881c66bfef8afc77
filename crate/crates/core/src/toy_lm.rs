//! Seedable autoregressive token-distribution sources standing in for the
//! generation-side LLM and the detection-side surrogate (SLM).
//!
//! Rows are never materialized up front: the context suffix is hashed with
//! the model seed into a Dirichlet draw, so the same context always yields a
//! bit-identical row, at any conditioning order.

use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, TokenId};
use crate::error::{Error, Result};
use crate::prf::{context_hash, SplitMix64};
use crate::sampling::{gamma, sample_index};
use crate::semantics::ClusterMap;

/// What the Markov context conditions on.
///
/// `ClusterMarkov` reads only the cluster image of the context, which makes
/// rows exactly invariant under within-cluster token substitution; that is
/// the hook behind the detector's exact-robustness guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmMode {
    TokenMarkov,
    ClusterMarkov,
}

/// Specification of a toy autoregressive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmSpec {
    pub vocab_size: usize,
    /// Markov order: rows condition on the last `order` context items.
    pub order: usize,
    /// Dirichlet concentration of each lazily realized row; smaller is peakier.
    pub concentration: f64,
    pub seed: u64,
    pub mode: LmMode,
}

impl LmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be positive".into()));
        }
        if self.concentration.is_nan() || self.concentration <= 0.0 {
            return Err(Error::InvalidConfig(
                "Dirichlet concentration must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Surrogate model: the base LM mixed entrywise with the uniform
/// distribution. `mix_to_uniform` models how far the detector-side
/// approximation sits from the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmSpec {
    pub base: LmSpec,
    pub mix_to_uniform: f64,
}

impl SlmSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(0.0..=1.0).contains(&self.mix_to_uniform) {
            return Err(Error::InvalidConfig(
                "mix_to_uniform must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn check_history(lm: &LmSpec, history: &[TokenId]) -> Result<()> {
    for &t in history {
        if t.index() >= lm.vocab_size {
            return Err(Error::InvalidToken {
                token: t.0,
                vocab_size: lm.vocab_size,
            });
        }
    }
    Ok(())
}

/// Next-token distribution given the history. Pure in
/// `(spec, relevant context suffix)`: the same suffix yields the same row
/// bit-for-bit.
pub fn next_token_distribution(
    lm: &LmSpec,
    map: Option<&ClusterMap>,
    history: &[TokenId],
) -> Result<Distribution> {
    lm.validate()?;
    check_history(lm, history)?;

    let suffix_start = history.len().saturating_sub(lm.order);
    let suffix = &history[suffix_start..];
    let (tag, items): (u8, Vec<u32>) = match lm.mode {
        LmMode::TokenMarkov => (0, suffix.iter().map(|t| t.0).collect()),
        LmMode::ClusterMarkov => {
            let map = map.ok_or_else(|| {
                Error::InvalidConfig("cluster_markov mode needs a cluster map".into())
            })?;
            if map.vocab_size() != lm.vocab_size {
                return Err(Error::InvalidConfig(format!(
                    "cluster map covers {} tokens, LM has {}",
                    map.vocab_size(),
                    lm.vocab_size
                )));
            }
            (1, map.clusters_of(suffix)?)
        }
    };

    let row_seed = context_hash(lm.seed, tag, &items);
    let mut stream = SplitMix64::new(row_seed);
    let raw: Vec<f64> = (0..lm.vocab_size)
        .map(|_| gamma(&mut stream, lm.concentration))
        .collect();
    if raw.iter().sum::<f64>() > 0.0 {
        Distribution::normalize(&raw)
    } else {
        // every Gamma draw underflowed (possible at tiny concentrations)
        Distribution::uniform(lm.vocab_size)
    }
}

/// Mix a distribution entrywise with the uniform one.
pub fn mix_with_uniform(dist: &Distribution, mix: f64) -> Result<Distribution> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidConfig("mix must lie in [0, 1]".into()));
    }
    let n = dist.support_size() as f64;
    let probs: Vec<f64> = dist.probs().iter().map(|&p| (1.0 - mix) * p + mix / n).collect();
    Distribution::from_probs(probs)
}

/// The detector's approximate next-token distribution.
pub fn surrogate_distribution(
    slm: &SlmSpec,
    map: Option<&ClusterMap>,
    history: &[TokenId],
) -> Result<Distribution> {
    slm.validate()?;
    let base = next_token_distribution(&slm.base, map, history)?;
    if slm.mix_to_uniform == 0.0 {
        return Ok(base);
    }
    mix_with_uniform(&base, slm.mix_to_uniform)
}

/// Sample an unwatermarked continuation of `length` tokens after `prompt`,
/// by inverse-CDF over token index order with one uniform per draw. This is
/// the null-hypothesis "human" text source.
pub fn sample_unwatermarked(
    lm: &LmSpec,
    map: Option<&ClusterMap>,
    prompt: &[TokenId],
    length: usize,
    rng_seed: u64,
) -> Result<Vec<TokenId>> {
    if length == 0 {
        return Err(Error::InvalidInput("length must be at least 1".into()));
    }
    check_history(lm, prompt)?;
    let mut stream = SplitMix64::new(rng_seed);
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let row = next_token_distribution(lm, map, &history)?;
        let token = TokenId(sample_index(&row, stream.next_f64()) as u32);
        history.push(token);
        out.push(token);
    }
    Ok(out)
}

/// Per-token negative log-likelihood of `text` under the model, scoring each
/// position against the row realized from the preceding context.
pub fn per_token_nll(
    lm: &LmSpec,
    map: Option<&ClusterMap>,
    prompt: &[TokenId],
    text: &[TokenId],
) -> Result<Vec<f64>> {
    check_history(lm, text)?;
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(text.len());
    for &token in text {
        let row = next_token_distribution(lm, map, &history)?;
        let p = row.get(token.index());
        out.push(-p.max(f64::MIN_POSITIVE).ln());
        history.push(token);
    }
    Ok(out)
}
