//! Text perturbations for robustness experiments.
//!
//! `WithinClusterReplace` realizes the attack model the watermark is provably
//! robust to: every replacement stays inside the token's semantic cluster, so
//! the cluster-index sequence is unchanged. `CrossClusterReplace` is the
//! out-of-model stress version drawing from the whole vocabulary, and
//! `WindowScramble` reverses blocks to approximate reordering paraphrases.

use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::prf::SplitMix64;
use crate::semantics::ClusterMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    WithinClusterReplace,
    CrossClusterReplace,
    WindowScramble { block_len: usize },
}

impl AttackKind {
    pub fn label(&self) -> String {
        match self {
            AttackKind::WithinClusterReplace => "within_cluster_replace".into(),
            AttackKind::CrossClusterReplace => "cross_cluster_replace".into(),
            AttackKind::WindowScramble { block_len } => format!("window_scramble_{block_len}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub rate: f64,
    pub rng_seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!(
                "attack rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        if let AttackKind::WindowScramble { block_len } = self.kind {
            if block_len == 0 {
                return Err(Error::InvalidConfig("block length must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Apply a perturbation to a token sequence.
///
/// Replacement attacks decide each position independently with probability
/// `rate`: within-cluster draws uniformly from the position's own cluster
/// members (possibly itself), cross-cluster draws uniformly from the whole
/// vocabulary. Scrambling reverses each length-`block_len` block
/// independently with probability `rate`. All draws come from a single
/// SplitMix64 stream, so results are deterministic given `rng_seed`.
pub fn apply_attack(text: &[TokenId], spec: &AttackSpec, map: &ClusterMap) -> Result<Vec<TokenId>> {
    spec.validate()?;
    for &t in text {
        if t.index() >= map.vocab_size() {
            return Err(Error::InvalidToken {
                token: t.0,
                vocab_size: map.vocab_size(),
            });
        }
    }
    let mut stream = SplitMix64::new(spec.rng_seed);
    match spec.kind {
        AttackKind::WithinClusterReplace => {
            let mut out = Vec::with_capacity(text.len());
            for &t in text {
                if stream.next_f64() < spec.rate {
                    let members = map.members(map.cluster_of(t)?);
                    let pick = members[stream.next_below(members.len() as u64) as usize];
                    out.push(TokenId(pick));
                } else {
                    out.push(t);
                }
            }
            Ok(out)
        }
        AttackKind::CrossClusterReplace => {
            let vocab = map.vocab_size() as u64;
            let mut out = Vec::with_capacity(text.len());
            for &t in text {
                if stream.next_f64() < spec.rate {
                    out.push(TokenId(stream.next_below(vocab) as u32));
                } else {
                    out.push(t);
                }
            }
            Ok(out)
        }
        AttackKind::WindowScramble { block_len } => {
            let mut out = text.to_vec();
            for block in out.chunks_mut(block_len) {
                if stream.next_f64() < spec.rate {
                    block.reverse();
                }
            }
            Ok(out)
        }
    }
}
