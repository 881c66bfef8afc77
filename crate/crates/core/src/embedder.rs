//! The two-stage watermark sampler and the full generation loop.
//!
//! Stage 1 pushes the next-token distribution through the semantic mapping,
//! truncates each cluster's mass at the false-alarm budget (excess mass goes
//! to the overflow state), and samples the auxiliary outcome from a seed
//! derived from the key and the recent cluster window. Stage 2 samples the
//! token inside the selected cluster (or across overflowing clusters), which
//! preserves the original distribution exactly in expectation.
//!
//! Two separate randomness streams are used on purpose: the keyed stream
//! decides only the auxiliary outcome, which detection must replay; an
//! ordinary seeded stream decides the token within the branch, which
//! detection must never see.

use serde::{Deserialize, Serialize};

use crate::dist::{positive_part, Distribution, FaBudget, TokenId};
use crate::error::{Error, Result};
use crate::prf::{derive_seed, seed_to_uniform, SplitMix64, WatermarkKey, WindowState};
use crate::sampling::sample_index;
use crate::semantics::ClusterMap;
use crate::toy_lm::{next_token_distribution, LmSpec};

/// Outcome of the auxiliary draw: a semantic cluster or the overflow state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaOutcome {
    Cluster(usize),
    Overflow,
}

/// Per-step trace entry in a generation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaTrace {
    /// Step before watermarking starts; sampled from the raw distribution.
    Precursor,
    Cluster(usize),
    Overflow,
}

/// The truncated auxiliary distribution over clusters plus overflow state:
/// cluster k carries `min(qf(k), alpha)` and the overflow state absorbs
/// every cluster's excess above `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDistribution {
    cluster_mass: Vec<f64>,
    overflow_mass: f64,
}

impl AuxiliaryDistribution {
    pub fn k(&self) -> usize {
        self.cluster_mass.len()
    }

    pub fn cluster_mass(&self, k: usize) -> f64 {
        self.cluster_mass[k]
    }

    pub fn cluster_masses(&self) -> &[f64] {
        &self.cluster_mass
    }

    pub fn overflow_mass(&self) -> f64 {
        self.overflow_mass
    }

    pub fn mass_of(&self, zeta: ZetaOutcome) -> f64 {
        match zeta {
            ZetaOutcome::Cluster(k) => self.cluster_mass[k],
            ZetaOutcome::Overflow => self.overflow_mass,
        }
    }
}

/// Watermark hyperparameters shared by generation and detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub alpha: FaBudget,
    /// Synchronization window: how many recent cluster indices feed the PRF.
    pub window: usize,
    /// Steps sampled from the raw distribution before watermarking starts.
    pub precursor_len: usize,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        WatermarkConfig {
            alpha: FaBudget::new(0.4).expect("0.4 lies in (0,1)"),
            window: 3,
            precursor_len: 3,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be positive".into()));
        }
        Ok(())
    }
}

/// Full audit record of one watermarked generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub tokens: Vec<TokenId>,
    /// Auxiliary outcome per step, aligned with `tokens`.
    pub zeta_trace: Vec<ZetaTrace>,
    /// Derived seed per step; `None` on precursor steps.
    pub seeds: Vec<Option<u64>>,
    pub config: WatermarkConfig,
}

impl GenerationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::ParseError(format!("generation record: {e}")))
    }
}

/// Push a token distribution through the semantic mapping: cluster k gets
/// the exact sum of its members' probabilities.
pub fn cluster_distribution(q: &Distribution, map: &ClusterMap) -> Result<Distribution> {
    if q.support_size() != map.vocab_size() {
        return Err(Error::InvalidInput(format!(
            "distribution over {} tokens does not match vocabulary of {}",
            q.support_size(),
            map.vocab_size()
        )));
    }
    let mut sums = vec![0.0; map.k()];
    for (token, &p) in q.probs().iter().enumerate() {
        sums[map.assignment()[token] as usize] += p;
    }
    Distribution::from_probs(sums)
}

/// Truncate the cluster distribution at the false-alarm budget, sending the
/// excess to the overflow state.
pub fn auxiliary_distribution(qf: &Distribution, alpha: FaBudget) -> AuxiliaryDistribution {
    let a = alpha.value();
    let cluster_mass: Vec<f64> = qf.probs().iter().map(|&p| p.min(a)).collect();
    let overflow_mass: f64 = qf.probs().iter().map(|&p| positive_part(p - a)).sum();
    AuxiliaryDistribution {
        cluster_mass,
        overflow_mass,
    }
}

/// Inverse-CDF draw of the auxiliary outcome over the ordering
/// (cluster 0, ..., cluster K-1, overflow). Zero-mass outcomes are
/// unreachable by construction.
pub fn sample_zeta(aux: &AuxiliaryDistribution, u: f64) -> ZetaOutcome {
    let mut cum = 0.0;
    let mut last_positive: Option<usize> = None;
    for (k, &m) in aux.cluster_mass.iter().enumerate() {
        if m > 0.0 {
            last_positive = Some(k);
        }
        cum += m;
        if u < cum && m > 0.0 {
            return ZetaOutcome::Cluster(k);
        }
    }
    if aux.overflow_mass > 0.0 {
        ZetaOutcome::Overflow
    } else {
        // u landed beyond the accumulated cluster mass through rounding dust
        ZetaOutcome::Cluster(last_positive.expect("distribution has positive mass"))
    }
}

/// The stage-2 sampling distribution given the auxiliary outcome.
///
/// For a cluster outcome, the cluster's tokens renormalized by the cluster
/// mass; for the overflow outcome, each token weighted by its cluster's
/// excess over the budget times its within-cluster share.
pub fn conditional_token_distribution(
    q: &Distribution,
    qf: &Distribution,
    map: &ClusterMap,
    alpha: FaBudget,
    zeta: ZetaOutcome,
) -> Result<Distribution> {
    if q.support_size() != map.vocab_size() || qf.support_size() != map.k() {
        return Err(Error::InvalidInput(
            "distribution sizes do not match the cluster map".into(),
        ));
    }
    let assignment = map.assignment();
    match zeta {
        ZetaOutcome::Cluster(target) => {
            if target >= map.k() {
                return Err(Error::InvalidInput(format!(
                    "cluster {target} out of range for K={}",
                    map.k()
                )));
            }
            let mass = qf.get(target);
            if mass <= 0.0 {
                return Err(Error::ImpossibleZeta(format!(
                    "cluster {target} has zero mass"
                )));
            }
            let probs: Vec<f64> = q
                .probs()
                .iter()
                .enumerate()
                .map(|(token, &p)| {
                    if assignment[token] as usize == target {
                        p / mass
                    } else {
                        0.0
                    }
                })
                .collect();
            Distribution::from_probs(probs)
        }
        ZetaOutcome::Overflow => {
            let a = alpha.value();
            let total_overflow: f64 = qf.probs().iter().map(|&p| positive_part(p - a)).sum();
            if total_overflow <= 0.0 {
                return Err(Error::ImpossibleZeta("no cluster overflows".into()));
            }
            let probs: Vec<f64> = q
                .probs()
                .iter()
                .enumerate()
                .map(|(token, &p)| {
                    let mass = qf.get(assignment[token] as usize);
                    if mass <= 0.0 {
                        0.0
                    } else {
                        positive_part(mass - a) * (p / mass) / total_overflow
                    }
                })
                .collect();
            Distribution::from_probs(probs)
        }
    }
}

/// Run the full watermarked generation loop for `length` tokens.
///
/// Precursor steps sample from the raw distribution. After that, each step
/// derives its seed from the key and the cluster indices of the last
/// `window` observed tokens (prompt tokens included once generation starts),
/// replays the auxiliary draw, and samples the token within the branch using
/// the separate token stream.
pub fn generate_watermarked(
    lm: &LmSpec,
    map: &ClusterMap,
    key: &WatermarkKey,
    config: &WatermarkConfig,
    prompt: &[TokenId],
    length: usize,
    token_rng_seed: u64,
) -> Result<GenerationRecord> {
    config.validate()?;
    if length == 0 {
        return Err(Error::InvalidInput("length must be at least 1".into()));
    }
    if map.vocab_size() != lm.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "cluster map covers {} tokens, LM has {}",
            map.vocab_size(),
            lm.vocab_size
        )));
    }
    let needs_map = matches!(lm.mode, crate::toy_lm::LmMode::ClusterMarkov);
    let lm_map = needs_map.then_some(map);

    let mut token_stream = SplitMix64::new(token_rng_seed);
    let mut history = prompt.to_vec();
    let mut cluster_history = map.clusters_of(prompt)?;

    let mut tokens = Vec::with_capacity(length);
    let mut zeta_trace = Vec::with_capacity(length);
    let mut seeds = Vec::with_capacity(length);

    for step in 1..=length {
        let q = next_token_distribution(lm, lm_map, &history)?;
        let (token, trace, seed) = if step <= config.precursor_len {
            let token = TokenId(sample_index(&q, token_stream.next_f64()) as u32);
            (token, ZetaTrace::Precursor, None)
        } else {
            let window = WindowState::from_history(config.window, &cluster_history)?;
            let seed = derive_seed(key, &window);
            let qf = cluster_distribution(&q, map)?;
            let aux = auxiliary_distribution(&qf, config.alpha);
            let zeta = sample_zeta(&aux, seed_to_uniform(seed));
            let cond = conditional_token_distribution(&q, &qf, map, config.alpha, zeta)?;
            let token = TokenId(sample_index(&cond, token_stream.next_f64()) as u32);
            let trace = match zeta {
                ZetaOutcome::Cluster(k) => ZetaTrace::Cluster(k),
                ZetaOutcome::Overflow => ZetaTrace::Overflow,
            };
            (token, trace, Some(seed))
        };
        cluster_history.push(map.cluster_of(token)? as u32);
        history.push(token);
        tokens.push(token);
        zeta_trace.push(trace);
        seeds.push(seed);
    }

    Ok(GenerationRecord {
        tokens,
        zeta_trace,
        seeds,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_lm::LmMode;
    use proptest::prelude::*;

    fn map_112() -> ClusterMap {
        // three tokens, clusters (0, 0, 1)
        ClusterMap::from_assignment(vec![0, 0, 1], 2).unwrap()
    }

    #[test]
    fn cluster_distribution_sums_members() {
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let qf = cluster_distribution(&q, &map_112()).unwrap();
        assert!((qf.get(0) - 0.7).abs() < 1e-15);
        assert!((qf.get(1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cluster_distribution_bijective_is_permutation() {
        let map = ClusterMap::from_assignment(vec![2, 0, 1], 3).unwrap();
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        assert_eq!(qf.probs(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn cluster_distribution_point_mass_maps_through() {
        let map = map_112();
        let q = Distribution::point_mass(3, 2).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        assert_eq!(qf.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn cluster_distribution_size_mismatch() {
        let q = Distribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            cluster_distribution(&q, &map_112()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn auxiliary_truncates_at_budget() {
        let qf = Distribution::from_probs(vec![0.7, 0.3]).unwrap();
        let aux = auxiliary_distribution(&qf, FaBudget::new(0.4).unwrap());
        assert_eq!(aux.cluster_masses(), &[0.4, 0.3]);
        assert!((aux.overflow_mass() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn auxiliary_no_truncation_when_budget_dominates() {
        let qf = Distribution::from_probs(vec![0.3, 0.3, 0.4]).unwrap();
        let aux = auxiliary_distribution(&qf, FaBudget::new(0.45).unwrap());
        assert_eq!(aux.cluster_masses(), qf.probs());
        assert_eq!(aux.overflow_mass(), 0.0);
    }

    #[test]
    fn auxiliary_point_mass_cluster() {
        let qf = Distribution::point_mass(3, 0).unwrap();
        let aux = auxiliary_distribution(&qf, FaBudget::new(0.4).unwrap());
        assert_eq!(aux.cluster_masses(), &[0.4, 0.0, 0.0]);
        assert!((aux.overflow_mass() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn sample_zeta_walks_the_cdf() {
        let qf = Distribution::from_probs(vec![0.7, 0.3]).unwrap();
        let aux = auxiliary_distribution(&qf, FaBudget::new(0.4).unwrap());
        // masses (0.4, 0.3 | 0.3)
        assert_eq!(sample_zeta(&aux, 0.0), ZetaOutcome::Cluster(0));
        assert_eq!(sample_zeta(&aux, 0.65), ZetaOutcome::Cluster(1));
        assert_eq!(sample_zeta(&aux, 0.95), ZetaOutcome::Overflow);
    }

    #[test]
    fn sample_zeta_skips_zero_mass_clusters() {
        let qf = Distribution::from_probs(vec![0.0, 1.0]).unwrap();
        let aux = auxiliary_distribution(&qf, FaBudget::new(0.4).unwrap());
        assert_eq!(sample_zeta(&aux, 0.0), ZetaOutcome::Cluster(1));
    }

    #[test]
    fn conditional_renormalizes_in_cluster() {
        let map = map_112();
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        let alpha = FaBudget::new(0.4).unwrap();

        let in_cluster =
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Cluster(0)).unwrap();
        assert!((in_cluster.get(0) - 5.0 / 7.0).abs() < 1e-12);
        assert!((in_cluster.get(1) - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(in_cluster.get(2), 0.0);

        let singleton =
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Cluster(1)).unwrap();
        assert_eq!(singleton.probs(), &[0.0, 0.0, 1.0]);

        // only cluster 0 overflows (by 0.3), so the overflow branch is the
        // renormalized cluster 0
        let overflow =
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Overflow).unwrap();
        assert!((overflow.get(0) - 5.0 / 7.0).abs() < 1e-12);
        assert!((overflow.get(1) - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(overflow.get(2), 0.0);
    }

    #[test]
    fn conditional_rejects_impossible_outcomes() {
        let map = map_112();
        let q = Distribution::from_probs(vec![0.0, 0.0, 1.0]).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        let alpha = FaBudget::new(0.4).unwrap();
        assert!(matches!(
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Cluster(0)),
            Err(Error::ImpossibleZeta(_))
        ));
        let flat = Distribution::from_probs(vec![0.3, 0.3, 0.4]).unwrap();
        let flat_f = cluster_distribution(&flat, &map).unwrap();
        // alpha above every cluster mass: nothing overflows
        let wide = FaBudget::new(0.9).unwrap();
        assert!(matches!(
            conditional_token_distribution(&flat, &flat_f, &map, wide, ZetaOutcome::Overflow),
            Err(Error::ImpossibleZeta(_))
        ));
    }

    #[test]
    fn point_mass_rows_pass_through_both_branches() {
        // a deterministic step: whichever branch fires, the same token comes out
        let map = map_112();
        let q = Distribution::point_mass(3, 1).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        let alpha = FaBudget::new(0.4).unwrap();
        let aux = auxiliary_distribution(&qf, alpha);
        assert!((aux.mass_of(ZetaOutcome::Cluster(0)) - 0.4).abs() < 1e-15);
        assert!((aux.mass_of(ZetaOutcome::Overflow) - 0.6).abs() < 1e-15);

        let in_cluster =
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Cluster(0)).unwrap();
        let overflow =
            conditional_token_distribution(&q, &qf, &map, alpha, ZetaOutcome::Overflow).unwrap();
        assert_eq!(in_cluster.probs(), &[0.0, 1.0, 0.0]);
        assert_eq!(overflow.probs(), &[0.0, 1.0, 0.0]);
    }

    /// Reconstruct the marginal over all auxiliary outcomes and compare to q.
    fn reconstruction_deviation(q: &Distribution, map: &ClusterMap, alpha: FaBudget) -> f64 {
        let qf = cluster_distribution(q, map).unwrap();
        let aux = auxiliary_distribution(&qf, alpha);
        let mut mixture = vec![0.0; q.support_size()];
        for k in 0..map.k() {
            let mass = aux.cluster_mass(k);
            if mass <= 0.0 {
                continue;
            }
            let cond =
                conditional_token_distribution(q, &qf, map, alpha, ZetaOutcome::Cluster(k))
                    .unwrap();
            for (m, &p) in mixture.iter_mut().zip(cond.probs()) {
                *m += mass * p;
            }
        }
        if aux.overflow_mass() > 0.0 {
            let cond =
                conditional_token_distribution(q, &qf, map, alpha, ZetaOutcome::Overflow).unwrap();
            for (m, &p) in mixture.iter_mut().zip(cond.probs()) {
                *m += aux.overflow_mass() * p;
            }
        }
        mixture
            .iter()
            .zip(q.probs())
            .map(|(m, p)| (m - p).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn distortion_free_on_worked_instance() {
        // 0.7 * (5/7, 2/7, 0) + 0.3 * (0, 0, 1) = (0.5, 0.2, 0.3)
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let dev = reconstruction_deviation(&q, &map_112(), FaBudget::new(0.4).unwrap());
        assert!(dev < 1e-15, "deviation {dev}");
    }

    #[test]
    fn per_step_match_bound() {
        // P_zeta(f(x)) <= alpha for every cluster, exactly
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let map = map_112();
        for a in [0.1, 0.25, 0.4, 0.8] {
            let alpha = FaBudget::new(a).unwrap();
            let qf = cluster_distribution(&q, &map).unwrap();
            let aux = auxiliary_distribution(&qf, alpha);
            for k in 0..map.k() {
                assert!(aux.cluster_mass(k) <= a);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_traces_match() {
        let map = ClusterMap::from_assignment(vec![0, 0, 1, 1, 2, 2, 3, 3], 4).unwrap();
        let lm = LmSpec {
            vocab_size: 8,
            order: 1,
            concentration: 0.5,
            seed: 5,
            mode: LmMode::TokenMarkov,
        };
        let key = WatermarkKey::from_seed(1);
        let config = WatermarkConfig::default();
        let a = generate_watermarked(&lm, &map, &key, &config, &[], 60, 7).unwrap();
        let b = generate_watermarked(&lm, &map, &key, &config, &[], 60, 7).unwrap();
        assert_eq!(a, b);

        // every cluster-valued zeta step emits a token of that cluster, and
        // precursor steps carry no seed
        for (i, trace) in a.zeta_trace.iter().enumerate() {
            match trace {
                ZetaTrace::Precursor => {
                    assert!(i < config.precursor_len);
                    assert!(a.seeds[i].is_none());
                }
                ZetaTrace::Cluster(k) => {
                    assert_eq!(map.cluster_of(a.tokens[i]).unwrap(), *k);
                    assert!(a.seeds[i].is_some());
                }
                ZetaTrace::Overflow => assert!(a.seeds[i].is_some()),
            }
        }
    }

    #[test]
    fn near_one_budget_never_overflows() {
        let map = map_112();
        let q = Distribution::from_probs(vec![0.5, 0.2, 0.3]).unwrap();
        let qf = cluster_distribution(&q, &map).unwrap();
        let alpha = FaBudget::new(1.0 - 1e-9).unwrap();
        let aux = auxiliary_distribution(&qf, alpha);
        assert_eq!(aux.overflow_mass(), 0.0);
        assert_eq!(aux.cluster_masses(), qf.probs());
    }

    #[test]
    fn record_json_round_trip() {
        let map = map_112();
        let lm = LmSpec {
            vocab_size: 3,
            order: 1,
            concentration: 0.5,
            seed: 2,
            mode: LmMode::TokenMarkov,
        };
        let key = WatermarkKey::from_seed(4);
        let rec =
            generate_watermarked(&lm, &map, &key, &WatermarkConfig::default(), &[], 12, 3).unwrap();
        let back = GenerationRecord::from_json_line(&rec.to_json_line()).unwrap();
        assert_eq!(rec, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        /// Distortion-free identity over random (q, map, alpha) triples.
        #[test]
        fn distortion_free_identity(
            raw in proptest::collection::vec(0.0f64..1.0, 2..24),
            k in 1usize..6,
            alpha in 0.01f64..0.99,
            map_seed in any::<u64>(),
        ) {
            prop_assume!(raw.iter().any(|&x| x > 1e-6));
            let n = raw.len();
            let k = k.min(n);
            let mut stream = SplitMix64::new(map_seed);
            let mut assignment: Vec<u32> = (0..n)
                .map(|i| if i < k { i as u32 } else { stream.next_below(k as u64) as u32 })
                .collect();
            // shuffle so the forced prefix does not bias cluster shapes
            for i in (1..n).rev() {
                let j = stream.next_below((i + 1) as u64) as usize;
                assignment.swap(i, j);
            }
            let map = ClusterMap::from_assignment(assignment, k).unwrap();
            let q = Distribution::normalize(&raw).unwrap();
            let dev = reconstruction_deviation(&q, &map, FaBudget::new(alpha).unwrap());
            prop_assert!(dev < 1e-10, "deviation {}", dev);
        }

        /// In-cluster branches stay in their cluster; the overflow branch
        /// only emits tokens from overflowing clusters.
        #[test]
        fn branch_support_is_respected(
            raw in proptest::collection::vec(0.0f64..1.0, 3..16),
            alpha in 0.05f64..0.95,
            map_seed in any::<u64>(),
        ) {
            prop_assume!(raw.iter().any(|&x| x > 1e-6));
            let n = raw.len();
            let k = 3.min(n);
            let mut stream = SplitMix64::new(map_seed);
            let assignment: Vec<u32> = (0..n)
                .map(|i| if i < k { i as u32 } else { stream.next_below(k as u64) as u32 })
                .collect();
            let map = ClusterMap::from_assignment(assignment, k).unwrap();
            let q = Distribution::normalize(&raw).unwrap();
            let qf = cluster_distribution(&q, &map).unwrap();
            let budget = FaBudget::new(alpha).unwrap();

            for target in 0..k {
                if qf.get(target) <= 0.0 {
                    continue;
                }
                let cond = conditional_token_distribution(&q, &qf, &map, budget, ZetaOutcome::Cluster(target)).unwrap();
                for (token, &p) in cond.probs().iter().enumerate() {
                    if p > 0.0 {
                        prop_assert_eq!(map.assignment()[token] as usize, target);
                    }
                }
            }
            let total_overflow: f64 = qf.probs().iter().map(|&p| positive_part(p - alpha)).sum();
            if total_overflow > 0.0 {
                let cond = conditional_token_distribution(&q, &qf, &map, budget, ZetaOutcome::Overflow).unwrap();
                for (token, &p) in cond.probs().iter().enumerate() {
                    if p > 0.0 {
                        let cluster = map.assignment()[token] as usize;
                        prop_assert!(qf.get(cluster) > alpha);
                    }
                }
            }
        }
    }
}
