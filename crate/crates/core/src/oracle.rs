//! Brute-force numerical verification of the optimality results on tiny
//! instances.
//!
//! Everything here is deliberately slow and obviously correct: sequence
//! spaces are enumerated exhaustively, worst cases are taken over explicit
//! equivalence classes, and the closed-form minimum miss-detection error is
//! cross-checked against a search over every deterministic detector table.
//! The sequence-level cluster of a sequence is the cluster of its final
//! token, which keeps the mapping surjective for any token-level map.

use crate::dist::{positive_part, FaBudget, SequenceDistribution};
use crate::error::{Error, Result};
use crate::prf::SplitMix64;
use crate::semantics::ClusterMap;

/// A sequence-level problem instance small enough for exhaustive work:
/// vocabulary of at most 6 tokens, sequences of length at most 3.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    map: ClusterMap,
    q_seq: SequenceDistribution,
    alpha: FaBudget,
}

impl TinyInstance {
    pub fn new(map: ClusterMap, q_seq: SequenceDistribution, alpha: FaBudget) -> Result<Self> {
        if map.vocab_size() != q_seq.vocab_size() {
            return Err(Error::InvalidInput(
                "cluster map and sequence distribution disagree on vocabulary".into(),
            ));
        }
        if map.vocab_size() > 6 || q_seq.seq_len() > 3 || q_seq.seq_len() == 0 {
            return Err(Error::InstanceTooLarge(format!(
                "need vocab <= 6 and 1 <= T <= 3, got vocab {} T {}",
                map.vocab_size(),
                q_seq.seq_len()
            )));
        }
        if q_seq.num_sequences() > 216 {
            return Err(Error::InstanceTooLarge(
                "sequence space exceeds 216 entries".into(),
            ));
        }
        Ok(TinyInstance { map, q_seq, alpha })
    }

    pub fn map(&self) -> &ClusterMap {
        &self.map
    }

    pub fn q_seq(&self) -> &SequenceDistribution {
        &self.q_seq
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.value()
    }

    pub fn k(&self) -> usize {
        self.map.k()
    }

    /// Sequence-level cluster: the cluster of the final token.
    pub fn sequence_cluster(&self, rank: usize) -> usize {
        let vocab = self.q_seq.vocab_size();
        let last_token = rank % vocab;
        self.map.assignment()[last_token] as usize
    }

    /// Total probability per sequence-level cluster (the equivalence-class
    /// masses).
    pub fn class_masses(&self) -> Vec<f64> {
        let mut masses = vec![0.0; self.k()];
        for rank in 0..self.q_seq.num_sequences() {
            masses[self.sequence_cluster(rank)] += self.q_seq.prob(rank);
        }
        masses
    }

    /// Sequence ranks per class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k()];
        for rank in 0..self.q_seq.num_sequences() {
            members[self.sequence_cluster(rank)].push(rank);
        }
        members
    }
}

/// Closed-form minimum miss-detection error of a distortion-free scheme:
/// the summed positive parts of each class mass over the budget.
pub fn min_md_error(inst: &TinyInstance) -> f64 {
    let alpha = inst.alpha();
    inst.class_masses()
        .iter()
        .map(|&m| positive_part(m - alpha))
        .sum()
}

/// The sequence-level optimal scheme: auxiliary law over clusters plus
/// overflow, and the conditional sequence distribution per outcome.
/// Outcomes with zero prior mass carry no conditional.
#[derive(Debug, Clone)]
pub struct SequenceScheme {
    p_cluster: Vec<f64>,
    p_overflow: f64,
    cond_cluster: Vec<Option<SequenceDistribution>>,
    cond_overflow: Option<SequenceDistribution>,
}

impl SequenceScheme {
    pub fn p_cluster(&self, k: usize) -> f64 {
        self.p_cluster[k]
    }

    pub fn p_overflow(&self) -> f64 {
        self.p_overflow
    }

    pub fn cond_cluster(&self, k: usize) -> Option<&SequenceDistribution> {
        self.cond_cluster[k].as_ref()
    }

    pub fn cond_overflow(&self) -> Option<&SequenceDistribution> {
        self.cond_overflow.as_ref()
    }

    /// Marginal over auxiliary outcomes; equals the instance distribution
    /// entrywise for the optimal scheme (the distortion-free identity).
    pub fn mixture(&self, num_sequences: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_sequences];
        for (k, cond) in self.cond_cluster.iter().enumerate() {
            if let Some(cond) = cond {
                for (o, &p) in out.iter_mut().zip(cond.probs()) {
                    *o += self.p_cluster[k] * p;
                }
            }
        }
        if let Some(cond) = &self.cond_overflow {
            for (o, &p) in out.iter_mut().zip(cond.probs()) {
                *o += self.p_overflow * p;
            }
        }
        out
    }
}

/// Build the optimal sequence-level scheme: cluster k keeps
/// `min(class mass, alpha)`, the overflow outcome absorbs the excess, the
/// in-class conditional renormalizes the class, and the overflow conditional
/// weights each sequence by its class's excess times its within-class share.
pub fn build_optimal_sequence_scheme(inst: &TinyInstance) -> Result<SequenceScheme> {
    let alpha = inst.alpha();
    let masses = inst.class_masses();
    let n = inst.q_seq().num_sequences();

    let p_cluster: Vec<f64> = masses.iter().map(|&m| m.min(alpha)).collect();
    let p_overflow: f64 = masses.iter().map(|&m| positive_part(m - alpha)).sum();

    let mut cond_cluster = Vec::with_capacity(inst.k());
    for (k, &mass) in masses.iter().enumerate() {
        if p_cluster[k] <= 0.0 || mass <= 0.0 {
            cond_cluster.push(None);
            continue;
        }
        let probs: Vec<f64> = (0..n)
            .map(|rank| {
                if inst.sequence_cluster(rank) == k {
                    inst.q_seq().prob(rank) / mass
                } else {
                    0.0
                }
            })
            .collect();
        cond_cluster.push(Some(SequenceDistribution::from_probs(
            inst.q_seq().vocab_size(),
            inst.q_seq().seq_len(),
            probs,
        )?));
    }

    let cond_overflow = if p_overflow > 0.0 {
        let probs: Vec<f64> = (0..n)
            .map(|rank| {
                let k = inst.sequence_cluster(rank);
                let mass = masses[k];
                if mass <= 0.0 {
                    0.0
                } else {
                    (inst.q_seq().prob(rank) / mass) * positive_part(mass - alpha) / p_overflow
                }
            })
            .collect();
        Some(SequenceDistribution::from_probs(
            inst.q_seq().vocab_size(),
            inst.q_seq().seq_len(),
            probs,
        )?)
    } else {
        None
    };

    Ok(SequenceScheme {
        p_cluster,
        p_overflow,
        cond_cluster,
        cond_overflow,
    })
}

/// Explicit deterministic detector: one accept bit per
/// (sequence, auxiliary outcome) pair. Outcome index `k()` is the overflow
/// state.
#[derive(Debug, Clone)]
pub struct DetectorTable {
    num_sequences: usize,
    k: usize,
    accept: Vec<bool>,
}

impl DetectorTable {
    pub fn new(num_sequences: usize, k: usize, accept: Vec<bool>) -> Result<Self> {
        if accept.len() != num_sequences * (k + 1) {
            return Err(Error::InvalidInput(format!(
                "detector table must cover {} cells, got {}",
                num_sequences * (k + 1),
                accept.len()
            )));
        }
        Ok(DetectorTable {
            num_sequences,
            k,
            accept,
        })
    }

    /// Encode a table from the bits of `mask`, cell (rank, outcome) at bit
    /// `rank * (k + 1) + outcome`.
    pub fn from_mask(num_sequences: usize, k: usize, mask: u64) -> Result<Self> {
        let cells = num_sequences * (k + 1);
        if cells > 64 {
            return Err(Error::InstanceTooLarge(
                "mask encoding limited to 64 cells".into(),
            ));
        }
        let accept = (0..cells).map(|i| mask >> i & 1 == 1).collect();
        Self::new(num_sequences, k, accept)
    }

    /// The jointly optimal detector: accept iff the sequence's class equals
    /// the auxiliary outcome (the overflow state never matches).
    pub fn optimal(inst: &TinyInstance) -> Self {
        let n = inst.q_seq().num_sequences();
        let k = inst.k();
        let mut accept = vec![false; n * (k + 1)];
        for rank in 0..n {
            let class = inst.sequence_cluster(rank);
            accept[rank * (k + 1) + class] = true;
        }
        DetectorTable {
            num_sequences: n,
            k,
            accept,
        }
    }

    pub fn accepts(&self, rank: usize, outcome: usize) -> bool {
        self.accept[rank * (self.k + 1) + outcome]
    }

    pub fn num_outcomes(&self) -> usize {
        self.k + 1
    }
}

/// Worst-case false-alarm and miss-detection errors of `(scheme, detector)`
/// under the equivalence-class attack, by exhaustive enumeration.
///
/// The worst case over human distributions reduces to a maximum over point
/// masses, and a point mass only enters through its class; so the FA error
/// is the largest, over classes, of the scheme-weighted class-supremum of
/// the detector. The MD error takes the class-supremum of rejection inside
/// the joint expectation.
pub fn worst_case_errors(
    scheme: &SequenceScheme,
    detector: &DetectorTable,
    inst: &TinyInstance,
) -> Result<(f64, f64)> {
    let n = inst.q_seq().num_sequences();
    let k = inst.k();
    if detector.num_sequences != n || detector.k != k {
        return Err(Error::InvalidInput(
            "detector table does not cover this instance".into(),
        ));
    }
    let members = inst.class_members();

    // sup / inf of the accept bit over each class, per outcome
    let outcomes = k + 1;
    let class_sup: Vec<Vec<bool>> = members
        .iter()
        .map(|ranks| {
            (0..outcomes)
                .map(|outcome| ranks.iter().any(|&rank| detector.accepts(rank, outcome)))
                .collect()
        })
        .collect();
    let class_inf: Vec<Vec<bool>> = members
        .iter()
        .map(|ranks| {
            (0..outcomes)
                .map(|outcome| ranks.iter().all(|&rank| detector.accepts(rank, outcome)))
                .collect()
        })
        .collect();

    let outcome_mass = |outcome: usize| -> f64 {
        if outcome < k {
            scheme.p_cluster(outcome)
        } else {
            scheme.p_overflow()
        }
    };

    let fa = class_sup
        .iter()
        .map(|sup| {
            (0..outcomes)
                .filter(|&outcome| sup[outcome])
                .map(outcome_mass)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);

    let mut md = 0.0;
    for outcome in 0..outcomes {
        let mass = outcome_mass(outcome);
        if mass <= 0.0 {
            continue;
        }
        let cond = if outcome < k {
            scheme.cond_cluster(outcome)
        } else {
            scheme.cond_overflow()
        };
        let Some(cond) = cond else { continue };
        for (ranks, inf) in members.iter().zip(&class_inf) {
            // an adversary inside the class evades iff some member is rejected
            if !inf[outcome] {
                let class_mass: f64 = ranks.iter().map(|&r| cond.prob(r)).sum();
                md += mass * class_mass;
            }
        }
    }

    Ok((fa, md))
}

/// Search every deterministic detector table against the optimal scheme and
/// return the least miss-detection error among tables whose worst-case
/// false-alarm error stays within the budget (plus floating-point slack).
///
/// Restricted to T = 1 instances with at most 12 table cells (4096 tables);
/// the deterministic minimum certifies the bound because any randomized
/// detector's error pair is a convex combination of deterministic ones.
pub fn exhaustive_detector_search(inst: &TinyInstance) -> Result<f64> {
    if inst.q_seq().seq_len() != 1 {
        return Err(Error::InstanceTooLarge(
            "exhaustive search only runs at T = 1".into(),
        ));
    }
    let n = inst.q_seq().num_sequences();
    let cells = n * (inst.k() + 1);
    if cells > 12 {
        return Err(Error::InstanceTooLarge(format!(
            "table space 2^{cells} exceeds the 4096-table budget"
        )));
    }
    let scheme = build_optimal_sequence_scheme(inst)?;
    let alpha = inst.alpha();
    let mut best = f64::INFINITY;
    for mask in 0u64..(1 << cells) {
        let table = DetectorTable::from_mask(n, inst.k(), mask)?;
        let (fa, md) = worst_case_errors(&scheme, &table, inst)?;
        if fa <= alpha + 1e-12 && md < best {
            best = md;
        }
    }
    Ok(best)
}

/// Draw a random tiny instance: a surjective assignment, a dense random
/// sequence distribution, and a budget in [0.05, 0.95].
pub fn random_instance(
    stream: &mut SplitMix64,
    vocab_size: usize,
    seq_len: usize,
    k: usize,
) -> Result<TinyInstance> {
    assert!(k <= vocab_size);
    let assignment: Vec<u32> = loop {
        let candidate: Vec<u32> = (0..vocab_size)
            .map(|_| stream.next_below(k as u64) as u32)
            .collect();
        let mut seen = vec![false; k];
        for &c in &candidate {
            seen[c as usize] = true;
        }
        if seen.iter().all(|&s| s) {
            break candidate;
        }
    };
    let map = ClusterMap::from_assignment(assignment, k)?;
    let n = vocab_size.pow(seq_len as u32);
    let raw: Vec<f64> = (0..n).map(|_| stream.next_f64() + 1e-6).collect();
    let q_seq = SequenceDistribution::normalize(vocab_size, seq_len, &raw)?;
    let alpha = FaBudget::new(0.05 + 0.9 * stream.next_f64())?;
    TinyInstance::new(map, q_seq, alpha)
}

/// Aggregate outcome of the oracle verification battery.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VerificationReport {
    pub instances_run: usize,
    /// Largest entrywise deviation of the scheme mixture from the instance
    /// distribution (distortion-free identity).
    pub max_mixture_deviation: f64,
    /// Largest |search - formula| over the T = 1 searches.
    pub max_search_deviation: f64,
    /// Largest worst-case FA excess over the budget for the optimal pair.
    pub max_fa_excess: f64,
    /// Largest |achieved MD - formula MD| for the optimal pair.
    pub max_md_deviation: f64,
}

impl VerificationReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_mixture_deviation <= tolerance
            && self.max_search_deviation <= tolerance
            && self.max_fa_excess <= tolerance
            && self.max_md_deviation <= tolerance
    }
}

/// Run the full verification battery over seeded random instances:
/// mixture reconstruction, achievability of the optimal pair at T in
/// {1, 2, 3}, and formula-vs-search agreement at T = 1.
pub fn run_verification(instances: usize, seed: u64) -> Result<VerificationReport> {
    let mut stream = SplitMix64::new(seed);
    let mut report = VerificationReport {
        instances_run: 0,
        max_mixture_deviation: 0.0,
        max_search_deviation: 0.0,
        max_fa_excess: 0.0,
        max_md_deviation: 0.0,
    };

    for i in 0..instances {
        let seq_len = 1 + i % 3;
        let vocab_size = 3 + (stream.next_below(4)) as usize; // 3..=6
        let k = 2 + (stream.next_below((vocab_size - 1) as u64)) as usize;
        let inst = random_instance(&mut stream, vocab_size, seq_len, k)?;

        let scheme = build_optimal_sequence_scheme(&inst)?;
        let mixture = scheme.mixture(inst.q_seq().num_sequences());
        let dev = mixture
            .iter()
            .zip(inst.q_seq().probs())
            .map(|(m, p)| (m - p).abs())
            .fold(0.0, f64::max);
        report.max_mixture_deviation = report.max_mixture_deviation.max(dev);

        let table = DetectorTable::optimal(&inst);
        let (fa, md) = worst_case_errors(&scheme, &table, &inst)?;
        let formula = min_md_error(&inst);
        report.max_fa_excess = report.max_fa_excess.max(fa - inst.alpha());
        report.max_md_deviation = report.max_md_deviation.max((md - formula).abs());

        if seq_len == 1 && inst.q_seq().num_sequences() * (inst.k() + 1) <= 12 {
            let searched = exhaustive_detector_search(&inst)?;
            report.max_search_deviation =
                report.max_search_deviation.max((searched - formula).abs());
        }
        report.instances_run += 1;
    }
    Ok(report)
}
