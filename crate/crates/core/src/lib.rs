//! Semantic-cluster watermarking for autoregressive token generators.
//!
//! The watermark operates on semantic clusters of the vocabulary rather than
//! raw tokens: generation truncates the per-step cluster distribution at a
//! false-alarm budget, samples an auxiliary outcome from a keyed seed over
//! the recent cluster history, and then samples the token inside the chosen
//! cluster. Marginally the output law equals the unwatermarked one, while a
//! detector holding the key replays every auxiliary draw from the text
//! alone and scores cluster agreement. Substituting tokens within their
//! clusters changes neither the seeds nor the scores, which is the
//! robustness the design targets.
//!
//! Modules:
//! - [`dist`]: probability primitives shared by everything else.
//! - [`prf`]: keyed seed derivation and the deterministic uniform stream.
//! - [`semantics`]: embeddings, k-means, and the token -> cluster map.
//! - [`toy_lm`]: seedable Markov token sources standing in for the LLM/SLM.
//! - [`embedder`]: the two-stage watermark sampler and generation loop.
//! - [`detector`]: replay detection, scoring, and p-value bounds.
//! - [`attacks`]: substitution and scrambling perturbations.
//! - [`oracle`]: brute-force verification of the optimality results.
//! - [`eval`]: experiment runner, ROC/TPR metrics, distortion checks.

pub mod attacks;
pub mod detector;
pub mod dist;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod prf;
pub mod sampling;
pub mod semantics;
pub mod toy_lm;

pub use attacks::{apply_attack, AttackKind, AttackSpec};
pub use detector::{apply_verdicts, detect, threshold_verdict, DetectionReport};
pub use dist::{positive_part, Distribution, FaBudget, SequenceDistribution, TokenId};
pub use embedder::{
    auxiliary_distribution, cluster_distribution, conditional_token_distribution,
    generate_watermarked, sample_zeta, AuxiliaryDistribution, GenerationRecord, WatermarkConfig,
    ZetaOutcome, ZetaTrace,
};
pub use error::{Error, Result};
pub use eval::{roc_auc, run_experiment, tpr_at_fpr, ExperimentConfig, MapSpec, MetricsReport};
pub use oracle::{
    build_optimal_sequence_scheme, exhaustive_detector_search, min_md_error, run_verification,
    worst_case_errors, DetectorTable, SequenceScheme, TinyInstance,
};
pub use prf::{derive_seed, seed_to_uniform, SplitMix64, WatermarkKey, WindowState};
pub use semantics::{
    build_cluster_map, load_external_embeddings, synth_embeddings, ClusterMap, EmbeddingMatrix,
};
pub use toy_lm::{
    next_token_distribution, sample_unwatermarked, surrogate_distribution, LmMode, LmSpec, SlmSpec,
};
