//! Experiment runner and metrics: ROC-AUC, TPR at fixed FPR, score
//! distributions, the per-token NLL distortion check, and the plumbing that
//! makes whole experiments a pure function of one master seed.
//!
//! Child seeds fan out of the master seed up front, so parallel execution
//! over sequences cannot change any result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, AttackSpec};
use crate::detector::{detect, quantile_higher};
use crate::dist::TokenId;
use crate::embedder::{generate_watermarked, WatermarkConfig};
use crate::error::{Error, Result};
use crate::prf::{SplitMix64, WatermarkKey};
use crate::semantics::{build_cluster_map, synth_embeddings, ClusterMap};
use crate::toy_lm::{per_token_nll, sample_unwatermarked, LmMode, LmSpec, SlmSpec};

/// Synthetic-embedding and clustering parameters for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub vocab_size: usize,
    pub dim: usize,
    pub true_clusters: usize,
    pub spread: f64,
    pub embed_seed: u64,
    pub k: usize,
    pub kmeans_seed: u64,
}

impl MapSpec {
    pub fn build(&self) -> Result<ClusterMap> {
        self.build_with_k(self.k)
    }

    pub fn build_with_k(&self, k: usize) -> Result<ClusterMap> {
        let emb = synth_embeddings(
            self.vocab_size,
            self.dim,
            self.true_clusters,
            self.spread,
            self.embed_seed,
        )?;
        build_cluster_map(&emb, k, self.kmeans_seed, 200, 1e-9)
    }
}

/// Full description of one experiment; everything downstream is a pure
/// function of this value. Fields missing from a config file fall back to
/// the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub lm: LmSpec,
    pub slm: SlmSpec,
    pub map: MapSpec,
    pub key: WatermarkKey,
    pub watermark: WatermarkConfig,
    pub t_gen: usize,
    pub n_pairs: usize,
    pub attacks: Vec<AttackSpec>,
    /// Cluster count for the attacker's own map. The attacker substitutes
    /// within its semantic view of the vocabulary, which need not match the
    /// watermark's partition; `None` reuses the watermark map.
    pub attack_map_k: Option<usize>,
    pub fpr_targets: Vec<f64>,
    pub master_seed: u64,
    /// Token budget per side for the NLL distortion check; 0 disables it.
    pub nll_tokens: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lm = LmSpec {
            vocab_size: 64,
            order: 1,
            concentration: 0.5,
            seed: 1,
            mode: LmMode::TokenMarkov,
        };
        ExperimentConfig {
            slm: SlmSpec {
                base: lm.clone(),
                mix_to_uniform: 0.1,
            },
            lm,
            map: MapSpec {
                vocab_size: 64,
                dim: 8,
                true_clusters: 4,
                spread: 0.15,
                embed_seed: 2,
                k: 4,
                kmeans_seed: 3,
            },
            key: WatermarkKey::from_seed(4),
            watermark: WatermarkConfig::default(),
            t_gen: 200,
            n_pairs: 200,
            attacks: Vec::new(),
            attack_map_k: None,
            fpr_targets: vec![0.01, 0.1],
            master_seed: 5,
            nll_tokens: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.slm.validate()?;
        self.watermark.validate()?;
        if self.n_pairs == 0 {
            return Err(Error::InvalidInput("n_pairs must be at least 1".into()));
        }
        if self.t_gen <= self.watermark.precursor_len {
            return Err(Error::InvalidInput(
                "t_gen must exceed the precursor length".into(),
            ));
        }
        if self.fpr_targets.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::InvalidInput(
                "every FPR target must lie in (0, 1)".into(),
            ));
        }
        if self.lm.vocab_size != self.map.vocab_size
            || self.slm.base.vocab_size != self.map.vocab_size
        {
            return Err(Error::InvalidConfig(
                "LM, SLM and map must share one vocabulary size".into(),
            ));
        }
        for attack in &self.attacks {
            attack.validate()?;
        }
        Ok(())
    }
}

/// Detection metrics for one attack setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingMetrics {
    pub attack: String,
    pub auroc: f64,
    pub tpr_at: Vec<(f64, f64)>,
    pub h1_mean: f64,
    pub h1_sd: f64,
    pub h0_mean: f64,
    pub h0_sd: f64,
}

/// Distortion check: per-token NLL of watermarked vs unwatermarked text
/// under the generator model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllMetrics {
    pub watermarked_mean: f64,
    pub unwatermarked_mean: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub tokens_per_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub settings: Vec<SettingMetrics>,
    pub nll: Option<NllMetrics>,
}

impl MetricsReport {
    /// Flat CSV: one row per (setting, metric).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,metric,value\n");
        for s in &self.settings {
            out.push_str(&format!("{},auroc,{}\n", s.attack, s.auroc));
            for &(fpr, tpr) in &s.tpr_at {
                out.push_str(&format!("{},tpr_at_fpr_{fpr},{tpr}\n", s.attack));
            }
            out.push_str(&format!("{},h1_mean,{}\n", s.attack, s.h1_mean));
            out.push_str(&format!("{},h1_sd,{}\n", s.attack, s.h1_sd));
            out.push_str(&format!("{},h0_mean,{}\n", s.attack, s.h0_mean));
            out.push_str(&format!("{},h0_sd,{}\n", s.attack, s.h0_sd));
        }
        if let Some(nll) = &self.nll {
            out.push_str(&format!("nll,watermarked_mean,{}\n", nll.watermarked_mean));
            out.push_str(&format!(
                "nll,unwatermarked_mean,{}\n",
                nll.unwatermarked_mean
            ));
            out.push_str(&format!("nll,ks_statistic,{}\n", nll.ks_statistic));
            out.push_str(&format!("nll,ks_p_value,{}\n", nll.ks_p_value));
        }
        out
    }
}

/// ROC-AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(h1_scores: &[f64], h0_scores: &[f64]) -> Result<f64> {
    if h1_scores.is_empty() || h0_scores.is_empty() {
        return Err(Error::InvalidInput("score samples must be non-empty".into()));
    }
    let mut wins = 0.0f64;
    for &a in h1_scores {
        for &b in h0_scores {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (h1_scores.len() as f64 * h0_scores.len() as f64))
}

/// True-positive rate at the threshold set by the empirical (1 - fpr)
/// quantile of the null scores, higher interpolation, strict inequality.
pub fn tpr_at_fpr(h1_scores: &[f64], h0_scores: &[f64], fpr: f64) -> Result<f64> {
    if h1_scores.is_empty() || h0_scores.is_empty() {
        return Err(Error::InvalidInput("score samples must be non-empty".into()));
    }
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::InvalidInput(format!(
            "fpr must lie in (0, 1), got {fpr}"
        )));
    }
    let mut sorted = h0_scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let threshold = quantile_higher(&sorted, 1.0 - fpr);
    let hits = h1_scores.iter().filter(|&&s| s > threshold).count();
    Ok(hits as f64 / h1_scores.len() as f64)
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("KS samples must be non-empty".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));

    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut stat = 0.0f64;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        stat = stat.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }

    // asymptotic Kolmogorov tail with the small-sample correction; the
    // alternating series only converges for sizeable lambda, and the tail is
    // indistinguishable from 1 below that
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * stat;
    if lambda < 0.3 {
        return Ok((stat, 1.0));
    }
    let mut p = 0.0f64;
    for k in 1..=100 {
        let term =
            2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    Ok((stat, p.clamp(0.0, 1.0)))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run one experiment: generate paired corpora, apply each attack to the
/// watermarked side, detect everything, and aggregate metrics.
/// Deterministic given the config, whatever the rayon pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let map = cfg.map.build()?;
    let attack_map = match cfg.attack_map_k {
        Some(k) => Some(cfg.map.build_with_k(k)?),
        None => None,
    };
    let attack_map = attack_map.as_ref().unwrap_or(&map);

    let lm_needs_map = matches!(cfg.lm.mode, LmMode::ClusterMarkov);
    let lm_map = lm_needs_map.then_some(&map);

    // fan out every child seed before any parallel work
    let mut fan = SplitMix64::new(cfg.master_seed);
    let h1_seeds: Vec<u64> = (0..cfg.n_pairs).map(|_| fan.next_u64()).collect();
    let h0_seeds: Vec<u64> = (0..cfg.n_pairs).map(|_| fan.next_u64()).collect();
    let attack_seeds: Vec<Vec<u64>> = cfg
        .attacks
        .iter()
        .map(|_| (0..cfg.n_pairs).map(|_| fan.next_u64()).collect())
        .collect();
    let nll_pairs = cfg.nll_tokens.div_ceil(cfg.t_gen.max(1));
    let nll_key_seeds: Vec<u64> = (0..nll_pairs).map(|_| fan.next_u64()).collect();
    let nll_h1_seeds: Vec<u64> = (0..nll_pairs).map(|_| fan.next_u64()).collect();
    let nll_h0_seeds: Vec<u64> = (0..nll_pairs).map(|_| fan.next_u64()).collect();

    let watermarked: Vec<Vec<TokenId>> = h1_seeds
        .par_iter()
        .map(|&seed| {
            generate_watermarked(&cfg.lm, &map, &cfg.key, &cfg.watermark, &[], cfg.t_gen, seed)
                .map(|r| r.tokens)
        })
        .collect::<Result<_>>()?;
    let unwatermarked: Vec<Vec<TokenId>> = h0_seeds
        .par_iter()
        .map(|&seed| sample_unwatermarked(&cfg.lm, lm_map, &[], cfg.t_gen, seed))
        .collect::<Result<_>>()?;

    let score_all = |texts: &[Vec<TokenId>]| -> Result<Vec<f64>> {
        texts
            .par_iter()
            .map(|text| {
                detect(text, &cfg.slm, &map, &cfg.key, &cfg.watermark)
                    .map(|r| r.normalized_score)
            })
            .collect()
    };

    let h0_scores = score_all(&unwatermarked)?;
    let clean_h1_scores = score_all(&watermarked)?;

    let mut settings = Vec::with_capacity(cfg.attacks.len() + 1);
    let mut push_setting = |label: String, h1: &[f64], h0: &[f64]| -> Result<()> {
        let auroc = roc_auc(h1, h0)?;
        let tpr_at = cfg
            .fpr_targets
            .iter()
            .map(|&f| tpr_at_fpr(h1, h0, f).map(|t| (f, t)))
            .collect::<Result<Vec<_>>>()?;
        let (h1_mean, h1_sd) = mean_sd(h1);
        let (h0_mean, h0_sd) = mean_sd(h0);
        settings.push(SettingMetrics {
            attack: label,
            auroc,
            tpr_at,
            h1_mean,
            h1_sd,
            h0_mean,
            h0_sd,
        });
        Ok(())
    };

    push_setting("clean".into(), &clean_h1_scores, &h0_scores)?;
    for (attack, seeds) in cfg.attacks.iter().zip(&attack_seeds) {
        let attacked_scores: Vec<f64> = watermarked
            .par_iter()
            .zip(seeds)
            .map(|(text, &seed)| {
                let spec = AttackSpec {
                    rng_seed: seed,
                    ..*attack
                };
                let attacked = apply_attack(text, &spec, attack_map)?;
                detect(&attacked, &cfg.slm, &map, &cfg.key, &cfg.watermark)
                    .map(|r| r.normalized_score)
            })
            .collect::<Result<_>>()?;
        push_setting(attack.kind.label(), &attacked_scores, &h0_scores)?;
    }

    // Distortion check. Each watermarked sequence gets a fresh key so the
    // pseudo-random seeds behave like fresh draws of the shared randomness;
    // with one fixed key the small window alphabet would pin each window's
    // auxiliary outcome and the sampled marginal would no longer estimate
    // the key-averaged law the identity speaks about.
    let nll = if nll_pairs > 0 {
        let wm_nll: Vec<f64> = nll_key_seeds
            .par_iter()
            .zip(&nll_h1_seeds)
            .map(|(&key_seed, &seed)| {
                let key = WatermarkKey::from_seed(key_seed);
                let record = generate_watermarked(
                    &cfg.lm,
                    &map,
                    &key,
                    &cfg.watermark,
                    &[],
                    cfg.t_gen,
                    seed,
                )?;
                per_token_nll(&cfg.lm, lm_map, &[], &record.tokens)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let un_nll: Vec<f64> = nll_h0_seeds
            .par_iter()
            .map(|&seed| {
                let text = sample_unwatermarked(&cfg.lm, lm_map, &[], cfg.t_gen, seed)?;
                per_token_nll(&cfg.lm, lm_map, &[], &text)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let (ks_statistic, ks_p_value) = ks_two_sample(&wm_nll, &un_nll)?;
        Some(NllMetrics {
            watermarked_mean: wm_nll.iter().sum::<f64>() / wm_nll.len() as f64,
            unwatermarked_mean: un_nll.iter().sum::<f64>() / un_nll.len() as f64,
            ks_statistic,
            ks_p_value,
            tokens_per_side: wm_nll.len(),
        })
    } else {
        None
    };

    Ok(MetricsReport { settings, nll })
}
