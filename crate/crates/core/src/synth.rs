//! Seeded synthetic routing datasets.
//!
//! Queries are drawn around per-domain centers; every candidate has a
//! per-domain skill level plus a shared within-domain difficulty direction,
//! so quality is partly predictable from the embedding. An optional drift
//! point re-draws the per-domain skill offsets for the rest of the stream.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{GroundTruth, LlmCandidate, Query};
use crate::data::Dataset;
use crate::embed::normalize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArm {
    pub candidate: LlmCandidate,
    /// Mean quality across domains.
    pub skill: f64,
    /// Std-dev of the per-domain offset around `skill`.
    pub domain_spread: f64,
    /// Mean response length in tokens.
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub queries: usize,
    pub d_base: usize,
    pub domains: usize,
    pub arms: Vec<SynthArm>,
    /// Std-dev of the embedding noise around the domain center.
    pub embed_noise: f64,
    /// Quality slope along the shared difficulty direction.
    pub difficulty_slope: f64,
    pub quality_noise: f64,
    /// Draw 0/1 qualities (Bernoulli of the mean) instead of continuous ones.
    pub binary_quality: bool,
    /// Fraction of the stream after which per-domain skills are re-drawn.
    pub drift_at: Option<f64>,
    /// Std-dev of the re-drawn per-domain offsets (same for every arm).
    pub drift_spread: f64,
    pub prompt_tokens: (i64, i64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            queries: 1000,
            d_base: 16,
            domains: 6,
            arms: default_arms(),
            embed_noise: 0.35,
            difficulty_slope: 0.15,
            quality_noise: 0.05,
            binary_quality: false,
            drift_at: None,
            drift_spread: 0.25,
            prompt_tokens: (20, 400),
            seed: 42,
        }
    }
}

/// Four candidates spanning two orders of magnitude in price. Together they
/// serve roughly 15 queries/s; the large one alone under 2 queries/s.
pub fn default_arms() -> Vec<SynthArm> {
    let arm = |id: &str, pp: f64, rp: f64, init: f64, tps: f64, skill: f64, spread: f64, tokens: f64| SynthArm {
        candidate: LlmCandidate::new(id, pp, rp, init, tps),
        skill,
        domain_spread: spread,
        mean_tokens: tokens,
    };
    vec![
        arm("small", 0.0002, 0.0006, 0.05, 2000.0, 0.45, 0.15, 180.0),
        arm("medium", 0.001, 0.002, 0.1, 1200.0, 0.62, 0.12, 220.0),
        arm("specialist", 0.0008, 0.0016, 0.08, 1500.0, 0.55, 0.25, 200.0),
        arm("large", 0.01, 0.03, 0.2, 600.0, 0.82, 0.06, 260.0),
    ]
}

pub fn candidates(cfg: &SynthConfig) -> Vec<LlmCandidate> {
    cfg.arms.iter().map(|a| a.candidate.clone()).collect()
}

fn skill_table(cfg: &SynthConfig, spread: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let unit = Normal::new(0.0, 1.0).expect("valid std-dev");
    cfg.arms
        .iter()
        .map(|a| {
            (0..cfg.domains)
                .map(|_| a.skill + spread.unwrap_or(a.domain_spread) * unit.sample(rng))
                .collect()
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid std-dev");
    let d = cfg.d_base.max(1);
    let domains = cfg.domains.max(1);

    let gauss_unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| unit.sample(rng)).collect();
            if let Ok(u) = normalize(&v) {
                return u;
            }
        }
    };
    let centers: Vec<Vec<f64>> = (0..domains).map(|_| gauss_unit(&mut rng)).collect();
    let difficulty = gauss_unit(&mut rng);
    let length_factor: Vec<f64> = (0..domains).map(|_| 0.7 + 0.6 * rng.random::<f64>()).collect();
    let before = skill_table(cfg, None, &mut rng);
    let after = skill_table(cfg, Some(cfg.drift_spread), &mut rng);
    let drift_index = cfg
        .drift_at
        .map(|f| (f.clamp(0.0, 1.0) * cfg.queries as f64).round() as usize);

    let noise_scale = cfg.embed_noise / (d as f64).sqrt();
    let mut queries = Vec::with_capacity(cfg.queries);
    for n in 0..cfg.queries {
        let domain = rng.random_range(0..domains);
        let noise: Vec<f64> = (0..d).map(|_| noise_scale * unit.sample(&mut rng)).collect();
        let emb: Vec<f64> = centers[domain].iter().zip(&noise).map(|(c, z)| c + z).collect();
        // standard-normal position along the difficulty direction
        let h = if noise_scale > 0.0 {
            noise.iter().zip(&difficulty).map(|(a, b)| a * b).sum::<f64>() / noise_scale
        } else {
            0.0
        };
        let prompt_tokens = rng.random_range(cfg.prompt_tokens.0..=cfg.prompt_tokens.1);
        let table = match drift_index {
            Some(cut) if n >= cut => &after,
            _ => &before,
        };
        let mut truth = BTreeMap::new();
        for (l, arm) in cfg.arms.iter().enumerate() {
            let mean = (table[l][domain] + cfg.difficulty_slope * h).clamp(0.0, 1.0);
            let quality = if cfg.binary_quality {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            } else {
                (mean + cfg.quality_noise * unit.sample(&mut rng)).clamp(0.0, 1.0)
            };
            let tokens = (arm.mean_tokens * length_factor[domain] * (1.0 + 0.15 * unit.sample(&mut rng)))
                .round()
                .max(1.0) as i64;
            truth.insert(
                arm.candidate.llm_id.clone(),
                GroundTruth {
                    quality,
                    response_tokens: tokens,
                    cost_usd: Some(arm.candidate.true_cost(prompt_tokens, tokens)),
                },
            );
        }
        queries.push(Query {
            id: format!("q{n:06}"),
            base_embedding: emb,
            prompt_tokens,
            domain_label: Some(domain),
            ground_truth: truth,
        });
    }
    Dataset::new(queries, format!("synthetic(seed={})", cfg.seed)).expect("generator emits valid rows")
}
