#![allow(dead_code)]

use std::collections::BTreeMap;

use mixroute::catalog::{Catalog, GroundTruth, LlmCandidate, Query};
use mixroute::data::Dataset;
use mixroute::predict::PredictorConfig;
use mixroute::synth::{self, SynthArm, SynthConfig};
use mixroute::{Router, RouterConfig};

pub fn candidate(id: &str, price: f64, tps: f64) -> LlmCandidate {
    LlmCandidate::new(id, price, 2.0 * price, 0.0, tps)
}

/// Untrained router over `candidates` with identity routing space.
pub fn router(d: usize, candidates: Vec<LlmCandidate>, cfg: RouterConfig) -> Router {
    let cat = Catalog::with_candidates(d, d, PredictorConfig::default(), candidates).unwrap();
    Router::new(cat, cfg, None).unwrap()
}

pub fn synth_config(queries: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        queries,
        seed,
        ..Default::default()
    }
}

/// Default synthetic dataset and a router trained on its first `train` rows.
pub fn trained(queries: usize, train: usize, seed: u64, cfg: RouterConfig) -> (Router, Dataset) {
    let sc = synth_config(queries, seed);
    let ds = synth::generate(&sc);
    let mut r = router(sc.d_base, synth::candidates(&sc), cfg);
    r.train_offline(&ds.queries[..train]).unwrap();
    (r, ds)
}

pub fn arms(specs: &[(&str, f64, f64)]) -> Vec<SynthArm> {
    specs
        .iter()
        .map(|&(id, price, skill)| SynthArm {
            candidate: LlmCandidate::new(id, price, 2.0 * price, 0.03, 5000.0),
            skill,
            domain_spread: 0.2,
            mean_tokens: 200.0,
        })
        .collect()
}

/// A query whose every candidate answers with `quality` and `tokens`.
pub fn uniform_query(id: &str, e: Vec<f64>, ids: &[&str], quality: f64, tokens: i64) -> Query {
    let truth: BTreeMap<String, GroundTruth> = ids
        .iter()
        .map(|l| {
            (
                l.to_string(),
                GroundTruth {
                    quality,
                    response_tokens: tokens,
                    cost_usd: None,
                },
            )
        })
        .collect();
    Query {
        id: id.into(),
        base_embedding: e,
        prompt_tokens: 10,
        domain_label: None,
        ground_truth: truth,
    }
}
