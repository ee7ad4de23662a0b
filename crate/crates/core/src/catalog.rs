//! Shared domain types and the candidate catalog.
//!
//! Candidates are soft-deleted: removal clears the `active` flag and keeps the
//! learned state for auditing. Re-adding a removed id archives the old arm and
//! appends a freshly initialized one; learned state is never carried over.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::{PredictorConfig, RegressorState, Target};
use crate::uncertainty::ArmUncertainty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub quality: f64,
    pub response_tokens: i64,
    #[serde(default)]
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub base_embedding: Vec<f64>,
    pub prompt_tokens: i64,
    #[serde(default)]
    pub domain_label: Option<usize>,
    #[serde(rename = "truth", default)]
    pub ground_truth: BTreeMap<String, GroundTruth>,
}

impl Query {
    pub fn truth(&self, llm_id: &str) -> Result<&GroundTruth> {
        self.ground_truth
            .get(llm_id)
            .ok_or_else(|| Error::MissingGroundTruth {
                query: self.id.clone(),
                llm_id: llm_id.to_string(),
            })
    }
}

/// Pricing and latency profile of one routable model. Field names match the
/// catalog file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCandidate {
    pub llm_id: String,
    pub prompt_price_per_1k: f64,
    pub response_price_per_1k: f64,
    pub init_latency_s: f64,
    pub tokens_per_s: f64,
}

impl LlmCandidate {
    pub fn new(
        llm_id: impl Into<String>,
        prompt_price_per_1k: f64,
        response_price_per_1k: f64,
        init_latency_s: f64,
        tokens_per_s: f64,
    ) -> Self {
        Self {
            llm_id: llm_id.into(),
            prompt_price_per_1k,
            response_price_per_1k,
            init_latency_s,
            tokens_per_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.prompt_price_per_1k >= 0.0
            && self.response_price_per_1k >= 0.0
            && self.init_latency_s >= 0.0
            && self.tokens_per_s > 0.0
            && self.tokens_per_s.is_finite();
        if !ok || self.llm_id.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "candidate `{}` has invalid pricing or latency",
                self.llm_id
            )));
        }
        Ok(())
    }

    /// Dollar cost of a realized response.
    pub fn true_cost(&self, prompt_tokens: i64, response_tokens: i64) -> f64 {
        (prompt_tokens.max(0) as f64 * self.prompt_price_per_1k
            + response_tokens.max(0) as f64 * self.response_price_per_1k)
            / 1000.0
    }
}

/// Learned per-candidate state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub quality: RegressorState,
    pub length: RegressorState,
    pub uncertainty: ArmUncertainty,
}

impl ArmState {
    pub fn fresh(d_route: usize, cfg: &PredictorConfig) -> Self {
        Self {
            quality: RegressorState::new(Target::Quality, cfg.quality_kind, d_route, cfg),
            length: RegressorState::new(Target::Length, cfg.length_kind, d_route, cfg),
            uncertainty: ArmUncertainty::new(d_route),
        }
    }

    /// Serialized predictor + uncertainty state, used for bitwise comparisons.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("arm state serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub candidate: LlmCandidate,
    pub active: bool,
    pub state: ArmState,
}

impl Arm {
    pub fn id(&self) -> &str {
        &self.candidate.llm_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    d_base: usize,
    d_route: usize,
    predictor: PredictorConfig,
    arms: Vec<Arm>,
    #[serde(default)]
    retired: Vec<Arm>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CatalogFile {
    Bare(Vec<LlmCandidate>),
    Full {
        #[serde(default)]
        d_base: Option<usize>,
        #[serde(default)]
        d_route: Option<usize>,
        candidates: Vec<LlmCandidate>,
    },
}

/// Candidates as listed in a catalog file.
#[derive(Debug, Clone)]
pub struct CatalogSpec {
    pub d_base: Option<usize>,
    pub d_route: Option<usize>,
    pub candidates: Vec<LlmCandidate>,
}

impl CatalogSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec = match serde_json::from_str::<CatalogFile>(text)? {
            CatalogFile::Bare(candidates) => Self {
                d_base: None,
                d_route: None,
                candidates,
            },
            CatalogFile::Full {
                d_base,
                d_route,
                candidates,
            } => Self {
                d_base,
                d_route,
                candidates,
            },
        };
        for c in &spec.candidates {
            c.validate()?;
        }
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            d_base: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            d_route: Option<usize>,
            candidates: &'a [LlmCandidate],
        }
        let out = Out {
            d_base: self.d_base,
            d_route: self.d_route,
            candidates: &self.candidates,
        };
        std::fs::write(path, serde_json::to_string_pretty(&out)?)?;
        Ok(())
    }
}

impl Catalog {
    pub fn new(d_base: usize, d_route: usize, predictor: PredictorConfig) -> Self {
        Self {
            d_base,
            d_route,
            predictor,
            arms: Vec::new(),
            retired: Vec::new(),
        }
    }

    pub fn with_candidates(
        d_base: usize,
        d_route: usize,
        predictor: PredictorConfig,
        candidates: impl IntoIterator<Item = LlmCandidate>,
    ) -> Result<Self> {
        let mut cat = Self::new(d_base, d_route, predictor);
        for c in candidates {
            cat.add_candidate(c)?;
        }
        Ok(cat)
    }

    pub fn d_base(&self) -> usize {
        self.d_base
    }

    pub fn d_route(&self) -> usize {
        self.d_route
    }

    pub fn predictor_config(&self) -> &PredictorConfig {
        &self.predictor
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn retired(&self) -> &[Arm] {
        &self.retired
    }

    pub fn arm(&self, index: usize) -> &Arm {
        &self.arms[index]
    }

    pub fn arm_mut(&mut self, index: usize) -> &mut Arm {
        &mut self.arms[index]
    }

    pub fn index_of(&self, llm_id: &str) -> Option<usize> {
        self.arms.iter().position(|a| a.id() == llm_id)
    }

    /// Indices of active arms, in catalog order.
    pub fn active_indices(&self) -> Vec<usize> {
        self.arms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.active)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn active_ids(&self) -> Vec<String> {
        self.arms
            .iter()
            .filter(|a| a.active)
            .map(|a| a.id().to_string())
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.arms.iter().filter(|a| a.active).count()
    }

    pub fn active_arms(&self) -> impl Iterator<Item = &Arm> {
        self.arms.iter().filter(|a| a.active)
    }

    pub fn add_candidate(&mut self, c: LlmCandidate) -> Result<()> {
        c.validate()?;
        if let Some(i) = self.index_of(&c.llm_id) {
            if self.arms[i].active {
                return Err(Error::DuplicateId(c.llm_id));
            }
            let old = self.arms.remove(i);
            self.retired.push(old);
        }
        let state = ArmState::fresh(self.d_route, &self.predictor);
        self.arms.push(Arm {
            candidate: c,
            active: true,
            state,
        });
        Ok(())
    }

    pub fn remove_candidate(&mut self, llm_id: &str) -> Result<()> {
        match self.arms.iter_mut().find(|a| a.id() == llm_id && a.active) {
            Some(arm) => {
                arm.active = false;
                Ok(())
            }
            None => Err(Error::UnknownId(llm_id.to_string())),
        }
    }

    pub fn validate_query<'q>(&self, q: &'q Query) -> Result<&'q Query> {
        validate_query(q, self)
    }

    /// Active candidates with their state, for comparing catalogs by what
    /// routing can observe.
    pub fn active_view(&self) -> Vec<&Arm> {
        self.active_arms().collect()
    }
}

pub fn validate_query<'q>(q: &'q Query, catalog: &Catalog) -> Result<&'q Query> {
    if q.base_embedding.len() != catalog.d_base {
        return Err(Error::DimensionMismatch {
            expected: catalog.d_base,
            got: q.base_embedding.len(),
        });
    }
    if q.prompt_tokens < 0 {
        return Err(Error::NegativeTokens(q.prompt_tokens));
    }
    Ok(q)
}
