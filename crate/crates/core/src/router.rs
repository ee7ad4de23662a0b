//! Meta decision maker.
//!
//! Every active candidate gets
//!
//! ```text
//! s = s_trade + alpha * s_unc - beta * s_pen
//! s_trade = lambda/(lambda+1) * p_hat - 1/(lambda+1) * c_hat
//! s_unc   = e^T A^-1 e
//! s_pen   = exp(gamma * (w - xi * tau))
//! ```
//!
//! where `c_hat` is the predicted dollar cost divided by `cost_scale`. The
//! online variant adds `kappa * s_df` from the feedback network. The highest
//! score wins; ties go to the lowest catalog index.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, LlmCandidate, Query};
use crate::embed::{normalize, ProjectionModel};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackNet, GradientSign, RewardScheme, DEFAULT_HIDDEN};
use crate::predict::estimate_cost;
use crate::uncertainty::ArmUncertainty;

static DOMINANCE_WARNED: AtomicBool = AtomicBool::new(false);

/// Upper bound on the penalty exponent.
pub const PENALTY_EXP_CAP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub xi: f64,
    #[serde(rename = "tau_s")]
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta3: f64,
    pub df_window: usize,
    /// Dollar amount mapped to 1.0 in the trade score. `None` means: derive
    /// it from the training set (largest per-query cost).
    pub cost_scale: Option<f64>,
    pub gradient_sign: GradientSign,
    pub reward_scheme: RewardScheme,
    pub hidden: usize,
    pub net_seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.1,
            gamma: 0.1,
            xi: 0.5,
            tau: 30.0,
            lambda: 1.0,
            epsilon: 1e-2,
            eta3: 1e-3,
            df_window: 50,
            cost_scale: None,
            gradient_sign: GradientSign::Ascent,
            reward_scheme: RewardScheme::ZeroOne,
            hidden: DEFAULT_HIDDEN,
            net_seed: 42,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.alpha >= 0.0, "alpha >= 0"),
            (self.beta >= 0.0, "beta >= 0"),
            (self.gamma > 0.0, "gamma > 0"),
            (self.xi > 0.0 && self.xi < 1.0, "0 < xi < 1"),
            (self.tau > 0.0, "tau_s > 0"),
            (self.lambda > 0.0 && self.lambda.is_finite(), "lambda > 0"),
            (self.epsilon > 0.0, "epsilon > 0"),
            (self.eta3 >= 0.0, "eta3 >= 0"),
            (self.df_window >= 1, "df_window >= 1"),
            (self.cost_scale.map_or(true, |c| c > 0.0), "cost_scale > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::InvalidConfig(format!("expected {what}"))),
            None => Ok(()),
        }
    }
}

pub fn trade_score(p_hat: f64, c_hat: f64, lambda: f64) -> f64 {
    lambda / (lambda + 1.0) * p_hat - 1.0 / (lambda + 1.0) * c_hat
}

pub fn uncertainty_score(arm: &ArmUncertainty, e: &[f64]) -> Result<f64> {
    arm.score(e)
}

pub fn latency_penalty(wait: f64, cfg: &RouterConfig) -> f64 {
    (cfg.gamma * (wait - cfg.xi * cfg.tau)).min(PENALTY_EXP_CAP).exp()
}

/// Eq. (7)-style combination, kept separate so logs can be re-summed.
pub fn combine(s_trade: f64, s_unc: f64, s_pen: f64, cfg: &RouterConfig) -> f64 {
    s_trade + cfg.alpha * s_unc - cfg.beta * s_pen
}

/// Per-candidate score breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub llm_id: String,
    pub p_hat: f64,
    pub len_hat: f64,
    pub cost_usd: f64,
    pub c_hat: f64,
    pub wait_s: f64,
    pub s_trade: f64,
    pub s_unc: f64,
    pub s_pen: f64,
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<f64>,
    pub s_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    pub chosen: String,
    /// Catalog index of the chosen candidate.
    pub chosen_index: usize,
    pub timestamp: f64,
    pub breakdown: Vec<Breakdown>,
}

/// First index of the maximum score.
pub fn argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Catalog, learned state and configuration of one routing engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Router {
    pub catalog: Catalog,
    pub config: RouterConfig,
    pub projection: Option<ProjectionModel>,
    pub feedback: FeedbackNet,
    pub cost_scale: f64,
}

impl Router {
    pub fn new(catalog: Catalog, config: RouterConfig, projection: Option<ProjectionModel>) -> Result<Self> {
        config.validate()?;
        if let Some(p) = &projection {
            if p.d_base != catalog.d_base() || p.d_route != catalog.d_route() {
                return Err(Error::DimensionMismatch {
                    expected: catalog.d_route(),
                    got: p.d_route,
                });
            }
        } else if catalog.d_route() != catalog.d_base() {
            return Err(Error::InvalidConfig(
                "d_route differs from d_base but no projection was given".into(),
            ));
        }
        let feedback = FeedbackNet::new(
            catalog.d_route(),
            config.hidden,
            catalog.active_ids(),
            config.df_window,
            config.net_seed,
        );
        Ok(Self {
            cost_scale: config.cost_scale.unwrap_or(1.0),
            catalog,
            config,
            projection,
            feedback,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.config.lambda = lambda;
    }

    /// Routing-space embedding of a query (unit norm).
    pub fn embed(&self, q: &Query) -> Result<Vec<f64>> {
        self.catalog.validate_query(q)?;
        match &self.projection {
            Some(p) => p.project(&q.base_embedding),
            None => normalize(&q.base_embedding),
        }
    }

    /// Offline training with refined feedback from every active candidate:
    /// closed-form predictor fits and uncertainty updates with all
    /// embeddings. Derives `cost_scale` when the config leaves it open.
    pub fn train_offline(&mut self, queries: &[Query]) -> Result<()> {
        let embs = queries
            .iter()
            .map(|q| self.embed(q))
            .collect::<Result<Vec<_>>>()?;
        let ridge = self.catalog.predictor_config().ridge;
        let mut max_cost: f64 = 0.0;
        for idx in self.catalog.active_indices() {
            let cand = self.catalog.arm(idx).candidate.clone();
            let mut qual = Vec::with_capacity(queries.len());
            let mut lens = Vec::with_capacity(queries.len());
            for q in queries {
                let t = q.truth(&cand.llm_id)?;
                qual.push(t.quality);
                lens.push(t.response_tokens as f64);
                let cost = t
                    .cost_usd
                    .unwrap_or_else(|| cand.true_cost(q.prompt_tokens, t.response_tokens));
                max_cost = max_cost.max(cost);
            }
            let arm = self.catalog.arm_mut(idx);
            arm.state.quality.fit(&embs, &qual, ridge)?;
            arm.state.length.fit(&embs, &lens, ridge)?;
            for e in &embs {
                arm.state.uncertainty.update(e)?;
            }
        }
        self.cost_scale = match self.config.cost_scale {
            Some(c) => c,
            None if max_cost > 0.0 => max_cost,
            None => 1.0,
        };
        Ok(())
    }

    fn breakdown(&self, idx: usize, prompt_tokens: i64, e: &[f64], wait: f64) -> Result<Breakdown> {
        let arm = self.catalog.arm(idx);
        let p_hat = arm.state.quality.predict(e)?;
        let len_hat = arm.state.length.predict(e)?;
        let cost = estimate_cost(&arm.candidate, prompt_tokens, len_hat).total;
        let c_hat = cost / self.cost_scale;
        let s_trade = trade_score(p_hat, c_hat, self.config.lambda);
        let s_unc = arm.state.uncertainty.score(e)?;
        let s_pen = latency_penalty(wait, &self.config);
        let s = combine(s_trade, s_unc, s_pen, &self.config);
        Ok(Breakdown {
            llm_id: arm.id().to_string(),
            p_hat,
            len_hat,
            cost_usd: cost,
            c_hat,
            wait_s: wait,
            s_trade,
            s_unc,
            s_pen,
            s,
            s_df: None,
            kappa: None,
            s_final: s,
        })
    }

    fn check_waits(&self, waits: &[f64]) -> Result<()> {
        if waits.len() != self.catalog.arms().len() {
            return Err(Error::DimensionMismatch {
                expected: self.catalog.arms().len(),
                got: waits.len(),
            });
        }
        Ok(())
    }

    /// Breakdowns for the active candidates in catalog order. `waits` is
    /// indexed by catalog position.
    pub fn scores(&self, prompt_tokens: i64, e: &[f64], waits: &[f64]) -> Result<Vec<Breakdown>> {
        self.check_waits(waits)?;
        let active = self.catalog.active_indices();
        if active.is_empty() {
            return Err(Error::NoActiveCandidates);
        }
        active
            .into_iter()
            .map(|i| self.breakdown(i, prompt_tokens, e, waits[i]))
            .collect()
    }

    fn decide(&self, q: &Query, breakdown: Vec<Breakdown>, now: f64) -> RoutingDecision {
        let best = argmax(breakdown.iter().map(|b| b.s_final)).expect("non-empty breakdown");
        let chosen = breakdown[best].llm_id.clone();
        RoutingDecision {
            query_id: q.id.clone(),
            chosen_index: self.catalog.index_of(&chosen).expect("chosen id is in catalog"),
            chosen,
            timestamp: now,
            breakdown,
        }
    }

    /// Argmax of `s` over active candidates.
    pub fn select(&self, q: &Query, e: &[f64], waits: &[f64], now: f64) -> Result<RoutingDecision> {
        let b = self.scores(q.prompt_tokens, e, waits)?;
        Ok(self.decide(q, b, now))
    }

    /// Argmax of `s + kappa * s_df`. The feedback scores are recorded in the
    /// variance windows before `kappa` is computed.
    pub fn select_online(
        &mut self,
        q: &Query,
        e: &[f64],
        waits: &[f64],
        now: f64,
    ) -> Result<RoutingDecision> {
        let mut b = self.scores(q.prompt_tokens, e, waits)?;
        let df = self.feedback.df_scores(e, b.len())?;
        for (k, (row, s_df)) in b.iter_mut().zip(df).enumerate() {
            let kappa = self.feedback.confidence(k, self.config.epsilon);
            let bonus = kappa * s_df;
            if bonus.abs() > 10.0 * row.s.abs() && bonus != 0.0 {
                let msg = format!("feedback term {bonus:.4} dominates score {:.4} for `{}`", row.s, row.llm_id);
                if DOMINANCE_WARNED.swap(true, Ordering::Relaxed) {
                    log::debug!("{msg}");
                } else {
                    log::warn!("{msg} (further occurrences at debug level)");
                }
            }
            row.s_df = Some(s_df);
            row.kappa = Some(kappa);
            row.s_final = row.s + bonus;
        }
        Ok(self.decide(q, b, now))
    }

    /// Refined feedback for one candidate: quality and length gradient steps
    /// plus the uncertainty update.
    pub fn refined_update(&mut self, arm: usize, e: &[f64], quality: f64, response_tokens: f64) -> Result<()> {
        let cfg = self.catalog.predictor_config().clone();
        let st = &mut self.catalog.arm_mut(arm).state;
        st.quality.update(e, quality, cfg.eta_quality)?;
        st.length.update(e, response_tokens, cfg.eta_length)?;
        st.uncertainty.update(e)
    }

    /// Binary satisfaction feedback for the candidate at catalog index `arm`.
    pub fn binary_update(&mut self, arm: usize, e: &[f64], satisfied: bool) -> Result<()> {
        let id = self.catalog.arm(arm).id();
        let out = self
            .feedback
            .outputs()
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let r = self.config.reward_scheme.reward(satisfied);
        self.feedback
            .policy_update(e, out, r, self.config.eta3, self.config.gradient_sign)
    }

    pub fn add_candidate(&mut self, c: LlmCandidate) -> Result<()> {
        self.catalog.add_candidate(c)?;
        self.feedback.sync_outputs(&self.catalog.active_ids());
        Ok(())
    }

    pub fn remove_candidate(&mut self, llm_id: &str) -> Result<()> {
        self.catalog.remove_candidate(llm_id)?;
        self.feedback.sync_outputs(&self.catalog.active_ids());
        Ok(())
    }
}
