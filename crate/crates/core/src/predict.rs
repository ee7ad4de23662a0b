//! Per-candidate response quality and length regressors, plus the pricing
//! formula that turns a predicted length into a dollar cost.
//!
//! Two regressor kinds are supported:
//!
//! * `linear-ridge`: `prior + intercept + w·e`. Offline fitting solves the
//!   ridge normal equations in closed form (intercept unpenalized); online
//!   updates are plain gradient steps on `w` under squared error.
//! * `k-nearest-neighbor`: mean target of the `k` closest stored exemplars;
//!   updates append an exemplar.
//!
//! Quality predictions are clamped to `[0, 1]`, length predictions to `>= 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::LlmCandidate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Quality,
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorKind {
    LinearRidge,
    KNearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub quality_kind: RegressorKind,
    pub length_kind: RegressorKind,
    /// Ridge penalty on the weight vector of linear regressors.
    pub ridge: f64,
    pub knn_k: usize,
    pub quality_prior: f64,
    pub length_prior: f64,
    /// Learning rate of online quality updates.
    pub eta_quality: f64,
    /// Learning rate of online length updates.
    pub eta_length: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            quality_kind: RegressorKind::LinearRidge,
            length_kind: RegressorKind::LinearRidge,
            ridge: 1e-2,
            knn_k: 5,
            quality_prior: 0.5,
            length_prior: 256.0,
            eta_quality: 1.0,
            eta_length: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    LinearRidge {
        weights: Vec<f64>,
        intercept: f64,
    },
    KNearestNeighbor {
        k: usize,
        points: Vec<Vec<f64>>,
        targets: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorState {
    pub target: Target,
    pub dim: usize,
    /// Output of a zero-state model; the linear kind predicts relative to it.
    pub prior: f64,
    pub model: Model,
}

impl RegressorState {
    pub fn new(target: Target, kind: RegressorKind, dim: usize, cfg: &PredictorConfig) -> Self {
        let prior = match target {
            Target::Quality => cfg.quality_prior,
            Target::Length => cfg.length_prior,
        };
        let model = match kind {
            RegressorKind::LinearRidge => Model::LinearRidge {
                weights: vec![0.0; dim],
                intercept: 0.0,
            },
            RegressorKind::KNearestNeighbor => Model::KNearestNeighbor {
                k: cfg.knn_k.max(1),
                points: Vec::new(),
                targets: Vec::new(),
            },
        };
        Self {
            target,
            dim,
            prior,
            model,
        }
    }

    pub fn kind(&self) -> RegressorKind {
        match self.model {
            Model::LinearRidge { .. } => RegressorKind::LinearRidge,
            Model::KNearestNeighbor { .. } => RegressorKind::KNearestNeighbor,
        }
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: e.len(),
            });
        }
        Ok(())
    }

    /// Unclamped model output.
    pub fn predict_raw(&self, e: &[f64]) -> Result<f64> {
        self.check_dim(e)?;
        Ok(match &self.model {
            Model::LinearRidge { weights, intercept } => {
                self.prior + intercept + dot(weights, e)
            }
            Model::KNearestNeighbor { k, points, targets } => {
                if points.is_empty() {
                    self.prior
                } else {
                    let mut order: Vec<(f64, usize)> = points
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (sq_dist(p, e), i))
                        .collect();
                    // stable: equal distances keep insertion order
                    order.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let take = (*k).min(order.len());
                    order[..take].iter().map(|&(_, i)| targets[i]).sum::<f64>() / take as f64
                }
            }
        })
    }

    pub fn clamp(&self, raw: f64) -> f64 {
        match self.target {
            Target::Quality => raw.clamp(0.0, 1.0),
            Target::Length => raw.max(0.0),
        }
    }

    pub fn predict(&self, e: &[f64]) -> Result<f64> {
        Ok(self.clamp(self.predict_raw(e)?))
    }

    /// One online step towards `observed`.
    ///
    /// Linear: `w <- w + eta * (observed - raw) * e`, the gradient step of
    /// `0.5 * (observed - raw)^2`. kNN: the exemplar is appended unless
    /// `eta == 0`.
    pub fn update(&mut self, e: &[f64], observed: f64, eta: f64) -> Result<()> {
        self.check_dim(e)?;
        if eta == 0.0 {
            return Ok(());
        }
        let raw = self.predict_raw(e)?;
        match &mut self.model {
            Model::LinearRidge { weights, .. } => {
                let residual = observed - raw;
                if residual != 0.0 {
                    for (w, x) in weights.iter_mut().zip(e) {
                        *w += eta * residual * x;
                    }
                }
            }
            Model::KNearestNeighbor {
                points, targets, ..
            } => {
                points.push(e.to_vec());
                targets.push(observed);
            }
        }
        Ok(())
    }

    /// Batch fit on `(embedding, target)` rows, replacing the current model.
    ///
    /// For the linear kind this is the ridge solution of
    /// `min |Z w' - (y - prior)|^2 + ridge * |w|^2` with `Z = [X | 1]` and
    /// the intercept unpenalized.
    pub fn fit(&mut self, xs: &[Vec<f64>], ys: &[f64], ridge: f64) -> Result<()> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        for x in xs {
            self.check_dim(x)?;
        }
        match &mut self.model {
            Model::LinearRidge { weights, intercept } => {
                if xs.is_empty() {
                    weights.iter_mut().for_each(|w| *w = 0.0);
                    *intercept = 0.0;
                    return Ok(());
                }
                let (w, b) = ridge_solve(xs, ys, self.prior, ridge)?;
                *weights = w;
                *intercept = b;
            }
            Model::KNearestNeighbor {
                points, targets, ..
            } => {
                *points = xs.to_vec();
                *targets = ys.to_vec();
            }
        }
        Ok(())
    }
}

fn ridge_solve(xs: &[Vec<f64>], ys: &[f64], offset: f64, ridge: f64) -> Result<(Vec<f64>, f64)> {
    let d = xs[0].len();
    let n = xs.len();
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j < d { xs[i][j] } else { 1.0 });
    let y = DVector::from_iterator(n, ys.iter().map(|v| v - offset));
    let mut gram = z.transpose() * &z;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let rhs = z.transpose() * y;
    let sol = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidConfig("singular ridge system".into()))?,
    };
    Ok((sol.rows(0, d).iter().copied().collect(), sol[d]))
}

pub fn predict_quality(state: &RegressorState, e: &[f64]) -> Result<f64> {
    debug_assert_eq!(state.target, Target::Quality);
    state.predict(e)
}

pub fn predict_length(state: &RegressorState, e: &[f64]) -> Result<f64> {
    debug_assert_eq!(state.target, Target::Length);
    state.predict(e)
}

pub fn update_quality(state: &mut RegressorState, e: &[f64], observed: f64, eta: f64) -> Result<()> {
    debug_assert_eq!(state.target, Target::Quality);
    state.update(e, observed, eta)
}

pub fn update_length(state: &mut RegressorState, e: &[f64], observed: f64, eta: f64) -> Result<()> {
    debug_assert_eq!(state.target, Target::Length);
    state.update(e, observed, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub input_cost: f64,
    pub output_cost: f64,
    pub total: f64,
}

/// Input cost is known from the prompt; output cost comes from the predicted
/// response length. Prices are per 1000 tokens.
pub fn estimate_cost(c: &LlmCandidate, prompt_tokens: i64, predicted_len: f64) -> CostEstimate {
    let input_cost = prompt_tokens.max(0) as f64 * c.prompt_price_per_1k / 1000.0;
    let output_cost = predicted_len.max(0.0) * c.response_price_per_1k / 1000.0;
    CostEstimate {
        input_cost,
        output_cost,
        total: input_cost + output_cost,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
