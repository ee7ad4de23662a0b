//! Tag-enhanced routing embeddings.
//!
//! A linear projection head over frozen base embeddings is trained jointly
//! with one center per domain. The objective is the sum of
//!
//! * an intra-domain term: mean softmax cross-entropy of each embedding
//!   against its own domain center, with logits `e_i · mu_j`;
//! * an inter-domain term: mean over centers of
//!   `log sum_{k != j} exp(mu_j · mu_k)`.
//!
//! Projected embeddings and centers are L2-normalized before any dot product,
//! so every logit lies in `[-1, 1]`.
//!
//! Serialized form (JSON): `{"d_base", "d_route", "weight", "centers"}` with
//! `weight` row-major `d_route x d_base` and `centers` a list of `d_route`
//! vectors (stored unnormalized).

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::dot;

/// Above this many rows training switches from full-batch to mini-batch.
pub const FULL_BATCH_LIMIT: usize = 10_000;

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub d_base: usize,
    pub d_route: usize,
    /// Row-major `d_route x d_base`.
    pub weight: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

impl ProjectionModel {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            d_base: dim,
            d_route: dim,
            weight,
            centers: Vec::new(),
        }
    }

    pub fn from_weight(d_route: usize, d_base: usize, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != d_route * d_base {
            return Err(Error::DimensionMismatch {
                expected: d_route * d_base,
                got: weight.len(),
            });
        }
        Ok(Self {
            d_base,
            d_route,
            weight,
            centers: Vec::new(),
        })
    }

    pub fn domains(&self) -> usize {
        self.centers.len()
    }

    fn linear(&self, base: &[f64]) -> Vec<f64> {
        self.weight
            .chunks(self.d_base)
            .map(|row| dot(row, base))
            .collect()
    }

    /// `normalize(W · base)`.
    pub fn project(&self, base: &[f64]) -> Result<Vec<f64>> {
        if base.len() != self.d_base {
            return Err(Error::DimensionMismatch {
                expected: self.d_base,
                got: base.len(),
            });
        }
        normalize(&self.linear(base))
    }

    pub fn unit_centers(&self) -> Result<Vec<Vec<f64>>> {
        self.centers.iter().map(|c| normalize(c)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.weight.len() != m.d_route * m.d_base || m.centers.iter().any(|c| c.len() != m.d_route) {
            return Err(Error::InvalidConfig("projection file has inconsistent dimensions".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// `project` as a free function.
pub fn project(model: &ProjectionModel, base: &[f64]) -> Result<Vec<f64>> {
    model.project(base)
}

fn check_batch(embeddings: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if centers.is_empty() {
        return Err(Error::TooFewDomains(0));
    }
    if labels.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            got: labels.len(),
        });
    }
    let dim = centers[0].len();
    for v in embeddings.iter().chain(centers) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= centers.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: centers.len(),
        });
    }
    Ok(())
}

/// Mean cross-entropy of each embedding against its own center.
pub fn intra_loss(embeddings: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> Result<f64> {
    Ok(intra_loss_grad(embeddings, labels, centers)?.0)
}

/// Loss plus gradients with respect to each embedding and each center.
#[allow(clippy::type_complexity)]
pub fn intra_loss_grad(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    centers: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_batch(embeddings, labels, centers)?;
    let n = embeddings.len() as f64;
    let dim = centers[0].len();
    let mut loss = 0.0;
    let mut g_emb = vec![vec![0.0; dim]; embeddings.len()];
    let mut g_cen = vec![vec![0.0; dim]; centers.len()];
    for (i, (e, &y)) in embeddings.iter().zip(labels).enumerate() {
        let logits: Vec<f64> = centers.iter().map(|c| dot(e, c)).collect();
        let lse = log_sum_exp(logits.iter().copied());
        loss += lse - logits[y];
        for (j, (c, z)) in centers.iter().zip(&logits).enumerate() {
            let coef = ((z - lse).exp() - if j == y { 1.0 } else { 0.0 }) / n;
            for k in 0..dim {
                g_emb[i][k] += coef * c[k];
                g_cen[j][k] += coef * e[k];
            }
        }
    }
    Ok(((loss / n).max(0.0), g_emb, g_cen))
}

/// Mean over centers of `log sum_{k != j} exp(mu_j · mu_k)`.
pub fn inter_loss(centers: &[Vec<f64>]) -> Result<f64> {
    Ok(inter_loss_grad(centers)?.0)
}

pub fn inter_loss_grad(centers: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = centers.len();
    if d < 2 {
        return Err(Error::TooFewDomains(d));
    }
    let dim = centers[0].len();
    if let Some(c) = centers.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: c.len(),
        });
    }
    let sims: Vec<Vec<f64>> = centers
        .iter()
        .map(|a| centers.iter().map(|b| dot(a, b)).collect())
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; dim]; d];
    for j in 0..d {
        let others = (0..d).filter(|&k| k != j).map(|k| sims[j][k]);
        let lse = log_sum_exp(others);
        loss += lse;
        for k in (0..d).filter(|&k| k != j) {
            // d(mu_j · mu_k) touches both ends of the pair
            let w = (sims[j][k] - lse).exp() / d as f64;
            for t in 0..dim {
                grad[j][t] += w * centers[k][t];
                grad[k][t] += w * centers[j][t];
            }
        }
    }
    Ok((loss / d as f64, grad))
}

pub fn total_loss(embeddings: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> Result<f64> {
    Ok(intra_loss(embeddings, labels, centers)? + inter_loss(centers)?)
}

/// Backprop through `u = v / |v|`.
fn normalize_backward(v: &[f64], g: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    let gu: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n;
    g.iter().zip(v).map(|(gi, vi)| (gi - gu * vi / n) / n).collect()
}

/// Gradients of [`objective`] with respect to the raw parameters.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub loss: f64,
    pub intra: f64,
    pub inter: f64,
    /// Row-major, same layout as `ProjectionModel::weight`.
    pub weight: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

/// Training objective over raw parameters: `total_loss` of the normalized
/// projections against the normalized centers.
pub fn objective(model: &ProjectionModel, bases: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(objective_grad(model, bases, labels)?.loss)
}

pub fn objective_grad(
    model: &ProjectionModel,
    bases: &[Vec<f64>],
    labels: &[usize],
) -> Result<ObjectiveGrad> {
    if bases.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = bases.len();
    let x = DMatrix::from_fn(n, model.d_base, |i, j| bases[i][j]);
    let w = DMatrix::from_row_slice(model.d_route, model.d_base, &model.weight);
    let v = &x * w.transpose();
    let raw: Vec<Vec<f64>> = (0..n).map(|i| v.row(i).iter().copied().collect()).collect();
    let emb = raw.iter().map(|r| normalize(r)).collect::<Result<Vec<_>>>()?;
    let cen = model.unit_centers()?;

    let (intra, g_emb, g_cen_intra) = intra_loss_grad(&emb, labels, &cen)?;
    let (inter, g_cen_inter) = inter_loss_grad(&cen)?;

    let mut g_raw = DMatrix::<f64>::zeros(n, model.d_route);
    for i in 0..n {
        let g = normalize_backward(&raw[i], &g_emb[i]);
        for (j, gj) in g.into_iter().enumerate() {
            g_raw[(i, j)] = gj;
        }
    }
    let g_w = g_raw.transpose() * &x;
    let mut weight = vec![0.0; model.d_route * model.d_base];
    for r in 0..model.d_route {
        for c in 0..model.d_base {
            weight[r * model.d_base + c] = g_w[(r, c)];
        }
    }
    let centers = model
        .centers
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let g: Vec<f64> = g_cen_intra[j]
                .iter()
                .zip(&g_cen_inter[j])
                .map(|(a, b)| a + b)
                .collect();
            normalize_backward(c, &g)
        })
        .collect();
    Ok(ObjectiveGrad {
        loss: intra + inter,
        intra,
        inter,
        weight,
        centers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub d_route: Option<usize>,
    /// Std-dev of the Gaussian noise added to the identity initialization.
    pub init_noise: f64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.5,
            batch_size: 256,
            seed: 42,
            d_route: None,
            init_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_intra: f64,
    pub final_intra: f64,
    /// Full-dataset objective at the end of every epoch.
    pub epoch_losses: Vec<f64>,
}

fn init_model(
    bases: &[Vec<f64>],
    labels: &[usize],
    domains: usize,
    d_route: usize,
    cfg: &EmbedTrainConfig,
) -> Result<ProjectionModel> {
    let d_base = bases[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.init_noise.max(0.0)).expect("valid std-dev");
    let mut weight = vec![0.0; d_route * d_base];
    for r in 0..d_route {
        for c in 0..d_base {
            let eye = if r == c { 1.0 } else { 0.0 };
            weight[r * d_base + c] = eye + noise.sample(&mut rng);
        }
    }
    let mut model = ProjectionModel::from_weight(d_route, d_base, weight)?;
    let mut sums = vec![vec![0.0; d_route]; domains];
    for (b, &l) in bases.iter().zip(labels) {
        let e = model.project(b)?;
        for (s, v) in sums[l].iter_mut().zip(&e) {
            *s += v;
        }
    }
    let unit = Normal::new(0.0, 1.0).expect("valid std-dev");
    model.centers = sums
        .into_iter()
        .map(|s| {
            if dot(&s, &s) > 0.0 {
                s
            } else {
                (0..d_route).map(|_| unit.sample(&mut rng)).collect()
            }
        })
        .collect();
    Ok(model)
}

/// Gradient descent on weight and centers. Returns the lowest-objective model
/// seen at epoch boundaries (the initial model included).
pub fn train_projection(
    dataset: &[(Vec<f64>, usize)],
    cfg: &EmbedTrainConfig,
) -> Result<(ProjectionModel, EmbedTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("learning_rate and batch_size must be positive".into()));
    }
    let bases: Vec<Vec<f64>> = dataset.iter().map(|(b, _)| b.clone()).collect();
    let labels: Vec<usize> = dataset.iter().map(|(_, l)| *l).collect();
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooFewDomains(distinct.len()));
    }
    let domains = distinct.last().copied().unwrap_or(0) + 1;
    let d_route = cfg.d_route.unwrap_or(bases[0].len());

    let mut model = init_model(&bases, &labels, domains, d_route, cfg)?;
    let initial = objective_grad(&model, &bases, &labels)?;
    let mut best = (initial.loss, model.clone());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..bases.len()).collect();

    for _ in 0..cfg.epochs {
        if bases.len() <= FULL_BATCH_LIMIT {
            let g = objective_grad(&model, &bases, &labels)?;
            step(&mut model, &g, cfg.learning_rate);
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let xb: Vec<Vec<f64>> = chunk.iter().map(|&i| bases[i].clone()).collect();
                let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let g = objective_grad(&model, &xb, &lb)?;
                step(&mut model, &g, cfg.learning_rate);
            }
        }
        let loss = objective(&model, &bases, &labels)?;
        epoch_losses.push(loss);
        if loss <= best.0 {
            best = (loss, model.clone());
        }
    }

    let model = best.1;
    let fin = objective_grad(&model, &bases, &labels)?;
    Ok((
        model,
        EmbedTrainReport {
            initial_loss: initial.loss,
            final_loss: fin.loss,
            initial_intra: initial.intra,
            final_intra: fin.intra,
            epoch_losses,
        },
    ))
}

fn step(model: &mut ProjectionModel, g: &ObjectiveGrad, lr: f64) {
    for (w, gw) in model.weight.iter_mut().zip(&g.weight) {
        *w -= lr * gw;
    }
    for (c, gc) in model.centers.iter_mut().zip(&g.centers) {
        for (x, gx) in c.iter_mut().zip(gc) {
            *x -= lr * gx;
        }
    }
}
