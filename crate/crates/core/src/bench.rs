//! Experiment harness: lambda sweeps, oracle and random baselines, single
//! candidate points, continual-training comparisons and top-k policies.
//!
//! All curves of one report share the test stream, seed and latency config.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Query;
use crate::data::{split, Dataset, SplitKind, SplitSpec};
use crate::error::{Error, Result};
use crate::router::Router;
use crate::sim::{run_stream, FeedbackMode, Policy, SimConfig, SimResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub label: String,
    pub lambda: Option<f64>,
    pub total_quality: f64,
    pub total_cost: f64,
    pub timeout_count: usize,
    pub quality_vs_reference: Option<f64>,
    pub cost_vs_reference: Option<f64>,
}

impl CurvePoint {
    pub fn from_result(label: impl Into<String>, lambda: Option<f64>, r: &SimResult) -> Self {
        Self {
            label: label.into(),
            lambda,
            total_quality: r.total_quality,
            total_cost: r.total_cost,
            timeout_count: r.timeouts,
            quality_vs_reference: None,
            cost_vs_reference: None,
        }
    }

    pub fn relative_to(mut self, reference: &CurvePoint) -> Self {
        self.quality_vs_reference = Some(ratio(self.total_quality, reference.total_quality));
        self.cost_vs_reference = Some(ratio(self.total_cost, reference.total_cost));
        self
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// One CSV line: `lambda,total_quality,total_cost,timeouts,quality_frac,cost_frac`.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    lambda: Option<f64>,
    total_quality: f64,
    total_cost: f64,
    timeouts: usize,
    quality_frac: Option<f64>,
    cost_frac: Option<f64>,
}

pub fn write_curve_csv(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(CsvRow {
            lambda: p.lambda,
            total_quality: p.total_quality,
            total_cost: p.total_cost,
            timeouts: p.timeout_count,
            quality_frac: p.quality_vs_reference,
            cost_frac: p.cost_vs_reference,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row?;
            Ok(CurvePoint {
                label: row
                    .lambda
                    .map_or_else(|| format!("row{i}"), |l| format!("lambda={l}")),
                lambda: row.lambda,
                total_quality: row.total_quality,
                total_cost: row.total_cost,
                timeout_count: row.timeouts,
                quality_vs_reference: row.quality_frac,
                cost_vs_reference: row.cost_frac,
            })
        })
        .collect()
}

/// `count` log-spaced values in `[1e-6, 1e6]`.
pub fn lambda_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..count)
            .map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(25)
}

/// A frozen router evaluated on the test stream with the given policy.
pub fn evaluate(router: &Router, test: &[Query], sim: &SimConfig, policy: Policy) -> Result<SimResult> {
    let mut r = router.clone();
    run_stream(test, &mut r, sim, policy, FeedbackMode::None)
}

/// One full stream per lambda, in parallel; output order follows `lambdas`.
pub fn sweep_lambda(router: &Router, test: &[Query], sim: &SimConfig, lambdas: &[f64]) -> Result<Vec<CurvePoint>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let mut r = router.clone();
            r.set_lambda(l);
            let res = run_stream(test, &mut r, sim, Policy::Router, FeedbackMode::None)?;
            Ok(CurvePoint::from_result(format!("lambda={l}"), Some(l), &res))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub point: CurvePoint,
    /// Catalog index chosen for every query.
    pub choices: Vec<usize>,
}

/// Per query: the cheapest candidate reaching `threshold`; when none does,
/// the best quality (ties to the cheaper, then catalog order). No latency.
pub fn oracle_curve(test: &[Query], threshold: f64, router: &Router) -> Result<OracleOutcome> {
    let active = router.catalog.active_indices();
    if active.is_empty() {
        return Err(Error::NoActiveCandidates);
    }
    let mut quality = 0.0;
    let mut cost = 0.0;
    let mut choices = Vec::with_capacity(test.len());
    for q in test {
        let mut opts = Vec::with_capacity(active.len());
        for &i in &active {
            let c = &router.catalog.arm(i).candidate;
            let t = q.truth(&c.llm_id)?;
            let usd = t
                .cost_usd
                .unwrap_or_else(|| c.true_cost(q.prompt_tokens, t.response_tokens));
            opts.push((i, t.quality, usd));
        }
        let qualifying = opts.iter().filter(|o| o.1 >= threshold);
        let cheapest = qualifying.fold(None::<&(usize, f64, f64)>, |best, o| match best {
            Some(b) if b.2 <= o.2 => Some(b),
            _ => Some(o),
        });
        let pick = match cheapest {
            Some(p) => *p,
            None => *opts
                .iter()
                .fold(None::<&(usize, f64, f64)>, |best, o| match best {
                    Some(b) if b.1 > o.1 || (b.1 == o.1 && b.2 <= o.2) => Some(b),
                    _ => Some(o),
                })
                .expect("at least one option"),
        };
        quality += pick.1;
        cost += pick.2;
        choices.push(pick.0);
    }
    Ok(OracleOutcome {
        point: CurvePoint {
            label: "oracle".into(),
            lambda: None,
            total_quality: quality,
            total_cost: cost,
            timeout_count: 0,
            quality_vs_reference: None,
            cost_vs_reference: None,
        },
        choices,
    })
}

pub fn random_baseline(router: &Router, test: &[Query], sim: &SimConfig, seed: u64) -> Result<(CurvePoint, SimResult)> {
    let res = evaluate(router, test, sim, Policy::Random { seed })?;
    Ok((CurvePoint::from_result("random", None, &res), res))
}

/// Every active candidate answering the whole stream alone.
pub fn single_llm_points(router: &Router, test: &[Query], sim: &SimConfig) -> Result<Vec<CurvePoint>> {
    router
        .catalog
        .active_indices()
        .into_par_iter()
        .map(|i| {
            let res = evaluate(router, test, sim, Policy::Fixed(i))?;
            Ok(CurvePoint::from_result(router.catalog.arm(i).id(), None, &res))
        })
        .collect()
}

/// The costliest single-candidate point.
pub fn default_reference(singles: &[CurvePoint]) -> Option<&CurvePoint> {
    singles
        .iter()
        .fold(None, |best: Option<&CurvePoint>, p| match best {
            Some(b) if b.total_cost >= p.total_cost => Some(b),
            _ => Some(p),
        })
}

pub fn topk_policy(router: &Router, test: &[Query], sim: &SimConfig, k: usize) -> Result<(CurvePoint, SimResult)> {
    let active = router.catalog.active_count();
    if k == 0 || k > active {
        return Err(Error::KTooLarge { k, active });
    }
    let res = evaluate(router, test, sim, Policy::TopK(k))?;
    Ok((
        CurvePoint::from_result(format!("top{k}"), Some(router.config.lambda), &res),
        res,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub reference: CurvePoint,
    pub points: Vec<CurvePoint>,
    /// Index into `points` of the highest quality fraction among points
    /// costing less than the reference.
    pub best: Option<usize>,
}

pub fn report(points: &[CurvePoint], singles: &[CurvePoint], reference_llm_id: &str) -> Result<Report> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let reference = singles
        .iter()
        .find(|p| p.label == reference_llm_id)
        .ok_or_else(|| Error::UnknownReference(reference_llm_id.to_string()))?
        .clone();
    let points: Vec<CurvePoint> = points
        .iter()
        .cloned()
        .map(|p| p.relative_to(&reference))
        .collect();
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let (Some(qf), Some(cf)) = (p.quality_vs_reference, p.cost_vs_reference) else {
            continue;
        };
        if cf >= 1.0 {
            continue;
        }
        if best.map_or(true, |b| qf > points[b].quality_vs_reference.unwrap_or(f64::MIN)) {
            best = Some(i);
        }
    }
    Ok(Report {
        reference,
        points,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    pub split_kind: SplitKind,
    /// Share of the dataset used for offline + online training.
    pub train_fraction: f64,
    /// Relative tolerance when matching a cell's cost to the no-online cell.
    pub cost_tolerance: f64,
    pub seed: u64,
    /// Intervals of the `log10(lambda)` grid scanned when matching cost.
    pub grid_steps: usize,
    /// Bisection steps inside each bracketing grid interval.
    pub max_bisection: usize,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            split_kind: SplitKind::Sequential,
            train_fraction: 0.8,
            cost_tolerance: 0.02,
            seed: 42,
            grid_steps: 120,
            max_bisection: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualCell {
    /// Sum of qualities over the number of test queries.
    pub quality: f64,
    pub total_cost: f64,
    pub lambda: f64,
    pub cost_matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualRow {
    pub offline: f64,
    pub online: f64,
    pub without_online: ContinualCell,
    pub refined: ContinualCell,
    pub binary: ContinualCell,
}

impl ContinualRow {
    /// Relative improvement in percent.
    pub fn refined_improvement(&self) -> f64 {
        100.0 * (self.refined.quality / self.without_online.quality - 1.0)
    }

    pub fn binary_improvement(&self) -> f64 {
        100.0 * (self.binary.quality / self.without_online.quality - 1.0)
    }
}

fn cell_at(router: &Router, test: &[Query], sim: &SimConfig, policy: Policy, lambda: f64) -> Result<ContinualCell> {
    let mut r = router.clone();
    r.set_lambda(lambda);
    let res = run_stream(test, &mut r, sim, policy, FeedbackMode::None)?;
    Ok(ContinualCell {
        quality: res.mean_quality(),
        total_cost: res.total_cost,
        lambda,
        cost_matched: true,
    })
}

/// Finds a lambda whose test cost lies within `tol` of `target`. Cost is a
/// step function of lambda and need not be monotone once feedback terms are
/// active, so a log grid over `[1e-6, 1e6]` is scanned first and every
/// bracketing interval is then bisected. Keeps the closest cost seen; ties
/// go to the lambda nearest the router's own.
fn matched_cell(
    router: &Router,
    test: &[Query],
    sim: &SimConfig,
    policy: Policy,
    target: f64,
    cfg: &ContinualConfig,
) -> Result<ContinualCell> {
    let gap = |c: &ContinualCell| (c.total_cost - target).abs();
    let within = |c: &ContinualCell| gap(c) <= cfg.cost_tolerance * target.abs();
    let home = router.config.lambda.log10();
    let mut best = cell_at(router, test, sim, policy, router.config.lambda)?;
    if within(&best) {
        return Ok(best);
    }
    let consider = |cell: ContinualCell, best: &mut ContinualCell| {
        let closer = gap(&cell) < gap(best)
            || (gap(&cell) == gap(best) && (cell.lambda.log10() - home).abs() < (best.lambda.log10() - home).abs());
        if closer {
            *best = cell;
        }
    };
    let exps: Vec<f64> = (0..=cfg.grid_steps)
        .map(|i| -6.0 + 12.0 * i as f64 / cfg.grid_steps.max(1) as f64)
        .collect();
    let grid = exps
        .iter()
        .map(|&x| cell_at(router, test, sim, policy, 10f64.powf(x)))
        .collect::<Result<Vec<_>>>()?;
    for c in &grid {
        consider(c.clone(), &mut best);
    }
    for (w, pair) in exps.windows(2).zip(grid.windows(2)) {
        if within(&best) {
            break;
        }
        let (lo_c, hi_c) = (pair[0].total_cost - target, pair[1].total_cost - target);
        if lo_c.signum() == hi_c.signum() {
            continue;
        }
        let (mut lo, mut hi) = (w[0], w[1]);
        let rising = lo_c < 0.0;
        for _ in 0..cfg.max_bisection {
            let mid = 0.5 * (lo + hi);
            let cell = cell_at(router, test, sim, policy, 10f64.powf(mid))?;
            let below = cell.total_cost < target;
            consider(cell, &mut best);
            if within(&best) {
                break;
            }
            if below == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    best.cost_matched = within(&best);
    Ok(best)
}

/// Offline training on the first part of the training split, then one pass
/// over the online part with no feedback, refined feedback or binary
/// feedback; each variant is scored on the held-out test part at matched cost.
pub fn continual_experiment(
    ds: &Dataset,
    base: &Router,
    ratios: &[(f64, f64)],
    sim: &SimConfig,
    cfg: &ContinualConfig,
) -> Result<Vec<ContinualRow>> {
    ratios
        .par_iter()
        .map(|&(off, on)| {
            let parts = split(
                ds,
                &SplitSpec {
                    kind: cfg.split_kind,
                    train_fraction: cfg.train_fraction,
                    offline_online_ratio: Some((off, on)),
                    seed: cfg.seed,
                },
            )?;
            let online = parts.online.expect("ratio given");
            let mut trained = base.clone();
            trained.train_offline(&parts.train.queries)?;
            let test = &parts.test.queries;

            let without_online = cell_at(&trained, test, sim, Policy::Router, trained.config.lambda)?;
            let target = without_online.total_cost;

            let mut refined = trained.clone();
            run_stream(&online.queries, &mut refined, sim, Policy::Router, FeedbackMode::Refined)?;
            let refined = matched_cell(&refined, test, sim, Policy::Router, target, cfg)?;

            let mut binary = trained.clone();
            run_stream(&online.queries, &mut binary, sim, Policy::RouterOnline, FeedbackMode::Binary)?;
            let binary = matched_cell(&binary, test, sim, Policy::RouterOnline, target, cfg)?;

            Ok(ContinualRow {
                offline: off,
                online: on,
                without_online,
                refined,
                binary,
            })
        })
        .collect()
}
