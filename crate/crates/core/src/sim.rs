//! Discrete-event simulation of a query stream.
//!
//! * Arrivals are evenly spaced, `arrival_rate` per `window` seconds, with
//!   optional seeded jitter.
//! * Every candidate is a single FIFO server; a query occupies it for
//!   `init_latency + response_tokens / tokens_per_s`.
//! * The router sees waiting times as of the last tick (every `tick`
//!   seconds); online feedback for responses completed by a tick is applied
//!   at that tick.
//! * A query's wait is queueing delay plus its own service time. Waits above
//!   `tau` zero the quality; the cost is still charged unless
//!   `charge_timeouts` is off.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{LlmCandidate, Query};
use crate::error::{Error, Result};
use crate::router::{Router, RoutingDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Queries per window.
    pub arrival_rate: f64,
    pub window: f64,
    pub tau: f64,
    pub tick: f64,
    pub seed: u64,
    /// Arrival jitter as a fraction of the inter-arrival spacing, in `[0, 1)`.
    pub jitter: f64,
    /// When off, queues never build up and nothing times out.
    pub latency: bool,
    pub charge_timeouts: bool,
    /// Binary feedback: satisfied iff quality > this ...
    pub satisfied_quality: f64,
    /// ... and wait < this.
    pub satisfied_wait: f64,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 100.0,
            window: 10.0,
            tau: 30.0,
            tick: 10.0,
            seed: 42,
            jitter: 0.0,
            latency: true,
            charge_timeouts: true,
            satisfied_quality: 0.7,
            satisfied_wait: 15.0,
            record_events: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.arrival_rate > 0.0
            && self.window > 0.0
            && self.tau > 0.0
            && self.tick > 0.0
            && (0.0..1.0).contains(&self.jitter);
        if !ok {
            return Err(Error::InvalidConfig(
                "arrival_rate, window, tau and tick must be positive; jitter in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn satisfied(&self, realized_quality: f64, wait: f64) -> bool {
        realized_quality > self.satisfied_quality && wait < self.satisfied_wait
    }
}

pub fn service_time(c: &LlmCandidate, response_tokens: i64) -> f64 {
    c.init_latency_s + response_tokens.max(0) as f64 / c.tokens_per_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingJob {
    pub query_id: String,
    pub service: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub busy_until: Vec<f64>,
    pub pending: Vec<VecDeque<PendingJob>>,
}

impl QueueState {
    pub fn new(candidates: usize) -> Self {
        Self {
            busy_until: vec![0.0; candidates],
            pending: vec![VecDeque::new(); candidates],
        }
    }

    /// Enqueues a job that arrives at `now`; returns its completion time.
    pub fn enqueue(&mut self, candidate: usize, query_id: &str, now: f64, service: f64) -> f64 {
        let start = self.busy_until[candidate].max(now);
        let completion = start + service;
        self.busy_until[candidate] = completion;
        self.pending[candidate].push_back(PendingJob {
            query_id: query_id.to_string(),
            service,
            completion,
        });
        completion
    }

    /// Pops jobs finished by `now`, in completion order per candidate.
    pub fn drain_completed(&mut self, now: f64) -> Vec<(usize, PendingJob)> {
        let mut done = Vec::new();
        for (c, q) in self.pending.iter_mut().enumerate() {
            while q.front().is_some_and(|j| j.completion <= now) {
                done.push((c, q.pop_front().expect("front exists")));
            }
        }
        done
    }

    pub fn snapshot(&self, now: f64) -> Vec<f64> {
        (0..self.busy_until.len())
            .map(|c| waiting_time(self, c, now))
            .collect()
    }
}

/// Backlog a new arrival at `now` would queue behind.
pub fn waiting_time(queue: &QueueState, candidate: usize, now: f64) -> f64 {
    (queue.busy_until[candidate] - now).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    None,
    Refined,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Argmax of the offline score `s`.
    Router,
    /// Argmax of `s + kappa * s_df`.
    RouterOnline,
    /// The `k` highest offline scores; quality is the best of the answers.
    TopK(usize),
    /// Every query to one catalog index.
    Fixed(usize),
    /// Uniform over active candidates.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub chosen: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub also: Vec<String>,
    pub arrival_s: f64,
    pub quality: f64,
    pub cost_usd: f64,
    pub wait_s: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Tick,
    Arrival,
    Dispatch,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub time: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub query_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub llm_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub queries: usize,
    pub total_quality: f64,
    pub total_cost: f64,
    pub timeouts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<QueryRecord>,
    pub total_quality: f64,
    pub total_cost: f64,
    pub timeouts: usize,
    #[serde(skip)]
    pub decisions: Vec<RoutingDecision>,
    #[serde(skip)]
    pub events: Vec<StreamEvent>,
}

impl SimResult {
    pub fn summary(&self) -> SimSummary {
        SimSummary {
            queries: self.records.len(),
            total_quality: self.total_quality,
            total_cost: self.total_cost,
            timeouts: self.timeouts,
        }
    }

    pub fn mean_quality(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.total_quality / self.records.len() as f64
        }
    }
}

/// One observed outcome, ready to be fed back into the router.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackItem {
    pub arm: usize,
    pub embedding: Vec<f64>,
    /// Ground-truth response quality.
    pub quality: f64,
    /// Quality the user experienced (0 after a timeout).
    pub realized_quality: f64,
    pub response_tokens: i64,
    pub wait_s: f64,
}

/// Applies feedback in order: refined mode runs the predictor and
/// uncertainty updates for the answering candidate, binary mode turns each
/// outcome into a satisfaction bit for the policy-gradient step.
pub fn apply_feedback_loop(
    router: &mut Router,
    items: &[FeedbackItem],
    mode: FeedbackMode,
    cfg: &SimConfig,
) -> Result<()> {
    for it in items {
        match mode {
            FeedbackMode::None => {}
            FeedbackMode::Refined => router.refined_update(
                it.arm,
                &it.embedding,
                it.quality,
                it.response_tokens as f64,
            )?,
            FeedbackMode::Binary => router.binary_update(
                it.arm,
                &it.embedding,
                cfg.satisfied(it.realized_quality, it.wait_s),
            )?,
        }
    }
    Ok(())
}

struct Outstanding {
    completion: f64,
    seq: usize,
    item: FeedbackItem,
}

/// Runs the stream through `router` with the given dispatch policy.
pub fn run_stream(
    queries: &[Query],
    router: &mut Router,
    cfg: &SimConfig,
    policy: Policy,
    feedback: FeedbackMode,
) -> Result<SimResult> {
    cfg.validate()?;
    let active = router.catalog.active_indices();
    if active.is_empty() {
        return Err(Error::NoActiveCandidates);
    }
    match policy {
        Policy::TopK(k) if k == 0 || k > active.len() => {
            return Err(Error::KTooLarge {
                k,
                active: active.len(),
            })
        }
        Policy::Fixed(i) if i >= router.catalog.arms().len() => {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: router.catalog.arms().len(),
            })
        }
        _ => {}
    }
    let fixed_check: Vec<usize> = match policy {
        Policy::Fixed(i) => vec![i],
        _ => active.clone(),
    };
    for q in queries {
        for &i in &fixed_check {
            q.truth(router.catalog.arm(i).id())?;
        }
    }
    let embeddings = queries
        .iter()
        .map(|q| router.embed(q))
        .collect::<Result<Vec<_>>>()?;

    let n_arms = router.catalog.arms().len();
    let mut queue = QueueState::new(n_arms);
    let mut snapshot = vec![0.0; n_arms];
    let mut next_tick = cfg.tick;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy_rng = match policy {
        Policy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let spacing = cfg.window / cfg.arrival_rate;
    let mut outstanding: Vec<Outstanding> = Vec::new();
    let mut result = SimResult::default();
    let learn = matches!(policy, Policy::Router | Policy::RouterOnline) && feedback != FeedbackMode::None;

    let mut events = Vec::new();
    let mut log_event = |time: f64, kind: EventKind, query_id: Option<&str>, llm_id: Option<&str>| {
        if cfg.record_events {
            events.push(StreamEvent {
                time,
                kind,
                query_id: query_id.map(str::to_string),
                llm_id: llm_id.map(str::to_string),
            });
        }
    };

    let flush = |router: &mut Router, outstanding: &mut Vec<Outstanding>, upto: f64| -> Result<()> {
        outstanding.sort_by(|a, b| a.completion.total_cmp(&b.completion).then(a.seq.cmp(&b.seq)));
        let split = outstanding.partition_point(|o| o.completion <= upto);
        let ready: Vec<FeedbackItem> = outstanding.drain(..split).map(|o| o.item).collect();
        apply_feedback_loop(router, &ready, feedback, cfg)
    };

    for (n, (q, e)) in queries.iter().zip(&embeddings).enumerate() {
        let mut now = n as f64 * spacing;
        if cfg.jitter > 0.0 {
            now += rng.random::<f64>() * cfg.jitter * spacing;
        }
        while next_tick <= now {
            if learn {
                flush(router, &mut outstanding, next_tick)?;
            }
            if cfg.latency {
                snapshot = queue.snapshot(next_tick);
            }
            for (c, job) in queue.drain_completed(next_tick) {
                log_event(
                    job.completion,
                    EventKind::Completion,
                    Some(&job.query_id),
                    Some(router.catalog.arm(c).id()),
                );
            }
            log_event(next_tick, EventKind::Tick, None, None);
            next_tick += cfg.tick;
        }
        log_event(now, EventKind::Arrival, Some(&q.id), None);

        let chosen: Vec<usize> = match policy {
            Policy::Router | Policy::RouterOnline => {
                let d = if policy == Policy::RouterOnline {
                    router.select_online(q, e, &snapshot, now)?
                } else {
                    router.select(q, e, &snapshot, now)?
                };
                let i = d.chosen_index;
                result.decisions.push(d);
                vec![i]
            }
            Policy::TopK(k) => {
                let b = router.scores(q.prompt_tokens, e, &snapshot)?;
                let mut order: Vec<usize> = (0..b.len()).collect();
                // stable sort keeps catalog order among ties
                order.sort_by(|&x, &y| b[y].s_final.total_cmp(&b[x].s_final));
                order[..k].iter().map(|&j| active[j]).collect()
            }
            Policy::Fixed(i) => vec![i],
            Policy::Random { .. } => {
                let r = policy_rng.as_mut().expect("random policy has an rng");
                vec![active[r.random_range(0..active.len())]]
            }
        };

        let mut best_quality = 0.0f64;
        let mut cost = 0.0;
        let mut min_wait = f64::INFINITY;
        let mut all_timed_out = true;
        for &i in &chosen {
            let cand = &router.catalog.arm(i).candidate;
            let truth = q.truth(&cand.llm_id)?;
            let service = service_time(cand, truth.response_tokens);
            let wait = if cfg.latency {
                queue.enqueue(i, &q.id, now, service) - now
            } else {
                service
            };
            log_event(now, EventKind::Dispatch, Some(&q.id), Some(&cand.llm_id));
            let timed_out = cfg.latency && wait > cfg.tau;
            let realized = if timed_out { 0.0 } else { truth.quality };
            let true_cost = truth
                .cost_usd
                .unwrap_or_else(|| cand.true_cost(q.prompt_tokens, truth.response_tokens));
            if !timed_out || cfg.charge_timeouts {
                cost += true_cost;
            }
            best_quality = best_quality.max(realized);
            min_wait = min_wait.min(wait);
            all_timed_out &= timed_out;
            if learn {
                outstanding.push(Outstanding {
                    completion: now + wait,
                    seq: n,
                    item: FeedbackItem {
                        arm: i,
                        embedding: e.clone(),
                        quality: truth.quality,
                        realized_quality: realized,
                        response_tokens: truth.response_tokens,
                        wait_s: wait,
                    },
                });
            }
        }

        let ids: Vec<String> = chosen
            .iter()
            .map(|&i| router.catalog.arm(i).id().to_string())
            .collect();
        result.total_quality += best_quality;
        result.total_cost += cost;
        result.timeouts += usize::from(all_timed_out);
        result.records.push(QueryRecord {
            query_id: q.id.clone(),
            chosen: ids[0].clone(),
            also: ids[1..].to_vec(),
            arrival_s: now,
            quality: best_quality,
            cost_usd: cost,
            wait_s: min_wait,
            timed_out: all_timed_out,
        });
    }
    if learn {
        flush(router, &mut outstanding, f64::INFINITY)?;
    }
    for (c, job) in queue.drain_completed(f64::INFINITY) {
        log_event(
            job.completion,
            EventKind::Completion,
            Some(&job.query_id),
            Some(router.catalog.arm(c).id()),
        );
    }
    result.events = events;
    Ok(result)
}
