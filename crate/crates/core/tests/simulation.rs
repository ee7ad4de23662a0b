mod common;

use mixroute::catalog::LlmCandidate;
use mixroute::sim::{service_time, EventKind};
use mixroute::{run_stream, Error, FeedbackMode, Policy, RouterConfig, SimConfig};

fn one_second_arm(id: &str) -> LlmCandidate {
    LlmCandidate::new(id, 0.001, 0.002, 1.0, 100.0)
}

#[test]
fn service_time_oracle() {
    for (init, tokens, tps) in [(0.5, 100, 50.0), (0.0, 0, 1.0), (1.25, 333, 7.5), (0.2, 4096, 120.0)] {
        let c = LlmCandidate::new("x", 0.0, 0.0, init, tps);
        assert_eq!(service_time(&c, tokens), init + tokens as f64 / tps);
    }
}

#[test]
fn idle_system_single_query() {
    let mut r = common::router(2, vec![LlmCandidate::new("a", 0.001, 0.002, 0.5, 50.0)], RouterConfig::default());
    let q = common::uniform_query("q0", vec![1.0, 0.0], &["a"], 0.83, 75);
    let res = run_stream(&[q], &mut r, &SimConfig::default(), Policy::Router, FeedbackMode::None).unwrap();
    assert_eq!(res.records.len(), 1);
    assert!(!res.records[0].timed_out);
    assert_eq!(res.records[0].quality, 0.83);
    assert!((res.records[0].wait_s - 2.0).abs() < 1e-12);
}

#[test]
fn forced_single_candidate_backlog() {
    let mut r = common::router(
        2,
        vec![one_second_arm("a")],
        RouterConfig {
            beta: 0.0,
            ..Default::default()
        },
    );
    let queries: Vec<_> = (0..300)
        .map(|i| common::uniform_query(&format!("q{i:03}"), vec![1.0, 0.0], &["a"], 0.9, 0))
        .collect();
    let sim = SimConfig {
        record_events: true,
        ..Default::default()
    };
    let res = run_stream(&queries, &mut r, &sim, Policy::Router, FeedbackMode::None).unwrap();

    // query n arrives at 0.1 n and completes at n + 1
    for (n, rec) in res.records.iter().enumerate() {
        let expect = n as f64 + 1.0 - 0.1 * n as f64;
        assert!((rec.wait_s - expect).abs() < 1e-9, "query {n}");
        assert_eq!(rec.timed_out, expect > 30.0);
        assert_eq!(rec.quality, if expect > 30.0 { 0.0 } else { 0.9 });
    }
    let first_late = res.records.iter().position(|r| r.timed_out).unwrap();
    assert_eq!(first_late, 33);
    assert_eq!(res.timeouts, 267);

    // backlog at the end of each window, from the event log
    let completions: Vec<f64> = res
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Completion)
        .map(|e| e.time)
        .collect();
    assert_eq!(completions.len(), 300);
    assert!(completions.windows(2).all(|w| w[0] < w[1]));
    for window in 1..=3 {
        let t = 10.0 * window as f64;
        let last_routed = completions[100 * window - 1];
        let backlog = last_routed - t;
        assert!((backlog - 90.0 * window as f64).abs() < 1.0 + 1e-9, "window {window}: {backlog}");
    }
    // every timed-out query is still charged
    assert!((res.total_cost - 300.0 * 1e-5).abs() < 1e-12);
}

#[test]
fn free_timeouts_are_not_charged() {
    let mut r = common::router(2, vec![one_second_arm("a")], RouterConfig::default());
    let queries: Vec<_> = (0..100)
        .map(|i| common::uniform_query(&format!("q{i}"), vec![0.0, 1.0], &["a"], 0.5, 0))
        .collect();
    let sim = SimConfig {
        charge_timeouts: false,
        ..Default::default()
    };
    let res = run_stream(&queries, &mut r, &sim, Policy::Fixed(0), FeedbackMode::None).unwrap();
    assert!(res.timeouts > 0);
    for rec in &res.records {
        assert_eq!(rec.cost_usd == 0.0, rec.timed_out);
    }
}

#[test]
fn seeds_do_not_matter_without_jitter() {
    let (router, ds) = common::trained(120, 60, 4, RouterConfig::default());
    let run = |seed| {
        let mut r = router.clone();
        let sim = SimConfig {
            seed,
            ..Default::default()
        };
        run_stream(&ds.queries[60..], &mut r, &sim, Policy::Router, FeedbackMode::None).unwrap()
    };
    assert_eq!(run(1), run(2));
    let jittered = |seed| {
        let mut r = router.clone();
        let sim = SimConfig {
            seed,
            jitter: 0.5,
            ..Default::default()
        };
        run_stream(&ds.queries[60..], &mut r, &sim, Policy::Router, FeedbackMode::None).unwrap()
    };
    assert_eq!(jittered(3), jittered(3));
    assert_ne!(jittered(3).records[1].arrival_s, jittered(4).records[1].arrival_s);
}

#[test]
fn routing_uses_tick_stale_waits() {
    let mut r = common::router(
        2,
        vec![one_second_arm("a"), one_second_arm("b")],
        RouterConfig {
            alpha: 0.0,
            ..Default::default()
        },
    );
    let queries: Vec<_> = (0..150)
        .map(|i| common::uniform_query(&format!("q{i}"), vec![1.0, 0.0], &["a", "b"], 0.7, 0))
        .collect();
    let res = run_stream(&queries, &mut r, &SimConfig::default(), Policy::Router, FeedbackMode::None).unwrap();
    // the first tick is at 10 s: until then both snapshots read 0 and the tie goes to `a`
    assert!(res.records[..100].iter().all(|x| x.chosen == "a"));
    // from 10 s on, `a` shows a 90 s backlog and `b` none
    assert!(res.records[100..].iter().all(|x| x.chosen == "b"));
    let d = &res.decisions[100];
    assert!((d.breakdown[0].wait_s - 90.0).abs() < 1e-9);
    assert_eq!(d.breakdown[1].wait_s, 0.0);
}

#[test]
fn missing_ground_truth_is_reported() {
    let mut r = common::router(2, vec![one_second_arm("a"), one_second_arm("b")], RouterConfig::default());
    let q = common::uniform_query("q", vec![1.0, 1.0], &["a"], 0.5, 3);
    let err = run_stream(&[q], &mut r, &SimConfig::default(), Policy::Router, FeedbackMode::None).unwrap_err();
    assert!(matches!(err, Error::MissingGroundTruth { .. }));
}

#[test]
fn saturation_costs_single_candidates_quality() {
    let (router, ds) = common::trained(400, 100, 8, RouterConfig::default());
    let test = &ds.queries[100..];
    let large = router.catalog.index_of("large").unwrap();
    let run = |latency| {
        let mut r = router.clone();
        let sim = SimConfig {
            latency,
            ..Default::default()
        };
        run_stream(test, &mut r, &sim, Policy::Fixed(large), FeedbackMode::None).unwrap()
    };
    let (with, without) = (run(true), run(false));
    assert!(with.timeouts > 0);
    assert!(with.total_quality < without.total_quality);
    assert_eq!(with.total_cost, without.total_cost);
}

#[test]
fn refined_feedback_reaches_every_routed_query() {
    let (router, ds) = common::trained(200, 100, 6, RouterConfig::default());
    let mut r = router.clone();
    let res = run_stream(&ds.queries[100..], &mut r, &SimConfig::default(), Policy::Router, FeedbackMode::Refined).unwrap();
    let before: u64 = router.catalog.arms().iter().map(|a| a.state.uncertainty.updates()).sum();
    let after: u64 = r.catalog.arms().iter().map(|a| a.state.uncertainty.updates()).sum();
    assert_eq!(after - before, res.records.len() as u64);
}

#[test]
fn binary_feedback_moves_only_the_net() {
    let (router, ds) = common::trained(200, 100, 6, RouterConfig::default());
    let mut r = router.clone();
    run_stream(&ds.queries[100..], &mut r, &SimConfig::default(), Policy::RouterOnline, FeedbackMode::Binary).unwrap();
    assert_eq!(r.catalog, router.catalog);
    assert_ne!(r.feedback.params(), router.feedback.params());
}

#[test]
fn frozen_policies_leave_the_router_untouched() {
    let (router, ds) = common::trained(120, 60, 2, RouterConfig::default());
    for policy in [Policy::Fixed(1), Policy::Random { seed: 3 }, Policy::TopK(2)] {
        let mut r = router.clone();
        run_stream(&ds.queries[60..], &mut r, &SimConfig::default(), policy, FeedbackMode::Refined).unwrap();
        assert_eq!(r, router);
    }
}
