use std::io::Write;

use mixroute::data::{load_dataset, split, SplitKind, SplitSpec};
use mixroute::synth::{self, SynthConfig};
use mixroute::Error;

fn row(id: &str, quality: f64, ids: &[&str]) -> String {
    let truth: Vec<String> = ids
        .iter()
        .map(|l| format!(r#""{l}": {{"quality": {quality}, "response_tokens": 12, "cost_usd": null}}"#))
        .collect();
    format!(
        r#"{{"id": "{id}", "base_embedding": [0.1, 0.2, 0.3], "prompt_tokens": 5, "domain_label": 1, "truth": {{{}}}}}"#,
        truth.join(", ")
    )
}

fn file(lines: &[String]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

#[test]
fn three_valid_rows() {
    let f = file(&[row("a", 0.1, &["x", "y"]), row("b", 1.0, &["x", "y"]), row("c", 0.0, &["x", "y"])]);
    let ds = load_dataset(f.path()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.d_base(), Some(3));
    assert_eq!(ds.llm_ids(), vec!["x".to_string(), "y".to_string()]);
}

#[test]
fn out_of_range_quality_names_the_row() {
    let f = file(&[row("a", 0.1, &["x"]), row("b", 1.3, &["x"])]);
    match load_dataset(f.path()).unwrap_err() {
        Error::Range { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn missing_candidate_is_a_schema_error() {
    let f = file(&[row("a", 0.1, &["x", "y"]), row("b", 0.2, &["x"])]);
    assert!(matches!(load_dataset(f.path()).unwrap_err(), Error::Schema { line: 2, .. }));
}

#[test]
fn negative_tokens_are_rejected() {
    let bad = row("a", 0.5, &["x"]).replace("\"prompt_tokens\": 5", "\"prompt_tokens\": -5");
    assert!(matches!(load_dataset(file(&[bad]).path()).unwrap_err(), Error::Range { line: 1, .. }));
}

#[test]
fn random_split_is_reproducible() {
    let ds = synth::generate(&SynthConfig { queries: 100, ..Default::default() });
    let spec = SplitSpec::random(0.8, 42);
    let a = split(&ds, &spec).unwrap();
    let b = split(&ds, &spec).unwrap();
    assert_eq!((a.train.len(), a.test.len()), (80, 20));
    assert_eq!(a, b);
    let c = split(&ds, &SplitSpec::random(0.8, 43)).unwrap();
    assert_ne!(a.test.queries, c.test.queries);
}

#[test]
fn ood_split_on_twenty_domains() {
    let ds = synth::generate(&SynthConfig { queries: 400, domains: 20, ..Default::default() });
    for seed in 0..10 {
        let s = split(
            &ds,
            &SplitSpec {
                kind: SplitKind::OodDomain,
                train_fraction: 0.8,
                offline_online_ratio: None,
                seed,
            },
        )
        .unwrap();
        let train: std::collections::BTreeSet<usize> = s.train.queries.iter().filter_map(|q| q.domain_label).collect();
        let test: std::collections::BTreeSet<usize> = s.test.queries.iter().filter_map(|q| q.domain_label).collect();
        assert!(train.is_disjoint(&test));
        assert!(!test.is_empty());
        let share = s.test.len() as f64 / ds.len() as f64;
        assert!((share - 0.2).abs() < 0.1, "test share {share}");
    }
}

#[test]
fn ood_needs_two_domains() {
    let ds = synth::generate(&SynthConfig { queries: 30, domains: 1, ..Default::default() });
    let spec = SplitSpec { kind: SplitKind::OodDomain, ..SplitSpec::default() };
    assert!(matches!(split(&ds, &spec).unwrap_err(), Error::InsufficientDomains(1)));
}

#[test]
fn offline_online_ratio_sizes() {
    let ds = synth::generate(&SynthConfig { queries: 250, ..Default::default() });
    for (off, on) in [(30.0, 70.0), (50.0, 50.0), (80.0, 20.0)] {
        let s = split(
            &ds,
            &SplitSpec {
                offline_online_ratio: Some((off, on)),
                ..SplitSpec::default()
            },
        )
        .unwrap();
        let online = s.online.unwrap();
        let train = s.train.len() + online.len();
        assert_eq!(train, 200);
        let want = train as f64 * off / (off + on);
        assert!((s.train.len() as f64 - want).abs() <= 1.0);
    }
}

#[test]
fn sequential_split_keeps_order() {
    let ds = synth::generate(&SynthConfig { queries: 50, ..Default::default() });
    let s = split(&ds, &SplitSpec { kind: SplitKind::Sequential, ..SplitSpec::default() }).unwrap();
    assert_eq!(s.train.queries[..], ds.queries[..40]);
    assert_eq!(s.test.queries[..], ds.queries[40..]);
}

#[test]
fn invalid_fraction_is_rejected() {
    let ds = synth::generate(&SynthConfig { queries: 10, ..Default::default() });
    assert!(split(&ds, &SplitSpec::random(1.0, 1)).is_err());
    assert!(split(&ds, &SplitSpec::random(0.0, 1)).is_err());
}
