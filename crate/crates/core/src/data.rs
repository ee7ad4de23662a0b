//! Dataset ingestion, validation and splitting.
//!
//! One query per JSONL line:
//!
//! ```json
//! {"id": "q1", "base_embedding": [0.1, ...], "prompt_tokens": 42, "domain_label": 3,
//!  "truth": {"gpt-4": {"quality": 1.0, "response_tokens": 120, "cost_usd": null}}}
//! ```
//!
//! Every row must carry ground truth for the same candidate set.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{LlmCandidate, Query};
use crate::error::{Error, Result};

/// Supplied and recomputed costs differing by more than this fraction log a
/// warning.
pub const COST_MISMATCH_WARN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub queries: Vec<Query>,
    /// Number of domains (`max label + 1`, or 0 when unlabelled).
    pub domains: usize,
    pub source: String,
}

impl Dataset {
    pub fn new(queries: Vec<Query>, source: impl Into<String>) -> Result<Self> {
        validate_rows(&queries)?;
        let domains = queries
            .iter()
            .filter_map(|q| q.domain_label)
            .max()
            .map_or(0, |m| m + 1);
        Ok(Self {
            queries,
            domains,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn d_base(&self) -> Option<usize> {
        self.queries.first().map(|q| q.base_embedding.len())
    }

    pub fn llm_ids(&self) -> Vec<String> {
        self.queries
            .first()
            .map(|q| q.ground_truth.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn subset(&self, queries: Vec<Query>) -> Self {
        Self {
            domains: self.domains,
            source: self.source.clone(),
            queries,
        }
    }

    /// Fills in missing `cost_usd` from catalog pricing; warns when a
    /// supplied cost is off by more than 1%.
    pub fn fill_costs(&mut self, candidates: &[LlmCandidate]) {
        let by_id: BTreeMap<&str, &LlmCandidate> =
            candidates.iter().map(|c| (c.llm_id.as_str(), c)).collect();
        for q in &mut self.queries {
            for (id, t) in q.ground_truth.iter_mut() {
                let Some(c) = by_id.get(id.as_str()) else { continue };
                let computed = c.true_cost(q.prompt_tokens, t.response_tokens);
                match t.cost_usd {
                    None => t.cost_usd = Some(computed),
                    Some(given) => {
                        let denom = computed.abs().max(f64::MIN_POSITIVE);
                        if (given - computed).abs() / denom > COST_MISMATCH_WARN {
                            log::warn!(
                                "query `{}`, candidate `{id}`: supplied cost {given} vs pricing {computed}",
                                q.id
                            );
                        }
                    }
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for q in &self.queries {
            serde_json::to_writer(&mut w, q)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_rows(queries: &[Query]) -> Result<()> {
    let mut ids = BTreeSet::new();
    let mut expected: Option<(BTreeSet<&str>, usize)> = None;
    for (i, q) in queries.iter().enumerate() {
        let line = i + 1;
        if !ids.insert(q.id.as_str()) {
            return Err(Error::Schema {
                line,
                msg: format!("duplicate id `{}`", q.id),
            });
        }
        if q.prompt_tokens < 0 {
            return Err(Error::Range {
                line,
                msg: format!("prompt_tokens {} < 0", q.prompt_tokens),
            });
        }
        if q.base_embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Range {
                line,
                msg: "non-finite embedding value".into(),
            });
        }
        for (id, t) in &q.ground_truth {
            if !(0.0..=1.0).contains(&t.quality) {
                return Err(Error::Range {
                    line,
                    msg: format!("quality {} for `{id}` outside [0, 1]", t.quality),
                });
            }
            if t.response_tokens < 0 {
                return Err(Error::Range {
                    line,
                    msg: format!("response_tokens {} for `{id}` < 0", t.response_tokens),
                });
            }
            if t.cost_usd.is_some_and(|c| !(c >= 0.0)) {
                return Err(Error::Range {
                    line,
                    msg: format!("negative cost for `{id}`"),
                });
            }
        }
        let keys: BTreeSet<&str> = q.ground_truth.keys().map(String::as_str).collect();
        match &expected {
            None => expected = Some((keys, q.base_embedding.len())),
            Some((want, dim)) => {
                if &keys != want {
                    let missing: Vec<&&str> = want.symmetric_difference(&keys).collect();
                    return Err(Error::Schema {
                        line,
                        msg: format!("ground truth not rectangular (differs on {missing:?})"),
                    });
                }
                if q.base_embedding.len() != *dim {
                    return Err(Error::Schema {
                        line,
                        msg: format!("embedding length {} != {dim}", q.base_embedding.len()),
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| {
            if e.is_data() {
                Error::Schema {
                    line: line_no,
                    msg: e.to_string(),
                }
            } else {
                Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                }
            }
        })?;
        queries.push(q);
    }
    Dataset::new(queries, path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Random,
    OodDomain,
    /// Order-preserving: earliest rows train, latest rows test.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train_fraction: f64,
    /// Optional `(offline, online)` weights splitting the training part.
    pub offline_online_ratio: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::random(0.8, 42)
    }
}

impl SplitSpec {
    pub fn random(train_fraction: f64, seed: u64) -> Self {
        Self {
            kind: SplitKind::Random,
            train_fraction,
            offline_online_ratio: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = self.train_fraction > 0.0 && self.train_fraction < 1.0;
        let ratio_ok = self
            .offline_online_ratio
            .map_or(true, |(a, b)| a > 0.0 && b > 0.0);
        if !frac_ok || !ratio_ok {
            return Err(Error::InvalidConfig(
                "train_fraction must be in (0, 1) and ratio parts positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    /// Present when the spec carried an offline:online ratio; `train` then
    /// holds the offline part.
    pub online: Option<Dataset>,
    pub test: Dataset,
}

fn round_share(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = ds.len();
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = match spec.kind {
        SplitKind::Sequential => {
            let cut = round_share(n, spec.train_fraction);
            ((0..cut).collect(), (cut..n).collect())
        }
        SplitKind::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let cut = round_share(n, spec.train_fraction);
            let mut train = idx[..cut].to_vec();
            let mut test = idx[cut..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            (train, test)
        }
        SplitKind::OodDomain => ood_split(ds, spec)?,
    };

    let pick = |idx: &[usize]| ds.subset(idx.iter().map(|&i| ds.queries[i].clone()).collect());
    let test = pick(&test_idx);
    match spec.offline_online_ratio {
        None => Ok(Split {
            train: pick(&train_idx),
            online: None,
            test,
        }),
        Some((off, on)) => {
            let cut = round_share(train_idx.len(), off / (off + on));
            Ok(Split {
                train: pick(&train_idx[..cut]),
                online: Some(pick(&train_idx[cut..])),
                test,
            })
        }
    }
}

/// Whole domains go to test (seeded order) until the test share is reached.
/// Unlabelled rows always train.
fn ood_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_domain: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, q) in ds.queries.iter().enumerate() {
        if let Some(d) = q.domain_label {
            by_domain.entry(d).or_default().push(i);
        }
    }
    if by_domain.len() < 2 {
        return Err(Error::InsufficientDomains(by_domain.len()));
    }
    let mut domains: Vec<usize> = by_domain.keys().copied().collect();
    domains.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let target = ds.len() as f64 * (1.0 - spec.train_fraction);
    let mut test_domains = BTreeSet::new();
    let mut test_count = 0usize;
    for &d in &domains {
        if test_domains.len() + 1 == domains.len() {
            break;
        }
        let size = by_domain[&d].len();
        let gap_now = (target - test_count as f64).abs();
        let gap_next = (target - (test_count + size) as f64).abs();
        if test_domains.is_empty() || gap_next < gap_now {
            test_domains.insert(d);
            test_count += size;
        }
        if test_count as f64 >= target {
            break;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| {
        ds.queries[i]
            .domain_label
            .is_some_and(|d| test_domains.contains(&d))
    });
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::GroundTruth;

    fn row(id: &str, quality: f64, ids: &[&str]) -> String {
        let truth: BTreeMap<String, GroundTruth> = ids
            .iter()
            .map(|m| {
                (
                    m.to_string(),
                    GroundTruth {
                        quality,
                        response_tokens: 10,
                        cost_usd: None,
                    },
                )
            })
            .collect();
        serde_json::to_string(&Query {
            id: id.into(),
            base_embedding: vec![0.1, 0.2],
            prompt_tokens: 5,
            domain_label: Some(0),
            ground_truth: truth,
        })
        .unwrap()
    }

    fn write(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_rows() {
        let f = write(&[
            row("a", 0.5, &["x", "y"]),
            row("b", 1.0, &["x", "y"]),
            row("c", 0.0, &["x", "y"]),
        ]);
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.domains, 1);
        assert_eq!(ds.llm_ids(), vec!["x", "y"]);
    }

    #[test]
    fn rejects_out_of_range_quality() {
        let f = write(&[row("a", 0.5, &["x"]), row("b", 1.3, &["x"])]);
        match load_dataset(f.path()) {
            Err(Error::Range { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_rectangular() {
        let f = write(&[row("a", 0.5, &["x", "y"]), row("b", 0.5, &["x"])]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn rejects_garbage() {
        let f = write(&[row("a", 0.5, &["x"]), "{not json".into()]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn fills_missing_costs() {
        let f = write(&[row("a", 0.5, &["x"])]);
        let mut ds = load_dataset(f.path()).unwrap();
        ds.fill_costs(&[LlmCandidate::new("x", 1.0, 2.0, 0.0, 1.0)]);
        let c = ds.queries[0].ground_truth["x"].cost_usd.unwrap();
        assert!((c - (5.0 * 1.0 + 10.0 * 2.0) / 1000.0).abs() < 1e-15);
    }
}
