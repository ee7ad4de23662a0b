use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mixroute::bench::{self, ContinualConfig, CurvePoint};
use mixroute::catalog::{Catalog, CatalogSpec};
use mixroute::data::{load_dataset, split, Dataset, SplitSpec};
use mixroute::embed::{train_projection, EmbedTrainConfig, ProjectionModel};
use mixroute::predict::PredictorConfig;
use mixroute::synth::{self, SynthConfig};
use mixroute::{run_stream, FeedbackMode, Policy, Router, RouterConfig, SimConfig};

#[derive(Parser, Debug)]
#[command(name = "mixroute", version, about = "Query routing simulator and experiment harness")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Candidate catalog JSON.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Query dataset JSONL.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Run config JSON: router keys at top level, optional `sim`,
    /// `predictor`, `embed`, `split`, `continual` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Trained router snapshot (from `train-offline`).
    #[arg(long, global = true)]
    router: Option<PathBuf>,
    /// Disable queueing and timeouts.
    #[arg(long, global = true)]
    no_latency: bool,
    /// Do not charge timed-out queries.
    #[arg(long, global = true)]
    free_timeouts: bool,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
enum Command {
    /// Validate a dataset, fill missing costs and write it back normalized.
    Ingest,
    /// Train the routing-space projection on labelled queries.
    TrainEmbed,
    /// Split the dataset and fit a router on the training part.
    TrainOffline {
        /// Projection JSON from `train-embed`.
        #[arg(long)]
        projection: Option<PathBuf>,
        /// Train on the whole dataset instead of the split's training part.
        #[arg(long)]
        no_split: bool,
    },
    /// Stream the dataset through a trained router.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicyArg::Router)]
        policy: PolicyArg,
        /// Candidate id for `--policy fixed`, k for `--policy top-k`.
        #[arg(long)]
        arg: Option<String>,
        #[arg(long, value_enum, default_value_t = FeedbackArg::None)]
        feedback: FeedbackArg,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// One simulation per lambda; writes `sweep.csv`.
    Sweep {
        /// Number of log-spaced values in [1e-6, 1e6].
        #[arg(long, default_value_t = 25)]
        points: usize,
        /// Explicit comma-separated lambdas (overrides `--points`).
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Reference candidate for the fraction columns.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Per-query cheapest candidate reaching the quality threshold.
    Oracle {
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
    /// Random routing and every single-candidate point.
    Baselines,
    /// Offline vs refined vs binary online training at matched cost.
    Continual {
        /// Comma-separated offline:online ratios.
        #[arg(long, value_delimiter = ',', default_value = "80:20,50:50,30:70")]
        ratios: Vec<String>,
    },
    /// Top-k dispatch curves.
    Topk {
        /// Comma-separated k values; defaults to 1..=active candidates.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Fractions against a reference candidate and the best trade-off point.
    Report {
        /// Curve points (`points.json` from `sweep`).
        #[arg(long)]
        points: PathBuf,
        /// Single-candidate points (`singles.json` from `sweep` or `baselines`).
        #[arg(long)]
        singles: PathBuf,
        #[arg(long)]
        reference: Option<String>,
    },
    /// Write a seeded synthetic dataset and catalog.
    Synth {
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        /// Fraction of the stream after which candidate skills drift.
        #[arg(long)]
        drift_at: Option<f64>,
        /// 0/1 qualities.
        #[arg(long)]
        binary: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum PolicyArg {
    Router,
    Online,
    Random,
    Fixed,
    TopK,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum FeedbackArg {
    None,
    Refined,
    Binary,
}

impl From<FeedbackArg> for FeedbackMode {
    fn from(f: FeedbackArg) -> Self {
        match f {
            FeedbackArg::None => FeedbackMode::None,
            FeedbackArg::Refined => FeedbackMode::Refined,
            FeedbackArg::Binary => FeedbackMode::Binary,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    #[serde(flatten)]
    router: RouterConfig,
    sim: SimConfig,
    predictor: PredictorConfig,
    embed: EmbedTrainConfig,
    split: SplitSpec,
    continual: ContinualConfig,
    synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            router: RouterConfig::default(),
            sim: SimConfig::default(),
            predictor: PredictorConfig::default(),
            embed: EmbedTrainConfig::default(),
            split: SplitSpec::default(),
            continual: ContinualConfig::default(),
            synth: None,
        }
    }
}

impl RunConfig {
    fn load(g: &Global) -> Result<Self> {
        let mut cfg: RunConfig = match &g.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = g.seed {
            cfg.router.net_seed = s;
            cfg.sim.seed = s;
            cfg.embed.seed = s;
            cfg.split.seed = s;
            cfg.continual.seed = s;
            if let Some(sy) = cfg.synth.as_mut() {
                sy.seed = s;
            }
        }
        if g.no_latency {
            cfg.sim.latency = false;
        }
        if g.free_timeouts {
            cfg.sim.charge_timeouts = false;
        }
        cfg.router.validate()?;
        cfg.sim.validate()?;
        cfg.split.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a Command,
    global: &'a Global,
    config: &'a RunConfig,
}

struct Run {
    dir: PathBuf,
}

impl Run {
    fn create(cli: &Cli, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
        let run = Self {
            dir: cli.global.out.clone(),
        };
        run.json(
            "manifest.json",
            &Manifest {
                version: env!("CARGO_PKG_VERSION"),
                command: &cli.cmd,
                global: &cli.global,
                config: cfg,
            },
        )?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        for r in rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("--{flag} is required for this command"))
}

fn dataset(g: &Global, catalog: Option<&CatalogSpec>) -> Result<Dataset> {
    let path = require(&g.dataset, "dataset")?;
    let mut ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(c) = catalog {
        ds.fill_costs(&c.candidates);
    }
    Ok(ds)
}

fn catalog_spec(g: &Global) -> Result<Option<CatalogSpec>> {
    g.catalog
        .as_deref()
        .map(|p| CatalogSpec::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn fresh_router(spec: &CatalogSpec, ds: &Dataset, cfg: &RunConfig, projection: Option<ProjectionModel>) -> Result<Router> {
    let d_base = ds.d_base().context("empty dataset")?;
    if let Some(d) = spec.d_base {
        if d != d_base {
            bail!("catalog declares d_base {d} but the dataset has {d_base}");
        }
    }
    let d_route = projection.as_ref().map_or(d_base, |p| p.d_route);
    let catalog = Catalog::with_candidates(d_base, d_route, cfg.predictor.clone(), spec.candidates.clone())?;
    Ok(Router::new(catalog, cfg.router.clone(), projection)?)
}

/// A trained router from `--router`, or one fitted on the spot on the
/// dataset's training split.
fn trained_router(g: &Global, cfg: &RunConfig) -> Result<(Router, Dataset)> {
    let spec = catalog_spec(g)?;
    let ds = dataset(g, spec.as_ref())?;
    if let Some(p) = &g.router {
        let mut router = Router::load(p).with_context(|| format!("loading {}", p.display()))?;
        router.config.lambda = cfg.router.lambda;
        return Ok((router, ds));
    }
    let spec = spec.context("either --router or --catalog is required")?;
    let parts = split(&ds, &cfg.split)?;
    let mut router = fresh_router(&spec, &parts.train, cfg, None)?;
    router.train_offline(&parts.train.queries)?;
    Ok((router, parts.test))
}

fn parse_ratio(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').with_context(|| format!("ratio `{s}` is not `a:b`"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = RunConfig::load(&cli.global)?;
    let run = Run::create(&cli, &cfg)?;
    let g = &cli.global;

    match &cli.cmd {
        Command::Ingest => {
            let spec = catalog_spec(g)?;
            let ds = dataset(g, spec.as_ref())?;
            ds.save(run.path("dataset.jsonl"))?;
            let summary = serde_json::json!({
                "rows": ds.len(),
                "d_base": ds.d_base(),
                "domains": ds.domains,
                "llm_ids": ds.llm_ids(),
            });
            run.json("ingest.json", &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::TrainEmbed => {
            let ds = dataset(g, None)?;
            let rows: Vec<(Vec<f64>, usize)> = ds
                .queries
                .iter()
                .filter_map(|q| q.domain_label.map(|l| (q.base_embedding.clone(), l)))
                .collect();
            let (model, report) = train_projection(&rows, &cfg.embed)?;
            model.save(run.path("projection.json"))?;
            run.json("embed_report.json", &report)?;
            println!(
                "loss {:.6} -> {:.6} over {} labelled rows",
                report.initial_loss,
                report.final_loss,
                rows.len()
            );
        }
        Command::TrainOffline { projection, no_split } => {
            let spec = catalog_spec(g)?.context("--catalog is required")?;
            let ds = dataset(g, Some(&spec))?;
            let projection = projection.as_deref().map(ProjectionModel::load).transpose()?;
            let train = if *no_split {
                ds.clone()
            } else {
                let parts = split(&ds, &cfg.split)?;
                parts.train.save(run.path("train.jsonl"))?;
                parts.test.save(run.path("test.jsonl"))?;
                if let Some(online) = &parts.online {
                    online.save(run.path("online.jsonl"))?;
                }
                parts.train
            };
            let mut router = fresh_router(&spec, &train, &cfg, projection)?;
            router.train_offline(&train.queries)?;
            router.save(run.path("router.json"))?;
            println!(
                "trained {} candidates on {} queries (cost_scale {:.6})",
                router.catalog.active_count(),
                train.len(),
                router.cost_scale
            );
        }
        Command::Simulate {
            policy,
            arg,
            feedback,
            lambda,
        } => {
            let mut router = Router::load(require(&g.router, "router")?)?;
            router.config.lambda = lambda.unwrap_or(cfg.router.lambda);
            let ds = dataset(g, None)?;
            let policy = match policy {
                PolicyArg::Router => Policy::Router,
                PolicyArg::Online => Policy::RouterOnline,
                PolicyArg::Random => Policy::Random { seed: cfg.sim.seed },
                PolicyArg::Fixed => {
                    let id = arg.as_deref().context("--arg <llm_id> is required")?;
                    Policy::Fixed(router.catalog.index_of(id).with_context(|| format!("unknown candidate {id}"))?)
                }
                PolicyArg::TopK => Policy::TopK(arg.as_deref().context("--arg <k> is required")?.parse()?),
            };
            let res = run_stream(&ds.queries, &mut router, &cfg.sim, policy, (*feedback).into())?;
            run.jsonl("records.jsonl", &res.records)?;
            run.jsonl("decisions.jsonl", &res.decisions)?;
            if cfg.sim.record_events {
                run.jsonl("events.jsonl", &res.events)?;
            }
            run.json("summary.json", &res.summary())?;
            if !matches!(feedback, FeedbackArg::None) {
                router.save(run.path("router.json"))?;
            }
            println!("{}", serde_json::to_string_pretty(&res.summary())?);
        }
        Command::Sweep {
            points,
            lambdas,
            reference,
        } => {
            let (router, test) = trained_router(g, &cfg)?;
            let grid = lambdas.clone().unwrap_or_else(|| bench::lambda_grid(*points));
            let curve = bench::sweep_lambda(&router, &test.queries, &cfg.sim, &grid)?;
            let singles = bench::single_llm_points(&router, &test.queries, &cfg.sim)?;
            let reference = pick_reference(&singles, reference.as_deref())?;
            let curve: Vec<CurvePoint> = curve.into_iter().map(|p| p.relative_to(&reference)).collect();
            bench::write_curve_csv(&curve, run.path("sweep.csv"))?;
            run.json("points.json", &curve)?;
            run.json("singles.json", &singles)?;
            println!("{} points, reference {}", curve.len(), reference.label);
        }
        Command::Oracle { threshold } => {
            let (router, test) = trained_router(g, &cfg)?;
            let out = bench::oracle_curve(&test.queries, *threshold, &router)?;
            run.json("oracle.json", &out)?;
            println!(
                "oracle quality {:.4} cost {:.6}",
                out.point.total_quality, out.point.total_cost
            );
        }
        Command::Baselines => {
            let (router, test) = trained_router(g, &cfg)?;
            let (random, _) = bench::random_baseline(&router, &test.queries, &cfg.sim, cfg.sim.seed)?;
            let singles = bench::single_llm_points(&router, &test.queries, &cfg.sim)?;
            let mut all = singles.clone();
            all.push(random);
            if let Some(r) = bench::default_reference(&singles).cloned() {
                all = all.into_iter().map(|p| p.relative_to(&r)).collect();
            }
            bench::write_curve_csv(&all, run.path("baselines.csv"))?;
            run.json("baselines.json", &all)?;
            run.json("singles.json", &singles)?;
            for p in &all {
                println!("{:<16} quality {:>10.4} cost {:>12.6} timeouts {}", p.label, p.total_quality, p.total_cost, p.timeout_count);
            }
        }
        Command::Continual { ratios } => {
            let spec = catalog_spec(g)?.context("--catalog is required")?;
            let ds = dataset(g, Some(&spec))?;
            let ratios = ratios.iter().map(|r| parse_ratio(r)).collect::<Result<Vec<_>>>()?;
            let base = fresh_router(&spec, &ds, &cfg, None)?;
            let rows = bench::continual_experiment(&ds, &base, &ratios, &cfg.sim, &cfg.continual)?;
            run.json("continual.json", &rows)?;
            let mut w = csv::Writer::from_path(run.path("continual.csv"))?;
            w.write_record([
                "offline", "online", "none_quality", "none_cost", "refined_quality", "refined_cost", "refined_lambda",
                "binary_quality", "binary_cost", "binary_lambda", "refined_improvement_pct", "binary_improvement_pct",
            ])?;
            for r in &rows {
                w.serialize((
                    r.offline,
                    r.online,
                    r.without_online.quality,
                    r.without_online.total_cost,
                    r.refined.quality,
                    r.refined.total_cost,
                    r.refined.lambda,
                    r.binary.quality,
                    r.binary.total_cost,
                    r.binary.lambda,
                    r.refined_improvement(),
                    r.binary_improvement(),
                ))?;
                println!(
                    "{}:{}  none {:.4}  refined {:.4} ({:+.2}%)  binary {:.4} ({:+.2}%)",
                    r.offline,
                    r.online,
                    r.without_online.quality,
                    r.refined.quality,
                    r.refined_improvement(),
                    r.binary.quality,
                    r.binary_improvement()
                );
            }
            w.flush()?;
        }
        Command::Topk { k } => {
            let (router, test) = trained_router(g, &cfg)?;
            let ks = k.clone().unwrap_or_else(|| (1..=router.catalog.active_count()).collect());
            let mut points = Vec::with_capacity(ks.len());
            for &k in &ks {
                let (p, _) = bench::topk_policy(&router, &test.queries, &cfg.sim, k)?;
                points.push(p);
            }
            bench::write_curve_csv(&points, run.path("topk.csv"))?;
            run.json("topk.json", &points)?;
            for p in &points {
                println!("{:<6} quality {:>10.4} cost {:>12.6}", p.label, p.total_quality, p.total_cost);
            }
        }
        Command::Report {
            points,
            singles,
            reference,
        } => {
            let points: Vec<CurvePoint> = serde_json::from_str(&fs::read_to_string(points)?)?;
            let singles: Vec<CurvePoint> = serde_json::from_str(&fs::read_to_string(singles)?)?;
            let reference = match reference {
                Some(r) => r.clone(),
                None => bench::default_reference(&singles)
                    .context("no single-candidate points")?
                    .label
                    .clone(),
            };
            let rep = bench::report(&points, &singles, &reference)?;
            run.json("report.json", &rep)?;
            match rep.best.map(|i| &rep.points[i]) {
                Some(b) => println!(
                    "best: {} at {:.2}% of {}'s quality for {:.2}% of its cost",
                    b.label,
                    100.0 * b.quality_vs_reference.unwrap_or(0.0),
                    rep.reference.label,
                    100.0 * b.cost_vs_reference.unwrap_or(0.0)
                ),
                None => println!("no point is cheaper than {}", rep.reference.label),
            }
        }
        Command::Synth {
            queries,
            drift_at,
            binary,
        } => {
            let mut sc = cfg.synth.clone().unwrap_or_default();
            sc.queries = *queries;
            if drift_at.is_some() {
                sc.drift_at = *drift_at;
            }
            sc.binary_quality |= *binary;
            if let Some(s) = g.seed {
                sc.seed = s;
            }
            let ds = synth::generate(&sc);
            ds.save(run.path("dataset.jsonl"))?;
            CatalogSpec {
                d_base: Some(sc.d_base),
                d_route: None,
                candidates: synth::candidates(&sc),
            }
            .save(run.path("catalog.json"))?;
            println!("{} queries, {} candidates", ds.len(), sc.arms.len());
        }
    }
    Ok(())
}

fn pick_reference(singles: &[CurvePoint], id: Option<&str>) -> Result<CurvePoint> {
    let found = match id {
        Some(id) => singles.iter().find(|p| p.label == id),
        None => bench::default_reference(singles),
    };
    found
        .cloned()
        .with_context(|| format!("reference candidate {} not found", id.unwrap_or("<costliest>")))
}
