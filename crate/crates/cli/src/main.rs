use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use forest_dsh::baselines::{
    banded_signature_search, brute_force, brute_force_top1, dubiner_hamming_estimate, dubiner_hamming_exact, sparse_dot, BandedLimits,
    MipsEmbedding, SignatureMethod,
};
use forest_dsh::bench::{ExperimentConfig, ModelSource};
use forest_dsh::data::{generate_pairs, ingest_ranks, read_sequences, write_sequences, LogRank};
use forest_dsh::index::{load_binary, save_binary};
use forest_dsh::{
    build_tree, family_stats, solve_params, BandIndex, BandSet, DecisionTree, Error, FamilyStats, JointDistribution, ProblemDims, Result,
    Searcher, Sequence, SolverConfig, Thresholds, TreeConfig,
};

const SEED_ENV: &str = "FOREST_DSH_SEED";

#[derive(Parser)]
#[command(name = "forest-dsh", version, about = "Distribution-sensitive hashing with decision-tree buckets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal (mu, nu, eta) and the complexity exponent.
    SolveParams(SolveArgs),
    /// Build the bucket tree and save it with its model and parameters.
    BuildTree(BuildArgs),
    /// Index a database file under a saved tree.
    Index(IndexArgs),
    /// Run queries against a saved index.
    Query(QueryArgs),
    /// Run a comparison method.
    Baseline(BaselineArgs),
    /// Sample a paired dataset from a model.
    Gen(GenArgs),
    /// Turn rank lists into sequences with the logRank transform.
    Ingest(IngestArgs),
    /// Run an experiment from a JSON or TOML config.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in model by name.
    #[arg(long)]
    fixture: Option<String>,
    /// Interpolated sparse binary model at weight t.
    #[arg(long)]
    t: Option<f64>,
    /// Symmetric binary channel with agreement probability p.
    #[arg(long)]
    hamming: Option<f64>,
}

impl ModelArgs {
    fn source(&self) -> ModelSource {
        match (&self.model, &self.fixture, self.t, self.hamming) {
            (Some(path), ..) => ModelSource::File { path: path.clone() },
            (_, Some(name), ..) => ModelSource::Fixture { name: name.clone() },
            (_, _, Some(t), _) => ModelSource::Interpolate { t },
            (_, _, _, Some(p)) => ModelSource::Hamming { p },
            _ => unreachable!("clap requires one model argument"),
        }
    }

    fn load(&self) -> Result<JointDistribution<f64>> {
        self.source().load()
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 20.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig<f64>> {
        forest_dsh::bench::SolverSettings {
            grid_max: self.grid_max,
            grid_step: self.grid_step,
            tol: self.tol,
        }
        .config()
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    m: u64,
    #[arg(long, default_value_t = 1)]
    s: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    m: u64,
    #[arg(long)]
    s: usize,
    /// Constants as multiples of p0*q0.
    #[arg(long, default_value_t = 1.0)]
    c1_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    c2_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    c3_scale: f64,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = TreeConfig::DEFAULT_MAX_NODES)]
    max_nodes: usize,
    #[arg(long, default_value_t = 0.99)]
    tp: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the band count the tree's alpha needs for its target.
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Report only the most likely candidate per query.
    #[arg(long)]
    top1: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Brute,
    Minhash,
    LshHamming,
    Dubiner,
    MipsCheck,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    /// Channel agreement probability for the ball-bucketing exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Database file for brute force.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    n: u64,
    #[arg(long, default_value_t = 1000)]
    m: u64,
    #[arg(long, default_value_t = 1000)]
    s: usize,
    #[arg(long, default_value_t = 0.99)]
    tp: f64,
    /// Monte-Carlo trials; zero gives the exact evaluation only.
    #[arg(long, default_value_t = 0)]
    trials: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

impl BaselineArgs {
    fn model(&self) -> Result<JointDistribution<f64>> {
        let source = match (&self.model, &self.fixture, self.t, self.p) {
            (Some(path), ..) => ModelSource::File { path: path.clone() },
            (_, Some(name), ..) => ModelSource::Fixture { name: name.clone() },
            (_, _, Some(t), _) => ModelSource::Interpolate { t },
            (_, _, _, Some(p)) => ModelSource::Hamming { p },
            _ => return Err(Error::InvalidArgument("give --model, --fixture, --t or --p".into())),
        };
        source.load()
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    s: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Receives x.txt, y.txt and planted.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    ranks: PathBuf,
    #[arg(long, default_value_t = 2)]
    base: u64,
    #[arg(long, default_value_t = 8)]
    levels: u16,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

/// A tree with everything needed to use it later.
#[derive(Serialize, Deserialize)]
struct TreeFile {
    model: JointDistribution<f64>,
    tree: DecisionTree<f64>,
    stats: FamilyStats<f64>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    bands: BandSet,
    index: BandIndex,
    database: Vec<Sequence>,
}

fn print_json(value: &impl Serialize) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    let jd = args.model.load()?;
    let dims = ProblemDims::new(args.n, args.m, args.s)?;
    let params = solve_params(&jd, &dims, &args.solver.config()?)?;
    print_json(&params)
}

fn build(args: &BuildArgs) -> Result<()> {
    let jd = args.model.load()?;
    let dims = ProblemDims::new(args.n, args.m, args.s)?;
    let params = solve_params(&jd, &dims, &args.solver.config()?)?;
    let base = Thresholds::default_for(&params);
    for c in [args.c1_scale, args.c2_scale, args.c3_scale] {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("threshold scale must be positive, got {c}")));
        }
    }
    let th = Thresholds::from_logs(base.log_c1 + args.c1_scale.ln(), base.log_c2 + args.c2_scale.ln(), base.log_c3 + args.c3_scale.ln());
    let cfg = TreeConfig::new(th, args.max_depth.unwrap_or(args.s)).with_max_nodes(args.max_nodes);
    let tree = build_tree(&jd, &params, &dims, &cfg)?;
    let stats = family_stats(&tree, args.tp)?;
    let summary = serde_json::json!({
        "nodes": tree.len(),
        "buckets": tree.buckets.len(),
        "alpha": stats.alpha,
        "beta": stats.beta,
        "gamma_a": stats.gamma_a,
        "gamma_b": stats.gamma_b,
        "n_bands": stats.n_bands,
        "lambda": params.lambda,
        "max_depth": tree.max_bucket_depth(),
    });
    save_binary(&TreeFile { model: jd, tree, stats }, &args.out)?;
    print_json(&summary)
}

fn index(args: &IndexArgs) -> Result<()> {
    let tf: TreeFile = load_binary(&args.tree)?;
    let database = read_sequences(&args.data, tf.model.alphabet_a())?;
    let n_bands = args.bands.unwrap_or(tf.stats.n_bands);
    let bands = BandSet::new(n_bands, tf.tree.dims.s, args.seed)?;
    let index = BandIndex::build(&tf.tree, &bands, &database)?;
    let summary = serde_json::json!({
        "points": database.len(),
        "bands": n_bands,
        "insertions": index.insertions(),
    });
    save_binary(&IndexFile { bands, index, database }, &args.out)?;
    print_json(&summary)
}

fn query(args: &QueryArgs) -> Result<()> {
    let tf: TreeFile = load_binary(&args.tree)?;
    let ix: IndexFile = load_binary(&args.index)?;
    let queries = read_sequences(&args.queries, tf.model.alphabet_b())?;
    let searcher = Searcher::new(&tf.tree, &ix.bands, &ix.index, &ix.database, &tf.model)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    if args.top1 {
        for (q, y) in queries.iter().enumerate() {
            let line = match searcher.search_top1(y) {
                Ok((id, score)) => serde_json::json!({"query": q, "best": id, "log_likelihood": score}),
                Err(Error::NoCandidate) => serde_json::json!({"query": q, "best": null}),
                Err(e) => return Err(e),
            };
            writeln!(out, "{line}")?;
        }
    } else {
        for r in searcher.search_batch(&queries, args.delta)? {
            writeln!(out, "{}", serde_json::to_string(&r)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn baseline(args: &BaselineArgs) -> Result<()> {
    match args.method {
        BaselineMethod::Brute => {
            let jd = args.model()?;
            let (Some(data), Some(queries)) = (&args.data, &args.queries) else {
                return Err(Error::InvalidArgument("brute force needs --data and --queries".into()));
            };
            let xs = read_sequences(data, jd.alphabet_a())?;
            let ys = read_sequences(queries, jd.alphabet_b())?;
            let mut stdout = std::io::stdout().lock();
            for (q, y) in ys.iter().enumerate() {
                let r = brute_force(&xs, q, y, &jd, args.delta)?;
                let best = brute_force_top1(&xs, y, &jd).ok().map(|b| b.0);
                writeln!(stdout, "{}", serde_json::json!({"query": q, "hits": r.hits, "best": best, "candidates_checked": r.candidates_checked}))?;
            }
            Ok(())
        }
        BaselineMethod::Minhash | BaselineMethod::LshHamming => {
            let jd = args.model()?;
            let method = match args.method {
                BaselineMethod::Minhash => SignatureMethod::MinHash,
                _ => SignatureMethod::LshHamming,
            };
            let data = generate_pairs(&jd, args.n as usize, args.m as usize, args.s, args.seed)?;
            let stats = banded_signature_search(method, &data.xs, &data.ys, &data.planted, &jd, args.tp, args.seed, &BandedLimits::default())?;
            print_json(&stats)
        }
        BaselineMethod::Dubiner => {
            let p = args.p.ok_or_else(|| Error::InvalidArgument("dubiner needs --p".into()))?;
            let exact = dubiner_hamming_exact(p, args.n, args.s)?;
            let estimate = if args.trials > 0 {
                Some(dubiner_hamming_estimate(p, args.n, args.s, args.trials, args.seed)?)
            } else {
                None
            };
            print_json(&serde_json::json!({"exact": exact, "estimate": estimate}))
        }
        BaselineMethod::MipsCheck => {
            let jd = args.model()?;
            let emb = MipsEmbedding::new(&jd);
            let data = generate_pairs(&jd, args.n as usize, args.m as usize, args.s, args.seed)?;
            let mut max_err = 0.0f64;
            let mut checked = 0usize;
            for (x, y) in data.planted.iter().take(100) {
                let (x, y) = (&data.xs[*x as usize], &data.ys[*y as usize]);
                let dot = sparse_dot(&emb.embed_x(x)?, &emb.embed_y(y)?);
                let want = jd.log_likelihood_ratio(x, y)?;
                if dot.is_finite() || want.is_finite() {
                    max_err = max_err.max((dot - want).abs());
                }
                checked += 1;
            }
            let cross = match (data.xs.get(1), data.ys.first()) {
                (Some(x), Some(y)) => Some(sparse_dot(&emb.embed_x(x)?, &emb.embed_y(y)?)),
                _ => None,
            };
            print_json(&serde_json::json!({"pairs_checked": checked, "max_abs_error": max_err, "unrelated_pair_score": cross}))
        }
    }
}

fn gen(args: &GenArgs) -> Result<()> {
    let jd = args.model.load()?;
    let data = generate_pairs(&jd, args.n, args.m, args.s, args.seed)?;
    fs::create_dir_all(&args.out_dir)?;
    write_sequences(args.out_dir.join("x.txt"), jd.alphabet_a(), &data.xs)?;
    write_sequences(args.out_dir.join("y.txt"), jd.alphabet_b(), &data.ys)?;
    let mut w = BufWriter::new(File::create(args.out_dir.join("planted.csv"))?);
    writeln!(w, "x,y")?;
    for (x, y) in &data.planted {
        writeln!(w, "{x},{y}")?;
    }
    w.flush()?;
    print_json(&serde_json::json!({"n": data.xs.len(), "m": data.ys.len(), "planted": data.planted.len(), "seed": args.seed}))
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let transform = LogRank::new(args.base, args.levels)?;
    let file = File::open(&args.ranks).map_err(|e| Error::from(e).context(args.ranks.display().to_string()))?;
    let seqs = ingest_ranks(BufReader::new(file), &transform)?;
    write_sequences(&args.out, &transform.alphabet(), &seqs)?;
    print_json(&serde_json::json!({"items": seqs.len(), "alphabet": transform.alphabet().symbols()}))
}

fn bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.out_dir {
        cfg.output_dir = Some(dir.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = forest_dsh::run_experiment(&cfg)?;
    print_json(&serde_json::json!({
        "records": out.records,
        "slopes": out.slopes,
        "tables": out.tables.iter().map(|t| &t.name).collect::<Vec<_>>(),
    }))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SolveParams(a) => solve(a),
        Command::BuildTree(a) => build(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Baseline(a) => baseline(a),
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else if e.is_budget() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
