//! `zlap`: zero-shot classification over precomputed embeddings.
//!
//! The pipeline is a chain of small commands, each reading and writing
//! files so any stage can be rerun on its own:
//!
//! ```text
//! synth -> normalize -> build-graph -> transductive            -> eval
//!                                   \-> precompute -> sparsify -> predict -> eval
//! ```
//!
//! Exit codes: 0 success, 1 validation problem, 2 file/format problem,
//! 3 numerical failure.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use zlap::embeddings::{
    average_class_prompts, l2_normalize, load_class_names, load_features, load_labels,
    write_features, write_labels, PromptGroup,
};
use zlap::graph::{
    build_bimodal_adjacency, load_graph, normalize_symmetric, shortest_path_coverage, symmetrize,
    write_graph, GraphConfig, KnnMode, SparsifyMode,
};
use zlap::harness::{accuracy, generate_bimodal, EvalReport, SynthConfig};
use zlap::inference::{
    build_indicator, dual_inductive_predict, fast_inductive_predict, load_scores, precompute_y,
    sparsify_y, write_scores, Prediction,
};
use zlap::solver::{dense_solve_oracle, LaplacianOperator, SolveConfig};
use zlap::{Features, Scores};

#[derive(Parser)]
#[command(
    name = "zlap",
    about = "Zero-shot transductive and inductive classification via graph label propagation",
    after_help = "Any flag can also come from a config file (--config): plain `key = value` \
                  lines, keys named like the long flags without the leading dashes, `#` comments. \
                  Explicit flags win over the file."
)]
struct Cli {
    /// Optional key=value config file supplying flag defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads (default: ZLAP_THREADS, then all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bimodal dataset (features + labels).
    Synth(SynthArgs),
    /// L2-normalize a feature file, optionally collapsing prompt groups.
    Normalize(NormalizeArgs),
    /// Build, normalize and store the bimodal propagation graph.
    BuildGraph(BuildGraphArgs),
    /// Classify every image node of a graph.
    Transductive(TransductiveArgs),
    /// Solve the per-class systems and store the score matrix.
    Precompute(PrecomputeArgs),
    /// Thin a dense score matrix down to its largest entries.
    Sparsify(SparsifyArgs),
    /// Classify held-out queries against a stored graph or score matrix.
    Predict(PredictArgs),
    /// Score a predictions file against ground-truth labels.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "N")]
    classes: Option<usize>,
    #[arg(long, value_name = "N")]
    images_per_class: Option<usize>,
    #[arg(long, value_name = "D")]
    dim: Option<usize>,
    /// Per-coordinate noise standard deviation.
    #[arg(long, value_name = "F")]
    spread: Option<f64>,
    /// Length of the shared image-text offset.
    #[arg(long, value_name = "F")]
    gap: Option<f64>,
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out_images: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_classes: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_labels: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    /// Input feature file.
    #[arg(long, value_name = "PATH")]
    images: PathBuf,
    /// When set, input rows are prompt groups: P consecutive rows per class
    /// are averaged into one class vector before normalization.
    #[arg(long, value_name = "P")]
    prompts_per_class: Option<usize>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long, value_name = "PATH")]
    images: PathBuf,
    #[arg(long, value_name = "PATH")]
    classes: PathBuf,
    /// Output graph file (normalized adjacency).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    graph: GraphFlags,
    /// Ground-truth labels, needed only by --diagnose-paths.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Print the percentage of images within n hops of their class node,
    /// for n up to this bound.
    #[arg(long, value_name = "N")]
    diagnose_paths: Option<usize>,
}

#[derive(Args)]
struct TransductiveArgs {
    #[arg(long, value_name = "PATH")]
    graph: PathBuf,
    /// Output predictions TSV.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Ground-truth labels; when given, an accuracy report is printed.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Propagation strength in (0, 1).
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    #[command(flatten)]
    solve: SolveFlags,
    /// Solve densely instead of by conjugate gradient (small graphs only).
    #[arg(long)]
    oracle: bool,
    /// Report stage timing.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[arg(long, value_name = "PATH")]
    graph: PathBuf,
    /// Output score-matrix file.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Propagation strength in (0, 1).
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    #[command(flatten)]
    solve: SolveFlags,
    /// Report stage timing.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SparsifyArgs {
    /// Input dense score matrix.
    #[arg(long, value_name = "PATH")]
    yhat: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// row, column or global.
    #[arg(long, value_name = "MODE")]
    sparsify_mode: Option<String>,
    /// Entries kept per row/column (times rows, in global mode).
    #[arg(long, value_name = "XI")]
    xi: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Held-out query features.
    #[arg(long, value_name = "PATH")]
    queries: PathBuf,
    /// The image features the graph was built from.
    #[arg(long, value_name = "PATH")]
    images: PathBuf,
    #[arg(long, value_name = "PATH")]
    classes: PathBuf,
    /// Stored graph: enables the exact dual path (one solve per query).
    #[arg(long, value_name = "PATH")]
    graph: Option<PathBuf>,
    /// Stored score matrix: enables the fast path (no solves).
    #[arg(long, value_name = "PATH")]
    yhat: Option<PathBuf>,
    /// Output predictions TSV.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    graph_cfg: GraphFlags,
    #[command(flatten)]
    solve: SolveFlags,
    /// Report mean per-query latency.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions TSV as written by transductive/predict.
    #[arg(long, value_name = "PATH")]
    pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    /// Optional class-name file for readable per-class lines.
    #[arg(long, value_name = "PATH")]
    class_names: Option<PathBuf>,
}

/// Graph-construction hyperparameters, shared by build-graph and predict.
#[derive(Args)]
struct GraphFlags {
    /// Image neighbors per image; also the class neighbor count unless
    /// --k-class overrides it.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// Class neighbors per image.
    #[arg(long, value_name = "K")]
    k_class: Option<usize>,
    /// Cross-modal power-transform exponent.
    #[arg(long, value_name = "G")]
    gamma: Option<f64>,
    /// Propagation strength in (0, 1).
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Treat class vectors as image-space proxies: defaults switch to
    /// k=10, gamma=3, and stored values are min-max rescaled before the
    /// power transform.
    #[arg(long)]
    proxy_mode: bool,
    /// separate (production) or joint (diagnostic).
    #[arg(long, value_name = "MODE")]
    knn_mode: Option<String>,
}

/// Solver controls, shared by every command that runs conjugate gradient.
#[derive(Args)]
struct SolveFlags {
    /// Relative residual tolerance.
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<zlap::Error>() {
            return match e {
                zlap::Error::Format(_) | zlap::Error::Size(_) | zlap::Error::Io(_) => 2,
                zlap::Error::Numerical { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overlay = Overlay::load(cli.config.as_deref())?;
    let threads = cli
        .threads
        .or(overlay.get("threads")?)
        .or_else(|| std::env::var("ZLAP_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if n == 0 {
            bail!(zlap::Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool already initialized")?;
    }

    match cli.command {
        Command::Synth(args) => cmd_synth(args, &overlay),
        Command::Normalize(args) => cmd_normalize(args),
        Command::BuildGraph(args) => cmd_build_graph(args, &overlay),
        Command::Transductive(args) => cmd_transductive(args, &overlay),
        Command::Precompute(args) => cmd_precompute(args, &overlay),
        Command::Sparsify(args) => cmd_sparsify(args, &overlay),
        Command::Predict(args) => cmd_predict(args, &overlay),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Key = value fallback source for flags.
struct Overlay {
    map: HashMap<String, String>,
}

impl Overlay {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!(zlap::Error::Config(format!(
                        "{}:{}: expected key = value, got {line:?}",
                        path.display(),
                        lineno + 1
                    )))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                anyhow!(zlap::Error::Config(format!("config key {key} = {raw:?}: {e}")))
            }),
        }
    }

    fn get_flag(&self, key: &str) -> anyhow::Result<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }
}

fn parse_knn_mode(raw: &str) -> anyhow::Result<KnnMode> {
    match raw {
        "separate" => Ok(KnnMode::Separate),
        "joint" => Ok(KnnMode::Joint),
        other => bail!(zlap::Error::Config(format!(
            "--knn-mode must be separate or joint, got {other:?}"
        ))),
    }
}

fn parse_sparsify_mode(raw: &str) -> anyhow::Result<SparsifyMode> {
    match raw {
        "row" => Ok(SparsifyMode::Row),
        "column" => Ok(SparsifyMode::Column),
        "global" => Ok(SparsifyMode::Global),
        other => bail!(zlap::Error::Config(format!(
            "--sparsify-mode must be row, column or global, got {other:?}"
        ))),
    }
}

impl GraphFlags {
    fn resolve(&self, overlay: &Overlay) -> anyhow::Result<GraphConfig> {
        let proxy = self.proxy_mode || overlay.get_flag("proxy-mode")?;
        let base = if proxy { GraphConfig::proxy_defaults() } else { GraphConfig::default() };
        let k = self.k.or(overlay.get("k")?);
        let knn_mode = match self
            .knn_mode
            .clone()
            .or(overlay.get("knn-mode")?)
        {
            Some(raw) => parse_knn_mode(&raw)?,
            None => KnnMode::Separate,
        };
        Ok(GraphConfig {
            k_image: k.unwrap_or(base.k_image),
            k_class: self.k_class.or(overlay.get("k-class")?).or(k).unwrap_or(base.k_class),
            gamma: self.gamma.or(overlay.get("gamma")?).unwrap_or(base.gamma),
            alpha: self.alpha.or(overlay.get("alpha")?).unwrap_or(base.alpha),
            minmax_cross_modal: proxy,
            knn_mode,
            ..base
        })
    }
}

impl SolveFlags {
    fn resolve(&self, overlay: &Overlay) -> anyhow::Result<SolveConfig> {
        let defaults = SolveConfig::default();
        Ok(SolveConfig {
            rel_tolerance: self.tol.or(overlay.get("tol")?).unwrap_or(defaults.rel_tolerance),
            max_iterations: self
                .max_iters
                .or(overlay.get("max-iters")?)
                .unwrap_or(defaults.max_iterations),
        })
    }
}

fn resolve_alpha(flag: Option<f64>, overlay: &Overlay) -> anyhow::Result<f64> {
    Ok(flag.or(overlay.get("alpha")?).unwrap_or(GraphConfig::default().alpha))
}

fn cmd_synth(args: SynthArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        classes: args.classes.or(overlay.get("classes")?).unwrap_or(defaults.classes),
        images_per_class: args
            .images_per_class
            .or(overlay.get("images-per-class")?)
            .unwrap_or(defaults.images_per_class),
        dim: args.dim.or(overlay.get("dim")?).unwrap_or(defaults.dim),
        cluster_spread: args.spread.or(overlay.get("spread")?).unwrap_or(defaults.cluster_spread),
        modality_gap: args.gap.or(overlay.get("gap")?).unwrap_or(defaults.modality_gap),
        seed: args.seed.or(overlay.get("seed")?).unwrap_or(defaults.seed),
    };
    let (images, classes, labels) = generate_bimodal::<f32>(&cfg)?;
    write_features(&args.out_images, &images)?;
    write_features(&args.out_classes, &classes)?;
    write_labels(&args.out_labels, &labels)?;
    println!(
        "synth: {} images, {} classes, dim {}, spread {}, gap {}, seed {}",
        images.rows(),
        classes.rows(),
        cfg.dim,
        cfg.cluster_spread,
        cfg.modality_gap,
        cfg.seed
    );
    Ok(())
}

fn cmd_normalize(args: NormalizeArgs) -> anyhow::Result<()> {
    let features: Features = load_features(&args.images)?;
    let mut out = match args.prompts_per_class {
        Some(p) => {
            let group = PromptGroup::new(features, p)?;
            average_class_prompts(&group)?
        }
        None => features,
    };
    l2_normalize(&mut out)?;
    write_features(&args.out, &out)?;
    println!("normalize: wrote {} rows of dim {}", out.rows(), out.dim());
    Ok(())
}

fn warn_if_unnormalized(features: &Features, what: &str) {
    let worst = (0..features.rows())
        .map(|i| {
            let norm: f64 = features.row(i).iter().map(|&v| (v as f64) * (v as f64)).sum();
            (norm.sqrt() - 1.0).abs()
        })
        .fold(0.0f64, f64::max);
    if worst > 1e-3 {
        eprintln!(
            "warning: {what} rows deviate from unit norm by up to {worst:.3}; \
             similarities assume normalized features (see `zlap normalize`)"
        );
    }
}

fn cmd_build_graph(args: BuildGraphArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let cfg = args.graph.resolve(overlay)?;
    let images: Features = load_features(&args.images)?;
    let classes: Features = load_features(&args.classes)?;
    warn_if_unnormalized(&images, "image");
    warn_if_unnormalized(&classes, "class");

    let start = Instant::now();
    let s = build_bimodal_adjacency(&images, &classes, &cfg)?;
    let cross = s.cross_modal_edge_count();
    let intra = s.nnz() - cross;
    let sbar = symmetrize(&s);
    let shat = normalize_symmetric(&sbar)?;
    write_graph(&args.out, &shat)?;
    println!(
        "graph: {} nodes ({} text, {} image), {} directed edges",
        shat.node_count(),
        shat.text_count(),
        shat.image_count(),
        s.nnz()
    );
    println!("  image-to-image edges: {intra}");
    println!("  image-to-text edges:  {cross}");
    println!("  symmetrized entries:  {}", shat.nnz());
    println!("  built in {:.2?}", start.elapsed());

    if let Some(n_max) = args.diagnose_paths {
        let labels_path = args.labels.as_ref().ok_or_else(|| {
            anyhow!(zlap::Error::Config("--diagnose-paths needs --labels".into()))
        })?;
        let labels = load_labels(labels_path)?;
        if labels.len() != shat.image_count() {
            bail!(zlap::Error::Shape(format!(
                "{} labels vs {} image nodes",
                labels.len(),
                shat.image_count()
            )));
        }
        labels.validate(shat.text_count())?;
        let coverage = shortest_path_coverage(&shat, &labels, n_max);
        for (n, pct) in coverage.iter().enumerate() {
            println!("  within {} hop(s) of own class: {pct:.1}%", n + 1);
        }
    }
    Ok(())
}

/// Writes predictions as `query_index<TAB>class<TAB>score`, appending a
/// status column when any prediction needs flagging.
fn write_predictions(path: &Path, preds: &[Prediction<f32>]) -> anyhow::Result<bool> {
    let flagged = preds.iter().any(|p| !p.converged || p.degenerate);
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, p) in preds.iter().enumerate() {
        let score = p.scores.get(p.class).copied().unwrap_or(0.0);
        if flagged {
            let status = if p.degenerate {
                "degenerate"
            } else if !p.converged {
                "nonconverged"
            } else {
                "ok"
            };
            writeln!(w, "{i}\t{}\t{score}\t{status}", p.class)?;
        } else {
            writeln!(w, "{i}\t{}\t{score}", p.class)?;
        }
    }
    w.flush()?;
    Ok(flagged)
}

fn print_report(report: &EvalReport, names: Option<&[String]>) {
    println!(
        "accuracy: {:.2}% ({}/{} correct, {} classes)",
        report.overall, report.correct, report.total, report.classes
    );
    for (c, pct) in report.per_class.iter().enumerate() {
        let name = names
            .and_then(|n| n.get(c))
            .map(|n| format!(" {n}"))
            .unwrap_or_default();
        println!("  class {c}{name}: {pct:.2}%");
    }
}

fn cmd_transductive(args: TransductiveArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let solve_cfg = args.solve.resolve(overlay)?;
    let alpha = resolve_alpha(args.alpha, overlay)?;
    let shat = load_graph::<f32>(&args.graph)?;
    let op = LaplacianOperator::new(&shat, alpha)?;
    let start = Instant::now();
    let preds = if args.oracle {
        let c = shat.text_count();
        let n = shat.node_count();
        let mut columns = Vec::with_capacity(c);
        for class in 0..c {
            let mut e = vec![0.0f64; n];
            e[class] = 1.0;
            columns.push(dense_solve_oracle(&shat, alpha, &e)?);
        }
        (c..n)
            .map(|node| {
                let scores: Vec<f32> = columns.iter().map(|col| col[node] as f32).collect();
                let class = scores
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > scores[best] { i } else { best });
                Prediction { class, scores, converged: true, degenerate: false }
            })
            .collect()
    } else {
        zlap::inference::transductive_predict(&op, &solve_cfg)?.0
    };
    let elapsed = start.elapsed();

    let flagged = write_predictions(&args.out, &preds)?;
    if flagged {
        eprintln!("warning: some solves did not reach tolerance; predictions carry a status column");
    }
    println!("transductive: {} images classified", preds.len());
    if args.timing {
        println!(
            "  solve stage: {:.2?} total, {:.1} us/image",
            elapsed,
            elapsed.as_secs_f64() * 1e6 / preds.len().max(1) as f64
        );
    }
    if let Some(labels_path) = &args.labels {
        let labels = load_labels(labels_path)?;
        let classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let report = accuracy(&classes, &labels)?;
        print_report(&report, None);
    }
    Ok(())
}

fn cmd_precompute(args: PrecomputeArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let solve_cfg = args.solve.resolve(overlay)?;
    let alpha = resolve_alpha(args.alpha, overlay)?;
    let shat = load_graph::<f32>(&args.graph)?;
    let op = LaplacianOperator::new(&shat, alpha)?;
    let start = Instant::now();
    let (scores, flags) = precompute_y(&op, &solve_cfg)?;
    let elapsed = start.elapsed();
    let stalled = flags.iter().filter(|&&f| !f).count();
    if stalled > 0 {
        eprintln!("warning: {stalled} of {} class systems did not reach tolerance", flags.len());
    }
    write_scores(&args.out, &scores)?;
    println!(
        "precompute: {} x {} score matrix ({} entries)",
        scores.nodes(),
        scores.classes(),
        scores.nnz()
    );
    if args.timing {
        println!("  solved {} systems in {:.2?}", scores.classes(), elapsed);
    }
    Ok(())
}

fn cmd_sparsify(args: SparsifyArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let mode_raw = args
        .sparsify_mode
        .or(overlay.get("sparsify-mode")?)
        .unwrap_or_else(|| "row".to_string());
    let mode = parse_sparsify_mode(&mode_raw)?;
    let xi = args.xi.or(overlay.get("xi")?).unwrap_or(1);
    let dense: Scores = load_scores(&args.yhat)?;
    let total = dense.nnz();
    let sparse = sparsify_y(&dense, mode, xi)?;
    write_scores(&args.out, &sparse)?;
    println!(
        "sparsify: kept {} of {} entries ({:.2}%), mode {mode_raw}, xi {xi}",
        sparse.nnz(),
        total,
        100.0 * sparse.nnz() as f64 / total.max(1) as f64
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs, overlay: &Overlay) -> anyhow::Result<()> {
    let cfg = args.graph_cfg.resolve(overlay)?;
    let solve_cfg = args.solve.resolve(overlay)?;
    let queries: Features = load_features(&args.queries)?;
    let images: Features = load_features(&args.images)?;
    let classes: Features = load_features(&args.classes)?;
    warn_if_unnormalized(&queries, "query");

    // Indicator construction is common to both paths.
    let start = Instant::now();
    let indicators: Vec<zlap::Indicator> = (0..queries.rows())
        .map(|i| build_indicator(queries.row(i), &images, &classes, &cfg))
        .collect::<zlap::Result<_>>()?;
    let indicator_time = start.elapsed();

    let start = Instant::now();
    let (preds, path_name): (Vec<Prediction<f32>>, &str) = match (&args.yhat, &args.graph) {
        (Some(yhat), _) => {
            let scores: Scores = load_scores(yhat)?;
            let preds = indicators
                .iter()
                .map(|ind| fast_inductive_predict(ind, &scores))
                .collect::<zlap::Result<_>>()?;
            (preds, "fast")
        }
        (None, Some(graph)) => {
            let shat = load_graph::<f32>(graph)?;
            let op = LaplacianOperator::new(&shat, cfg.alpha)?;
            let preds = indicators
                .iter()
                .map(|ind| dual_inductive_predict(&op, ind, &solve_cfg))
                .collect::<zlap::Result<_>>()?;
            (preds, "dual")
        }
        (None, None) => {
            bail!(zlap::Error::Config(
                "predict needs --yhat (fast path) or --graph (dual path)".into()
            ))
        }
    };
    let predict_time = start.elapsed();

    let flagged = write_predictions(&args.out, &preds)?;
    if flagged {
        eprintln!("warning: some predictions are flagged; see the status column");
    }
    println!("predict: {} queries via the {path_name} path", preds.len());
    if args.timing {
        let q = preds.len().max(1) as f64;
        println!(
            "  indicators: {:.1} us/query, prediction: {:.1} us/query",
            indicator_time.as_secs_f64() * 1e6 / q,
            predict_time.as_secs_f64() * 1e6 / q
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let labels = load_labels(&args.labels)?;
    let names = args.class_names.as_ref().map(load_class_names).transpose()?;
    let text = fs::read_to_string(&args.pred)
        .with_context(|| format!("reading predictions {}", args.pred.display()))?;
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parse = |f: Option<&str>, what: &str| -> anyhow::Result<usize> {
            f.and_then(|v| v.parse().ok()).ok_or_else(|| {
                anyhow!(zlap::Error::Data(format!(
                    "{}:{}: bad {what} field",
                    args.pred.display(),
                    lineno + 1
                )))
            })
        };
        let idx = parse(fields.next(), "query index")?;
        let class = parse(fields.next(), "class")?;
        rows.push((idx, class));
    }
    rows.sort_unstable_by_key(|&(idx, _)| idx);
    let predictions: Vec<usize> = rows.iter().map(|&(_, class)| class).collect();
    let report = accuracy(&predictions, &labels)?;
    print_report(&report, names.as_deref());
    Ok(())
}
