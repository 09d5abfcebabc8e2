//! Command-line front end: generate synthetic data, split it, train a
//! metric, evaluate it, and inspect the aggregation bounds.
//!
//! Every successful run prints one machine-parsable `RESULT key=value ...`
//! line on stdout. Exit codes: 0 success, 1 data/numeric error, 2 usage
//! error. Re-running a verb with identical flags reproduces identical
//! output files byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use adml::{
    aggregate_svd, bound_report, detect_label_mode, gen_coiled_surfaces, load_csv, normalize,
    pair_histogram, projection_csv, random_split, save_csv, Algo, BoundReport, CoiledParams,
    JobConfig, LabeledDataset, MetricModel, PartitionSpec, PatchSpec, SolveMode,
    TagStats,
};

#[derive(Parser)]
#[command(name = "adml", version, about = "Discriminative metric learning with subset aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-class coiled-surface synthetic dataset as CSV.
    Gen(GenArgs),
    /// Assign samples to random subsets and write the plan as CSV.
    Split(SplitArgs),
    /// Learn a metric and write the model file.
    Train(TrainArgs),
    /// Score a model: kNN accuracy or tag-annotation macro-F1.
    Eval(EvalArgs),
    /// Recompute subset solutions and check the aggregation bounds.
    Bounds(BoundsArgs),
    /// Histogram of within/between-class pair distances under a model.
    Hist(HistArgs),
    /// Project a dataset into the learned subspace as CSV.
    Project(ProjectArgs),
}

fn parse_positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive finite number, got {s}"))
    }
}

fn parse_nonneg_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a non-negative finite number, got {s}"))
    }
}

fn parse_positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("must be at least 1".into())
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000, value_parser = parse_positive_usize)]
    n_per_class: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_nonneg_f64)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 3.0, value_parser = parse_positive_f64)]
    z_halfwidth: f64,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive_f64)]
    turns: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PartitionArgs {
    /// Number of subsets (mutually exclusive with --subset-size).
    #[arg(long, conflicts_with = "subset_size")]
    k: Option<usize>,
    /// Samples per subset; the subset count is derived.
    #[arg(long)]
    subset_size: Option<usize>,
}

impl PartitionArgs {
    fn to_spec(&self) -> PartitionSpec {
        match (self.k, self.subset_size) {
            (Some(k), _) => PartitionSpec::Count(k),
            (None, Some(size)) => PartitionSpec::SubsetSize(size),
            (None, None) => PartitionSpec::SubsetSize(600),
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Input dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    partition: PartitionArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output plan CSV (`sample_id,subset`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ddml,
    Adml1,
    Adml2,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Ddml => Algo::Ddml,
            AlgoArg::Adml1 => Algo::Adml1,
            AlgoArg::Adml2 => Algo::Adml2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Direct,
    Gram,
}

impl From<SolverArg> for SolveMode {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Auto => SolveMode::Auto,
            SolverArg::Direct => SolveMode::Direct,
            SolverArg::Gram => SolveMode::Gram,
        }
    }
}

#[derive(Args)]
struct PatchArgs {
    /// Within-class neighbours per patch.
    #[arg(long, default_value_t = 10)]
    kw: usize,
    /// Between-class neighbours per patch.
    #[arg(long, default_value_t = 20)]
    kb: usize,
    /// Between-class push weight.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
}

impl PatchArgs {
    fn to_spec(&self) -> anyhow::Result<PatchSpec> {
        Ok(PatchSpec::new(self.kw, self.kb, self.beta)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Adml2)]
    algo: AlgoArg,
    #[command(flatten)]
    partition: PartitionArgs,
    #[command(flatten)]
    patch: PatchArgs,
    /// Subspace dimension of the learned metric.
    #[arg(long, default_value_t = 2)]
    q: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
    /// Gram-route regularizer (default: 1e-8 * tr(G)/N_k).
    #[arg(long)]
    ridge: Option<f64>,
    /// Normalize features before training.
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Largest dimension for which dense d*d work is allowed.
    #[arg(long, default_value_t = 2000)]
    dense_cap: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Knn,
    Annotate,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: EvalTask,
    /// Reference (training) dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Query dataset CSV.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Neighbour count (annotation caps at 15).
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Normalize both sets with the reference set's statistics.
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Optional CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Training dataset CSV (the bound constants need its subsets).
    #[arg(long)]
    data: PathBuf,
    /// Aggregated model file.
    #[arg(long)]
    model: PathBuf,
    /// Wholistic reference model file (the comparison target).
    #[arg(long)]
    wholistic_model: PathBuf,
    #[command(flatten)]
    partition: PartitionArgs,
    #[command(flatten)]
    patch: PatchArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = false)]
    normalize: bool,
    #[arg(long, default_value_t = 2000)]
    dense_cap: usize,
    /// Append the report as one CSV row (header written if new file).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10000)]
    pairs: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Output histogram CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Output projection CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match err.downcast_ref::<adml::AdmlError>() {
                Some(lib_err) => eprintln!("error[{}]: {err:#}", lib_err.code()),
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<LabeledDataset> {
    let mode = detect_label_mode(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let ds = load_csv(path, mode).with_context(|| format!("loading {}", path.display()))?;
    Ok(ds)
}

/// Normalize `main` with its own statistics and carry `other` along with
/// the same transform.
fn normalize_pair(
    main: LabeledDataset,
    other: Option<LabeledDataset>,
) -> anyhow::Result<(LabeledDataset, Option<LabeledDataset>)> {
    let (main_norm, stats) = normalize(&main);
    let other_norm = match other {
        Some(ds) => Some(stats.transform(&ds)?),
        None => None,
    };
    Ok((main_norm, other_norm))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen(args) => {
            let params = CoiledParams {
                n_per_class: args.n_per_class,
                noise_sigma: args.noise_sigma,
                z_halfwidth: args.z_halfwidth,
                turns: args.turns,
            };
            let ds = gen_coiled_surfaces(&params, args.seed);
            save_csv(&ds, &args.out)?;
            println!(
                "RESULT verb=gen n={} d={} seed={} out={}",
                ds.len(),
                ds.dim(),
                args.seed,
                args.out.display()
            );
        }
        Command::Split(args) => {
            let ds = load_dataset(&args.data)?;
            let (views, plan) = random_split(&ds, args.partition.to_spec(), args.seed)?;
            let mut out = String::from("sample_id,subset\n");
            for (sample, subset) in plan.assignment.iter().enumerate() {
                out.push_str(&format!("{sample},{subset}\n"));
            }
            std::fs::write(&args.out, out)?;
            let sizes: Vec<usize> = views.iter().map(|v| v.len()).collect();
            println!(
                "RESULT verb=split n={} k={} min_size={} max_size={} seed={} out={}",
                ds.len(),
                plan.k,
                sizes.iter().min().unwrap(),
                sizes.iter().max().unwrap(),
                args.seed,
                args.out.display()
            );
        }
        Command::Train(args) => {
            let ds = load_dataset(&args.data)?;
            let cfg = JobConfig {
                patch: args.patch.to_spec()?,
                q: args.q,
                algo: args.algo.into(),
                partition: args.partition.to_spec(),
                workers: args.workers,
                seed: args.seed,
                solve_mode: args.solver.into(),
                ridge: args.ridge,
                collect_dense: false,
                normalize: args.normalize,
                dense_cap: args.dense_cap,
            };
            let model = adml::train(&ds, &cfg)?;
            model.save(&args.out)?;
            let t = model.meta.timings;
            println!(
                "RESULT verb=train algo={} d={} q={} k={} degenerate={} split_ms={:.1} map_ms={:.1} reduce_ms={:.1} out={}",
                model.meta.algo,
                model.dim(),
                model.subspace_dim(),
                model.meta.k,
                model.meta.degenerate.len(),
                t.split_ms,
                t.map_ms,
                t.reduce_ms,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let reference = load_dataset(&args.data)?;
            let queries = load_dataset(&args.test)?;
            let (reference, queries) = if args.normalize {
                let (r, q) = normalize_pair(reference, Some(queries))?;
                (r, q.unwrap())
            } else {
                (reference, queries)
            };
            let model = MetricModel::load(&args.model)?;
            match args.task {
                EvalTask::Knn => {
                    let accuracy = adml::knn_accuracy(&reference, &model, &queries, args.k)?;
                    if let Some(report) = &args.report {
                        std::fs::write(
                            report,
                            format!("task,k,n_test,accuracy\nknn,{},{},{}\n", args.k, queries.len(), accuracy),
                        )?;
                    }
                    println!(
                        "RESULT verb=eval task=knn k={} n_test={} accuracy={:.6}",
                        args.k,
                        queries.len(),
                        accuracy
                    );
                }
                EvalTask::Annotate => {
                    let stats = TagStats::from_reference(&reference)?;
                    let predictions =
                        adml::annotate_batch(&reference, &stats, &model, &queries, args.k)?;
                    let truth = match queries.labels() {
                        adml::Labels::Multilabel(sets) => sets.clone(),
                        adml::Labels::Categorical(_) => {
                            bail!("annotation needs a multilabel test set")
                        }
                    };
                    let scores =
                        adml::f1_scores_over(&predictions, &truth, &stats.vocabulary())?;
                    if let Some(report) = &args.report {
                        let mut out = String::from("tag,f1\n");
                        for (tag, f1) in &scores.per_tag {
                            out.push_str(&format!("{tag},{f1}\n"));
                        }
                        out.push_str(&format!("macro,{}\n", scores.macro_f1));
                        std::fs::write(report, out)?;
                    }
                    println!(
                        "RESULT verb=eval task=annotate k={} n_test={} tags={} macro_f1={:.6}",
                        args.k,
                        queries.len(),
                        scores.per_tag.len(),
                        scores.macro_f1
                    );
                }
            }
        }
        Command::Bounds(args) => {
            let ds = load_dataset(&args.data)?;
            let ds = if args.normalize { normalize(&ds).0 } else { ds };
            let model = MetricModel::load(&args.model)?;
            let wholistic = MetricModel::load(&args.wholistic_model)?;
            if model.dim() != ds.dim() || wholistic.dim() != ds.dim() {
                bail!(
                    "dimension mismatch: data d={}, model d={}, wholistic d={}",
                    ds.dim(),
                    model.dim(),
                    wholistic.dim()
                );
            }
            if model.subspace_dim() != wholistic.subspace_dim() {
                bail!(
                    "subspace mismatch: model q={}, wholistic q={}",
                    model.subspace_dim(),
                    wholistic.subspace_dim()
                );
            }
            let cfg = JobConfig {
                patch: args.patch.to_spec()?,
                q: model.subspace_dim(),
                algo: model.meta.algo,
                partition: args.partition.to_spec(),
                workers: args.workers,
                seed: args.seed,
                solve_mode: args.solver.into(),
                ridge: args.ridge,
                collect_dense: true,
                normalize: false,
                dense_cap: args.dense_cap,
            };
            let (views, _) = random_split(&ds, cfg.partition, cfg.seed)?;
            let mut results = Vec::new();
            for view in &views {
                match adml::map_task(view, &cfg) {
                    Ok(r) => results.push(r),
                    Err(adml::AdmlError::SubsetDegenerate { subset }) => {
                        eprintln!("warning: subset {subset} degenerate, skipped");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if results.is_empty() {
                bail!("no usable subsets");
            }
            results.sort_by_key(|r| r.subset_id);
            let dense: Vec<_> = results
                .iter()
                .map(|r| r.dense.clone().ok_or(adml::AdmlError::MissingDense))
                .collect::<Result<_, _>>()?;
            let solutions: Vec<_> = results.iter().map(|r| r.solution.clone()).collect();
            let weighted: Vec<_> = results.iter().map(|r| r.weighted.clone()).collect();
            let singular_d = match model.meta.algo {
                Algo::Adml2 => Some(aggregate_svd(&weighted)?.singular_values),
                _ => None,
            };
            let report = bound_report(
                &dense,
                &solutions,
                &model.projection,
                &wholistic.projection,
                singular_d.as_deref(),
            )?;
            print!("{}", report.to_text());
            if let Some(csv_path) = &args.csv {
                let mut body = if csv_path.exists() {
                    std::fs::read_to_string(csv_path)?
                } else {
                    format!("{}\n", BoundReport::csv_header())
                };
                body.push_str(&report.to_csv_row());
                body.push('\n');
                std::fs::write(csv_path, body)?;
            }
            println!(
                "RESULT verb=bounds k={} lhs={:.6e} rhs1={:.6e} flag1={} rhs3_corrected={:.6e} flag3_corrected={}",
                report.k,
                report.lhs,
                report.rhs1,
                report.flag1,
                report.rhs3_corrected,
                report.flag3_corrected
            );
        }
        Command::Hist(args) => {
            let ds = load_dataset(&args.data)?;
            let ds = if args.normalize { normalize(&ds).0 } else { ds };
            let model = MetricModel::load(&args.model)?;
            let hist = pair_histogram(&ds, &model, args.pairs, args.bins, args.seed)?;
            std::fs::write(&args.out, hist.to_csv())?;
            println!(
                "RESULT verb=hist pairs={} bins={} mean_within={:.6} mean_between={:.6} normalizer={:.6} out={}",
                hist.n_pairs,
                hist.bins,
                hist.mean_within,
                hist.mean_between,
                hist.normalizer,
                args.out.display()
            );
        }
        Command::Project(args) => {
            let ds = load_dataset(&args.data)?;
            let ds = if args.normalize { normalize(&ds).0 } else { ds };
            let model = MetricModel::load(&args.model)?;
            let csv = projection_csv(&ds, &model)?;
            std::fs::write(&args.out, csv)?;
            println!(
                "RESULT verb=project n={} q={} out={}",
                ds.len(),
                model.subspace_dim(),
                args.out.display()
            );
        }
    }
    Ok(())
}
