use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mpnn_core::bench::bench_towers;
use mpnn_core::engine::{MessageFn, ModelConfig, ReadoutFn, UpdateFn};
use mpnn_core::io::{
    generate_synthetic, load_dataset, load_split, parse_qm9_xyz_many, save_dataset, save_split, write_atomic,
    BondSpec,
};
use mpnn_core::model::Mpnn;
use mpnn_core::molgraph::{EdgeRepr, MolecularGraph};
use mpnn_core::params::ModelParams;
use mpnn_core::training::{
    evaluate, random_search, report_csv, split_dataset, train, SearchSpace, Split, SplitSizes, TargetSelection,
    TargetStats, TrainConfig,
};
use mpnn_core::verify;

#[derive(Parser)]
#[command(name = "mpnn", version, about = "Message passing neural networks for molecular property prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert QM9 xyz files (or a synthetic set) into a JSON-lines dataset.
    Prepare(PrepareArgs),
    /// Train one model and write its run log, checkpoint and metadata.
    Train(TrainArgs),
    /// Score a checkpoint and write the per-target report.
    Evaluate(EvaluateArgs),
    /// Random hyperparameter search with validation-based selection.
    Search(SearchArgs),
    /// Count multiplies of one propagation step for several tower counts.
    BenchTowers(BenchArgs),
    /// Run the built-in numerical checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// QM9 xyz files or directories of them.
    #[arg(long, num_args = 1.., conflicts_with = "synthetic")]
    xyz: Vec<PathBuf>,
    /// JSON-lines bond file, one `[[i, j, order], ...]` line per record.
    #[arg(long, requires = "xyz")]
    bonds: Option<PathBuf>,
    /// Generate this many synthetic molecules (implicit hydrogens, analytic
    /// targets) instead of reading xyz files.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    explicit_h: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a split manifest here.
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args, Clone, Copy)]
struct SplitArgs {
    #[arg(long, default_value_t = 10_000)]
    valid: usize,
    #[arg(long, default_value_t = 10_000)]
    test: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeReprArg {
    Chemical,
    Bins,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum MessageArg {
    Matmul,
    Edgenet,
    Pair,
    Dtnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    Ggnn,
    Set2set,
    Dtnnsum,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "raw")]
    edge_repr: EdgeReprArg,
    #[arg(long)]
    explicit_h: bool,
    #[arg(long, value_enum, default_value = "edgenet")]
    message: MessageArg,
    #[arg(long, value_enum, default_value = "set2set")]
    readout: ReadoutArg,
    #[arg(long, default_value_t = 1)]
    towers: usize,
    #[arg(long)]
    virtual_edges: bool,
    /// Add a master node with this state width.
    #[arg(long, value_name = "DIM")]
    master_node: Option<usize>,
    #[arg(long, requires = "master_node")]
    master_in_readout: bool,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    /// Message passing steps T.
    #[arg(long, default_value_t = 3)]
    mp_steps: usize,
    /// set2set processing steps M.
    #[arg(long, default_value_t = 3)]
    s2s_steps: usize,
    /// Use the DTNN residual update instead of the GRU.
    #[arg(long)]
    residual_update: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            message: match self.message {
                MessageArg::Matmul => MessageFn::Matmul,
                MessageArg::Edgenet => MessageFn::EdgeNetwork,
                MessageArg::Pair => MessageFn::Pair,
                MessageArg::Dtnn => MessageFn::Dtnn,
            },
            update: if self.residual_update { UpdateFn::DtnnResidual } else { UpdateFn::Gru },
            readout: match self.readout {
                ReadoutArg::Ggnn => ReadoutFn::Ggnn,
                ReadoutArg::Set2set => ReadoutFn::Set2Set,
                ReadoutArg::Dtnnsum => ReadoutFn::DtnnSum,
            },
            edge_repr: match self.edge_repr {
                EdgeReprArg::Chemical => EdgeRepr::Chemical,
                EdgeReprArg::Bins => EdgeRepr::DistanceBins,
                EdgeReprArg::Raw => EdgeRepr::RawDistance,
            },
            steps: self.mp_steps,
            hidden_dim: self.hidden_dim,
            towers: self.towers,
            master_dim: self.master_node,
            master_in_readout: self.master_in_readout,
            set2set_steps: self.s2s_steps,
            explicit_hydrogens: self.explicit_h,
            virtual_edges: self.virtual_edges,
            ..ModelConfig::default()
        }
    }
}

fn parse_targets(s: &str) -> Result<TargetSelection, String> {
    s.parse().map_err(|e: mpnn_core::Error| e.to_string())
}

#[derive(Args, Clone)]
struct TrainingArgs {
    /// `all` for one joint model, or a single target index or name.
    #[arg(long, default_value = "0", value_parser = parse_targets)]
    targets: TargetSelection,
    /// Optimizer steps.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    decay_start: f64,
    #[arg(long, default_value_t = 0.1)]
    decay_factor: f64,
    #[arg(long, default_value_t = 1000)]
    eval_every: usize,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            targets: self.targets,
            total_steps: self.steps,
            seed: self.seed,
            batch_size: self.batch_size,
            init_lr: self.lr,
            decay_start_fraction: self.decay_start,
            decay_factor: self.decay_factor,
            eval_every: self.eval_every,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Split manifest; without one the data is split with `--valid/--test`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[command(flatten)]
    sizes: SplitArgs,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Validate the configuration, print it and exit without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run metadata written by `train`; defaults to `meta.json` beside the checkpoint.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    subset: Subset,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 9)]
    nodes: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,8")]
    towers: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyWhat {
    All,
    Gradients,
    Invariance,
    Spectral,
    Bins,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    what: VerifyWhat,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    graphs: usize,
}

/// Everything `evaluate` needs besides the parameters.
#[derive(Serialize, Deserialize)]
struct RunMeta {
    model: ModelConfig,
    train: TrainConfig,
    stats: TargetStats,
    best_step: usize,
}

fn xyz_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| e.extension().is_some_and(|x| x == "xyz"));
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let mols = match args.synthetic {
        Some(n) => {
            if args.explicit_h {
                bail!("synthetic molecules carry implicit hydrogens only");
            }
            generate_synthetic(n, args.seed)
        }
        None => {
            if args.xyz.is_empty() {
                bail!("give --xyz files or --synthetic N");
            }
            let mut records = Vec::new();
            for f in xyz_files(&args.xyz)? {
                let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                records.extend(parse_qm9_xyz_many(&text).with_context(|| format!("parsing {}", f.display()))?);
            }
            let bonds: Option<Vec<Vec<BondSpec>>> = match &args.bonds {
                Some(path) => Some(
                    fs::read_to_string(path)?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .enumerate()
                        .map(|(i, l)| {
                            let raw: Vec<(usize, usize, f64)> = serde_json::from_str(l)
                                .with_context(|| format!("bond file line {}", i + 1))?;
                            Ok(raw.into_iter().map(|(a, b, o)| BondSpec(a, b, o)).collect())
                        })
                        .collect::<Result<_>>()?,
                ),
                None => None,
            };
            if let Some(b) = &bonds {
                if b.len() != records.len() {
                    bail!("bond file has {} lines for {} xyz records", b.len(), records.len());
                }
            }
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.to_graph(args.explicit_h, bonds.as_ref().map(|b| b[i].as_slice()))
                        .with_context(|| format!("record {} ({})", i, r.id))
                })
                .collect::<Result<_>>()?
        }
    };
    save_dataset(&args.out, &mols)?;
    log::info!("wrote {} molecules to {}", mols.len(), args.out.display());
    if let Some(path) = args.split_out {
        let split = split_dataset(mols.len(), sizes(args.split), args.seed)?;
        let hash = save_split(&path, &split)?;
        println!("split {hash}");
    }
    println!("{} molecules", mols.len());
    Ok(())
}

fn sizes(s: SplitArgs) -> SplitSizes {
    SplitSizes {
        valid: s.valid,
        test: s.test,
    }
}

fn load_data(args: &DataArgs) -> Result<(Vec<MolecularGraph>, Split, String)> {
    let mols = load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let split = match &args.split {
        Some(p) => load_split(p)?.split,
        None => split_dataset(mols.len(), sizes(args.sizes), args.split_seed)?,
    };
    if split.total() != mols.len() {
        bail!("split covers {} molecules but the dataset has {}", split.total(), mols.len());
    }
    let hash = split.hash();
    Ok((mols, split, hash))
}

fn pick(mols: &[MolecularGraph], idx: &[usize]) -> Vec<MolecularGraph> {
    idx.iter().map(|&i| mols[i].clone()).collect()
}

fn check_hydrogens(mols: &[MolecularGraph], cfg: &ModelConfig) -> Result<()> {
    if let Some(m) = mols.iter().find(|m| m.explicit_hydrogens != cfg.explicit_hydrogens) {
        bail!(
            "dataset has explicit_hydrogens={} but the model was configured with {}; \
             re-run prepare or toggle --explicit-h",
            m.explicit_hydrogens,
            cfg.explicit_hydrogens
        );
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let model_cfg = args.model.config();
    let mut cfg = args.training.config();
    model_cfg.validate()?;
    cfg.validate()?;
    if args.dry_run {
        let plan = serde_json::json!({ "model": model_cfg, "train": cfg, "schedule": {
            "lr_start": cfg.schedule().lr_at(0),
            "lr_end": cfg.schedule().lr_at(cfg.total_steps),
        }});
        println!("{}", serde_json::to_string_pretty(&plan)?);
        return Ok(());
    }
    let (mols, split, hash) = load_data(&args.data)?;
    check_hydrogens(&mols, &model_cfg)?;
    cfg.split_hash = Some(hash);
    fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("run.jsonl");
    let mut log_file = fs::File::create(&log_path)?;
    let (tr, va) = (pick(&mols, &split.train), pick(&mols, &split.valid));
    let outcome = train(&model_cfg, &cfg, &tr, &va, &mut |r| {
        writeln!(log_file, "{}", serde_json::to_string(r)?)?;
        log::info!("step {} lr {:.3e} train_mse {:.5}", r.step, r.lr, r.train_mse);
        Ok(())
    })?;
    write_atomic(&args.out_dir.join("checkpoint.json"), outcome.best_params.to_json()?.as_bytes())?;
    let meta = RunMeta {
        model: outcome.config.clone(),
        train: cfg,
        stats: outcome.stats.clone(),
        best_step: outcome.best_step,
    };
    write_atomic(&args.out_dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    println!("best step {} of {}", outcome.best_step, meta.train.total_steps);
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let meta_path = match &args.meta {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join("meta.json"),
    };
    let meta: RunMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let params = ModelParams::from_json(&fs::read_to_string(&args.checkpoint)?)?;
    let model = Mpnn::from_parts(meta.model.clone(), params)?;
    let mols = load_dataset(&args.data)?;
    check_hydrogens(&mols, &meta.model)?;
    let subset = match (&args.split, args.subset) {
        (_, Subset::All) | (None, _) => mols,
        (Some(p), s) => {
            let split = load_split(p)?.split;
            let idx = match s {
                Subset::Train => &split.train,
                Subset::Valid => &split.valid,
                _ => &split.test,
            };
            pick(&mols, idx)
        }
    };
    if subset.is_empty() {
        bail!("nothing to evaluate");
    }
    let metrics = evaluate(&model, &meta.stats, &subset)?;
    let csv = report_csv(&meta.stats, &metrics.mae)?;
    match args.out {
        Some(p) => write_atomic(&p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_search(args: SearchArgs) -> Result<()> {
    let model_cfg = args.model.config();
    let mut base = args.training.config();
    let (mols, split, hash) = load_data(&args.data)?;
    check_hydrogens(&mols, &model_cfg)?;
    base.split_hash = Some(hash);
    let space = SearchSpace {
        trials: args.trials,
        ..SearchSpace::default()
    };
    let report = random_search(
        &space,
        &model_cfg,
        &base,
        args.training.seed,
        &pick(&mols, &split.train),
        &pick(&mols, &split.valid),
        &pick(&mols, &split.test),
    )?;
    fs::create_dir_all(&args.out_dir)?;
    write_atomic(&args.out_dir.join("search.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    let best = report.best();
    println!(
        "best trial {} of {} ({} failed): {}",
        best.config.index,
        report.trials.len(),
        report.failed(),
        serde_json::to_string(&best.status)?
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    println!("towers,hidden_dim,nodes,multiplies,wall_ms,ratio");
    let mut base = None;
    for k in args.towers {
        let b = bench_towers(args.hidden_dim, k, args.nodes, args.seed)?;
        let first = *base.get_or_insert(b.multiplies);
        println!(
            "{},{},{},{},{:.3},{:.4}",
            b.towers,
            b.hidden_dim,
            b.nodes,
            b.multiplies,
            b.wall.as_secs_f64() * 1e3,
            b.multiplies as f64 / first as f64
        );
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let outcomes = match args.what {
        VerifyWhat::All => verify::run_all(args.seed)?,
        VerifyWhat::Gradients => verify::check_gradients(args.seed)?,
        VerifyWhat::Invariance => verify::check_invariance(args.graphs, args.seed)?,
        VerifyWhat::Spectral => verify::check_spectral(args.graphs, args.seed)?,
        VerifyWhat::Bins => verify::check_bins(args.graphs, args.seed)?,
    };
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a).map(|_| true),
        Command::Train(a) => run_train(a).map(|_| true),
        Command::Evaluate(a) => run_evaluate(a).map(|_| true),
        Command::Search(a) => run_search(a).map(|_| true),
        Command::BenchTowers(a) => run_bench(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
