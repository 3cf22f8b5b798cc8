use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use bulkalloc::channel::{generate_realization_with, write_realizations_csv, BinExtractor, RateAgg};
use bulkalloc::experiment::{
    evaluate_only, parse_config, plot, read_results_csv, run_experiment, worker_count, write_results_csv,
    EvalOverrides, ExperimentConfig, ExperimentKind, ResultRow, RetrainIndex, FULL_SCALE_RETRAINS,
};
use bulkalloc::loss::LossKind;
use bulkalloc::model::TrainConfig;
use bulkalloc::rng::{derive_stream, StreamPurpose};
use bulkalloc::Error;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "bulkalloc", version, about = "Bulk resource allocation with learned risk scores")]
struct Cli {
    /// More log output (-v info is the default, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump simulated realizations as (realization_id, resource_id, C_i, y_i).
    GenData(GenDataArgs),
    /// Train a single model and save its checkpoint.
    Train(TrainArgs),
    /// Re-evaluate a checkpoint at a new operating point.
    Eval(EvalArgs),
    /// Run an experiment family and write CSV + plots.
    Sweep(SweepArgs),
    /// Summarize a results CSV and optionally redraw its plots.
    Report(ReportArgs),
}

/// Keys shared with the config file; a flag overrides the file value.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Future-rate aggregation: mean or min.
    #[arg(long, value_parser = parse_rate_agg)]
    rate_agg: Option<RateAgg>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    gamma_th: Option<f64>,
    /// Output CSV; `-` for stdout. Defaults to `<output_dir>/realizations.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    gamma_th: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    train_snr_db: Option<f64>,
    #[arg(long)]
    train_q_th: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    validation_batches: Option<usize>,
    /// Retrain index; selects the training data schedule.
    #[arg(long, default_value_t = 0)]
    retrain: u64,
    /// Checkpoint path. Defaults to `<output_dir>/<loss>_D<d>.ckpt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    q_th: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    gamma_th: Option<f64>,
    /// Append the row to this CSV instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment family; required when no config file is given.
    #[arg(long, value_parser = parse_kind)]
    experiment: Option<ExperimentKind>,
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    losses: Option<Vec<LossKind>>,
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    gamma_th: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    q_th: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    train_snr_db: Option<f64>,
    #[arg(long)]
    train_q_th: Option<f64>,
    #[arg(long)]
    retrains: Option<usize>,
    /// Full-scale run: 10 retrains instead of the default 3.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    validation_batches: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    results: PathBuf,
    /// Redraw the plots into this directory.
    #[arg(long)]
    plots: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rate_agg(s: &str) -> Result<RateAgg, String> {
    match s {
        "mean" => Ok(RateAgg::Mean),
        "min" => Ok(RateAgg::Min),
        _ => Err(format!("expected mean or min, got {s:?}")),
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// File values, then flags, then validation.
fn load_config(common: &Common, kind: Option<ExperimentKind>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, kind) {
        (Some(path), kind) => {
            let cfg = parse_config(path)?;
            if let Some(k) = kind.filter(|&k| k != cfg.kind) {
                return Err(config_error(format!(
                    "--experiment {k} conflicts with experiment = {} in {}",
                    cfg.kind,
                    path.display()
                )));
            }
            cfg
        }
        (None, Some(k)) => ExperimentConfig::defaults(k),
        (None, None) => return Err(config_error("--experiment is required without --config")),
    };
    if let Some(v) = common.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = common.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = &common.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = common.rate_agg {
        cfg.rate_agg = v;
    }
    Ok(cfg)
}

/// Non-sweep commands read the same file but only need its scalar keys.
fn load_point_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let kind = if common.config.is_some() {
        None
    } else {
        Some(ExperimentKind::DSweep)
    };
    load_config(common, kind)
}

fn open_output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    Ok(Box::new(io::BufWriter::new(file)))
}

fn io_error(path: &Path, source: io::Error) -> anyhow::Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let mut cfg = load_point_config(&args.common)?;
    if let Some(v) = args.snr_db {
        cfg.snr_db = vec![v];
    }
    if let Some(v) = args.gamma_th {
        cfg.gamma_th = vec![v];
    }
    cfg.validate()?;
    let sim = cfg.sim(cfg.gamma_th[0], cfg.snr_db[0]);
    sim.validate()?;
    let path = args.out.unwrap_or_else(|| cfg.output_dir.join("realizations.csv"));
    let bins = BinExtractor::new(&sim);
    let reals = (0..cfg.n_test).map(|i| {
        let mut s = derive_stream(StreamPurpose::Test, cfg.master_seed, bulkalloc::reliability::TEST_SET_ID, 0, i as u64);
        generate_realization_with(&sim, &bins, &mut s)
    });
    let out = open_output(&path)?;
    write_realizations_csv(out, reals).map_err(|e| match e {
        Error::Csv(c) => io_error(&path, io::Error::other(c.to_string())),
        other => other.into(),
    })?;
    info!("wrote {} realizations to {}", cfg.n_test, path.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_point_config(&args.common)?;
    let loss = args.loss.unwrap_or(cfg.losses[0]);
    let d = args.d.unwrap_or(cfg.d_values[0]);
    let gamma = args.gamma_th.unwrap_or(cfg.gamma_th[0]);
    let snr = args.train_snr_db.unwrap_or(cfg.train_snr_db);
    let tc = TrainConfig {
        q_th: args.train_q_th.unwrap_or(cfg.train_q_th),
        epochs: args.epochs.unwrap_or(cfg.epochs),
        batches_per_epoch: args.batches_per_epoch.unwrap_or(cfg.batches_per_epoch),
        validation_batches: args.validation_batches.unwrap_or(cfg.validation_batches),
        master_seed: cfg.master_seed,
        experiment_id: args.retrain,
        ..TrainConfig::new(loss, d, cfg.sim(gamma, snr))
    };
    let path = args
        .out
        .unwrap_or_else(|| cfg.output_dir.join(format!("{}_D{d}.ckpt", loss.name().to_lowercase())));
    let out = bulkalloc::model::train(&tc)?;
    if let Some(last) = out.log.last() {
        info!("final epoch {}: train loss {:.6}, val loss {:?}", last.epoch, last.train_loss, last.val_loss);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    out.checkpoint.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_point_config(&args.common)?;
    let over = EvalOverrides {
        q_th: args.q_th,
        d: args.d,
        snr_db: args.snr_db,
        gamma_th: args.gamma_th,
    };
    let row = evaluate_only(&args.checkpoint, &over, cfg.n_test, cfg.master_seed)?;
    let mut rows = vec![row];
    let path = args.out.unwrap_or_else(|| PathBuf::from("-"));
    if path != Path::new("-") && path.exists() {
        let file = fs::File::open(&path).map_err(|e| io_error(&path, e))?;
        let mut existing = read_results_csv(file)?;
        existing.append(&mut rows);
        rows = existing;
    }
    write_results_csv(open_output(&path)?, &rows)?;
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.common, args.experiment)?;
    if let Some(v) = args.losses {
        cfg.losses = v;
    }
    if let Some(v) = args.d {
        cfg.d_values = v;
    }
    if let Some(v) = args.gamma_th {
        cfg.gamma_th = v;
    }
    if let Some(v) = args.snr_db {
        cfg.snr_db = v;
    }
    if let Some(v) = args.q_th {
        cfg.q_th = v;
    }
    if let Some(v) = args.train_snr_db {
        cfg.train_snr_db = v;
    }
    if let Some(v) = args.train_q_th {
        cfg.train_q_th = v;
    }
    if let Some(v) = args.retrains {
        cfg.retrains = v;
    }
    if args.paper_scale {
        cfg.retrains = FULL_SCALE_RETRAINS;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batches_per_epoch {
        cfg.batches_per_epoch = v;
    }
    if let Some(v) = args.validation_batches {
        cfg.validation_batches = v;
    }
    cfg.normalize();
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    for msg in &out.diverged {
        warn!("diverged: {msg}");
    }
    println!("{}", out.results_csv.display());
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let file = fs::File::open(&args.results).map_err(|e| io_error(&args.results, e))?;
    let rows = read_results_csv(file)?;
    let mean: Vec<&ResultRow> = rows.iter().filter(|r| r.retrain == RetrainIndex::Mean).collect();
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<13} {:<5} {:>3} {:>8} {:>7} {:>6} {:>9} {:>9} {:>9} {:>7} {:>9}",
        "experiment", "loss", "D", "gamma_th", "snr_db", "q_th", "GFP", "BOP", "OBOP", "ANAR", "sel_fail"
    )?;
    for r in &mean {
        writeln!(
            out,
            "{:<13} {:<5} {:>3} {:>8} {:>7} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>7.3} {:>9.4}",
            r.experiment, r.loss.to_string(), r.d, r.gamma_th, r.snr_db, r.q_th, r.gfp, r.bop, r.obop, r.anar, r.sel_fail_rate
        )?;
    }
    let flagged = rows.iter().filter(|r| r.retrain != RetrainIndex::Mean && r.bop.is_nan()).count();
    if flagged > 0 {
        writeln!(out, "{flagged} retrain rows flagged (training diverged)")?;
    }
    if let Some(dir) = args.plots {
        let kind: ExperimentKind = mean
            .first()
            .ok_or_else(|| anyhow!(Error::Input("results file has no mean rows".into())))?
            .experiment
            .parse()?;
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        for p in plot::write_plots(kind, &rows, &dir)? {
            writeln!(out, "{}", p.display())?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Io { .. } | Error::Csv(_) | Error::CorruptCheckpoint { .. } | Error::CheckpointVersion { .. } => {
                EXIT_IO
            }
            _ => EXIT_RUNTIME,
        };
    }
    if err.downcast_ref::<io::Error>().is_some() {
        return EXIT_IO;
    }
    EXIT_RUNTIME
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = worker_count()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
