//! Sweep orchestration: train every (loss, D, gamma, retrain) model once,
//! score the shared test set once per model, then evaluate GTBA over every
//! (snr, q_th) point by relabeling the same channels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::channel::{ChannelRealization, SimConfig};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::plot::write_plots;
use crate::experiment::results::{format_sig6, write_results_csv, ResultRow, RetrainIndex};
use crate::gtba::GtbaConfig;
use crate::loss::LossKind;
use crate::model::{train, Checkpoint, TrainConfig};
use crate::reliability::{
    evaluate_checkpoint, evaluate_scores, test_realizations, OutcomeCounts, ReliabilityReport,
};

/// Optional worker-pool size; unset or empty means one worker per core.
pub const WORKERS_ENV: &str = "BULKALLOC_WORKERS";

pub fn worker_count() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct JobKey {
    loss_idx: usize,
    /// Only set-level losses depend on `D`; baselines are trained once per
    /// (gamma, retrain) and reused for every `D`.
    d: Option<usize>,
    gamma_idx: usize,
    retrain: usize,
}

enum JobResult {
    Trained {
        checkpoint: Box<Checkpoint>,
        fingerprint: String,
        scores: Vec<Vec<f64>>,
    },
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub results_csv: PathBuf,
    pub counts_csv: PathBuf,
    pub fingerprints_csv: PathBuf,
    pub plots: Vec<PathBuf>,
    /// One message per diverged training run.
    pub diverged: Vec<String>,
}

pub fn row_from_report(
    experiment: &str,
    loss: LossKind,
    gamma_th: f64,
    snr_db: f64,
    retrain: RetrainIndex,
    report: &ReliabilityReport,
    master_seed: u64,
) -> ResultRow {
    ResultRow {
        experiment: experiment.to_string(),
        loss,
        d: report.gtba.d,
        gamma_th,
        snr_db,
        q_th: report.gtba.q_th,
        retrain,
        gfp: report.gfp.value,
        gfp_se: report.gfp.se,
        bop: report.bop.value,
        bop_se: report.bop.se,
        obop: report.obop.value,
        anar: report.anar,
        sel_fail_rate: report.sel_fail_given_gate_pass.value,
        n_test: report.n,
        master_seed,
    }
}

fn nan_row(template: &ResultRow, retrain: RetrainIndex) -> ResultRow {
    ResultRow {
        retrain,
        gfp: f64::NAN,
        gfp_se: f64::NAN,
        bop: f64::NAN,
        bop_se: f64::NAN,
        anar: f64::NAN,
        sel_fail_rate: f64::NAN,
        ..template.clone()
    }
}

/// Arithmetic mean of the per-retrain estimates over finished retrains.
/// The standard error treats retrains as independent estimates.
fn mean_row(runs: &[ResultRow], template: &ResultRow) -> ResultRow {
    let ok: Vec<&ResultRow> = runs.iter().filter(|r| r.bop.is_finite()).collect();
    if ok.is_empty() {
        return nan_row(template, RetrainIndex::Mean);
    }
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&ResultRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / m;
    let pooled_se = |f: &dyn Fn(&ResultRow) -> f64| ok.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt() / m;
    // Conditional rates can be undefined for single runs (every sample failed
    // the gate); average only over the runs where they exist.
    let sel: Vec<f64> = ok.iter().map(|r| r.sel_fail_rate).filter(|v| v.is_finite()).collect();
    ResultRow {
        retrain: RetrainIndex::Mean,
        gfp: mean(&|r| r.gfp),
        gfp_se: pooled_se(&|r| r.gfp_se),
        bop: mean(&|r| r.bop),
        bop_se: pooled_se(&|r| r.bop_se),
        obop: mean(&|r| r.obop),
        anar: mean(&|r| r.anar),
        sel_fail_rate: if sel.is_empty() {
            f64::NAN
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        },
        ..template.clone()
    }
}

const COUNT_COLUMNS: [&str; 13] = [
    "experiment",
    "loss",
    "D",
    "gamma_th",
    "snr_db",
    "q_th",
    "retrain_index",
    "n",
    "gate_failures",
    "selection_failures",
    "bulk_outages",
    "oracle_outages",
    "nar_sum",
];

struct CountRow {
    row: ResultRow,
    retrain: String,
    n: u64,
    counts: OutcomeCounts,
}

fn write_counts_csv(path: &Path, rows: &[CountRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(COUNT_COLUMNS)?;
    for c in rows {
        w.write_record([
            c.row.experiment.clone(),
            c.row.loss.to_string(),
            c.row.d.to_string(),
            format_sig6(c.row.gamma_th),
            format_sig6(c.row.snr_db),
            format_sig6(c.row.q_th),
            c.retrain.clone(),
            c.n.to_string(),
            c.counts.gate_failures.to_string(),
            c.counts.selection_failures.to_string(),
            c.counts.bulk_outages.to_string(),
            c.counts.oracle_outages.to_string(),
            c.counts.nar_sum.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn checkpoint_name(loss: LossKind, d: Option<usize>, gamma: f64, retrain: usize) -> String {
    let d = d.map_or_else(|| "any".to_string(), |d| d.to_string());
    format!("{}_D{d}_gamma{}_r{retrain}.ckpt", loss.name().to_lowercase(), format_sig6(gamma))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let name = cfg.kind.name();
    let out_dir = &cfg.output_dir;
    let ck_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let pool = worker_pool()?;

    let mut jobs = Vec::new();
    for (loss_idx, &loss) in cfg.losses.iter().enumerate() {
        let ds: Vec<Option<usize>> = if loss.is_set_level() {
            cfg.d_values.iter().map(|&d| Some(d)).collect()
        } else {
            vec![None]
        };
        for d in ds {
            for gamma_idx in 0..cfg.gamma_th.len() {
                for retrain in 0..cfg.retrains {
                    jobs.push(JobKey {
                        loss_idx,
                        d,
                        gamma_idx,
                        retrain,
                    });
                }
            }
        }
    }
    info!("{name}: {} training runs, {} test realizations", jobs.len(), cfg.n_test);

    // The channels are shared by every operating point; only labels change.
    let base_sim = cfg.sim(cfg.gamma_th[0], cfg.snr_db[0]);
    let base = pool.install(|| test_realizations(&base_sim, cfg.master_seed, cfg.n_test));

    let trained: Vec<(JobKey, JobResult)> = pool.install(|| {
        jobs.par_iter()
            .map(|&key| -> Result<(JobKey, JobResult)> {
                let loss = cfg.losses[key.loss_idx];
                let gamma = cfg.gamma_th[key.gamma_idx];
                let tc = TrainConfig {
                    q_th: cfg.train_q_th,
                    epochs: cfg.epochs,
                    batches_per_epoch: cfg.batches_per_epoch,
                    validation_batches: cfg.validation_batches,
                    master_seed: cfg.master_seed,
                    experiment_id: key.retrain as u64,
                    ..TrainConfig::new(loss, key.d.unwrap_or(cfg.d_values[0]), cfg.sim(gamma, cfg.train_snr_db))
                };
                match train(&tc) {
                    Ok(out) => {
                        let scores = base.par_iter().map(|r| out.checkpoint.weights.predict_batch(&r.past)).collect();
                        info!("trained {loss} D={:?} gamma={gamma} retrain {}", key.d, key.retrain);
                        Ok((
                            key,
                            JobResult::Trained {
                                checkpoint: Box::new(out.checkpoint),
                                fingerprint: out.data_fingerprint,
                                scores,
                            },
                        ))
                    }
                    Err(e @ Error::Divergence { .. }) => {
                        let msg = format!("{loss} D={:?} gamma={gamma} retrain {}: {e}", key.d, key.retrain);
                        warn!("{msg}");
                        Ok((key, JobResult::Diverged(msg)))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let trained: BTreeMap<JobKey, JobResult> = trained.into_iter().collect();

    // Fair comparison: every finished run with the same (gamma, retrain)
    // must have consumed the same channel data.
    let mut fp_rows = Vec::new();
    let mut reference: BTreeMap<(usize, usize), (String, String)> = BTreeMap::new();
    let mut diverged = Vec::new();
    for (key, res) in &trained {
        let loss = cfg.losses[key.loss_idx];
        let label = format!("{loss} D={:?}", key.d);
        match res {
            JobResult::Trained {
                checkpoint,
                fingerprint,
                ..
            } => {
                let gamma = cfg.gamma_th[key.gamma_idx];
                write_file(&ck_dir.join(checkpoint_name(loss, key.d, gamma, key.retrain)), &checkpoint.to_bytes()?)?;
                let slot = (key.gamma_idx, key.retrain);
                match reference.get(&slot) {
                    Some((fp, who)) if fp != fingerprint => {
                        return Err(Error::DataMismatch(format!(
                            "{label} and {who} saw different training data for gamma={gamma}, retrain {}",
                            key.retrain
                        )));
                    }
                    Some(_) => {}
                    None => {
                        reference.insert(slot, (fingerprint.clone(), label.clone()));
                    }
                }
                fp_rows.push([
                    loss.to_string(),
                    key.d.map_or_else(|| "any".into(), |d| d.to_string()),
                    format_sig6(gamma),
                    key.retrain.to_string(),
                    fingerprint.clone(),
                ]);
            }
            JobResult::Diverged(msg) => diverged.push(msg.clone()),
        }
    }
    let fingerprints_csv = out_dir.join(format!("{name}_fingerprints.csv"));
    {
        let file = fs::File::create(&fingerprints_csv).map_err(|e| Error::io(&fingerprints_csv, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        w.write_record(["loss", "D", "gamma_th", "retrain_index", "data_sha256"])?;
        for r in &fp_rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(&fingerprints_csv, e))?;
    }

    let mut labelled: Vec<Vec<Vec<ChannelRealization>>> = Vec::new();
    for &gamma in &cfg.gamma_th {
        labelled.push(
            cfg.snr_db
                .iter()
                .map(|&snr| base.par_iter().map(|r| r.relabel(snr, gamma, cfg.rate_agg)).collect())
                .collect(),
        );
    }

    let mut rows = Vec::new();
    let mut count_rows = Vec::new();
    for (loss_idx, &loss) in cfg.losses.iter().enumerate() {
        for (gamma_idx, &gamma) in cfg.gamma_th.iter().enumerate() {
            for &d in &cfg.d_values {
                for (snr_idx, &snr) in cfg.snr_db.iter().enumerate() {
                    for &q_th in &cfg.q_th {
                        let gtba = GtbaConfig::new(q_th, d)?;
                        let reals = &labelled[gamma_idx][snr_idx];
                        let template = ResultRow {
                            experiment: name.to_string(),
                            loss,
                            d,
                            gamma_th: gamma,
                            snr_db: snr,
                            q_th,
                            retrain: RetrainIndex::Mean,
                            gfp: f64::NAN,
                            gfp_se: f64::NAN,
                            bop: f64::NAN,
                            bop_se: f64::NAN,
                            obop: f64::NAN,
                            anar: f64::NAN,
                            sel_fail_rate: f64::NAN,
                            n_test: cfg.n_test as u64,
                            master_seed: cfg.master_seed,
                        };
                        let mut runs = Vec::with_capacity(cfg.retrains);
                        let mut pooled = OutcomeCounts::default();
                        let mut pooled_n = 0;
                        let mut obop = f64::NAN;
                        for retrain in 0..cfg.retrains {
                            let key = JobKey {
                                loss_idx,
                                d: loss.is_set_level().then_some(d),
                                gamma_idx,
                                retrain,
                            };
                            match &trained[&key] {
                                JobResult::Trained { scores, .. } => {
                                    let report = pool.install(|| evaluate_scores(scores, reals, &gtba))?;
                                    obop = report.obop.value;
                                    let row = row_from_report(
                                        name,
                                        loss,
                                        gamma,
                                        snr,
                                        RetrainIndex::Run(retrain),
                                        &report,
                                        cfg.master_seed,
                                    );
                                    pooled.add(&report.counts);
                                    pooled_n += report.n;
                                    count_rows.push(CountRow {
                                        row: row.clone(),
                                        retrain: retrain.to_string(),
                                        n: report.n,
                                        counts: report.counts,
                                    });
                                    runs.push(row);
                                }
                                JobResult::Diverged(_) => {
                                    runs.push(nan_row(&template, RetrainIndex::Run(retrain)));
                                }
                            }
                        }
                        let mut mean = mean_row(&runs, &template);
                        if !obop.is_nan() {
                            mean.obop = obop;
                        } else {
                            mean.obop = oracle_rate(reals, d);
                            for r in runs.iter_mut() {
                                r.obop = mean.obop;
                            }
                        }
                        count_rows.push(CountRow {
                            row: mean.clone(),
                            retrain: "pooled".into(),
                            n: pooled_n,
                            counts: pooled,
                        });
                        rows.extend(runs);
                        rows.push(mean);
                    }
                }
            }
        }
    }

    let results_csv = out_dir.join(format!("{name}_results.csv"));
    {
        let file = fs::File::create(&results_csv).map_err(|e| Error::io(&results_csv, e))?;
        write_results_csv(std::io::BufWriter::new(file), &rows)?;
    }
    let counts_csv = out_dir.join(format!("{name}_counts.csv"));
    write_counts_csv(&counts_csv, &count_rows)?;
    let plots = write_plots(cfg.kind, &rows, out_dir)?;
    info!("{name}: wrote {} rows to {}", rows.len(), results_csv.display());
    Ok(RunOutput {
        rows,
        results_csv,
        counts_csv,
        fingerprints_csv,
        plots,
        diverged,
    })
}

fn oracle_rate(reals: &[ChannelRealization], d: usize) -> f64 {
    if reals.is_empty() {
        return f64::NAN;
    }
    let n = reals.iter().filter(|r| r.good_count() < d).count();
    n as f64 / reals.len() as f64
}

/// Operating-point changes applied when re-evaluating a stored model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOverrides {
    pub q_th: Option<f64>,
    pub d: Option<usize>,
    pub snr_db: Option<f64>,
    pub gamma_th: Option<f64>,
}

impl EvalOverrides {
    pub fn sim(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            snr_db: self.snr_db.unwrap_or(base.snr_db),
            gamma_th: self.gamma_th.unwrap_or(base.gamma_th),
            ..base.clone()
        }
    }

    pub fn gtba(&self, ck: &Checkpoint) -> Result<GtbaConfig> {
        GtbaConfig::new(self.q_th.unwrap_or(ck.meta.q_th), self.d.unwrap_or(ck.meta.d))
    }
}

/// Re-evaluates a stored model on a fresh test set without retraining.
pub fn evaluate_checkpoint_row(
    ck: &Checkpoint,
    overrides: &EvalOverrides,
    n_test: usize,
    seed: u64,
) -> Result<(ResultRow, ReliabilityReport)> {
    if n_test < 1 {
        return Err(Error::Config("n_test must be >= 1".into()));
    }
    let sim = overrides.sim(&ck.meta.sim);
    sim.validate()?;
    let gtba = overrides.gtba(ck)?;
    gtba.validate_for(sim.r)?;
    let reals = test_realizations(&sim, seed, n_test);
    let report = evaluate_checkpoint(ck, &reals, &gtba)?;
    let row = row_from_report(
        "eval",
        ck.meta.loss,
        sim.gamma_th,
        sim.snr_db,
        RetrainIndex::Run(ck.meta.experiment_id as usize),
        &report,
        seed,
    );
    Ok((row, report))
}

pub fn evaluate_only(path: &Path, overrides: &EvalOverrides, n_test: usize, seed: u64) -> Result<ResultRow> {
    let ck = Checkpoint::load(path)?;
    evaluate_checkpoint_row(&ck, overrides, n_test, seed).map(|(row, _)| row)
}
