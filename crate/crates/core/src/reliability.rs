//! Monte Carlo reliability estimation for the GTBA rule and the exact
//! binomial oracle bound.
//!
//! For every test realization the scorer produces `R` risks, GTBA allocates,
//! and the outcome is tallied. Selection failures are only counted on samples
//! that pass the gate, so `bulk = gate + selection` holds as an integer
//! identity. The oracle fails exactly when fewer than `D` resources are good,
//! which makes every oracle outage a GTBA outage as well.

use rayon::prelude::*;

use crate::channel::{generate_realization_with, BinExtractor, ChannelRealization, SimConfig};
use crate::error::{Error, Result};
use crate::gtba::{allocate, GtbaConfig, Outcome};
use crate::model::{Checkpoint, ModelWeights};
use crate::rng::{derive_stream, StreamPurpose};

/// Experiment id reserved for test sets.
pub const TEST_SET_ID: u64 = 0;

/// Anything that maps a realization to `R` risk scores.
pub trait RiskScorer: Sync {
    fn score(&self, real: &ChannelRealization) -> Vec<f64>;
}

impl RiskScorer for ModelWeights {
    fn score(&self, real: &ChannelRealization) -> Vec<f64> {
        self.predict_batch(&real.past)
    }
}

/// Scores every resource with its true outage label.
#[derive(Debug, Clone, Copy, Default)]
pub struct CheatingScorer;

impl RiskScorer for CheatingScorer {
    fn score(&self, real: &ChannelRealization) -> Vec<f64> {
        real.y_f64()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl RiskScorer for ConstantScorer {
    fn score(&self, real: &ChannelRealization) -> Vec<f64> {
        vec![self.0; real.num_resources()]
    }
}

/// Adapter for closures.
pub struct FnScorer<F>(pub F);

impl<F> RiskScorer for FnScorer<F>
where
    F: Fn(&ChannelRealization) -> Vec<f64> + Sync,
{
    fn score(&self, real: &ChannelRealization) -> Vec<f64> {
        (self.0)(real)
    }
}

pub fn oracle_outage(g: &[u8], d: usize) -> bool {
    g.iter().map(|&v| v as usize).sum::<usize>() < d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: usize,
    pub outcome: Outcome,
    pub oracle_outage: bool,
    pub nar: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub gate_failures: u64,
    pub selection_failures: u64,
    pub bulk_outages: u64,
    pub oracle_outages: u64,
    pub nar_sum: u64,
}

impl OutcomeCounts {
    pub fn from_samples(samples: &[SampleRecord]) -> Self {
        let mut c = OutcomeCounts::default();
        for s in samples {
            match s.outcome {
                Outcome::GateFailure => c.gate_failures += 1,
                Outcome::SelectionFailure => c.selection_failures += 1,
                Outcome::Success => {}
            }
            if s.outcome.is_bulk_outage() {
                c.bulk_outages += 1;
            }
            if s.oracle_outage {
                c.oracle_outages += 1;
            }
            c.nar_sum += s.nar as u64;
        }
        c
    }

    pub fn add(&mut self, other: &OutcomeCounts) {
        self.gate_failures += other.gate_failures;
        self.selection_failures += other.selection_failures;
        self.bulk_outages += other.bulk_outages;
        self.oracle_outages += other.oracle_outages;
        self.nar_sum += other.nar_sum;
    }
}

/// Proportion estimate with its normal-approximation standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn proportion(count: u64, n: u64) -> Self {
        if n == 0 {
            return Estimate {
                value: f64::NAN,
                se: f64::NAN,
            };
        }
        let p = count as f64 / n as f64;
        Estimate {
            value: p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub n: u64,
    pub r: usize,
    pub gtba: GtbaConfig,
    pub counts: OutcomeCounts,
    pub gfp: Estimate,
    pub bop: Estimate,
    pub obop: Estimate,
    /// Average number of admitted resources, in `[0, R]`.
    pub anar: f64,
    /// Selection failures among gate-passing samples.
    pub sel_fail_given_gate_pass: Estimate,
    /// Joint rate of passing the gate and failing selection.
    pub sel_fail_joint: Estimate,
    /// Per-sample outcomes, in realization order. Empty for hand-built reports.
    pub samples: Vec<SampleRecord>,
}

impl ReliabilityReport {
    pub fn from_counts(n: u64, r: usize, gtba: GtbaConfig, counts: OutcomeCounts) -> Self {
        let passed = n - counts.gate_failures.min(n);
        ReliabilityReport {
            n,
            r,
            gtba,
            counts,
            gfp: Estimate::proportion(counts.gate_failures, n),
            bop: Estimate::proportion(counts.bulk_outages, n),
            obop: Estimate::proportion(counts.oracle_outages, n),
            anar: if n == 0 { f64::NAN } else { counts.nar_sum as f64 / n as f64 },
            sel_fail_given_gate_pass: Estimate::proportion(counts.selection_failures, passed),
            sel_fail_joint: Estimate::proportion(counts.selection_failures, n),
            samples: Vec::new(),
        }
    }

    pub fn from_samples(r: usize, gtba: GtbaConfig, samples: Vec<SampleRecord>) -> Self {
        let counts = OutcomeCounts::from_samples(&samples);
        let mut report = Self::from_counts(samples.len() as u64, r, gtba, counts);
        report.samples = samples;
        report
    }
}

/// Test realizations `0..n`, drawn from the test stream family.
pub fn test_realizations(sim: &SimConfig, master_seed: u64, n: usize) -> Vec<ChannelRealization> {
    let bins = BinExtractor::new(sim);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = derive_stream(StreamPurpose::Test, master_seed, TEST_SET_ID, 0, i as u64);
            generate_realization_with(sim, &bins, &mut s)
        })
        .collect()
}

pub fn evaluate<S: RiskScorer + ?Sized>(
    scorer: &S,
    realizations: &[ChannelRealization],
    cfg: &GtbaConfig,
) -> Result<ReliabilityReport> {
    let scores: Vec<Vec<f64>> = realizations.par_iter().map(|real| scorer.score(real)).collect();
    evaluate_scores(&scores, realizations, cfg)
}

/// Same as [`evaluate`] with the scores already computed, one vector per
/// realization. Lets one model be swept over thresholds and operating points
/// without re-running inference.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    realizations: &[ChannelRealization],
    cfg: &GtbaConfig,
) -> Result<ReliabilityReport> {
    if scores.len() != realizations.len() {
        return Err(Error::Config(format!(
            "{} score vectors for {} realizations",
            scores.len(),
            realizations.len()
        )));
    }
    let r = realizations.first().map_or(0, |x| x.num_resources());
    if realizations.iter().any(|x| x.num_resources() != r) {
        return Err(Error::Config("realizations disagree on R".into()));
    }
    cfg.validate_for(r)?;
    let samples = realizations
        .par_iter()
        .zip(scores.par_iter())
        .enumerate()
        .map(|(id, (real, q))| {
            if q.len() != r {
                return Err(Error::Config(format!(
                    "scorer returned {} scores for {r} resources",
                    q.len()
                )));
            }
            if let Some(v) = q.iter().find(|v| !v.is_finite()) {
                return Err(Error::Input(format!("non-finite score {v} in realization {id}")));
            }
            let decision = allocate(q, &real.g, cfg)?;
            Ok(SampleRecord {
                id,
                outcome: decision.outcome,
                oracle_outage: oracle_outage(&real.g, cfg.d),
                nar: decision.admissible.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReliabilityReport::from_samples(r, *cfg, samples))
}

/// Evaluates a stored model, refusing realizations whose geometry differs
/// from the one it was trained on.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    realizations: &[ChannelRealization],
    cfg: &GtbaConfig,
) -> Result<ReliabilityReport> {
    let sim = &ck.meta.sim;
    for real in realizations {
        if real.num_resources() != sim.r {
            return Err(Error::Config(format!(
                "checkpoint was trained with R = {} but realizations have R = {}",
                sim.r,
                real.num_resources()
            )));
        }
        if real.past.iter().any(|p| p.len() != sim.k) {
            return Err(Error::Config(format!(
                "checkpoint expects k = {} past samples per resource",
                sim.k
            )));
        }
    }
    evaluate(&ck.weights, realizations, cfg)
}

/// `Pr(Binomial(R, p_g) < D)`, summed in the log domain.
pub fn binomial_obop(r: usize, p_g: f64, d: usize) -> f64 {
    assert!((0.0..=1.0).contains(&p_g), "p_g must lie in [0, 1]");
    if d == 0 {
        return 0.0;
    }
    if d > r {
        return 1.0;
    }
    if p_g == 0.0 {
        return 1.0;
    }
    if p_g == 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p_g.ln(), (-p_g).ln_1p());
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for j in 0..d {
        if j > 0 {
            log_choose += ((r - j + 1) as f64).ln() - (j as f64).ln();
        }
        total += (log_choose + j as f64 * lp + (r - j) as f64 * lq).exp();
    }
    total.min(1.0)
}

/// Oracle outage for each pool size in `rs` at fixed `p_g` and `D`.
pub fn asymptotic_check(p_g: f64, d: usize, rs: &[usize]) -> Vec<(usize, f64)> {
    rs.iter().map(|&r| (r, binomial_obop(r, p_g, d))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditVerdict {
    pub passed: bool,
    /// `gate + selection - bulk`; zero when the identity holds.
    pub discrepancy: i64,
    /// First realization whose oracle outage was not a GTBA outage.
    pub first_violation: Option<usize>,
    pub bop_equals_obop: bool,
    pub details: Vec<String>,
}

/// Re-checks the count identity and the per-sample oracle subset property.
pub fn decomposition_audit(report: &ReliabilityReport) -> AuditVerdict {
    let c = report.counts;
    let mut details = Vec::new();
    let discrepancy = c.gate_failures as i64 + c.selection_failures as i64 - c.bulk_outages as i64;
    if discrepancy != 0 {
        details.push(format!(
            "bulk ({}) != gate ({}) + selection ({})",
            c.bulk_outages, c.gate_failures, c.selection_failures
        ));
    }
    let first_violation = report
        .samples
        .iter()
        .find(|s| s.oracle_outage && !s.outcome.is_bulk_outage())
        .map(|s| s.id);
    if let Some(id) = first_violation {
        details.push(format!("oracle outage without bulk outage at realization {id}"));
    }
    if c.oracle_outages > c.bulk_outages {
        details.push(format!(
            "oracle outages ({}) exceed bulk outages ({})",
            c.oracle_outages, c.bulk_outages
        ));
    }
    if !report.samples.is_empty() {
        let recount = OutcomeCounts::from_samples(&report.samples);
        if recount != c {
            details.push(format!("tallies {c:?} disagree with per-sample records {recount:?}"));
        }
    }
    AuditVerdict {
        passed: details.is_empty(),
        discrepancy,
        first_violation,
        bop_equals_obop: c.bulk_outages == c.oracle_outages,
        details,
    }
}
