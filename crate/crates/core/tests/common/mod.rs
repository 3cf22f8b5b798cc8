//! Checks shared by the acceptance harness and the topic test files.
//! Everything here recomputes expected values independently of the library
//! internals it is checking.
#![allow(dead_code)]

use bulkalloc::channel::{generate_realization_with, BinExtractor, ChannelRealization, SimConfig};
use bulkalloc::gtba::{allocate, GtbaConfig, Outcome};
use bulkalloc::loss::{evaluate_loss, LossKind, RbolConfig};
use bulkalloc::model::{ModelDims, ModelWeights};
use bulkalloc::reliability::{binomial_obop, evaluate, RiskScorer, ReliabilityReport};
use bulkalloc::rng::{derive_stream, StreamPurpose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference GTBA outcome written from the rule's definition.
pub fn reference_outcome(q: &[f64], g: &[u8], q_th: f64, d: usize) -> (Outcome, usize) {
    let mut adm: Vec<(f64, usize)> = q
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= q_th)
        .map(|(i, &v)| (v, i))
        .collect();
    if adm.len() < d {
        return (Outcome::GateFailure, adm.len());
    }
    adm.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let good = adm[..d].iter().filter(|&&(_, i)| g[i] == 1).count();
    let outcome = if good < d {
        Outcome::SelectionFailure
    } else {
        Outcome::Success
    };
    (outcome, adm.len())
}

pub fn realizations(sim: &SimConfig, purpose_seed: u64, n: usize) -> Vec<ChannelRealization> {
    let bins = BinExtractor::new(sim);
    (0..n)
        .map(|i| {
            let mut s = derive_stream(StreamPurpose::Aux, purpose_seed, 7, 0, i as u64);
            generate_realization_with(sim, &bins, &mut s)
        })
        .collect()
}

/// Recounts a report against the reference rule, sample by sample, and
/// checks `bulk = gate + selection` on both the reference and library tallies.
pub fn audit_report<S: RiskScorer + ?Sized>(
    scorer: &S,
    reals: &[ChannelRealization],
    report: &ReliabilityReport,
) -> Result<(), String> {
    let (mut gate, mut sel, mut bulk) = (0u64, 0u64, 0u64);
    for (i, real) in reals.iter().enumerate() {
        let q = scorer.score(real);
        let (outcome, _) = reference_outcome(&q, &real.g, report.gtba.q_th, report.gtba.d);
        match outcome {
            Outcome::GateFailure => gate += 1,
            Outcome::SelectionFailure => sel += 1,
            Outcome::Success => {}
        }
        if outcome != Outcome::Success {
            bulk += 1;
        }
        if report.samples[i].outcome != outcome {
            return Err(format!("sample {i}: library {:?}, reference {outcome:?}", report.samples[i].outcome));
        }
    }
    let c = report.counts;
    if (c.gate_failures, c.selection_failures, c.bulk_outages) != (gate, sel, bulk) {
        return Err(format!("library counts {c:?} vs reference ({gate}, {sel}, {bulk})"));
    }
    if bulk != gate + sel || c.bulk_outages != c.gate_failures + c.selection_failures {
        return Err(format!("identity broken: {c:?}"));
    }
    Ok(())
}

/// Scores in `(0.01, 0.99)` with pairwise gaps and distance to `q_th` of at least `gap`.
pub fn gapped_scores(rng: &mut ChaCha8Rng, r: usize, q_th: f64, gap: f64) -> Vec<f64> {
    loop {
        let q: Vec<f64> = (0..r).map(|_| rng.random_range(0.01..0.99)).collect();
        let mut s = q.clone();
        s.push(q_th);
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if s.windows(2).all(|w| w[1] - w[0] >= gap) {
            return q;
        }
    }
}

/// Max over random configurations of `|analytic - fd| / max(|analytic|, |fd|)`
/// in the Euclidean norm, for one loss.
pub fn loss_gradient_error(kind: LossKind, configs: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let r = rng.random_range(2..=16);
        let d = rng.random_range(1..=r);
        let q_th = rng.random_range(0.1..0.9);
        let q = gapped_scores(&mut rng, r, q_th, 1e-3);
        let y: Vec<f64> = (0..r).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let cfg = RbolConfig::for_d(q_th, d);
        let f = |q: &[f64]| evaluate_loss(kind, q, &y, &cfg).unwrap().total;
        let analytic = evaluate_loss(kind, &q, &y, &cfg).unwrap().grad;
        let fd: Vec<f64> = (0..r)
            .map(|i| {
                let mut a = q.clone();
                let mut b = q.clone();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &fd));
    }
    worst
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-network gradient against central differences for every parameter,
/// hidden size 3, sequence length 5.
pub fn network_gradient_error(kind: LossKind, seed: u64) -> f64 {
    let dims = ModelDims { hidden: 3, dense: 4 };
    let mut r = rng(seed);
    let r_res = 6;
    let mut weights = ModelWeights::init(dims, &mut derive_stream(StreamPurpose::Init, seed, 0, 0, 0));
    // Spread the output bias so scores are not all near 0.5.
    for v in weights.params.iter_mut() {
        *v *= 2.0;
    }
    let seqs: Vec<Vec<f64>> = (0..r_res)
        .map(|_| (0..5).map(|_| r.random_range(0.0..2.5)).collect())
        .collect();
    let y: Vec<f64> = (0..r_res).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let q0 = weights.predict_batch(&seqs);
    // Put the gate threshold in the middle of the widest gap between scores.
    let mut sorted = q0.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = sorted
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|a, b| (a.1 - a.0).partial_cmp(&(b.1 - b.0)).unwrap())
        .unwrap();
    let q_th = 0.5 * (lo + hi);
    let cfg = RbolConfig {
        tau: 0.05,
        ..RbolConfig::for_d(q_th, 2)
    };
    let loss = |w: &ModelWeights| evaluate_loss(kind, &w.predict_batch(&seqs), &y, &cfg).unwrap().total;

    let caches = weights.forward_batch(&seqs).unwrap();
    let q: Vec<f64> = caches.iter().map(|c| c.q).collect();
    let dq = evaluate_loss(kind, &q, &y, &cfg).unwrap().grad;
    let analytic = weights.backward(&caches, &dq).params;

    let h = 1e-5;
    let mut fd = vec![0.0; analytic.len()];
    for i in 0..analytic.len() {
        let orig = weights.params[i];
        weights.params[i] = orig + h;
        let a = loss(&weights);
        weights.params[i] = orig - h;
        let b = loss(&weights);
        weights.params[i] = orig;
        fd[i] = (a - b) / (2.0 * h);
    }
    relative_error(&analytic, &fd)
}

/// Exact `Pr(Binomial(r, p) < d)` by enumerating all `2^r` label vectors.
pub fn enumerate_obop(r: usize, p: f64, d: usize) -> f64 {
    let mut total = 0.0;
    for mask in 0u64..(1u64 << r) {
        let k = mask.count_ones() as usize;
        if k < d {
            total += p.powi(k as i32) * (1.0 - p).powi((r - k) as i32);
        }
    }
    total
}

pub fn binomial_checks() -> Check {
    let exact = binomial_obop(16, 0.5, 4);
    let enumerated = enumerate_obop(16, 0.5, 4);
    let target = 697.0 / 65536.0;
    let mut ok = (exact - target).abs() <= 1e-12 && (enumerated - target).abs() <= 1e-12;
    let p3 = (binomial_obop(16, 0.3, 4) - enumerate_obop(16, 0.3, 4)).abs();
    ok &= p3 <= 1e-12;

    // Monte Carlo with iid Bernoulli labels.
    let (r, p_g, d, n) = (16, 0.3, 4, 3000);
    let analytic = binomial_obop(r, p_g, d);
    let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
    let mut rng = rng(2024);
    let within = (0..100)
        .filter(|_| {
            let outages = (0..n)
                .filter(|_| (0..r).filter(|_| rng.random_bool(p_g)).count() < d)
                .count();
            ((outages as f64 / n as f64) - analytic).abs() <= 3.0 * se
        })
        .count();
    ok &= within >= 99;

    let by_r: Vec<f64> = [8, 16, 32, 64].iter().map(|&r| binomial_obop(r, 0.3, 4)).collect();
    let decreasing = by_r.windows(2).all(|w| w[1] < w[0]);
    ok &= decreasing && by_r[3] < 1e-6;
    Check::new(
        ok,
        format!(
            "obop(16,0.5,4)={exact:.15} enum={enumerated:.15} target={target:.15}; MC within 3se {within}/100; R sweep {}",
            by_r.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

/// Adversarial and ordinary scorers for the oracle-dominance sweep.
pub fn scorer_family(kind: usize, real: &ChannelRealization, salt: u64) -> Vec<f64> {
    let r = real.num_resources();
    let mut rng = rng(salt);
    match kind {
        0 => (0..r).map(|_| rng.random::<f64>()).collect(),
        1 => vec![0.0; r],
        2 => vec![0.4; r],
        3 => vec![1.0; r],
        4 => real.y_f64(),
        // Inverted oracle: good resources look risky.
        5 => real.g.iter().map(|&g| g as f64).collect(),
        // Cheating plus noise.
        6 => real.y.iter().map(|&y| (y as f64 * 0.6 + rng.random::<f64>() * 0.4).min(1.0)).collect(),
        // Good resources just above the gate, bad ones just below.
        7 => real.g.iter().map(|&g| if g == 1 { 0.41 } else { 0.39 }).collect(),
        // Rank by past energy, a plausible heuristic.
        _ => real
            .past
            .iter()
            .map(|p| 1.0 / (1.0 + p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64))
            .collect(),
    }
}

pub const SCORER_KINDS: usize = 9;

/// Dominance: an oracle outage always implies a GTBA outage.
pub fn oracle_dominance(n_real: usize) -> Check {
    let sims = [
        SimConfig { k: 10, gamma_th: 1.2, ..SimConfig::default() },
        SimConfig { k: 10, gamma_th: 2.0, snr_db: -3.0, ..SimConfig::default() },
        SimConfig { k: 10, gamma_th: 0.6, snr_db: 3.0, ..SimConfig::default() },
    ];
    let mut pairs = 0u64;
    let mut violations = 0u64;
    let mut oracle_outages = 0u64;
    for (si, sim) in sims.iter().enumerate() {
        let reals = realizations(sim, 100 + si as u64, n_real);
        for (i, real) in reals.iter().enumerate() {
            for kind in 0..SCORER_KINDS {
                let q = scorer_family(kind, real, (si * 1_000_003 + i) as u64);
                for &(q_th, d) in &[(0.4, 2), (0.4, 4), (0.6, 6), (0.2, 1)] {
                    let cfg = GtbaConfig::new(q_th, d).unwrap();
                    let dec = allocate(&q, &real.g, &cfg).unwrap();
                    pairs += 1;
                    let oracle = real.g.iter().filter(|&&g| g == 1).count() < d;
                    if oracle {
                        oracle_outages += 1;
                        if !dec.outcome.is_bulk_outage() {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    Check::new(
        pairs >= 100_000 && violations == 0 && oracle_outages > 0,
        format!("{pairs} pairs, {oracle_outages} oracle outages, {violations} without GTBA outage"),
    )
}

pub struct Cheat;

impl RiskScorer for Cheat {
    fn score(&self, real: &ChannelRealization) -> Vec<f64> {
        real.y.iter().map(|&y| y as f64).collect()
    }
}

pub fn cheating_equivalence(n: usize) -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for (seed, gamma) in [(1u64, 1.2), (2, 1.0), (3, 1.4), (4, 0.8)] {
        let sim = SimConfig { k: 10, gamma_th: gamma, ..SimConfig::default() };
        let reals = realizations(&sim, seed, n);
        for d in [1, 2, 4, 6, 8, 10, 16] {
            let rep = evaluate(&Cheat, &reals, &GtbaConfig::new(0.4, d).unwrap()).unwrap();
            let same = rep.counts.bulk_outages == rep.counts.oracle_outages && rep.bop.value == rep.obop.value;
            ok &= same;
            if !same {
                details.push(format!("gamma={gamma} D={d}: bop {} vs obop {}", rep.bop.value, rep.obop.value));
            }
        }
    }
    Check::new(ok, if ok { "28 test sets, BOP == OBOP exactly".into() } else { details.join("; ") })
}

/// Identity and reference recount over a spread of scorers and configs.
pub fn decomposition_identity(n: usize) -> Check {
    let sim = SimConfig { k: 12, ..SimConfig::default() };
    let reals = realizations(&sim, 9, n);
    let mut runs = 0;
    for kind in 0..SCORER_KINDS {
        let scorer = bulkalloc::reliability::FnScorer(move |r: &ChannelRealization| {
            scorer_family(kind, r, r.rates[0].to_bits())
        });
        for &(q_th, d) in &[(0.4, 4), (0.3, 2), (0.7, 8), (0.5, 16)] {
            let cfg = GtbaConfig::new(q_th, d).unwrap();
            let rep = evaluate(&scorer, &reals, &cfg).unwrap();
            if let Err(e) = audit_report(&scorer, &reals, &rep) {
                return Check::new(false, format!("scorer {kind}, q_th {q_th}, D {d}: {e}"));
            }
            if !bulkalloc::reliability::decomposition_audit(&rep).passed {
                return Check::new(false, format!("library audit failed for scorer {kind}"));
            }
            runs += 1;
        }
    }
    Check::new(true, format!("{runs} evaluation runs of {n} realizations, identity exact"))
}

/// Gate failure is monotone in D, admission is nested in q_th, ANAR is
/// monotone in q_th and labels are monotone in gamma; `n` instances each.
pub fn monotonicity(n: usize) -> Check {
    let mut rng = rng(77);
    let mut bad = Vec::new();

    // GFP in D with the scores held fixed: per instance, a batch of score
    // vectors and the empirical GFP at every D.
    for inst in 0..n {
        let r = rng.random_range(1..=24);
        let q_th = rng.random_range(0.05..0.95);
        let batch: Vec<Vec<f64>> = (0..8).map(|_| (0..r).map(|_| rng.random::<f64>()).collect()).collect();
        let g = vec![1u8; r];
        let gfp: Vec<usize> = (1..=r)
            .map(|d| {
                let cfg = GtbaConfig::new(q_th, d).unwrap();
                batch
                    .iter()
                    .filter(|q| allocate(q, &g, &cfg).unwrap().outcome == Outcome::GateFailure)
                    .count()
            })
            .collect();
        if gfp.windows(2).any(|w| w[1] < w[0]) {
            bad.push(format!("GFP not monotone in D at instance {inst}"));
            break;
        }
    }

    for inst in 0..n {
        let r = rng.random_range(1..=24);
        let batch: Vec<Vec<f64>> = (0..8).map(|_| (0..r).map(|_| rng.random::<f64>()).collect()).collect();
        let mut ths: Vec<f64> = (0..6).map(|_| rng.random_range(0.001..0.999)).collect();
        ths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev_sets: Option<Vec<Vec<usize>>> = None;
        let mut prev_anar = -1.0;
        for &t in &ths {
            let sets: Vec<Vec<usize>> = batch.iter().map(|q| bulkalloc::gtba::admissible_set(q, t)).collect();
            let anar = sets.iter().map(|s| s.len()).sum::<usize>() as f64 / batch.len() as f64;
            if let Some(prev) = &prev_sets {
                if prev.iter().zip(&sets).any(|(a, b)| !a.iter().all(|i| b.contains(i))) {
                    bad.push(format!("admissible sets not nested at instance {inst}"));
                    break;
                }
            }
            if anar < prev_anar {
                bad.push(format!("ANAR decreased at instance {inst}"));
                break;
            }
            prev_sets = Some(sets);
            prev_anar = anar;
        }
        if !bad.is_empty() {
            break;
        }
    }

    let sim = SimConfig { k: 1, ..SimConfig::default() };
    let reals = realizations(&sim, 31, n);
    for (inst, real) in reals.iter().enumerate() {
        let a = rng.random_range(0.0..3.0);
        let b = rng.random_range(0.0..3.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let snr = rng.random_range(-6.0..6.0);
        let y_lo = real.relabel(snr, lo, sim.rate_agg).y;
        let y_hi = real.relabel(snr, hi, sim.rate_agg).y;
        if y_lo.iter().zip(&y_hi).any(|(l, h)| l > h) {
            bad.push(format!("labels not monotone in gamma at instance {inst}"));
            break;
        }
    }
    Check::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{n} instances each: GFP(D), admission(q_th), ANAR(q_th), y(gamma)")
        } else {
            bad.join("; ")
        },
    )
}

pub fn soft_gate_limit(n: usize) -> Check {
    let mut rng = rng(88);
    let tau = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let r = rng.random_range(1..=32);
        let q_th = rng.random_range(0.1..0.9);
        let q: Vec<f64> = (0..r)
            .map(|_| loop {
                let v: f64 = rng.random();
                if (v - q_th).abs() >= 0.05 {
                    break v;
                }
            })
            .collect();
        let y: Vec<f64> = (0..r).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let soft = bulkalloc::loss::soft_good_count(&q, &y, q_th, tau);
        let hard = q.iter().zip(&y).filter(|(&qi, &yi)| qi <= q_th && yi == 0.0).count() as f64;
        worst = worst.max((soft - hard).abs());
    }
    Check::new(worst < 1e-3, format!("max |G - hard| = {worst:.3e} over {n} instances"))
}
