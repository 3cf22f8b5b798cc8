mod common;

use bulkalloc::channel::SimConfig;
use bulkalloc::gtba::GtbaConfig;
use bulkalloc::reliability::{binomial_obop, evaluate, ConstantScorer};

#[test]
fn binomial_matches_enumeration_and_monte_carlo() {
    let c = common::binomial_checks();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn binomial_matches_enumeration_on_small_grids() {
    for r in 1..=12 {
        for d in 0..=r + 1 {
            for p in [0.0, 0.05, 0.3, 0.5, 0.9, 1.0] {
                let a = binomial_obop(r, p, d);
                let b = common::enumerate_obop(r, p, d);
                assert!((a - b).abs() <= 1e-12, "r={r} d={d} p={p}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn oracle_outage_implies_gtba_outage() {
    let c = common::oracle_dominance(1000);
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn cheating_scorer_matches_oracle() {
    let c = common::cheating_equivalence(1000);
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn outcome_counts_match_reference_rule() {
    let c = common::decomposition_identity(500);
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn constant_scorer_above_threshold_always_fails_gate() {
    let reals = common::realizations(&SimConfig { k: 4, ..SimConfig::default() }, 3, 200);
    let rep = evaluate(&ConstantScorer(0.9), &reals, &GtbaConfig::new(0.4, 2).unwrap()).unwrap();
    assert_eq!(rep.gfp.value, 1.0);
    assert_eq!(rep.bop.value, 1.0);
    assert_eq!(rep.anar, 0.0);
}
