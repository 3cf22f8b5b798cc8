//! Gate + top-D allocation (GTBA).
//!
//! Resources whose risk exceeds `q_th` are discarded. If fewer than `D`
//! survive, the request fails at the gate; otherwise the `D` lowest-risk
//! survivors are allocated and the request succeeds iff all of them are good.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtbaConfig {
    pub q_th: f64,
    pub d: usize,
}

impl GtbaConfig {
    pub fn new(q_th: f64, d: usize) -> Result<Self> {
        if !(q_th > 0.0 && q_th < 1.0) {
            return Err(Error::Config(format!("q_th must lie in (0, 1), got {q_th}")));
        }
        if d < 1 {
            return Err(Error::Config("D must be >= 1".into()));
        }
        Ok(GtbaConfig { q_th, d })
    }

    pub fn validate_for(&self, r: usize) -> Result<()> {
        if self.d > r {
            return Err(Error::Config(format!("D ({}) exceeds R ({r})", self.d)));
        }
        Ok(())
    }
}

/// Predicted risk scores for the `R` resources of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskVector(Vec<f64>);

impl RiskVector {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("risk score q[{i}] = {v} outside [0, 1]")));
        }
        Ok(RiskVector(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for RiskVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    GateFailure,
    SelectionFailure,
}

impl Outcome {
    pub fn is_bulk_outage(self) -> bool {
        self != Outcome::Success
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtbaDecision {
    /// Indices with `q_i <= q_th`, in ascending index order.
    pub admissible: Vec<usize>,
    /// Admissible indices sorted by ascending risk, ties by lower index.
    pub ranked: Vec<usize>,
    /// The allocated set; `None` on gate failure.
    pub selected: Option<Vec<usize>>,
    pub outcome: Outcome,
    pub good_selected_count: usize,
}

/// Stable ascending order by score; equal scores keep index order.
pub(crate) fn ascending_by_score(q: &[f64], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
}

pub fn admissible_set(q: &[f64], q_th: f64) -> Vec<usize> {
    q.iter()
        .enumerate()
        .filter(|(_, &v)| v <= q_th)
        .map(|(i, _)| i)
        .collect()
}

pub fn nar(q: &[f64], q_th: f64) -> usize {
    q.iter().filter(|&&v| v <= q_th).count()
}

/// Gate and ranking stage. The outcome is provisional (`Success`) until
/// [`classify_outcome`] sees the labels, except for gate failures.
pub fn select_top_d(q: &[f64], cfg: &GtbaConfig) -> GtbaDecision {
    let admissible = admissible_set(q, cfg.q_th);
    let mut ranked = admissible.clone();
    ascending_by_score(q, &mut ranked);
    let (selected, outcome) = if admissible.len() < cfg.d {
        (None, Outcome::GateFailure)
    } else {
        (Some(ranked[..cfg.d].to_vec()), Outcome::Success)
    };
    GtbaDecision {
        admissible,
        ranked,
        selected,
        outcome,
        good_selected_count: 0,
    }
}

pub fn classify_outcome(
    mut decision: GtbaDecision,
    g: &[u8],
    num_resources: usize,
    cfg: &GtbaConfig,
) -> Result<GtbaDecision> {
    if g.len() != num_resources {
        return Err(Error::Config(format!(
            "label vector has {} entries but the score vector has {num_resources}",
            g.len()
        )));
    }
    let Some(selected) = &decision.selected else {
        return Ok(decision);
    };
    decision.good_selected_count = selected.iter().map(|&i| g[i] as usize).sum();
    decision.outcome = if decision.good_selected_count >= cfg.d {
        Outcome::Success
    } else {
        Outcome::SelectionFailure
    };
    Ok(decision)
}

/// Runs the full rule on one realization.
pub fn allocate(q: &[f64], g: &[u8], cfg: &GtbaConfig) -> Result<GtbaDecision> {
    classify_outcome(select_top_d(q, cfg), g, q.len(), cfg)
}
