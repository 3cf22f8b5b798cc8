//! Training objectives over the `R` risk scores of one system.
//!
//! RBOL combines three pieces: a softplus penalty on the shortfall between
//! `D` and a soft count of admitted good resources, a weighted softplus hinge
//! on the margin between the worst selected and the best unselected score,
//! and a small BCE regularizer. The pointwise baselines (MAE, MSE, BCE) are
//! provided with the same value-plus-gradient interface.
//!
//! Gradients treat set membership, the cutoff weight and the arg-achievers
//! of the max/min as constants of the forward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gtba::{admissible_set, ascending_by_score};

pub const DEFAULT_LAMBDA_RANK: f64 = 8.0;
pub const DEFAULT_MARGIN: f64 = 0.08;
pub const DEFAULT_EPS_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "RBOL")]
    Rbol,
    #[serde(rename = "BCE")]
    Bce,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "MAE")]
    Mae,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Rbol, LossKind::Bce, LossKind::Mse, LossKind::Mae];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Rbol => "RBOL",
            LossKind::Bce => "BCE",
            LossKind::Mse => "MSE",
            LossKind::Mae => "MAE",
        }
    }

    /// Whether the objective depends on `D` (and the gate threshold).
    pub fn is_set_level(self) -> bool {
        self == LossKind::Rbol
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RBOL" => Ok(LossKind::Rbol),
            "BCE" => Ok(LossKind::Bce),
            "MSE" => Ok(LossKind::Mse),
            "MAE" => Ok(LossKind::Mae),
            other => Err(Error::Config(format!(
                "unknown loss {other:?}; expected one of RBOL, BCE, MSE, MAE"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbolConfig {
    pub q_th: f64,
    pub d: usize,
    pub tau: f64,
    pub lambda_rank: f64,
    pub margin: f64,
    pub lambda_bce: f64,
    pub eps_clip: f64,
}

impl RbolConfig {
    /// Table defaults for bulk size `d` at gate threshold `q_th`.
    pub fn for_d(q_th: f64, d: usize) -> Self {
        let (tau, lambda_bce) = default_hyperparams(d);
        RbolConfig {
            q_th,
            d,
            tau,
            lambda_rank: DEFAULT_LAMBDA_RANK,
            margin: DEFAULT_MARGIN,
            lambda_bce,
            eps_clip: DEFAULT_EPS_CLIP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda_rank > 0.0) {
            return Err(Error::Config("lambda_rank must be > 0".into()));
        }
        if !(self.margin >= 0.0) || !(self.lambda_bce >= 0.0) {
            return Err(Error::Config("margin and lambda_bce must be >= 0".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5) {
            return Err(Error::Config("eps_clip must lie in (0, 0.5)".into()));
        }
        if self.d < 1 {
            return Err(Error::Config("D must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(tau, lambda_bce)` as a function of the bulk size.
pub fn default_hyperparams(d: usize) -> (f64, f64) {
    if d <= 2 {
        (0.15, 0.2)
    } else {
        ((0.2 / d as f64).max(0.08), 0.05)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbolDiagnostics {
    pub p: Vec<f64>,
    pub soft_good: f64,
    pub shortfall: f64,
    pub omega: f64,
    pub q_max_sel: Option<f64>,
    pub q_min_unsel: Option<f64>,
    /// True when the gate admitted fewer than `D` and the cutoff used the
    /// unconditional top-D instead.
    pub gate_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub shortfall_term: f64,
    pub cut_term: f64,
    pub bce_term: f64,
    pub grad: Vec<f64>,
    pub diagnostics: Option<RbolDiagnostics>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn soft_acceptance(q: f64, q_th: f64, tau: f64) -> f64 {
    sigmoid((q_th - q) / tau)
}

pub fn soft_good_count(q: &[f64], y: &[f64], q_th: f64, tau: f64) -> f64 {
    q.iter()
        .zip(y)
        .map(|(&qi, &yi)| soft_acceptance(qi, q_th, tau) * (1.0 - yi))
        .sum()
}

pub fn shortfall_loss(soft_good: f64, d: usize) -> f64 {
    softplus(d as f64 - soft_good)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffSets {
    pub selected: Vec<usize>,
    pub unselected: Vec<usize>,
    /// `(index, score)` of the largest selected score.
    pub max_sel: (usize, f64),
    /// `(index, score)` of the smallest unselected score; `None` when `D = R`.
    pub min_unsel: Option<(usize, f64)>,
    pub gate_fallback: bool,
}

/// Training-time selection used by the cutoff term.
///
/// Mirrors the hard rule when the gate passes; otherwise falls back to the
/// unconditional top-D so the ranking term keeps producing gradient.
pub fn cutoff_sets(q: &[f64], q_th: f64, d: usize) -> CutoffSets {
    assert!(d >= 1 && d <= q.len(), "D must lie in 1..=R");
    let admissible = admissible_set(q, q_th);
    let gate_fallback = admissible.len() < d;
    let mut pool = if gate_fallback {
        (0..q.len()).collect()
    } else {
        admissible
    };
    ascending_by_score(q, &mut pool);
    let mut selected = pool[..d].to_vec();
    selected.sort_unstable();
    let unselected: Vec<usize> = (0..q.len()).filter(|i| selected.binary_search(i).is_err()).collect();

    // Strict comparisons over ascending indices: ties go to the lower index.
    let max_sel = selected.iter().fold((selected[0], q[selected[0]]), |best, &i| {
        if q[i] > best.1 {
            (i, q[i])
        } else {
            best
        }
    });
    let min_unsel = unselected.first().map(|&first| {
        unselected.iter().fold((first, q[first]), |best, &i| {
            if q[i] < best.1 {
                (i, q[i])
            } else {
                best
            }
        })
    });
    CutoffSets {
        selected,
        unselected,
        max_sel,
        min_unsel,
        gate_fallback,
    }
}

/// `(mean g outside) * (1 - mean g inside)`; zero if either set is empty.
pub fn cutoff_weight(selected: &[usize], unselected: &[usize], g: &[f64]) -> f64 {
    if selected.is_empty() || unselected.is_empty() {
        return 0.0;
    }
    let mean = |set: &[usize]| set.iter().map(|&i| g[i]).sum::<f64>() / set.len() as f64;
    mean(unselected) * (1.0 - mean(selected))
}

pub fn cutoff_loss(q: &[f64], g: &[f64], cfg: &RbolConfig) -> f64 {
    let sets = cutoff_sets(q, cfg.q_th, cfg.d);
    match sets.min_unsel {
        None => 0.0,
        Some((_, q_min)) => {
            let omega = cutoff_weight(&sets.selected, &sets.unselected, g);
            omega * softplus(sets.max_sel.1 + cfg.margin - q_min)
        }
    }
}

fn clamp_score(q: f64, eps: f64) -> f64 {
    q.clamp(eps, 1.0 - eps)
}

pub fn bce_loss(q: &[f64], y: &[f64], eps_clip: f64) -> f64 {
    let r = q.len() as f64;
    q.iter()
        .zip(y)
        .map(|(&qi, &yi)| {
            let qc = clamp_score(qi, eps_clip);
            -yi * qc.ln() - (1.0 - yi) * (1.0 - qc).ln()
        })
        .sum::<f64>()
        / r
}

fn bce_grad(q: &[f64], y: &[f64], eps_clip: f64) -> Vec<f64> {
    let r = q.len() as f64;
    q.iter()
        .zip(y)
        .map(|(&qi, &yi)| {
            if qi < eps_clip || qi > 1.0 - eps_clip {
                0.0
            } else {
                (-yi / qi + (1.0 - yi) / (1.0 - qi)) / r
            }
        })
        .collect()
}

fn check_inputs(q: &[f64], y: &[f64]) -> Result<()> {
    if q.len() != y.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            q.len(),
            y.len()
        )));
    }
    if q.is_empty() {
        return Err(Error::Input("empty score vector".into()));
    }
    if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite score q[{i}] = {v}")));
    }
    Ok(())
}

/// RBOL value, terms and analytic gradient with respect to `q`.
pub fn rbol(q: &[f64], y: &[f64], cfg: &RbolConfig) -> Result<LossEval> {
    check_inputs(q, y)?;
    if cfg.d > q.len() {
        return Err(Error::Config(format!("D ({}) exceeds R ({})", cfg.d, q.len())));
    }
    let g: Vec<f64> = y.iter().map(|&yi| 1.0 - yi).collect();

    let p: Vec<f64> = q.iter().map(|&qi| soft_acceptance(qi, cfg.q_th, cfg.tau)).collect();
    let soft_good: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
    let shortfall = cfg.d as f64 - soft_good;
    let shortfall_term = softplus(shortfall);

    let sets = cutoff_sets(q, cfg.q_th, cfg.d);
    let omega = cutoff_weight(&sets.selected, &sets.unselected, &g);
    let violation = sets.min_unsel.map(|(_, q_min)| sets.max_sel.1 + cfg.margin - q_min);
    let cut_term = violation.map_or(0.0, |v| omega * softplus(v));

    let bce_term = bce_loss(q, y, cfg.eps_clip);
    let total = shortfall_term + cfg.lambda_rank * cut_term + cfg.lambda_bce * bce_term;

    // d softplus(D - G)/dq_i = sigmoid(D - G) * g_i * p_i (1 - p_i) / tau
    let ds = sigmoid(shortfall);
    let mut grad: Vec<f64> = p
        .iter()
        .zip(&g)
        .map(|(pi, gi)| ds * gi * pi * (1.0 - pi) / cfg.tau)
        .collect();
    if let (Some(v), Some((i_min, _))) = (violation, sets.min_unsel) {
        let w = cfg.lambda_rank * omega * sigmoid(v);
        grad[sets.max_sel.0] += w;
        grad[i_min] -= w;
    }
    for (gr, b) in grad.iter_mut().zip(bce_grad(q, y, cfg.eps_clip)) {
        *gr += cfg.lambda_bce * b;
    }

    Ok(LossEval {
        total,
        shortfall_term,
        cut_term,
        bce_term,
        grad,
        diagnostics: Some(RbolDiagnostics {
            p,
            soft_good,
            shortfall,
            omega,
            q_max_sel: Some(sets.max_sel.1),
            q_min_unsel: sets.min_unsel.map(|(_, v)| v),
            gate_fallback: sets.gate_fallback,
        }),
    })
}

/// Pointwise baselines averaged over the `R` resources.
pub fn baseline_loss(kind: LossKind, q: &[f64], y: &[f64], eps_clip: f64) -> Result<LossEval> {
    check_inputs(q, y)?;
    let r = q.len() as f64;
    let (total, grad) = match kind {
        LossKind::Mae => (
            q.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / r,
            q.iter()
                .zip(y)
                .map(|(a, b)| {
                    let diff: f64 = a - b;
                    if diff == 0.0 {
                        0.0
                    } else {
                        diff.signum() / r
                    }
                })
                .collect(),
        ),
        LossKind::Mse => (
            q.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r,
            q.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / r).collect(),
        ),
        LossKind::Bce => (bce_loss(q, y, eps_clip), bce_grad(q, y, eps_clip)),
        LossKind::Rbol => {
            return Err(Error::Config("RBOL is not a pointwise baseline".into()));
        }
    };
    Ok(LossEval {
        total,
        shortfall_term: 0.0,
        cut_term: 0.0,
        bce_term: if kind == LossKind::Bce { total } else { 0.0 },
        grad,
        diagnostics: None,
    })
}

/// Dispatches to RBOL or a baseline.
pub fn evaluate_loss(kind: LossKind, q: &[f64], y: &[f64], cfg: &RbolConfig) -> Result<LossEval> {
    match kind {
        LossKind::Rbol => rbol(q, y, cfg),
        _ => baseline_loss(kind, q, y, cfg.eps_clip),
    }
}
