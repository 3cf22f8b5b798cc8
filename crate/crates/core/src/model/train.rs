//! On-the-fly training: one freshly generated `R`-resource system per batch.

use log::debug;
use sha2::{Digest, Sha256};

use crate::channel::{generate_realization_with, BinExtractor, ChannelRealization, SimConfig};
use crate::error::{Error, Result};
use crate::loss::{evaluate_loss, LossKind, RbolConfig};
use crate::model::adam::{adam_step, AdamState};
use crate::model::checkpoint::{Checkpoint, TrainingMeta};
use crate::model::lstm::{ModelDims, ModelWeights};
use crate::rng::{derive_stream, StreamPurpose};

pub const DEFAULT_EPOCHS: usize = 65;
pub const DEFAULT_BATCHES_PER_EPOCH: usize = 60;
pub const DEFAULT_GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub d: usize,
    pub q_th: f64,
    pub sim: SimConfig,
    pub dims: ModelDims,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub validation_batches: usize,
    /// Seeds the whole run together with `experiment_id`.
    pub master_seed: u64,
    /// Selects the realization schedule; runs sharing it see identical data.
    pub experiment_id: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Overrides the table defaults for `d`.
    pub rbol: Option<RbolConfig>,
}

impl TrainConfig {
    pub fn new(loss: LossKind, d: usize, sim: SimConfig) -> Self {
        TrainConfig {
            loss,
            d,
            q_th: 0.4,
            master_seed: sim.master_seed,
            sim,
            dims: ModelDims::default(),
            epochs: DEFAULT_EPOCHS,
            batches_per_epoch: DEFAULT_BATCHES_PER_EPOCH,
            validation_batches: DEFAULT_BATCHES_PER_EPOCH,
            experiment_id: 0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            rbol: None,
        }
    }

    pub fn rbol_config(&self) -> RbolConfig {
        self.rbol.unwrap_or_else(|| RbolConfig::for_d(self.q_th, self.d))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.d < 1 || self.d > self.sim.r {
            return Err(Error::Config(format!("D = {} must lie in 1..={}", self.d, self.sim.r)));
        }
        if !(self.q_th > 0.0 && self.q_th < 1.0) {
            return Err(Error::Config(format!("q_th must lie in (0, 1), got {}", self.q_th)));
        }
        if self.batches_per_epoch < 1 {
            return Err(Error::Config("batches_per_epoch must be >= 1".into()));
        }
        self.rbol_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation batches are configured.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// SHA-256 over the channel data consumed by training. Runs with the same
    /// `(master_seed, experiment_id)` and sim geometry agree on it regardless
    /// of loss, `D` or threshold.
    pub data_fingerprint: String,
}

pub fn init_weights(dims: ModelDims, master_seed: u64, experiment_id: u64) -> ModelWeights {
    ModelWeights::init(
        dims,
        &mut derive_stream(StreamPurpose::Init, master_seed, experiment_id, 0, 0),
    )
}

/// Loss value and `dL/dq` for one system.
fn system_loss(
    weights: &ModelWeights,
    real: &ChannelRealization,
    cfg: &TrainConfig,
    rbol: &RbolConfig,
) -> Result<(f64, Vec<f64>, Vec<crate::model::lstm::SeqCache>)> {
    let caches = weights.forward_batch(&real.past)?;
    let q: Vec<f64> = caches.iter().map(|c| c.q).collect();
    let eval = evaluate_loss(cfg.loss, &q, &real.y_f64(), rbol)?;
    Ok((eval.total, eval.grad, caches))
}

fn fingerprint_update(hasher: &mut Sha256, real: &ChannelRealization) {
    for seq in &real.past {
        for v in seq {
            hasher.update(v.to_le_bytes());
        }
    }
    for gains in &real.future_gains {
        for g in gains {
            hasher.update(g.re.to_le_bytes());
            hasher.update(g.im.to_le_bytes());
        }
    }
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rbol = cfg.rbol_config();
    let bins = BinExtractor::new(&cfg.sim);
    let mut weights = init_weights(cfg.dims, cfg.master_seed, cfg.experiment_id);
    let mut adam = AdamState::new(weights.params.len());
    let mut hasher = Sha256::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut train_sum = 0.0;
        for batch in 0..cfg.batches_per_epoch {
            let diverged = |reason: String| Error::Divergence { epoch, batch, reason };
            let mut stream = derive_stream(
                StreamPurpose::Train,
                cfg.master_seed,
                cfg.experiment_id,
                epoch as u64,
                batch as u64,
            );
            let real = generate_realization_with(&cfg.sim, &bins, &mut stream);
            fingerprint_update(&mut hasher, &real);

            let (loss, dq, caches) = system_loss(&weights, &real, cfg, &rbol)?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss = {loss}")));
            }
            train_sum += loss;
            let mut grad = weights.backward(&caches, &dq);
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.norm();
                if norm > clip {
                    grad.scale(clip / norm);
                }
            }
            adam_step(&mut weights, &grad, &mut adam).map_err(|e| diverged(e.to_string()))?;
        }

        let val_loss = if cfg.validation_batches > 0 {
            let mut sum = 0.0;
            for batch in 0..cfg.validation_batches {
                let mut stream = derive_stream(
                    StreamPurpose::Validation,
                    cfg.master_seed,
                    cfg.experiment_id,
                    epoch as u64,
                    batch as u64,
                );
                let real = generate_realization_with(&cfg.sim, &bins, &mut stream);
                let q = weights.predict_batch(&real.past);
                sum += evaluate_loss(cfg.loss, &q, &real.y_f64(), &rbol)?.total;
            }
            Some(sum / cfg.validation_batches as f64)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            train_loss: train_sum / cfg.batches_per_epoch as f64,
            val_loss,
        };
        debug!(
            "{} D={} exp={} epoch {}: train {:.5} val {:?}",
            cfg.loss, cfg.d, cfg.experiment_id, epoch, entry.train_loss, entry.val_loss
        );
        log.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            weights,
            adam,
            meta: TrainingMeta {
                loss: cfg.loss,
                d: cfg.d,
                q_th: cfg.q_th,
                epoch: cfg.epochs,
                master_seed: cfg.master_seed,
                experiment_id: cfg.experiment_id,
                sim: cfg.sim.clone(),
            },
        },
        log,
        data_fingerprint: to_hex(&hasher.finalize()),
    })
}
