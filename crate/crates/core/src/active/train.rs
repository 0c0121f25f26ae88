use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, LossTerms, LossWeights};
use super::ActiveError;
use crate::detector::Detector;
use crate::geom::CollisionSample;
use crate::nn::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainSchedule {
    pub fn bootstrap() -> Self {
        TrainSchedule {
            lr: 1e-3,
            batch_size: 512,
            epochs: 100,
        }
    }

    pub fn fine_tune() -> Self {
        TrainSchedule {
            lr: 1e-4,
            batch_size: 1024,
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Batch-averaged loss terms seen during the epoch.
    pub terms: LossTerms,
    /// Cross-entropy of the whole training set after the epoch.
    pub train_ce: f64,
}

/// Mean absolute penetration depth, the unit in which the detector regresses.
pub fn calibrate_pd_scale(det: &mut Detector, samples: &[&CollisionSample]) {
    let n = samples.len().max(1) as f64;
    let m = samples.iter().map(|s| s.pd.abs()).sum::<f64>() / n;
    det.pd_scale = if m > 0.0 { m } else { 1.0 };
}

/// Cross-entropy of the detector over samples, no gradient.
pub fn dataset_ce(det: &Detector, samples: &[&CollisionSample]) -> Result<f64, ActiveError> {
    let zs: Vec<Vec<f64>> = samples.iter().map(|s| s.z.clone()).collect();
    let out = det.forward(&crate::detector::rows(&zs, det.latent_dim())?)?;
    let total: f64 = out
        .logit
        .iter()
        .zip(samples)
        .map(|(&l, s)| super::loss::bce_with_logits(l, s.label))
        .sum();
    Ok(total / samples.len().max(1) as f64)
}

/// Warm-started Adam epochs of the four-term loss over `samples`.
pub fn model_update(
    det: &mut Detector,
    samples: &[&CollisionSample],
    eps: f64,
    weights: &LossWeights,
    boundary: bool,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochStats>, ActiveError> {
    if samples.is_empty() {
        return Err(ActiveError::EmptyInput("model update"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(det.num_params(), AdamConfig::with_lr(schedule.lr));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(schedule.epochs);
    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        let mut batches = 0.0;
        for idx in order.chunks(schedule.batch_size.max(1)) {
            let batch: Vec<&CollisionSample> = idx.iter().map(|&i| samples[i]).collect();
            let (terms, grad) = batch_loss(det, &batch, eps, weights, boundary, &mut rng, true)
                .map_err(|e| ActiveError::Diverged(format!("epoch {epoch}: {e}")))?;
            if !terms.total.is_finite() {
                return Err(ActiveError::Diverged(format!("epoch {epoch}: loss {:?}", terms)));
            }
            adam.step(&mut det.params, &grad.expect("gradient requested"))?;
            acc.pd += terms.pd;
            acc.rank += terms.rank;
            acc.ce += terms.ce;
            acc.boundary += terms.boundary;
            acc.total += terms.total;
            batches += 1.0;
        }
        for v in [&mut acc.pd, &mut acc.rank, &mut acc.ce, &mut acc.boundary, &mut acc.total] {
            *v /= batches;
        }
        let train_ce = dataset_ce(det, samples)?;
        log.push(EpochStats {
            epoch,
            terms: acc,
            train_ce,
        });
    }
    Ok(log)
}
