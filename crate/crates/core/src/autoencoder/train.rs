use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{mean_row_entropy, AeConfig, AeError, Autoencoder};
use crate::mesh::{FeatureVector, Mesh};
use crate::nn::{AdamConfig, AdamState, Tape};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub level1: f64,
    pub reconstruction: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    /// Entry 0 is the loss at initialization.
    pub epochs: Vec<EpochLoss>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,level1,reconstruction,entropy\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                e.epoch, e.loss, e.level1, e.reconstruction, e.entropy
            ));
        }
        s
    }
}

fn stack(features: &[&FeatureVector], scale: f64) -> Array2<f64> {
    let cols = features[0].len();
    let flat: Vec<f64> = features.iter().flat_map(|f| f.0.iter().map(|v| v / scale)).collect();
    Array2::from_shape_vec((features.len(), cols), flat).expect("feature batch")
}

/// Loss terms and (optionally) the parameter gradient for one batch.
fn batch_loss(ae: &Autoencoder, x: Array2<f64>, sparsity: f64, grad: bool) -> Result<(EpochLoss, Option<Vec<f64>>), AeError> {
    let mut t = Tape::new(&ae.params);
    let target = x.clone();
    let xi = t.input(x);
    let pass = ae.autoencode(&mut t, xi);
    t.check_finite()?;
    let n = target.len() as f64;
    let r1 = t.value(pass.level1) - &target;
    let r2 = t.value(pass.output) - &target;
    let level1 = r1.iter().map(|v| v * v).sum::<f64>() / n;
    let reconstruction = r2.iter().map(|v| v * v).sum::<f64>() / n;
    let attention = t.value(pass.attention);
    let entropy = mean_row_entropy(attention);
    let loss = level1 + reconstruction + sparsity * entropy;
    let stats = EpochLoss {
        epoch: 0,
        loss,
        level1,
        reconstruction,
        entropy,
    };
    if !grad {
        return Ok((stats, None));
    }
    let rows = attention.nrows() as f64;
    let ga = attention.mapv(|a| -sparsity * (a.max(1e-300).ln() + 1.0) / rows);
    let g = t.backward(&[
        (pass.level1, r1 * (2.0 / n)),
        (pass.output, r2 * (2.0 / n)),
        (pass.attention, ga),
    ])?;
    Ok((stats, Some(g.params)))
}

fn dataset_loss(ae: &Autoencoder, features: &[FeatureVector], sparsity: f64) -> Result<EpochLoss, AeError> {
    let mut acc = EpochLoss {
        epoch: 0,
        loss: 0.0,
        level1: 0.0,
        reconstruction: 0.0,
        entropy: 0.0,
    };
    let refs: Vec<&FeatureVector> = features.iter().collect();
    for chunk in refs.chunks(256) {
        let (s, _) = batch_loss(ae, stack(chunk, ae.feature_scale), sparsity, false)?;
        let w = chunk.len() as f64 / features.len() as f64;
        acc.level1 += w * s.level1;
        acc.reconstruction += w * s.reconstruction;
        acc.entropy = s.entropy;
    }
    acc.loss = acc.level1 + acc.reconstruction + sparsity * acc.entropy;
    Ok(acc)
}

/// Trains on rigid-invariant features of meshes sharing `rest`'s topology.
///
/// Each logged epoch is the full-dataset loss after that epoch's updates.
pub fn train_autoencoder(
    rest: &Mesh,
    features: &[FeatureVector],
    cfg: &AeConfig,
) -> Result<(Autoencoder, TrainLog), AeError> {
    if features.len() < 2 {
        return Err(AeError::Dataset(format!("need at least 2 meshes, got {}", features.len())));
    }
    let dim = 3 * rest.num_vertices();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(AeError::FeatureDim {
            got: f.len(),
            expected: dim,
        });
    }
    let scale = features.iter().map(FeatureVector::max_abs).fold(0.0, f64::max);
    let mut ae = Autoencoder::new(rest, cfg, if scale > 0.0 { scale } else { 1.0 });
    let mut adam = AdamState::new(ae.num_params(), AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ae);
    let mut log = TrainLog::default();
    log.epochs.push(dataset_loss(&ae, features, cfg.sparsity)?);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let refs: Vec<&FeatureVector> = idx.iter().map(|&i| &features[i]).collect();
            let (_, grad) = batch_loss(&ae, stack(&refs, ae.feature_scale), cfg.sparsity, true).map_err(|e| {
                AeError::Diverged {
                    epoch,
                    reason: e.to_string(),
                }
            })?;
            adam.step(&mut ae.params, &grad.expect("gradient"))?;
        }
        let mut stats = dataset_loss(&ae, features, cfg.sparsity).map_err(|e| AeError::Diverged {
            epoch,
            reason: e.to_string(),
        })?;
        if !stats.loss.is_finite() {
            return Err(AeError::Diverged {
                epoch,
                reason: "loss is not finite".into(),
            });
        }
        stats.epoch = epoch;
        if epoch % 50 == 0 || epoch == cfg.epochs {
            log::debug!("autoencoder epoch {epoch}: loss {:.3e}", stats.loss);
        }
        log.epochs.push(stats);
    }
    Ok((ae, log))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    /// Mean per-vertex position error over the bounding-box diagonal.
    pub mean_vertex_error: f64,
    /// Sum of feature error norms over sum of feature norms.
    pub relative_error: f64,
}

/// Round-trip quality of `decode(encode(f))` over a feature set.
pub fn reconstruction_report(
    ae: &Autoencoder,
    rest: &Mesh,
    features: &[FeatureVector],
) -> Result<ReconstructionReport, AeError> {
    let diag = rest.bbox_diagonal();
    let (mut vert_err, mut count) = (0.0, 0usize);
    let (mut err_norm, mut ref_norm) = (0.0, 0.0);
    let refs: Vec<&FeatureVector> = features.iter().collect();
    for chunk in refs.chunks(256) {
        let x = stack(chunk, 1.0);
        let z = ae.encode_rows(&x)?;
        let y = ae.decode_batch(&z)?;
        for (yr, xr) in y.axis_iter(Axis(0)).zip(x.axis_iter(Axis(0))) {
            let d = &yr - &xr;
            err_norm += d.iter().map(|v| v * v).sum::<f64>().sqrt();
            ref_norm += xr.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in d.as_slice().unwrap().chunks_exact(3) {
                vert_err += (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                count += 1;
            }
        }
    }
    Ok(ReconstructionReport {
        mean_vertex_error: vert_err / count.max(1) as f64 / diag,
        relative_error: err_norm / ref_norm.max(1e-300),
    })
}
