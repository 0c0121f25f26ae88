//! The active learning loop: bootstrap sampling in the latent box, dataset
//! partition, boundary projection, aggregation and detector updates.

mod dataset;
mod elbow;
mod latent_box;
mod loss;
mod project;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{partition, CollisionDataset, Entry, Origin, Subset, SubsetCounts};
pub use elbow::{elbow_point, Elbow};
pub use latent_box::LatentBox;
pub use loss::{batch_loss, bce_with_logits, boundary_term, ranking_pairs, LossTerms, LossWeights, MAX_RANK_PAIRS};
pub use project::{damped_step, project_one, project_to_boundary, Projection, ProjectionConfig};
pub use train::{calibrate_pd_scale, dataset_ce, model_update, EpochStats, TrainSchedule};

use crate::detector::{Detector, DetectorError};
use crate::geom::{CollisionOracle, CollisionSample, GeomError, LatentDecoder};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("latent code has length {got}, expected {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error("elbow: {0}")]
    Elbow(String),
    #[error("labeling sample {index} failed: {source}")]
    Oracle { index: usize, source: GeomError },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source of ground-truth labels for latent codes.
pub trait Labeler {
    fn label(&self, zs: &[Vec<f64>]) -> Result<Vec<CollisionSample>, ActiveError>;
}

impl<D: LatentDecoder + ?Sized> Labeler for CollisionOracle<'_, D> {
    fn label(&self, zs: &[Vec<f64>]) -> Result<Vec<CollisionSample>, ActiveError> {
        // label one by one on failure to report the offending sample
        self.label_batch(zs).or_else(|_| {
            zs.iter()
                .enumerate()
                .map(|(index, z)| self.label(z).map_err(|source| ActiveError::Oracle { index, source }))
                .collect()
        })
    }
}

/// `n_init` uniform draws from the box, labeled.
pub fn bootstrap(
    n_init: usize,
    bx: &LatentBox,
    labeler: &dyn Labeler,
    seed: u64,
) -> Result<Vec<CollisionSample>, ActiveError> {
    let zs = bx.sample_uniform(n_init, seed);
    let samples = labeler.label(&zs)?;
    let pos = samples.iter().filter(|s| s.label).count();
    let minority = pos.min(samples.len() - pos) as f64;
    if !samples.is_empty() && minority < 0.01 * samples.len() as f64 {
        log::warn!("bootstrap set is imbalanced: {pos} of {} samples collide", samples.len());
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// Labeled projections of codes resampled from the dataset.
    pub projected: Vec<CollisionSample>,
    /// Labeled fresh uniform draws.
    pub uniform: Vec<CollisionSample>,
    pub projections: Vec<Projection>,
}

impl Aggregation {
    pub fn len(&self) -> usize {
        self.projected.len() + self.uniform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One aggregation round: `n_aug / 2` codes drawn with replacement from the
/// existing dataset and projected onto the detector's boundary, the rest drawn
/// uniformly from the box; all labeled by the oracle.
pub fn aggregate(
    existing: &[&[f64]],
    det: &Detector,
    bx: &LatentBox,
    labeler: &dyn Labeler,
    n_aug: usize,
    projection: &ProjectionConfig,
    seed: u64,
) -> Result<Aggregation, ActiveError> {
    if existing.is_empty() {
        return Err(ActiveError::EmptyInput("aggregation source"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_proj = n_aug / 2;
    let picks: Vec<Vec<f64>> = (0..n_proj)
        .map(|_| existing[rng.random_range(0..existing.len())].to_vec())
        .collect();
    let projections = project_to_boundary(det, bx, &picks, projection)?;
    let unconverged = projections.iter().filter(|p| !p.converged).count();
    if unconverged > 0 {
        log::debug!("{unconverged} of {n_proj} projections did not converge; kept");
    }
    let proj_z: Vec<Vec<f64>> = projections.iter().map(|p| p.z.clone()).collect();
    let fresh = bx.sample_with(n_aug - n_proj, &mut rng);
    Ok(Aggregation {
        projected: labeler.label(&proj_z)?,
        uniform: labeler.label(&fresh)?,
        projections,
    })
}

/// Fraction of samples with `|pd| < 10 eps` or in the boundary subset.
pub fn near_boundary_fraction(samples: &[CollisionSample], eps: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples
        .iter()
        .filter(|s| s.pd.abs() < 10.0 * eps || partition(s.pd, eps) == Subset::Boundary)
        .count();
    n as f64 / samples.len() as f64
}
