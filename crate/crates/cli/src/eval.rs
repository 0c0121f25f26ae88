//! Detection and handling metrics.

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use selfcol::active::Labeler;
use selfcol::autoencoder::Autoencoder;
use selfcol::detector::{rows, Detector};
use selfcol::geom::CollisionSample;
use selfcol::handler::{
    alm_solve, relative_pd_reduction, AlmConfig, AlmResult, CartesianTarget, Differentiable, LatentTarget,
    NeuralConstraint,
};

use crate::config::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub total: usize,
    pub positives: usize,
    pub accuracy: f64,
    /// Colliding samples predicted collision-free, over all colliding samples.
    pub fnr: f64,
    pub fpr: f64,
}

/// Confusion-matrix rates; a rate with an empty denominator is 0.
pub fn detection_metrics(predicted: &[bool], truth: &[bool]) -> DetectionMetrics {
    assert_eq!(predicted.len(), truth.len(), "prediction count");
    let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    DetectionMetrics {
        total: truth.len(),
        positives: tp + fneg,
        accuracy: ratio(tp + tn, truth.len()),
        fnr: ratio(fneg, tp + fneg),
        fpr: ratio(fp, fp + tn),
    }
}

pub fn evaluate_detector(det: &Detector, test: &[CollisionSample]) -> Result<DetectionMetrics> {
    let mut predicted = Vec::with_capacity(test.len());
    for chunk in test.chunks(4096) {
        let zs: Vec<Vec<f64>> = chunk.iter().map(|s| s.z.clone()).collect();
        predicted.extend(det.forward(&rows(&zs, det.latent_dim())?)?.labels());
    }
    let truth: Vec<bool> = test.iter().map(|s| s.label).collect();
    Ok(detection_metrics(&predicted, &truth))
}

/// Outcome of handling one penetrating user code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleRecord {
    pub pd_user: f64,
    pub pd_out: f64,
    pub reduction: f64,
    pub feasible: bool,
    pub best_effort: bool,
    /// `|z - z_user|^2 / 2`.
    pub embedding_diff: f64,
    pub initial_violation: f64,
    pub final_violation: f64,
}

impl HandleRecord {
    pub fn success(&self) -> bool {
        self.reduction > 0.0
    }
}

pub const HANDLE_CSV_HEADER: &str =
    "pd_user,pd_out,reduction,success,feasible,best_effort,embedding_diff,initial_violation,final_violation";

pub fn handle_csv(records: &[HandleRecord]) -> String {
    let mut s = format!("{HANDLE_CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.pd_user,
            r.pd_out,
            r.reduction,
            r.success() as u8,
            r.feasible as u8,
            r.best_effort as u8,
            r.embedding_diff,
            r.initial_violation,
            r.final_violation
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandlingMetrics {
    pub trials: usize,
    pub success_rate: f64,
    /// Means over successful trials only.
    pub mean_reduction: f64,
    pub mean_embedding_diff: f64,
    pub feasible: usize,
    /// Infeasible exits, and how many of those were flagged best-effort.
    pub infeasible: usize,
    pub flagged: usize,
    /// Infeasible exits whose violation did not grow.
    pub violation_not_worse: usize,
}

pub fn handling_metrics(records: &[HandleRecord]) -> HandlingMetrics {
    let ok: Vec<&HandleRecord> = records.iter().filter(|r| r.success()).collect();
    let mean = |f: fn(&HandleRecord) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let infeasible: Vec<&HandleRecord> = records.iter().filter(|r| !r.feasible).collect();
    HandlingMetrics {
        trials: records.len(),
        success_rate: if records.is_empty() {
            0.0
        } else {
            ok.len() as f64 / records.len() as f64
        },
        mean_reduction: mean(|r| r.reduction),
        mean_embedding_diff: mean(|r| r.embedding_diff),
        feasible: records.len() - infeasible.len(),
        infeasible: infeasible.len(),
        flagged: infeasible.iter().filter(|r| r.best_effort).count(),
        violation_not_worse: infeasible.iter().filter(|r| r.final_violation <= r.initial_violation).count(),
    }
}

/// Runs the handler on every user code and scores outputs with the oracle.
pub fn handle_collisions(
    det: &Detector,
    ae: &Autoencoder,
    labeler: &dyn Labeler,
    users: &[CollisionSample],
    objective: Objective,
    alm: &AlmConfig,
) -> Result<(Vec<HandleRecord>, Vec<AlmResult>)> {
    if let Some(u) = users.iter().find(|u| u.pd <= 0.0) {
        bail!("handling input is not penetrating (pd = {})", u.pd);
    }
    if users.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let starts: Vec<Vec<f64>> = users.iter().map(|u| u.z.clone()).collect();
    let targets = rows(&starts, det.latent_dim())?;
    let constraint = NeuralConstraint { detector: det };
    let results = match objective {
        Objective::Latent => alm_solve(&starts, &LatentTarget { targets }, &constraint, alm),
        Objective::Cartesian => {
            let target_features: Array2<f64> = ae.decode_batch(&targets)?;
            let obj = CartesianTarget {
                decoder: ae,
                target_features,
            };
            alm_solve(&starts, &obj as &dyn Differentiable, &constraint, alm)
        }
    }
    .context("collision handler")?;
    let outs: Vec<Vec<f64>> = results.iter().map(|r| r.z.clone()).collect();
    let labeled = labeler.label(&outs)?;
    let mut records = Vec::with_capacity(users.len());
    for ((u, r), out) in users.iter().zip(&results).zip(&labeled) {
        let d2: f64 = r.z.iter().zip(&u.z).map(|(a, b)| (a - b) * (a - b)).sum();
        records.push(HandleRecord {
            pd_user: u.pd,
            pd_out: out.pd,
            reduction: relative_pd_reduction(u.pd, out.pd)?,
            feasible: r.feasible,
            best_effort: r.best_effort,
            embedding_diff: 0.5 * d2,
            initial_violation: r.initial_violation,
            final_violation: r.final_violation,
        });
    }
    Ok((records, results))
}
