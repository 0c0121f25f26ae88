use serde::{Deserialize, Serialize};

use super::latent_box::LatentBox;
use super::ActiveError;
use crate::detector::{rows, Detector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// Stop once a step moves no coordinate by more than this.
    pub eps_z: f64,
    pub max_iter: usize,
    /// Halve steps until `|prob - 0.5|` decreases.
    pub backtrack: bool,
    /// Damping added to `|g|^2` is `lambda_rel * (1 + |g|^2)`.
    pub lambda_rel: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            eps_z: 1e-7,
            max_iter: 100,
            backtrack: true,
            lambda_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub z: Vec<f64>,
    pub prob: f64,
    /// Productive (accepted) steps taken.
    pub iters: usize,
    pub converged: bool,
    /// A non-finite value appeared; `z` is the last finite iterate.
    pub abandoned: bool,
}

/// Damped Gauss-Newton step on the scalar residual `r = prob - 0.5`:
/// `dz = -g r / (|g|^2 + lambda)`.
pub fn damped_step(g: &[f64], r: f64, lambda_rel: f64) -> Vec<f64> {
    let g2: f64 = g.iter().map(|v| v * v).sum();
    let lambda = lambda_rel * (1.0 + g2);
    g.iter().map(|v| -v * r / (g2 + lambda)).collect()
}

const MAX_HALVINGS: usize = 30;

/// Pulls each code toward the detector's 0.5 level set, staying in `bx`.
pub fn project_to_boundary(
    det: &Detector,
    bx: &LatentBox,
    zs: &[Vec<f64>],
    cfg: &ProjectionConfig,
) -> Result<Vec<Projection>, ActiveError> {
    let dim = det.latent_dim();
    let mut out: Vec<Projection> = zs
        .iter()
        .map(|z| {
            let mut z = z.clone();
            bx.clamp(&mut z);
            Projection {
                z,
                prob: f64::NAN,
                iters: 0,
                converged: false,
                abandoned: false,
            }
        })
        .collect();
    let mut active: Vec<usize> = (0..zs.len()).collect();
    for _ in 0..=cfg.max_iter {
        if active.is_empty() {
            break;
        }
        let current: Vec<Vec<f64>> = active.iter().map(|&i| out[i].z.clone()).collect();
        let (prob, grad) = det.prob_grad(&rows(&current, dim)?)?;
        let mut proposals: Vec<(usize, Vec<f64>, f64)> = Vec::new();
        for (row, &i) in active.iter().enumerate() {
            let p = prob[row];
            let g: Vec<f64> = grad.row(row).to_vec();
            out[i].prob = p;
            if !p.is_finite() || g.iter().any(|v| !v.is_finite()) {
                out[i].abandoned = true;
                continue;
            }
            let r = p - 0.5;
            if r == 0.0 {
                out[i].converged = true;
                continue;
            }
            if out[i].iters >= cfg.max_iter {
                continue;
            }
            let step = damped_step(&g, r, cfg.lambda_rel);
            proposals.push((i, step, r.abs()));
        }
        let mut next_active = Vec::new();
        // candidate = clamp(z + t * step), t halved on failure
        let mut pending: Vec<(usize, Vec<f64>, f64, f64)> =
            proposals.into_iter().map(|(i, s, r)| (i, s, r, 1.0)).collect();
        for _ in 0..=MAX_HALVINGS {
            if pending.is_empty() {
                break;
            }
            let cands: Vec<Vec<f64>> = pending
                .iter()
                .map(|(i, s, _, t)| {
                    let mut c: Vec<f64> = out[*i].z.iter().zip(s).map(|(z, d)| z + t * d).collect();
                    bx.clamp(&mut c);
                    c
                })
                .collect();
            let mut still = Vec::new();
            let mut moved_small = vec![false; pending.len()];
            for (k, ((i, _, _, _), c)) in pending.iter().zip(&cands).enumerate() {
                let dz = out[*i].z.iter().zip(c).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                moved_small[k] = dz < cfg.eps_z;
            }
            let probs = if cfg.backtrack {
                det.probs(&cands)?
            } else {
                vec![f64::NAN; cands.len()]
            };
            for (k, (entry, c)) in pending.into_iter().zip(cands).enumerate() {
                let (i, s, r, t) = entry;
                if moved_small[k] {
                    out[i].converged = true;
                    continue;
                }
                let accept = !cfg.backtrack || (probs[k].is_finite() && (probs[k] - 0.5).abs() < r);
                if accept {
                    out[i].z = c;
                    out[i].iters += 1;
                    next_active.push(i);
                } else if cfg.backtrack && !probs[k].is_finite() {
                    out[i].abandoned = true;
                } else {
                    still.push((i, s, r, t * 0.5));
                }
            }
            pending = still;
        }
        // samples that exhausted their halvings stall where they are
        active = next_active;
    }
    let finals: Vec<Vec<f64>> = out.iter().map(|p| p.z.clone()).collect();
    if !finals.is_empty() {
        let probs = det.probs(&finals)?;
        for (p, q) in out.iter_mut().zip(probs) {
            p.prob = q;
            if !q.is_finite() {
                p.abandoned = true;
            }
        }
    }
    Ok(out)
}

/// Convenience for a single code.
pub fn project_one(det: &Detector, bx: &LatentBox, z: &[f64], cfg: &ProjectionConfig) -> Result<Projection, ActiveError> {
    Ok(project_to_boundary(det, bx, &[z.to_vec()], cfg)?.remove(0))
}
