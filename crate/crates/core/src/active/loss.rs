use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{partition, Subset};
use crate::detector::Detector;
use crate::geom::CollisionSample;
use crate::nn::{sigmoid, NnError, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_pd: f64,
    pub w_pdsum: f64,
    pub w_r: f64,
    pub w_ce: f64,
    pub w_b: f64,
    /// Ranking margin in units of the detector's PD scale.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_pd: 5.0,
            w_pdsum: 0.2,
            w_r: 2.0,
            w_ce: 2.0,
            w_b: 0.5,
            alpha: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.w_pd, self.w_pdsum, self.w_r, self.w_ce, self.w_b, self.alpha];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(format!("loss weights must be finite and non-negative: {self:?}"))
        }
    }
}

/// Per-batch loss components (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pd: f64,
    pub rank: f64,
    pub ce: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Boundary-loss contribution of one prediction.
pub fn boundary_term(prob: f64) -> f64 {
    (prob - 0.5).abs()
}

/// Binary cross-entropy of a logit against a 0/1 target, computed stably.
pub fn bce_with_logits(logit: f64, target: bool) -> f64 {
    let y = if target { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Ordered pairs `(a, b)` with `pds[a] < pds[b]`: all of them when there are
/// at most `max_pairs` candidate pairs, otherwise `max_pairs` random draws.
pub fn ranking_pairs(pds: &[f64], max_pairs: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let n = pds.len();
    let order = |i: usize, j: usize| {
        if pds[i] < pds[j] {
            Some((i, j))
        } else if pds[j] < pds[i] {
            Some((j, i))
        } else {
            None
        }
    };
    if n < 2 {
        return Vec::new();
    }
    if n * (n - 1) / 2 <= max_pairs {
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                out.extend(order(i, j));
            }
        }
        return out;
    }
    (0..max_pairs)
        .filter_map(|_| {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n - 1);
            let j = if j >= i { j + 1 } else { j };
            order(i, j)
        })
        .collect()
}

pub const MAX_RANK_PAIRS: usize = 4096;

/// Loss on one minibatch and, if requested, its parameter gradient.
///
/// With `boundary` set, cross-entropy covers the positive and negative subsets
/// and the boundary subset feeds the boundary loss. Without it, every sample
/// gets cross-entropy against its label and the boundary loss is off.
pub fn batch_loss(
    det: &Detector,
    batch: &[&CollisionSample],
    eps: f64,
    w: &LossWeights,
    boundary: bool,
    rng: &mut impl Rng,
    want_grad: bool,
) -> Result<(LossTerms, Option<Vec<f64>>), NnError> {
    let b = batch.len();
    let k = det.num_domains;
    let dim = det.latent_dim();
    let flat: Vec<f64> = batch.iter().flat_map(|s| s.z.iter().copied()).collect();
    let z = Array2::from_shape_vec((b, dim), flat).map_err(|_| NnError::ShapeMismatch {
        what: "training batch",
        expected: b * dim,
        got: batch.iter().map(|s| s.z.len()).sum(),
    })?;
    let mut tape = Tape::new(&det.params);
    let nodes = det.graph(&mut tape, &z);
    tape.check_finite()?;
    let s = tape.value(nodes.s);
    let logit = tape.value(nodes.logit);
    let prob = tape.value(nodes.prob);
    let scale = det.pd_scale;

    // penetration regression on S_i and their sum
    let mut gs = Array2::<f64>::zeros((b, k));
    let mut l_pd = 0.0;
    let mut sums = vec![0.0; b];
    for r in 0..b {
        let target = batch[r].pd / scale;
        let sum: f64 = s.row(r).sum();
        sums[r] = sum;
        let dsum = sum - target;
        l_pd += w.w_pdsum * dsum * dsum;
        for i in 0..k {
            let d = s[[r, i]] - batch[r].pd_per_domain[i] / scale;
            l_pd += d * d;
            gs[[r, i]] += w.w_pd * 2.0 * (d + w.w_pdsum * dsum) / b as f64;
        }
    }
    l_pd /= b as f64;

    // ranking hinge on summed predictions
    let pds: Vec<f64> = batch.iter().map(|s| s.pd).collect();
    let pairs = ranking_pairs(&pds, MAX_RANK_PAIRS, rng);
    let mut l_r = 0.0;
    if !pairs.is_empty() {
        let np = pairs.len() as f64;
        for &(a, bb) in &pairs {
            let h = w.alpha - (sums[bb] - sums[a]);
            if h > 0.0 {
                l_r += h;
                for i in 0..k {
                    gs[[bb, i]] -= w.w_r / np;
                    gs[[a, i]] += w.w_r / np;
                }
            }
        }
        l_r /= np;
    }

    // classification and boundary terms
    let subsets: Vec<Subset> = batch.iter().map(|s| partition(s.pd, eps)).collect();
    let ce_rows: Vec<usize> = (0..b).filter(|&r| !boundary || subsets[r] != Subset::Boundary).collect();
    let b_rows: Vec<usize> = if boundary {
        (0..b).filter(|&r| subsets[r] == Subset::Boundary).collect()
    } else {
        Vec::new()
    };
    let mut gl = Array2::<f64>::zeros((b, 1));
    let mut l_ce = 0.0;
    for &r in &ce_rows {
        let y = batch[r].label;
        l_ce += bce_with_logits(logit[[r, 0]], y);
        gl[[r, 0]] = w.w_ce * (sigmoid(logit[[r, 0]]) - if y { 1.0 } else { 0.0 }) / ce_rows.len() as f64;
    }
    if !ce_rows.is_empty() {
        l_ce /= ce_rows.len() as f64;
    }
    let mut gp = Array2::<f64>::zeros((b, 1));
    let mut l_b = 0.0;
    let w_b = if boundary { w.w_b } else { 0.0 };
    for &r in &b_rows {
        let p = prob[[r, 0]];
        l_b += boundary_term(p);
        let sign = if p > 0.5 {
            1.0
        } else if p < 0.5 {
            -1.0
        } else {
            0.0
        };
        gp[[r, 0]] = w_b * sign / b_rows.len() as f64;
    }
    if !b_rows.is_empty() {
        l_b /= b_rows.len() as f64;
    }
    let terms = LossTerms {
        pd: l_pd,
        rank: l_r,
        ce: l_ce,
        boundary: l_b,
        total: w.w_pd * l_pd + w.w_r * l_r + w.w_ce * l_ce + w_b * l_b,
    };
    if !want_grad {
        return Ok((terms, None));
    }
    let g = tape.backward(&[(nodes.s, gs), (nodes.logit, gl), (nodes.prob, gp)])?;
    Ok((terms, Some(g.params)))
}
