use serde::{Deserialize, Serialize};

use super::ActiveError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub x: f64,
    pub index: usize,
    /// False when the curve has no knee (difference curve never positive).
    pub found: bool,
}

/// Knee of an increasing curve: after min-max normalizing both axes, the
/// point maximizing `y_n - x_n`. Without a positive maximum the last point is
/// returned and flagged.
pub fn elbow_point(xs: &[f64], ys: &[f64]) -> Result<Elbow, ActiveError> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return Err(ActiveError::Elbow(format!(
            "need >= 3 matching points, got {} xs and {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ActiveError::Elbow("xs must be strictly increasing".into()));
    }
    let norm = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        v.iter().map(|&a| (a - lo) / span).collect::<Vec<_>>()
    };
    let (xn, yn) = (norm(xs), norm(ys));
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..xs.len() {
        let d = yn[i] - xn[i];
        if d > best_d + 1e-12 {
            best = i;
            best_d = d;
        }
    }
    if best_d <= 1e-12 {
        let last = xs.len() - 1;
        return Ok(Elbow {
            x: xs[last],
            index: last,
            found: false,
        });
    }
    Ok(Elbow {
        x: xs[best],
        index: best,
        found: true,
    })
}
