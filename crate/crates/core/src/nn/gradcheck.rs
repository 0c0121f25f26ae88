/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = xs[i];
            xs[i] = x0 + h;
            let fp = f(&xs);
            xs[i] = x0 - h;
            let fm = f(&xs);
            xs[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i|` relative to the larger infinity norm, floored at
/// `1e-8` so that two vanishing gradients compare equal.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / norm(a).max(norm(b)).max(1e-8)
}
