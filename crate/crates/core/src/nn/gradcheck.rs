//! Central finite-difference helpers used to check analytic gradients.

/// `(f(x + ε e_i) - f(x - ε e_i)) / 2ε` for every coordinate `i`.
pub fn central_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Relative agreement with an absolute floor:
/// `|a - b| <= max(rel * max(|a|, |b|), abs_floor)`.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs_floor)
}

/// Index and values of the worst disagreement, if any pair fails [`close`].
pub fn first_mismatch(
    analytic: &[f64],
    numeric: &[f64],
    rel: f64,
    abs_floor: f64,
) -> Option<(usize, f64, f64)> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (a, n))| !close(**a, **n, rel, abs_floor))
        .map(|(i, (a, n))| (i, *a, *n))
}
