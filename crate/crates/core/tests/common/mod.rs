//! Dense-matrix reference implementations shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C;

pub type Matrix = Vec<Vec<C>>;

pub fn c(re: f64) -> C {
    C::new(re, 0.0)
}

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { c(1.0) } else { c(0.0) }).collect())
        .collect()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, rb) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0); ra * rb]; ra * rb];
    for i in 0..ra {
        for j in 0..ra {
            for k in 0..rb {
                for l in 0..rb {
                    out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn matvec(m: &Matrix, v: &[C]) -> Vec<C> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn ry(t: f64) -> Matrix {
    let (s, co) = (t / 2.0).sin_cos();
    vec![vec![c(co), c(-s)], vec![c(s), c(co)]]
}

pub fn rz(t: f64) -> Matrix {
    vec![
        vec![C::from_polar(1.0, -t / 2.0), c(0.0)],
        vec![c(0.0), C::from_polar(1.0, t / 2.0)],
    ]
}

pub fn proj0() -> Matrix {
    vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(0.0)]]
}

pub fn proj1() -> Matrix {
    vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(1.0)]]
}

/// Full `2^n` operator with `ops[q]` acting on qubit `q`. Qubit 0 is the
/// least significant bit, so it is the rightmost Kronecker factor.
pub fn embed(n: usize, ops: &[(usize, Matrix)]) -> Matrix {
    let mut full = vec![vec![c(1.0)]];
    for q in (0..n).rev() {
        let m = ops
            .iter()
            .find(|(k, _)| *k == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| identity(2));
        full = kron(&full, &m);
    }
    full
}

pub fn single(n: usize, q: usize, m: Matrix) -> Matrix {
    embed(n, &[(q, m)])
}

/// `|0⟩⟨0|_c ⊗ I + |1⟩⟨1|_c ⊗ RZ(t)_target`.
pub fn crz(n: usize, control: usize, target: usize, t: f64) -> Matrix {
    add(
        &embed(n, &[(control, proj0())]),
        &embed(n, &[(control, proj1()), (target, rz(t))]),
    )
}

pub fn max_abs_diff(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Unit-cost edit distance straight from its recursive definition, with no
/// memoization. Exponential; only for short strings.
pub fn edit_distance_recursive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_distance_recursive(ra, rb) + usize::from(x != y);
            let del = edit_distance_recursive(ra, b) + 1;
            let ins = edit_distance_recursive(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
