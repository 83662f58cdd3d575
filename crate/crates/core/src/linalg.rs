//! Small dense factorizations on row-major `n x n` buffers.

/// Lower Cholesky factor of a symmetric matrix, or `None` if it is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Cholesky with diagonal jitter escalated x10 from `jitter` up to `max_jitter`.
/// Returns the factor and the jitter that succeeded.
pub fn cholesky_jittered(
    a: &[f64],
    n: usize,
    jitter: f64,
    max_jitter: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut eps = jitter;
    loop {
        let mut work = a.to_vec();
        for i in 0..n {
            work[i * n + i] += eps;
        }
        if let Some(l) = cholesky(&work, n) {
            return Some((l, eps));
        }
        if eps <= 0.0 || eps * 10.0 > max_jitter * (1.0 + 1e-12) {
            return None;
        }
        eps *= 10.0;
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// `(L L^T)^{-1}` from a Cholesky factor.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve_lower_transpose(l, n, &solve_lower(l, n, &e));
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

/// `L L^T` for a lower-triangular `L`.
pub fn lower_product(l: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += l[i * n + k] * l[j * n + k];
            }
            s[i * n + j] = acc;
            s[j * n + i] = acc;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_known_matrix() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[1], 0.0);
        let back = lower_product(&l, 2);
        for (x, y) in back.iter().zip(a) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn jitter_rescues_singular() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let (_, eps) = cholesky_jittered(&a, 2, 1e-6, 1e-2).unwrap();
        assert!(eps >= 1e-6);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let l = cholesky(&a, 3).unwrap();
        let inv = cholesky_inverse(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
