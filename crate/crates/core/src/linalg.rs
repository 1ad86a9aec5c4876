//! Small dense linear algebra used by the equilibrium solver, the least-squares
//! fit and the covariance sampler. Matrices are row-major `Vec<f64>`.

/// Solves `a * x = b` in place by Gaussian elimination with partial pivoting.
///
/// `a` is `n x n` row-major and is destroyed; on success `b` holds `x`.
/// Returns `None` when a pivot underflows (singular to working precision).
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        let p = a[pivot * n + col];
        if !p.is_finite() || p.abs() < f64::MIN_POSITIVE {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Some(())
}

/// Lower-triangular factor `l` with `l * l^T = a` for a symmetric positive
/// semi-definite matrix. Columns with a non-positive pivot (rank deficiency)
/// are zeroed instead of failing; `None` if the matrix is clearly indefinite.
pub fn cholesky_psd(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            // rank-deficient direction
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if s.abs() > 1e-6 * scale {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `l * l^T * x = b` for a factor from [`cholesky_psd`]. Coordinates
/// of rank-deficient directions are set to zero, which yields a basic
/// least-squares solution when `b` lies in the range of `l * l^T`.
pub fn solve_cholesky(l: &[f64], b: &mut [f64], n: usize) {
    for j in 0..n {
        let d = l[j * n + j];
        b[j] = if d == 0.0 { 0.0 } else { (b[j] - (0..j).map(|k| l[j * n + k] * b[k]).sum::<f64>()) / d };
    }
    for j in (0..n).rev() {
        let d = l[j * n + j];
        b[j] = if d == 0.0 { 0.0 } else { (b[j] - (j + 1..n).map(|k| l[k * n + j] * b[k]).sum::<f64>()) / d };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut a = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let x = [1.0, -2.0, 0.5];
        let mut b = vec![
            2.0 * x[0] + x[1],
            x[0] + 3.0 * x[1] + x[2],
            x[1] + 4.0 * x[2],
        ];
        solve_in_place(&mut a, &mut b, 3).unwrap();
        for (got, want) in b.iter().zip(x) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn needs_pivoting() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![3.0, 7.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert_eq!(b, vec![7.0, 3.0]);
    }

    #[test]
    fn singular_is_rejected() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_in_place(&mut a, &mut b, 2).is_none());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0];
        let l = cholesky_psd(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_handles_rank_deficiency() {
        // rank one
        let a = vec![1.0, 1.0, 1.0, 1.0];
        let l = cholesky_psd(&a, 2).unwrap();
        assert_eq!(l[3], 0.0);
        assert!(cholesky_psd(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn cholesky_solve_on_singular_system() {
        // second unknown duplicates the first
        let a = vec![2.0, 2.0, 2.0, 2.0];
        let l = cholesky_psd(&a, 2).unwrap();
        let mut b = vec![6.0, 6.0];
        solve_cholesky(&l, &mut b, 2);
        assert!((b[0] - 3.0).abs() < 1e-14);
        assert_eq!(b[1], 0.0);
    }
}
