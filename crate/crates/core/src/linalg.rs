//! Small fixed-size numerical helpers.

use nalgebra::{SMatrix, SVector};

/// Eigen-decomposition of a real symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues sorted ascending and the matching unit eigenvectors as
/// columns. Only the upper triangle of `m` is trusted; the matrix is
/// symmetrized before iterating.
pub fn symmetric_eigen<const N: usize>(m: &SMatrix<f64, N, N>) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = SMatrix::<f64, N, N>::identity();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..N {
            for q in (p + 1)..N {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..N).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= f64::EPSILON * f64::EPSILON * scale || off == 0.0 {
            break;
        }

        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..N {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = SVector::<f64, N>::from_fn(|i, _| a[(order[i], order[i])]);
    let vectors = SMatrix::<f64, N, N>::from_fn(|r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Mean and population standard deviation. Returns `None` for empty input.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Matrix4};

    #[test]
    fn jacobi_diagonal_is_sorted() {
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(3.0, -1.0, 2.0));
        let (vals, _) = symmetric_eigen(&m);
        assert_eq!(vals.as_slice(), &[-1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let b = Matrix4::new(
            4.0, 1.0, -2.0, 0.5, //
            1.0, 3.0, 0.0, 1.5, //
            -2.0, 0.0, 5.0, -1.0, //
            0.5, 1.5, -1.0, 2.0,
        );
        let (vals, vecs) = symmetric_eigen(&b);
        let rebuilt = vecs * Matrix4::from_diagonal(&vals) * vecs.transpose();
        assert!((rebuilt - b).abs().max() < 1e-12);
        assert!((vecs.transpose() * vecs - Matrix4::identity()).abs().max() < 1e-12);

        let reference = nalgebra::SymmetricEigen::new(b);
        let mut expected: Vec<f64> = reference.eigenvalues.iter().copied().collect();
        expected.sort_by(f64::total_cmp);
        for (got, want) in vals.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[2.0, 4.0]), Some((3.0, 1.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
