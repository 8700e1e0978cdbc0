use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

fn check_square(op: &'static str, a: &[f64], d: usize) -> Result<()> {
    if a.len() != d * d {
        return Err(Error::shape(op, format!("{} entries for a {d}×{d} matrix", a.len())));
    }
    Ok(())
}

fn check_symmetric(op: &'static str, a: &[f64], d: usize) -> Result<()> {
    check_square(op, a, d)?;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..d {
        for j in i + 1..d {
            let gap = (a[i * d + j] - a[j * d + i]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::domain(op, format!("asymmetry {gap:e} at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the row-major matrix whose columns are the
/// corresponding eigenvectors.
pub fn symmetric_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_symmetric("symmetric_eigen", a, d)?;
    let mut m = a.to_vec();
    // Average the two triangles so rotations act on an exactly symmetric matrix.
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
    // Rows of `vt` are eigenvectors, so rotations touch contiguous memory.
    let mut vt = vec![0.0; d * d];
    for i in 0..d {
        vt[i * d + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j].powi(2))
            .sum();
        if off <= 1e-30 * total || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let (app, aqq) = (m[p * d + p], m[q * d + q]);
                let (head, tail) = m.split_at_mut(q * d);
                let (row_p, row_q) = (&mut head[p * d..p * d + d], &mut tail[..d]);
                for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
                row_p[p] = app - t * apq;
                row_q[q] = aqq + t * apq;
                row_p[q] = 0.0;
                row_q[p] = 0.0;
                for k in 0..d {
                    if k != p && k != q {
                        m[k * d + p] = m[p * d + k];
                        m[k * d + q] = m[q * d + k];
                    }
                }
                let (head, tail) = vt.split_at_mut(q * d);
                for (x, y) in head[p * d..p * d + d].iter_mut().zip(tail[..d].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
    }
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            v[i * d + k] = vt[k * d + i];
        }
    }
    Ok(((0..d).map(|i| m[i * d + i]).collect(), v))
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative eigenvalues (round-off) are clamped to zero.
pub fn matrix_sqrt_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let (vals, vecs) = symmetric_eigen(a, d)?;
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = (0..d).map(|k| vecs[i * d + k] * roots[k] * vecs[j * d + k]).sum();
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
    Ok(out)
}

pub fn matmul_f64(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn frob(a: &[f64]) -> f64 {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_and_diagonal() {
        let id = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(matrix_sqrt_psd(&id, 2).unwrap(), id);
        let x = matrix_sqrt_psd(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[3] - 3.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }

    #[test]
    fn random_spd_square_root_reconstructs() {
        let mut rng = Rng::new(9);
        for d in [3, 10, 40] {
            let b: Vec<f64> = (0..d * d).map(|_| rng.normal()).collect();
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>();
                }
            }
            let x = matrix_sqrt_psd(&a, d).unwrap();
            let xx = matmul_f64(&x, &x, d);
            let diff: Vec<f64> = xx.iter().zip(&a).map(|(p, q)| p - q).collect();
            assert!(frob(&diff) / frob(&a) < 1e-8, "d={d}: {}", frob(&diff) / frob(&a));
        }
    }

    #[test]
    fn eigen_pairs_satisfy_definition() {
        let a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let (vals, vecs) = symmetric_eigen(&a, 3).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * vecs[j * 3 + k]).sum();
                assert!((av - vals[k] * vecs[i * 3 + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        assert!(matrix_sqrt_psd(&[1.0, 0.5, 0.0, 1.0], 2).is_err());
        assert!(matrix_sqrt_psd(&[1.0, 0.0, 0.0], 2).is_err());
    }
}
