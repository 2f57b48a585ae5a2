//! Small dense symmetric positive-definite helpers (Cholesky based).
//!
//! Sized for Kronecker factors of single layers, i.e. tens to a few hundred
//! rows. Everything is O(n^3) with no blocking.

use super::Tensor;
use crate::error::{shape_err, Error, Result};

fn square(a: &Tensor, op: &'static str) -> Result<usize> {
    match a.shape()[..] {
        [r, c] if r == c => Ok(r),
        _ => shape_err(op, format!("expected a square matrix, got {:?}", a.shape())),
    }
}

pub fn trace(a: &Tensor) -> Result<f64> {
    let n = square(a, "trace")?;
    Ok((0..n).map(|i| a.at(i, i)).sum())
}

pub fn is_symmetric(a: &Tensor, tol: f64) -> bool {
    let Ok(n) = square(a, "is_symmetric") else {
        return false;
    };
    (0..n).all(|i| (0..i).all(|j| (a.at(i, j) - a.at(j, i)).abs() <= tol))
}

/// `a + k * I`
pub fn add_diagonal(a: &Tensor, k: f64) -> Result<Tensor> {
    let n = square(a, "add_diagonal")?;
    let mut out = a.clone();
    for i in 0..n {
        out.values_mut()[i * n + i] += k;
    }
    Ok(out)
}

/// Lower-triangular `L` with `L L^T = a`. Fails unless `a` is symmetric
/// positive definite.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = square(a, "cholesky")?;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} is {d:e}")));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Tensor::new(vec![n, n], l)
}

/// Solve `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square(l, "solve_lower")?;
    if b.rank() != 2 || b.shape()[0] != n {
        return shape_err("solve_lower", format!("{:?} vs {:?}", l.shape(), b.shape()));
    }
    let m = b.shape()[1];
    let mut x = b.values().to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l.at(i, k);
            if lik != 0.0 {
                for c in 0..m {
                    x[i * m + c] -= lik * x[k * m + c];
                }
            }
        }
        let d = l.at(i, i);
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Tensor::new(vec![n, m], x)
}

/// Solve `L^T X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square(l, "solve_lower_transpose")?;
    if b.rank() != 2 || b.shape()[0] != n {
        return shape_err("solve_lower_transpose", format!("{:?} vs {:?}", l.shape(), b.shape()));
    }
    let m = b.shape()[1];
    let mut x = b.values().to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l.at(k, i);
            if lki != 0.0 {
                for c in 0..m {
                    x[i * m + c] -= lki * x[k * m + c];
                }
            }
        }
        let d = l.at(i, i);
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Tensor::new(vec![n, m], x)
}

/// `a^{-1} b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let l = cholesky(a)?;
    solve_lower_transpose(&l, &solve_lower(&l, b)?)
}

pub fn spd_inverse(a: &Tensor) -> Result<Tensor> {
    let n = square(a, "spd_inverse")?;
    spd_solve(a, &Tensor::identity(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    fn random_spd(n: usize, rng: &mut RngStream) -> Tensor {
        let b = rng.normal_tensor(&[n, n]);
        add_diagonal(&b.t_matmul(&b).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut rng = RngStream::new(8, 0);
        let a = random_spd(6, &mut rng);
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose().unwrap()).unwrap();
        assert!(back.max_abs_diff(&a).unwrap() < 1e-10);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = RngStream::new(9, 0);
        let a = random_spd(5, &mut rng);
        let inv = spd_inverse(&a).unwrap();
        let eye = a.matmul(&inv).unwrap();
        assert!(eye.max_abs_diff(&Tensor::identity(5)).unwrap() < 1e-10);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn trace_is_diagonal_sum() {
        let a = Tensor::from_rows(&[vec![2.0, 9.0], vec![9.0, 3.0]]).unwrap();
        assert_eq!(trace(&a).unwrap(), 5.0);
        assert!(is_symmetric(&a, 0.0));
    }
}
